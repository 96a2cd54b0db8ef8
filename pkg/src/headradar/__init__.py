"""Desk-scale radar brain-imaging simulator.

One-dimensional plane-wave models of a seven-layer head: exact
transfer-matrix solutions, a finite-difference time-domain engine,
SAR dosimetry and paired with/without-tumour experiments.
"""

from headradar.dielectrics import (
    ColeCole,
    ColeColePole,
    FREE_SPACE,
    Inclusion,
    Layer,
    LayerStack,
    Static,
    TissueRecord,
    build_head_stack,
    complex_permittivity,
    default_tissue_db,
    insert_inclusion,
    load_tissue_db,
)
from headradar.tmm import (
    field_profile,
    propagation_constant,
    return_loss,
    solve_stack,
    vswr,
    wave_impedance,
)

__version__ = "0.1.0"

__all__ = [
    "ColeCole",
    "ColeColePole",
    "FREE_SPACE",
    "Inclusion",
    "Layer",
    "LayerStack",
    "Static",
    "TissueRecord",
    "build_head_stack",
    "complex_permittivity",
    "default_tissue_db",
    "field_profile",
    "insert_inclusion",
    "load_tissue_db",
    "propagation_constant",
    "return_loss",
    "solve_stack",
    "vswr",
    "wave_impedance",
]

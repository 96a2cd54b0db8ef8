"""Point specific absorption rate from field profiles.

SAR(z) = sigma(z) |E_peak(z)|^2 / (2 rho(z)), with E as a peak (not RMS)
amplitude. No mass averaging is applied.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from headradar.dielectrics import EPS0, LayerStack, Static, complex_permittivity

PEAK_TO_POWER = 0.5  # |E_peak|^2 / 2 = |E_rms|^2
SAR_LIMITS = {"1g": 1.6, "10g": 2.0}  # W/kg


@dataclass(frozen=True)
class SarProfile:
    z: np.ndarray
    sar: np.ndarray  # W/kg
    layer: np.ndarray  # -1 / len(stack) outside the stack
    tissue: tuple[str, ...]


class PeakSar(NamedTuple):
    value: float
    depth: float


def _conductivity(tissue, f):
    d = tissue.dispersion
    if f is None or isinstance(d, Static):
        if not isinstance(d, Static):
            raise ValueError(f"{tissue.name}: dispersive tissue needs a frequency for SAR")
        return d.sigma
    return -2.0 * np.pi * f * EPS0 * complex_permittivity(d, f).imag


def material_maps(stack: LayerStack, z, f=None):
    """Conductivity, density, layer index and tissue name at each depth."""
    z = np.asarray(z, dtype=float)
    idx = stack.layer_index(z)
    media = [stack.front] + [layer.tissue for layer in stack.layers] + [stack.back]
    sigma_by = np.array([_conductivity(m, f) for m in media])
    rho_by = np.array([m.density for m in media], dtype=float)
    if not np.all(rho_by > 0):
        raise ValueError("every medium needs a positive mass density")
    slot = idx + 1
    return sigma_by[slot], rho_by[slot], idx, tuple(media[i].name for i in slot)


def sar_profile(field, stack: LayerStack, f=None) -> SarProfile:
    """Point SAR along a field profile.

    Parameters
    ----------
    field : FieldProfile or (z, e_peak) pair
        Either a transfer-matrix profile (complex phasor, its frequency is
        used for dispersive tissues) or a depth/peak-amplitude pair such as
        an FDTD envelope.
    stack : LayerStack
        Geometry that maps depth to tissue.
    """
    if isinstance(field, tuple):
        z, e = field
    else:
        z, e = field.z, field.e
        f = field.f if f is None else f
    z = np.asarray(z, dtype=float)
    sigma, rho, idx, names = material_maps(stack, z, f)
    sar = sigma * PEAK_TO_POWER * np.abs(np.asarray(e)) ** 2 / rho
    return SarProfile(z, sar, idx, names)


def peak_sar(profile: SarProfile) -> PeakSar:
    if len(profile.sar) == 0:
        raise ValueError("empty SAR profile")
    i = int(np.argmax(profile.sar))  # first maximum, i.e. the shallowest
    return PeakSar(float(profile.sar[i]), float(profile.z[i]))


def compliance_check(profile: SarProfile, limit: float = SAR_LIMITS["10g"]) -> list[tuple[float, float]]:
    """Depth intervals (first, last sample) where SAR exceeds `limit`."""
    if not limit > 0:
        raise ValueError("SAR limit must be > 0")
    over = np.concatenate([[False], profile.sar > limit, [False]])
    edges = np.flatnonzero(np.diff(over.astype(np.int8)))
    return [(float(profile.z[a]), float(profile.z[b - 1])) for a, b in zip(edges[::2], edges[1::2])]


def write_sar_csv(profile: SarProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["depth_m", "sar_Wkg", "tissue_name"])
        for z, s, name in zip(profile.z, profile.sar, profile.tissue):
            w.writerow([repr(float(z)), repr(float(s)), name])

"""Tissue dielectric models, the tissue database and layered head geometry.

Time convention is e^{+jwt} everywhere, so lossy media have a negative
imaginary permittivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
import yaml

EPS0 = 8.8541878128e-12  # F/m
C0 = 299792458.0  # m/s
ETA0 = 376.730313668  # ohm
MU0 = ETA0 / C0  # H/m

HEAD_LAYERS = (
    ("Skin", 1.35e-3),
    ("Fat", 1.4e-3),
    ("Skull", 5.3e-3),
    ("Dura Mater", 0.36e-3),
    ("CSF", 2.1e-3),
    ("Gray Matter", 3.37e-3),
    ("White Matter", None),
)
HEAD_DEPTH = 50e-3  # stack terminates at the 50 mm observation window


@dataclass(frozen=True)
class Static:
    """Frequency-independent permittivity with ohmic conductivity."""

    eps_r: float
    sigma: float = 0.0

    def __post_init__(self):
        if not self.eps_r >= 1.0:
            raise ValueError(f"eps_r must be >= 1, got {self.eps_r}")
        if not self.sigma >= 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class ColeColePole:
    delta_eps: float
    tau: float
    alpha: float = 0.0

    def __post_init__(self):
        if not self.delta_eps > 0:
            raise ValueError(f"delta_eps must be > 0, got {self.delta_eps}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")


@dataclass(frozen=True)
class ColeCole:
    """Multi-pole Cole-Cole dispersion plus static ionic conductivity."""

    eps_inf: float
    poles: tuple[ColeColePole, ...] = ()
    sigma_static: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "poles", tuple(self.poles))
        if not self.eps_inf >= 1.0:
            raise ValueError(f"eps_inf must be >= 1, got {self.eps_inf}")
        if not self.sigma_static >= 0.0:
            raise ValueError(f"sigma_static must be >= 0, got {self.sigma_static}")


DispersionSpec = Union[Static, ColeCole]


def complex_permittivity(spec: DispersionSpec, f):
    """Complex relative permittivity of `spec` at frequency `f` (Hz).

    Parameters
    ----------
    spec : Static or ColeCole
    f : float or array_like
        Frequency in Hz, strictly positive.

    Returns
    -------
    complex or ndarray of complex
        eps' - j eps''; the imaginary part is <= 0 for passive media.
    """
    f_arr = np.asarray(f, dtype=float)
    if np.any(~(f_arr > 0)):
        raise ValueError("frequency must be > 0")
    omega = 2.0 * np.pi * f_arr
    if isinstance(spec, Static):
        eps = spec.eps_r - 1j * spec.sigma / (omega * EPS0)
    elif isinstance(spec, ColeCole):
        eps = spec.eps_inf + spec.sigma_static / (1j * omega * EPS0)
        for p in spec.poles:
            eps = eps + p.delta_eps / (1.0 + (1j * omega * p.tau) ** (1.0 - p.alpha))
    else:
        raise TypeError(f"unknown dispersion spec {spec!r}")
    if np.ndim(eps) == 0:
        return complex(eps)
    return eps


def static_equivalent(spec: DispersionSpec, f: float) -> Static:
    """Static medium matching `spec` at a single frequency."""
    if isinstance(spec, Static):
        return spec
    eps = complex_permittivity(spec, f)
    return Static(eps.real, -eps.imag * 2.0 * np.pi * f * EPS0)


@dataclass(frozen=True)
class TissueRecord:
    name: str
    dispersion: DispersionSpec
    density: float
    metadata: Mapping = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.density > 0:
            raise ValueError(f"{self.name}: density must be > 0, got {self.density}")


FREE_SPACE = TissueRecord("Free Space", Static(1.0, 0.0), 1.2)


# -- database ---------------------------------------------------------------

_COMMON_KEYS = {"name", "model", "density", "radius_mm", "depth_mm"}
_STATIC_KEYS = _COMMON_KEYS | {"eps_r", "sigma"}
_COLE_KEYS = _COMMON_KEYS | {"eps_inf", "poles", "sigma_static"}
_POLE_KEYS = {"delta_eps", "tau", "alpha"}


def _number(entry, key, where):
    if key not in entry:
        raise ValueError(f"{where}: missing field '{key}'")
    value = entry[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{where}.{key}: expected a number, got {value!r}")
    return float(value)


def _parse_record(entry, where) -> TissueRecord:
    if not isinstance(entry, Mapping):
        raise ValueError(f"{where}: expected a mapping")
    name = entry.get("name")
    if not isinstance(name, str) or not name:
        raise ValueError(f"{where}.name: expected a non-empty string")
    where = f"{where}({name})"
    model = entry.get("model")
    allowed = {"static": _STATIC_KEYS, "cole-cole": _COLE_KEYS}.get(model)
    if allowed is None:
        raise ValueError(f"{where}.model: expected 'static' or 'cole-cole', got {model!r}")
    unknown = set(entry) - allowed
    if unknown:
        raise ValueError(f"{where}: unknown field(s) {sorted(unknown)}")
    if model == "static":
        dispersion = Static(_number(entry, "eps_r", where), _number(entry, "sigma", where))
    else:
        poles = []
        for i, p in enumerate(entry.get("poles") or []):
            pwhere = f"{where}.poles[{i}]"
            if not isinstance(p, Mapping) or set(p) - _POLE_KEYS:
                raise ValueError(f"{pwhere}: expected keys {sorted(_POLE_KEYS)}")
            alpha = _number(p, "alpha", pwhere) if "alpha" in p else 0.0
            poles.append(ColeColePole(_number(p, "delta_eps", pwhere), _number(p, "tau", pwhere), alpha))
        dispersion = ColeCole(
            _number(entry, "eps_inf", where), tuple(poles), _number(entry, "sigma_static", where)
        )
    meta = {k: float(entry[k]) for k in ("radius_mm", "depth_mm") if k in entry}
    return TissueRecord(name, dispersion, _number(entry, "density", where), meta)


def load_tissue_db(source: str) -> list[TissueRecord]:
    """Parse a YAML tissue database document into records.

    The document is either empty or a mapping with a ``tissues`` list.
    Any schema violation, invalid parameter or duplicate name raises
    ``ValueError``.
    """
    doc = yaml.safe_load(source)
    if doc is None:
        return []
    if not isinstance(doc, Mapping) or set(doc) - {"tissues"}:
        raise ValueError("tissue database: expected a mapping with a single 'tissues' key")
    entries = doc.get("tissues") or []
    if not isinstance(entries, list):
        raise ValueError("tissues: expected a list")
    records = []
    seen = set()
    for i, entry in enumerate(entries):
        try:
            rec = _parse_record(entry, f"tissues[{i}]")
        except ValueError as exc:
            if str(exc).startswith("tissues["):
                raise
            raise ValueError(f"tissues[{i}]: {exc}") from None
        if rec.name in seen:
            raise ValueError(f"tissues[{i}]: duplicate tissue name '{rec.name}'")
        seen.add(rec.name)
        records.append(rec)
    return records


def dump_tissue_db(records: Iterable[TissueRecord]) -> str:
    entries = []
    for rec in records:
        d = rec.dispersion
        entry = {"name": rec.name}
        if isinstance(d, Static):
            entry.update(model="static", eps_r=d.eps_r, sigma=d.sigma)
        else:
            entry.update(
                model="cole-cole",
                eps_inf=d.eps_inf,
                poles=[{"delta_eps": p.delta_eps, "tau": p.tau, "alpha": p.alpha} for p in d.poles],
                sigma_static=d.sigma_static,
            )
        entry["density"] = rec.density
        entry.update(rec.metadata)
        entries.append(entry)
    return yaml.safe_dump({"tissues": entries}, sort_keys=False)


def read_tissue_db(path) -> list[TissueRecord]:
    return load_tissue_db(Path(path).read_text())


def default_tissue_db() -> list[TissueRecord]:
    """The shipped head-model database (seven head tissues plus Tumor)."""
    text = resources.files("headradar").joinpath("data/tissues.yaml").read_text()
    return load_tissue_db(text)


def _as_mapping(db) -> dict[str, TissueRecord]:
    if isinstance(db, Mapping):
        return dict(db)
    return {rec.name: rec for rec in db}


# -- geometry ---------------------------------------------------------------

@dataclass(frozen=True)
class Layer:
    tissue: TissueRecord
    thickness: float

    def __post_init__(self):
        if not self.thickness > 0:
            raise ValueError(f"{self.tissue.name}: thickness must be > 0, got {self.thickness}")


@dataclass(frozen=True)
class LayerStack:
    """Planar stratification along +z, bounded by semi-infinite media.

    Depth z = 0 is the front face of the first layer.
    """

    layers: tuple[Layer, ...] = ()
    front: TissueRecord = FREE_SPACE
    back: TissueRecord = FREE_SPACE

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def __len__(self):
        return len(self.layers)

    @property
    def thicknesses(self) -> np.ndarray:
        return np.array([layer.thickness for layer in self.layers], dtype=float)

    @property
    def total_thickness(self) -> float:
        return math.fsum(layer.thickness for layer in self.layers)

    @property
    def boundaries(self) -> np.ndarray:
        """Interface depths, starting at 0 and ending at the total thickness."""
        return np.concatenate([[0.0], np.cumsum(self.thicknesses)])

    def layer_index(self, z) -> np.ndarray:
        """Index of the layer containing each depth; -1 in front, len(self) behind.

        Depths on an interface belong to the deeper layer, except the
        back face which belongs to the last layer.
        """
        z = np.asarray(z, dtype=float)
        edges = self.boundaries
        idx = np.searchsorted(edges, z, side="right") - 1
        # samples within rounding of the back face belong to the last layer
        at_back = np.abs(z - edges[-1]) <= 1e-12 * max(edges[-1], 1e-3)
        idx = np.where(at_back & (len(self) > 0), len(self) - 1, idx)
        return np.where(z < 0, -1, np.minimum(idx, len(self)))

    def tissue_at(self, z: float) -> TissueRecord:
        i = int(self.layer_index(z))
        if i < 0:
            return self.front
        if i >= len(self):
            return self.back
        return self.layers[i].tissue

    def reversed(self) -> "LayerStack":
        return LayerStack(tuple(reversed(self.layers)), self.back, self.front)


def build_head_stack(db) -> LayerStack:
    """Seven-layer planar head model terminated at 50 mm depth.

    White matter fills the remainder of the 50 mm window; free space
    bounds the stack on both sides.
    """
    tissues = _as_mapping(db)
    missing = [name for name, _ in HEAD_LAYERS if name not in tissues]
    if missing:
        raise KeyError(f"tissue database lacks {missing}")
    layers = []
    for name, depth in HEAD_LAYERS:
        if depth is None:
            depth = HEAD_DEPTH - math.fsum(d for _, d in HEAD_LAYERS if d is not None)
        layers.append(Layer(tissues[name], depth))
    return LayerStack(tuple(layers))


@dataclass(frozen=True)
class Inclusion:
    """A slab of `tissue` centred `center_depth` below the front face."""

    tissue: TissueRecord
    center_depth: float
    thickness: float

    def __post_init__(self):
        if not self.thickness > 0:
            raise ValueError(f"inclusion thickness must be > 0, got {self.thickness}")

    @property
    def interval(self) -> tuple[float, float]:
        half = self.thickness / 2.0
        return self.center_depth - half, self.center_depth + half


def insert_inclusion(stack: LayerStack, inc: Inclusion) -> LayerStack:
    """Replace the inclusion interval of `stack` with the inclusion tissue.

    Host layers are shortened or split; total thickness is unchanged.
    """
    start, stop = inc.interval
    total = stack.total_thickness
    if start < 0 or stop > total:
        raise ValueError(
            f"inclusion interval [{start:.6g}, {stop:.6g}] m lies outside the stack [0, {total:.6g}] m"
        )
    layers: list[Layer] = []
    placed = False
    edges = stack.boundaries
    for layer, z0, z1 in zip(stack.layers, edges[:-1], edges[1:]):
        if z1 <= start or z0 >= stop:
            layers.append(layer)
            continue
        if z0 < start:
            layers.append(Layer(layer.tissue, start - z0))
        if not placed:
            layers.append(Layer(inc.tissue, inc.thickness))
            placed = True
        if z1 > stop:
            layers.append(Layer(layer.tissue, z1 - stop))
    return LayerStack(tuple(layers), stack.front, stack.back)


def split_at(stack: LayerStack, depths: Sequence[float]) -> LayerStack:
    """Split layers at the given depths without changing any tissue."""
    cuts = sorted(float(d) for d in depths)
    layers: list[Layer] = []
    edges = stack.boundaries
    for layer, z0, z1 in zip(stack.layers, edges[:-1], edges[1:]):
        inner = [c for c in cuts if z0 < c < z1]
        pos = z0
        for c in inner:
            layers.append(Layer(layer.tissue, c - pos))
            pos = c
        layers.append(Layer(layer.tissue, z1 - pos))
    return LayerStack(tuple(layers), stack.front, stack.back)

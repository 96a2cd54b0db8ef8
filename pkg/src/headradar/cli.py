"""Command-line front end.

Subcommands: ``penetrate``, ``detect``, ``sweep``, ``tissues``, ``validate``.
Exit status is 0 on success, 1 for configuration errors, 2 for runtime or
numerical failures and 3 for I/O errors; failures print one
``headradar: error[<kind>]: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from headradar import experiments
from headradar.dielectrics import HEAD_LAYERS, Static, default_tissue_db, read_tissue_db

DB_ENV = "HEADRADAR_TISSUE_DB"
EXPERIMENTS = ("penetration", "detection", "sweep")
PRESETS = tuple(experiments.PRESET_AMPLITUDE)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TumorConfig:
    radius_mm: float = 5.0
    center_depth_mm: float = round(experiments.DURA_CSF_DEPTH * 1e3, 12)
    tissue: str = "Tumor"
    eps_r: float | None = None
    sigma_Spm: float | None = None

    def spec(self) -> experiments.TumorSpec:
        return experiments.TumorSpec(
            radius=self.radius_mm * 1e-3,
            center_depth=self.center_depth_mm * 1e-3,
            tissue=self.tissue,
            eps_r=self.eps_r,
            sigma=self.sigma_Spm,
        )


@dataclass(frozen=True)
class GridConfig:
    dz_mm: float | None = None
    duration_ns: float | None = None


@dataclass(frozen=True)
class SweepConfig:
    axis: str
    values: tuple


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    tissue_db: str | None = None
    preset: str = "vivaldi-like"
    frequency_ghz: tuple[float, ...] = (2.45, 4.5)
    tumor: TumorConfig = field(default_factory=TumorConfig)
    output_dir: str = "headradar-out"
    grid: GridConfig = field(default_factory=GridConfig)
    sar_limit_wkg: float = 2.0
    standoff_mm: float = 10.0
    sweep: SweepConfig | None = None

    def to_document(self) -> dict:
        doc = asdict(self)
        doc["frequency_ghz"] = list(self.frequency_ghz)
        if self.sweep is not None:
            doc["sweep"]["values"] = list(self.sweep.values)
        return doc


def _number(value, key, *, positive=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{key}: expected a finite number, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"{key}: must be > 0, got {value!r}")
    return float(value)


def _section(doc, key, allowed):
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{key}: expected a mapping")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        path = unknown[0] if key == "<root>" else f"{key}.{unknown[0]}"
        raise ConfigError(f"{path}: unknown key")
    return doc


def _frequency(value, key):
    f = _number(value, key, positive=True)
    lo, hi = (b / 1e9 for b in experiments.BAND)
    if not lo <= f <= hi:
        raise ConfigError(f"{key}: {f:g} GHz lies outside [{lo:g}, {hi:g}] GHz")
    return f


def _parse_sweep(doc) -> SweepConfig:
    _section(doc, "sweep", ("axis", "values"))
    axis = doc.get("axis")
    if axis not in experiments.SWEEP_AXES:
        raise ConfigError(f"sweep.axis: expected one of {list(experiments.SWEEP_AXES)}, got {axis!r}")
    values = doc.get("values")
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep.values: expected a non-empty list")
    out = []
    for i, v in enumerate(values):
        key = f"sweep.values[{i}]"
        if axis == "preset":
            if v not in PRESETS:
                raise ConfigError(f"{key}: unknown preset {v!r}")
            out.append(v)
        elif axis == "frequency":
            out.append(_frequency(v, key))
        elif axis == "tumor_radius":
            v = _number(v, key)
            if v < 0:
                raise ConfigError(f"{key}: radius must be >= 0")
            out.append(v)
        elif axis == "tumor_sigma":
            v = _number(v, key)
            if v < 0:
                raise ConfigError(f"{key}: conductivity must be >= 0")
            out.append(v)
        else:
            out.append(_number(v, key, positive=True))
    return SweepConfig(axis, tuple(out))


def parse_config(document, base_dir=None) -> RunConfig:
    """Validate a YAML config (text or mapping) and fill defaults.

    Unknown keys are rejected; every error names the offending key path.
    A relative ``tissue_db`` path is resolved against `base_dir`.
    """
    if isinstance(document, str):
        try:
            document = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise ConfigError(f"<document>: not valid YAML ({exc.__class__.__name__})") from None
    if document is None:
        document = {}
    _section(document, "<root>", {f for f in RunConfig.__dataclass_fields__})
    doc = dict(document)

    experiment = doc.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: expected one of {list(EXPERIMENTS)}, got {experiment!r}")
    kw: dict = {"experiment": experiment}

    if doc.get("tissue_db") is not None:
        db = doc["tissue_db"]
        if not isinstance(db, str):
            raise ConfigError("tissue_db: expected a path string")
        resolved = Path(base_dir or ".") / db
        if not resolved.is_file():
            raise ConfigError(f"tissue_db: file not found: {resolved}")
        kw["tissue_db"] = db
    if "preset" in doc:
        if doc["preset"] not in PRESETS:
            raise ConfigError(f"preset: expected one of {list(PRESETS)}, got {doc['preset']!r}")
        kw["preset"] = doc["preset"]
    if "frequency_ghz" in doc:
        freqs = doc["frequency_ghz"]
        if isinstance(freqs, (int, float)) and not isinstance(freqs, bool):
            freqs = [freqs]
        if not isinstance(freqs, list) or not freqs:
            raise ConfigError("frequency_ghz: expected a non-empty list of numbers")
        kw["frequency_ghz"] = tuple(_frequency(f, f"frequency_ghz[{i}]") for i, f in enumerate(freqs))
    if doc.get("tumor") is not None:
        t = _section(doc["tumor"], "tumor", TumorConfig.__dataclass_fields__)
        tkw = {}
        if "radius_mm" in t:
            tkw["radius_mm"] = _number(t["radius_mm"], "tumor.radius_mm")
            if tkw["radius_mm"] < 0:
                raise ConfigError("tumor.radius_mm: must be >= 0")
        if "center_depth_mm" in t:
            tkw["center_depth_mm"] = _number(t["center_depth_mm"], "tumor.center_depth_mm", positive=True)
        if "tissue" in t:
            if not isinstance(t["tissue"], str):
                raise ConfigError("tumor.tissue: expected a tissue name")
            tkw["tissue"] = t["tissue"]
        if "eps_r" in t:
            tkw["eps_r"] = _number(t["eps_r"], "tumor.eps_r", allow_none=True)
            if tkw["eps_r"] is not None and tkw["eps_r"] < 1:
                raise ConfigError("tumor.eps_r: must be >= 1")
        if "sigma_Spm" in t:
            tkw["sigma_Spm"] = _number(t["sigma_Spm"], "tumor.sigma_Spm", allow_none=True)
            if tkw["sigma_Spm"] is not None and tkw["sigma_Spm"] < 0:
                raise ConfigError("tumor.sigma_Spm: must be >= 0")
        tumor = TumorConfig(**tkw)
        half = tumor.radius_mm
        if tumor.center_depth_mm - half < 0 or tumor.center_depth_mm + half > experiments.PENETRATION_DEPTH * 1e3:
            raise ConfigError("tumor: inclusion extends outside the 0-50 mm head model")
        kw["tumor"] = tumor
    if "output_dir" in doc:
        if not isinstance(doc["output_dir"], str) or not doc["output_dir"]:
            raise ConfigError("output_dir: expected a path string")
        kw["output_dir"] = doc["output_dir"]
    if doc.get("grid") is not None:
        g = _section(doc["grid"], "grid", GridConfig.__dataclass_fields__)
        kw["grid"] = GridConfig(
            dz_mm=_number(g.get("dz_mm"), "grid.dz_mm", positive=True, allow_none=True),
            duration_ns=_number(g.get("duration_ns"), "grid.duration_ns", positive=True, allow_none=True),
        )
    if "sar_limit_wkg" in doc:
        kw["sar_limit_wkg"] = _number(doc["sar_limit_wkg"], "sar_limit_wkg", positive=True)
    if "standoff_mm" in doc:
        kw["standoff_mm"] = _number(doc["standoff_mm"], "standoff_mm")
        if kw["standoff_mm"] < 0:
            raise ConfigError("standoff_mm: must be >= 0")
    if doc.get("sweep") is not None:
        kw["sweep"] = _parse_sweep(doc["sweep"])
    if experiment == "sweep" and "sweep" not in kw:
        raise ConfigError("sweep: required when experiment is 'sweep'")
    return RunConfig(**kw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_document(), sort_keys=False)


# -- execution --------------------------------------------------------------

def _load_db(cfg: RunConfig | None, flag: str | None, base_dir):
    path = flag
    if path is None and cfg is not None and cfg.tissue_db is not None:
        path = str(Path(base_dir or ".") / cfg.tissue_db)
    if path is None:
        path = os.environ.get(DB_ENV)
    if path is None:
        return default_tissue_db()
    try:
        return read_tissue_db(path)
    except ValueError as exc:
        raise ConfigError(f"tissue_db: {exc}") from None


def _read_config(path):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {p}: {exc.strerror or exc}") from None
    return parse_config(text, base_dir=p.parent), p.parent


def _detect_kwargs(cfg: RunConfig) -> dict:
    kw = {"standoff": cfg.standoff_mm * 1e-3}
    if cfg.grid.dz_mm is not None:
        kw["dz"] = cfg.grid.dz_mm * 1e-3
    if cfg.grid.duration_ns is not None:
        kw["duration"] = cfg.grid.duration_ns * 1e-9
    return kw


def execute(cfg: RunConfig, db, outdir) -> Path:
    extra = {"config": cfg.to_document()}
    freqs = [f * 1e9 for f in cfg.frequency_ghz]
    if cfg.experiment == "penetration":
        report = experiments.penetration_experiment(db, cfg.preset, freqs)
    elif cfg.experiment == "detection":
        report = experiments.tumor_experiment(db, cfg.preset, cfg.tumor.spec(), **_detect_kwargs(cfg))
    else:
        scale = {"frequency": 1e9, "tumor_radius": 1e-3, "tumor_depth": 1e-3}.get(cfg.sweep.axis, 1.0)
        values = [v if isinstance(v, str) else v * scale for v in cfg.sweep.values]
        report = experiments.sweep(db, cfg.sweep.axis, values, preset=cfg.preset, frequencies=freqs,
                                   tumor=cfg.tumor.spec(), **_detect_kwargs(cfg))
    return experiments.write_report(report, outdir, sar_limit=cfg.sar_limit_wkg, extra=extra)


def print_tissues(db, all_records: bool = False, out=None) -> None:
    out = sys.stdout if out is None else out
    head = [name for name, _ in HEAD_LAYERS]
    records = {r.name: r for r in db}
    names = [n for n in head if n in records]
    if all_records:
        names += [n for n in records if n not in head]
    out.write("name,model,eps_r,sigma_Spm,density_kgpm3,depth_mm\n")
    for name in names:
        rec = records[name]
        d = rec.dispersion
        depth = rec.metadata.get("depth_mm")
        depth = "" if depth is None else repr(depth)
        if isinstance(d, Static):
            model, eps, sigma = "static", d.eps_r, d.sigma
        else:
            model, eps, sigma = "cole-cole", d.eps_inf, d.sigma_static
        out.write(f"{name},{model},{eps!r},{sigma!r},{rec.density!r},{depth}\n")


_COMMAND_EXPERIMENT = {"penetrate": "penetration", "detect": "detection", "sweep": "sweep"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="headradar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("penetrate", "detect", "sweep"):
        p = sub.add_parser(name, help=f"run the {_COMMAND_EXPERIMENT[name]} experiment")
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--db", help=f"tissue database (default: ${DB_ENV} or the shipped table)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
    p = sub.add_parser("tissues", help="print the head-model tissue table")
    p.add_argument("--db")
    p.add_argument("--all", action="store_true", help="include non-head records such as Tumor")
    p = sub.add_parser("validate", help="check a configuration without running it")
    p.add_argument("--config", required=True)
    p.add_argument("--db")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(f"headradar: error[{kind}]: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "tissues":
            print_tissues(_load_db(None, args.db, None), args.all)
            return 0
        cfg, base = _read_config(args.config)
        db = _load_db(cfg, args.db, base)
        if args.command == "validate":
            print(f"ok: {args.config} ({cfg.experiment})")
            return 0
        expected = _COMMAND_EXPERIMENT[args.command]
        if cfg.experiment != expected:
            raise ConfigError(f"experiment: '{args.command}' needs '{expected}', got '{cfg.experiment}'")
        outdir = Path(args.out) if args.out else base / cfg.output_dir
        written = execute(cfg, db, outdir)
        print(f"wrote {written}")
        return 0
    except ConfigError as exc:
        return _fail("config", exc, 1)
    except KeyError as exc:
        return _fail("config", exc.args[0] if exc.args else exc, 1)
    except OSError as exc:
        return _fail("io", exc, 3)
    except (ValueError, ArithmeticError, AssertionError, FloatingPointError) as exc:
        return _fail("runtime", exc, 2)


if __name__ == "__main__":
    sys.exit(main())

"""Penetration profiling and tumour-detection experiments on the head model."""

from __future__ import annotations

import csv
import hashlib
import math
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from headradar import fdtd
from headradar.dielectrics import (
    HEAD_LAYERS,
    Inclusion,
    LayerStack,
    Static,
    TissueRecord,
    _as_mapping,
    build_head_stack,
    insert_inclusion,
    split_at,
)
from headradar.dosimetry import SarProfile, compliance_check, peak_sar, sar_profile, write_sar_csv
from headradar.tmm import FieldProfile, field_profile, solve_stack

BAND = (0.5e9, 5.0e9)
BASE_AMPLITUDE = 1.0  # V/m, vivaldi-like source
PRESET_AMPLITUDE = {"vivaldi-like": 1.0, "patch-like": 4.5}  # relative source field
PENETRATION_DEPTH = 50e-3
PROFILE_DZ = 50e-6
DURA_CSF_DEPTH = math.fsum(d for _, d in HEAD_LAYERS[:4])
SWEEP_AXES = ("frequency", "tumor_radius", "tumor_depth", "tumor_sigma", "preset")


def preset_amplitude(preset: str, base: float = BASE_AMPLITUDE) -> float:
    if preset not in PRESET_AMPLITUDE:
        raise ValueError(f"unknown preset '{preset}'")
    return base * PRESET_AMPLITUDE[preset]


def _check_band(frequencies):
    for f in frequencies:
        if not BAND[0] <= f <= BAND[1]:
            raise ValueError(f"frequency {f:g} Hz lies outside [{BAND[0]:g}, {BAND[1]:g}] Hz")


# -- penetration ------------------------------------------------------------

@dataclass(frozen=True)
class PenetrationReport:
    preset: str
    amplitude: float
    frequencies: tuple[float, ...]
    z: np.ndarray
    fields: tuple[FieldProfile, ...]
    sars: tuple[SarProfile, ...]


def penetration_experiment(db, preset: str = "vivaldi-like", frequencies=(2.45e9, 4.5e9), *,
                           stack: LayerStack | None = None, base_amplitude: float = BASE_AMPLITUDE,
                           dz: float = PROFILE_DZ, depth: float = PENETRATION_DEPTH) -> PenetrationReport:
    """Transfer-matrix field and SAR profiles over 0-50 mm, one pair per frequency.

    The incident field amplitude is the preset's source amplitude.
    """
    frequencies = tuple(float(f) for f in frequencies)
    _check_band(frequencies)
    amplitude = preset_amplitude(preset, base_amplitude)
    stack = build_head_stack(db) if stack is None else stack
    fields, sars = [], []
    for f in frequencies:
        prof = field_profile(solve_stack(stack, f), stack, dz, depth=depth).scaled(amplitude)
        fields.append(prof)
        sars.append(sar_profile(prof, stack))
    z = fields[0].z if fields else np.zeros(0)
    return PenetrationReport(preset, amplitude, frequencies, z, tuple(fields), tuple(sars))


# -- tumour detection -------------------------------------------------------

@dataclass(frozen=True)
class TumorSpec:
    """Slab stand-in for a spherical tumour: thickness is the diameter."""

    radius: float = 5e-3
    center_depth: float = DURA_CSF_DEPTH
    tissue: str = "Tumor"
    eps_r: float | None = None
    sigma: float | None = None
    null_contrast: bool = False  # keep host tissue, only split layers

    def record(self, db) -> TissueRecord:
        tissues = _as_mapping(db)
        if self.tissue not in tissues:
            raise KeyError(f"tissue database lacks '{self.tissue}'")
        rec = tissues[self.tissue]
        if self.eps_r is None and self.sigma is None:
            return rec
        base = rec.dispersion
        if not isinstance(base, Static):
            raise ValueError("eps_r/sigma overrides need a static tumour record")
        eps_r = base.eps_r if self.eps_r is None else self.eps_r
        sigma = base.sigma if self.sigma is None else self.sigma
        return TissueRecord(rec.name, Static(eps_r, sigma), rec.density, rec.metadata)

    def apply(self, stack: LayerStack, db) -> LayerStack:
        if self.radius == 0:
            return stack
        inc = Inclusion(self.record(db), self.center_depth, 2.0 * self.radius)
        if self.null_contrast:
            start, stop = inc.interval
            if start < 0 or stop > stack.total_thickness:
                raise ValueError("inclusion interval lies outside the stack")
            return split_at(stack, [start, stop])
        return insert_inclusion(stack, inc)


@dataclass(frozen=True)
class DetectionArm:
    stack: LayerStack
    run: fdtd.SimulationRun
    sparams: fdtd.SParamResult
    delay: float  # cross-correlation, Tx incident -> Rx
    group_delay: float  # of s21 at the band centre, relative to vacuum
    field: FieldProfile
    sar: SarProfile


@dataclass(frozen=True)
class DifferentialReport:
    preset: str
    amplitude: float
    tumor: TumorSpec
    f_center: float
    reference: fdtd.SimulationRun
    baseline: DetectionArm
    with_tumor: DetectionArm
    settings: dict = field(default_factory=dict, compare=False)

    @property
    def freq(self) -> np.ndarray:
        return self.baseline.sparams.freq[self.baseline.sparams.in_band]

    @property
    def s11_db(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(
            20.0 * np.log10(np.abs(arm.sparams.s11[arm.sparams.in_band]))
            for arm in (self.baseline, self.with_tumor)
        )

    @property
    def delta_s11_db(self) -> np.ndarray:
        base, tum = self.s11_db
        return tum - base

    @property
    def delta_delay(self) -> float:
        return self.with_tumor.delay - self.baseline.delay

    @property
    def delta_group_delay(self) -> float:
        return self.with_tumor.group_delay - self.baseline.group_delay

    @property
    def delta_field(self) -> np.ndarray:
        return np.abs(self.with_tumor.field.e) - np.abs(self.baseline.field.e)

    @property
    def delta_sar(self) -> np.ndarray:
        return self.with_tumor.sar.sar - self.baseline.sar.sar


def _arm(stack, grid, source, duration, reference, f_center, amplitude, dz_profile):
    sim = fdtd.run(grid, source, duration)
    sp = fdtd.extract_sparams(reference, sim)
    prof = field_profile(solve_stack(stack, f_center), stack, dz_profile,
                         depth=PENETRATION_DEPTH).scaled(amplitude)
    return DetectionArm(
        stack=stack,
        run=sim,
        sparams=sp,
        delay=fdtd.propagation_delay(reference.e_tx, sim.e_rx, grid.dt),
        group_delay=sp.group_delay(f_center),
        field=prof,
        sar=sar_profile(prof, stack),
    )


def tumor_experiment(db, preset: str = "patch-like", tumor: TumorSpec | None = None, *,
                     base_amplitude: float = BASE_AMPLITUDE, standoff: float = 10e-3,
                     dz: float | None = None, duration: float | None = None) -> DifferentialReport:
    """Paired FDTD runs of the head model without and with a tumour slab.

    Both arms share one grid spacing, extent, source and duration, and one
    vacuum reference run. Field and SAR profiles come from the
    transfer-matrix solver at the preset's centre frequency.
    """
    tumor = TumorSpec() if tumor is None else tumor
    amplitude = preset_amplitude(preset, base_amplitude)
    baseline = build_head_stack(db)
    with_tumor = tumor.apply(baseline, db)
    source = fdtd.synthesize_source(preset, amplitude=amplitude)
    if dz is None:
        dz, rule = fdtd.grid_spacing([baseline, with_tumor], source)
    else:
        rule = "override"
    g_base = fdtd.discretize(baseline, source, standoff, dz=dz)
    g_tum = fdtd.discretize(with_tumor, source, standoff, dz=dz)
    source = fdtd.with_dt(source, g_base.dt)
    if duration is None:
        duration = max(fdtd.default_duration(g_base, source), fdtd.default_duration(g_tum, source))
    reference = fdtd.run(fdtd.vacuum_reference(g_base), source, duration)

    thinnest = min(baseline.thicknesses.min(), with_tumor.thicknesses.min())
    dz_profile = min(PROFILE_DZ, thinnest / 4.0)
    f_center = source.f0
    arms = [
        _arm(stack, grid, source, duration, reference, f_center, amplitude, dz_profile)
        for stack, grid in ((baseline, g_base), (with_tumor, g_tum))
    ]
    settings = {
        "dz_m": g_base.dz,
        "dt_s": g_base.dt,
        "duration_s": reference.duration,
        "nsteps": len(reference.t),
        "grid_cells": g_base.size,
        "spacing_rule": rule,
        "standoff_m": g_base.standoff,
        "profile_dz_m": dz_profile,
        "band_hz": list(arms[0].sparams.band),
    }
    return DifferentialReport(preset, amplitude, tumor, f_center, reference, arms[0], arms[1], settings)


# -- sweeps -----------------------------------------------------------------

def _sweep_one(args):
    db, axis, value, preset, frequencies, options = args
    if axis == "frequency":
        return penetration_experiment(db, preset, [value])
    if axis == "preset":
        return penetration_experiment(db, value, frequencies)
    base = options.get("tumor") or TumorSpec()
    field_name = {"tumor_radius": "radius", "tumor_depth": "center_depth", "tumor_sigma": "sigma"}[axis]
    tumor = replace(base, **{field_name: value})
    kwargs = {k: v for k, v in options.items() if k != "tumor"}
    return tumor_experiment(db, preset, tumor, **kwargs)


def sweep(db, axis: str, values, *, preset: str = "vivaldi-like", frequencies=(2.45e9, 4.5e9),
          workers: int = 1, **options) -> list:
    """One report per value along `axis`, in input order.

    Frequencies are in Hz, tumour radius and depth in metres, tumour
    conductivity in S/m. Extra keyword options go to ``tumor_experiment``.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}, got '{axis}'")
    jobs = [(db, axis, v, preset, tuple(frequencies), options) for v in values]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_one, jobs))
    return [_sweep_one(job) for job in jobs]


# -- serialisation ----------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@contextmanager
def atomic_directory(outdir):
    """Yield a scratch directory that replaces `outdir` only on success."""
    outdir = Path(outdir)
    outdir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{outdir.name}.tmp-", dir=outdir.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    backup = None
    if outdir.exists():
        backup = Path(tempfile.mkdtemp(prefix=f".{outdir.name}.old-", dir=outdir.parent))
        os.rmdir(backup)
        os.replace(outdir, backup)
    os.replace(tmp, outdir)
    if backup is not None:
        shutil.rmtree(backup, ignore_errors=True)


def _write_penetration(report: PenetrationReport, d: Path, sar_limit: float) -> dict:
    summary = {"frequencies_hz": list(report.frequencies), "peaks": [], "compliance": []}
    for f, prof, sar in zip(report.frequencies, report.fields, report.sars):
        tag = f"{f / 1e9:g}GHz"
        _write_rows(d / f"field_{tag}.csv", ["depth_m", "e_abs_Vpm", "e_envelope_Vpm"],
                    zip(prof.z, prof.magnitude, prof.envelope))
        write_sar_csv(sar, d / f"sar_{tag}.csv")
        peak = peak_sar(sar)
        summary["peaks"].append({"frequency_hz": f, "sar_Wkg": peak.value, "depth_m": peak.depth})
        summary["compliance"].append(
            {"frequency_hz": f, "violations_m": [list(iv) for iv in compliance_check(sar, sar_limit)]}
        )
    return summary


def _write_detection(report: DifferentialReport, d: Path, sar_limit: float) -> dict:
    freq = report.freq
    s11_b, s11_t = report.s11_db
    _write_rows(d / "delta_s11.csv", ["freq_hz", "s11_baseline_dB", "s11_tumor_dB", "delta_s11_dB"],
                zip(freq, s11_b, s11_t, report.delta_s11_db))
    f_hi = report.baseline.sparams.band[1]
    stride = max(1, int(1.0 / (20.0 * f_hi * report.reference.grid.dt)))
    for name, arm in (("baseline", report.baseline), ("tumor", report.with_tumor)):
        sp = arm.sparams
        ib = sp.in_band
        _write_rows(d / f"sparams_{name}.csv",
                    ["freq_hz", "s11_re", "s11_im", "s21_re", "s21_im"],
                    zip(sp.freq[ib], sp.s11[ib].real, sp.s11[ib].imag, sp.s21[ib].real, sp.s21[ib].imag))
        fdtd.write_probe_csv(arm.run, d / f"probes_{name}.csv", stride)
        fdtd.write_envelope_csv(arm.run, d / f"envelope_{name}.csv")
        write_sar_csv(arm.sar, d / f"sar_{name}.csv")
    _write_rows(d / "delta_profiles.csv",
                ["depth_m", "e_baseline_Vpm", "e_tumor_Vpm", "delta_e_Vpm",
                 "sar_baseline_Wkg", "sar_tumor_Wkg", "delta_sar_Wkg"],
                zip(report.baseline.field.z, np.abs(report.baseline.field.e),
                    np.abs(report.with_tumor.field.e), report.delta_field,
                    report.baseline.sar.sar, report.with_tumor.sar.sar, report.delta_sar))
    t = report.tumor
    return {
        "tumor": {"radius_m": t.radius, "center_depth_m": t.center_depth, "tissue": t.tissue,
                  "eps_r": t.eps_r, "sigma_Spm": t.sigma, "null_contrast": t.null_contrast},
        "f_center_hz": report.f_center,
        "grid": dict(report.settings, probe_stride=stride),
        "delay_s": {"baseline": report.baseline.delay, "tumor": report.with_tumor.delay,
                    "delta": report.delta_delay},
        "group_delay_s": {"baseline": report.baseline.group_delay,
                          "tumor": report.with_tumor.group_delay, "delta": report.delta_group_delay},
        "max_abs_delta_s11_dB": float(np.max(np.abs(report.delta_s11_db))) if len(freq) else 0.0,
        "peak_sar": {name: peak_sar(arm.sar)._asdict()
                     for name, arm in (("baseline", report.baseline), ("tumor", report.with_tumor))},
        "compliance": {name: [list(iv) for iv in compliance_check(arm.sar, sar_limit)]
                       for name, arm in (("baseline", report.baseline), ("tumor", report.with_tumor))},
    }


def _write_one(report, d: Path, sar_limit: float, extra: dict | None) -> dict:
    if isinstance(report, PenetrationReport):
        kind = "penetration"
        results = _write_penetration(report, d, sar_limit)
    elif isinstance(report, DifferentialReport):
        kind = "detection"
        results = _write_detection(report, d, sar_limit)
    else:
        raise TypeError(f"cannot serialise {type(report).__name__}")
    files = {p.name: _sha256(p) for p in sorted(d.iterdir()) if p.suffix == ".csv"}
    manifest = {
        "kind": kind,
        "preset": report.preset,
        "source_amplitude_Vpm": report.amplitude,
        "sar_limit_Wkg": sar_limit,
        "results": results,
        "files": files,
    }
    if extra:
        manifest.update(extra)
    (d / "manifest.yaml").write_text(yaml.safe_dump(_plain(manifest), sort_keys=False))
    return files


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def write_report(report, outdir, *, sar_limit: float = 2.0, extra: dict | None = None) -> Path:
    """Serialise a report (or a list of sweep reports) to `outdir` atomically.

    Each report directory holds CSV files and a ``manifest.yaml`` with run
    parameters and SHA-256 checksums of every CSV.
    """
    outdir = Path(outdir)
    with atomic_directory(outdir) as tmp:
        if isinstance(report, (list, tuple)):
            entries = []
            for i, rep in enumerate(report):
                sub = tmp / f"run_{i:03d}"
                sub.mkdir()
                _write_one(rep, sub, sar_limit, None)
                entries.append({"dir": sub.name, "manifest_sha256": _sha256(sub / "manifest.yaml")})
            top = {"kind": "sweep", "runs": entries}
            if extra:
                top.update(extra)
            (tmp / "manifest.yaml").write_text(yaml.safe_dump(_plain(top), sort_keys=False))
        else:
            _write_one(report, tmp, sar_limit, extra)
    return outdir

"""One-dimensional FDTD engine for pulse propagation through a layer stack.

Yee grid along z: E nodes at ``k * dz``, H nodes at ``(k + 1/2) * dz``.
Each E node carries a homogeneous (eps_r, sigma), so material interfaces
sit on H nodes. Conductivity uses the semi-implicit (time-averaged)
update. The source enters through a total-field/scattered-field plane
driven by an auxiliary vacuum line, and both ends are first-order Mur
absorbers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy import optimize, signal

from headradar.dielectrics import (
    C0,
    EPS0,
    ETA0,
    MU0,
    LayerStack,
    Layer,
    Static,
    TissueRecord,
    static_equivalent,
)

PRESETS = {
    "patch-like": (2.45e9, 0.5e9),
    "vivaldi-like": (2.75e9, 4.5e9),
}
COURANT = 0.99
CELLS_PER_WAVELENGTH = 20
MIN_LAYER_CELLS = 2
_GAUSS_HALF_WIDTH = 4.5  # pulse truncated at +/- 4.5 Gaussian widths
_BAND_LEVEL_DB = -10.0


@dataclass(frozen=True)
class SourceWaveform:
    """Gaussian-modulated sinusoid sampled at the simulation timestep.

    ``samples[n]`` is the incident field at time ``n * dt``; the pulse is
    antisymmetric about its centre so it carries no DC content.
    """

    kind: str
    f0: float
    bandwidth: float
    amplitude: float
    dt: float
    samples: np.ndarray

    @property
    def duration(self) -> float:
        return (len(self.samples) - 1) * self.dt

    def spectrum(self, freqs) -> np.ndarray:
        """Discrete-time Fourier transform of the samples (V/m/Hz)."""
        freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
        n = np.arange(len(self.samples))
        out = np.empty(freqs.shape, dtype=complex)
        for i, f in enumerate(freqs):
            out[i] = np.sum(self.samples * np.exp(-2j * np.pi * f * n * self.dt)) * self.dt
        return out

    def band_edges(self, level_db: float = _BAND_LEVEL_DB) -> tuple[float, float]:
        """Frequencies where |spectrum| crosses `level_db` below its peak."""
        if not np.any(self.samples):
            raise ValueError("zero-amplitude source has no band")
        ref = _unit_pulse(self.f0, self.bandwidth, self.dt)
        mag = lambda f: abs(ref.spectrum(f)[0])
        peak_res = optimize.minimize_scalar(
            lambda f: -mag(f), bounds=(0.5 * self.f0, 1.5 * self.f0), method="bounded",
            options={"xatol": 1e-6 * self.f0},
        )
        f_peak = peak_res.x
        target = mag(f_peak) * 10.0 ** (level_db / 20.0)
        g = lambda f: mag(f) - target
        lo = optimize.brentq(g, 1e-3 * self.f0, f_peak, xtol=1e-6 * self.f0)
        hi_bracket = f_peak + 2.0 * self.bandwidth
        hi = optimize.brentq(g, f_peak, hi_bracket, xtol=1e-6 * self.f0)
        return lo, hi

    def at(self, n: int) -> float:
        return self.samples[n] if 0 <= n < len(self.samples) else 0.0


def _gauss_width(bandwidth: float) -> float:
    # |FT| of exp(-(t/w)^2) is exp(-(pi w f)^2): -10 dB at f = bandwidth / 2
    return 2.0 * math.sqrt(0.5 * math.log(10.0)) / (math.pi * bandwidth)


def _unit_pulse(f0, bandwidth, dt):
    return synthesize_source("custom", f0, bandwidth, 1.0, dt)


def synthesize_source(kind: str, f0: float | None = None, bandwidth: float | None = None,
                      amplitude: float = 1.0, dt: float = 1e-12) -> SourceWaveform:
    """Build a source pulse.

    Parameters
    ----------
    kind : {"patch-like", "vivaldi-like", "custom"}
        Presets fix `f0` and `bandwidth`; "custom" requires both.
    f0, bandwidth : float
        Centre frequency and -10 dB two-sided bandwidth in Hz.
    amplitude : float
        Peak field scale in V/m.
    dt : float
        Sampling interval (the simulation timestep) in seconds.
    """
    if kind in PRESETS:
        if f0 is not None or bandwidth is not None:
            raise ValueError(f"preset '{kind}' fixes f0 and bandwidth")
        f0, bandwidth = PRESETS[kind]
    elif kind == "custom":
        if f0 is None or bandwidth is None:
            raise ValueError("custom source needs f0 and bandwidth")
    else:
        raise ValueError(f"unknown source kind '{kind}'")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be > 0")
    if not f0 > bandwidth / 2.0:
        raise ValueError("source band extends to or through DC (need f0 > bandwidth/2)")
    if not dt > 0:
        raise ValueError("dt must be > 0")
    width = _gauss_width(bandwidth)
    n0 = math.ceil(_GAUSS_HALF_WIDTH * width / dt)
    t = (np.arange(2 * n0 + 1) - n0) * dt
    samples = amplitude * np.exp(-((t / width) ** 2)) * np.sin(2.0 * np.pi * f0 * t)
    return SourceWaveform(kind, float(f0), float(bandwidth), float(amplitude), float(dt), samples)


def with_dt(source: SourceWaveform, dt: float) -> SourceWaveform:
    """Resample a source at a different timestep."""
    if source.kind in PRESETS:
        return synthesize_source(source.kind, amplitude=source.amplitude, dt=dt)
    return synthesize_source(source.kind, source.f0, source.bandwidth, source.amplitude, dt)


# -- grid -------------------------------------------------------------------

@dataclass(frozen=True)
class Grid1D:
    dz: float
    dt: float
    eps_r: np.ndarray
    sigma: np.ndarray
    density: np.ndarray
    tissue: tuple[str, ...]  # per E node
    source_index: int
    tx_index: int
    rx_index: int
    stack_start: int  # first E node of the stack
    stack_stop: int  # one past the last E node of the stack
    layer_cells: tuple[int, ...]
    effective_stack: LayerStack  # stack with thicknesses snapped to the grid
    binding_rule: str
    boundaries: tuple[str, str] = ("mur1", "mur1")

    @property
    def size(self) -> int:
        return len(self.eps_r)

    @property
    def z(self) -> np.ndarray:
        """E-node positions measured from the stack's front face."""
        return (np.arange(self.size) - (self.stack_start - 0.5)) * self.dz

    @property
    def standoff(self) -> float:
        return (self.stack_start - 0.5 - self.source_index) * self.dz

    @property
    def tx_to_front(self) -> float:
        return (self.stack_start - 0.5 - self.tx_index) * self.dz

    @property
    def two_way_transit(self) -> float:
        return 2.0 * float(np.sum(np.sqrt(self.eps_r))) * self.dz / C0

    def depth_slice(self) -> slice:
        return slice(self.stack_start, self.stack_stop)


def _medium(tissue: TissueRecord, f_ref: float) -> Static:
    return static_equivalent(tissue.dispersion, f_ref)


def grid_spacing(stacks, source: SourceWaveform, *,
                 cells_per_wavelength: int = CELLS_PER_WAVELENGTH,
                 snap_tolerance: float | None = 0.01, max_refine: int = 50) -> tuple[float, str]:
    """Cell size shared by `stacks` and the rule that bounds it.

    The bound is the smaller of the wavelength rule (shortest in-medium
    wavelength at the source's upper -10 dB edge over
    `cells_per_wavelength`) and half the thinnest layer. When
    `snap_tolerance` is set, the size is then reduced, down to
    ``bound / max_refine``, to the largest value that places every
    interface within ``snap_tolerance * bound`` of a cell edge; if none
    does, the bound itself is returned.
    """
    stacks = list(stacks)
    _, f_hi = source.band_edges()
    eps_max = 1.0
    thinnest = math.inf
    edges = set()
    for stack in stacks:
        media = [stack.front, stack.back] + [layer.tissue for layer in stack.layers]
        eps_max = max([eps_max] + [_medium(m, source.f0).eps_r for m in media])
        if len(stack):
            thinnest = min(thinnest, stack.thicknesses.min())
            edges.update(float(b) for b in stack.boundaries[1:])
    dz_wave = C0 / (f_hi * math.sqrt(eps_max)) / cells_per_wavelength
    dz_layer = thinnest / MIN_LAYER_CELLS
    rule, bound = ("wavelength", dz_wave) if dz_wave <= dz_layer else ("thin-layer", dz_layer)
    if snap_tolerance is None or not edges:
        return bound, rule
    b = np.array(sorted(edges))
    tol = snap_tolerance * bound
    candidates = {bound}
    for edge in b:
        n_lo = math.ceil(edge / bound - 1e-9)
        candidates.update(edge / n for n in range(max(n_lo, 1), math.floor(edge * max_refine / bound) + 1))
    for dz in sorted(candidates, reverse=True):
        if dz < bound / max_refine:
            break
        if np.max(np.abs(b - np.rint(b / dz) * dz)) <= tol:
            return float(dz), rule
    return bound, rule


def discretize(stack: LayerStack, source: SourceWaveform, standoff: float = 10e-3, *,
               rx_offset: float = 10e-3, dz: float | None = None,
               cells_per_wavelength: int = CELLS_PER_WAVELENGTH,
               snap_tolerance: float | None = 0.01, margin: int = 5) -> Grid1D:
    """Discretise `stack` plus the air standoff for the given source.

    The source/Tx plane sits `standoff` in front of the stack and the Rx
    probe `rx_offset` behind it. Without an explicit `dz` the spacing comes
    from ``grid_spacing``; an explicit `dz` must respect the same bound.
    Layer interfaces are snapped to the nearest H node with cumulative
    rounding; the snapped geometry is kept as ``effective_stack``.
    """
    if not standoff >= 0:
        raise ValueError("standoff must be >= 0")
    front = _medium(stack.front, source.f0)
    back = _medium(stack.back, source.f0)
    if front.sigma != 0:
        raise ValueError("front bounding medium must be lossless")
    media = [_medium(layer.tissue, source.f0) for layer in stack.layers]
    bound, rule = grid_spacing([stack], source, cells_per_wavelength=cells_per_wavelength,
                               snap_tolerance=None)
    if dz is None:
        dz, rule = grid_spacing([stack], source, cells_per_wavelength=cells_per_wavelength,
                                snap_tolerance=snap_tolerance)
    elif dz > bound * (1 + 1e-12):
        raise ValueError(f"dz={dz:g} m exceeds the {rule} bound {bound:g} m")

    ks = margin
    start = ks + int(round(standoff / dz + 0.5))
    edges = start + np.rint(stack.boundaries / dz).astype(int)
    cells = np.diff(edges)
    if len(cells) and cells.min() < MIN_LAYER_CELLS:
        raise AssertionError(f"layer resolved with {cells.min()} cells at dz={dz:g} m")
    stop = int(edges[-1])
    rx = stop + int(round(rx_offset / dz))
    size = rx + margin + 1

    eps_r = np.full(size, front.eps_r)
    sigma = np.zeros(size)
    density = np.full(size, stack.front.density)
    names = [stack.front.name] * size
    for layer, m, a, b in zip(stack.layers, media, edges[:-1], edges[1:]):
        eps_r[a:b] = m.eps_r
        sigma[a:b] = m.sigma
        density[a:b] = layer.tissue.density
        names[a:b] = [layer.tissue.name] * (b - a)
    eps_r[stop:] = back.eps_r
    sigma[stop:] = back.sigma
    density[stop:] = stack.back.density
    names[stop:] = [stack.back.name] * (size - stop)

    snapped = LayerStack(
        tuple(Layer(layer.tissue, int(n) * dz) for layer, n in zip(stack.layers, cells)),
        stack.front, stack.back,
    )
    dt = COURANT * dz / C0
    return Grid1D(float(dz), dt, eps_r, sigma, density, tuple(names), ks, ks, rx, start, stop,
                  tuple(int(n) for n in cells), snapped, rule)


def vacuum_reference(grid: Grid1D) -> Grid1D:
    """Same grid with every cell set to the front medium (the stack removed)."""
    eps = np.full(grid.size, grid.eps_r[grid.source_index])
    return replace(
        grid,
        eps_r=eps,
        sigma=np.zeros(grid.size),
        density=np.full(grid.size, grid.density[grid.source_index]),
        tissue=(grid.tissue[grid.source_index],) * grid.size,
    )


# -- time stepping ----------------------------------------------------------

@njit(cache=True)
def _step_all(ca, cb, ch, mur_left, mur_right, ks, tx, rx, src, nsteps, eps_r, dz, track_energy):
    n_cells = ca.shape[0]
    e = np.zeros(n_cells)
    h = np.zeros(n_cells - 1)
    env = np.zeros(n_cells)
    e_tx = np.zeros(nsteps)
    e_rx = np.zeros(nsteps)
    energy = np.zeros(nsteps if track_energy else 0)

    # auxiliary incident line: E index 2 maps onto main node ks
    n_aux = 24
    a = 2
    ea = np.zeros(n_aux)
    ha = np.zeros(n_aux - 1)
    ch_a = ch
    cb_a = cb[ks]
    mur_a = mur_left
    n_src = src.shape[0]

    for n in range(nsteps):
        for j in range(n_aux - 1):
            ha[j] -= ch_a * (ea[j + 1] - ea[j])
        for k in range(n_cells - 1):
            h[k] -= ch * (e[k + 1] - e[k])
        h[ks - 1] += ch * ea[a]

        e1_old = e[1]
        en_old = e[n_cells - 2]
        ea_old = ea[n_aux - 2]
        for j in range(1, n_aux - 1):
            ea[j] -= cb_a * (ha[j] - ha[j - 1])
        ea[0] = src[n + 1] if n + 1 < n_src else 0.0
        ea[n_aux - 1] = ea_old + mur_a * (ea[n_aux - 2] - ea[n_aux - 1])
        for k in range(1, n_cells - 1):
            e[k] = ca[k] * e[k] - cb[k] * (h[k] - h[k - 1])
        e[ks] += cb[ks] * ha[a - 1]
        e[0] = e1_old + mur_left * (e[1] - e[0])
        e[n_cells - 1] = en_old + mur_right * (e[n_cells - 2] - e[n_cells - 1])

        for k in range(n_cells):
            v = abs(e[k])
            if v > env[k]:
                env[k] = v
        e_tx[n] = e[tx]
        e_rx[n] = e[rx]
        if track_energy:
            w = 0.0
            for k in range(n_cells):
                w += 0.5 * EPS0 * eps_r[k] * e[k] * e[k]
            for k in range(n_cells - 1):
                w += 0.5 * MU0 * h[k] * h[k]
            energy[n] = w * dz
    return e_tx, e_rx, env, energy



@dataclass(frozen=True)
class SimulationRun:
    grid: Grid1D
    source: SourceWaveform
    duration: float
    t: np.ndarray
    e_tx: np.ndarray
    e_rx: np.ndarray
    envelope: np.ndarray  # max |E| per E node over the run
    energy: np.ndarray | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def injected_energy(self) -> float:
        """Energy per unit area carried by the incident pulse (J/m^2)."""
        eta = ETA0 / math.sqrt(self.grid.eps_r[self.grid.source_index])
        return float(np.sum(self.source.samples ** 2) * self.source.dt / eta)

    def envelope_profile(self) -> tuple[np.ndarray, np.ndarray]:
        """Depth (m) and envelope maximum (V/m) over the stack's E nodes."""
        sl = self.grid.depth_slice()
        return self.grid.z[sl], self.envelope[sl]


def run(grid: Grid1D, source: SourceWaveform, duration: float | None = None, *,
        track_energy: bool = False) -> SimulationRun:
    """Time-step `grid` driven by `source` for `duration` seconds."""
    if source.dt != grid.dt:
        source = with_dt(source, grid.dt)
    if grid.dt > COURANT * grid.dz / C0 * (1 + 1e-12):
        raise ValueError("timestep violates the stability bound")
    if duration is None:
        duration = default_duration(grid, source)
    if duration < 3.0 * grid.two_way_transit:
        raise ValueError("duration must cover three two-way transits of the grid")
    nsteps = int(round(duration / grid.dt))

    eps = EPS0 * grid.eps_r
    loss = grid.sigma * grid.dt / (2.0 * eps)
    ca = (1.0 - loss) / (1.0 + loss)
    cb = grid.dt / (eps * grid.dz) / (1.0 + loss)
    ch = grid.dt / (MU0 * grid.dz)

    def mur(i):
        v = C0 / math.sqrt(grid.eps_r[i])
        return (v * grid.dt - grid.dz) / (v * grid.dt + grid.dz)

    e_tx, e_rx, env, energy = _step_all(
        ca, cb, ch, mur(0), mur(grid.size - 1), grid.source_index, grid.tx_index,
        grid.rx_index, source.samples, nsteps, grid.eps_r, grid.dz, track_energy,
    )
    t = (np.arange(nsteps) + 1) * grid.dt
    meta = {"nsteps": nsteps, "gating": "none", "margin_cells": grid.source_index}
    if track_energy:
        peak = float(energy.max())
        meta["final_energy_ratio"] = float(energy[-1] / peak) if peak > 0 else 0.0
    return SimulationRun(grid, source, nsteps * grid.dt, t, e_tx, e_rx, env,
                         energy if track_energy else None, meta)


def default_duration(grid: Grid1D, source: SourceWaveform, transits: float = 4.0) -> float:
    """Pulse length plus several two-way transits of the grid."""
    return source.duration + transits * grid.two_way_transit


# -- post-processing --------------------------------------------------------

@dataclass(frozen=True)
class SParamResult:
    freq: np.ndarray
    s11: np.ndarray
    s21: np.ndarray
    band: tuple[float, float]

    @property
    def in_band(self) -> np.ndarray:
        lo, hi = self.band
        return (self.freq >= lo) & (self.freq <= hi)

    def group_delay(self, f: float) -> float:
        """Group delay -d(arg s21)/d(omega) at `f`, relative to vacuum."""
        phase = np.unwrap(np.angle(self.s21[self.in_band]))
        fb = self.freq[self.in_band]
        slope = np.gradient(phase, 2.0 * np.pi * fb)
        return float(-np.interp(f, fb, slope))


def _check_pair(ref: SimulationRun, dev: SimulationRun):
    g0, g1 = ref.grid, dev.grid
    same = (
        g0.dz == g1.dz and g0.dt == g1.dt and g0.size == g1.size
        and g0.tx_index == g1.tx_index and g0.rx_index == g1.rx_index
        and g0.source_index == g1.source_index and len(ref.t) == len(dev.t)
        and np.array_equal(ref.source.samples, dev.source.samples)
    )
    if not same:
        raise ValueError("reference and device runs differ in grid, timestep, duration or source")


def extract_sparams(reference_run: SimulationRun, device_run: SimulationRun) -> SParamResult:
    """S-parameters by spectral division against a vacuum reference run.

    ``s11`` is referred to the stack's front face; ``s21`` is the ratio of
    the received spectra, i.e. the stack transmission relative to the
    same path in vacuum.
    """
    _check_pair(reference_run, device_run)
    grid = device_run.grid
    n = len(device_run.t)
    nfft = 1 << (4 * n - 1).bit_length()
    freq = np.fft.rfftfreq(nfft, grid.dt)
    inc = np.fft.rfft(reference_run.e_tx, nfft)
    refl = np.fft.rfft(device_run.e_tx - reference_run.e_tx, nfft)
    rx_ref = np.fft.rfft(reference_run.e_rx, nfft)
    rx_dev = np.fft.rfft(device_run.e_rx, nfft)
    k0 = 2.0 * np.pi * freq / C0 * math.sqrt(grid.eps_r[grid.tx_index])
    with np.errstate(divide="ignore", invalid="ignore"):
        s11 = np.where(inc != 0, refl / inc, 0.0) * np.exp(2j * k0 * grid.tx_to_front)
        s21 = np.where(rx_ref != 0, rx_dev / rx_ref, 0.0)
    return SParamResult(freq, s11, s21, device_run.source.band_edges())


def propagation_delay(tx_series, rx_series, dt: float) -> float:
    """Delay of `rx_series` behind `tx_series` in seconds.

    Peak of the normalised cross-correlation, refined with a three-point
    parabola, so the resolution is finer than `dt`.
    """
    tx = np.asarray(tx_series, dtype=float)
    rx = np.asarray(rx_series, dtype=float)
    e_tx = float(np.dot(tx, tx))
    e_rx = float(np.dot(rx, rx))
    if e_tx == 0 or e_rx == 0:
        raise ValueError("cross-correlation needs non-zero signals")
    corr = signal.correlate(rx, tx, mode="full", method="fft") / math.sqrt(e_tx * e_rx)
    lags = signal.correlation_lags(len(rx), len(tx), mode="full")
    i = int(np.argmax(corr))
    shift = 0.0
    if 0 < i < len(corr) - 1:
        y0, y1, y2 = corr[i - 1], corr[i], corr[i + 1]
        denom = y0 - 2.0 * y1 + y2
        if denom != 0:
            shift = 0.5 * (y0 - y2) / denom
    return (lags[i] + shift) * dt


# -- export -----------------------------------------------------------------

def write_probe_csv(sim: SimulationRun, path, stride: int = 1) -> None:
    """Probe series as CSV (time_s, e_tx_Vpm, e_rx_Vpm), every `stride`-th step."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "e_tx_Vpm", "e_rx_Vpm"])
        for t, a, b in zip(sim.t[::stride], sim.e_tx[::stride], sim.e_rx[::stride]):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])


def write_envelope_csv(sim: SimulationRun, path) -> None:
    z, e = sim.envelope_profile()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["depth_m", "e_max_Vpm"])
        for zi, ei in zip(z, e):
            w.writerow([repr(float(zi)), repr(float(ei))])

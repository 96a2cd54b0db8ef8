"""Plane-wave normal incidence on a layer stack by the transfer-matrix method.

The solver runs an input-impedance recursion from the back medium to the
front face, then walks the layers forward to recover the wave amplitudes.
Every exponential it evaluates decays, so thick lossy layers stay
well conditioned.

Fields inside layer ``i`` (local coordinate ``s`` in ``[0, d_i]``)::

    E(s) = F_i exp(-g_i s) + B_i exp(-g_i (d_i - s))

with ``F_i`` the forward amplitude at the layer's front face and ``B_i``
the backward amplitude at its back face. The incident wave has unit
amplitude at z = 0 in the front medium.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from headradar.dielectrics import C0, EPS0, ETA0, LayerStack, complex_permittivity


def wave_impedance(eps_c) -> complex:
    """Intrinsic impedance eta0 / sqrt(eps_c) in ohms (principal branch)."""
    eps_c = np.asarray(eps_c, dtype=complex)
    if np.any(eps_c == 0):
        raise ValueError("permittivity must be non-zero")
    eta = ETA0 / np.sqrt(eps_c)
    return complex(eta) if eta.ndim == 0 else eta


def propagation_constant(eps_c, f):
    """Complex propagation constant alpha + j beta (1/m)."""
    f = np.asarray(f, dtype=float)
    if np.any(~(f > 0)):
        raise ValueError("frequency must be > 0")
    g = 1j * (2.0 * np.pi * f / C0) * np.sqrt(np.asarray(eps_c, dtype=complex))
    return complex(g) if g.ndim == 0 else g


@dataclass(frozen=True)
class PlaneWaveSolution:
    f: float
    gamma: complex
    t: complex
    eps: np.ndarray  # per medium: front, layers..., back
    eta: np.ndarray
    prop: np.ndarray  # propagation constant per medium
    thickness: np.ndarray
    forward: np.ndarray  # F_i at each layer's front face
    backward: np.ndarray  # B_i at each layer's back face

    @property
    def reflectance(self) -> float:
        return abs(self.gamma) ** 2

    @property
    def transmittance(self) -> float:
        return abs(self.t) ** 2 * (1.0 / self.eta[-1]).real / (1.0 / self.eta[0]).real

    @property
    def absorptance(self) -> float:
        """Absorbed fraction from the volume integral of the loss density."""
        omega = 2.0 * np.pi * self.f
        sigma_eff = -omega * EPS0 * self.eps[1:-1].imag
        power = _layer_field_energy(self.prop[1:-1], self.thickness, self.forward, self.backward)
        return float(np.sum(sigma_eff * power) / (1.0 / self.eta[0]).real)


def _int_exp(x, d):
    """Integral of exp(-x s) over [0, d], elementwise, safe for x -> 0."""
    x = np.asarray(x, dtype=complex)
    small = np.abs(x * d) < 1e-8
    safe = np.where(small, 1.0, x)
    val = -np.expm1(-safe * d) / safe
    return np.where(small, d * (1.0 - x * d / 2.0), val)


def _layer_field_energy(g, d, fwd, bwd):
    """Integral of |E|^2 across each layer in closed form."""
    alpha = g.real
    beta = g.imag
    forward = np.abs(fwd) ** 2 * _int_exp(2 * alpha, d).real
    backward = np.abs(bwd) ** 2 * _int_exp(2 * alpha, d).real
    cross = 2.0 * (fwd * np.conj(bwd) * np.exp(-np.conj(g) * d) * _int_exp(2j * beta, d)).real
    return forward + backward + cross


def solve_stack(stack: LayerStack, f: float) -> PlaneWaveSolution:
    """Exact normal-incidence solution of `stack` at frequency `f`."""
    if not f > 0:
        raise ValueError("frequency must be > 0")
    media = [stack.front] + [layer.tissue for layer in stack.layers] + [stack.back]
    eps = np.array([complex_permittivity(m.dispersion, f) for m in media])
    eta = ETA0 / np.sqrt(eps)
    prop = 1j * (2.0 * np.pi * f / C0) * np.sqrt(eps)
    d = stack.thicknesses
    n = len(d)

    z_back = np.empty(n, dtype=complex)
    z_front = np.empty(n, dtype=complex)
    z_load = eta[-1]
    for i in range(n - 1, -1, -1):
        eta_i = eta[i + 1]
        th = np.tanh(prop[i + 1] * d[i])
        z_back[i] = z_load
        z_load = eta_i * (z_load + eta_i * th) / (eta_i + z_load * th)
        z_front[i] = z_load
    gamma = (z_load - eta[0]) / (z_load + eta[0])

    fwd = np.empty(n, dtype=complex)
    bwd = np.empty(n, dtype=complex)
    e_face = 1.0 + gamma
    for i in range(n):
        eta_i = eta[i + 1]
        r_front = (z_front[i] - eta_i) / (z_front[i] + eta_i)
        r_back = (z_back[i] - eta_i) / (z_back[i] + eta_i)
        fwd[i] = e_face / (1.0 + r_front)
        decayed = fwd[i] * np.exp(-prop[i + 1] * d[i])
        bwd[i] = r_back * decayed
        e_face = decayed + bwd[i]
    return PlaneWaveSolution(float(f), complex(gamma), complex(e_face), eps, eta, prop, d, fwd, bwd)


def sweep(stack: LayerStack, freqs) -> tuple[np.ndarray, np.ndarray]:
    """Reflection and transmission coefficients over a frequency grid."""
    sols = [solve_stack(stack, f) for f in np.asarray(freqs, dtype=float)]
    return np.array([s.gamma for s in sols]), np.array([s.t for s in sols])


@dataclass(frozen=True)
class FieldProfile:
    z: np.ndarray
    e: np.ndarray
    layer: np.ndarray  # -1 front medium, len(stack) back medium
    forward: np.ndarray
    backward: np.ndarray
    f: float | None = None

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.e)

    @property
    def envelope(self) -> np.ndarray:
        """Upper envelope |forward| + |backward| of the standing-wave pattern."""
        return np.abs(self.forward) + np.abs(self.backward)

    def scaled(self, k: float) -> "FieldProfile":
        return FieldProfile(self.z, self.e * k, self.layer, self.forward * k, self.backward * k, self.f)


def depth_grid(depth: float, dz: float) -> np.ndarray:
    """Uniform samples over [0, depth] with spacing no larger than `dz`."""
    n = max(1, math.ceil(depth / dz - 1e-9))
    return np.linspace(0.0, depth, n + 1)


def field_profile(solution: PlaneWaveSolution, stack: LayerStack, dz: float, depth=None) -> FieldProfile:
    """Complex E-field sampled on a uniform depth grid.

    Parameters
    ----------
    solution : PlaneWaveSolution
        Output of ``solve_stack`` for this `stack`.
    stack : LayerStack
    dz : float
        Maximum sample spacing in metres; must resolve the thinnest layer
        with at least four samples.
    depth : float, optional
        Extent of the grid; defaults to the stack thickness. Samples past
        the back face lie in the back medium.
    """
    if not dz > 0:
        raise ValueError("dz must be > 0")
    if len(stack) and dz > stack.thicknesses.min() / 4.0:
        raise ValueError(f"dz={dz:g} m is coarser than a quarter of the thinnest layer")
    total = stack.total_thickness
    z = depth_grid(total if depth is None else depth, dz)
    idx = stack.layer_index(z)
    edges = stack.boundaries
    fwd = np.zeros(z.shape, dtype=complex)
    bwd = np.zeros(z.shape, dtype=complex)

    front = idx < 0
    k_front = solution.prop[0]
    fwd[front] = np.exp(-k_front * z[front])
    bwd[front] = solution.gamma * np.exp(k_front * z[front])
    for i in range(len(stack)):
        m = idx == i
        s = z[m] - edges[i]
        g = solution.prop[i + 1]
        fwd[m] = solution.forward[i] * np.exp(-g * s)
        bwd[m] = solution.backward[i] * np.exp(-g * (solution.thickness[i] - s))
    behind = idx >= len(stack)
    fwd[behind] = solution.t * np.exp(-solution.prop[-1] * (z[behind] - total))
    return FieldProfile(z, fwd + bwd, idx, fwd, bwd, solution.f)


def return_loss(gamma) -> float:
    """Return loss -20 log10 |gamma| in dB (inf for a perfect match)."""
    mag = abs(gamma)
    if mag > 1.0:
        raise ValueError(f"|gamma| = {mag} exceeds 1")
    if mag == 0:
        return math.inf
    return -20.0 * math.log10(mag)


def vswr(gamma) -> float:
    """Voltage standing-wave ratio (1 + |gamma|) / (1 - |gamma|)."""
    mag = abs(gamma)
    if mag >= 1.0:
        raise ValueError(f"|gamma| = {mag}: VSWR is infinite")
    return (1.0 + mag) / (1.0 - mag)

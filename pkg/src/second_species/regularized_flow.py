"""Flows of the planar three-body Hamiltonian in several charts.

Heliocentric chart
    positions ``q1, q2`` of the small bodies relative to the large one and
    scaled momenta ``p1, p2``; the Hamiltonian is
    ``|p1|^2/2a1 + |p2|^2/2a2 - a1/|q1| - a2/|q2| + mu(|p1+p2|^2/2 - a/|q1-q2|)``
    with ``a = a1*a2``.
Jacobi chart
    centre of mass ``x`` of the pair, total momentum ``y``, relative position
    ``u = q2 - q1`` and scaled relative momentum ``v``.
Regularised chart
    ``x, y`` together with Levi-Civita coordinates ``u = xi^2``,
    ``v = eta / (2 conj(xi))``.  At fixed energy ``E`` the flow of the
    regularised Hamiltonian on its level ``mu*a`` is a time change of the
    physical flow with ``dt/dsigma = |xi|^2``; it is smooth through ``u = 0``.

The integrator is an explicit embedded Runge-Kutta pair of order 8(5,3)
(Dormand-Prince coefficients) compiled with numba.  The same kernels accept
complex input, which is used for complex-step derivatives of the discrete
flow maps.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop
from scipy.optimize import brentq

from .collision_action import MassParams

_NS = _dop.N_STAGES
_A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
_B = np.ascontiguousarray(_dop.B)
_C = np.ascontiguousarray(_dop.C[:_NS])
_E3 = np.ascontiguousarray(_dop.E3)
_E5 = np.ascontiguousarray(_dop.E5)

CARTESIAN = 0
REGULARIZED = 1
STATE_DIM = 9


class ChartError(ValueError):
    """State outside the domain of the requested chart."""


class IntegrationError(RuntimeError):
    """Step size underflow or step budget exhausted."""


# --- state types -----------------------------------------------------------------

def _vec(p) -> np.ndarray:
    a = np.asarray(p, dtype=float).reshape(2)
    return a


def _c(p) -> complex:
    return complex(p[0], p[1])


def _p(z: complex) -> np.ndarray:
    return np.array([z.real, z.imag])


@dataclass(frozen=True)
class PhaseState:
    q1: np.ndarray
    q2: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    time: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.q1, self.q2, self.p1, self.p2, [self.time]])

    @classmethod
    def from_array(cls, z) -> "PhaseState":
        z = np.asarray(z, dtype=float)
        return cls(z[0:2].copy(), z[2:4].copy(), z[4:6].copy(), z[6:8].copy(), float(z[8]))


@dataclass(frozen=True)
class JacobiState:
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    time: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.y, self.u, self.v, [self.time]])


@dataclass(frozen=True)
class RegularizedState:
    x: np.ndarray
    y: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    fictitious_time: float = 0.0
    physical_time: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.y, self.xi, self.eta, [self.physical_time]])

    @classmethod
    def from_array(cls, z, fictitious_time: float = 0.0) -> "RegularizedState":
        z = np.asarray(z, dtype=float)
        return cls(z[0:2].copy(), z[2:4].copy(), z[4:6].copy(), z[6:8].copy(),
                   fictitious_time, float(z[8]))


# --- coordinate changes ------------------------------------------------------------

def to_jacobi(state: PhaseState, masses: MassParams) -> JacobiState:
    a1, a2 = masses.alpha1, masses.alpha2
    q1, q2, p1, p2 = map(_vec, (state.q1, state.q2, state.p1, state.p2))
    return JacobiState(
        x=a1 * q1 + a2 * q2, y=p1 + p2, u=q2 - q1, v=a1 * p2 - a2 * p1, time=state.time
    )


def from_jacobi(state: JacobiState, masses: MassParams) -> PhaseState:
    a1, a2 = masses.alpha1, masses.alpha2
    x, y, u, v = map(_vec, (state.x, state.y, state.u, state.v))
    return PhaseState(
        q1=x - a2 * u, q2=x + a1 * u, p1=a1 * y - v, p2=a2 * y + v, time=state.time
    )


def levi_civita_map(reg: RegularizedState, masses: MassParams | None = None) -> JacobiState:
    """Project a regularised state to Jacobi variables: ``u = xi^2``, ``v = eta/(2 conj xi)``."""
    xi, eta = _c(reg.xi), _c(reg.eta)
    if xi == 0:
        raise ChartError("relative momentum is undefined at xi = 0")
    return JacobiState(
        x=_vec(reg.x), y=_vec(reg.y), u=_p(xi * xi), v=_p(eta / (2.0 * xi.conjugate())),
        time=reg.physical_time,
    )


def levi_civita_lift(state: JacobiState, reference_xi=None, fictitious_time: float = 0.0
                     ) -> RegularizedState:
    """Inverse of :func:`levi_civita_map`; the sign of ``xi`` follows ``reference_xi``."""
    u, v = _c(state.u), _c(state.v)
    xi = complex(np.sqrt(u))
    if reference_xi is not None and (xi.conjugate() * _c(reference_xi)).real < 0.0:
        xi = -xi
    eta = 2.0 * xi.conjugate() * v
    return RegularizedState(_vec(state.x), _vec(state.y), _p(xi), _p(eta), fictitious_time,
                            state.time)


# --- first integrals ------------------------------------------------------------------

def hamiltonian_H(state, masses: MassParams) -> float:
    """Energy in the heliocentric or Jacobi chart."""
    a1, a2, mu, al = masses.alpha1, masses.alpha2, masses.mu, masses.alpha
    if isinstance(state, PhaseState):
        q1, q2, p1, p2 = map(_vec, (state.q1, state.q2, state.p1, state.p2))
        r1, r2, r12 = np.linalg.norm(q1), np.linalg.norm(q2), np.linalg.norm(q1 - q2)
        if r1 == 0.0 or r2 == 0.0:
            raise ChartError("collision with the central body")
        if mu > 0.0 and r12 == 0.0:
            raise ChartError("collision of the small bodies")
        value = p1 @ p1 / (2 * a1) + p2 @ p2 / (2 * a2) - a1 / r1 - a2 / r2
        if mu > 0.0:
            py = p1 + p2
            value += mu * (py @ py / 2.0 - al / r12)
        return float(value)
    if isinstance(state, JacobiState):
        x, y, u, v = map(_vec, (state.x, state.y, state.u, state.v))
        r1, r2, ru = np.linalg.norm(x - a2 * u), np.linalg.norm(x + a1 * u), np.linalg.norm(u)
        if r1 == 0.0 or r2 == 0.0:
            raise ChartError("collision with the central body")
        if mu > 0.0 and ru == 0.0:
            raise ChartError("collision of the small bodies")
        value = (1 + mu) * (y @ y) / 2 + v @ v / (2 * al) - a1 / r1 - a2 / r2
        if mu > 0.0:
            value -= mu * al / ru
        return float(value)
    raise TypeError(f"unsupported state type {type(state).__name__}")


def regularized_hamiltonian(reg: RegularizedState, masses: MassParams, E: float) -> float:
    """Regularised Hamiltonian, smooth through ``xi = 0``."""
    a1, a2, mu, al = masses.alpha1, masses.alpha2, masses.mu, masses.alpha
    x, y, xi, eta = _c(reg.x), _c(reg.y), _c(reg.xi), _c(reg.eta)
    u = xi * xi
    r1, r2 = abs(x - a2 * u), abs(x + a1 * u)
    if r1 == 0.0 or r2 == 0.0:
        raise ChartError("collision with the central body")
    bracket = E + a1 / r1 + a2 / r2 - (1 + mu) * abs(y) ** 2 / 2
    return abs(eta) ** 2 / (8 * al) - abs(xi) ** 2 * bracket


def angular_momentum(state, masses: MassParams | None = None) -> float:
    """Total angular momentum in any chart."""
    def cr(a, b):
        a, b = _vec(a), _vec(b)
        return float(a[0] * b[1] - a[1] * b[0])

    if isinstance(state, PhaseState):
        return cr(state.q1, state.p1) + cr(state.q2, state.p2)
    if isinstance(state, JacobiState):
        return cr(state.x, state.y) + cr(state.u, state.v)
    if isinstance(state, RegularizedState):
        return cr(state.x, state.y) + 0.5 * cr(state.xi, state.eta)
    raise TypeError(f"unsupported state type {type(state).__name__}")


def phase_from_regularized(reg: RegularizedState, masses: MassParams) -> PhaseState:
    return from_jacobi(levi_civita_map(reg, masses), masses)


def params_array(masses: MassParams, E: float = 0.0) -> np.ndarray:
    return np.array([masses.alpha1, masses.alpha2, masses.mu, E])


# --- numba kernels ------------------------------------------------------------------------

@numba.njit(cache=True)
def _field(kind, z, p, out):
    a1 = p[0]
    a2 = p[1]
    mu = p[2]
    al = a1 * a2
    if kind == 0:
        q1x, q1y, q2x, q2y = z[0], z[1], z[2], z[3]
        p1x, p1y, p2x, p2y = z[4], z[5], z[6], z[7]
        r1 = (q1x * q1x + q1y * q1y) ** 1.5
        r2 = (q2x * q2x + q2y * q2y) ** 1.5
        dx = q1x - q2x
        dy = q1y - q2y
        r12 = (dx * dx + dy * dy) ** 1.5
        sx = mu * (p1x + p2x)
        sy = mu * (p1y + p2y)
        out[0] = p1x / a1 + sx
        out[1] = p1y / a1 + sy
        out[2] = p2x / a2 + sx
        out[3] = p2y / a2 + sy
        cx = mu * al * dx / r12
        cy = mu * al * dy / r12
        out[4] = -a1 * q1x / r1 - cx
        out[5] = -a1 * q1y / r1 - cy
        out[6] = -a2 * q2x / r2 + cx
        out[7] = -a2 * q2y / r2 + cy
        out[8] = 1.0 + 0.0 * z[8]
    else:
        E = p[3]
        xx, xy, yx, yy = z[0], z[1], z[2], z[3]
        sr, si, er, ei = z[4], z[5], z[6], z[7]
        ur = sr * sr - si * si
        ui = 2.0 * sr * si
        n2 = sr * sr + si * si
        r1x = xx - a2 * ur
        r1y = xy - a2 * ui
        r2x = xx + a1 * ur
        r2y = xy + a1 * ui
        d1 = (r1x * r1x + r1y * r1y) ** 0.5
        d2 = (r2x * r2x + r2y * r2y) ** 0.5
        c1 = 1.0 / (d1 * d1 * d1)
        c2 = 1.0 / (d2 * d2 * d2)
        P = E + a1 / d1 + a2 / d2 - 0.5 * (1.0 + mu) * (yx * yx + yy * yy)
        out[0] = n2 * (1.0 + mu) * yx
        out[1] = n2 * (1.0 + mu) * yy
        out[2] = -n2 * (a1 * r1x * c1 + a2 * r2x * c2)
        out[3] = -n2 * (a1 * r1y * c1 + a2 * r2y * c2)
        out[4] = er / (4.0 * al)
        out[5] = ei / (4.0 * al)
        # w = r1/|r1|^3 - r2/|r2|^3 ; dP/dxi = 2 al * w * conj(xi)
        wx = r1x * c1 - r2x * c2
        wy = r1y * c1 - r2y * c2
        gx = 2.0 * al * (wx * sr + wy * si)
        gy = 2.0 * al * (wy * sr - wx * si)
        out[6] = 2.0 * sr * P + n2 * gx
        out[7] = 2.0 * si * P + n2 * gy
        out[8] = n2


@numba.njit(cache=True)
def _rk_step(kind, z, h, p, K, znew):
    """One Dormand-Prince 8 step; ``K[0]`` must hold f(z). Fills ``K[12]`` with f(znew)."""
    n = z.shape[0]
    tmp = np.empty_like(z)
    for s in range(1, 12):
        for i in range(n):
            acc = 0.0 * z[i]
            for j in range(s):
                acc += _A[s, j] * K[j, i]
            tmp[i] = z[i] + h * acc
        _field(kind, tmp, p, K[s])
    for i in range(n):
        acc = 0.0 * z[i]
        for j in range(12):
            acc += _B[j] * K[j, i]
        znew[i] = z[i] + h * acc
    _field(kind, znew, p, K[12])


@numba.njit(cache=True)
def _err_norm(z, znew, h, K, rtol, atol):
    n = z.shape[0]
    e5 = 0.0
    e3 = 0.0
    for i in range(n):
        sc = atol + max(abs(z[i]), abs(znew[i])) * rtol
        a5 = 0.0
        a3 = 0.0
        for j in range(13):
            a5 += _E5[j] * K[j, i]
            a3 += _E3[j] * K[j, i]
        e5 += (a5 / sc) ** 2
        e3 += (a3 / sc) ** 2
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    return abs(h) * e5 / math.sqrt((e5 + 0.01 * e3) * n)


@numba.njit(cache=True)
def _adaptive_mesh(kind, z0, span, p, rtol, atol, h0, max_steps):
    """Adaptive integration over ``span``; returns (step sizes, final state, status)."""
    n = z0.shape[0]
    K = np.empty((13, n))
    z = z0.copy()
    znew = np.empty(n)
    _field(kind, z, p, K[0])
    hs = np.empty(max_steps)
    direction = 1.0 if span >= 0.0 else -1.0
    remaining = abs(span)
    h = min(abs(h0), remaining)
    count = 0
    status = 0
    while remaining > 0.0:
        if count >= max_steps:
            status = 1
            break
        last = False
        if h >= remaining:
            h = remaining
            last = True
        _rk_step(kind, z, direction * h, p, K, znew)
        err = _err_norm(z, znew, direction * h, K, rtol, atol)
        if err < 1.0 and math.isfinite(err):
            hs[count] = direction * h
            count += 1
            z[:] = znew
            K[0, :] = K[12, :]
            remaining = 0.0 if last else remaining - h
            fac = 10.0 if err == 0.0 else min(10.0, 0.9 * err ** (-1.0 / 8.0))
            h = h * fac
        else:
            fac = 0.2 if not math.isfinite(err) else max(0.2, 0.9 * err ** (-1.0 / 8.0))
            h = h * fac
            if h < 1e-14 * max(1.0, abs(span)):
                status = 2
                break
    return hs[:count], z, status


@numba.njit(cache=True)
def _integrate_mesh(kind, z0, scale, w, p):
    """Fixed-mesh integration with steps ``scale * w``; real or complex."""
    n = z0.shape[0]
    K = np.empty((13, n), dtype=z0.dtype)
    z = z0.copy()
    znew = np.empty_like(z0)
    _field(kind, z, p, K[0])
    for k in range(w.shape[0]):
        _rk_step(kind, z, scale * w[k], p, K, znew)
        z[:] = znew
        K[0, :] = K[12, :]
    return z


@numba.njit(cache=True)
def _integrate_mesh_record(kind, z0, scale, w, p):
    n = z0.shape[0]
    out = np.empty((w.shape[0] + 1, n))
    K = np.empty((13, n))
    z = z0.copy()
    znew = np.empty(n)
    out[0] = z
    _field(kind, z, p, K[0])
    for k in range(w.shape[0]):
        _rk_step(kind, z, scale * w[k], p, K, znew)
        z[:] = znew
        K[0, :] = K[12, :]
        out[k + 1] = z
    return out


@numba.njit(cache=True)
def _mesh_jacobian(kind, z0, scale, w, p, hstep):
    """Complex-step Jacobian of the fixed-mesh map with respect to (z0[:8], scale)."""
    n = z0.shape[0]
    J = np.empty((n, 9))
    for col in range(9):
        zc = np.empty(n, dtype=np.complex128)
        for i in range(n):
            zc[i] = z0[i] + 0.0j
        sc = scale + 0.0j
        if col < 8:
            zc[col] += 1j * hstep
        else:
            sc += 1j * hstep
        ze = _integrate_mesh(kind, zc, sc, w, p)
        for i in range(n):
            J[i, col] = ze[i].imag / hstep
    return J


def vector_field(kind: int, z, masses: MassParams, E: float = 0.0) -> np.ndarray:
    out = np.empty(STATE_DIM)
    _field(kind, np.asarray(z, dtype=float), params_array(masses, E), out)
    return out


def single_step(kind: int, z, h: float, masses: MassParams, E: float = 0.0) -> np.ndarray:
    p = params_array(masses, E)
    z = np.asarray(z, dtype=float)
    K = np.empty((13, STATE_DIM))
    _field(kind, z, p, K[0])
    znew = np.empty(STATE_DIM)
    _rk_step(kind, z, h, p, K, znew)
    return znew


# --- fixed-mesh flow maps (used by the shooting solver) ----------------------------------

@dataclass(frozen=True)
class FlowLeg:
    """A flow map over a frozen mesh: ``scale * weights`` are the step sizes."""

    kind: int
    weights: np.ndarray

    @classmethod
    def adaptive(cls, kind, z0, span, masses, E, rtol=1e-13, atol=1e-15, max_steps=200000):
        p = params_array(masses, E)
        hs, _, status = _adaptive_mesh(kind, np.asarray(z0, float), float(span), p, rtol, atol,
                                       1e-3 * max(abs(span), 1e-12), max_steps)
        if status != 0:
            raise IntegrationError("adaptive mesh construction failed")
        return cls(kind, np.ascontiguousarray(hs / span))

    def __call__(self, z0, scale, masses, E):
        return _integrate_mesh(self.kind, np.asarray(z0, float), float(scale), self.weights,
                               params_array(masses, E))

    def with_jacobian(self, z0, scale, masses, E, hstep=1e-20):
        p = params_array(masses, E)
        z0 = np.asarray(z0, float)
        ze = _integrate_mesh(self.kind, z0, float(scale), self.weights, p)
        J = _mesh_jacobian(self.kind, z0, float(scale), self.weights, p, hstep)
        return ze, J

    def record(self, z0, scale, masses, E):
        return _integrate_mesh_record(self.kind, np.asarray(z0, float), float(scale),
                                      self.weights, params_array(masses, E))


# --- adaptive integration with chart switching --------------------------------------------

@dataclass(frozen=True)
class IntegrationOptions:
    rtol: float = 1e-13
    atol: float = 1e-15
    chart: str = "auto"  # "auto", "cartesian" or "regularized"
    rho_switch: float | None = None
    hysteresis: float = 2.0
    energy: float | None = None
    energy_tol: float = 1e-9
    max_steps: int = 2_000_000
    sigma_rho: tuple = ()
    closest_approach: bool = True
    sections: tuple = ()


@dataclass(frozen=True)
class Event:
    name: str
    time: float
    state: PhaseState


@dataclass
class Trajectory:
    """Accepted integration steps converted to the heliocentric chart."""

    masses: MassParams
    times: np.ndarray
    states: np.ndarray  # (N, 8): q1, q2, p1, p2
    charts: np.ndarray
    events: list = field(default_factory=list)
    switch_log: list = field(default_factory=list)
    options: IntegrationOptions = field(default_factory=IntegrationOptions)
    final_regularized: RegularizedState | None = None

    def state(self, i: int) -> PhaseState:
        return PhaseState.from_array(np.append(self.states[i], self.times[i]))

    @property
    def final(self) -> PhaseState:
        return self.state(-1)

    def energies(self) -> np.ndarray:
        return np.array([hamiltonian_H(self.state(i), self.masses) for i in range(len(self.times))])

    def angular_momenta(self) -> np.ndarray:
        s = self.states
        return (s[:, 0] * s[:, 5] - s[:, 1] * s[:, 4]) + (s[:, 2] * s[:, 7] - s[:, 3] * s[:, 6])

    def delta_distance(self) -> np.ndarray:
        return np.hypot(self.states[:, 2] - self.states[:, 0], self.states[:, 3] - self.states[:, 1])

    def write_csv(self, path) -> None:
        H, G, d = self.energies(), self.angular_momenta(), self.delta_distance()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "q1x", "q1y", "q2x", "q2y", "p1x", "p1y", "p2x", "p2y", "H", "G",
                        "dist_delta"])
            for i in range(len(self.times)):
                w.writerow([repr(float(v)) for v in
                            [self.times[i], *self.states[i], H[i], G[i], d[i]]])

    def metadata(self) -> dict:
        o = self.options
        return {
            "masses": {"mu": self.masses.mu, "alpha1": self.masses.alpha1,
                       "alpha2": self.masses.alpha2},
            "tolerances": {"rtol": o.rtol, "atol": o.atol, "energy_tol": o.energy_tol},
            "chart_policy": o.chart,
            "rho_switch": o.rho_switch,
            "hysteresis": o.hysteresis,
            "chart_switches": self.switch_log,
            "events": [{"name": e.name, "t": e.time} for e in self.events],
        }

    def write_sidecar(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)


def _phase_from_reg_array(z, masses) -> np.ndarray:
    a1, a2 = masses.alpha1, masses.alpha2
    x = complex(z[0], z[1])
    y = complex(z[2], z[3])
    xi = complex(z[4], z[5])
    eta = complex(z[6], z[7])
    u = xi * xi
    v = eta / (2.0 * xi.conjugate()) if xi != 0 else complex(math.nan, math.nan)
    q1, q2 = x - a2 * u, x + a1 * u
    p1, p2 = a1 * y - v, a2 * y + v
    return np.array([q1.real, q1.imag, q2.real, q2.imag, p1.real, p1.imag, p2.real, p2.imag])


def _reg_from_phase_array(z, masses, ref_xi):
    st = to_jacobi(PhaseState.from_array(z), masses)
    reg = levi_civita_lift(st, reference_xi=ref_xi)
    return np.concatenate([reg.x, reg.y, reg.xi, reg.eta, [z[8]]])


def _separation(kind, z):
    if kind == CARTESIAN:
        return math.hypot(z[2] - z[0], z[3] - z[1])
    return z[4] * z[4] + z[5] * z[5]


def integrate(initial, t_span, masses: MassParams, options: IntegrationOptions | None = None
              ) -> Trajectory:
    """Integrate the three-body flow over a physical-time span.

    ``initial`` may be a :class:`PhaseState`, :class:`JacobiState` or
    :class:`RegularizedState`.  With ``chart="auto"`` the regularised chart
    is entered when ``|u|`` drops below ``rho_switch`` and left when it
    exceeds ``hysteresis * rho_switch``.  Events: crossings of ``|u| = rho``
    for each ``rho`` in ``sigma_rho``, minima of ``|u|`` and zeros of the
    user section functions ``g(PhaseState)``.
    """
    opts = options or IntegrationOptions()
    t0, t1 = map(float, t_span)
    if t1 < t0:
        raise ValueError("t_span must be increasing")
    if isinstance(initial, RegularizedState):
        reg_z = initial.as_array()
        z = np.append(_phase_from_reg_array(reg_z, masses), initial.physical_time)
        E = opts.energy if opts.energy is not None else hamiltonian_H(
            PhaseState.from_array(z), masses)
    else:
        if isinstance(initial, JacobiState):
            initial = from_jacobi(initial, masses)
        z = initial.as_array()
        reg_z = None
        E = opts.energy if opts.energy is not None else hamiltonian_H(initial, masses)
    z[8] = t0
    rho_s = opts.rho_switch
    if rho_s is None:
        a1, a2 = masses.alpha1, masses.alpha2
        rho_s = 1e-2 * math.hypot(a1 * z[0] + a2 * z[2], a1 * z[1] + a2 * z[3])
    p = params_array(masses, E)

    def chart_for(sep_u):
        if opts.chart == "cartesian":
            return CARTESIAN
        if opts.chart == "regularized":
            return REGULARIZED
        return REGULARIZED if sep_u <= rho_s else CARTESIAN

    sep0 = math.hypot(z[2] - z[0], z[3] - z[1])
    kind = chart_for(sep0)
    ref_xi = None if reg_z is None else reg_z[4:6]
    if kind == REGULARIZED:
        cur = reg_z.copy() if reg_z is not None else _reg_from_phase_array(z, masses, ref_xi)
        cur[8] = t0
    else:
        cur = z.copy()

    times, states, charts, events, log = [t0], [z[:8].copy()], [kind], [], []
    K = np.empty((13, STATE_DIM))
    znew = np.empty(STATE_DIM)
    _field(kind, cur, p, K[0])
    h = 1e-3
    steps = 0
    sections = list(opts.sections)
    section_names = [getattr(g, "__name__", f"section{i}") for i, g in enumerate(sections)]

    def phase_of(kind_, zz):
        if kind_ == CARTESIAN:
            return zz[:8].copy()
        return _phase_from_reg_array(zz, masses)

    def event_values(kind_, zz):
        ph = PhaseState.from_array(np.append(phase_of(kind_, zz), zz[8]))
        u = ph.q2 - ph.q1
        vals = [float(np.hypot(*u) - r) for r in opts.sigma_rho]
        if opts.closest_approach:
            dq = vector_field(CARTESIAN, ph.as_array(), masses)
            vals.append(float(u @ (dq[2:4] - dq[0:2])))
        vals += [float(g(ph)) for g in sections]
        return vals

    names = [f"sigma_rho[{r:g}]" for r in opts.sigma_rho]
    if opts.closest_approach:
        names.append("closest_approach")
    names += section_names
    ev_prev = event_values(kind, cur)

    while True:
        if steps >= opts.max_steps:
            raise IntegrationError("step budget exhausted")
        t_now = cur[8]
        if t_now >= t1:
            break
        if kind == CARTESIAN:
            hh = min(h, t1 - t_now)
        else:
            hh = h
        _rk_step(kind, cur, hh, p, K, znew)
        err = _err_norm(cur, znew, hh, K, opts.rtol, opts.atol)
        if not (err < 1.0 and math.isfinite(err)):
            h = hh * (0.2 if not math.isfinite(err) else max(0.2, 0.9 * err ** (-1 / 8)))
            if h < 1e-15:
                raise IntegrationError("step size underflow")
            continue
        steps += 1
        start = cur.copy()
        k_start = K[0].copy()
        # clip the last regularised step at t1
        if kind == REGULARIZED and znew[8] > t1:
            def tdiff(theta):
                return _one_step(kind, start, theta * hh, p, k_start)[8] - t1
            theta = brentq(tdiff, 0.0, 1.0, xtol=1e-15, rtol=1e-15)
            znew = _one_step(kind, start, theta * hh, p, k_start)
            _field(kind, znew, p, K[12])
            hh = theta * hh
        ev_new = event_values(kind, znew)
        for i, (a, b) in enumerate(zip(ev_prev, ev_new)):
            if a == 0.0 or a * b >= 0.0:
                continue
            if names[i] == "closest_approach" and not a < 0.0 < b:
                continue

            def gfun(theta, i=i):
                return event_values(kind, _one_step(kind, start, theta * hh, p, k_start))[i]

            theta = brentq(gfun, 0.0, 1.0, xtol=1e-14, rtol=1e-15)
            ze = _one_step(kind, start, theta * hh, p, k_start)
            events.append(Event(names[i], float(ze[8]),
                                PhaseState.from_array(np.append(phase_of(kind, ze), ze[8]))))
        ev_prev = ev_new
        cur = znew.copy()
        K[0] = K[12]
        fac = 10.0 if err == 0.0 else min(10.0, 0.9 * err ** (-1 / 8))
        h = hh * fac
        times.append(float(cur[8]))
        states.append(phase_of(kind, cur))
        charts.append(kind)
        if kind == REGULARIZED:
            ref_xi = cur[4:6].copy()
        # chart policy
        if opts.chart == "auto":
            sep = math.hypot(states[-1][2] - states[-1][0], states[-1][3] - states[-1][1])
            if kind == CARTESIAN and sep <= rho_s:
                cur = _reg_from_phase_array(np.append(states[-1], cur[8]), masses, ref_xi)
                kind = REGULARIZED
                log.append({"t": float(cur[8]), "to": "regularized", "separation": sep})
                h = 1e-3 * math.sqrt(sep)
            elif kind == REGULARIZED and sep > opts.hysteresis * rho_s:
                cur = np.append(states[-1], cur[8])
                kind = CARTESIAN
                log.append({"t": float(cur[8]), "to": "cartesian", "separation": sep})
                h = 1e-3
            _field(kind, cur, p, K[0])
    final_reg = None
    if kind == REGULARIZED:
        final_reg = RegularizedState.from_array(cur)
    order = np.argsort([e.time for e in events], kind="stable")
    return Trajectory(masses, np.array(times), np.array(states), np.array(charts),
                      [events[i] for i in order], log, opts, final_reg)


def _one_step(kind, z, h, p, k0):
    K = np.empty((13, STATE_DIM))
    K[0] = k0
    out = np.empty(STATE_DIM)
    _rk_step(kind, z, h, p, K, out)
    return out


def integrate_regularized(initial: RegularizedState, sigma_span: float, masses: MassParams,
                          E: float, rtol: float = 1e-13, atol: float = 1e-15) -> RegularizedState:
    """Flow of the regularised Hamiltonian for a fictitious-time span."""
    leg = FlowLeg.adaptive(REGULARIZED, initial.as_array(), sigma_span, masses, E, rtol, atol)
    z = leg(initial.as_array(), sigma_span, masses, E)
    return RegularizedState.from_array(z, initial.fictitious_time + sigma_span)


def integrate_cartesian(initial: PhaseState, t_span: float, masses: MassParams,
                        rtol: float = 1e-13, atol: float = 1e-15) -> PhaseState:
    """Flow of the heliocentric equations for a physical-time span, no chart switching."""
    z0 = initial.as_array()
    leg = FlowLeg.adaptive(CARTESIAN, z0, t_span, masses, 0.0, rtol, atol)
    return PhaseState.from_array(leg(z0, t_span, masses, 0.0))


# --- numerical Jacobians of the coordinate changes --------------------------------------

OMEGA8 = np.block([[np.zeros((4, 4)), np.eye(4)], [-np.eye(4), np.zeros((4, 4))]])


def _omega(n: int) -> np.ndarray:
    return np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])


def numerical_jacobian(fun: Callable, z0, h: float = 1e-6) -> np.ndarray:
    z0 = np.asarray(z0, dtype=float)
    cols = []
    for i in range(len(z0)):
        dz = np.zeros_like(z0)
        dz[i] = h * max(1.0, abs(z0[i]))
        cols.append((np.asarray(fun(z0 + dz)) - np.asarray(fun(z0 - dz))) / (2 * dz[i]))
    return np.column_stack(cols)


def symplectic_defect(J: np.ndarray) -> float:
    n = J.shape[0] // 2
    W = _omega(n)
    return float(np.abs(J.T @ W @ J - W).max())


def jacobi_map_array(masses: MassParams):
    """``(q, p) -> (x, u, y, v)`` in canonical ordering (positions first)."""
    def f(z):
        st = to_jacobi(PhaseState(z[0:2], z[2:4], z[4:6], z[6:8]), masses)
        return np.concatenate([st.x, st.u, st.y, st.v])
    return f


def levi_civita_block_array(z):
    """``(xi, eta) -> (u, v)`` in canonical ordering."""
    xi, eta = complex(z[0], z[1]), complex(z[2], z[3])
    u = xi * xi
    v = eta / (2 * xi.conjugate())
    return np.array([u.real, u.imag, v.real, v.imag])

"""Collision action functions: two Kepler arcs glued at collisions.

A collision segment consists of one Kepler arc for each small body.  Both
arcs share their endpoints (the bodies collide at ``x_minus`` and again at
``x_plus``) and their transfer time.  The segment action is the
mass-weighted sum of the fixed-time Hamilton actions of the two arcs, and it
is a generating function: its partial derivatives return the total momenta
at the two collisions and minus the total energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .kepler_lambert import (
    KeplerState,
    LambertArc,
    NoSolutionError,
    monotone_branches,
    propagate_kepler,
    solve_fixed_time,
)


@dataclass(frozen=True)
class MassParams:
    """Mass ratios of the two small bodies and the coupling strength ``mu``."""

    mu: float
    alpha1: float

    def __post_init__(self):
        if not 0.0 < self.alpha1 < 1.0:
            raise ValueError(f"alpha1 must lie in (0, 1), got {self.alpha1!r}")
        if not self.mu >= 0.0:
            raise ValueError(f"mu must be non-negative, got {self.mu!r}")

    @property
    def alpha2(self) -> float:
        return 1.0 - self.alpha1

    @property
    def alpha(self) -> float:
        return self.alpha1 * self.alpha2

    def with_mu(self, mu: float) -> "MassParams":
        return MassParams(mu=mu, alpha1=self.alpha1)


@dataclass(frozen=True)
class CollisionSegment:
    """Pair of Kepler arcs with common endpoints and common transfer time."""

    k: tuple[int, int]
    tof: float
    x_minus: np.ndarray
    x_plus: np.ndarray
    arcs: tuple[LambertArc, LambertArc]
    action_S: float
    energy: float
    masses: MassParams = field(repr=False)

    @property
    def y_minus(self) -> np.ndarray:
        a1, a2 = self.masses.alpha1, self.masses.alpha2
        return a1 * self.arcs[0].y_minus + a2 * self.arcs[1].y_minus

    @property
    def y_plus(self) -> np.ndarray:
        a1, a2 = self.masses.alpha1, self.masses.alpha2
        return a1 * self.arcs[0].y_plus + a2 * self.arcs[1].y_plus

    @property
    def arc_energies(self) -> tuple[float, float]:
        return (self.arcs[0].energy, self.arcs[1].energy)

    @property
    def d2S_dtau2(self) -> float:
        a1, a2 = self.masses.alpha1, self.masses.alpha2
        return -a1 / self.arcs[0].dtof_dE - a2 / self.arcs[1].dtof_dE


def segment_action(k, tau, x_minus, x_plus, masses: MassParams, energy_guesses=None) -> CollisionSegment:
    """Build the collision segment with rotation vector ``k`` and duration ``tau``.

    ``energy_guesses`` selects, per body, the monotone piece of the
    fixed-time problem to use; without it the default piece is taken.
    """
    k1, k2 = int(k[0]), int(k[1])
    g1, g2 = (None, None) if energy_guesses is None else energy_guesses
    arc1 = solve_fixed_time(k1, tau, x_minus, x_plus, energy_guess=g1)
    arc2 = solve_fixed_time(k2, tau, x_minus, x_plus, energy_guess=g2)
    a1, a2 = masses.alpha1, masses.alpha2
    return CollisionSegment(
        k=(k1, k2),
        tof=float(tau),
        x_minus=np.asarray(x_minus, dtype=float),
        x_plus=np.asarray(x_plus, dtype=float),
        arcs=(arc1, arc2),
        action_S=a1 * arc1.action_F + a2 * arc2.action_F,
        energy=a1 * arc1.energy + a2 * arc2.energy,
        masses=masses,
    )


def segment_gradient(seg: CollisionSegment) -> tuple[np.ndarray, np.ndarray, float]:
    """Return ``(y_minus, y_plus, E)``.

    ``y_plus = dS/dx_plus``, ``y_minus = -dS/dx_minus`` and ``E = -dS/dtau``,
    the total energy ``alpha1*E1 + alpha2*E2`` of the two arcs.
    """
    return seg.y_minus, seg.y_plus, seg.energy


def relative_velocity_jump_data(seg_in: CollisionSegment, seg_out: CollisionSegment):
    """Scaled relative velocities ``alpha*(dq2/dt - dq1/dt)`` before and after a collision."""
    if not np.allclose(seg_in.x_plus, seg_out.x_minus, rtol=0.0, atol=1e-12):
        raise ValueError("segments do not share a collision point")
    alpha = seg_in.masses.alpha
    v_minus = alpha * (seg_in.arcs[1].y_plus - seg_in.arcs[0].y_plus)
    v_plus = alpha * (seg_out.arcs[1].y_minus - seg_out.arcs[0].y_minus)
    return v_minus, v_plus


# --- energy-fixed action -----------------------------------------------------

def _tof_window(k, x_minus, x_plus, energy_guesses=None):
    """Common admissible transfer-time interval of both arcs."""
    from .kepler_lambert import attainable_interval

    lo, hi = 0.0, math.inf
    for i, n in enumerate(k):
        pieces = monotone_branches(n, x_minus, x_plus)
        piece = pieces[-1]
        if energy_guesses is not None:
            g = energy_guesses[i]
            piece = next((p for p in pieces if p[0] <= g <= p[1]), piece)
        elif n != 0 and len(pieces) > 1:
            piece = pieces[-1]
        a, b = attainable_interval(n, x_minus, x_plus, piece)
        lo, hi = max(lo, a), min(hi, b)
    return lo, hi


def energy_fixed_segment(k, E, x_minus, x_plus, masses: MassParams, tau_guess=None,
                         energy_guesses=None) -> CollisionSegment:
    """Segment whose total energy equals ``E``.

    Solves ``-dS/dtau = E`` for the transfer time.  Starting from ``tau_guess``
    a secant/Newton step is tried first; otherwise the admissible window is
    scanned for a sign change.
    """
    def resid(tau, guesses):
        seg = segment_action(k, tau, x_minus, x_plus, masses, guesses)
        return seg.energy - E, seg

    if tau_guess is not None:
        tau = float(tau_guess)
        guesses = energy_guesses
        try:
            for _ in range(40):
                r, seg = resid(tau, guesses)
                if abs(r) <= 1e-14 * max(1.0, abs(E)):
                    return seg
                # dE_seg/dtau = -d2S/dtau2
                slope = -seg.d2S_dtau2
                step = r / slope
                tau_new = tau - step
                if tau_new <= 0.0:
                    break
                guesses = seg.arc_energies
                tau = tau_new
                if abs(step) <= 1e-15 * tau:
                    r, seg = resid(tau, guesses)
                    return seg
        except (NoSolutionError, ValueError):
            pass

    lo, hi = _tof_window(k, x_minus, x_plus, energy_guesses)
    if not lo < hi:
        raise NoSolutionError(f"no common transfer time for k={tuple(k)}")
    hi_eff = hi if math.isfinite(hi) else max(4.0 * lo, 50.0)
    taus = np.geomspace(lo * (1 + 1e-9), hi_eff * (1 - 1e-9), 200)
    vals = []
    for t in taus:
        try:
            vals.append(resid(t, energy_guesses)[0])
        except (NoSolutionError, ValueError):
            vals.append(math.nan)
    roots = []
    for i in range(len(taus) - 1):
        a, b = vals[i], vals[i + 1]
        if math.isfinite(a) and math.isfinite(b) and a * b <= 0.0:
            roots.append(brentq(lambda t: resid(t, energy_guesses)[0], taus[i], taus[i + 1],
                                xtol=1e-15, rtol=1e-15))
    if not roots:
        raise NoSolutionError(f"segment energy never equals E={E} for k={tuple(k)}")
    tau = roots[0] if tau_guess is None else min(roots, key=lambda t: abs(t - tau_guess))
    return resid(tau, energy_guesses)[1]


def energy_fixed_action_L(k, E, x_minus, x_plus, masses: MassParams, tau_guess=None,
                          energy_guesses=None) -> float:
    """Energy-fixed action ``S(tau*) + tau* E`` at the stationary transfer time."""
    seg = energy_fixed_segment(k, E, x_minus, x_plus, masses, tau_guess, energy_guesses)
    return seg.action_S + seg.tof * E


def twist_determinant(seg: CollisionSegment, h: float = 1e-6) -> float:
    """``det(d^2 S / dx_minus dx_plus)`` by central differences of ``y_plus``."""
    scale = h * max(1.0, float(np.linalg.norm(seg.x_minus)))
    cols = []
    for e in np.eye(2):
        yp = [
            segment_action(seg.k, seg.tof, seg.x_minus + sgn * scale * e, seg.x_plus,
                           seg.masses, seg.arc_energies).y_plus
            for sgn in (1.0, -1.0)
        ]
        cols.append((yp[0] - yp[1]) / (2.0 * scale))
    return float(np.linalg.det(np.column_stack(cols)))


# --- early collisions --------------------------------------------------------

def body_positions(seg: CollisionSegment, times) -> np.ndarray:
    """Positions of both bodies at the given times since the first collision.

    Returns an array of shape ``(len(times), 2, 2)``.
    """
    out = np.empty((len(times), 2, 2))
    for i, arc in enumerate(seg.arcs):
        start = KeplerState(arc.x_minus, arc.y_minus)
        for j, t in enumerate(times):
            out[j, i] = propagate_kepler(start, float(t)).position
    return out


def early_collision_distance(seg: CollisionSegment, samples: int | None = None) -> float:
    """Smallest interior local minimum of the separation of the two bodies.

    Sampling heuristic with at least ``256*(1+|k1|+|k2|)`` points, refined by
    bounded scalar minimisation.  Returns the minimum separation over the
    middle half of the segment if the separation has no interior local
    minimum.
    """
    k1, k2 = seg.k
    n = samples or 256 * (1 + abs(k1) + abs(k2))
    ts = np.linspace(0.0, seg.tof, n + 1)
    pos = body_positions(seg, ts)
    d = np.linalg.norm(pos[:, 1] - pos[:, 0], axis=1)

    def sep(t):
        p = body_positions(seg, [t])[0]
        return float(np.linalg.norm(p[1] - p[0]))

    best = math.inf
    for i in range(1, n):
        if d[i] <= d[i - 1] and d[i] <= d[i + 1]:
            res = minimize_scalar(sep, bounds=(ts[i - 1], ts[i + 1]), method="bounded",
                                  options={"xatol": 1e-12 * seg.tof})
            best = min(best, float(res.fun), float(d[i]))
    if math.isinf(best):
        best = float(d[n // 4: 3 * n // 4 + 1].min())
    return best


"""Discrete action functionals for periodic collision chains and a Newton solver.

A chain with ``n`` collisions is described by segment durations ``s``,
collision points ``x`` and, for chains that are periodic only up to a
rotation, a phase ``phi`` with ``x[n] = exp(i*phi) * x[0]``.  Three variational
problems are supported:

``fixed-T``
    critical points of the Hamilton action on ``sum(s) = T``; the energy is
    the Lagrange multiplier.
``fixed-E``
    critical points of ``A + E*T`` with ``phi = 0``.
``fixed-EG``
    critical points of ``A + E*T - G*phi`` with ``phi`` free.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .collision_action import (
    CollisionSegment,
    MassParams,
    early_collision_distance,
    energy_fixed_segment,
    relative_velocity_jump_data,
    segment_action,
)
from .kepler_lambert import (
    DomainError,
    KeplerState,
    NoSolutionError,
    propagate_kepler,
    solve_fixed_time,
)

VARIANTS = ("fixed-T", "fixed-E", "fixed-EG")


class ConvergenceError(RuntimeError):
    """Newton iteration failed to reach the gradient tolerance."""

    def __init__(self, message, history=None, chain=None):
        super().__init__(message)
        self.history = history or []
        self.chain = chain


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _perp(p: np.ndarray) -> np.ndarray:
    """Multiplication by ``i``: the rotation generator at ``p``."""
    return np.array([-p[1], p[0]])


@dataclass(frozen=True)
class CollisionChain:
    k: tuple
    s: np.ndarray
    x: np.ndarray
    phi: float
    energy: float
    angular_momentum: float
    masses: MassParams
    arc_energies: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "k", tuple((int(a), int(b)) for a, b in self.k))
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float).reshape(-1))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1, 2))
        n = len(self.k)
        if len(self.s) != n or len(self.x) != n:
            raise ValueError("k, s and x must have the same length")
        if np.any(self.s <= 0.0):
            raise DomainError("segment durations must be positive")
        if self.arc_energies is not None:
            object.__setattr__(self, "arc_energies", np.asarray(self.arc_energies, float).reshape(n, 2))

    @property
    def n(self) -> int:
        return len(self.k)

    @property
    def period(self) -> float:
        return float(self.s.sum())

    def endpoint(self, j: int) -> np.ndarray:
        """Collision point ``x_{j}`` for ``j = 0..n``, closing with the phase rotation."""
        if j == self.n:
            return _rot(self.phi) @ self.x[0]
        return self.x[j]

    def segments(self) -> list[CollisionSegment]:
        segs = []
        for j in range(self.n):
            guesses = None if self.arc_energies is None else tuple(self.arc_energies[j])
            segs.append(segment_action(self.k[j], self.s[j], self.x[j], self.endpoint(j + 1),
                                       self.masses, guesses))
        return segs

    def with_arc_energies(self, segs) -> "CollisionChain":
        return replace(self, arc_energies=np.array([seg.arc_energies for seg in segs]))

    def collision_times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.s)[:-1]])

    def to_dict(self) -> dict:
        return {
            "k": [list(p) for p in self.k],
            "s": [float(v) for v in self.s],
            "x": [[float(a), float(b)] for a, b in self.x],
            "phi": float(self.phi),
            "E": float(self.energy),
            "G": float(self.angular_momentum),
            "alpha1": float(self.masses.alpha1),
            "mu": float(self.masses.mu),
            **({} if self.arc_energies is None else
               {"arc_energies": [[float(a), float(b)] for a, b in self.arc_energies]}),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CollisionChain":
        missing = {"k", "s", "x", "phi", "E", "G", "alpha1", "mu"} - set(d)
        if missing:
            raise ValueError(f"chain record lacks fields {sorted(missing)}")
        return cls(
            k=d["k"], s=d["s"], x=d["x"], phi=float(d["phi"]), energy=float(d["E"]),
            angular_momentum=float(d["G"]),
            masses=MassParams(mu=float(d["mu"]), alpha1=float(d["alpha1"])),
            arc_energies=d.get("arc_energies"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CollisionChain":
        return cls.from_dict(json.loads(text))


# --- action values -----------------------------------------------------------

def discrete_action_A(chain: CollisionChain) -> float:
    """Sum of the segment actions."""
    return float(sum(seg.action_S for seg in chain.segments()))


def kepler_parts(chain: CollisionChain) -> tuple[float, float]:
    """The two single-body Hamilton actions whose weighted sum is the chain action."""
    segs = chain.segments()
    return (float(sum(s.arcs[0].action_F for s in segs)),
            float(sum(s.arcs[1].action_F for s in segs)))


def maupertuis_action_AE(chain: CollisionChain) -> float:
    return discrete_action_A(chain) + chain.energy * chain.period


def maupertuis_routh_action_AEG(chain: CollisionChain) -> float:
    return maupertuis_action_AE(chain) - chain.angular_momentum * chain.phi


def jacobi_action_JE(x, k, E, masses: MassParams, tau_guesses=None, energy_guesses=None) -> float:
    """Sum of energy-fixed segment actions around a closed chain of points."""
    return jacobi_routh_JEG(x, 0.0, k, E, 0.0, masses, tau_guesses, energy_guesses)


def jacobi_routh_JEG(x, phi, k, E, G, masses: MassParams, tau_guesses=None,
                     energy_guesses=None) -> float:
    """Energy-fixed chain action with the closing point rotated by ``phi``, minus ``G*phi``."""
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    n = len(x)
    pts = list(x) + [_rot(phi) @ x[0]]
    total = 0.0
    for j in range(n):
        tg = None if tau_guesses is None else tau_guesses[j]
        eg = None if energy_guesses is None else tuple(energy_guesses[j])
        seg = energy_fixed_segment(k[j], E, pts[j], pts[j + 1], masses, tg, eg)
        total += seg.action_S + seg.tof * E
    return total - G * phi


def energy_fixed_durations(chain: CollisionChain) -> np.ndarray:
    """Durations that make every segment energy equal the chain energy."""
    out = []
    for j in range(chain.n):
        eg = None if chain.arc_energies is None else tuple(chain.arc_energies[j])
        seg = energy_fixed_segment(chain.k[j], chain.energy, chain.x[j], chain.endpoint(j + 1),
                                   chain.masses, chain.s[j], eg)
        out.append(seg.tof)
    return np.array(out)


# --- unknown vector and analytic gradient -------------------------------------

def _pack(chain: CollisionChain, variant: str) -> np.ndarray:
    z = [chain.s, chain.x.reshape(-1)]
    if variant == "fixed-EG":
        z.append([chain.phi])
    elif variant == "fixed-T":
        z.append([chain.energy])
    return np.concatenate(z)


def _unpack(chain: CollisionChain, variant: str, z: np.ndarray) -> CollisionChain:
    n = chain.n
    kw = dict(s=z[:n], x=z[n:3 * n].reshape(n, 2))
    if variant == "fixed-EG":
        kw["phi"] = float(z[3 * n])
    elif variant == "fixed-T":
        kw["energy"] = float(z[3 * n])
    return replace(chain, **kw)


def _gradient_from_segments(chain: CollisionChain, segs, variant: str, T=None) -> np.ndarray:
    n = chain.n
    g_s = np.array([chain.energy - seg.energy for seg in segs])
    g_x = np.zeros((n, 2))
    back = _rot(-chain.phi)
    for j in range(n):
        g_x[j] -= segs[j].y_minus
        if j == 0:
            g_x[0] += back @ segs[n - 1].y_plus
        else:
            g_x[j] += segs[j - 1].y_plus
    parts = [g_s, g_x.reshape(-1)]
    if variant == "fixed-EG":
        xn = chain.endpoint(n)
        parts.append([float(segs[n - 1].y_plus @ _perp(xn)) - chain.angular_momentum])
    elif variant == "fixed-T":
        parts.append([chain.period - T])
    return np.concatenate(parts)


def action_gradient(chain: CollisionChain, variant: str = "fixed-E", T=None) -> np.ndarray:
    """Gradient of the variant's functional in the packed unknowns ``(s, x[, phi | E])``.

    For ``fixed-T`` the last entry is the constraint residual ``sum(s) - T``.
    """
    _check_variant(variant)
    return _gradient_from_segments(chain, chain.segments(), variant, T)


def functional_value(chain: CollisionChain, variant: str, T=None) -> float:
    if variant == "fixed-EG":
        return maupertuis_routh_action_AEG(chain)
    if variant == "fixed-E":
        return maupertuis_action_AE(chain)
    return discrete_action_A(chain) + chain.energy * (chain.period - T)


def _check_variant(variant):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def _steps(chain: CollisionChain, variant: str, rel: float) -> np.ndarray:
    h = [rel * max(1.0, s) for s in chain.s]
    for p in chain.x:
        h += [rel * max(1.0, float(np.linalg.norm(p)))] * 2
    if variant != "fixed-E":
        h.append(rel)
    return np.array(h)


def action_hessian(chain: CollisionChain, variant: str = "fixed-E", T=None,
                   rel_step: float = 1e-6) -> np.ndarray:
    """Symmetric central differences of the analytic gradient."""
    _check_variant(variant)
    z0 = _pack(chain, variant)
    h = _steps(chain, variant, rel_step)
    cols = []
    for i in range(len(z0)):
        dz = np.zeros_like(z0)
        dz[i] = h[i]
        gp = action_gradient(_unpack(chain, variant, z0 + dz), variant, T)
        gm = action_gradient(_unpack(chain, variant, z0 - dz), variant, T)
        cols.append((gp - gm) / (2.0 * h[i]))
    H = np.column_stack(cols)
    return 0.5 * (H + H.T)


def rotation_generator(chain: CollisionChain, variant: str) -> np.ndarray:
    """Infinitesimal rotation of all collision points, in packed coordinates."""
    n = chain.n
    v = np.concatenate([np.zeros(n), np.array([_perp(p) for p in chain.x]).reshape(-1)])
    if variant != "fixed-E":
        v = np.append(v, 0.0)
    return v / np.linalg.norm(v)


# --- certificate -------------------------------------------------------------

@dataclass(frozen=True)
class ChainCertificate:
    gradient_norm: float
    hessian_nullity: int
    smallest_nonnull_singular_value: float
    direction_change_margins: list
    no_return_margins: list
    early_collision_min_distance: float
    null_alignment_angle: float = math.nan
    speed_mismatch: float = math.nan
    tol_grad: float = 1e-10
    tol_align: float = 1e-3

    @property
    def valid(self) -> bool:
        return (
            self.gradient_norm <= self.tol_grad
            and self.hessian_nullity == 1
            and self.null_alignment_angle <= self.tol_align
            and min(self.direction_change_margins) > 0.0
            and min(self.no_return_margins) > 0.0
            and self.early_collision_min_distance > 0.0
        )

    def to_dict(self) -> dict:
        return {
            "gradient_norm": self.gradient_norm,
            "hessian_nullity": self.hessian_nullity,
            "smallest_nonnull_singular_value": self.smallest_nonnull_singular_value,
            "direction_change_margins": list(self.direction_change_margins),
            "no_return_margins": list(self.no_return_margins),
            "early_collision_min_distance": self.early_collision_min_distance,
            "null_alignment_angle": self.null_alignment_angle,
            "speed_mismatch": self.speed_mismatch,
            "valid": self.valid,
        }


def collision_velocities(chain: CollisionChain, segs=None):
    """Scaled relative velocities ``(v_minus, v_plus)`` at each collision, in the frame of ``x_j``."""
    segs = segs or chain.segments()
    n = chain.n
    out = []
    for j in range(n):
        seg_in, seg_out = segs[j - 1], segs[j]
        if j == 0:
            # bring the closing segment back by the phase rotation
            back = _rot(-chain.phi)
            alpha = chain.masses.alpha
            v_minus = alpha * back @ (seg_in.arcs[1].y_plus - seg_in.arcs[0].y_plus)
            v_plus = alpha * (seg_out.arcs[1].y_minus - seg_out.arcs[0].y_minus)
        else:
            v_minus, v_plus = relative_velocity_jump_data(seg_in, seg_out)
        out.append((v_minus, v_plus))
    return out


def direction_change_margins(chain: CollisionChain, segs=None) -> list:
    """Size of the jump in the first body's velocity at each collision."""
    segs = segs or chain.segments()
    back = _rot(-chain.phi)
    out = []
    for j in range(chain.n):
        arrive = segs[j - 1].arcs[0].y_plus
        if j == 0:
            arrive = back @ arrive
        out.append(float(np.linalg.norm(arrive - segs[j].arcs[0].y_minus)))
    return out


def certify_chain(chain: CollisionChain, variant: str = "fixed-EG", T=None,
                  tol_grad: float = 1e-10, tol_null: float = 1e-6, tol_align: float = 1e-3,
                  screen_samples: int | None = None) -> ChainCertificate:
    """Evaluate the hypotheses under which a chain can be shadowed."""
    if variant == "fixed-T":
        # a fixed-time critical point is a fixed-energy one at its multiplier
        variant = "fixed-E"
    segs = chain.segments()
    g = _gradient_from_segments(chain, segs, variant, T)
    H = action_hessian(chain, variant, T)
    U, sv, Vt = np.linalg.svd(H)
    null = sv < tol_null * sv[0]
    nullity = int(null.sum())
    if nullity >= 1:
        v = Vt[-1]
        gen = rotation_generator(chain, variant)
        angle = float(math.acos(min(1.0, abs(float(v @ gen)))))
    else:
        angle = math.nan
    nonnull = sv[~null]
    vel = collision_velocities(chain, segs)
    mismatch = max(abs(np.linalg.norm(vp) - np.linalg.norm(vm)) for vm, vp in vel)
    early = min(early_collision_distance(seg, screen_samples) for seg in segs)
    return ChainCertificate(
        gradient_norm=float(np.linalg.norm(g)),
        hessian_nullity=nullity,
        smallest_nonnull_singular_value=float(nonnull[-1]) if len(nonnull) else 0.0,
        direction_change_margins=direction_change_margins(chain, segs),
        no_return_margins=[float(np.linalg.norm(vp + vm)) for vm, vp in vel],
        early_collision_min_distance=float(early),
        null_alignment_angle=angle,
        speed_mismatch=float(mismatch),
        tol_grad=tol_grad,
        tol_align=tol_align,
    )


# --- Newton solver -------------------------------------------------------------

def find_critical_chain(initial: CollisionChain, variant: str = "fixed-EG", T=None,
                        tol_grad: float = 1e-10, max_iter: int = 100, certify: bool = True,
                        gauge_angle: float | None = None, screen_samples: int | None = None):
    """Damped Newton iteration for a critical chain, modulo rotation.

    The rotation symmetry is removed by keeping ``arg(x[0])`` fixed (at
    ``gauge_angle`` if given).  Returns ``(chain, certificate)``; the
    certificate is ``None`` when ``certify`` is false.
    """
    _check_variant(variant)
    if variant == "fixed-T" and T is None:
        T = initial.period
    chain = initial
    if gauge_angle is not None:
        chain = _rotate_chain(chain, gauge_angle - math.atan2(chain.x[0][1], chain.x[0][0]))
    try:
        segs = chain.segments()
    except (NoSolutionError, ValueError) as exc:
        raise DomainError(f"initial chain outside the domain: {exc}") from exc
    chain = chain.with_arc_energies(segs)
    g = _gradient_from_segments(chain, segs, variant, T)
    history = [float(np.linalg.norm(g))]
    n = chain.n
    for _ in range(max_iter):
        if history[-1] <= 0.1 * tol_grad:
            break
        H = action_hessian(chain, variant, T)
        gauge = np.zeros(len(g))
        gauge[n:n + 2] = _perp(chain.x[0])
        A = np.vstack([H, gauge])
        b = np.concatenate([-g, [0.0]])
        step = np.linalg.lstsq(A, b, rcond=None)[0]
        z0 = _pack(chain, variant)
        t = 1.0
        f0 = history[-1] ** 2
        while True:
            try:
                trial = _unpack(chain, variant, z0 + t * step)
                tsegs = trial.segments()
                tg = _gradient_from_segments(trial, tsegs, variant, T)
                ft = float(tg @ tg)
                if ft <= (1.0 - 1e-4 * t) * f0 or (ft < f0 and t < 1e-3):
                    break
            except (NoSolutionError, ValueError):
                pass
            t *= 0.5
            if t < 1e-8:
                raise ConvergenceError("line search failed", history, chain)
        chain = trial.with_arc_energies(tsegs)
        g = tg
        history.append(float(np.linalg.norm(g)))
        if len(history) > 3 and history[-1] >= history[-3] and history[-1] < 10 * tol_grad:
            break
    if history[-1] > tol_grad:
        raise ConvergenceError(
            f"gradient norm {history[-1]:.3e} above {tol_grad:.1e} after {len(history) - 1} steps",
            history, chain,
        )
    cert = certify_chain(chain, variant, T, tol_grad=tol_grad,
                         screen_samples=screen_samples) if certify else None
    return chain, cert


def _rotate_chain(chain: CollisionChain, theta: float) -> CollisionChain:
    R = _rot(theta)
    return replace(chain, x=chain.x @ R.T)


def chain_distance_mod_rotation(a: CollisionChain, b: CollisionChain) -> float:
    """Max-norm distance of two chains after the best common rotation of ``b``."""
    za = a.x[:, 0] + 1j * a.x[:, 1]
    zb = b.x[:, 0] + 1j * b.x[:, 1]
    theta = float(np.angle(np.vdot(zb, za)))
    xb = _rotate_chain(b, theta).x
    return float(max(np.abs(a.x - xb).max(), np.abs(a.s - b.s).max(),
                     abs(a.phi - b.phi), abs(a.energy - b.energy)))


# --- restricted elliptic limit -------------------------------------------------

@dataclass(frozen=True)
class RestrictedEllipse:
    """Kepler ellipse of the heavier small body with energy ``E`` and angular momentum ``G``."""

    energy: float
    angular_momentum: float

    def __post_init__(self):
        E, G = self.energy, self.angular_momentum
        if not (E < 0.0 and G > 0.0):
            raise ValueError("need E < 0 and G > 0")
        if not (-2.0 * E) * G * G < 1.0:
            raise ValueError(f"no ellipse with E={E} and G={G}")

    @property
    def semimajor_axis(self) -> float:
        return 1.0 / (-2.0 * self.energy)

    @property
    def eccentricity(self) -> float:
        return math.sqrt(1.0 + 2.0 * self.energy * self.angular_momentum ** 2)

    @property
    def period(self) -> float:
        return 2.0 * math.pi * self.semimajor_axis ** 1.5

    def maupertuis_action(self) -> float:
        return 2.0 * math.pi * (-2.0 * self.energy) ** -0.5

    def periapsis_state(self) -> KeplerState:
        a, e = self.semimajor_axis, self.eccentricity
        rp = a * (1.0 - e)
        return KeplerState(np.array([rp, 0.0]), np.array([0.0, self.angular_momentum / rp]))

    def state(self, t: float) -> KeplerState:
        return propagate_kepler(self.periapsis_state(), t)


def restricted_action(ellipse: RestrictedEllipse, times, m: int, k1_pattern, energy_guesses=None):
    """Sum of the lighter body's fixed-time actions between collision times on the ellipse.

    Returns ``(value, gradient, arcs)``; the gradient is with respect to the
    collision times, the last of which closes after ``m`` revolutions.
    """
    n = len(times)
    tt = list(times) + [times[0] + m * ellipse.period]
    states = [ellipse.state(t) for t in tt]
    arcs = []
    for j in range(n):
        guess = None if energy_guesses is None else energy_guesses[j]
        arcs.append(solve_fixed_time(k1_pattern[j], tt[j + 1] - tt[j], states[j].position,
                                     states[j + 1].position, energy_guess=guess))
    grad = np.array([
        arcs[j].energy - arcs[j - 1].energy
        + float((arcs[j - 1].y_plus - arcs[j].y_minus) @ states[j].velocity)
        for j in range(n)
    ])
    return float(sum(a.action_F for a in arcs)), grad, arcs


def _restricted_newton(ellipse, times, m, k1_pattern, tol=1e-12, max_iter=50, guesses=None):
    t = np.array(times, dtype=float)
    for _ in range(max_iter):
        _, g, arcs = restricted_action(ellipse, t, m, k1_pattern, guesses)
        guesses = [a.energy for a in arcs]
        if np.abs(g).max() < tol:
            return t, arcs
        h = 1e-6
        H = np.empty((len(t), len(t)))
        for i in range(len(t)):
            d = np.zeros(len(t))
            d[i] = h
            H[:, i] = (restricted_action(ellipse, t + d, m, k1_pattern, guesses)[1]
                       - restricted_action(ellipse, t - d, m, k1_pattern, guesses)[1]) / (2 * h)
        step = np.linalg.solve(H, -g)
        big = np.abs(step).max()
        if big > 0.3:
            step *= 0.3 / big
        t = t + step
        if np.any(np.diff(t) <= 0.0) or t[-1] - t[0] >= m * ellipse.period:
            return None
    return None


def restricted_critical_times(E, G, m, k1_pattern, starts: int = 40, seed: int = 0):
    """Critical collision-time sequences of the restricted limit, by multistart Newton."""
    ell = RestrictedEllipse(E, G)
    n = len(k1_pattern)
    rng = np.random.default_rng(seed)
    found = []
    for _ in range(starts):
        t1 = rng.uniform(0.0, ell.period)
        rest = np.sort(rng.uniform(0.0, m * ell.period, n - 1))
        try:
            res = _restricted_newton(ell, np.concatenate([[t1], t1 + rest]), m, k1_pattern)
        except (NoSolutionError, ValueError):
            continue
        if res is None:
            continue
        t, arcs = res
        t = t - ell.period * math.floor(t[0] / ell.period)
        if any(np.allclose(t, f[0], atol=1e-7) for f in found):
            continue
        found.append((t, arcs))
    return found


def seed_from_restricted_limit(E: float, G: float, m: int, n: int, k1_pattern, alpha1: float,
                               times=None, starts: int = 40, seed: int = 0, which: int = 0,
                               energy_guesses=None) -> CollisionChain:
    """Initial chain for the fixed-EG problem from the restricted elliptic limit.

    The heavier small body runs along the ellipse with energy ``E`` and
    angular momentum ``G``; the lighter body joins consecutive collision
    points with the rotation counts ``k1_pattern``.  Collision times are
    critical points of the lighter body's total action; ``times`` skips the
    search and starts Newton from the given times (``energy_guesses`` picks
    the lighter body's arc branches there).
    """
    if not (E < 0.0 and G > 0.0 and 0.0 < (-2.0 * E) * G < 1.0):
        raise ValueError("need E < 0, G > 0 and 0 < (-2E)G < 1")
    if not 0.0 < alpha1 < 1.0:
        raise ValueError("alpha1 must lie in (0, 1)")
    k1_pattern = list(k1_pattern)
    if len(k1_pattern) != n:
        raise ValueError("k1_pattern must have n entries")
    ell = RestrictedEllipse(E, G)
    if times is not None:
        res = _restricted_newton(ell, times, m, k1_pattern, guesses=energy_guesses)
        if res is None:
            raise NoSolutionError("restricted problem did not converge from the given times")
        candidates = [res]
    else:
        candidates = restricted_critical_times(E, G, m, k1_pattern, starts, seed)
    if len(candidates) <= which:
        raise NoSolutionError(f"no restricted critical point for k1 pattern {k1_pattern}")
    t, arcs = candidates[which]
    tt = np.append(t, t[0] + m * ell.period)
    s = np.diff(tt)
    x = np.array([ell.state(tj).position for tj in t])
    k2 = [int(math.floor(sj / ell.period)) for sj in s]
    # lighter body carries the residual energy to keep the total at E
    e2 = E
    chain = CollisionChain(
        k=list(zip(k1_pattern, k2)),
        s=s,
        x=x,
        phi=0.0,
        energy=E,
        angular_momentum=G,
        masses=MassParams(mu=0.0, alpha1=alpha1),
        arc_energies=np.array([[a.energy, e2] for a in arcs]),
    )
    try:
        chain.segments()
    except (NoSolutionError, ValueError) as exc:
        raise NoSolutionError(f"seeded segments leave the domain: {exc}") from exc
    return chain

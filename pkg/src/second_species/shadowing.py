"""Periodic orbits of the full problem that shadow a collision chain.

Each collision of the chain is replaced by a passage through a tube
``|q2 - q1| <= rho``.  Inside the tube the pair is followed in
Levi-Civita variables; outside it the heliocentric equations are used with
physical time.  For collision ``j`` there are three shooting nodes:

``P_j``
    periapsis of the passage (``xi . eta = 0``), in the regularised chart,
``X_j``
    exit from the tube, reached from ``P_j`` forward in fictitious time,
``N_j``
    entry into the tube, reached from ``P_j`` backward in fictitious time.

Outer legs join ``X_j`` to ``N_{j+1}``; the last one closes on the rotated
entry node ``R_phi N_0``.  Every leg is integrated on a frozen mesh so that
its Jacobian is the exact derivative of a smooth map, obtained by complex
step.  The system is solved by Gauss-Newton; it is consistent but
overdetermined because the legs conserve the energy and the angular
momentum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from .chain_solver import CollisionChain, collision_velocities
from .collision_action import MassParams
from .kepler_lambert import KeplerState, propagate_kepler, propagate_kepler_many
from .regularized_flow import (
    CARTESIAN,
    REGULARIZED,
    FlowLeg,
    IntegrationError,
)

DIRECTION_CHANGE_EPS = 0.1
_J2 = np.array([[0.0, -1.0], [1.0, 0.0]])


class ShootingError(RuntimeError):
    """The shooting iteration failed; ``history`` holds the residual norms."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])
        self.partial = {}


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _reg_hamiltonian(z, a1, a2, mu, E):
    """Regularised Hamiltonian from real components; safe for complex-step input."""
    x0, x1, y0, y1, s0, s1, e0, e1 = z[:8]
    u0, u1 = s0 * s0 - s1 * s1, 2.0 * s0 * s1
    r1 = ((x0 - a2 * u0) ** 2 + (x1 - a2 * u1) ** 2) ** 0.5
    r2 = ((x0 + a1 * u0) ** 2 + (x1 + a1 * u1) ** 2) ** 0.5
    bracket = E + a1 / r1 + a2 / r2 - (1 + mu) * (y0 * y0 + y1 * y1) / 2
    return (e0 * e0 + e1 * e1) / (8 * a1 * a2) - (s0 * s0 + s1 * s1) * bracket


def _reg_angular_momentum(z):
    return _cross(z[0:2], z[2:4]) + 0.5 * _cross(z[4:6], z[6:8])


# --- chain geometry -------------------------------------------------------------

def chain_positions(chain: CollisionChain, times) -> np.ndarray:
    """Body positions along the chain at the given times; shape ``(len(times), 2, 2)``.

    Times outside one period use the quasi-periodicity ``q(t + T) = R_phi q(t)``.
    """
    times = np.asarray(times, dtype=float)
    T = chain.period
    turns = np.floor(times / T)
    local = times - turns * T
    starts = chain.collision_times()
    idx = np.clip(np.searchsorted(starts, local, side="right") - 1, 0, chain.n - 1)
    out = np.empty((len(times), 2, 2))
    segs = chain.segments()
    for j, seg in enumerate(segs):
        sel = np.nonzero(idx == j)[0]
        if not len(sel):
            continue
        for b, arc in enumerate(seg.arcs):
            pos, _ = propagate_kepler_many(KeplerState(arc.x_minus, arc.y_minus),
                                           local[sel] - starts[j])
            out[sel, b] = pos
    for w in np.unique(turns):
        sel = turns == w
        out[sel] = out[sel] @ _rot(w * chain.phi).T
    return out


def _segment_sampler(seg):
    """Position/velocity of both bodies at time ``t`` after the segment start."""
    starts = [KeplerState(a.x_minus, a.y_minus) for a in seg.arcs]

    def at(t):
        out = [propagate_kepler(s, float(t)) for s in starts]
        return (np.array([o.position for o in out]), np.array([o.velocity for o in out]))

    def many(ts):
        res = [propagate_kepler_many(s, ts) for s in starts]
        return (np.stack([r[0] for r in res], axis=1), np.stack([r[1] for r in res], axis=1))

    return at, many


def _half_angle_unit(direction, ref=None) -> np.ndarray:
    """Unit vector whose complex square points along ``direction``; sign follows ``ref``."""
    z = complex(direction[0], direction[1])
    w = complex(np.sqrt(z / abs(z)))
    out = np.array([w.real, w.imag])
    if ref is not None and out @ ref < 0.0:
        out = -out
    return out


# --- shooting problem -----------------------------------------------------------

@dataclass
class ShootingProblem:
    """Data of the shooting problem for one value of ``mu``."""

    chain: CollisionChain
    mu: float
    rho: float = 0.05
    variant: str = "fixed-EG"
    rtol: float = 1e-13
    atol: float = 1e-15

    def __post_init__(self):
        if self.variant not in ("fixed-E", "fixed-EG"):
            raise ValueError(f"unknown shooting variant {self.variant!r}")
        if not 0.0 < self.mu < self.rho:
            raise ValueError("need 0 < mu < rho")

    @property
    def masses(self) -> MassParams:
        return self.chain.masses.with_mu(self.mu)

    @property
    def energy(self) -> float:
        return self.chain.energy

    @property
    def n(self) -> int:
        return self.chain.n


@dataclass
class ShootingGuess:
    """Shooting unknowns: periapsis nodes ``P`` (regularised), tube nodes ``X``, ``N`` (heliocentric)."""

    P: np.ndarray
    X: np.ndarray
    N: np.ndarray
    sigma_plus: np.ndarray
    sigma_minus: np.ndarray
    duration: np.ndarray
    phi: float
    gauge: np.ndarray

    def pack(self, with_phi: bool) -> np.ndarray:
        nodes = np.concatenate([np.concatenate([p, x, m]) for p, x, m in zip(self.P, self.X, self.N)])
        parts = [nodes, self.sigma_plus, self.sigma_minus, self.duration]
        if with_phi:
            parts.append([self.phi])
        return np.concatenate(parts)

    def unpack(self, z: np.ndarray, with_phi: bool) -> "ShootingGuess":
        n = len(self.P)
        nodes = z[:24 * n].reshape(n, 3, 8)
        off = 24 * n
        return ShootingGuess(
            P=nodes[:, 0].copy(), X=nodes[:, 1].copy(), N=nodes[:, 2].copy(),
            sigma_plus=z[off:off + n].copy(), sigma_minus=z[off + n:off + 2 * n].copy(),
            duration=z[off + 2 * n:off + 3 * n].copy(),
            phi=float(z[off + 3 * n]) if with_phi else self.phi,
            gauge=self.gauge,
        )


def _tube_crossings(seg, rho, samples):
    """Times after the start and before the end of a segment at which ``|u| = rho``."""
    at, many = _segment_sampler(seg)
    ts = np.linspace(0.0, seg.tof, samples + 1)
    pos, _ = many(ts)
    sep = np.linalg.norm(pos[:, 1] - pos[:, 0], axis=1)
    outside = np.nonzero(sep > rho)[0]
    if not len(outside):
        raise ValueError("the pair never leaves the tube; rho is too large")
    first, last = outside[0], outside[-1]
    if not np.all(sep[first:last + 1] > rho):
        raise ValueError("the pair re-enters the tube between collisions; rho is too large")

    def gap(t):
        p, _ = at(t)
        return float(np.linalg.norm(p[1] - p[0])) - rho

    t_out = brentq(gap, ts[first - 1], ts[first], xtol=1e-15, rtol=1e-15)
    t_in = brentq(gap, ts[last], ts[last + 1], xtol=1e-15, rtol=1e-15)
    return t_out, t_in, at, many


def _saddle_periapsis(x, y, w_minus, w_plus, c1_ref, masses: MassParams, E: float):
    """Periapsis node of the linearised passage with asymptotic directions ``w_minus``, ``w_plus``."""
    al, mu = masses.alpha, masses.mu
    lam = E + 1.0 / np.linalg.norm(x) - (1 + mu) * float(y @ y) / 2
    if lam <= 0.0:
        raise ValueError("non-positive relative kinetic energy at a collision")
    kappa = math.sqrt(lam / (2 * al))
    c1 = _half_angle_unit(-np.asarray(w_minus), c1_ref)
    c2 = _half_angle_unit(np.asarray(w_plus))
    if c1 @ c2 > 0.0:
        c2 = -c2
    cos_theta = abs(float(c1 @ c2))
    if cos_theta < 1e-12:
        raise ValueError("collision without direction change")
    c = math.sqrt(mu / (8 * kappa ** 2 * cos_theta))
    xi0 = c * (c1 + c2)
    eta0 = 4 * al * kappa * c * (c2 - c1)
    return np.concatenate([x, y, xi0, eta0]), c1, c2, c, kappa


def _passage_span(c, c_a, c_b, kappa, rho):
    """Fictitious time for ``|c_a e^{-k s} + c_b e^{k s}|^2`` to reach ``rho``."""
    def g(s):
        v = c * (c_a * math.exp(-kappa * s) + c_b * math.exp(kappa * s))
        return float(v @ v) - rho

    hi = 1.0 / kappa
    while g(hi) < 0.0:
        hi *= 2.0
    return brentq(g, 0.0, hi, xtol=1e-14)


def _phase_node(pos, vel, masses: MassParams) -> np.ndarray:
    """Heliocentric node from the chain's positions and velocities at coupling ``mu``.

    The coupling adds ``mu |y|^2 / 2`` to the energy; it is absorbed in the
    total momentum ``y`` so that the node starts near the energy level.
    """
    a1, a2 = masses.alpha1, masses.alpha2
    p1, p2 = a1 * vel[0], a2 * vel[1]
    y = (p1 + p2) / math.sqrt(1.0 + masses.mu)
    v = a1 * p2 - a2 * p1
    p1, p2 = a1 * y - v, a2 * y + v
    return np.concatenate([pos[0], pos[1], p1, p2])


def _lifted_xi(node) -> np.ndarray:
    u = complex(node[2] - node[0], node[3] - node[1])
    r = complex(np.sqrt(u))
    return np.array([r.real, r.imag])


def build_initial_guess(problem: ShootingProblem, samples_per_unit: int = 200) -> ShootingGuess:
    """Shooting nodes from the chain's Kepler arcs and the linearised passages.

    The tube crossings come from the arcs of the chain; the periapsis nodes
    come from the linear saddle of the regularised flow at each collision
    point.  Raises ``ValueError`` when a passage, lifted to Levi-Civita
    variables along the saddle, fails the direction-change separation
    ``-xi_N . xi_X >= eps^2 rho`` with ``eps = 0.1``.
    """
    chain, rho, masses, E = problem.chain, problem.rho, problem.masses, problem.energy
    n = chain.n
    segs = chain.segments()
    vel = collision_velocities(chain, segs)
    crossings = [_tube_crossings(seg, rho, max(2000, int(samples_per_unit * seg.tof)))
                 for seg in segs]

    P = np.empty((n, 8))
    X = np.empty((n, 8))
    N = np.empty((n, 8))
    sp, sm, dur = np.empty(n), np.empty(n), np.empty(n)
    units = []
    for j in range(n):
        y = segs[j].y_minus / math.sqrt(1.0 + masses.mu)
        P[j], c1, c2, c, kappa = _saddle_periapsis(chain.x[j], y, vel[j][0], vel[j][1],
                                                   None, masses, E)
        units.append((c1, c2))
        sp[j] = _passage_span(c, c1, c2, kappa, rho)
        sm[j] = _passage_span(c, c2, c1, kappa, rho)
        t_out, t_in, at, _ = crossings[j]
        X[j] = _phase_node(*at(t_out), masses)
        node = _phase_node(*at(t_in), masses)
        dur[j] = t_in - t_out
        if j + 1 < n:
            N[j + 1] = node
        else:
            N[0] = _rotation_phase(-chain.phi) @ node
    for j, (c1, c2) in enumerate(units):
        xi_in, xi_out = _lifted_xi(N[j]), _lifted_xi(X[j])
        xi_in = xi_in if xi_in @ c1 >= 0.0 else -xi_in
        xi_out = xi_out if xi_out @ c2 >= 0.0 else -xi_out
        separation = -float(xi_in @ xi_out)
        if separation < DIRECTION_CHANGE_EPS ** 2 * rho:
            raise ValueError(f"collision {j} fails the direction-change separation "
                             f"({separation:.3e} < {DIRECTION_CHANGE_EPS ** 2 * rho:.3e})")
    gauge = np.array([-chain.x[0][1], chain.x[0][0]]) / np.linalg.norm(chain.x[0])
    return ShootingGuess(P, X, N, sp, sm, dur, float(chain.phi), gauge)


# --- residual and Jacobian ------------------------------------------------------

def _rotation_phase(phi: float) -> np.ndarray:
    """Rotation by ``phi`` of every planar vector of a heliocentric node."""
    return np.kron(np.eye(4), _rot(phi))


def _rotation_phase_dphi(phi: float) -> np.ndarray:
    return np.kron(np.eye(4), _rot(phi) @ _J2)


def _regularized_to_phase(z, a1, a2):
    """Heliocentric ``(q1, q2, p1, p2)`` from regularised ``(x, y, xi, eta)``; complex-step safe."""
    x0, x1, y0, y1, s0, s1, e0, e1 = z[:8]
    u0, u1 = s0 * s0 - s1 * s1, 2.0 * s0 * s1
    d = 2.0 * (s0 * s0 + s1 * s1)
    # a trial step through xi = 0 yields nan and is rejected by the line search
    with np.errstate(divide="ignore", invalid="ignore"):
        v0, v1 = (e0 * s0 - e1 * s1) / d, (e0 * s1 + e1 * s0) / d
    return np.array([x0 - a2 * u0, x1 - a2 * u1, x0 + a1 * u0, x1 + a1 * u1,
                     a1 * y0 - v0, a1 * y1 - v1, a2 * y0 + v0, a2 * y1 + v1])


def _regularized_to_phase_jacobian(z, a1, a2) -> np.ndarray:
    h = 1e-30
    J = np.empty((8, 8))
    for i in range(8):
        zc = np.asarray(z[:8], dtype=complex)
        zc[i] += 1j * h
        J[:, i] = _regularized_to_phase(zc, a1, a2).imag / h
    return J


@dataclass
class _Legs:
    plus: list
    minus: list
    outer: list


def _build_legs(problem, g: ShootingGuess) -> _Legs:
    m, E = problem.masses, problem.energy
    opts = dict(rtol=problem.rtol, atol=problem.atol)

    def mesh(kind, z, span):
        return FlowLeg.adaptive(kind, np.append(z, 0.0), span, m, E, **opts)

    n = problem.n
    return _Legs(
        plus=[mesh(REGULARIZED, g.P[j], g.sigma_plus[j]) for j in range(n)],
        minus=[mesh(REGULARIZED, g.P[j], -g.sigma_minus[j]) for j in range(n)],
        outer=[mesh(CARTESIAN, g.X[j], g.duration[j]) for j in range(n)],
    )


def _row_weights(problem) -> np.ndarray:
    """Row scaling: light-body momenta and regularised momenta are small."""
    m = problem.masses
    w8 = np.array([1, 1, 1, 1, 1 / m.alpha1, 1 / m.alpha1, 1, 1], dtype=float)
    n = problem.n
    extra = [1 / m.alpha] * n + [1.0] * (2 * n) + [1 / (m.mu * m.alpha)] * n
    if problem.variant == "fixed-EG":
        extra.append(1.0)
    extra.append(1.0)
    return np.concatenate([np.tile(w8, 3 * n), extra])


def _residual(problem, legs: _Legs, g: ShootingGuess, jacobian: bool = True):
    """Residual vector, its Jacobian and the leg Jacobians at ``g``."""
    n, m, E = problem.n, problem.masses, problem.energy
    a1, a2, mu, al = m.alpha1, m.alpha2, m.mu, m.alpha
    with_phi = problem.variant == "fixed-EG"
    nz = 27 * n + (1 if with_phi else 0)
    n_match = 24 * n
    n_rows = n_match + 4 * n + (1 if with_phi else 0) + 1
    r = np.zeros(n_rows)
    Jm = np.zeros((n_rows, nz)) if jacobian else None
    legs_d = {"plus": [], "minus": [], "outer": [], "times": []}

    def node_col(j, which):
        return 24 * j + 8 * which

    sig_p, sig_m, dur_c = 24 * n, 25 * n, 26 * n
    phi_col = 27 * n
    R = _rotation_phase(g.phi)

    def run(leg, z, scale):
        z9 = np.append(z, 0.0)
        if jacobian:
            return leg.with_jacobian(z9, scale, m, E)
        return leg(z9, scale, m, E), None

    def inner(leg, z, scale):
        ze, J = run(leg, z, scale)
        ph = _regularized_to_phase(ze[:8], a1, a2)
        if J is None:
            return ze, ph, None
        C = _regularized_to_phase_jacobian(ze[:8], a1, a2)
        return ze, ph, C @ J[:8, :]

    for j in range(n):
        row = 24 * j
        zp, php, Jp = inner(legs.plus[j], g.P[j], g.sigma_plus[j])
        zm, phm, Jmn = inner(legs.minus[j], g.P[j], -g.sigma_minus[j])
        zo, Jo = run(legs.outer[j], g.X[j], g.duration[j])
        legs_d["times"].append((zp[8], -zm[8], zo[8]))
        r[row:row + 8] = php - g.X[j]
        r[row + 8:row + 16] = phm - g.N[j]
        nxt = j + 1
        target = g.N[nxt] if nxt < n else R @ g.N[0]
        r[row + 16:row + 24] = zo[:8] - target
        legs_d["plus"].append(Jp)
        legs_d["minus"].append(Jmn)
        legs_d["outer"].append(Jo)
        if not jacobian:
            continue
        cP, cX, cN = node_col(j, 0), node_col(j, 1), node_col(j, 2)
        Jm[row:row + 8, cP:cP + 8] = Jp[:, :8]
        Jm[row:row + 8, cX:cX + 8] -= np.eye(8)
        Jm[row:row + 8, sig_p + j] = Jp[:, 8]
        Jm[row + 8:row + 16, cP:cP + 8] = Jmn[:, :8]
        Jm[row + 8:row + 16, cN:cN + 8] -= np.eye(8)
        Jm[row + 8:row + 16, sig_m + j] = -Jmn[:, 8]
        Jm[row + 16:row + 24, cX:cX + 8] += Jo[:8, :8]
        Jm[row + 16:row + 24, dur_c + j] = Jo[:8, 8]
        if nxt < n:
            cN2 = node_col(nxt, 2)
            Jm[row + 16:row + 24, cN2:cN2 + 8] -= np.eye(8)
        else:
            cN0 = node_col(0, 2)
            Jm[row + 16:row + 24, cN0:cN0 + 8] -= R
            if with_phi:
                Jm[row + 16:row + 24, phi_col] = -_rotation_phase_dphi(g.phi) @ g.N[0]

    row = n_match
    for j in range(n):
        xi, eta = g.P[j][4:6], g.P[j][6:8]
        r[row] = xi @ eta
        if jacobian:
            c = node_col(j, 0)
            Jm[row, c + 4:c + 6] = eta
            Jm[row, c + 6:c + 8] = xi
        row += 1
    for which in (1, 2):
        for j in range(n):
            node = g.X[j] if which == 1 else g.N[j]
            d = node[2:4] - node[0:2]
            r[row] = d @ d - problem.rho ** 2
            if jacobian:
                c = node_col(j, which)
                Jm[row, c:c + 2] = -2 * d
                Jm[row, c + 2:c + 4] = 2 * d
            row += 1
    # the level at every periapsis: the depth of each passage is seen only
    # weakly through the matching conditions
    for j in range(n):
        Pj = g.P[j]
        r[row] = _reg_hamiltonian(Pj, a1, a2, mu, E) - mu * al
        if jacobian:
            c = node_col(j, 0)
            h = 1e-30
            for i in range(8):
                zc = Pj.astype(complex)
                zc[i] += 1j * h
                Jm[row, c + i] = _reg_hamiltonian(zc, a1, a2, mu, E).imag / h
        row += 1
    P0 = g.P[0]
    if with_phi:
        r[row] = _reg_angular_momentum(P0) - problem.chain.angular_momentum
        if jacobian:
            Jm[row, 0:8] = [P0[3], -P0[2], -P0[1], P0[0],
                            0.5 * P0[7], -0.5 * P0[6], -0.5 * P0[5], 0.5 * P0[4]]
        row += 1
    r[row] = g.gauge @ P0[0:2]
    if jacobian:
        Jm[row, 0:2] = g.gauge
    return r, Jm, legs_d


def _closure(r, n) -> float:
    return float(np.max(np.abs(r[:24 * n])))


# --- solution -----------------------------------------------------------------

@dataclass
class ShadowOrbit:
    """Periodic orbit of the full problem shadowing a collision chain."""

    problem: ShootingProblem
    nodes: ShootingGuess
    period: float
    phi: float
    residual: float
    iterations: int
    monodromy_factors: list = field(repr=False)
    times: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)
    history: list = field(default_factory=list, repr=False)

    @property
    def monodromy(self) -> np.ndarray:
        M = np.eye(8)
        for F in self.monodromy_factors:
            M = F @ M
        return M

    @property
    def min_delta(self) -> float:
        """Closest approach of the two small bodies over the period."""
        return float(min(p[4:6] @ p[4:6] for p in self.nodes.P))

    @property
    def angular_momentum(self) -> float:
        return float(_reg_angular_momentum(self.nodes.P[0]))

    @property
    def energy(self) -> float:
        return self.problem.energy

    def positions(self) -> np.ndarray:
        return self.states[:, 0:4].reshape(-1, 2, 2)

    def energies(self) -> np.ndarray:
        from .regularized_flow import PhaseState, hamiltonian_H

        m = self.problem.masses
        return np.array([hamiltonian_H(PhaseState.from_array(np.append(s, 0.0)), m)
                         for s in self.states])

    def angular_momenta(self) -> np.ndarray:
        s = self.states
        return (s[:, 0] * s[:, 5] - s[:, 1] * s[:, 4]) + (s[:, 2] * s[:, 7] - s[:, 3] * s[:, 6])

    def write_csv(self, path) -> None:
        """Trajectory samples ``t, q1x, q1y, q2x, q2y, p1x, p1y, p2x, p2y``."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "q1x", "q1y", "q2x", "q2y", "p1x", "p1y", "p2x", "p2y"])
            for t, s in zip(self.times, self.states):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in s])


def _sample_orbit(problem, legs: _Legs, g: ShootingGuess, times):
    """Heliocentric samples over one period starting at the first periapsis."""
    m, E, n = problem.masses, problem.energy, problem.n
    a1, a2 = m.alpha1, m.alpha2
    ts, zs = [], []
    t = 0.0

    def add(rec, t0, regularized, rotate=None):
        for z in rec:
            zz = _regularized_to_phase(z[:8], a1, a2) if regularized else z[:8]
            if rotate is not None:
                zz = rotate @ zz
            ts.append(t0 + z[8])
            zs.append(zz)

    for j in range(n):
        rec = legs.plus[j].record(np.append(g.P[j], 0.0), g.sigma_plus[j], m, E)
        add(rec[:-1], t, True)
        t += times[j][0]
        rec = legs.outer[j].record(np.append(g.X[j], 0.0), g.duration[j], m, E)
        add(rec, t, False)
        t += times[j][2]
        jn = (j + 1) % n
        rec = legs.minus[jn].record(np.append(g.P[jn], 0.0), -g.sigma_minus[jn], m, E)
        t += times[jn][1]
        rec = rec[::-1]
        add(rec[1:-1] if j + 1 < n else rec[1:], t, True,
            rotate=None if j + 1 < n else _rotation_phase(g.phi))
    return np.array(ts), np.array(zs), t


def _monodromy_factors(problem, g: ShootingGuess, legs_d) -> list:
    """Leg Jacobians whose product, first factor applied first, is the monodromy at ``P_0``.

    Each factor is expressed in coordinates where the light body's momenta
    and the regularised momenta are rescaled to order one.
    """
    m = problem.masses
    lc = np.diag([1, 1, 1, 1, 1, 1, 1 / m.alpha, 1 / m.alpha])
    cart = np.diag([1, 1, 1, 1, 1 / m.alpha1, 1 / m.alpha1, 1, 1])

    def scaled(F, to, frm):
        return to @ F @ np.linalg.inv(frm)

    factors = []
    n = problem.n
    for j in range(n):
        factors.append(scaled(legs_d["plus"][j][:, :8], cart, lc))
        outer = legs_d["outer"][j][:8, :8]
        if j + 1 == n:
            outer = np.linalg.solve(_rotation_phase(g.phi), outer)
        factors.append(scaled(outer, cart, cart))
        back = legs_d["minus"][(j + 1) % n][:, :8]
        factors.append(scaled(np.linalg.inv(back), lc, cart))
    return factors


def _gauss_newton(problem, legs, g, weights, tol, max_iter, history):
    with_phi = problem.variant == "fixed-EG"
    r, Jm, legs_d = _residual(problem, legs, g)
    for it in range(max_iter + 1):
        history.append(_closure(r, problem.n))
        if history[-1] <= tol and np.max(np.abs(r)) <= tol:
            return g, r, legs_d, it
        if it == max_iter:
            break
        A = weights[:, None] * Jm
        colscale = np.linalg.norm(A, axis=0)
        colscale[colscale == 0.0] = 1.0
        rw = weights * r
        step = np.linalg.lstsq(A / colscale, -rw, rcond=None)[0] / colscale
        z = g.pack(with_phi)
        base = float(rw @ rw)
        lam = 1.0
        while True:
            trial = g.unpack(z + lam * step, with_phi)
            if (np.all(trial.sigma_plus > 0) and np.all(trial.sigma_minus > 0)
                    and np.all(trial.duration > 0)):
                rt, Jt, lt = _residual(problem, legs, trial)
                if np.all(np.isfinite(rt)):
                    wr = weights * rt
                    with np.errstate(over="ignore"):
                        accepted = float(wr @ wr) < base
                    if accepted:
                        break
            lam *= 0.5
            if lam < 1e-6:
                if history[-1] <= 100 * tol:
                    return g, r, legs_d, it
                raise ShootingError("line search failed", history)
        g, r, Jm, legs_d = trial, rt, Jt, lt
    raise ShootingError("shooting iteration did not converge", history)


def solve_periodic_orbit(problem: ShootingProblem, guess: ShootingGuess | None = None,
                         tol: float = 1e-11, max_iter: int = 30, remesh: int = 3) -> ShadowOrbit:
    """Gauss-Newton multiple shooting for the shadowing periodic orbit.

    Meshes are rebuilt at each converged iterate until the residual on
    fresh meshes stays below ``tol``.
    """
    g = guess or build_initial_guess(problem)
    weights = _row_weights(problem)
    history: list = []
    iterations = 0
    for attempt in range(remesh):
        try:
            legs = _build_legs(problem, g)
        except IntegrationError as exc:
            raise ShootingError(f"mesh construction failed: {exc}", history) from exc
        g, r, legs_d, its = _gauss_newton(problem, legs, g, weights, tol, max_iter, history)
        iterations += its
        if its == 0 and attempt > 0:
            break
    residual = _closure(r, problem.n)
    times, states, period = _sample_orbit(problem, legs, g, legs_d["times"])
    return ShadowOrbit(
        problem=problem, nodes=g, period=period, phi=g.phi, residual=residual,
        iterations=iterations, monodromy_factors=_monodromy_factors(problem, g, legs_d),
        times=times, states=states, history=history,
    )


def _normalized_unknowns(orbit: ShadowOrbit) -> tuple[np.ndarray, np.ndarray]:
    """Unknowns with the ``sqrt(mu)`` depth scaling removed, and the passage rates ``kappa``."""
    g, problem = orbit.nodes, orbit.problem
    mu, al = problem.mu, problem.masses.alpha
    kappa = np.empty(len(g.P))
    for j, node in enumerate(g.P):
        lam = problem.energy + 1.0 / np.linalg.norm(node[0:2]) - (1 + mu) * node[2:4] @ node[2:4] / 2
        kappa[j] = math.sqrt(lam / (2 * al))
    P = g.P.copy()
    P[:, 4:8] /= math.sqrt(mu)
    shift = 0.5 * math.log(mu) / kappa
    z = ShootingGuess(P, g.X, g.N, g.sigma_plus + shift, g.sigma_minus + shift, g.duration,
                      g.phi, g.gauge).pack(True)
    return z, kappa


def continuation_guess(orbit: ShadowOrbit, mu: float, previous: ShadowOrbit | None = None
                       ) -> ShootingGuess:
    """Predictor for coupling ``mu`` from one or two solved orbits.

    The depth of each passage scales like ``sqrt(mu)`` and its span like
    ``-log(mu) / (2 kappa)``; these are factored out, and the remaining
    unknowns are kept (one orbit) or extrapolated linearly in ``mu`` (two).
    """
    z1, kappa = _normalized_unknowns(orbit)
    if previous is not None:
        z0, _ = _normalized_unknowns(previous)
        mu1, mu0 = orbit.problem.mu, previous.problem.mu
        z1 = z1 + (z1 - z0) * (mu - mu1) / (mu1 - mu0)
    g = orbit.nodes.unpack(z1, True)
    g.P[:, 4:8] *= math.sqrt(mu)
    shift = 0.5 * math.log(mu) / kappa
    with_phi = orbit.problem.variant == "fixed-EG"
    return ShootingGuess(g.P, g.X, g.N, g.sigma_plus - shift, g.sigma_minus - shift, g.duration,
                         g.phi if with_phi else orbit.nodes.phi, g.gauge)


def _continue_to(chain, orbit, previous, target, rho, variant, tol, max_ratio, min_ratio):
    """Adaptive continuation from ``orbit`` to coupling ``target``."""
    log_step = math.log(max_ratio) / 2.0
    while orbit.problem.mu != target:
        ratio = target / orbit.problem.mu
        step = min(log_step, abs(math.log(ratio)))
        mu = target if step >= abs(math.log(ratio)) else orbit.problem.mu * math.exp(
            math.copysign(step, math.log(ratio)))
        try:
            guess = continuation_guess(orbit, mu, previous)
            new = solve_periodic_orbit(ShootingProblem(chain, mu, rho, variant), guess, tol=tol)
        except (ShootingError, ValueError, IntegrationError) as exc:
            log_step /= 2.0
            if log_step < math.log(min_ratio):
                raise ShootingError(f"continuation stalled at mu={orbit.problem.mu:.4g} "
                                    f"towards {target:.4g}: {exc}") from exc
            continue
        orbit, previous = new, orbit
        if new.iterations <= 6:
            log_step = min(2.0 * log_step, math.log(max_ratio))
    return orbit, previous


def trace_orbits(chain: CollisionChain, mus, rho: float = 0.05, variant: str = "fixed-EG",
                 tol: float = 1e-11, max_ratio: float = math.sqrt(10.0),
                 min_ratio: float = 1.0 + 1e-3, start_mu: float | None = None) -> dict:
    """Shadowing orbits for every ``mu`` in ``mus`` by continuation in ``mu``.

    The first orbit is solved from the chain at ``start_mu`` (default: the
    smallest requested value); if that fails the start is lowered by
    decades.  The continuation step adapts between ``min_ratio`` and
    ``max_ratio``.  Returns a mapping ``mu -> ShadowOrbit``.
    """
    targets = sorted({float(m) for m in mus})
    start = start_mu or targets[0]
    orbit = None
    for _ in range(4):
        try:
            orbit = solve_periodic_orbit(ShootingProblem(chain, start, rho, variant), tol=tol)
            break
        except (ShootingError, ValueError, IntegrationError):
            start /= 10.0
    if orbit is None:
        raise ShootingError("no starting orbit for the continuation")
    previous = None
    found = {}
    for target in targets:
        try:
            orbit, previous = _continue_to(chain, orbit, previous, target, rho, variant, tol,
                                           max_ratio, min_ratio)
        except ShootingError as exc:
            exc.partial = found
            raise
        found[target] = orbit
    return found


# --- diagnostics --------------------------------------------------------------

def shadow_distance(orbit: ShadowOrbit, chain: CollisionChain | None = None, align: bool = True
                    ) -> tuple[float, float, float]:
    """Sup distance in configuration space between orbit and chain.

    Minimised over a time shift and a rotation of the chain when ``align``
    is set.  Returns ``(distance, time_shift, rotation)``.
    """
    chain = chain or orbit.problem.chain
    t = orbit.times
    q = orbit.positions()

    def dist(params):
        shift, theta = params
        qc = chain_positions(chain, t + shift) @ _rot(theta).T
        return float(np.max(np.sqrt(np.sum((q - qc) ** 2, axis=(1, 2)))))

    base = dist((0.0, 0.0))
    if not align:
        return base, 0.0, 0.0
    mu = orbit.problem.mu
    simplex = np.array([[0.0, 0.0], [mu, 0.0], [0.0, mu]])
    res = minimize(dist, np.zeros(2), method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": 1e-4 * mu,
                            "fatol": 1e-6 * base, "maxiter": 300})
    if res.fun < base:
        return float(res.fun), float(res.x[0]), float(res.x[1])
    return base, 0.0, 0.0


@dataclass(frozen=True)
class Multipliers:
    values: np.ndarray
    trivial: np.ndarray
    nontrivial: np.ndarray
    conditioning: float
    trivial_deviation: float
    reciprocity_defect: float

    @property
    def lambda1(self) -> float:
        """Largest real non-trivial multiplier."""
        real = [v.real for v in self.nontrivial if abs(v.imag) <= 1e-9 * abs(v)]
        return float(max(real, key=abs)) if real else math.nan

    @property
    def lambda2(self) -> complex:
        """Representative of the non-trivial pair not containing ``lambda1``."""
        l1 = self.lambda1
        rest = [v for v in self.nontrivial
                if not (abs(v - l1) <= 1e-9 * abs(l1) or abs(v * l1 - 1) <= 1e-6)]
        if not rest:
            return complex(math.nan, math.nan)
        return complex(max(rest, key=lambda v: (abs(v), v.imag)))


def cyclic_eigenvalues(factors) -> np.ndarray:
    """Eigenvalues of the product ``F_k ... F_1`` without forming it.

    The block-cyclic matrix with blocks ``F_i`` has eigenvalues ``z`` with
    ``z^k`` running over the eigenvalues of the product, each ``k`` times;
    the roots closest to the positive real axis are kept.  The accuracy is
    set by the factors, not by the (possibly huge) product.
    """
    k = len(factors)
    d = factors[0].shape[0]
    Z = np.zeros((k * d, k * d))
    for i, F in enumerate(factors):
        Z[((i + 1) % k) * d:((i + 1) % k + 1) * d, i * d:(i + 1) * d] = F
    roots = np.linalg.eigvals(Z)
    principal = roots[np.argsort(np.abs(np.angle(roots)), kind="stable")[:d]]
    return principal ** k


def compute_multipliers(orbit: ShadowOrbit) -> Multipliers:
    """Floquet multipliers from the leg Jacobians of the shooting solution.

    ``conditioning`` is the largest 2-norm condition number of the factors;
    it bounds the amplification of rounding in the eigenvalues of the
    block-cyclic pencil.
    """
    vals = cyclic_eigenvalues(orbit.monodromy_factors)
    order = np.argsort(np.abs(vals - 1.0))
    trivial, nontrivial = vals[order[:4]], vals[order[4:]]
    defect = 0.0
    for v in nontrivial:
        defect = max(defect, float(np.min(np.abs(v * nontrivial - 1.0))))
    return Multipliers(
        values=vals, trivial=trivial, nontrivial=nontrivial,
        conditioning=float(max(np.linalg.cond(F) for F in orbit.monodromy_factors)),
        trivial_deviation=float(np.max(np.abs(trivial - 1.0))),
        reciprocity_defect=defect,
    )


def verify_shadowing(orbit: ShadowOrbit, chain: CollisionChain | None = None) -> dict:
    """Shadowing diagnostics of a solved orbit against its chain."""
    chain = chain or orbit.problem.chain
    sup, shift, theta = shadow_distance(orbit, chain)
    mult = compute_multipliers(orbit)
    l2 = mult.lambda2
    return {
        "mu": orbit.problem.mu,
        "T_mu": float(orbit.period),
        "Phi_mu": float(orbit.phi),
        "sup_dist": sup,
        "min_delta": orbit.min_delta,
        "lambda1": mult.lambda1,
        "lambda2_re": l2.real,
        "lambda2_im": l2.imag,
        "residual": orbit.residual,
        "period_error": float(abs(orbit.period - chain.period)),
        "phi_error": float(abs(orbit.phi - chain.phi)),
        "time_shift": shift,
        "rotation": theta,
        "energy_error": float(np.max(np.abs(orbit.energies() - orbit.energy))),
        "angular_momentum_error": float(np.max(np.abs(
            orbit.angular_momenta() - orbit.angular_momentum))),
        "trivial_deviation": mult.trivial_deviation,
        "monodromy_conditioning": mult.conditioning,
        "reciprocity_defect": mult.reciprocity_defect,
        "multipliers": [[float(v.real), float(v.imag)] for v in mult.values],
    }


SWEEP_FIELDS = ("mu", "T_mu", "Phi_mu", "sup_dist", "min_delta", "lambda1", "lambda2_re",
                "lambda2_im", "residual")


def mu_sweep(chain: CollisionChain, mus, rho: float = 0.05, variant: str = "fixed-EG",
             tol: float = 1e-11) -> list[dict]:
    """Solve and verify the shadowing orbit for each ``mu``; one report row per value."""
    orbits = trace_orbits(chain, mus, rho, variant, tol)
    return [verify_shadowing(orbits[float(mu)], chain) for mu in mus]


def fit_log_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def log_growth_fit(mus, values) -> dict:
    """Compare ``c1 |ln mu| + c2`` against a constant fit of ``values``."""
    x = np.abs(np.log(np.asarray(mus, float)))
    v = np.asarray(values, float)
    c1, c2 = np.polyfit(x, v, 1)
    return {
        "c1": float(c1), "c2": float(c2),
        "rss_log": float(np.sum((c1 * x + c2 - v) ** 2)),
        "rss_const": float(np.sum((v - v.mean()) ** 2)),
    }


def sweep_summary(rows) -> dict:
    """Scaling fits across a sweep: O(mu) slopes, the periapsis band and multiplier trends."""
    rows = sorted(rows, key=lambda r: -r["mu"])
    mus = [r["mu"] for r in rows]
    out = {"mus": mus}
    if len(rows) >= 2:
        out["sup_dist_slope"] = fit_log_slope(mus, [r["sup_dist"] for r in rows])
        out["period_error_slope"] = fit_log_slope(mus, [r["period_error"] for r in rows])
        l1 = [r["lambda1"] for r in rows]
        out["lambda1_increasing"] = bool(all(b > a for a, b in zip(l1, l1[1:])))
        out["lambda1_fit"] = log_growth_fit(mus, l1)
    ratios = [r["min_delta"] / r["mu"] for r in rows]
    out["min_delta_band"] = [min(ratios), max(ratios)]
    out["min_delta_band_ratio"] = max(ratios) / min(ratios)
    l2 = [complex(r["lambda2_re"], r["lambda2_im"]) for r in rows]
    steps = [abs(b - a) for a, b in zip(l2, l2[1:])]
    out["lambda2_steps"] = steps
    out["lambda2_cauchy"] = bool(all(b < a for a, b in zip(steps, steps[1:])))
    out["trivial_within_tolerance"] = bool(all(
        r["trivial_deviation"] <= 1e-5 * r["monodromy_conditioning"] for r in rows))
    return out


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(row[k])) for k in SWEEP_FIELDS})

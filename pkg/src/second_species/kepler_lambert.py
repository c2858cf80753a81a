"""Planar Kepler problem and Lambert connecting arcs.

Units are normalised so that the gravitational parameter is 1 and the unit
Kepler Hamiltonian is ``|v|^2/2 - 1/|x|``.  Plane points are numpy arrays of
shape ``(2,)``; internally they are handled as complex numbers so that a
rotation by ``theta`` is multiplication by ``exp(1j*theta)``.

The connecting arc family is indexed by the revolution count ``n``:
``n >= 0`` is a counterclockwise arc making ``n`` extra full turns, ``n < 0``
is clockwise.  All arcs live on the ellipse whose second focus lies to the
left of the directed chord ``x_minus -> x_plus``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

TWO_PI = 2.0 * math.pi


class DomainError(ValueError):
    """Endpoints or parameters lie outside the admissible domain."""


class NoSolutionError(ValueError):
    """Fixed-time Lambert problem has no solution on the requested branch."""

    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


class CollisionError(RuntimeError):
    """Kepler orbit passes through the attracting centre."""


def as_complex(p) -> complex:
    if isinstance(p, (complex, np.complexfloating)):
        return complex(p)
    p = np.asarray(p, dtype=float)
    if p.shape != (2,):
        raise ValueError(f"expected a plane point of shape (2,), got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("plane point has non-finite components")
    return complex(p[0], p[1])


def as_point(z: complex) -> np.ndarray:
    return np.array([z.real, z.imag])


def rotate(p, theta: float) -> np.ndarray:
    return as_point(as_complex(p) * complex(math.cos(theta), math.sin(theta)))


def cross(a: complex, b: complex) -> float:
    return a.real * b.imag - a.imag * b.real


def sgn(n: int) -> int:
    # sgn 0 = 1
    return 1 if n >= 0 else -1


# --- Lambert's closed form ---------------------------------------------------

def _half_angle(s: float) -> float:
    """Return ``alpha/2`` with ``sin(alpha/2) = sqrt(s)/2``."""
    return math.atan2(math.sqrt(max(s, 0.0)), math.sqrt(max(4.0 - s, 0.0)))


def lambert_W(s: float) -> float:
    """Lambert's function ``W(s) = sqrt((4-s)s)/2 + 2 arctan sqrt(s/(4-s))``.

    Defined on ``0 <= s <= 4``; ``W(4) = pi`` by continuity.
    """
    if not (0.0 <= s <= 4.0):
        raise DomainError(f"W(s) requires 0 <= s <= 4, got {s!r}")
    return 0.5 * math.sqrt(max((4.0 - s) * s, 0.0)) + 2.0 * _half_angle(s)


def _alpha_minus_sin(s: float) -> float:
    """``W(s) - 2 s W'(s) = alpha - sin(alpha)``; series near ``alpha = 0``."""
    a = 2.0 * _half_angle(s)
    if a < 0.05:
        a2 = a * a
        return a * a2 / 6.0 * (1.0 - a2 / 20.0 * (1.0 - a2 / 42.0 * (1.0 - a2 / 72.0)))
    return a - math.sin(a)


def _dW(s: float) -> float:
    return 0.5 * math.sqrt(max(4.0 - s, 0.0) / s)


def _s_pair(xm: complex, xp: complex) -> tuple[float, float]:
    rm, rp, c = abs(xm), abs(xp), abs(xp - xm)
    return rm + rp + c, rm + rp - c


def _branch_sign(xm: complex, xp: complex) -> int:
    """-1 if the counterclockwise angle from x_minus to x_plus is in (0, pi], else +1."""
    theta = math.atan2(cross(xm, xp), (xm.conjugate() * xp).real)
    if theta < 0.0:
        theta += TWO_PI
    return -1 if 0.0 < theta <= math.pi else 1


def in_domain(x_minus, x_plus, scale: float = 1.0) -> bool:
    """Membership of ``(scale*x_minus, scale*x_plus)`` in the unit-axis domain X."""
    xm, xp = scale * as_complex(x_minus), scale * as_complex(x_plus)
    if xm == 0 or xp == 0:
        return False
    rm, rp, c = abs(xm), abs(xp), abs(xp - xm)
    return abs(rp - rm) < c < 4.0 - rm - rp


def _check_domain(xm: complex, xp: complex, scale: float = 1.0):
    if not in_domain(xm, xp, scale):
        raise DomainError(
            f"endpoints {xm!r}, {xp!r} are outside X at semimajor axis {1.0 / scale:g}"
        )


def second_focus(x_minus, x_plus) -> np.ndarray:
    """Second focus of the unit-semimajor-axis ellipse through both points.

    Solves ``|x| + |x - F| = 2`` at both endpoints and returns the solution
    to the left of the directed chord.
    """
    xm, xp = as_complex(x_minus), as_complex(x_plus)
    _check_domain(xm, xp)
    return as_point(_focus(xm, xp))


def _focus(xm: complex, xp: complex) -> complex:
    r1, r2 = 2.0 - abs(xm), 2.0 - abs(xp)
    d = xp - xm
    c = abs(d)
    along = (c * c + r1 * r1 - r2 * r2) / (2.0 * c)
    h = math.sqrt(max(r1 * r1 - along * along, 0.0))
    e = d / c
    return xm + along * e + h * 1j * e


def lambert_f(x_minus, x_plus) -> float:
    """Maupertuis action of the simple counterclockwise arc at unit semimajor axis."""
    xm, xp = as_complex(x_minus), as_complex(x_plus)
    _check_domain(xm, xp)
    sp, sm = _s_pair(xm, xp)
    return lambert_W(min(sp, 4.0)) + _branch_sign(xm, xp) * lambert_W(max(sm, 0.0))


# --- energy-parametrised family ---------------------------------------------

@dataclass(frozen=True)
class _Geometry:
    xm: complex
    xp: complex
    s_plus: float
    s_minus: float
    branch: int

    @classmethod
    def of(cls, x_minus, x_plus):
        xm, xp = as_complex(x_minus), as_complex(x_plus)
        sp, sm = _s_pair(xm, xp)
        return cls(xm, xp, sp, max(sm, 0.0), _branch_sign(xm, xp))

    @property
    def energy_floor(self) -> float:
        """Lowest admissible energy (minimum-energy ellipse)."""
        return -2.0 / self.s_plus

    def admissible(self, E: float) -> bool:
        return E < 0.0 and in_domain(self.xm, self.xp, -2.0 * E)

    def action(self, n: int, E: float) -> float:
        c = -2.0 * E
        f = lambert_W(min(c * self.s_plus, 4.0)) + self.branch * lambert_W(c * self.s_minus)
        return c ** -0.5 * (TWO_PI * abs(n) + sgn(n) * f)

    def _kepler_m(self, n: int, c: float) -> float:
        g = _alpha_minus_sin(min(c * self.s_plus, 4.0)) + self.branch * _alpha_minus_sin(
            c * self.s_minus
        )
        return TWO_PI * abs(n) + sgn(n) * g

    def tof(self, n: int, E: float) -> float:
        c = -2.0 * E
        return c ** -1.5 * self._kepler_m(n, c)

    def dtof_dE(self, n: int, E: float) -> float:
        c = -2.0 * E
        sp, sm = c * self.s_plus, c * self.s_minus
        if sp >= 4.0:
            return -sgn(n) * math.inf
        term = sp ** 1.5 / math.sqrt(4.0 - sp)
        if sm > 0.0:
            term += self.branch * sm ** 1.5 / math.sqrt(4.0 - sm)
        return c ** -2.5 * (3.0 * self._kepler_m(n, c) - sgn(n) * term)


def action_J(n: int, E: float, x_minus, x_plus) -> float:
    """Maupertuis action ``J_n(E, x_minus, x_plus)`` of the n-revolution arc."""
    geo = _geometry_at(E, x_minus, x_plus)
    return geo.action(n, E)


def time_of_flight(n: int, E: float, x_minus, x_plus) -> float:
    """Transfer time ``dJ_n/dE`` (Kepler's time equation in Lagrange form)."""
    geo = _geometry_at(E, x_minus, x_plus)
    return geo.tof(n, E)


def dtof_dE(n: int, E: float, x_minus, x_plus) -> float:
    """Second energy derivative of ``J_n``."""
    geo = _geometry_at(E, x_minus, x_plus)
    return geo.dtof_dE(n, E)


def _geometry_at(E, x_minus, x_plus) -> _Geometry:
    if not E < 0.0:
        raise DomainError(f"energy must be negative, got {E!r}")
    geo = _Geometry.of(x_minus, x_plus)
    if not geo.admissible(E):
        raise DomainError(f"endpoints outside X_E at E={E!r}")
    return geo


def arc_velocities(n: int, E: float, x_minus, x_plus) -> tuple[np.ndarray, np.ndarray]:
    """Endpoint velocities of the arc, from the ellipse geometry.

    The tangent at a point of the ellipse is normal to the sum of the unit
    vectors from the two foci; the speed follows from the energy.
    """
    geo = _geometry_at(E, x_minus, x_plus)
    c = -2.0 * E
    focus = _focus(c * geo.xm, c * geo.xp) / c
    out = []
    for x in (geo.xm, geo.xp):
        normal = x / abs(x) + (x - focus) / abs(x - focus)
        t = 1j * normal / abs(normal)
        if sgn(n) * cross(x, t) < 0.0:
            t = -t
        out.append(as_point(math.sqrt(2.0 * (E + 1.0 / abs(x))) * t))
    return out[0], out[1]


def endpoint_momenta(arc) -> tuple[np.ndarray, np.ndarray]:
    """Momenta ``(y_minus, y_plus)`` at the ends of a solved arc.

    These are the partial derivatives ``-dF/dx_minus`` and ``dF/dx_plus`` of
    the fixed-time action, obtained from the orbit geometry.
    """
    return arc_velocities(arc.n, arc.energy, arc.x_minus, arc.x_plus)


# --- fixed-time problem ------------------------------------------------------

_GRID = 400


def monotone_branches(n: int, x_minus, x_plus) -> list[tuple[float, float]]:
    """Split the admissible energy interval into pieces where ``tof`` is monotone.

    Returns a list of ``(E_lo, E_hi)`` intervals ordered by energy.
    """
    geo = _Geometry.of(x_minus, x_plus)
    _check_domain(geo.xm, geo.xp, -2.0 * geo.energy_floor * (1 - 1e-9))
    return list(_branches_cached(n, geo))


@lru_cache(maxsize=4096)
def _branches_cached(n: int, geo: _Geometry) -> tuple[tuple[float, float], ...]:
    lo = geo.energy_floor
    # u in (0, 1) maps to E = lo * u; u -> 1 is the minimum-energy ellipse
    us = np.linspace(0.0, 1.0, _GRID + 2)[1:-1] ** 0.5
    d = np.array([geo.dtof_dE(n, lo * u) for u in us])
    cuts = []
    for i in range(len(us) - 1):
        if np.sign(d[i]) != np.sign(d[i + 1]):
            u0 = brentq(lambda u: geo.dtof_dE(n, lo * u), us[i], us[i + 1], xtol=1e-15)
            cuts.append(lo * u0)
    edges = [lo] + sorted(cuts) + [0.0]
    return tuple((edges[i], edges[i + 1]) for i in range(len(edges) - 1))


def _tof_limit(geo: _Geometry, n: int, E: float) -> float:
    if E == 0.0:
        if n != 0:
            return math.inf
        # parabolic limit of the Lagrange form
        return (geo.s_plus ** 1.5 + geo.branch * geo.s_minus ** 1.5) / 6.0
    return geo.tof(n, E)


def attainable_interval(n: int, x_minus, x_plus, branch: tuple[float, float]):
    geo = _Geometry.of(x_minus, x_plus)
    a, b = _tof_limit(geo, n, branch[0]), _tof_limit(geo, n, branch[1])
    return (min(a, b), max(a, b))


@dataclass(frozen=True)
class LambertArc:
    """A solved n-revolution connecting arc of the unit Kepler problem."""

    n: int
    energy: float
    tof: float
    x_minus: np.ndarray
    x_plus: np.ndarray
    second_focus: np.ndarray
    action_J: float
    action_F: float
    y_minus: np.ndarray
    y_plus: np.ndarray
    dtof_dE: float

    @property
    def semimajor_axis(self) -> float:
        return -0.5 / self.energy

    @property
    def eccentricity(self) -> float:
        return float(np.linalg.norm(self.second_focus)) / (2.0 * self.semimajor_axis)


def arc_at_energy(n: int, E: float, x_minus, x_plus) -> LambertArc:
    """Build the full arc record at fixed energy."""
    geo = _geometry_at(E, x_minus, x_plus)
    c = -2.0 * E
    tau = geo.tof(n, E)
    J = geo.action(n, E)
    ym, yp = arc_velocities(n, E, x_minus, x_plus)
    return LambertArc(
        n=n,
        energy=E,
        tof=tau,
        x_minus=as_point(geo.xm),
        x_plus=as_point(geo.xp),
        second_focus=as_point(_focus(c * geo.xm, c * geo.xp) / c),
        action_J=J,
        action_F=J - tau * E,
        y_minus=ym,
        y_plus=yp,
        dtof_dE=geo.dtof_dE(n, E),
    )


def solve_fixed_time(
    n: int,
    tau: float,
    x_minus,
    x_plus,
    energy_guess: float | None = None,
    branch: int | None = None,
    rtol: float = 1e-12,
) -> LambertArc:
    """Solve Lambert's problem for a prescribed transfer time.

    The admissible energy interval is cut into pieces on which the transfer
    time is monotone.  The piece is chosen by ``energy_guess`` (the piece that
    contains it), else by index ``branch``, else the increasing piece for
    ``n != 0`` and the single piece for ``n = 0``.  A safeguarded Newton
    iteration is then run inside the piece.
    """
    if not tau > 0.0:
        raise NoSolutionError(f"transfer time must be positive, got {tau!r}")
    geo = _Geometry.of(x_minus, x_plus)
    if not in_domain(geo.xm, geo.xp, -2.0 * geo.energy_floor * (1 - 1e-12)):
        raise DomainError("endpoints are not joinable by any ellipse (outside X)")
    if energy_guess is not None and branch is None:
        E = _local_newton(geo, n, tau, energy_guess, rtol)
        if E is not None:
            return _arc_at_time(n, E, tau, x_minus, x_plus)
    pieces = _branches_cached(n, geo)
    piece = _select_piece(n, geo, pieces, energy_guess, branch)
    lo_t, hi_t = _tof_limit(geo, n, piece[0]), _tof_limit(geo, n, piece[1])
    if not min(lo_t, hi_t) < tau < max(lo_t, hi_t):
        raise NoSolutionError(
            f"tof {tau:.15g} outside attainable interval ({min(lo_t, hi_t):.15g}, "
            f"{max(lo_t, hi_t):.15g}) for n={n}",
            interval=(min(lo_t, hi_t), max(lo_t, hi_t)),
        )
    E = _safeguarded_newton(geo, n, tau, piece, energy_guess, rtol)
    return _arc_at_time(n, E, tau, x_minus, x_plus)


def _arc_at_time(n, E, tau, x_minus, x_plus) -> LambertArc:
    # pin the requested time so arcs solved for a common tau share it exactly
    arc = arc_at_energy(n, E, x_minus, x_plus)
    tau = float(tau)
    return replace(arc, tof=tau, action_F=arc.action_J - tau * E)


def _select_piece(n, geo, pieces, energy_guess, branch):
    if energy_guess is not None:
        for p in pieces:
            if p[0] <= energy_guess <= p[1]:
                return p
        return pieces[0] if energy_guess < pieces[0][0] else pieces[-1]
    if branch is not None:
        return pieces[branch]
    if n == 0 or len(pieces) == 1:
        return pieces[-1]
    for p in reversed(pieces):
        mid = 0.5 * (p[0] + p[1])
        if geo.dtof_dE(n, mid) > 0.0:
            return p
    return pieces[-1]


def _local_newton(geo, n, tau, E0, rtol):
    """Plain Newton from a nearby guess; ``None`` if it leaves the monotone piece."""
    if not geo.energy_floor < E0 < 0.0:
        return None
    d0 = geo.dtof_dE(n, E0)
    if not math.isfinite(d0) or d0 == 0.0:
        return None
    E = E0
    for _ in range(30):
        d = geo.dtof_dE(n, E)
        if not math.isfinite(d) or d * d0 <= 0.0:
            return None
        r = geo.tof(n, E) - tau
        step = r / d
        E_new = E - step
        if not geo.energy_floor < E_new < 0.0:
            return None
        E = E_new
        if abs(step) <= 1e-15 * abs(E):
            break
    d = geo.dtof_dE(n, E)
    if d * d0 <= 0.0 or abs(geo.tof(n, E) - tau) > rtol * max(1.0, tau):
        return None
    return E


def _safeguarded_newton(geo, n, tau, piece, guess, rtol):
    a, b = piece
    # keep strictly inside; both ends may be singular
    span = b - a
    a_in, b_in = a + 1e-15 * span, b - 1e-15 * abs(a)
    resid = lambda E: geo.tof(n, E) - tau
    ra = resid(a_in)
    increasing = geo.dtof_dE(n, 0.5 * (a + b)) > 0.0
    lo, hi = a_in, b_in
    # shrink the open end towards E=0 where tof may diverge
    E = guess if guess is not None and lo < guess < hi else 0.5 * (lo + hi)
    for _ in range(200):
        r = resid(E)
        if abs(r) <= 1e-15 * max(1.0, tau):
            break
        if (r > 0) == increasing:
            hi = E
        else:
            lo = E
        d = geo.dtof_dE(n, E)
        step_ok = False
        if d != 0.0 and math.isfinite(d):
            E_new = E - r / d
            if lo < E_new < hi:
                step_ok = True
        if not step_ok:
            E_new = 0.5 * (lo + hi)
        if abs(E_new - E) <= 4e-16 * abs(E):
            E = E_new
            break
        E = E_new
    if abs(resid(E)) > rtol * max(1.0, tau):
        raise NoSolutionError(f"fixed-time solve did not converge (residual {resid(E):.3g})")
    del ra
    return E


# --- Kepler propagation ------------------------------------------------------

@dataclass(frozen=True)
class KeplerState:
    position: np.ndarray
    velocity: np.ndarray

    @property
    def energy(self) -> float:
        return 0.5 * float(self.velocity @ self.velocity) - 1.0 / float(np.linalg.norm(self.position))

    @property
    def angular_momentum(self) -> float:
        return float(self.position[0] * self.velocity[1] - self.position[1] * self.velocity[0])


def propagate_kepler(state: KeplerState, t: float) -> KeplerState:
    """Advance a unit Kepler state by time ``t`` (may be negative).

    Bound orbits use Kepler's equation in eccentric-anomaly-difference form
    with Lagrange f and g coefficients; unbound states fall back to numerical
    integration.
    """
    r0v = np.asarray(state.position, dtype=float)
    v0v = np.asarray(state.velocity, dtype=float)
    r0 = float(np.linalg.norm(r0v))
    if r0 == 0.0:
        raise CollisionError("state at the attracting centre")
    E = 0.5 * float(v0v @ v0v) - 1.0 / r0
    h = float(r0v[0] * v0v[1] - r0v[1] * v0v[0])
    if t == 0.0:
        return KeplerState(r0v.copy(), v0v.copy())
    if abs(h) < 1e-14 * r0 * max(1.0, float(np.linalg.norm(v0v))):
        raise CollisionError("rectilinear orbit reaches the attracting centre")
    if E >= 0.0:
        return _propagate_numeric(r0v, v0v, t)
    a = -0.5 / E
    nmean = a ** -1.5
    period = TWO_PI / nmean
    t_red = math.fmod(t, period)
    sigma0 = float(r0v @ v0v)
    dM = nmean * t_red
    # Kepler's equation for the eccentric-anomaly increment
    k1 = sigma0 / math.sqrt(a)
    k2 = 1.0 - r0 / a
    dE = dM
    for _ in range(60):
        f = dE + k1 * (1.0 - math.cos(dE)) - k2 * math.sin(dE) - dM
        fp = 1.0 + k1 * math.sin(dE) - k2 * math.cos(dE)
        step = f / fp
        dE -= step
        if abs(step) < 1e-16 * max(1.0, abs(dE)):
            break
    cE, sE = math.cos(dE), math.sin(dE)
    r = a + (r0 - a) * cE + sigma0 * math.sqrt(a) * sE
    fl = 1.0 - a / r0 * (1.0 - cE)
    gl = t_red - a ** 1.5 * (dE - sE)
    fd = -math.sqrt(a) / (r * r0) * sE
    gd = 1.0 - a / r * (1.0 - cE)
    return KeplerState(fl * r0v + gl * v0v, fd * r0v + gd * v0v)


def propagate_kepler_many(state: KeplerState, times) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`propagate_kepler` for a bound orbit; returns positions and velocities."""
    r0v = np.asarray(state.position, dtype=float)
    v0v = np.asarray(state.velocity, dtype=float)
    t = np.asarray(times, dtype=float)
    r0 = float(np.linalg.norm(r0v))
    E = 0.5 * float(v0v @ v0v) - 1.0 / r0
    if E >= 0.0:
        out = [propagate_kepler(state, float(tt)) for tt in t]
        return (np.array([o.position for o in out]), np.array([o.velocity for o in out]))
    a = -0.5 / E
    nmean = a ** -1.5
    t_red = np.fmod(t, TWO_PI / nmean)
    sigma0 = float(r0v @ v0v)
    dM = nmean * t_red
    k1 = sigma0 / math.sqrt(a)
    k2 = 1.0 - r0 / a
    dE = dM.copy()
    for _ in range(60):
        f = dE + k1 * (1.0 - np.cos(dE)) - k2 * np.sin(dE) - dM
        fp = 1.0 + k1 * np.sin(dE) - k2 * np.cos(dE)
        step = f / fp
        dE -= step
        if np.all(np.abs(step) < 1e-15 * np.maximum(1.0, np.abs(dE))):
            break
    cE, sE = np.cos(dE), np.sin(dE)
    r = a + (r0 - a) * cE + sigma0 * math.sqrt(a) * sE
    fl = 1.0 - a / r0 * (1.0 - cE)
    gl = t_red - a ** 1.5 * (dE - sE)
    fd = -math.sqrt(a) / (r * r0) * sE
    gd = 1.0 - a / r * (1.0 - cE)
    pos = fl[:, None] * r0v + gl[:, None] * v0v
    vel = fd[:, None] * r0v + gd[:, None] * v0v
    return pos, vel


def _propagate_numeric(r0v, v0v, t):
    def rhs(_, z):
        r = z[:2]
        d = (r @ r) ** 1.5
        return np.array([z[2], z[3], -r[0] / d, -r[1] / d])

    sol = solve_ivp(rhs, (0.0, t), np.concatenate([r0v, v0v]), method="DOP853",
                    rtol=1e-13, atol=1e-14)
    if not sol.success:
        raise CollisionError(sol.message)
    z = sol.y[:, -1]
    return KeplerState(z[:2], z[2:])


# --- reference quadratures ---------------------------------------------------

def _ellipse_frame(arc: LambertArc):
    a = arc.semimajor_axis
    focus = as_complex(arc.second_focus)
    e = abs(focus) / (2.0 * a)
    if e < 1e-13:
        u = as_complex(arc.x_minus)
        u /= abs(u)
    else:
        u = -focus / abs(focus)
    ccw = sgn(arc.n) > 0
    v = 1j * u if ccw else -1j * u
    centre = focus / 2.0
    b = a * math.sqrt(max(1.0 - e * e, 0.0))
    return a, b, e, centre, u, v


def _ecc_anomaly(z, a, b, centre, u, v):
    w = z - centre
    return math.atan2((w.conjugate() * v).real / b, (w.conjugate() * u).real / a)


def arc_quadrature(arc: LambertArc, nodes: int = 400) -> dict:
    """Reference actions of the arc by Gauss-Legendre quadrature.

    The arc is rebuilt in the eccentric-anomaly parametrisation from its
    second focus; returns the Maupertuis action, Hamilton's action and the
    elapsed time.
    """
    a, b, e, centre, u, v = _ellipse_frame(arc)
    E0 = _ecc_anomaly(as_complex(arc.x_minus), a, b, centre, u, v)
    E1 = _ecc_anomaly(as_complex(arc.x_plus), a, b, centre, u, v)
    sweep = (E1 - E0) % TWO_PI
    sweep += TWO_PI * (abs(arc.n) if arc.n >= 0 else abs(arc.n) - 1)
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    # split into sub-intervals to keep the rule well resolved
    pieces = max(1, int(math.ceil(sweep / 0.5)))
    J = F = T = 0.0
    for k in range(pieces):
        lo = E0 + sweep * k / pieces
        hi = E0 + sweep * (k + 1) / pieces
        Ea = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
        w = 0.5 * (hi - lo) * wg
        pos = centre + a * np.cos(Ea) * u + b * np.sin(Ea) * v
        dpos = -a * np.sin(Ea) * u + b * np.cos(Ea) * v
        r = np.abs(pos)
        ds = np.abs(dpos)
        J += np.sum(w * np.sqrt(2.0 * (arc.energy + 1.0 / r)) * ds)
        dt = r * math.sqrt(a)
        speed2 = 2.0 * (arc.energy + 1.0 / r)
        F += np.sum(w * (0.5 * speed2 + 1.0 / r) * dt)
        T += np.sum(w * dt)
    return {"J": float(J), "F": float(F), "tof": float(T)}

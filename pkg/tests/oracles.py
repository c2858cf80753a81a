"""Independent reference computations used by the tests.

Nothing here imports the package under test: orbits are rebuilt from plain
ellipse geometry or integrated with scipy, derivatives are central
differences.
"""

import math

import numpy as np
from scipy.integrate import quad, solve_ivp


def cross(a, b):
    return float(a[0] * b[1] - a[1] * b[0])


def left_focus(x_minus, x_plus, a=1.0):
    """Second focus of the ellipse with foci (0, F), semi-major axis ``a`` through both points.

    Intersection of the circles ``|F - x| = 2a - |x|``, chosen on the left of
    the directed chord.
    """
    p, q = np.asarray(x_minus, float), np.asarray(x_plus, float)
    r0, r1 = 2 * a - np.linalg.norm(p), 2 * a - np.linalg.norm(q)
    d = np.linalg.norm(q - p)
    along = (r0 ** 2 - r1 ** 2 + d ** 2) / (2 * d)
    h = math.sqrt(max(r0 ** 2 - along ** 2, 0.0))
    e = (q - p) / d
    n = np.array([-e[1], e[0]])
    return p + along * e + h * n


def ellipse_arc(x_minus, x_plus, a=1.0, revolutions=0):
    """Counterclockwise arc from ``x_minus`` to ``x_plus`` on the left-focus ellipse.

    Returns ``point(E)`` and the eccentric-anomaly interval.
    """
    F = left_focus(x_minus, x_plus, a)
    c = F / 2
    half = np.linalg.norm(F) / 2
    major = F / np.linalg.norm(F) if half > 1e-14 else np.array([1.0, 0.0])
    minor = np.array([-major[1], major[0]])
    b = math.sqrt(a * a - half * half)

    def point(E):
        return c + a * math.cos(E) * major + b * math.sin(E) * minor

    def anomaly(x):
        d = np.asarray(x, float) - c
        return math.atan2((d @ minor) / b, (d @ major) / a)

    e0, e1 = anomaly(x_minus), anomaly(x_plus)
    if e1 <= e0:
        e1 += 2 * math.pi
    e1 += 2 * math.pi * revolutions
    return point, e0, e1, (a, b, major, minor)


def maupertuis_quadrature(x_minus, x_plus, energy=-0.5, revolutions=0):
    """Integral of ``sqrt(2(E + 1/|x|)) |dx|`` along the left-focus arc at energy ``E``."""
    a = -0.5 / energy
    point, e0, e1, (a_, b, major, minor) = ellipse_arc(x_minus, x_plus, a, revolutions)

    def integrand(E):
        x = point(E)
        dx = -a_ * math.sin(E) * major + b * math.cos(E) * minor
        return math.sqrt(2 * (energy + 1 / np.linalg.norm(x))) * np.linalg.norm(dx)

    pieces = np.linspace(e0, e1, 8 * (1 + revolutions) + 1)
    return sum(quad(integrand, lo, hi, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
               for lo, hi in zip(pieces[:-1], pieces[1:]))


def kepler_rhs(t, z):
    r = z[:2]
    return np.concatenate([z[2:4], -r / np.linalg.norm(r) ** 3])


def propagate(position, velocity, t, rtol=1e-13, atol=1e-14):
    """Unit Kepler problem integrated with scipy's DOP853."""
    z0 = np.concatenate([position, velocity])
    sol = solve_ivp(kepler_rhs, (0.0, t), z0, method="DOP853", rtol=rtol, atol=atol)
    return sol.y[:2, -1], sol.y[2:, -1]


def hamilton_action(position, velocity, t):
    """``int (|v|^2/2 + 1/|x|) dt`` and ``int |v|^2 dt`` along the propagated orbit."""
    def rhs(s, z):
        r = z[:2]
        v = z[2:4]
        rn = np.linalg.norm(r)
        return np.concatenate([v, -r / rn ** 3, [v @ v / 2 + 1 / rn, v @ v]])

    z0 = np.concatenate([position, velocity, [0.0, 0.0]])
    sol = solve_ivp(rhs, (0.0, t), z0, method="DOP853", rtol=1e-13, atol=1e-14)
    return sol.y[4, -1], sol.y[5, -1]


def central_gradient(fun, x0, h=1e-6):
    x0 = np.asarray(x0, float)
    g = np.empty_like(x0)
    for i in range(len(x0)):
        step = h * max(1.0, abs(x0[i]))
        up, down = x0.copy(), x0.copy()
        up[i] += step
        down[i] -= step
        g[i] = (fun(up) - fun(down)) / (2 * step)
    return g


def three_body_rhs(alpha1, mu):
    """Heliocentric equations of the planar problem, written out directly."""
    a1, a2 = alpha1, 1 - alpha1
    al = a1 * a2

    def rhs(t, z):
        q1, q2, p1, p2 = z[0:2], z[2:4], z[4:6], z[6:8]
        r1, r2 = np.linalg.norm(q1), np.linalg.norm(q2)
        d = q1 - q2
        r12 = np.linalg.norm(d)
        py = p1 + p2
        dq1 = p1 / a1 + mu * py
        dq2 = p2 / a2 + mu * py
        dp1 = -a1 * q1 / r1 ** 3 - mu * al * d / r12 ** 3
        dp2 = -a2 * q2 / r2 ** 3 + mu * al * d / r12 ** 3
        return np.concatenate([dq1, dq2, dp1, dp2])

    return rhs


def three_body_energy(z, alpha1, mu):
    a1, a2 = alpha1, 1 - alpha1
    q1, q2, p1, p2 = z[0:2], z[2:4], z[4:6], z[6:8]
    py = p1 + p2
    return (p1 @ p1 / (2 * a1) + p2 @ p2 / (2 * a2) - a1 / np.linalg.norm(q1)
            - a2 / np.linalg.norm(q2)
            + mu * (py @ py / 2 - a1 * a2 / np.linalg.norm(q1 - q2)))


def shoot_velocity(x_minus, x_plus, t, guess):
    """Initial velocity reaching ``x_plus`` after time ``t``, by Newton shooting on the integrator."""
    from scipy.optimize import fsolve

    def miss(v):
        return propagate(np.asarray(x_minus, float), v, t)[0] - x_plus

    v, info, ok, msg = fsolve(miss, np.asarray(guess, float), xtol=1e-13, full_output=True)
    if ok != 1:
        raise RuntimeError(msg)
    return v


def jacobian_fourth_order(fun, z0, h=1e-3):
    """Five-point central-difference Jacobian."""
    z0 = np.asarray(z0, float)
    cols = []
    for i in range(len(z0)):
        step = h * max(1.0, abs(z0[i]))
        e = np.zeros_like(z0)
        e[i] = step
        f = [np.asarray(fun(z0 + k * e)) for k in (-2, -1, 1, 2)]
        cols.append((f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * step))
    return np.column_stack(cols)

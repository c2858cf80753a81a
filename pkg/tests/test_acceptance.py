"""Acceptance criteria AC-1 to AC-9, each at its stated tolerance.

Every test prints one ``AC-n PASS|FAIL`` line with the measured numbers and
then asserts.  The heavy fixtures (certified chain, mu sweep) are shared
with the module tests through ``conftest.py``.
"""

import math

import numpy as np
from scipy.integrate import solve_ivp

from oracles import (
    central_gradient,
    jacobian_fourth_order,
    maupertuis_quadrature,
    propagate,
    three_body_rhs,
)
from second_species.chain_solver import RestrictedEllipse, collision_velocities
from second_species.collision_action import (
    MassParams,
    energy_fixed_action_L,
    energy_fixed_segment,
    segment_action,
    segment_gradient,
)
from second_species.kepler_lambert import (
    DomainError,
    NoSolutionError,
    action_J,
    arc_at_energy,
    in_domain,
    lambert_f,
    monotone_branches,
    solve_fixed_time,
    time_of_flight,
)
from second_species.regularized_flow import (
    JacobiState,
    from_jacobi,
    hamiltonian_H,
    integrate_regularized,
    jacobi_map_array,
    levi_civita_block_array,
    levi_civita_lift,
    phase_from_regularized,
    regularized_hamiltonian,
    symplectic_defect,
)
from second_species.shadowing import compute_multipliers, sweep_summary


def report(capsys, label, checks):
    """Print one line for the criterion and fail with the list of broken checks."""
    failed = [name for name, ok, _ in checks if not ok]
    detail = "; ".join(f"{name}={value}" for name, _, value in checks)
    with capsys.disabled():
        print(f"\n{label} {'PASS' if not failed else 'FAIL'}: {detail}")
    assert not failed, f"{label} failed: {', '.join(failed)}"


def polar(r, theta):
    return r * np.array([math.cos(theta), math.sin(theta)])


def domain_pairs(count, seed, scale=1.0, rmin=0.05, rmax=1.95):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        r = rng.uniform(rmin, rmax, 2) / scale
        th = rng.uniform(0.0, 2.0 * math.pi, 2)
        xm, xp = polar(r[0], th[0]), polar(r[1], th[1])
        if in_domain(xm, xp, scale):
            out.append((xm, xp))
    return out


def random_arcs(count, seed, revolutions=(0, 1, 2, 3)):
    """Admissible ``(n, E, x_minus, x_plus)`` with E kept off the minimum-energy ellipse."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        r = rng.uniform(0.2, 1.6, 2)
        th = rng.uniform(0.0, 2.0 * math.pi, 2)
        xm, xp = polar(r[0], th[0]), polar(r[1], th[1])
        if abs(math.sin(th[1] - th[0])) < 0.05:
            continue
        try:
            floor = monotone_branches(0, xm, xp)[0][0]
        except DomainError:
            continue
        E = floor * rng.uniform(0.2, 0.9)
        out.append((int(rng.choice(revolutions)), E, xm, xp))
    return out


def relative_gap(approx, exact):
    approx, exact = np.atleast_1d(approx), np.atleast_1d(exact)
    return float(np.linalg.norm(approx - exact) / max(np.linalg.norm(exact), 1e-300))


# --- AC-1 ------------------------------------------------------------------------------

def test_ac1_lambert_closed_form(capsys):
    worst = 0.0
    for xm, xp in domain_pairs(1000, 11):
        worst = max(worst, abs(lambert_f(xm, xp) - maupertuis_quadrature(xm, xp, -0.5)))
    quarter = abs(lambert_f([1.0, 0.0], [0.0, 1.0]) - math.pi / 2)
    report(capsys, "AC-1", [
        ("max |f - quadrature| over 1000 pairs", worst <= 1e-8, f"{worst:.2e}"),
        ("quarter arc |f - pi/2|", quarter <= 1e-12, f"{quarter:.2e}"),
    ])


# --- AC-2 ------------------------------------------------------------------------------

def test_ac2_kepler_time_identity(capsys):
    worst_tau = 0.0
    not_convex, not_concave = [], []
    for n, E, xm, xp in random_arcs(500, 12):
        hE = 1e-5 * abs(E)
        Jp, J0, Jm = (action_J(n, E + d, xm, xp) for d in (hE, 0.0, -hE))
        fd = (Jp - Jm) / (2 * hE)
        worst_tau = max(worst_tau, abs(fd - time_of_flight(n, E, xm, xp)) / abs(time_of_flight(n, E, xm, xp)))
        h2 = 1e-3 * abs(E)
        d2J = (action_J(n, E + h2, xm, xp) - 2 * J0 + action_J(n, E - h2, xm, xp)) / h2 ** 2
        if not d2J > 0:
            not_convex.append(n)
        tau = time_of_flight(n, E, xm, xp)
        ht = 1e-3 * tau
        try:
            F = [solve_fixed_time(n, tau + d, xm, xp, energy_guess=E).action_F for d in (ht, 0.0, -ht)]
        except NoSolutionError:
            not_concave.append(n)
            continue
        if not (F[0] - 2 * F[1] + F[2]) / ht ** 2 < 0:
            not_concave.append(n)
    report(capsys, "AC-2", [
        ("max rel |tau - dJ/dE| over 500 samples", worst_tau <= 1e-6, f"{worst_tau:.2e}"),
        ("samples with d2J/dE2 <= 0", not not_convex,
         f"{len(not_convex)} (by n: {dict(sorted((k, not_convex.count(k)) for k in set(not_convex)))})"),
        ("samples with d2F/dtau2 >= 0", not not_concave,
         f"{len(not_concave)} (by n: {dict(sorted((k, not_concave.count(k)) for k in set(not_concave)))})"),
    ])


# --- AC-3 ------------------------------------------------------------------------------

MASSES = MassParams(mu=0.0, alpha1=0.3)


def segments_for_gradients(count, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        r = rng.uniform(0.4, 1.3, 2)
        th = rng.uniform(0.0, 2.0 * math.pi, 2)
        xm, xp = polar(r[0], th[0]), polar(r[1], th[1])
        if abs(math.sin(th[1] - th[0])) < 0.1:
            continue
        try:
            out.append(segment_action((1, 2), rng.uniform(12.5, 16.0), xm, xp, MASSES))
        except NoSolutionError:
            pass
    return out


def test_ac3_generating_function_laws(capsys):
    worst_DF = worst_prop = 0.0
    for n, E, xm, xp in random_arcs(40, 13, revolutions=(0, 1, 2)):
        arc = arc_at_energy(n, E, xm, xp)

        def F(z, arc=arc, n=n):
            return solve_fixed_time(n, z[0], z[1:3], z[3:5], energy_guess=arc.energy).action_F

        g = central_gradient(F, np.concatenate([[arc.tof], xm, xp]), h=1e-6)
        analytic = np.concatenate([[-arc.energy], -arc.y_minus, arc.y_plus])
        worst_DF = max(worst_DF, relative_gap(g, analytic))
        q, v = propagate(xm, arc.y_minus, arc.tof)
        worst_prop = max(worst_prop, float(np.linalg.norm(q - xp)), float(np.linalg.norm(v - arc.y_plus)))

    worst_gen = 0.0
    for seg in segments_for_gradients(10, 14):
        guesses = seg.arc_energies

        def S(z, seg=seg, guesses=guesses):
            return segment_action(seg.k, z[0], z[1:3], z[3:5], MASSES, guesses).action_S

        g = central_gradient(S, np.concatenate([[seg.tof], seg.x_minus, seg.x_plus]), h=1e-6)
        y_minus, y_plus, E = segment_gradient(seg)
        worst_gen = max(worst_gen, relative_gap(g, np.concatenate([[-E], -y_minus, y_plus])))

    worst_genE = 0.0
    for seg in segments_for_gradients(6, 15):
        E = seg.energy
        fixed = energy_fixed_segment(seg.k, E, seg.x_minus, seg.x_plus, MASSES, seg.tof)

        def L(z, fixed=fixed, E=E):
            return energy_fixed_action_L(fixed.k, E, z[:2], z[2:], MASSES, fixed.tof, fixed.arc_energies)

        g = central_gradient(L, np.concatenate([seg.x_minus, seg.x_plus]), h=1e-6)
        worst_genE = max(worst_genE, relative_gap(g, np.concatenate([-fixed.y_minus, fixed.y_plus])))

    report(capsys, "AC-3", [
        ("fixed-time action gradient rel error", worst_DF <= 1e-7, f"{worst_DF:.2e}"),
        ("collision action gradient rel error", worst_gen <= 1e-7, f"{worst_gen:.2e}"),
        ("energy-fixed action gradient rel error", worst_genE <= 1e-7, f"{worst_genE:.2e}"),
        ("propagated landing error", worst_prop <= 1e-8, f"{worst_prop:.2e}"),
    ])


# --- AC-4 ------------------------------------------------------------------------------

def test_ac4_levi_civita_conjugacy(capsys):
    masses = MassParams(mu=1e-4, alpha1=0.3)
    j = JacobiState(np.array([1.0, 0.0]), np.array([0.0, 1.0]),
                    np.array([0.05, 1e-3]), masses.alpha * np.array([-0.5, 0.0]))
    start = from_jacobi(j, masses)
    E = hamiltonian_H(start, masses)
    reg = levi_civita_lift(j)
    level = masses.mu * masses.alpha
    level_drift = energy_drift = 0.0
    closest = math.inf
    for sigma in np.linspace(1.0, 20.0, 20):
        out = integrate_regularized(reg, float(sigma), masses, E)
        ph = phase_from_regularized(out, masses)
        level_drift = max(level_drift, abs(regularized_hamiltonian(out, masses, E) - level))
        energy_drift = max(energy_drift, abs(hamiltonian_H(ph, masses) - E))
        closest = min(closest, float(np.linalg.norm(ph.q2 - ph.q1)))
    sol = solve_ivp(three_body_rhs(masses.alpha1, masses.mu), (0.0, out.physical_time),
                    start.as_array()[:8], method="DOP853", rtol=1e-13, atol=1e-15)
    flow_gap = float(np.linalg.norm(ph.as_array()[:8] - sol.y[:, -1]))

    rng = np.random.default_rng(16)
    sym_xu = sym_lc = 0.0
    for _ in range(20):
        z = rng.normal(size=8)
        sym_xu = max(sym_xu, symplectic_defect(jacobian_fourth_order(jacobi_map_array(masses), z)))
        w = rng.normal(size=4)
        sym_lc = max(sym_lc, symplectic_defect(jacobian_fourth_order(levi_civita_block_array, w)))

    report(capsys, "AC-4", [
        ("passage crossed (closest approach)", closest < 0.01, f"{closest:.1e}"),
        ("|g(regularized) - direct flow|", flow_gap <= 1e-8, f"{flow_gap:.2e}"),
        ("regularized level drift", level_drift <= 1e-10, f"{level_drift:.2e}"),
        ("H energy drift", energy_drift <= 1e-9, f"{energy_drift:.2e}"),
        ("Jacobi change symplectic defect", sym_xu <= 1e-10, f"{sym_xu:.2e}"),
        ("Levi-Civita symplectic defect", sym_lc <= 1e-10, f"{sym_lc:.2e}"),
    ])


# --- AC-5 ------------------------------------------------------------------------------

def loop_integral(ellipse):
    """Integral of y . dx over one revolution: twice the kinetic energy over a period."""
    s = ellipse.periapsis_state()

    def rhs(t, z):
        return np.concatenate([z[2:4], -z[:2] / np.linalg.norm(z[:2]) ** 3, [z[2] ** 2 + z[3] ** 2]])

    sol = solve_ivp(rhs, (0.0, ellipse.period), np.concatenate([s.position, s.velocity, [0.0]]),
                    method="DOP853", rtol=1e-13, atol=1e-15)
    return sol.y[4, -1]


def test_ac5_restricted_limit(capsys, certified):
    worst_e = worst_J = worst_orbit = 0.0
    for E, G in ((-0.5, 0.96), (-0.5, 0.95), (-0.3, 0.8), (-1.0, 0.4)):
        ellipse = RestrictedEllipse(E, G)
        expected_J = 2 * math.pi * (-2 * E) ** -0.5
        worst_e = max(worst_e, abs(ellipse.eccentricity - math.sqrt(1 + 2 * E * G)))
        worst_J = max(worst_J, abs(ellipse.maupertuis_action() - expected_J))
        worst_orbit = max(worst_orbit, abs(loop_integral(ellipse) - expected_J))
    chain, cert = certified
    report(capsys, "AC-5", [
        ("|e - sqrt(1+2EG)|", worst_e <= 1e-12, f"{worst_e:.2e}"),
        ("|J_E - 2 pi (-2E)^(-1/2)|", worst_J <= 1e-12, f"{worst_J:.2e}"),
        ("integrated loop action agrees", worst_orbit <= 1e-9, f"{worst_orbit:.2e}"),
        ("seeded search converged (gradient norm)", cert.gradient_norm <= 1e-10,
         f"{cert.gradient_norm:.2e}"),
    ])


# --- AC-6 ------------------------------------------------------------------------------

def test_ac6_chain_certificate(capsys, certified):
    chain, cert = certified
    speeds = max(abs(np.linalg.norm(a) - np.linalg.norm(b)) for a, b in collision_velocities(chain))
    report(capsys, "AC-6", [
        ("gradient norm", cert.gradient_norm <= 1e-10, f"{cert.gradient_norm:.2e}"),
        ("Hessian nullity", cert.hessian_nullity == 1, cert.hessian_nullity),
        ("null vector angle to rotation", cert.null_alignment_angle <= 1e-3,
         f"{cert.null_alignment_angle:.2e}"),
        ("max | |v+| - |v-| |", speeds <= 1e-10, f"{speeds:.2e}"),
        ("min direction-change margin", min(cert.direction_change_margins) > 0,
         f"{min(cert.direction_change_margins):.3f}"),
    ])


# --- AC-7 ------------------------------------------------------------------------------

def test_ac7_shadowing_orbits_exist(capsys, sweep_rows):
    checks = []
    for row in sweep_rows:
        worst = max(row["energy_error"], row["angular_momentum_error"])
        checks.append((f"mu={row['mu']:.0e} residual", row["residual"] <= 1e-9, f"{row['residual']:.1e}"))
        checks.append((f"mu={row['mu']:.0e} E,G drift", worst <= 1e-9, f"{worst:.1e}"))
    report(capsys, "AC-7", checks)


# --- AC-8 ------------------------------------------------------------------------------

def test_ac8_order_mu_laws(capsys, sweep_rows):
    s = sweep_summary(sweep_rows)
    lo, hi = s["min_delta_band"]
    report(capsys, "AC-8", [
        ("sup distance slope", abs(s["sup_dist_slope"] - 1.0) <= 0.15, f"{s['sup_dist_slope']:.3f}"),
        ("period error slope", abs(s["period_error_slope"] - 1.0) <= 0.15, f"{s['period_error_slope']:.3f}"),
        ("min_delta/mu band b/a", s["min_delta_band_ratio"] <= 10,
         f"[{lo:.4f}, {hi:.4f}] ratio {s['min_delta_band_ratio']:.3f}"),
    ])


# --- AC-9 ------------------------------------------------------------------------------

def test_ac9_multipliers(capsys, sweep_orbits, sweep_rows):
    s = sweep_summary(sweep_rows)
    trivial_ok, real_ok = True, True
    for row in sweep_rows:
        m = compute_multipliers(sweep_orbits[row["mu"]])
        trivial_ok &= len(m.trivial) == 4 and m.trivial_deviation <= 1e-5 * m.conditioning
        real_ok &= math.isfinite(m.lambda1) and m.lambda1 > 1
    l1 = ", ".join(f"{r['lambda1']:.3g}" for r in sorted(sweep_rows, key=lambda r: -r["mu"]))
    fit = s["lambda1_fit"]
    report(capsys, "AC-9", [
        ("four trivial multipliers within 1e-5 cond", trivial_ok, trivial_ok),
        ("lambda1 real and > 1", real_ok, l1),
        ("lambda1 increasing as mu decreases", s["lambda1_increasing"], s["lambda1_increasing"]),
        ("log fit beats constant", fit["rss_log"] < fit["rss_const"],
         f"{fit['rss_log']:.2e} < {fit['rss_const']:.2e}"),
        ("lambda2 steps decreasing", s["lambda2_cauchy"],
         ", ".join(f"{d:.3g}" for d in s["lambda2_steps"])),
    ])

"""
Acceptance suite. Each test records one PASS/FAIL line (printed and shown in
the terminal summary) and then asserts the criterion at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``convexrot validate``.
The shape optimizations at h = 2^-4 take several minutes in total.
"""
import math

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import interior_angle_convex, qp_active_set_enumeration, random_qp

from convexrot.cli import initial_boundary
from convexrot.deformation import SaddleSystem, uzawa
from convexrot.eigen import (
    asymmetry,
    critical_mass,
    default_epsilon,
    dirichlet_eigen,
    insulation_eigen,
    neumann_eigen2,
    regularization_gap,
    scaling_check,
)
from convexrot.fem import assemble_p1
from convexrot.geometry import convexity_residuals, half_ellipse
from convexrot.mesh import MeshTemplate
from convexrot.optimizer import LineSearchConfig, optimize
from convexrot.shape_gradient import DirichletObjective, InsulationObjective, VolumeObjective, shape_gradient_fd

VOLUME = 4.0 * math.pi / 3.0
H4, H5 = 2.0 ** -4, 2.0 ** -5
ASYM_A = 1.6           # prolate start for the asymmetric branch


def record(k, ok, detail):
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)
    assert ok, line


def ball(h):
    b = initial_boundary("half_disk", 1.0, h, VOLUME)
    return b, MeshTemplate.for_boundary(b, h).map(b)


# every insulation solve made by criteria 4-7 is checked for criterion 12
SOLVES = {"count": 0, "bad_history": [], "bad_gap": []}


def check_solve(sol, beta, label):
    SOLVES["count"] += 1
    if np.any(np.diff(sol.history) > 1e-12):
        SOLVES["bad_history"].append(label)
    gap = regularization_gap(sol.u, beta, sol.epsilon)
    if not (0.0 <= gap <= sol.epsilon * float(np.sum(beta))):
        SOLVES["bad_gap"].append(label)
    return sol


class RecordingInsulation(InsulationObjective):
    """Insulation objective that passes every eigen solve through :func:`check_solve`."""

    def solve(self, mesh, warm):
        sol = super().solve(mesh, warm)
        return check_solve(sol, assemble_p1(mesh).beta, f"opt m={self.m:g}")


@pytest.fixture(scope="module")
def ball5():
    b, mesh = ball(H5)
    return b, mesh, assemble_p1(mesh)


@pytest.fixture(scope="module")
def ball4():
    b, mesh = ball(H4)
    return b, mesh, assemble_p1(mesh)


@pytest.fixture(scope="module")
def insulation_ball5(ball5):
    _, mesh, ops = ball5
    out = {}
    for m in (2.0, 12.0, 13.0):
        out[m] = check_solve(insulation_eigen(mesh, m, ops=ops), ops.beta, f"ball m={m:g}")
    return out


def test_criterion_01_ball_dirichlet(ball5):
    _, mesh, ops = ball5
    lam = dirichlet_eigen(mesh, ops).lam
    ok = abs(lam - 9.8753) <= 0.02 and lam > math.pi ** 2 - 0.01
    record(1, ok, f"lambda = {lam:.6f} (target 9.8753 +- 0.02, > pi^2 - 0.01), nv = {mesh.nv}")


@pytest.fixture(scope="module")
def dirichlet_ball4(ball4):
    b, mesh, ops = ball4
    return dirichlet_eigen(mesh, ops).lam


def test_criterion_02_faber_krahn(dirichlet_ball4):
    b = initial_boundary("half_ellipsoid", 0.8, H4, VOLUME)
    obj = DirichletObjective.for_boundary(b, H4)
    final, ev, trace = optimize(b, obj, LineSearchConfig(max_iter=60), VOLUME)
    err = ev.value - dirichlet_ball4
    area = final.weighted_area()
    ok = abs(err) <= 0.06 and abs(area - 2.0 / 3.0) <= 1e-2
    record(2, ok, f"lambda {trace.objectives[0]:.5f} -> {ev.value:.5f}, ball {dirichlet_ball4:.5f}, "
                  f"error {err:.4f} (<= 0.06), |w|_r = {area:.5f}, {len(trace.records)} records, "
                  f"{trace.termination}")


def test_criterion_03_ball_stationary():
    b = initial_boundary("half_ellipsoid", 1.0, H4, VOLUME)
    obj = DirichletObjective.for_boundary(b, H4)
    final, ev, trace = optimize(b, obj, LineSearchConfig(max_iter=60), VOLUME)
    lam0 = trace.objectives[0]
    rel = abs(ev.value - lam0) / lam0
    record(3, rel <= 1e-3, f"lambda {lam0:.6f} -> {ev.value:.6f}, relative change {rel:.2e} (<= 1e-3), "
                           f"{trace.termination}")


def test_criterion_04_insulation_ball(insulation_ball5):
    l12, l13 = insulation_ball5[12.0].lam, insulation_ball5[13.0].lam
    ok = abs(l12 / 2.561 - 1) <= 0.02 and abs(l13 / 2.400 - 1) <= 0.02
    record(4, ok, f"lambda_12 = {l12:.5f} (2.561 +- 2%), lambda_13 = {l13:.5f} (2.400 +- 2%)")


def test_criterion_05_symmetry_breaking(ball5, insulation_ball5):
    _, mesh, ops = ball5
    a2 = asymmetry(mesh, insulation_ball5[2.0].u, ops)
    a13 = asymmetry(mesh, insulation_ball5[13.0].u, ops)
    record(5, a2 > 0.1 and a13 < 0.01, f"a(u) m=2: {a2:.4f} (> 0.1), m=13: {a13:.2e} (< 0.01)")


def _insulation_run(m, shape, a):
    b = initial_boundary(shape, a, H4, VOLUME)
    obj = RecordingInsulation(MeshTemplate.for_boundary(b, H4), m)
    final, ev, trace = optimize(b, obj, LineSearchConfig(max_iter=60), VOLUME)
    return ev.value, final, trace


def test_criterion_06_optimality_ordering():
    rows, ok = [], True
    for m, ref_gap, sign in ((6.0, 0.129, -1), (12.0, 0.045, +1)):
        lam_ball, _, tb = _insulation_run(m, "half_disk", 1.0)
        lam_asym, fa, ta = _insulation_run(m, "half_ellipsoid", ASYM_A)
        gap = sign * (lam_asym - lam_ball)
        ok &= gap >= 0.5 * ref_gap
        rows.append(f"m={m:g}: ball {lam_ball:.5f} ({tb.termination}), asym {lam_asym:.5f} "
                    f"({ta.termination}, |w|_r {fa.weighted_area():.4f}), gap {gap:.4f} (>= {0.5 * ref_gap:.4f})")
    record(6, ok, "; ".join(rows))


def test_criterion_07_critical_mass(ball4):
    _, mesh, ops = ball4
    res = critical_mass(mesh, (4.0, 8.0), ops=ops)
    for s in res["solutions"]:
        check_solve(s, ops.beta, f"critical m={s.m:g}")
    mu2 = neumann_eigen2(mesh, ops)
    l5 = check_solve(insulation_eigen(mesh, 5.0, ops=ops), ops.beta, "m=5").lam
    l6 = check_solve(insulation_eigen(mesh, 6.0, ops=ops), ops.beta, "m=6").lam
    ok = 5.5 <= res["m0"] <= 6.1 and l5 > mu2 > l6
    record(7, ok, f"m0 = {res['m0']:.4f} in [5.5, 6.1]; lambda_5 {l5:.5f} > mu_2 {mu2:.5f} > lambda_6 {l6:.5f}")


def test_criterion_08_scaling(ball4):
    _, mesh, _ = ball4
    lhs, rhs = scaling_check(mesh, 5.0, 2.0)
    rel = abs(lhs - rhs) / abs(rhs)
    record(8, rel <= 0.01, f"t^-2 lambda_5(w) = {lhs:.6f}, lambda_40(2w) = {rhs:.6f}, relative {rel:.2e} (<= 1e-2)")


def test_criterion_09_uzawa_oracle():
    rng = np.random.default_rng(20240901)
    worst, active = 0.0, 0
    for _ in range(100):
        A, B, C, f, g, c = random_qp(rng, max_n=12, max_ineq=4)
        ref = qp_active_set_enumeration(A, B, C, f, g, c)
        res = uzawa(SaddleSystem(A, B, C, f, g, c), tol=1e-12, max_iter=200000)
        worst = max(worst, float(np.max(np.abs(res.y - ref))))
        active += int(np.any(res.z2 > 0))
    record(9, worst <= 1e-8, f"100 QPs ({active} with active inequalities), max |y - y_enum| = {worst:.2e} (<= 1e-8)")


def _random_polygon(rng):
    n = int(rng.integers(3, 25))
    kind = rng.integers(0, 3)
    if kind == 0:
        # inscribed half ellipse with noise of random size: both outcomes occur
        x = half_ellipse(rng.uniform(0.4, 2.5), n - 1).nodes.copy()
        L = np.min(np.hypot(*np.diff(x, axis=0).T))
        x[1:-1] += rng.uniform(0.0, 0.5) * L * rng.standard_normal((n - 2, 2))
    elif kind == 1:
        z = np.sort(rng.uniform(-1.0, 1.0, n))
        x = np.column_stack([rng.uniform(0.05, 1.0, n), z])
    else:
        t = np.sort(rng.uniform(-0.5 * np.pi, 0.5 * np.pi, n))
        x = np.column_stack([np.cos(t) * rng.uniform(0.8, 1.2, n), np.sin(t)])
    x[0, 0] = x[-1, 0] = 0.0
    x[1:-1, 0] = np.abs(x[1:-1, 0]) + 1e-3
    return x


def test_criterion_10_convexity_oracle():
    rng = np.random.default_rng(7)
    agree, convex = 0, 0
    mismatches = []
    for i in range(1000):
        x = _random_polygon(rng)
        by_residual = bool(np.all(convexity_residuals(x) <= 1e-12))
        by_angle = interior_angle_convex(x)
        convex += by_angle
        if by_residual == by_angle:
            agree += 1
        else:
            mismatches.append(i)
    record(10, agree == 1000, f"{agree}/1000 agree ({convex} convex, {1000 - convex} non-convex), "
                              f"mismatches {mismatches[:5]}")


def test_criterion_11_volume_gradient():
    b = initial_boundary("half_ellipsoid", 0.8, H4, VOLUME)
    grad = shape_gradient_fd(b, VolumeObjective(), delta=1e-4)
    inner = slice(1, -1)
    rel = np.abs(grad.arclength_density[inner] / (2 * np.pi * b.r[inner]) - 1)
    record(11, rel.max() <= 0.05, f"max relative deviation from 2 pi r_i = {rel.max():.2e} (<= 5e-2) "
                                  f"over {b.n - 2} nodes")


def test_criterion_12_flow_monotonicity():
    n = SOLVES["count"]
    ok = n > 0 and not SOLVES["bad_history"] and not SOLVES["bad_gap"]
    record(12, ok, f"{n} insulation solves: {len(SOLVES['bad_history'])} non-monotone histories, "
                   f"{len(SOLVES['bad_gap'])} regularization-gap violations")

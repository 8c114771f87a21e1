"""Independent reference implementations used by the tests."""
import itertools

import numpy as np


def random_qp(rng, max_n=12, max_ineq=4, max_eq=3):
    """Feasible strictly convex QP (A, B, C, f, g, c) with small dense data."""
    n = int(rng.integers(2, max_n + 1))
    m1 = int(rng.integers(0, min(max_eq, n - 1) + 1))
    m2 = int(rng.integers(0, min(max_ineq, n - m1) + 1))
    Q = rng.standard_normal((n, n))
    A = Q @ Q.T + 0.5 * n * np.eye(n)
    B = rng.standard_normal((m1, n))
    C = rng.standard_normal((m2, n))
    y_feas = rng.standard_normal(n)
    g = B @ y_feas
    c = C @ y_feas + np.abs(rng.standard_normal(m2)) * rng.integers(0, 2, m2)
    f = 3.0 * rng.standard_normal(n)
    return A, B, C, f, g, c


def qp_active_set_enumeration(A, B, C, f, g, c, tol=1e-10):
    """
    Minimizer of 1/2 y^T A y - f^T y s.t. B y = g, C y <= c by trying every
    active set and keeping the one that satisfies all KKT conditions.
    """
    n, m1, m2 = A.shape[0], B.shape[0], C.shape[0]
    best = None
    for k in range(m2 + 1):
        for S in itertools.combinations(range(m2), k):
            E = np.vstack([B, C[list(S)]]) if (m1 + k) else np.zeros((0, n))
            e = np.concatenate([g, c[list(S)]])
            K = np.block([[A, E.T], [E, np.zeros((len(e), len(e)))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([f, e]))
            except np.linalg.LinAlgError:
                continue
            y, lam = sol[:n], sol[n:]
            z2 = lam[m1:]
            if np.all(C @ y <= c + tol) and np.all(z2 >= -tol):
                val = 0.5 * y @ A @ y - f @ y
                if best is None or val < best[0]:
                    best = (val, y)
    if best is None:
        raise ValueError("no KKT point found")
    return best[1]


def interior_angles(x):
    """
    Interior angles in [0, 2 pi) of the meridian section: the closed
    generatrix polygon united with its mirror image across the axis
    (counter-clockwise), at the nodes of the original polygon.
    """
    x = np.asarray(x, dtype=float)
    mirror = x[-2:0:-1] * np.array([-1.0, 1.0])
    full = np.vstack([x, mirror])
    n = len(full)
    ang = np.empty(len(x))
    for i in range(len(x)):
        a = full[i - 1] - full[i]
        b = full[(i + 1) % n] - full[i]
        # counter-clockwise angle from the outgoing to the incoming edge
        ang[i] = np.arctan2(b[0] * a[1] - b[1] * a[0], a @ b) % (2.0 * np.pi)
    return ang


def interior_angle_convex(x, tol=1e-9):
    """Brute-force convexity: every interior angle of the meridian section is at most pi."""
    return bool(np.all(interior_angles(x) <= np.pi + tol))


def robin_ball_eigenvalue(m):
    """Radial insulation eigenvalue of the unit ball: k cot k = 1 - 4 pi / m, lambda = k^2."""
    from scipy.optimize import brentq

    a = 4.0 * np.pi / m
    k = brentq(lambda k: k * np.cos(k) - (1.0 - a) * np.sin(k), 0.1, np.pi - 1e-9)
    return k * k

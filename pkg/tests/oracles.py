"""Independent oracles used by the tests.

These deliberately avoid the library's own solution paths: brute-force grid
search for the QP, closed-form matrix exponentials for linear flows, and a
hand-rolled covariance recursion for the Kalman predictor.
"""

import numpy as np
import scipy.linalg


def grid_qp(u_des, constraints, u_max, stages=(0.1, 0.01, 0.001, 0.00025)):
    """Zooming grid search for min ||u - u_des||^2 s.t. a.u + b >= 0, |u| <= u_max.

    Returns (u, feasible). Final resolution is stages[-1].
    """
    u_des = np.atleast_1d(np.asarray(u_des, dtype=float))
    m = u_des.size
    lo = -np.asarray(u_max, dtype=float) * np.ones(m)
    hi = -lo
    best = None
    u_lo = -np.asarray(u_max, dtype=float) * np.ones(m)
    u_hi = -u_lo
    for spacing in stages:
        axes = [np.arange(lo[j], hi[j] + spacing / 2, spacing) for j in range(m)]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        pts = np.clip(pts, u_lo, u_hi)
        feas = np.ones(len(pts), dtype=bool)
        for a, b in constraints:
            feas &= pts @ np.atleast_1d(a) + b >= -1e-12
        if not np.any(feas):
            return best, best is not None
        cand = pts[feas]
        cost = np.sum((cand - u_des) ** 2, axis=-1)
        order = int(np.argmin(cost))
        best, best_cost = cand[order], float(cost[order])
        # refine over every feasible node nearly as good as the best: the true
        # optimum's neighborhood nodes cost at most (sqrt(best)+2 sqrt(m) sp)^2,
        # so this bounding box cannot lose it to cost flatness along a face
        slack = (np.sqrt(best_cost) + 2 * np.sqrt(m) * spacing) ** 2 - best_cost
        near = cand[cost <= best_cost + slack + 1e-15]
        lo = np.maximum(near.min(axis=0) - 2 * spacing, u_lo)
        hi = np.minimum(near.max(axis=0) + 2 * spacing, u_hi)
    return best, True


def grid_localized(u_des, constraints, u_max, spacing=0.00025):
    """True when the final-stage near-optimal node set is small enough for the
    grid answer to pin the optimum (no flat wedge); computed from the grid
    alone, independent of any solver output."""
    u_des = np.atleast_1d(np.asarray(u_des, dtype=float))
    m = u_des.size
    u_grid, ok = grid_qp(u_des, constraints, u_max)
    if not ok:
        return False, None
    lo = np.maximum(u_grid - 8 * spacing, -np.asarray(u_max) * np.ones(m))
    hi = np.minimum(u_grid + 8 * spacing, np.asarray(u_max) * np.ones(m))
    axes = [np.arange(lo[j], hi[j] + spacing / 2, spacing) for j in range(m)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    feas = np.ones(len(pts), dtype=bool)
    for a, b in constraints:
        feas &= pts @ np.atleast_1d(a) + b >= -1e-12
    cand = pts[feas]
    cost = np.sum((cand - u_des) ** 2, axis=-1)
    best = float(np.min(cost))
    slack = (np.sqrt(best) + 2 * np.sqrt(m) * spacing) ** 2 - best
    near = cand[cost <= best + slack + 1e-15]
    diam = float(np.max(near.max(axis=0) - near.min(axis=0))) if len(near) else 0.0
    return diam <= 6 * spacing, u_grid


def enumerate_qp(u_des, constraints, u_max):
    """Exact brute-force oracle for m <= 2: enumerate every candidate active
    set (size <= m) over the rows and box faces, project onto its affine hull,
    and keep the cheapest feasible candidate.  For a convex QP the optimum's
    active set is among them, so this is exact up to linear-algebra roundoff.
    """
    u_des = np.atleast_1d(np.asarray(u_des, dtype=float))
    m = u_des.size
    u_hi = np.asarray(u_max, dtype=float) * np.ones(m)
    rows = [(np.atleast_1d(a), float(b)) for a, b in constraints]
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        rows.append((e.copy(), float(u_hi[j])))
        rows.append((-e.copy(), float(u_hi[j])))

    def feasible(u):
        if np.any(np.abs(u) > u_hi + 1e-9):
            return False
        return all(a @ u + b >= -1e-9 for a, b in rows)

    from itertools import combinations
    candidates = [u_des.copy()]
    idx = range(len(rows))
    for size in range(1, m + 1):
        for subset in combinations(idx, size):
            N = np.stack([rows[i][0] for i in subset], axis=-1)
            d = np.array([-rows[i][1] for i in subset])
            G = N.T @ N
            try:
                lam = np.linalg.solve(G, d - N.T @ u_des)
            except np.linalg.LinAlgError:
                continue
            candidates.append(u_des + N @ lam)
    best, best_cost = None, np.inf
    for u in candidates:
        if feasible(u):
            c = float(np.sum((u - u_des) ** 2))
            if c < best_cost:
                best, best_cost = u, c
    return best, best is not None


def linear_zoh_step(A, B, u, x, dt):
    """Exact one-step ZOH update for xdot = A x + B u with u held."""
    n = A.shape[0]
    m = B.shape[1] if B.ndim == 2 else 1
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = np.atleast_2d(B.reshape(n, m))
    E = scipy.linalg.expm(M * dt)
    return E[:n, :n] @ x + E[:n, n:] @ np.atleast_1d(u)


def kalman_predict_recursion(F, Q, P0, steps):
    """Plain discrete Lyapunov recursion P <- F P F^T + Q."""
    P = np.asarray(P0, dtype=float).copy()
    for _ in range(steps):
        P = F @ P @ F.T + Q
    return P

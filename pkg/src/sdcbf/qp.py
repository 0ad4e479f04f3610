"""Dense active-set solver for the safety-filter QP.

    minimize    0.5 ||u - u_des||^2
    subject to  a_i . u + b_i >= 0          (CBF rows)
                -u_max <= u <= u_max        (input box)

Dual active-set iteration in the Goldfarb-Idnani style, specialized to an
identity Hessian: start at the unconstrained optimum, repeatedly pull in the
most violated constraint, taking full or partial (constraint-dropping) steps
while keeping the working multipliers nonnegative.  No feasible starting
point is needed, and infeasibility surfaces as a violated constraint that is
a nonpositive combination of the active normals.

Problems here are tiny (m <= 2 inputs, ~a dozen rows), so plain dense linear
algebra per iteration beats any factorization bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .setops import Box

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"


class QPError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FilterProblem:
    """Deviation-minimizing QP data: desired input, CBF rows, input box."""

    u_des: np.ndarray
    constraints: tuple
    bounds: Box

    def __post_init__(self):
        object.__setattr__(self, "u_des",
                           np.atleast_1d(np.asarray(self.u_des, dtype=float)))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.bounds.dim != self.m:
            raise ValueError("bounds dimension != input dimension")
        for c in self.constraints:
            if np.atleast_1d(c.a).size != self.m:
                raise ValueError("constraint row dimension != input dimension")

    @property
    def m(self) -> int:
        return self.u_des.size


@dataclass(frozen=True, eq=False)
class QPResult:
    u: np.ndarray
    status: str
    active: tuple = ()            # row indices (CBF rows first, then box faces)
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0


def _stack_rows(problem: FilterProblem) -> tuple[np.ndarray, np.ndarray]:
    """All rows as c_i . u >= d_i: CBF rows first, then the 2m box faces."""
    m = problem.m
    rows = [np.atleast_1d(np.asarray(c.a, dtype=float)) for c in problem.constraints]
    d = [-float(c.b) for c in problem.constraints]
    eye = np.eye(m)
    for j in range(m):
        rows.append(eye[j])
        d.append(float(problem.bounds.lo[j]))
    for j in range(m):
        rows.append(-eye[j])
        d.append(-float(problem.bounds.hi[j]))
    return np.array(rows), np.array(d)


def solve_filter_qp(problem: FilterProblem, warm_start=(),
                    max_iter: int = 200, tol: float = 1e-11) -> QPResult:
    """Solve the filter QP; returns a KKT-certifiable optimum or `infeasible`.

    warm_start is a hint of row indices to seed the working set with; unusable
    hints are discarded.  A cycle guard raises QPError.
    """
    C, d = _stack_rows(problem)
    v = problem.u_des.copy()
    n_rows, m = C.shape
    row_scale = np.maximum(np.linalg.norm(C, axis=1), 1e-30)

    u = v.copy()
    active: list[int] = []
    lam: list[float] = []

    def refresh_from_active() -> None:
        """Solve the equality-constrained subproblem on the working set,
        dropping rows whose multiplier turns negative."""
        nonlocal u, active, lam
        while active:
            N = C[active].T
            G = N.T @ N
            try:
                mult = np.linalg.solve(G, d[active] - N.T @ v)
            except np.linalg.LinAlgError:
                active.pop()
                continue
            if np.all(mult >= -tol):
                lam = [max(float(x), 0.0) for x in mult]
                u = v + N @ np.asarray(mult)
                return
            active.pop(int(np.argmin(mult)))
        u, lam = v.copy(), []

    if warm_start:
        active = [int(i) for i in warm_start if 0 <= int(i) < n_rows]
        active = list(dict.fromkeys(active))[:m]
        refresh_from_active()

    for it in range(max_iter):
        slack = (C @ u - d) / row_scale
        p = int(np.argmin(slack))
        if slack[p] >= -1e-12:
            mult = np.zeros(n_rows)
            for idx, l in zip(active, lam):
                mult[idx] = l
            return QPResult(u=u, status=OPTIMAL, active=tuple(active),
                            multipliers=mult, iterations=it)

        lam_p = 0.0
        for _ in range(n_rows + m + 1):
            c_p = C[p]
            if active:
                N = C[active].T
                G = N.T @ N
                try:
                    r = np.linalg.solve(G, N.T @ c_p)
                except np.linalg.LinAlgError:
                    r = np.linalg.lstsq(G, N.T @ c_p, rcond=None)[0]
                z = c_p - N @ r
            else:
                r = np.zeros(0)
                z = c_p.copy()

            znorm = float(z @ z)
            s_p = float(c_p @ u - d[p])

            if znorm <= (1e-12 * float(c_p @ c_p) + 1e-300):
                # c_p is spanned by the active normals
                if r.size == 0 or np.all(r <= tol):
                    return QPResult(u=u, status=INFEASIBLE, active=tuple(active),
                                    iterations=it)
                t1, k1 = np.inf, -1
                for kk, (rk, lk) in enumerate(zip(r, lam)):
                    if rk > tol and lk / rk < t1:
                        t1, k1 = lk / rk, kk
                if k1 < 0:
                    return QPResult(u=u, status=INFEASIBLE, active=tuple(active),
                                    iterations=it)
                lam = [lk - t1 * rk for lk, rk in zip(lam, r)]
                lam_p += t1
                active.pop(k1)
                lam.pop(k1)
                continue

            t2 = -s_p / znorm
            t1, k1 = np.inf, -1
            for kk, (rk, lk) in enumerate(zip(r, lam)):
                if rk > tol and lk / rk < t1:
                    t1, k1 = lk / rk, kk
            t = min(t1, t2)
            u = u + t * z
            lam = [lk - t * rk for lk, rk in zip(lam, r)]
            lam_p += t
            if t == t2:
                active.append(p)
                lam.append(lam_p)
                break
            active.pop(k1)
            lam.pop(k1)
        else:
            raise QPError("inner active-set loop failed to terminate")

    raise QPError(f"active-set cycle guard exceeded after {max_iter} iterations")


def kkt_residuals(problem: FilterProblem, result: QPResult) -> dict:
    """KKT certificate residuals for an `optimal` result.

    stationarity: ||u - u_des - sum lam_i c_i||, with box faces included;
    primal: worst constraint violation; dual: most negative multiplier;
    complementarity: max |lam_i * slack_i|.
    """
    C, d = _stack_rows(problem)
    u = result.u
    lam = result.multipliers
    slack = C @ u - d
    stationarity = float(np.linalg.norm(u - problem.u_des - C.T @ lam))
    primal = float(max(0.0, np.max(-slack)) if slack.size else 0.0)
    dual = float(np.min(lam) if lam.size else 0.0)
    comp = float(np.max(np.abs(lam * slack)) if slack.size else 0.0)
    return {"stationarity": stationarity, "primal_violation": primal,
            "dual_min": dual, "complementarity": comp}

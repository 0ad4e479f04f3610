"""Backup controller, implicit invariant-set membership, and robust affine
CBF constraint generation.

A state is a member of the implicit invariant set when the sampled backup
flow keeps the safe-set function nonnegative over the whole horizon and lands
in the backup set at the end.  Constraints are built along that flow: state
uncertainty enters as a translated box around each nominal flow point, the
within-period motion enters through a one-step reachable box around the
current state, and every interval quantity is collapsed to an affine
constraint on the input by a conservative midpoint/radius bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import setops as so
from .dynamics import ControlAffineModel, simulate_zoh
from .sensitivity import SensitivityTrajectory


@dataclass(frozen=True, eq=False)
class SafetySpec:
    """Safe set {h >= 0}, backup set {h_backup >= 0}, horizon, and class-K gain.

    h and h_backup (and their gradients) must be written against the
    dispatching primitives in `setops` so they evaluate on batches and on
    interval vectors alike.
    """

    h: Callable
    dh: Callable
    h_backup: Callable
    dh_backup: Callable
    horizon: float            # backup horizon T, seconds
    lam: float = 1.0          # class-K slope, 1/s

    def alpha(self, h_val: float) -> float:
        """Extended class-K strengthening term: linear, odd-symmetric."""
        return self.lam * h_val

    def steps(self, dt: float) -> int:
        k = self.horizon / dt
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"dt={dt} does not divide the backup horizon {self.horizon}")
        return int(round(k))


def position_bound_safety(position_bound: float, h_backup: Callable,
                          dh_backup: Callable, horizon: float,
                          lam: float = 1.0) -> SafetySpec:
    """Safety spec for a position corridor |p| <= position_bound.

    h(x) = 1 - (p / position_bound)^2, so the 0.5 m corridor is 1 - 4 p^2.
    """
    inv_b2 = 1.0 / position_bound ** 2

    def h(x):
        p = so.component(x, 0)
        return 1.0 - inv_b2 * so.square(p)

    def dh(x):
        p = so.component(x, 0)
        zero = 0.0 * p
        return so.join_like((-2.0 * inv_b2 * p, zero, zero, zero), like=x)

    return SafetySpec(h=h, dh=dh, h_backup=h_backup, dh_backup=dh_backup,
                      horizon=horizon, lam=lam)


def quadratic_backup_set(P: np.ndarray, level: float,
                         x_eq: np.ndarray | None = None) -> tuple[Callable, Callable]:
    """h_B(x) = level - (x - x_eq)^T P (x - x_eq) and its gradient.

    Diagonal terms use the dependency-aware square so interval evaluation of
    the quadratic form does not decorrelate x_i with itself.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]

    def h_backup(x):
        parts = [so.component(x, i) - (0.0 if x_eq is None else x_eq[i]) for i in range(n)]
        acc = level + 0.0 * parts[0]  # tie batch shape
        acc = acc - sum(P[i, i] * so.square(parts[i]) for i in range(n))
        for i in range(n):
            for j in range(i + 1, n):
                acc = acc - 2.0 * P[i, j] * parts[i] * parts[j]
        return acc

    def dh_backup(x):
        parts = [so.component(x, i) - (0.0 if x_eq is None else x_eq[i]) for i in range(n)]
        grads = []
        for i in range(n):
            gi = -2.0 * sum(P[i, j] * parts[j] for j in range(n))
            grads.append(gi)
        return so.join_like(grads, like=x)

    return h_backup, dh_backup


@dataclass(frozen=True, eq=False)
class BackupController:
    """Saturated linear backup policy u = sat((K_nominal + K_prefeedback) x).

    K_nominal is the performance (LQR-style) gain toward the upright rest
    point; K_prefeedback is the synthesized incremental-stability gain.
    """

    nominal_gain: np.ndarray      # (m, n)
    prefeedback_gain: np.ndarray  # (m, n)
    u_max: np.ndarray             # (m,)

    def __post_init__(self):
        object.__setattr__(self, "nominal_gain",
                           np.atleast_2d(np.asarray(self.nominal_gain, dtype=float)))
        object.__setattr__(self, "prefeedback_gain",
                           np.atleast_2d(np.asarray(self.prefeedback_gain, dtype=float)))
        m = self.nominal_gain.shape[0]
        object.__setattr__(self, "u_max", np.broadcast_to(
            np.asarray(self.u_max, dtype=float), (m,)).copy())

    @property
    def total_gain(self) -> np.ndarray:
        return self.nominal_gain + self.prefeedback_gain

    def __call__(self, x) -> np.ndarray:
        u = np.asarray(x, dtype=float) @ self.total_gain.T
        return np.clip(u, -self.u_max, self.u_max)


@dataclass(frozen=True, eq=False)
class AffineConstraint:
    """One robust CBF row: satisfied iff a . u + b >= 0.

    tag identifies the generating flow point and function ('h' or 'h_backup');
    the interval fields record the enclosures the affinization collapsed, for
    diagnostics and soundness testing.
    """

    a: np.ndarray
    b: float
    tag: tuple = ("h", 0)
    coeff_ivs: tuple = field(default=(), repr=False)
    drift_iv: so.Interval | None = field(default=None, repr=False)
    classk_iv: so.Interval | None = field(default=None, repr=False)

    def margin(self, u) -> float:
        return float(self.a @ np.atleast_1d(u) + self.b)


def membership(model: ControlAffineModel, policy, x0, spec: SafetySpec,
               dt: float, substeps: int = 1) -> tuple[bool, float]:
    """Implicit-set membership under the ZOH backup flow.

    True iff h >= 0 at every sample 0, dt, ..., T and h_backup >= 0 at T;
    the margin is the minimum of those values.
    """
    steps = spec.steps(dt)
    traj = simulate_zoh(model, x0, policy, dt, steps, substeps)
    return membership_from_states(traj.states, spec)


def membership_from_states(states: np.ndarray, spec: SafetySpec) -> tuple[bool, float]:
    h_vals = np.asarray(spec.h(states), dtype=float)
    hb_terminal = float(spec.h_backup(states[-1]))
    margin = min(float(np.min(h_vals)), hb_terminal)
    return margin >= 0.0, margin


def select_points(traj: SensitivityTrajectory, spec: SafetySpec,
                  k: int) -> tuple[np.ndarray, int]:
    """Indices of the k samples closest to the safe-set boundary (smallest h),
    ties broken toward smaller index, returned in ascending order; the
    terminal index for the backup-set constraint is returned separately."""
    if k < 1:
        raise ValueError("k must be >= 1")
    h_vals = np.asarray(spec.h(traj.states), dtype=float)
    order = np.lexsort((np.arange(h_vals.size), h_vals))
    chosen = np.sort(order[:min(k, h_vals.size)])
    return chosen, h_vals.size - 1


def build_constraints(model: ControlAffineModel, x0, delta_x: so.Box,
                      traj: SensitivityTrajectory, spec: SafetySpec, dt: float,
                      k: int = 10, use_reachability: bool = True,
                      reach_inflation: float = 1.1,
                      reach_max_iter: int = 20) -> list[AffineConstraint]:
    """Robust affine CBF constraints from a backup rollout and an uncertainty box.

    The input-coefficient row and drift term are enclosed over the full
    evaluation set (one-step reachable box Minkowski-added to delta_x); the
    gradient and class-K terms over the flow-translated uncertainty box only.
    With delta_x degenerate and use_reachability=False every interval
    collapses and the rows equal the nominal pointwise CBF condition.
    """
    x0 = np.asarray(x0, dtype=float)
    if use_reachability:
        reach = so.reachable_box(model, x0, dt, inflation=reach_inflation,
                                 max_iter=reach_max_iter)
        state_box = so.box_sum(reach, delta_x)
    else:
        state_box = so.box_sum(so.Box.point(x0), delta_x)

    x_ivs = state_box.intervals()
    f_iv = model.f(x_ivs)
    g_iv = model.g(x_ivs)
    u_max = model.u_max

    idxs, terminal = select_points(traj, spec, k)
    if idxs.size == 0:
        raise ValueError("empty constraint point selection")

    rows: list[AffineConstraint] = []

    def make_row(idx: int, h_fn, dh_fn, tag_kind: str) -> AffineConstraint:
        point_box = delta_x.translate(traj.states[idx])
        grad = dh_fn(point_box.intervals())
        phi = traj.cumulative[idx]
        row = so.iv_vecmat(grad, phi)
        drift = so.iv_dot(row, f_iv)
        coeffs = [so.iv_dot(row, [g_iv[i][j] for i in range(model.n)])
                  for j in range(model.m)]
        classk = so.as_interval(spec.alpha(so.interval_eval(h_fn, point_box)))
        a = np.array([c.mid for c in coeffs])
        b = drift.lo + classk.lo - sum(c.rad * um for c, um in zip(coeffs, u_max))
        if not (np.all(np.isfinite(a)) and np.isfinite(b)):
            raise ValueError(f"non-finite constraint row at index {idx}")
        return AffineConstraint(a=a, b=float(b), tag=(tag_kind, int(idx)),
                                coeff_ivs=tuple(coeffs), drift_iv=drift,
                                classk_iv=classk)

    for idx in idxs:
        rows.append(make_row(int(idx), spec.h, spec.dh, "h"))
    rows.append(make_row(terminal, spec.h_backup, spec.dh_backup, "h_backup"))
    return rows

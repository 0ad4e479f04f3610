"""QP safety filter and input-delay compensation.

The filter pipeline per sample: roll out the backup policy with
sensitivities, check implicit-set membership, build the robust affine CBF
rows, and solve the deviation-minimizing QP.  Whenever the pipeline cannot
produce a certified input (non-membership, enclosure failure, infeasible QP)
the backup action is applied for exactly one sample and the situation is
re-evaluated at the next one.

Known input delay is compensated by bookkeeping: the filter stores the last n
computed inputs, integrates the estimate forward through them, and constrains
the input at the state where it will actually take effect.  Non-integer
delays are rounded up and the residual converted into extra state-uncertainty
inflation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import setops as so
from .barrier import (BackupController, SafetySpec, build_constraints,
                      membership, membership_from_states)
from .dynamics import ControlAffineModel, IntegrationError, step_zoh
from .qp import INFEASIBLE, OPTIMAL, FilterProblem, solve_filter_qp
from .sensitivity import flow_with_sensitivity


class InputBuffer:
    """FIFO of the last n computed inputs (oldest first), initialized to zeros."""

    def __init__(self, n: int, m: int):
        if n < 0:
            raise ValueError("delay steps must be >= 0")
        self.n = n
        self.m = m
        self._entries = np.zeros((n, m))

    def __len__(self) -> int:
        return len(self._entries)

    def as_signal(self) -> np.ndarray:
        return self._entries.copy()

    def head(self) -> np.ndarray:
        """Oldest entry: the input taking effect over the current period."""
        if self.n == 0:
            raise IndexError("zero-delay buffer has no head")
        return self._entries[0].copy()

    def push(self, u) -> np.ndarray:
        """Append the newly computed input, dropping and returning the oldest."""
        if len(self._entries) != self.n:
            raise AssertionError("input buffer length violated")
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.n == 0:
            return u.copy()
        oldest = self._entries[0].copy()
        self._entries = np.vstack([self._entries[1:], u[None, :]])
        return oldest


def predict_delayed_state(model: ControlAffineModel, x, buffer: InputBuffer,
                          dt: float, substeps: int = 1) -> np.ndarray:
    """State n periods ahead under the buffered inputs with zero-order hold."""
    x = np.asarray(x, dtype=float)
    for u in buffer.as_signal():
        x = step_zoh(model, x, u, dt, substeps)
    return x


@dataclass(frozen=True, eq=False)
class FilterDiagnostics:
    u_des: np.ndarray
    u_applied: np.ndarray
    qp_status: str
    fallback: bool
    membership_margin: float
    min_constraint_margin: float
    active: tuple = ()
    predicted_state: np.ndarray | None = None
    fault: str | None = None


@dataclass(eq=False)
class SafetyFilter:
    """One filter instance per control loop; owns its warm start and delay buffer."""

    model: ControlAffineModel
    spec: SafetySpec
    backup: BackupController
    dt: float
    robust: bool = True                    # reachability + uncertainty boxes
    constraint_points: int = 10
    delay_steps: int = 0
    delay_residual_s: float = 0.0          # rounded-up remainder of the true delay
    prediction_inflation: np.ndarray | None = None
    model_substeps: int = 1                # backup rollout fidelity
    predictor_substeps: int = 1            # delay predictor fidelity
    fd_eps: float = 1e-5
    fd_scheme: str = "central"
    det_floor: float = 0.0
    reach_inflation: float = 1.1
    reach_max_iter: int = 20
    _warm: tuple = field(default=(), repr=False)
    _buffer: InputBuffer | None = field(default=None, repr=False)

    def __post_init__(self):
        self.spec.steps(self.dt)  # validates that dt divides the horizon
        if self.delay_steps > 0:
            self._buffer = InputBuffer(self.delay_steps, self.model.m)

    @property
    def buffer(self) -> InputBuffer:
        if self._buffer is None:
            raise AttributeError("filter configured without delay compensation")
        return self._buffer

    def _fallback(self, x, u_des, margin: float, status: str,
                  fault: str | None = None,
                  predicted=None) -> tuple[np.ndarray, FilterDiagnostics]:
        u = self.backup(np.asarray(x, dtype=float))
        return u, FilterDiagnostics(
            u_des=np.atleast_1d(np.asarray(u_des, float)), u_applied=u,
            qp_status=status, fallback=True, membership_margin=margin,
            min_constraint_margin=math.nan, predicted_state=predicted,
            fault=fault)

    def filter_step(self, x_est, delta_x: so.Box, u_des) -> tuple[np.ndarray, FilterDiagnostics]:
        """One sample of the CBF-QP filter at the state estimate.

        Returns the input to apply plus diagnostics; falls back to the backup
        action on non-membership, enclosure/integration failure, or an
        infeasible QP.
        """
        x_est = np.asarray(x_est, dtype=float)
        steps = self.spec.steps(self.dt)
        try:
            traj = flow_with_sensitivity(
                self.model, x_est, self.backup, self.dt, steps,
                eps_base=self.fd_eps, scheme=self.fd_scheme,
                substeps=self.model_substeps, det_floor=self.det_floor)
        except (IntegrationError, RuntimeError) as exc:
            return self._fallback(x_est, u_des, math.nan, "fault", fault=str(exc))

        member, margin = membership_from_states(traj.states, self.spec)
        if not member:
            return self._fallback(x_est, u_des, margin, "nonmember")

        try:
            rows = build_constraints(
                self.model, x_est, delta_x, traj, self.spec, self.dt,
                k=self.constraint_points, use_reachability=self.robust,
                reach_inflation=self.reach_inflation,
                reach_max_iter=self.reach_max_iter)
        except (so.EnclosureError, ValueError) as exc:
            return self._fallback(x_est, u_des, margin, "fault", fault=str(exc))

        problem = FilterProblem(u_des=u_des, constraints=rows,
                                bounds=self.model.input_box())
        result = solve_filter_qp(problem, warm_start=self._warm)
        if result.status != OPTIMAL:
            self._warm = ()
            return self._fallback(x_est, u_des, margin, INFEASIBLE)
        self._warm = result.active
        u = result.u
        min_margin = min(r.margin(u) for r in rows)
        return u, FilterDiagnostics(
            u_des=np.atleast_1d(np.asarray(u_des, float)), u_applied=u,
            qp_status=result.status, fallback=False, membership_margin=margin,
            min_constraint_margin=min_margin, active=result.active)

    def delayed_filter_step(self, x_est, delta_x: so.Box, u_des=None,
                            desired_policy=None) -> tuple[np.ndarray, FilterDiagnostics]:
        """One sample of the delay-compensating filter.

        The estimate is integrated through the buffered inputs to the state
        where the new input takes effect; the filter runs there, with the
        uncertainty box inflated by the configured prediction-error margin
        (plus the rounding-residual term when the physical delay is not an
        integer number of periods).  Exactly one of u_des / desired_policy
        must be given; a policy is evaluated at the predicted state.
        """
        if (u_des is None) == (desired_policy is None):
            raise ValueError("provide exactly one of u_des or desired_policy")
        x_est = np.asarray(x_est, dtype=float)
        if self.delay_steps == 0:
            if desired_policy is not None:
                u_des = desired_policy(x_est)
            return self.filter_step(x_est, delta_x, u_des)

        x_pred = predict_delayed_state(self.model, x_est, self.buffer, self.dt,
                                       self.predictor_substeps)
        if desired_policy is not None:
            u_des = desired_policy(x_pred)

        inflated = delta_x
        extra = np.zeros(self.model.n)
        if self.prediction_inflation is not None:
            extra = extra + np.asarray(self.prediction_inflation, dtype=float)
        if self.delay_residual_s > 0.0:
            extra = extra + self.delay_residual_s * self._rate_bound(x_pred, delta_x)
        if np.any(extra > 0.0):
            inflated = so.box_sum(delta_x, so.Box.from_radius(np.zeros(self.model.n), extra))

        u, diag = self.filter_step(x_pred, inflated, u_des)
        self.buffer.push(u)
        return u, replace(diag, predicted_state=x_pred)

    def _rate_bound(self, x, delta_x: so.Box) -> np.ndarray:
        """Per-axis bound on |xdot| near x, over the uncertainty box and all
        admissible inputs; converts rounding-residual time into state error."""
        box = delta_x.translate(np.asarray(x, dtype=float))
        ivs = box.intervals()
        f_iv = self.model.f(ivs)
        g_iv = self.model.g(ivs)
        u_ivs = self.model.input_box().intervals()
        rates = []
        for fi, gi in zip(f_iv, g_iv):
            total = so.as_interval(fi) + so.iv_dot(gi, u_ivs)
            rates.append(max(abs(total.lo), abs(total.hi)))
        return np.array(rates)


def delay_discretization(delay_s: float, dt: float) -> tuple[int, float]:
    """Integer delay steps (rounded up) and the leftover fraction in seconds."""
    if delay_s < 0:
        raise ValueError("delay must be nonnegative")
    if delay_s == 0.0:
        return 0, 0.0
    ratio = delay_s / dt
    n = int(math.ceil(ratio - 1e-9))
    residual = max(n * dt - delay_s, 0.0)
    if residual < 1e-12:
        residual = 0.0
    return n, residual


def check_zero_input_flow(model: ControlAffineModel, initial_box: so.Box,
                          policy, spec: SafetySpec, delay_steps: int, dt: float,
                          samples: int = 100,
                          rng: np.random.Generator | None = None,
                          substeps: int = 1) -> tuple[bool, float]:
    """Empirical startup check: the zero-input flow over n periods, from the
    initial box's vertices plus interior samples, must land inside the
    implicit invariant set.  A sampled check, not a proof."""
    if delay_steps == 0:
        return True, math.inf
    rng = rng or np.random.default_rng(0)
    points = [initial_box.mid] + list(initial_box.vertices())
    points += list(initial_box.sample(rng, samples))
    worst = math.inf
    u0 = np.zeros(model.m)
    for x in points:
        y = np.asarray(x, dtype=float)
        for _ in range(delay_steps):
            y = step_zoh(model, y, u0, dt, substeps)
        _, margin = membership(model, policy, y, spec, dt, substeps)
        worst = min(worst, margin)
    return worst >= 0.0, worst

"""Flow-sensitivity matrices of the ZOH backup flow.

Per-step Jacobians come from finite differences of the one-step sampled-data
closed-loop map x -> phi_dt(x; u_B(x)): each perturbed rollout samples the
backup policy at its own step-start state and holds that value for the whole
step.  Between update instants the input is frozen, so each per-step map is
smooth and the chain-rule product of step Jacobians is the derivative of the
multi-step closed-loop flow; the nonsmooth points live only at the update
instants, which the construction never differentiates across.

`step_jacobian` is the input-frozen building block (one given held input for
every rollout); it is what covariance propagation wants.  The closed-loop
composition lives in `flow_with_sensitivity`.

All 2n (or n, for forward differences) perturbed rollouts of a step are
evaluated as one batched integrator call; results combine deterministically
in axis order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dynamics import ControlAffineModel, Trajectory, step_zoh

logger = logging.getLogger(__name__)


class SensitivityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SensitivityTrajectory:
    """Backup rollout plus per-step and cumulative flow Jacobians.

    cumulative[i] maps initial-state perturbations to perturbations of the
    state at time i*dt: cumulative[0] = I and
    cumulative[i+1] = step_jacobians[i] @ cumulative[i].
    """

    base: Trajectory
    step_jacobians: np.ndarray   # (N, n, n)
    cumulative: np.ndarray       # (N+1, n, n)

    @property
    def states(self) -> np.ndarray:
        return self.base.states


def perturbation_size(x, base: float = 1e-5) -> float:
    """Relative finite-difference perturbation: base * (1 + |x|_inf)."""
    x = np.asarray(x, dtype=float)
    return base * (1.0 + (float(np.max(np.abs(x))) if x.size else 0.0))


def _perturbation_batch(x: np.ndarray, eps: float, scheme: str) -> np.ndarray:
    n = x.size
    eye = np.eye(n) * eps
    if scheme == "central":
        return np.concatenate([x + eye, x - eye], axis=0)
    if scheme == "forward":
        return np.concatenate([x[None, :], x + eye], axis=0)
    raise ValueError(f"unknown finite-difference scheme {scheme!r}")


def _jacobian_from_batch(stepped: np.ndarray, eps: float, scheme: str,
                         n: int) -> np.ndarray:
    if scheme == "central":
        jac = (stepped[:n] - stepped[n:]).T / (2.0 * eps)
    else:
        jac = (stepped[1:] - stepped[0]).T / eps
    return jac


def step_jacobian(model: ControlAffineModel, x, u_held, dt: float,
                  eps: float | None = None, scheme: str = "central",
                  substeps: int = 1) -> np.ndarray:
    """Finite-difference Jacobian of the one-step ZOH flow x -> phi_dt(x; u_held).

    The same held input is used for every perturbed rollout.
    """
    x = np.asarray(x, dtype=float)
    if eps is None:
        eps = perturbation_size(x)
    batch = _perturbation_batch(x, eps, scheme)
    stepped = step_zoh(model, batch, u_held, dt, substeps)
    jac = _jacobian_from_batch(stepped, eps, scheme, x.size)
    bad = ~np.all(np.isfinite(jac), axis=0)
    if np.any(bad):
        raise SensitivityError(
            f"non-finite sensitivity column(s) for axis {np.flatnonzero(bad).tolist()}")
    return jac


def compose_sensitivities(step_jacobians) -> np.ndarray:
    """Ordered chain-rule product; the earliest step is the rightmost factor."""
    mats = [np.asarray(j, dtype=float) for j in step_jacobians]
    if not mats:
        raise ValueError("compose_sensitivities needs at least one matrix")
    n = mats[0].shape[0]
    for j in mats:
        if j.shape != (n, n):
            raise ValueError(f"jacobian shape {j.shape} != ({n}, {n})")
    out = np.eye(n)
    for j in mats:
        out = j @ out
    return out


def _policy_batch(policy, model: ControlAffineModel, batch: np.ndarray) -> np.ndarray:
    """Saturated policy samples for a batch of states; loops if the policy
    does not broadcast."""
    try:
        u = np.asarray(policy(batch), dtype=float)
        if u.shape == (len(batch), model.m):
            return model.saturate(u)
    except Exception:
        pass
    return np.stack([model.saturate(policy(row)) for row in batch])


def flow_with_sensitivity(model: ControlAffineModel, x0, backup_policy,
                          dt: float, steps: int, eps_base: float = 1e-5,
                          scheme: str = "central", substeps: int = 1,
                          det_floor: float = 0.0) -> SensitivityTrajectory:
    """Roll out the ZOH backup policy and propagate closed-loop sensitivities.

    Each step differentiates the map x -> phi_dt(x; policy(x)): the policy is
    sampled at every rollout's step-start state and held for the step, so the
    Jacobians carry the feedback sensitivity of the sampled-data closed loop.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    x = np.asarray(x0, dtype=float).copy()
    n = model.n
    states = np.empty((steps + 1, n))
    inputs = np.empty((steps, model.m))
    step_jacs = np.empty((steps, n, n))
    cumulative = np.empty((steps + 1, n, n))
    states[0] = x
    cumulative[0] = np.eye(n)
    if scheme == "central":
        rows = 2 * n
    elif scheme == "forward":
        rows = n + 1
    else:
        raise ValueError(f"unknown finite-difference scheme {scheme!r}")
    batch = np.empty((1 + rows, n))
    axis = np.arange(n)
    for i in range(steps):
        eps = eps_base * (1.0 + float(np.max(np.abs(x))))
        batch[:] = x
        if scheme == "central":
            batch[1 + axis, axis] += eps
            batch[1 + n + axis, axis] -= eps
        else:
            batch[2 + axis, axis] += eps
        u_batch = _policy_batch(backup_policy, model, batch)
        inputs[i] = u_batch[0]
        stepped = step_zoh(model, batch, u_batch, dt, substeps)
        x = stepped[0]
        states[i + 1] = x
        jac = _jacobian_from_batch(stepped[1:], eps, scheme, n)
        if not np.all(np.isfinite(jac)):
            raise SensitivityError(f"non-finite step jacobian at step {i}")
        step_jacs[i] = jac
        cumulative[i + 1] = jac @ cumulative[i]
        if det_floor > 0.0:
            det = float(np.linalg.det(cumulative[i + 1]))
            if abs(det) < det_floor:
                logger.warning("cumulative sensitivity near-singular at step %d (det=%.3e)",
                               i + 1, det)
    base = Trajectory(dt=dt, states=states, held_inputs=inputs, substeps=substeps)
    return SensitivityTrajectory(base=base, step_jacobians=step_jacs,
                                 cumulative=cumulative)

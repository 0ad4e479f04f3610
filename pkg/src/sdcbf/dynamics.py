"""Control-affine models, a fixed-step RK4 integrator, and zero-order-hold flows.

Model callables are written against the dispatching primitives in `setops`,
so the same f/g code evaluates on single states (n,), batches (B, n) used by
the finite-difference sensitivity rollouts, and interval vectors used by the
reachability and constraint machinery.

Everything is pure and deterministic: identical inputs produce bit-identical
trajectories, and a policy is sampled exactly once per hold period.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import setops as so


class ModelEvaluationError(RuntimeError):
    pass


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ControlAffineModel:
    """xdot = f(x) + g(x) u with a hyperbox input set {-u_max <= u <= u_max}.

    `xdot_fast`, when provided, is a fused f(x) + g(x) u for ndarray inputs;
    it must agree with f and g exactly and exists purely to cut numpy call
    overhead in rollout-heavy paths.
    """

    n: int
    m: int
    f: Callable
    g: Callable
    u_max: np.ndarray
    name: str = ""
    xdot_fast: Callable | None = None

    def __post_init__(self):
        object.__setattr__(self, "u_max", np.broadcast_to(
            np.asarray(self.u_max, dtype=float), (self.m,)).copy())

    def saturate(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.clip(u, -self.u_max, self.u_max)

    def input_box(self) -> so.Box:
        return so.Box(-self.u_max, self.u_max)


def _split4(x):
    if isinstance(x, np.ndarray):
        return x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    return x[0], x[1], x[2], x[3]


_join = so.join_like


def _join_cols(cols, like):
    """Stack per-input columns into g(x) of shape (..., n, m) or nested lists."""
    if isinstance(like, np.ndarray):
        shape = like.shape[:-1]
        mats = [np.stack([np.broadcast_to(np.asarray(p, dtype=float), shape)
                          for p in col], axis=-1) for col in cols]
        return np.stack(mats, axis=-1)
    n = len(cols[0])
    return [[col[i] for col in cols] for i in range(n)]


def linear_model(A, B, u_max) -> ControlAffineModel:
    """f(x) = A x, g(x) = B; handy for oracles with closed-form flows."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n, m = B.shape

    def f(x):
        if isinstance(x, np.ndarray):
            return x @ A.T
        return so.iv_matvec(A, x)

    def g(x):
        if isinstance(x, np.ndarray):
            return np.broadcast_to(B, x.shape[:-1] + B.shape)
        return [[float(b) for b in row] for row in B]

    return ControlAffineModel(n=n, m=m, f=f, g=g, u_max=u_max, name="linear")


def closed_loop_model(model: ControlAffineModel, K) -> ControlAffineModel:
    """Fold a linear state feedback u = K x into the drift: f'(x) = f(x) + g(x) K x.

    The input map is unchanged, so the result describes the plant as seen by
    any controller commanding on top of the feedback.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))

    def f(x):
        if isinstance(x, np.ndarray):
            u_fb = x @ K.T
            gmat = model.g(x)
            return model.f(x) + np.einsum("...nm,...m->...n", gmat, u_fb)
        u_fb = [so.iv_dot(K[j], x) for j in range(K.shape[0])]
        g_iv = model.g(x)
        return [so.as_interval(fi) + so.iv_dot(gi, u_fb)
                for fi, gi in zip(model.f(x), g_iv)]

    return ControlAffineModel(n=model.n, m=model.m, f=f, g=model.g,
                              u_max=model.u_max, name=f"{model.name}+prefb")


@dataclass(frozen=True)
class SegwayParams:
    """Physical parameters (SI units). Loaded from the [segway] config section."""

    wheel_mass: float = 3.0        # both wheels, kg
    body_mass: float = 15.0        # kg
    body_inertia: float = 2.0      # about the COM, kg m^2
    com_length: float = 0.6        # wheel axle to COM, m
    wheel_radius: float = 0.15     # m
    gravity: float = 9.81          # m/s^2
    torque_constant: float = 1.0   # N m per unit command
    u_max: float = 25.0            # command bound


def make_segway(params: SegwayParams | None = None) -> ControlAffineModel:
    """4-state planar Segway: x = [p, p_dot, theta, theta_dot], u = torque command.

    Wheel torque drives the wheels forward (force tau/r on the base) and reacts
    on the body (-tau), so the model is the usual non-minimum-phase wheeled
    inverted pendulum.  The upright rest state is an exact equilibrium and its
    linearization is unstable.
    """
    prm = params or SegwayParams()
    mt = prm.wheel_mass + prm.body_mass
    a = prm.body_mass * prm.com_length
    ith = prm.body_mass * prm.com_length ** 2 + prm.body_inertia
    mgl = prm.body_mass * prm.gravity * prm.com_length
    km, r = prm.torque_constant, prm.wheel_radius
    # mass matrix [[mt, a c], [a c, ith]]; det >= mt*ith - a^2 > 0 always
    if mt * ith <= a * a:
        raise ValueError("segway mass matrix is not positive definite")

    def f(x):
        if isinstance(x, np.ndarray):
            dp, th, dth = x[..., 1], x[..., 2], x[..., 3]
            sth, cth = np.sin(th), np.cos(th)
            det = mt * ith - (a * a) * cth * cth
            coriolis = (a * sth) * (dth * dth)
            tip = mgl * sth
            out = np.empty_like(x)
            out[..., 0] = dp
            out[..., 1] = (ith * coriolis - a * cth * tip) / det
            out[..., 2] = dth
            out[..., 3] = (mt * tip - a * cth * coriolis) / det
            return out
        _, dp, th, dth = _split4(x)
        sth, cth = so.sin(th), so.cos(th)
        det = mt * ith - a * a * so.square(cth)
        coriolis = a * sth * so.square(dth)
        tip = mgl * sth
        ddp = (ith * coriolis - a * cth * tip) / det
        ddth = (mt * tip - a * cth * coriolis) / det
        return [dp, ddp, dth, ddth]

    def g(x):
        if isinstance(x, np.ndarray):
            cth = np.cos(x[..., 2])
            det = mt * ith - (a * a) * cth * cth
            out = np.zeros(x.shape[:-1] + (4, 1))
            out[..., 1, 0] = km * (ith / r + a * cth) / det
            out[..., 3, 0] = -km * (a * cth / r + mt) / det
            return out
        _, _, th, _ = _split4(x)
        cth = so.cos(th)
        det = mt * ith - a * a * so.square(cth)
        gp = km * (ith / r + a * cth) / det
        gth = -km * (a * cth / r + mt) / det
        return [[0.0], [gp], [0.0], [gth]]

    ith_r = ith / r
    inv_r = 1.0 / r
    mt_ith = mt * ith
    workspaces = threading.local()

    def xdot_fast(x, u):
        th = x[..., 2]
        dth = x[..., 3]
        cache = workspaces.__dict__.setdefault("by_shape", {})
        ws = cache.get(th.shape)
        if ws is None:
            ws = cache[th.shape] = [np.empty(th.shape) for _ in range(5)]
        s, c, det, cor, tmp = ws
        np.sin(th, out=s)
        np.cos(th, out=c)
        ac = np.multiply(a, c, out=np.empty_like(c))
        np.multiply(ac, ac, out=det)
        np.subtract(mt_ith, det, out=det)
        np.multiply(dth, dth, out=cor)
        cor *= s
        cor *= a
        tip = np.multiply(mgl, s, out=s)  # s no longer needed
        uu = u[..., 0] if u.ndim > 1 else u[0]
        out = np.empty_like(x)
        out[..., 0] = x[..., 1]
        out[..., 2] = dth
        # (ith*cor - ac*tip + (ith_r + ac)*tau) / det
        np.add(ith_r, ac, out=tmp)
        tmp *= km
        tmp *= uu
        o1 = out[..., 1]
        np.multiply(ith, cor, out=o1)
        o1 -= ac * tip
        o1 += tmp
        o1 /= det
        # (mt*tip - ac*cor - (ac/r + mt)*tau) / det
        np.multiply(ac, inv_r, out=tmp)
        tmp += mt
        tmp *= km
        tmp *= uu
        o3 = out[..., 3]
        np.multiply(mt, tip, out=o3)
        o3 -= ac * cor
        o3 -= tmp
        o3 /= det
        return out

    return ControlAffineModel(n=4, m=1, f=f, g=g, u_max=prm.u_max, name="segway",
                              xdot_fast=xdot_fast)


def eval_dynamics(model: ControlAffineModel, x, u) -> np.ndarray:
    """f(x) + g(x) u, with finiteness checking.

    Inputs outside the admissible box are warned about, not rejected:
    saturation is the caller's job.
    """
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape[-1] != model.n:
        raise ValueError(f"state dimension {x.shape[-1]} != model n={model.n}")
    if u.shape[-1] != model.m:
        raise ValueError(f"input dimension {u.shape[-1]} != model m={model.m}")
    if np.any(np.abs(u) > model.u_max * (1 + 1e-12)):
        warnings.warn(f"input {u} outside admissible box +-{model.u_max}",
                      stacklevel=2)
    out = _xdot(model, x, u)
    if not np.all(np.isfinite(out)):
        raise ModelEvaluationError(f"non-finite dynamics at x={x}, u={u}")
    return out


def _xdot(model: ControlAffineModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    if model.xdot_fast is not None:
        return model.xdot_fast(x, u)
    gmat = model.g(x)
    if gmat.shape[-1] == 1:  # single input: plain broadcasting beats matmul
        uu = u[..., 0, None] if u.ndim > 1 else u[0]
        return model.f(x) + gmat[..., 0] * uu
    if u.ndim > 1:
        return model.f(x) + np.einsum("...nm,...m->...n", gmat, u)
    return model.f(x) + gmat @ u


def rk4_step(model: ControlAffineModel, x: np.ndarray, u: np.ndarray,
             h: float) -> np.ndarray:
    k1 = _xdot(model, x, u)
    k2 = _xdot(model, x + (0.5 * h) * k1, u)
    k3 = _xdot(model, x + (0.5 * h) * k2, u)
    k4 = _xdot(model, x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_zoh(model: ControlAffineModel, x, u_held, dt: float,
             substeps: int = 1) -> np.ndarray:
    """Advance the state dt seconds with u held constant (classical RK4).

    `substeps` splits the hold period into equal RK4 steps; the held input is
    untouched, so this only refines integration accuracy.  Accepts batched
    states (B, n) with a shared input (m,) or per-row inputs (B, m).
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u_held, dtype=float))
    h = dt / substeps
    for k in range(substeps):
        x = rk4_step(model, x, u, h)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(
                f"non-finite state after substep {k + 1}/{substeps} (dt={dt}, u={u})")
    return x


@dataclass(frozen=True)
class Trajectory:
    """Sampled ZOH flow: states at 0, dt, ..., N dt and the input held over each step."""

    dt: float
    states: np.ndarray        # (N+1, n)
    held_inputs: np.ndarray   # (N, m)
    substeps: int = 1

    def __post_init__(self):
        if len(self.states) != len(self.held_inputs) + 1:
            raise ValueError("states must have exactly one more row than held_inputs")

    @property
    def steps(self) -> int:
        return len(self.held_inputs)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.states))


def simulate_zoh(model: ControlAffineModel, x0, policy, dt: float, steps: int,
                 substeps: int = 1) -> Trajectory:
    """Closed-loop ZOH simulation: sample the policy at step boundaries only.

    `policy` is either a feedback map x -> u or an indexable input signal
    (one row per step).  Policy outputs are saturated at the point of
    application.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (model.n,):
        raise ValueError(f"x0 must have shape ({model.n},)")
    states = np.empty((steps + 1, model.n))
    inputs = np.empty((steps, model.m))
    states[0] = x
    feedback = callable(policy)
    for i in range(steps):
        u = policy(x) if feedback else policy[i]
        u = model.saturate(u)
        inputs[i] = u
        try:
            x = step_zoh(model, x, u, dt, substeps)
        except IntegrationError as exc:
            raise IntegrationError(f"step {i}: {exc}") from exc
        states[i + 1] = x
    return Trajectory(dt=dt, states=states, held_inputs=inputs, substeps=substeps)

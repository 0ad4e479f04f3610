"""Sensor simulation and extended Kalman filtering.

The sensor suite measures position (wheel encoder) plus body angle and rate
(IMU); forward velocity is reconstructed by the filter.  The EKF propagates
its mean through the same ZOH integrator as the plant model and its
covariance through the finite-difference step Jacobian, and feeds the safety
filter a confidence-scaled uncertainty box.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import setops as so
from .dynamics import ControlAffineModel, step_zoh
from .sensitivity import step_jacobian

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class SensorModel:
    """Linear measurements of selected state components with Gaussian noise."""

    measured: tuple            # state indices observed, e.g. (0, 2, 3)
    noise_std: np.ndarray      # per-channel standard deviation
    rng: np.random.Generator   # owned stream; same seed, same noise sequence

    def __post_init__(self):
        self.measured = tuple(int(i) for i in self.measured)
        self.noise_std = np.broadcast_to(
            np.asarray(self.noise_std, dtype=float), (len(self.measured),)).copy()

    def matrix(self, n: int) -> np.ndarray:
        H = np.zeros((len(self.measured), n))
        for row, idx in enumerate(self.measured):
            H[row, idx] = 1.0
        return H

    def covariance(self) -> np.ndarray:
        return np.diag(self.noise_std ** 2)

    def measure(self, x_true: np.ndarray) -> np.ndarray:
        x_true = np.asarray(x_true, dtype=float)
        z = x_true[list(self.measured)]
        return z + self.noise_std * self.rng.standard_normal(len(self.measured))


@dataclass(frozen=True, eq=False)
class EkfState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).copy())
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float).copy())
        asym = float(np.max(np.abs(self.cov - self.cov.T)))
        if asym > 1e-9:
            raise ValueError(f"covariance asymmetry {asym:.3e}")


def _reproject_psd(cov: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Clamp tiny negative eigenvalues; warn if the violation is real."""
    cov = 0.5 * (cov + cov.T)
    w = np.linalg.eigvalsh(cov)
    if w[0] >= 0.0:
        return cov
    if w[0] < -tol:
        logger.warning("covariance lost PSD (min eig %.3e); re-projecting", w[0])
    w2, V = np.linalg.eigh(cov)
    return (V * np.maximum(w2, 0.0)) @ V.T


def ekf_predict(model: ControlAffineModel, est: EkfState, u_held, dt: float,
                Q_d: np.ndarray, substeps: int = 1,
                eps_base: float = 1e-5) -> EkfState:
    """Propagate mean through the ZOH flow and covariance through its Jacobian."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    mean = step_zoh(model, est.mean, u_held, dt, substeps)
    F = step_jacobian(model, est.mean, u_held, dt, substeps=substeps,
                      eps=eps_base * (1.0 + float(np.max(np.abs(est.mean)))))
    cov = F @ est.cov @ F.T + np.asarray(Q_d, dtype=float)
    return EkfState(mean=mean, cov=_reproject_psd(cov))


def ekf_predict_piecewise(model: ControlAffineModel, est: EkfState, segments,
                          Q_d: np.ndarray, substep_h: float | None = None) -> EkfState:
    """Predict across one controller period whose held input switches mid-period.

    segments is a list of (u, duration); Q_d is added once for the whole
    period.  substep_h sets the integrator substep (defaults to one substep
    per segment), so the mean propagation can match the plant's exactly.
    """
    mean = est.mean
    cov = est.cov
    for u, tau in segments:
        if tau <= 0:
            continue
        nsub = 1 if substep_h is None else max(1, int(round(tau / substep_h)))
        F = step_jacobian(model, mean, u, tau, substeps=nsub)
        mean = step_zoh(model, mean, u, tau, substeps=nsub)
        cov = F @ cov @ F.T
    cov = cov + np.asarray(Q_d, dtype=float)
    return EkfState(mean=mean, cov=_reproject_psd(cov))


def ekf_update(est: EkfState, z: np.ndarray, H: np.ndarray,
               R: np.ndarray) -> EkfState:
    """Joseph-form measurement update (PSD-preserving)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if H.shape[0] != z.size:
        raise ValueError("measurement dimension mismatch")
    S = H @ est.cov @ H.T + R
    try:
        K = np.linalg.solve(S.T, (est.cov @ H.T).T).T
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("singular innovation covariance") from exc
    innovation = z - H @ est.mean
    mean = est.mean + K @ innovation
    n = est.mean.size
    J = np.eye(n) - K @ H
    cov = J @ est.cov @ J.T + K @ R @ K.T
    return EkfState(mean=mean, cov=_reproject_psd(cov))


def uncertainty_box(est: EkfState, confidence_scale: float,
                    caps=None) -> so.Box:
    """Componentwise +-c*sigma box centered at 0, clipped by per-axis caps.

    The box is meant to be Minkowski-added to the estimate; caps keep the
    barrier from receiving unbounded boxes during filter startup.
    """
    if confidence_scale <= 0:
        raise ValueError("confidence scale must be positive")
    rad = confidence_scale * np.sqrt(np.maximum(np.diag(est.cov), 0.0))
    if caps is not None:
        rad = np.minimum(rad, np.asarray(caps, dtype=float))
    return so.Box.from_radius(np.zeros(est.mean.size), rad)

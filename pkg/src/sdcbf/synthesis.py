"""Pre-feedback gain synthesis for incremental stability.

The search looks for a common quadratic Lyapunov matrix P and a gain K such
that every vertex of a family of linearizations satisfies the decrease
condition P(A_i + B_i K) + (A_i + B_i K)^T P <= 0.  It runs in the convexifying
variables Q = P^-1, Y = K Q with a projected-subgradient feasibility iteration;
no SDP solver is involved.  The deliverable is the certificate itself: the
margins reported by `verify_decrease` are recomputed from eigenvalues,
independent of how (K, P) were found.

Optimality of the input-economy objective is treated as a preference only
(maximize the availability level), never claimed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import setops as so
from .dynamics import ControlAffineModel


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class VertexFamily:
    """Linearizations (A_i, B_i) taken at extreme states of an operating box."""

    A_list: np.ndarray       # (N, n, n)
    B_list: np.ndarray       # (N, n, m)
    provenance: np.ndarray   # (N, n) states that generated each vertex

    @property
    def count(self) -> int:
        return len(self.A_list)

    @property
    def dims(self) -> tuple[int, int]:
        return self.B_list.shape[1], self.B_list.shape[2]


@dataclass(frozen=True, eq=False)
class GainCertificate:
    """Feasibility certificate: gain, Lyapunov matrix, per-vertex margins, and
    the availability level of the gain under the input bounds."""

    K: np.ndarray        # (m, n)
    P: np.ndarray        # (n, n), symmetric positive definite
    margins: np.ndarray  # (N,) max eigenvalues of the closed-loop decrease LMI
    rho: float           # availability level; inf when K = 0


def jacobian_fd(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector map at x."""
    x = np.asarray(x, dtype=float)
    n = x.size
    cols = []
    for j in range(n):
        dx = np.zeros(n)
        dx[j] = eps
        cols.append((np.asarray(fn(x + dx), float) - np.asarray(fn(x - dx), float))
                    / (2.0 * eps))
    return np.stack(cols, axis=-1)


def linearize_at_vertices(model: ControlAffineModel, x_box: so.Box,
                          eps: float = 1e-6, dedup_tol: float = 1e-9) -> VertexFamily:
    """Finite-difference linearization at every corner of the operating box.

    A = df/dx at u = 0, B = g(x).  Corners whose (A, B) agree to within
    dedup_tol are merged.
    """
    verts = x_box.vertices()
    A_list, B_list, prov = [], [], []
    for x in verts:
        A = jacobian_fd(model.f, x, eps)
        B = np.asarray(model.g(x), dtype=float)
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise SynthesisError(f"non-finite linearization at vertex {x}")
        duplicate = any(np.max(np.abs(A - A0)) < dedup_tol
                        and np.max(np.abs(B - B0)) < dedup_tol
                        for A0, B0 in zip(A_list, B_list))
        if not duplicate:
            A_list.append(A)
            B_list.append(B)
            prov.append(x)
    return VertexFamily(A_list=np.array(A_list), B_list=np.array(B_list),
                        provenance=np.array(prov))


def verify_decrease(K: np.ndarray, P: np.ndarray, family: VertexFamily) -> np.ndarray:
    """Per-vertex max eigenvalue of P(A_i + B_i K) + (A_i + B_i K)^T P.

    Pure eigenvalue computation, independent of the synthesis path; a
    certificate is valid when every margin is <= 0.
    """
    K = np.asarray(K, dtype=float)
    P = np.asarray(P, dtype=float)
    margins = []
    for A, B in zip(family.A_list, family.B_list):
        Acl = A + B @ K
        M = P @ Acl + Acl.T @ P
        margins.append(float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T)))))
    return np.array(margins)


def availability_radius(K: np.ndarray, P: np.ndarray, u_max) -> float:
    """Level of {x^T P x <= rho} inside which the gain's demand fits the bounds.

    rho = min_i u_max_i / sqrt(K_i P^-1 K_i^T); the identity
    max{|K_i x| : x^T P x <= 1} = sqrt(K_i P^-1 K_i^T) justifies the form.
    K = 0 demands nothing, reported as +inf.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (K.shape[0],))
    Pinv_Kt = np.linalg.solve(P, K.T)
    rho = np.inf
    for i in range(K.shape[0]):
        demand = float(np.sqrt(max(K[i] @ Pinv_Kt[:, i], 0.0)))
        if demand > 0.0:
            rho = min(rho, u_max[i] / demand)
    return float(rho)


def saturation_free_level(K: np.ndarray, P: np.ndarray, u_max) -> float:
    """Largest level c of {x^T P x <= c} on which |K_i x| <= u_max_i exactly:
    c = min_i u_max_i^2 / (K_i P^-1 K_i^T).  Scale-invariant companion to
    `availability_radius`, used to size the backup set."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (K.shape[0],))
    Pinv_Kt = np.linalg.solve(P, K.T)
    level = np.inf
    for i in range(K.shape[0]):
        q = float(K[i] @ Pinv_Kt[:, i])
        if q > 0.0:
            level = min(level, u_max[i] ** 2 / q)
    return float(level)


def lqr_gain(A: np.ndarray, B: np.ndarray, Q, R) -> np.ndarray:
    """Continuous-time LQR feedback K with u = K x stabilizing (K includes the sign)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n, m = B.shape
    Q = np.diag(np.broadcast_to(np.asarray(Q, dtype=float), (n,))) if np.ndim(Q) <= 1 else np.asarray(Q, float)
    R = np.diag(np.broadcast_to(np.asarray(R, dtype=float), (m,))) if np.ndim(R) <= 1 else np.asarray(R, float)
    S = scipy.linalg.solve_continuous_are(A, B, Q, R)
    return -np.linalg.solve(R, B.T @ S)


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _project_psd(M: np.ndarray, floor: float) -> np.ndarray:
    w, V = np.linalg.eigh(_symmetrize(M))
    return (V * np.maximum(w, floor)) @ V.T


def _lmi_values(Q, Y, family, gamma):
    """Max eigenvalue and eigvec of A_i Q + Q A_i^T + B_i Y + Y^T B_i^T + 2 gamma Q."""
    worst = (-np.inf, None, None)
    values = []
    for idx, (A, B) in enumerate(zip(family.A_list, family.B_list)):
        M = _symmetrize(A @ Q + Q @ A.T + B @ Y + Y.T @ B.T + 2.0 * gamma * Q)
        w, V = np.linalg.eigh(M)
        values.append(w[-1])
        if w[-1] > worst[0]:
            worst = (w[-1], V[:, -1], idx)
    return np.array(values), worst


def synthesize_gain(family: VertexFamily, u_max, gamma: float = 1e-3,
                    max_iter: int = 400, q_floor: float = 1e-6,
                    seed_gain: np.ndarray | None = None,
                    state_scale=None) -> GainCertificate:
    """Search for (K, P) making every vertex satisfy the decrease condition.

    Runs in Q = P^-1, Y = K Q with subgradient steps on the worst vertex's top
    eigenvalue; Q is projected back to the PSD cone and (Q, Y) are jointly
    rescaled each iteration (the condition is homogeneous).  Initialization:
    K = seed_gain (or LQR on the vertex mean when the mean drift is unstable,
    else K = 0) and P from the Lyapunov equation of the mean closed loop.
    The returned margins come from `verify_decrease`, not from the iteration.

    state_scale (per-axis characteristic magnitudes) makes the search run in
    normalized coordinates, which keeps P conditioned relative to the
    operating ranges; that tightness matters downstream, where P's rows set
    the width of interval gradients.
    """
    n, m = family.dims
    if state_scale is not None:
        D = np.diag(np.asarray(state_scale, dtype=float))
        Dinv = np.diag(1.0 / np.asarray(state_scale, dtype=float))
        scaled = VertexFamily(
            A_list=np.array([Dinv @ A @ D for A in family.A_list]),
            B_list=np.array([Dinv @ B for B in family.B_list]),
            provenance=family.provenance)
        seed = None if seed_gain is None else np.atleast_2d(seed_gain) @ D
        inner = synthesize_gain(scaled, u_max, gamma=gamma, max_iter=max_iter,
                                q_floor=q_floor, seed_gain=seed, state_scale=None)
        K = inner.K @ Dinv
        P = Dinv @ inner.P @ Dinv
        margins = verify_decrease(K, P, family)
        if not np.all(margins <= 0.0):
            raise SynthesisError("scaled certificate failed re-verification on "
                                 f"the original family (worst {np.max(margins):.3e})")
        return GainCertificate(K=K, P=P, margins=margins,
                               rho=availability_radius(K, P, u_max))
    u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (m,))
    A_mean = family.A_list.mean(axis=0)
    B_mean = family.B_list.mean(axis=0)

    if seed_gain is not None:
        K0 = np.asarray(seed_gain, dtype=float).reshape(m, n)
    elif np.max(np.linalg.eigvals(A_mean).real) < -1e-9:
        K0 = np.zeros((m, n))
    else:
        if np.allclose(B_mean, 0.0):
            raise SynthesisError("unstable mean drift with zero input map")
        K0 = lqr_gain(A_mean, B_mean, np.ones(n), np.ones(m))
    Acl0 = A_mean + B_mean @ K0
    if np.max(np.linalg.eigvals(Acl0).real) >= 0:
        raise SynthesisError("initial closed-loop mean is not Hurwitz; "
                             "vertex family may be unstabilizable")
    P0 = scipy.linalg.solve_lyapunov(Acl0.T, -np.eye(n))
    Q = np.linalg.inv(_symmetrize(P0))
    Q = Q * (n / np.trace(Q))
    Y = K0 @ Q

    best = None
    gamma_abs = gamma
    for it in range(max_iter):
        values, (worst_val, v, _) = _lmi_values(Q, Y, family, gamma_abs)
        if worst_val < 0.0:
            P = np.linalg.inv(_symmetrize(Q))
            P = _symmetrize(P)
            K = Y @ P
            margins = verify_decrease(K, P, family)
            if np.all(margins <= 0.0):
                rho = availability_radius(K, P, u_max)
                cand = GainCertificate(K=K, P=P, margins=margins, rho=rho)
                if best is None or cand.rho > best.rho:
                    best = cand
                # keep polishing a little in case a later iterate frees up
                # more input authority; stop early once clearly settled
                if it > 20 and best is not None:
                    break
        A_w = family.A_list[np.argmax(values)]
        B_w = family.B_list[np.argmax(values)]
        vvt = np.outer(v, v)
        grad_Q = _symmetrize(A_w.T @ vvt + vvt @ A_w) + 2.0 * gamma_abs * vvt
        grad_Y = 2.0 * B_w.T @ vvt
        scale = max(np.max(np.abs(grad_Q)), np.max(np.abs(grad_Y)), 1e-12)
        lr = 0.2 * max(worst_val, 1e-3) / scale
        Q = _project_psd(Q - lr * grad_Q, q_floor)
        Y = Y - lr * grad_Y
        c = n / np.trace(Q)
        Q, Y = Q * c, Y * c

    if best is None:
        values, _ = _lmi_values(Q, Y, family, gamma_abs)
        raise SynthesisError(
            f"vertex decrease condition infeasible after {max_iter} iterations "
            f"(worst margin {float(np.max(values)):.3e})")
    return best


# -- certificate (de)serialization: row-major K and P, plus rho and margins --

def save_certificate(cert: GainCertificate, path) -> None:
    payload = {
        "n": int(cert.P.shape[0]),
        "m": int(cert.K.shape[0]),
        "K": [float(v) for v in cert.K.ravel()],
        "P": [float(v) for v in cert.P.ravel()],
        "rho": None if np.isinf(cert.rho) else float(cert.rho),
        "margins": [float(v) for v in cert.margins],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_certificate(path) -> GainCertificate:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    n, m = int(payload["n"]), int(payload["m"])
    rho = payload["rho"]
    return GainCertificate(
        K=np.array(payload["K"], dtype=float).reshape(m, n),
        P=np.array(payload["P"], dtype=float).reshape(n, n),
        margins=np.array(payload["margins"], dtype=float),
        rho=np.inf if rho is None else float(rho),
    )

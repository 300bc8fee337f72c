"""Model-based LQR ground truth: CARE, gains, feedforward, Lyapunov cost, tracking runs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .lti import LtiSystem, Trajectory, _grid_steps, rk4_integrate

__all__ = [
    "Weights",
    "GainSet",
    "TrackingSpec",
    "UnsolvableAREError",
    "InfiniteCostError",
    "RankDeficiencyError",
    "solve_care",
    "care_residual",
    "lqr_gain",
    "lqr",
    "feedforward",
    "closed_loop_cost",
    "stability_check",
    "simulate_tracking",
    "format_gain",
]


class UnsolvableAREError(np.linalg.LinAlgError):
    pass


class InfiniteCostError(ValueError):
    pass


class RankDeficiencyError(np.linalg.LinAlgError):
    def __init__(self, rank: int, needed: int):
        super().__init__(f"block system [[A, B], [C, D]] has rank {rank}, needs {needed}")
        self.rank = rank
        self.needed = needed


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class Weights:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if Q.shape[0] != Q.shape[1] or R.shape[0] != R.shape[1]:
            raise ValueError("Q and R must be square")
        if not (np.allclose(Q, Q.T, atol=1e-12) and np.allclose(R, R.T, atol=1e-12)):
            raise ValueError("Q and R must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-10:
            raise ValueError("Q must be positive semi-definite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        Q.flags.writeable = False
        R.flags.writeable = False
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    def scaled(self, alpha: float) -> "Weights":
        return Weights(alpha * self.Q, alpha * self.R)


@dataclass(frozen=True)
class GainSet:
    P: np.ndarray
    K: np.ndarray
    F: np.ndarray | None = None
    are_residual: float = float("nan")
    spectral_abscissa: float = float("nan")


@dataclass(frozen=True)
class TrackingSpec:
    """Reference map ``x - H r = 0  =>  C x = r`` with a constant design reference ``r_hat``."""

    H: np.ndarray
    r_hat: np.ndarray
    C: np.ndarray | None = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        r = np.atleast_1d(np.asarray(self.r_hat, dtype=float)).ravel()
        if H.shape[1] != r.size:
            raise ValueError(f"H has {H.shape[1]} columns but r_hat has {r.size} entries")
        C = H.T.copy() if self.C is None else np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape != (r.size, H.shape[0]):
            raise ValueError(f"C must be {r.size}x{H.shape[0]}, got {C.shape}")
        if not np.allclose(C @ H, np.eye(r.size), atol=1e-10, rtol=0):
            raise ValueError("C H must equal the identity")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "r_hat", r)
        object.__setattr__(self, "C", C)

    @property
    def q(self) -> int:
        return self.r_hat.size

    @classmethod
    def from_output(cls, C, r_hat) -> "TrackingSpec":
        """General construction ``H = C^T (C C^T)^{-1}``."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        H = C.T @ np.linalg.inv(C @ C.T)
        return cls(H=H, r_hat=r_hat, C=C)

    @classmethod
    def unit(cls, n: int, index: int, r_hat: float) -> "TrackingSpec":
        """Track state ``index`` directly (``H = e_index``)."""
        H = np.zeros((n, 1))
        H[index, 0] = 1.0
        return cls(H=H, r_hat=[r_hat])


def care_residual(A, B, Q, R, P) -> float:
    G = B @ np.linalg.solve(R, B.T)
    return float(np.linalg.norm(A.T @ P + P @ A - P @ G @ P + Q, "fro"))


def _lyap(Acl: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Solve ``Acl^T X + X Acl + W = 0``."""
    return _sym(sla.solve_continuous_lyapunov(Acl.T, -W))


def solve_care(A, B, Q, R, max_newton: int = 5) -> np.ndarray:
    """Stabilizing solution of ``A'P + PA - P B R^-1 B' P + Q = 0``.

    The stable invariant subspace of the Hamiltonian is extracted with an
    ordered real Schur form, then polished by Newton-Kleinman steps (one, or
    more while the residual is above ``1e-8 (1 + ||P||)``).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    G = B @ np.linalg.solve(R, B.T)
    Ham = np.block([[A, -G], [-Q, -A.T]])
    eigs = np.linalg.eigvals(Ham)
    if np.min(np.abs(eigs.real)) < 1e-10 * max(1.0, np.abs(eigs).max()):
        raise UnsolvableAREError("Hamiltonian has eigenvalues on the imaginary axis")
    T, Z, sdim = sla.schur(Ham, output="real", sort="lhp")
    if sdim != n:
        raise UnsolvableAREError(f"stable subspace has dimension {sdim}, expected {n}")
    U1, U2 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U1) > 1e12:
        raise UnsolvableAREError("stable subspace basis is singular")
    P = _sym(np.linalg.solve(U1.T, U2.T).T)

    tol = 1e-8 * (1.0 + np.linalg.norm(P, "fro"))
    for i in range(max_newton):
        K = np.linalg.solve(R, B.T @ P)
        Acl = A - B @ K
        if np.linalg.eigvals(Acl).real.max() >= 0:
            raise UnsolvableAREError("Riccati solution is not stabilizing")
        P_new = _lyap(Acl, Q + K.T @ R @ K)
        if i > 0 and care_residual(A, B, Q, R, P_new) >= care_residual(A, B, Q, R, P):
            break
        P = P_new
        tol = 1e-8 * (1.0 + np.linalg.norm(P, "fro"))
        if care_residual(A, B, Q, R, P) <= tol:
            break
    if care_residual(A, B, Q, R, P) > tol:
        raise UnsolvableAREError("Riccati residual above tolerance after refinement")
    return P


def lqr_gain(P, B, R) -> np.ndarray:
    R = np.atleast_2d(np.asarray(R, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if np.linalg.matrix_rank(R) < R.shape[0]:
        raise np.linalg.LinAlgError("R is singular")
    return np.linalg.solve(R, B.T @ np.asarray(P, dtype=float))


def feedforward(A, B, C, D, K, H) -> np.ndarray:
    """Feedforward ``F = N_u + K (N_x - H)`` from ``[[A, B], [C, D]] [N_x; N_u] = [0; I]``.

    The block system is solved in the least-squares sense; when it is wide
    (more unknowns than equations) this is the minimum-norm solution.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    H = np.asarray(H, dtype=float).reshape(A.shape[0], -1)
    n, q = A.shape[0], C.shape[0]
    M = np.block([[A, B], [C, D]])
    needed = min(M.shape)
    rank = np.linalg.matrix_rank(M)
    if rank < needed:
        raise RankDeficiencyError(rank, needed)
    rhs = np.vstack([np.zeros((n, q)), np.eye(q)])
    N = np.linalg.lstsq(M, rhs, rcond=None)[0]
    Nx, Nu = N[:n], N[n:]
    return Nu + K @ (Nx - H)


def stability_check(A, B, K) -> tuple[float, bool]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Acl = A - np.atleast_2d(B) @ np.atleast_2d(K)
    abscissa = float(np.linalg.eigvals(Acl).real.max())
    return abscissa, abscissa < 0


def closed_loop_cost(A, B, K, Q, R, X0=None) -> float:
    """``trace(P_K X0)`` where ``P_K`` is the cost matrix of ``u = -K x``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    abscissa, stable = stability_check(A, B, K)
    if not stable:
        raise InfiniteCostError(f"closed loop not Hurwitz (spectral abscissa {abscissa:.4g})")
    Acl = A - B @ K
    W = Q + K.T @ R @ K
    PK = _lyap(Acl, W)
    X0 = np.eye(A.shape[0]) if X0 is None else np.atleast_2d(np.asarray(X0, dtype=float))
    return float(np.trace(PK @ X0))


def lqr(A, B, weights: Weights, tracking: TrackingSpec | None = None, D=None) -> GainSet:
    """Full oracle: P, K, optional F and diagnostics."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    P = solve_care(A, B, weights.Q, weights.R)
    K = lqr_gain(P, B, weights.R)
    F = None
    if tracking is not None:
        D = np.zeros((tracking.q, B.shape[1])) if D is None else D
        F = feedforward(A, B, tracking.C, D, K, tracking.H)
    abscissa, _ = stability_check(A, B, K)
    return GainSet(P=P, K=K, F=F,
                   are_residual=care_residual(A, B, weights.Q, weights.R, P),
                   spectral_abscissa=abscissa)


def simulate_tracking(
    sys: LtiSystem,
    K,
    F,
    spec: TrackingSpec,
    r_of_t: Callable[[float], np.ndarray],
    x0,
    T: float,
    dt: float,
    substeps: int = 10,
) -> Trajectory:
    """Closed loop under ``u = -K (x - H r) + F r``; records states and applied input."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    F = np.zeros((sys.m, spec.q)) if F is None else np.asarray(F, dtype=float).reshape(sys.m, spec.q)
    H = spec.H
    A, B = sys.A, sys.B
    N = _grid_steps(T, dt)

    def control(t, x):
        r = np.atleast_1d(r_of_t(t)).astype(float)
        return -K @ (x - H @ r) + F @ r

    def rhs(t, x):
        return A @ x + B @ control(t, x)

    X = rk4_integrate(rhs, np.asarray(x0, dtype=float).reshape(sys.n), 0.0, dt, N, substeps)
    U = np.column_stack([control(k * dt, X[:, k]) for k in range(N + 1)])
    return Trajectory(dt=dt, Y=X, U=U)


def format_gain(M, decimals: int = 4) -> str:
    """Fixed-point table, one row per line."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    width = max(len(f"{v:.{decimals}f}") for v in M.ravel())
    return "\n".join("  ".join(f"{v:>{width}.{decimals}f}" for v in row) for row in M)

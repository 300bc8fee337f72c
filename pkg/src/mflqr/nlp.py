"""Equality-constrained smooth minimization by the method of multipliers.

Outer loop: augmented Lagrangian

    Phi(theta) = f(theta) + lam' c(theta) + (mu/2) ||c(theta)||^2

with ``lam <- lam + mu c`` after every inner solve and ``mu <- growth * mu``
whenever ``||c||_inf`` fails to shrink by a factor of 4 while still above
the feasibility tolerance. Inner loop:
L-BFGS with Armijo backtracking, or, when the problem supplies the Hessian of
``f``, Levenberg-Marquardt steps

    (H + mu J'J + delta s I) d = -grad Phi,   H = hess f + sum_k (lam + mu c)_k hess c_k

where the constraint curvature term is included if the problem provides it.
The step comes from the sparse system ``[[H + delta s I, J'], [J, -I/mu]]``;
the few densely coupled columns are split off into a small Schur complement,
so the factorization stays banded and no dense matrix of full size is formed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "NlpProblem",
    "SolverOptions",
    "SolveStatus",
    "SolveReport",
    "minimize",
    "kkt_residual",
    "lbfgs",
    "levenberg_marquardt",
]


@dataclass(frozen=True)
class NlpProblem:
    """Objective ``f`` returns ``(value, gradient)``; ``c`` returns the e-vector of
    equality residuals and ``jac`` its e x d Jacobian (dense or scipy.sparse).
    ``hess_c(theta, w)``, if given, is the Hessian of ``w' c(theta)``."""

    dim: int
    f: Callable[[np.ndarray], tuple[float, np.ndarray]]
    c: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray | sp.spmatrix]
    hess_f: Callable[[np.ndarray], np.ndarray | sp.spmatrix] | None = None
    hess_c: Callable[[np.ndarray, np.ndarray], np.ndarray | sp.spmatrix] | None = None
    name: str = "nlp"


@dataclass(frozen=True)
class SolverOptions:
    tol_constraint: float = 1e-8
    tol_optimality: float = 1e-6
    max_outer: int = 50
    max_inner: int = 500
    mu0: float = 10.0
    mu_growth: float = 10.0
    memory: int = 20
    armijo_c1: float = 1e-4
    max_backtracks: int = 60
    inner_tol0: float = 1e-2
    inner: str = "auto"

    def __post_init__(self):
        for name in ("tol_constraint", "tol_optimality", "mu0", "inner_tol0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.mu_growth <= 1:
            raise ValueError("mu_growth must exceed 1")
        if self.inner not in ("auto", "lbfgs", "lm"):
            raise ValueError(f"unknown inner method {self.inner!r}")
        if self.max_outer < 1 or self.max_inner < 1 or self.memory < 1:
            raise ValueError("iteration limits and memory must be >= 1")


class SolveStatus(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    LINE_SEARCH_FAILURE = "LineSearchFailure"
    DIVERGED = "Diverged"


@dataclass
class SolveReport:
    status: SolveStatus
    outer_iterations: int
    inner_iterations: int
    constraint_violation: float
    stationarity: float
    objective: float
    multipliers: np.ndarray = field(repr=False)
    penalty: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "outer_iterations": self.outer_iterations,
            "inner_iterations": self.inner_iterations,
            "constraint_violation": self.constraint_violation,
            "stationarity": self.stationarity,
            "objective": self.objective,
            "penalty": self.penalty,
        }


def _jt(J, v: np.ndarray) -> np.ndarray:
    return np.asarray(J.T @ v).ravel()


def kkt_residual(problem: NlpProblem, theta, lam) -> tuple[float, float]:
    """``(||grad f + J' lam||_inf, ||c||_inf)``."""
    theta = np.asarray(theta, dtype=float)
    _, g = problem.f(theta)
    c = np.asarray(problem.c(theta), dtype=float)
    lam = np.asarray(lam, dtype=float).reshape(c.shape)
    stat = g + _jt(problem.jac(theta), lam) if c.size else g
    return float(np.max(np.abs(stat), initial=0.0)), float(np.max(np.abs(c), initial=0.0))


@dataclass
class _InnerResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    iterations: int
    status: str  # "converged" | "maxiter" | "linesearch" | "diverged"


def lbfgs(
    fun: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    tol: float,
    max_iter: int,
    memory: int = 20,
    c1: float = 1e-4,
    max_backtracks: int = 60,
) -> _InnerResult:
    """Limited-memory BFGS, Armijo backtracking by halving; stops on ``||grad||_inf <= tol``."""
    x = np.array(x0, dtype=float)
    fx = fun(x)
    g = grad(x)
    if not (np.isfinite(fx) and np.all(np.isfinite(g))):
        return _InnerResult(x, fx, g, 0, "diverged")
    S: list[np.ndarray] = []
    Yv: list[np.ndarray] = []
    rho: list[float] = []
    it = 0
    while True:
        if np.max(np.abs(g), initial=0.0) <= tol:
            return _InnerResult(x, fx, g, it, "converged")
        if it >= max_iter:
            return _InnerResult(x, fx, g, it, "maxiter")

        q = g.copy()
        alphas = []
        for s, y, r in zip(reversed(S), reversed(Yv), reversed(rho)):
            a = r * (s @ q)
            alphas.append(a)
            q -= a * y
        if S:
            q *= (S[-1] @ Yv[-1]) / (Yv[-1] @ Yv[-1])
        else:
            q *= min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-300))
        for (s, y, r), a in zip(zip(S, Yv, rho), reversed(alphas)):
            b = r * (y @ q)
            q += (a - b) * s
        d = -q
        slope = g @ d
        if not slope < 0:
            S.clear(), Yv.clear(), rho.clear()
            d = -g * min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-300))
            slope = g @ d

        step = 1.0
        accepted = False
        g_new = None
        floor = 1e-12 * max(1.0, abs(fx))
        for _ in range(max_backtracks):
            x_new = x + step * d
            if np.array_equal(x_new, x):
                break
            f_new = fun(x_new)
            if not np.isfinite(f_new):
                step *= 0.5
                continue
            if f_new <= fx + c1 * step * slope and (f_new < fx or abs(step * slope) > floor):
                accepted = True
                break
            if abs(f_new - fx) <= floor:
                # values agree to roundoff: fall back to a gradient decrease test
                g_try = grad(x_new)
                if np.all(np.isfinite(g_try)) and np.linalg.norm(g_try) < np.linalg.norm(g):
                    g_new = g_try
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            if S:
                # stale curvature pairs; retry from steepest descent
                S.clear(), Yv.clear(), rho.clear()
                continue
            return _InnerResult(x, fx, g, it, "linesearch")

        if g_new is None:
            g_new = grad(x_new)
        if not np.all(np.isfinite(g_new)):
            return _InnerResult(x, fx, g, it, "diverged")
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s), Yv.append(y), rho.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0), Yv.pop(0), rho.pop(0)
        x, fx, g = x_new, f_new, g_new
        it += 1


def _kkt_solver(H: sp.csr_matrix, damp: np.ndarray, J: sp.csr_matrix,
                mu: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Factor ``[[H + diag(damp), J'], [J, -I/mu]]``; the result maps
    right-hand sides ``(top, bottom)`` to the ``d`` part of the solution.

    Columns touched by many rows of J or H (the few global parameters) form a
    border; the rest is factored sparsely and the border is eliminated through
    its Schur complement.
    """
    d_dim, e_dim = J.shape[1], J.shape[0]
    Hd = (H + sp.diags(damp)).tocsc()
    Jc = J.tocsc()
    busy = np.diff(Jc.indptr) + np.diff(Hd.indptr)
    glob = busy > max(64, (e_dim + d_dim) // 20)
    gi, li = np.flatnonzero(glob), np.flatnonzero(~glob)

    Kl = sp.bmat([
        [Hd[li][:, li], Jc[:, li].T],
        [Jc[:, li], -sp.identity(e_dim) / mu],
    ], format="csc")
    lu = spla.splu(Kl)
    if gi.size:
        Bm = sp.vstack([Hd[li][:, gi], Jc[:, gi]]).toarray()
        Z = lu.solve(Bm)
        S_lu = np.linalg.inv(Hd[gi][:, gi].toarray() - Bm.T @ Z)

    def solve(top: np.ndarray, bottom: np.ndarray) -> np.ndarray:
        z = lu.solve(np.concatenate([top[li], bottom]))
        d = np.empty(d_dim)
        if gi.size:
            dg = S_lu @ (top[gi] - Bm.T @ z)
            z = z - Z @ dg
            d[gi] = dg
        d[li] = z[:li.size]
        return d

    return solve


def levenberg_marquardt(
    problem: NlpProblem,
    lam: np.ndarray,
    mu: float,
    x0: np.ndarray,
    tol: float,
    max_iter: int,
    c1: float = 1e-4,
    max_backtracks: int = 60,
) -> _InnerResult:
    """Levenberg-Marquardt on the augmented Lagrangian.

    The quadratic model uses ``hess f + mu J'J`` plus the constraint curvature
    when ``problem.hess_c`` exists. It is damped by ``delta`` times a scaled
    identity. A step is kept when the actual decrease is at least ``c1`` times
    the predicted one, either as is or after a second-order correction that
    re-projects onto the linearized constraints (curved feasible sets would
    otherwise force tiny steps). ``max_backtracks`` consecutive rejections end
    the solve.
    """
    x = np.array(x0, dtype=float)

    def phi_parts(x):
        fx, gf = problem.f(x)
        cx = np.asarray(problem.c(x), dtype=float)
        return fx + lam @ cx + 0.5 * mu * (cx @ cx), gf, cx

    phi, gf, cx = phi_parts(x)
    if not (np.isfinite(phi) and np.all(np.isfinite(gf))):
        return _InnerResult(x, phi, gf, 0, "diverged")
    J = sp.csr_matrix(problem.jac(x))
    g = gf + _jt(J, lam + mu * cx)
    delta, nu = 1e-3, 2.0
    it = 0
    while True:
        if np.max(np.abs(g), initial=0.0) <= tol:
            return _InnerResult(x, phi, g, it, "converged")
        if it >= max_iter:
            return _InnerResult(x, phi, g, it, "maxiter")
        Hf = sp.csr_matrix(problem.hess_f(x))
        # scaled identity, not diag(mu J'J): that would also freeze motion along
        # the constraint manifold once mu is large
        D = np.full(x.size, max(1.0, float(np.abs(Hf.diagonal()).max(initial=0.0))))
        H = Hf
        if problem.hess_c is not None:
            H = Hf + sp.csr_matrix(problem.hess_c(x, lam + mu * cx))
        rejected = 0
        while True:
            try:
                solve = _kkt_solver(H, delta * D, J, mu)
                d = solve(-g, np.zeros(cx.size))
            except (RuntimeError, np.linalg.LinAlgError):  # singular: damp harder
                solve, d = None, np.full(x.size, np.nan)
            Jd = J @ d
            predicted = -(g @ d + 0.5 * (d @ (H @ d)) + 0.5 * mu * (Jd @ Jd))
            accepted = False
            if np.all(np.isfinite(d)) and predicted > 0:
                trial = x + d
                if np.array_equal(trial, x):
                    return _InnerResult(x, phi, g, it, "linesearch")
                phi_new, gf_new, c_new = phi_parts(trial)
                rho = (phi - phi_new) / predicted if np.isfinite(phi_new) else -np.inf
                if not rho > c1 and np.all(np.isfinite(c_new)):
                    # second-order correction: pull the trial point back toward
                    # the linearized constraints before giving up on this delta
                    d2 = solve(np.zeros(x.size), -(c_new - cx - Jd))
                    trial2 = x + d + d2
                    phi2, gf2, c2 = phi_parts(trial2)
                    rho2 = (phi - phi2) / predicted if np.isfinite(phi2) else -np.inf
                    if rho2 > c1:
                        trial, phi_new, gf_new, c_new, rho = trial2, phi2, gf2, c2, rho2
                if rho > c1:
                    x_new = trial
                    delta *= max(1.0 / 3.0, 1.0 - (2.0 * min(rho, 1.0) - 1.0) ** 3)
                    nu = 2.0
                    accepted = True
            if accepted:
                break
            rejected += 1
            if rejected >= max_backtracks:
                return _InnerResult(x, phi, g, it, "linesearch")
            delta *= nu
            nu *= 2.0
        x, phi, gf, cx = x_new, phi_new, gf_new, c_new
        J = sp.csr_matrix(problem.jac(x))
        g = gf + _jt(J, lam + mu * cx)
        if not np.all(np.isfinite(g)):
            return _InnerResult(x, phi, g, it, "diverged")
        it += 1


def minimize(
    problem: NlpProblem,
    theta0,
    opts: SolverOptions | None = None,
    log: TextIO | Callable[[str], None] | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Augmented-Lagrangian solve of ``min f s.t. c = 0``.

    ``log`` receives one line per outer iteration:
    ``outer,inner,f,||c||inf,mu`` (comma separated, repr-style floats).
    """
    opts = opts or SolverOptions()
    emit = None
    if log is not None:
        emit = log if callable(log) and not hasattr(log, "write") else (lambda s: log.write(s + "\n"))

    theta = np.array(theta0, dtype=float)
    if theta.shape != (problem.dim,):
        raise ValueError(f"theta0 must have shape ({problem.dim},), got {theta.shape}")
    c = np.asarray(problem.c(theta), dtype=float)
    lam = np.zeros_like(c)
    mu = opts.mu0
    c_prev = float(np.max(np.abs(c), initial=0.0))
    omega = max(opts.inner_tol0, opts.tol_optimality)
    inner_total = 0
    use_lm = opts.inner == "lm" or (opts.inner == "auto" and problem.hess_f is not None)
    if use_lm and problem.hess_f is None:
        raise ValueError("the lm inner solver needs problem.hess_f")

    def report(status, outer, th, lam_, stat, cn):
        fval = problem.f(th)[0]
        return SolveReport(status, outer, inner_total, cn, stat, float(fval), lam_.copy(), mu)

    if not np.all(np.isfinite(c)):
        return theta, report(SolveStatus.DIVERGED, 0, theta, lam, float("inf"), float("inf"))

    for outer in range(1, opts.max_outer + 1):
        lam_k, mu_k = lam.copy(), mu

        def phi(x):
            fx, _ = problem.f(x)
            cx = problem.c(x)
            return fx + lam_k @ cx + 0.5 * mu_k * (cx @ cx)

        def dphi(x):
            _, gx = problem.f(x)
            cx = problem.c(x)
            return gx + _jt(problem.jac(x), lam_k + mu_k * cx)

        if use_lm:
            res = levenberg_marquardt(problem, lam_k, mu_k, theta, omega, opts.max_inner,
                               opts.armijo_c1, opts.max_backtracks)
        else:
            res = lbfgs(phi, dphi, theta, omega, opts.max_inner, opts.memory,
                        opts.armijo_c1, opts.max_backtracks)
        inner_total += res.iterations
        if res.status == "diverged":
            return theta, report(SolveStatus.DIVERGED, outer, theta, lam, float("inf"), float("inf"))
        theta = res.x
        c = np.asarray(problem.c(theta), dtype=float)
        lam = lam + mu * c
        cn = float(np.max(np.abs(c), initial=0.0))
        stat = float(np.max(np.abs(res.grad), initial=0.0))
        if emit:
            emit(f"{outer},{res.iterations},{float(problem.f(theta)[0])!r},{cn!r},{float(mu)!r}")
        if cn <= opts.tol_constraint and stat <= opts.tol_optimality:
            return theta, report(SolveStatus.CONVERGED, outer, theta, lam, stat, cn)
        if res.status == "linesearch":
            return theta, report(SolveStatus.LINE_SEARCH_FAILURE, outer, theta, lam, stat, cn)
        # once feasible, a larger penalty only amplifies roundoff in mu * J'c
        if cn > 0.25 * c_prev and cn > opts.tol_constraint:
            mu *= opts.mu_growth
        c_prev = cn
        omega = max(opts.tol_optimality, 0.1 * omega)

    return theta, report(SolveStatus.MAX_ITERATIONS, opts.max_outer, theta, lam, stat, cn)

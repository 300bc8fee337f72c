"""Data-to-gains synthesis: build the variant NLP, solve it, extract and compare gains."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.optimize import least_squares

from . import constraints as cs
from .constraints import DecisionVector, Layout, SynthesisSpec, Variant
from .lti import InsufficientDataError, LtiSystem, Trajectory
from .nlp import NlpProblem, SolverOptions, SolveReport, minimize
from .riccati import (GainSet, InfiniteCostError, TrackingSpec, Weights, closed_loop_cost,
                      stability_check)

__all__ = [
    "ExcitationReport",
    "GainComparison",
    "SynthesisResult",
    "synthesize",
    "build_problem",
    "initial_guess",
    "warm_start",
    "excitation_diagnostic",
    "compare_gains",
]

log = logging.getLogger(__name__)

SV_RATIO_MIN = 1e-8


@dataclass(frozen=True)
class ExcitationReport:
    depth: int
    hankel_rank: int
    hankel_rows: int
    hankel_sv_ratio: float
    data_rank: int
    data_rows: int
    data_sv_ratio: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class GainComparison:
    max_abs_diff_K: float
    frobenius_diff_K: float
    max_abs_diff_F: float | None
    cost_ratio: float | None
    both_stable: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SynthesisResult:
    gains: GainSet
    solve: SolveReport
    X_hat: np.ndarray
    comparison: GainComparison | None = None
    excitation: ExcitationReport | None = None
    warnings: list[str] = field(default_factory=list)
    x_eq: np.ndarray | None = None
    u_eq: np.ndarray | None = None
    scale: float = 1.0


def _rank_report(M: np.ndarray) -> tuple[int, float]:
    if M.size == 0:
        return 0, 0.0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return 0, 0.0
    ratio = s / s[0]
    rank = int(np.sum(ratio >= SV_RATIO_MIN))
    return rank, float(s[-1] / s[0]) if len(s) == M.shape[0] else 0.0


def excitation_diagnostic(data: Trajectory, depth: int = 5) -> ExcitationReport:
    """Persistent-excitation check on the input Hankel matrix and the stacked ``[Y; U]``.

    Passes when both have full row rank with ``sigma_min / sigma_max >= 1e-8``.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    m = data.m
    if data.N <= depth * (m + 1):
        raise InsufficientDataError(
            f"{data.N} samples are too few for a depth-{depth} Hankel test (need > {depth * (m + 1)})")
    cols = data.N + 2 - depth
    hankel = np.vstack([data.U[:, i:i + cols] for i in range(depth)])
    h_rank, h_ratio = _rank_report(hankel)
    stacked = np.vstack([data.Y, data.U])
    d_rank, d_ratio = _rank_report(stacked)
    passed = h_rank == hankel.shape[0] and d_rank == stacked.shape[0]
    return ExcitationReport(depth, h_rank, hankel.shape[0], h_ratio,
                            d_rank, stacked.shape[0], d_ratio, passed)


def compare_gains(K_hat, F_hat, oracle: GainSet, sys: LtiSystem, weights: Weights,
                  X0=None) -> GainComparison:
    """Distance of synthesized gains from the oracle plus the Lyapunov cost ratio."""
    K_hat = np.atleast_2d(np.asarray(K_hat, dtype=float))
    dK = K_hat - oracle.K
    dF = None
    if F_hat is not None and oracle.F is not None:
        dF = float(np.max(np.abs(np.asarray(F_hat, dtype=float).reshape(oracle.F.shape) - oracle.F)))
    _, stable_hat = stability_check(sys.A, sys.B, K_hat)
    _, stable_star = stability_check(sys.A, sys.B, oracle.K)
    both = stable_hat and stable_star
    ratio = None
    if both:
        try:
            J_hat = closed_loop_cost(sys.A, sys.B, K_hat, weights.Q, weights.R, X0)
            J_star = closed_loop_cost(sys.A, sys.B, oracle.K, weights.Q, weights.R, X0)
            ratio = J_hat / J_star
        except InfiniteCostError:
            both = False
    return GainComparison(
        max_abs_diff_K=float(np.max(np.abs(dK))),
        frobenius_diff_K=float(np.linalg.norm(dK, "fro")),
        max_abs_diff_F=dF,
        cost_ratio=ratio,
        both_stable=both,
    )


def initial_guess(layout: Layout, data: Trajectory) -> DecisionVector:
    """``X = Y``, ``L = I``, ``K`` and ``F`` all ones, equilibrium offsets zero."""
    n, m, q = layout.n, layout.m, layout.q
    v = layout.variant
    return DecisionVector(
        L=np.eye(n),
        X=np.array(data.Y, dtype=float),
        K=None if v.mixed else np.ones((m, n)),
        F=np.ones((m, q)) if v.tracking else None,
        x_eq=np.zeros(n) if v is Variant.EQUILIBRIUM else None,
        u_eq=np.zeros(m) if v is Variant.EQUILIBRIUM else None,
    )


def build_problem(data: Trajectory, spec: SynthesisSpec) -> tuple[NlpProblem, Layout]:
    layout = Layout.for_problem(spec, data)
    h = np.zeros(layout.size)
    h[layout.slice("X")] = 2.0
    hess = sp.diags(h, format="csr")
    problem = NlpProblem(
        dim=layout.size,
        f=lambda th: cs.objective(th, data, spec),
        c=lambda th: cs.residual(th, data, spec),
        jac=lambda th: cs.jacobian(th, data, spec),
        hess_f=lambda th: hess,
        hess_c=lambda th, w: cs.constraint_hessian(th, data, spec, w),
        name=f"mflqr-{spec.variant.value}",
    )
    return problem, layout


def warm_start(problem: NlpProblem, layout: Layout, theta0: np.ndarray,
               scales: tuple[float, ...] = (0.1, 10.0)) -> np.ndarray:
    """Least-squares fit of the gain blocks with the latent states frozen at the data.

    From the all-ones guess the full solve tends to buy feasibility by
    dragging X away from Y, then crawls back; fitting L, K, F (and the
    equilibrium offsets) first avoids that detour. X is left untouched.

    The fit is quartic in L for the mixed variants and has competing local
    minima, so it is also started from ``L = s I`` for each of ``scales``
    and the smallest residual wins (ties keep the earlier start).
    """
    xs = layout.slice("X")
    glob = np.setdiff1d(np.arange(layout.size), np.arange(xs.start, xs.stop))
    ls = layout.slice("L")
    n = layout.n

    def full(z):
        th = theta0.copy()
        th[glob] = z
        return th

    method = "lm" if problem.c(theta0).size >= glob.size else "trf"
    starts = [theta0]
    for s in scales:
        th = theta0.copy()
        th[ls] = (s * np.eye(n)).ravel(order="F")
        starts.append(th)

    best, best_cost = theta0, np.inf
    for th in starts:
        fit = least_squares(
            lambda z: problem.c(full(z)),
            th[glob],
            jac=lambda z: sp.csr_matrix(problem.jac(full(z)))[:, glob].toarray(),
            method=method,
        )
        if np.all(np.isfinite(fit.x)) and fit.cost < best_cost * (1.0 - 1e-12):
            best, best_cost = full(fit.x), fit.cost
    return best


def _data_scale(data: Trajectory) -> float:
    s = float(np.sqrt(np.mean(np.vstack([data.Y, data.U]) ** 2)))
    return s if s > 0 and np.isfinite(s) else 1.0


def synthesize(data: Trajectory, spec: SynthesisSpec, opts: SolverOptions | None = None,
               depth: int = 5, normalize: bool = True, warm: bool = True) -> SynthesisResult:
    """Solve the variant NLP on ``data`` and return ``P = L'L``, ``K`` and ``F``.

    Every constraint row is a homogeneous quadratic in (states, inputs,
    reference), so dividing the data and ``r_hat`` by their RMS leaves the
    optimal P, K, F unchanged while keeping the solver well scaled.
    ``warm`` runs :func:`warm_start` from the all-ones guess first.
    """
    if spec.dt is not None and abs(spec.dt - data.dt) > 1e-12 * data.dt:
        raise ValueError(f"spec dt={spec.dt} disagrees with data dt={data.dt}")
    warnings: list[str] = []
    excitation = None
    try:
        excitation = excitation_diagnostic(data, depth)
        if not excitation.passed:
            warnings.append(
                f"excitation diagnostic failed: input Hankel rank {excitation.hankel_rank}/"
                f"{excitation.hankel_rows}, [Y;U] rank {excitation.data_rank}/{excitation.data_rows}")
    except InsufficientDataError as exc:
        warnings.append(f"excitation diagnostic skipped: {exc}")
    for w in warnings:
        log.warning(w)

    s = _data_scale(data) if normalize else 1.0
    sdata = Trajectory(dt=data.dt, Y=data.Y / s, U=data.U / s, t0=data.t0)
    sspec = spec
    if spec.tracking is not None:
        tr = spec.tracking
        sspec = replace(spec, tracking=TrackingSpec(H=tr.H, r_hat=tr.r_hat / s, C=tr.C))

    problem, layout = build_problem(sdata, sspec)
    theta0 = layout.flatten(initial_guess(layout, sdata))
    if warm:
        theta0 = warm_start(problem, layout, theta0)
    theta, report = minimize(problem, theta0, opts)
    dv = layout.unflatten(theta)

    P = dv.P
    R = spec.weights.R
    if spec.variant.mixed:
        K = np.linalg.solve(R, spec.B_tilde.T @ P)
    else:
        K = dv.K.copy()
    gains = GainSet(P=P, K=K, F=None if dv.F is None else dv.F.copy())
    if report.status.value != "Converged":
        warnings.append(f"solver finished with status {report.status.value}")
    return SynthesisResult(
        gains=gains,
        solve=report,
        X_hat=dv.X * s,
        excitation=excitation,
        warnings=warnings,
        x_eq=None if dv.x_eq is None else dv.x_eq * s,
        u_eq=None if dv.u_eq is None else dv.u_eq * s,
        scale=s,
    )

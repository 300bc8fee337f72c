"""Decision-vector layout, value-function rate residuals and their analytic Jacobians.

Every variant enforces, for k = 0..N-1,

    (2/dt) (a_k' P b_k - a_k' P a_k) - a_k' W' R^-1 W a_k + a_k' Q a_k - 2 a_k' W' v_k = 0

with ``P = L'L`` and

    ============== ================ ================ ============ ===========
    variant        a_k              b_k              v_k          W
    ============== ================ ================ ============ ===========
    regulator      x_k              x_{k+1}          u_k          R K
    equilibrium    x_k - x_eq       x_{k+1} - x_eq   u_k - u_eq   R K
    ref-tracking   x_k - H r        x_{k+1} - H r    u_k - F r    R K
    mixed          z_k              z_{k+1}          u_k          B~' P
    mixed-tracking z_k - H r        z_{k+1} - H r    u_k - F r    B~' P
    ============== ================ ================ ============ ===========

(``R K = B' P`` at the LQR optimum, which is how W unifies both families.)
Mixed variants add the forward-Euler actuator rows
``(g_{k+1} - g_k)/dt - A^ g_k - B^ u_k = 0`` on the raw actuator states.

Latent states are stored in the measurement frame, so the objective is
always ``||Y - X||^2``; the variant shifts appear only inside the
constraints. This is the same problem as fitting shifted latents to
shifted data, since the shifts cancel in the difference.

Flat layout, column-major within blocks::

    [vec(L), vec(K), vec(F), vec(X), x_eq, u_eq]

Blocks that a variant does not use are simply absent.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .lti import Trajectory
from .riccati import TrackingSpec, Weights

__all__ = [
    "Variant",
    "KnownActuator",
    "SynthesisSpec",
    "Layout",
    "DecisionVector",
    "residual",
    "residual_regulator",
    "residual_equilibrium",
    "residual_reference",
    "residual_mixed",
    "jacobian",
    "weighted_gradient",
    "constraint_hessian",
    "objective",
]


class Variant(str, Enum):
    REGULATOR = "regulator"
    EQUILIBRIUM = "equilibrium"
    REF_TRACKING = "ref-tracking"
    MIXED_MODEL = "mixed"
    MIXED_TRACKING = "mixed-tracking"

    @property
    def mixed(self) -> bool:
        return self in (Variant.MIXED_MODEL, Variant.MIXED_TRACKING)

    @property
    def tracking(self) -> bool:
        return self in (Variant.REF_TRACKING, Variant.MIXED_TRACKING)


@dataclass(frozen=True)
class KnownActuator:
    A_hat: np.ndarray
    B_hat: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A_hat, dtype=float))
        B = np.atleast_2d(np.asarray(self.B_hat, dtype=float))
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"actuator blocks inconsistent: A^ {A.shape}, B^ {B.shape}")
        object.__setattr__(self, "A_hat", A)
        object.__setattr__(self, "B_hat", B)

    @property
    def pa(self) -> int:
        return self.A_hat.shape[0]


@dataclass(frozen=True)
class SynthesisSpec:
    variant: Variant
    weights: Weights
    tracking: TrackingSpec | None = None
    known_actuator: KnownActuator | None = None
    dt: float | None = None

    def __post_init__(self):
        v = Variant(self.variant)
        object.__setattr__(self, "variant", v)
        if v.tracking != (self.tracking is not None):
            raise ValueError(f"variant {v.value!r}: tracking data must be given iff the variant tracks")
        if v.mixed != (self.known_actuator is not None):
            raise ValueError(f"variant {v.value!r}: known actuator must be given iff the variant is mixed")
        n, m = self.n, self.m
        if self.tracking is not None and self.tracking.H.shape[0] != n:
            raise ValueError(f"H has {self.tracking.H.shape[0]} rows, state has {n}")
        if self.known_actuator is not None:
            ka = self.known_actuator
            if ka.B_hat.shape[1] != m:
                raise ValueError(f"B^ has {ka.B_hat.shape[1]} columns, R is {m}x{m}")
            if ka.pa >= n:
                raise ValueError("actuator block must be smaller than the joint state")

    @property
    def n(self) -> int:
        return self.weights.Q.shape[0]

    @property
    def m(self) -> int:
        return self.weights.R.shape[0]

    @property
    def q(self) -> int:
        return self.tracking.q if self.tracking is not None else 0

    @property
    def B_tilde(self) -> np.ndarray:
        ka = self.known_actuator
        return np.vstack([np.zeros((self.n - ka.pa, self.m)), ka.B_hat])


@dataclass(frozen=True)
class Layout:
    variant: Variant
    n: int
    m: int
    q: int
    samples: int
    pa: int = 0

    @classmethod
    def for_problem(cls, spec: SynthesisSpec, data: Trajectory) -> "Layout":
        if data.p != spec.n:
            raise ValueError(f"data has {data.p} output channels, weights expect {spec.n} states")
        if data.m != spec.m:
            raise ValueError(f"data has {data.m} inputs, R is {spec.m}x{spec.m}")
        if data.N < 1:
            raise ValueError("need at least two samples")
        pa = spec.known_actuator.pa if spec.known_actuator is not None else 0
        return cls(spec.variant, spec.n, spec.m, spec.q, data.N + 1, pa)

    @property
    def sizes(self) -> dict[str, int]:
        v = self.variant
        return {
            "L": self.n * self.n,
            "K": 0 if v.mixed else self.m * self.n,
            "F": self.m * self.q if v.tracking else 0,
            "X": self.n * self.samples,
            "x_eq": self.n if v is Variant.EQUILIBRIUM else 0,
            "u_eq": self.m if v is Variant.EQUILIBRIUM else 0,
        }

    @property
    def offsets(self) -> dict[str, int]:
        out, pos = {}, 0
        for name, size in self.sizes.items():
            out[name] = pos
            pos += size
        return out

    @property
    def size(self) -> int:
        return sum(self.sizes.values())

    @property
    def n_constraints(self) -> int:
        N = self.samples - 1
        return N + N * self.pa

    def slice(self, name: str) -> slice:
        o = self.offsets[name]
        return slice(o, o + self.sizes[name])

    def unflatten(self, theta: np.ndarray) -> "DecisionVector":
        theta = np.asarray(theta)
        # complex input is kept so the constraint code can be complex-stepped
        theta = theta.astype(np.result_type(theta.dtype, float), copy=False)
        if theta.shape != (self.size,):
            raise ValueError(f"expected flat vector of length {self.size}, got {theta.shape}")
        n, m, q = self.n, self.m, self.q
        sz = self.sizes
        get = lambda name, shape: theta[self.slice(name)].reshape(shape, order="F") if sz[name] else None
        return DecisionVector(
            L=get("L", (n, n)),
            K=get("K", (m, n)),
            F=get("F", (m, q)),
            X=get("X", (n, self.samples)),
            x_eq=get("x_eq", (n,)),
            u_eq=get("u_eq", (m,)),
        )

    def flatten(self, dv: "DecisionVector") -> np.ndarray:
        parts = []
        for name, size in self.sizes.items():
            if size == 0:
                continue
            block = getattr(dv, name)
            if block is None:
                raise ValueError(f"decision vector is missing block {name!r}")
            block = np.asarray(block, dtype=float)
            if block.size != size:
                raise ValueError(f"block {name!r} has {block.size} entries, layout expects {size}")
            parts.append(block.ravel(order="F"))
        return np.concatenate(parts)


@dataclass
class DecisionVector:
    L: np.ndarray
    X: np.ndarray
    K: np.ndarray | None = None
    F: np.ndarray | None = None
    x_eq: np.ndarray | None = None
    u_eq: np.ndarray | None = None

    @property
    def P(self) -> np.ndarray:
        return self.L.T @ self.L


def _as_dv(theta, data: Trajectory, spec: SynthesisSpec) -> tuple[DecisionVector, Layout]:
    layout = Layout.for_problem(spec, data)
    if isinstance(theta, DecisionVector):
        dv = theta
        if dv.X.shape != (layout.n, layout.samples):
            raise ValueError(f"X must be {layout.n}x{layout.samples}, got {dv.X.shape}")
        return dv, layout
    return layout.unflatten(theta), layout


def _rate_terms(dv: DecisionVector, data: Trajectory, spec: SynthesisSpec):
    """Shifted state pairs, input term and W for the value-rate rows."""
    v = spec.variant
    X = dv.X
    U = data.U[:, :-1]
    shift = None
    if v is Variant.EQUILIBRIUM:
        shift = dv.x_eq.reshape(-1, 1)
        V = U - dv.u_eq.reshape(-1, 1)
    elif v.tracking:
        r = spec.tracking.r_hat
        shift = (spec.tracking.H @ r).reshape(-1, 1)
        V = U - (dv.F @ r).reshape(-1, 1)
    else:
        V = U
    Xs = X if shift is None else X - shift
    a, b = Xs[:, :-1], Xs[:, 1:]
    P = dv.P
    if v.mixed:
        W = spec.B_tilde.T @ P
    else:
        if dv.K is None or dv.K.shape != (spec.m, spec.n):
            raise ValueError(f"K must be {spec.m}x{spec.n}")
        W = spec.weights.R @ dv.K
    return a, b, V, P, W


def _rate_values(a, b, V, P, W, Rinv, Q, dt):
    Pa = P @ a
    Wa = W @ a
    RiWa = Rinv @ Wa
    c = ((2.0 / dt) * (np.einsum("ik,ik->k", a, P @ b) - np.einsum("ik,ik->k", a, Pa))
         - np.einsum("ik,ik->k", Wa, RiWa)
         + np.einsum("ik,ik->k", a, Q @ a)
         - 2.0 * np.einsum("ik,ik->k", Wa, V))
    return c


def _actuator_rows(dv: DecisionVector, data: Trajectory, spec: SynthesisSpec) -> np.ndarray:
    ka = spec.known_actuator
    gam = dv.X[spec.n - ka.pa:, :]
    d = np.diff(gam, axis=1) / data.dt - ka.A_hat @ gam[:, :-1] - ka.B_hat @ data.U[:, :-1]
    return d.ravel(order="F")


def _check_variant(spec: SynthesisSpec, allowed: tuple[Variant, ...], name: str):
    if spec.variant not in allowed:
        raise ValueError(f"{name} does not apply to variant {spec.variant.value!r}")


def _value_rows(theta, data, spec) -> np.ndarray:
    dv, _ = _as_dv(theta, data, spec)
    a, b, V, P, W = _rate_terms(dv, data, spec)
    Rinv = np.linalg.inv(spec.weights.R)
    return _rate_values(a, b, V, P, W, Rinv, spec.weights.Q, data.dt)


def residual_regulator(theta, data: Trajectory, spec: SynthesisSpec) -> np.ndarray:
    _check_variant(spec, (Variant.REGULATOR,), "residual_regulator")
    return _value_rows(theta, data, spec)


def residual_equilibrium(theta, data: Trajectory, spec: SynthesisSpec) -> np.ndarray:
    _check_variant(spec, (Variant.EQUILIBRIUM,), "residual_equilibrium")
    return _value_rows(theta, data, spec)


def residual_reference(theta, data: Trajectory, spec: SynthesisSpec) -> np.ndarray:
    _check_variant(spec, (Variant.REF_TRACKING,), "residual_reference")
    return _value_rows(theta, data, spec)


def residual_mixed(theta, data: Trajectory, spec: SynthesisSpec) -> tuple[np.ndarray, np.ndarray]:
    """Value-rate rows and actuator rows (k-major, ``pa`` entries per k)."""
    _check_variant(spec, (Variant.MIXED_MODEL, Variant.MIXED_TRACKING), "residual_mixed")
    dv, _ = _as_dv(theta, data, spec)
    return _value_rows(dv, data, spec), _actuator_rows(dv, data, spec)


def residual(theta, data: Trajectory, spec: SynthesisSpec) -> np.ndarray:
    """All equality constraints of the variant, stacked."""
    if spec.variant.mixed:
        return np.concatenate(residual_mixed(theta, data, spec))
    return _value_rows(theta, data, spec)


def _value_partials(dv: DecisionVector, data: Trajectory, spec: SynthesisSpec, lay: Layout) -> dict:
    """Per-row derivatives of the value-rate residuals with respect to each block."""
    v = spec.variant
    dt = data.dt
    R = spec.weights.R
    Rinv = np.linalg.inv(R)
    Q = spec.weights.Q

    a, b, V, P, W = _rate_terms(dv, data, spec)
    Pa = P @ a
    Wa = W @ a
    RiWa = Rinv @ Wa
    out = {
        "a": (2.0 / dt) * (P @ b - 2.0 * Pa) - 2.0 * W.T @ RiWa + 2.0 * Q @ a - 2.0 * W.T @ V,
        "b": (2.0 / dt) * Pa,
    }
    d_v = -2.0 * Wa                                              # m x N
    d_W = -2.0 * np.einsum("ik,jk->kij", RiWa + V, a)            # N x m x n
    d_P = (2.0 / dt) * (np.einsum("ik,jk->kij", a, b) - np.einsum("ik,jk->kij", a, a))
    if v.mixed:
        d_P = d_P + np.einsum("ij,kjl->kil", spec.B_tilde, d_W)
    else:
        out["K"] = np.einsum("ij,kjl->kil", R, d_W)
    out["L"] = np.einsum("ij,kjl->kil", dv.L, d_P + d_P.transpose(0, 2, 1))
    if v.tracking:
        out["F"] = -np.einsum("ik,j->kij", d_v, spec.tracking.r_hat)    # N x m x q
    if v is Variant.EQUILIBRIUM:
        out["x_eq"] = -(out["a"] + out["b"])
        out["u_eq"] = -d_v
    return out


def jacobian(theta, data: Trajectory, spec: SynthesisSpec) -> sp.csr_matrix:
    """Analytic sparse Jacobian of :func:`residual` w.r.t. the flat decision vector."""
    dv, lay = _as_dv(theta, data, spec)
    v = spec.variant
    n, m, q = lay.n, lay.m, lay.q
    N = lay.samples - 1
    dt = data.dt
    off = lay.offsets
    d = _value_partials(dv, data, spec, lay)

    rows, cols, vals = [], [], []
    k = np.arange(N)

    def add(block_vals: np.ndarray, col_index: np.ndarray):
        # block_vals: N x w, col_index: N x w (or w broadcast)
        col_index = np.broadcast_to(col_index, block_vals.shape)
        rows.append(np.repeat(k, block_vals.shape[1]))
        cols.append(col_index.ravel())
        vals.append(block_vals.ravel())

    # column-major vec of an (r x s) block per row k: transpose to (k, s, r)
    add(d["L"].transpose(0, 2, 1).reshape(N, n * n), off["L"] + np.arange(n * n))
    if "K" in d:
        add(d["K"].transpose(0, 2, 1).reshape(N, m * n), off["K"] + np.arange(m * n))
    if "F" in d:
        add(d["F"].transpose(0, 2, 1).reshape(N, m * q), off["F"] + np.arange(m * q))
    xcol = off["X"] + k[:, None] * n + np.arange(n)[None, :]
    add(d["a"].T, xcol)
    add(d["b"].T, xcol + n)
    if v is Variant.EQUILIBRIUM:
        add(d["x_eq"].T, off["x_eq"] + np.arange(n))
        add(d["u_eq"].T, off["u_eq"] + np.arange(m))

    if v.mixed:
        ka = spec.known_actuator
        pa = ka.pa
        g0 = n - pa
        base_row = N + k[:, None, None] * pa + np.arange(pa)[None, :, None]      # N x pa x 1
        gcol_k = off["X"] + k[:, None, None] * n + g0 + np.arange(pa)[None, None, :]
        M_k = np.broadcast_to(-np.eye(pa) / dt - ka.A_hat, (N, pa, pa))
        rows.append(np.broadcast_to(base_row, (N, pa, pa)).ravel())
        cols.append(np.broadcast_to(gcol_k, (N, pa, pa)).ravel())
        vals.append(M_k.ravel())
        rows.append(base_row[:, :, 0].ravel())
        cols.append((off["X"] + (k[:, None] + 1) * n + g0 + np.arange(pa)[None, :]).ravel())
        vals.append(np.full(N * pa, 1.0 / dt))

    J = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(lay.n_constraints, lay.size),
    )
    return J.tocsr()


def weighted_gradient(theta, data: Trajectory, spec: SynthesisSpec, w) -> np.ndarray:
    """``J(theta)' w`` without assembling J. Accepts complex ``theta``."""
    dv, lay = _as_dv(theta, data, spec)
    v = spec.variant
    N = lay.samples - 1
    dt = data.dt
    w = np.asarray(w, dtype=float)
    if w.shape != (lay.n_constraints,):
        raise ValueError(f"w must have length {lay.n_constraints}, got {w.shape}")
    wv = w[:N]
    R = spec.weights.R
    Rinv = np.linalg.inv(R)
    Q = spec.weights.Q

    a, b, V, P, W = _rate_terms(dv, data, spec)
    Pa = P @ a
    RiWa = Rinv @ (W @ a)
    aw = a * wv
    d_a = (2.0 / dt) * (P @ b - 2.0 * Pa) - 2.0 * W.T @ (RiWa + V) + 2.0 * Q @ a
    d_b = (2.0 / dt) * Pa
    gW = -2.0 * (RiWa + V) @ aw.T                                # m x n
    gP = (2.0 / dt) * (aw @ (b - a).T)
    if v.mixed:
        gP = gP + spec.B_tilde @ gW

    out = np.zeros(lay.size, dtype=np.result_type(dv.L.dtype, float))
    out[lay.slice("L")] = (dv.L @ (gP + gP.T)).ravel(order="F")
    if not v.mixed:
        out[lay.slice("K")] = (R @ gW).ravel(order="F")
    dv_w = -2.0 * (W @ aw).sum(axis=1)                          # sum_k w_k d_v_k
    if v.tracking:
        out[lay.slice("F")] = -np.outer(dv_w, spec.tracking.r_hat).ravel(order="F")
    gX = np.zeros((lay.n, lay.samples), dtype=out.dtype)
    gX[:, :-1] += d_a * wv
    gX[:, 1:] += d_b * wv
    if v.mixed:
        ka = spec.known_actuator
        wa = w[N:].reshape(N, ka.pa).T                          # pa x N
        g0 = lay.n - ka.pa
        gX[g0:, :-1] += (-np.eye(ka.pa) / dt - ka.A_hat).T @ wa
        gX[g0:, 1:] += wa / dt
    out[lay.slice("X")] = gX.ravel(order="F")
    if v is Variant.EQUILIBRIUM:
        out[lay.slice("x_eq")] = -(d_a + d_b) @ wv
        out[lay.slice("u_eq")] = -dv_w
    return out


def constraint_hessian(theta, data: Trajectory, spec: SynthesisSpec, w) -> sp.csr_matrix:
    """Sparse Hessian of ``sum_k w_k c_k(theta)``.

    Columns come from complex-step derivatives of :func:`weighted_gradient`,
    exact to roundoff because the residuals are polynomial. Row k couples only
    x_k and x_{k+1}, so latent columns sharing ``(k mod 3, component)`` are
    probed together; every other column is probed on its own.
    """
    theta = np.asarray(theta, dtype=float)
    lay = Layout.for_problem(spec, data)
    h = 1e-30
    n, S = lay.n, lay.samples
    xs = lay.slice("X")
    glob = np.setdiff1d(np.arange(lay.size), np.arange(xs.start, xs.stop))

    rows, cols, vals = [], [], []
    for j in glob:
        t = theta.astype(complex)
        t[j] += 1j * h
        col = weighted_gradient(t, data, spec, w).imag / h
        nz = np.flatnonzero(col)
        rows.append(nz), cols.append(np.full(nz.size, j)), vals.append(col[nz])
        # latent probes below read only latent rows, so mirror the cross block here
        nzx = nz[(nz >= xs.start) & (nz < xs.stop)]
        rows.append(np.full(nzx.size, j)), cols.append(nzx), vals.append(col[nzx])

    ks = np.arange(S)
    for r in range(3):
        for i in range(n):
            members = ks[ks % 3 == r]
            t = theta.astype(complex)
            t[xs.start + members * n + i] += 1j * h
            colX = (weighted_gradient(t, data, spec, w).imag / h)[xs].reshape(S, n)
            # row sample j sees exactly one probed sample within distance 1
            src = ks + ((r - ks) % 3 + 1) % 3 - 1
            ok = (src >= 0) & (src < S) & (np.abs(src - ks) <= 1)
            jj = np.repeat(ks[ok], n)
            ii = np.tile(np.arange(n), ok.sum())
            v = colX[ok].ravel()
            keep = v != 0
            rows.append(xs.start + jj[keep] * n + ii[keep])
            cols.append(xs.start + np.repeat(src[ok], n)[keep] * n + i)
            vals.append(v[keep])
    Hc = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(lay.size, lay.size)).tocsr()
    return Hc


def objective(theta, data: Trajectory, spec: SynthesisSpec) -> tuple[float, np.ndarray]:
    """``||Y - X||_F^2`` and its gradient over the flat decision vector."""
    dv, lay = _as_dv(theta, data, spec)
    diff = dv.X - data.Y
    grad = np.zeros(lay.size)
    grad[lay.slice("X")] = 2.0 * diff.ravel(order="F")
    return float(np.sum(diff * diff)), grad

"""State-space systems, simulation, excitation signals and trajectory files."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = [
    "LtiSystem",
    "Trajectory",
    "ChirpSpec",
    "NoiseSpec",
    "DomainError",
    "DivergenceError",
    "InsufficientDataError",
    "TrajectoryParseError",
    "chirp_eval",
    "chirp_input",
    "sample_and_hold",
    "simulate",
    "rk4_integrate",
    "add_noise",
    "finite_diff",
    "traj_write",
    "traj_read",
]


class DomainError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, time: float):
        super().__init__(f"non-finite state at t={time:.6g} s")
        self.time = time


class InsufficientDataError(ValueError):
    pass


class TrajectoryParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    if a.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LtiSystem:
    """Continuous-time ``xdot = A x + B u``, ``y = C x + D u``.

    ``C`` defaults to the identity and ``D`` to zeros.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray | None = None
    D: np.ndarray | None = None

    def __post_init__(self):
        A = _frozen(self.A, 2, "A")
        B = _frozen(self.B, 2, "B")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape}")
        C = np.eye(n) if self.C is None else self.C
        C = _frozen(np.atleast_2d(C), 2, "C")
        if C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {C.shape}")
        D = np.zeros((C.shape[0], B.shape[1])) if self.D is None else self.D
        D = _frozen(np.atleast_2d(D), 2, "D")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError(f"D must be {C.shape[0]}x{B.shape[1]}, got {D.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled outputs ``Y`` (p x N+1) and inputs ``U`` (m x N+1)."""

    dt: float
    Y: np.ndarray
    U: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        Y = _frozen(self.Y, 2, "Y")
        U = _frozen(self.U, 2, "U")
        if Y.shape[1] != U.shape[1]:
            raise ValueError(f"Y has {Y.shape[1]} samples but U has {U.shape[1]}")
        if Y.shape[1] < 1:
            raise ValueError("trajectory needs at least one sample")
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "U", U)

    @property
    def N(self) -> int:
        return self.Y.shape[1] - 1

    @property
    def p(self) -> int:
        return self.Y.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.N + 1)


@dataclass(frozen=True)
class ChirpSpec:
    """Linear-frequency sweep ``psi * sin(2 pi (c/2 t^2 + f0 t))``.

    When ``c`` is left unset it is derived as ``(f1 - f0) / T``.
    """

    psi: float
    f0: float
    f1: float
    T: float
    c: float | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"chirp duration must be positive, got {self.T}")
        if self.f0 < 0 or self.f1 < 0:
            raise ValueError("chirp frequencies must be non-negative")
        if self.c is None:
            object.__setattr__(self, "c", (self.f1 - self.f0) / self.T)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.sigma}")


def chirp_eval(spec: ChirpSpec, t: float) -> float:
    # slack absorbs roundoff in RK4 stage times near the end of the window
    slack = 1e-9 * spec.T
    if not (-slack <= t <= spec.T + slack):
        raise DomainError(f"t={t} outside chirp window [0, {spec.T}]")
    return spec.psi * math.sin(2.0 * math.pi * (0.5 * spec.c * t * t + spec.f0 * t))


def chirp_input(specs: list[ChirpSpec]) -> Callable[[float], np.ndarray]:
    """One chirp per input channel, stacked into an m-vector function of time."""
    specs = list(specs)
    return lambda t: np.array([chirp_eval(s, t) for s in specs])


def sample_and_hold(u: Callable[[float], np.ndarray], dt: float) -> Callable[[float], np.ndarray]:
    """Hold ``u(t_k)`` constant over ``[t_k, t_k + dt)``, like a digital command."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    # the small nudge keeps RK4 stage times that land on t_k from rounding down a cell
    return lambda t: u(math.floor(t / dt + 1e-9) * dt)


def rk4_integrate(
    f: Callable[[float, np.ndarray], np.ndarray],
    x0: np.ndarray,
    t0: float,
    dt: float,
    n_steps: int,
    substeps: int = 10,
) -> np.ndarray:
    """Fixed-step classical RK4; returns the n x (n_steps+1) state history on the sample grid."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = np.array(x0, dtype=float)
    out = np.empty((x.size, n_steps + 1))
    out[:, 0] = x
    h = dt / substeps
    for k in range(n_steps):
        tk = t0 + k * dt
        for j in range(substeps):
            t = tk + j * h
            k1 = f(t, x)
            k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
            k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
            k4 = f(t + h, x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(t0 + (k + 1) * dt)
        out[:, k + 1] = x
    return out


def _grid_steps(T: float, dt: float) -> int:
    N = round(T / dt)
    if N < 0 or abs(N * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return N


def simulate(
    sys: LtiSystem,
    u: Callable[[float], np.ndarray],
    x0,
    T: float,
    dt: float,
    substeps: int = 10,
) -> Trajectory:
    """Open-loop simulation recording the full state as ``Y``."""
    N = _grid_steps(T, dt)
    A, B = sys.A, sys.B

    def rhs(t, x):
        return A @ x + B @ np.atleast_1d(u(t))

    X = rk4_integrate(rhs, np.asarray(x0, dtype=float).reshape(sys.n), 0.0, dt, N, substeps)
    U = np.column_stack([np.atleast_1d(u(k * dt)) for k in range(N + 1)]).reshape(sys.m, N + 1)
    return Trajectory(dt=dt, Y=X, U=U)


def add_noise(traj: Trajectory, noise: NoiseSpec) -> Trajectory:
    if noise.sigma == 0:
        return Trajectory(dt=traj.dt, Y=traj.Y, U=traj.U, t0=traj.t0)
    rng = np.random.default_rng(noise.seed)
    eps = rng.normal(0.0, noise.sigma, size=traj.Y.shape)
    return Trajectory(dt=traj.dt, Y=traj.Y + eps, U=traj.U, t0=traj.t0)


def finite_diff(traj: Trajectory) -> np.ndarray:
    """Forward differences ``(y_{k+1} - y_k) / dt``, one column per interval."""
    if traj.N < 1:
        raise InsufficientDataError("forward differencing needs at least two samples")
    return np.diff(traj.Y, axis=1) / traj.dt


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def traj_write(traj: Trajectory, path) -> None:
    p, m = traj.p, traj.m
    header = ["t"] + [f"y{i + 1}" for i in range(p)] + [f"u{i + 1}" for i in range(m)]
    lines = [f"# dt={_fmt(traj.dt)}", f"# n={p}", f"# m={m}", f"# t0={_fmt(traj.t0)}", ",".join(header)]
    data = np.vstack([traj.t[None, :], traj.Y, traj.U])
    for col in data.T:
        lines.append(",".join(_fmt(v) for v in col))
    Path(path).write_text("\n".join(lines) + "\n")


def traj_read(path) -> Trajectory:
    meta: dict[str, str] = {}
    header = None
    rows: list[list[float]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, val = body.partition("=")
                    meta[key.strip()] = val.strip()
                continue
            cells = [c.strip() for c in line.split(",")]
            if header is None:
                if not cells or cells[0] != "t":
                    raise TrajectoryParseError(lineno, "header must start with 't'")
                header = cells
                continue
            if len(cells) != len(header):
                raise TrajectoryParseError(
                    lineno, f"expected {len(header)} columns, found {len(cells)}")
            try:
                row = [float(c) for c in cells]
            except ValueError as exc:
                raise TrajectoryParseError(lineno, f"non-numeric cell ({exc})") from None
            if not all(math.isfinite(v) for v in row):
                raise TrajectoryParseError(lineno, "non-finite value")
            rows.append(row)
    if header is None:
        raise TrajectoryParseError(0, "missing header line")
    ys = [h for h in header[1:] if h.startswith("y")]
    us = [h for h in header[1:] if h.startswith("u")]
    if len(ys) + len(us) != len(header) - 1 or header[1:] != ys + us:
        raise TrajectoryParseError(0, "header must read t,y1..yp,u1..um")
    for key, count in (("n", len(ys)), ("m", len(us))):
        if key in meta and int(meta[key]) != count:
            raise TrajectoryParseError(0, f"metadata {key}={meta[key]} disagrees with header")
    if not rows:
        raise TrajectoryParseError(0, "no samples")
    data = np.array(rows).T
    p = len(ys)
    t = data[0]
    if "dt" in meta:
        dt = float(meta["dt"])
    elif len(t) > 1:
        dt = float(t[1] - t[0])
    else:
        raise TrajectoryParseError(0, "single-sample file needs a dt= metadata line")
    t0 = float(meta.get("t0", t[0]))
    return Trajectory(dt=dt, Y=data[1:1 + p], U=data[1 + p:], t0=t0)

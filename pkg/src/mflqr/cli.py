"""``mflqr`` command line: generate data, compute oracle gains, synthesize, validate, compare.

Every command reads one JSON experiment config. Reports are written with
sorted keys and 17 significant digits so repeated runs are byte-identical.

Exit codes::

    0  success
    2  invalid config, data or gains (including wrong gain dimensions)
    3  simulation divergence, or destabilizing gains in ``validate``
    4  Riccati equation has no stabilizing solution (oracle unavailable)
    5  synthesis did not converge (gains are still written)
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import riccati, synth
from .config import ConfigError, ExperimentConfig, load_config
from .lti import (DivergenceError, LtiSystem, Trajectory, TrajectoryParseError, add_noise,
                  simulate, traj_read, traj_write)
from .riccati import GainSet, TrackingSpec

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3
EXIT_ARE = 4
EXIT_NOT_CONVERGED = 5


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, field: str | None = None):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.field = field


# ---- deterministic JSON ---------------------------------------------------

def _scalar(x) -> str:
    if x is None:
        return "null"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(x, str):
        return json.dumps(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(obj, indent: int = 0) -> str:
    """JSON text with sorted keys, 17-significant-digit floats and null for non-finite values."""
    pad = "  " * indent
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  {json.dumps(str(k))}: {dumps(obj[k], indent + 1)}' for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_scalar(v) for v in obj) + "]"
        return "[\n" + ",\n".join(f"{pad}  {dumps(v, indent + 1)}" for v in obj) + "\n" + pad + "]"
    return _scalar(obj)


def _write_json(path: Path, obj) -> None:
    path.write_text(dumps(obj) + "\n")


def _mat(M) -> list | None:
    return None if M is None else np.atleast_2d(np.asarray(M, dtype=float)).tolist()


# ---- shared helpers -------------------------------------------------------

def _load(args) -> ExperimentConfig:
    try:
        return load_config(args.config)
    except ConfigError as exc:
        raise CliError(EXIT_INVALID, "config", str(exc), exc.path) from None


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out if args.out is not None else cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta(cfg: ExperimentConfig, command: str, **extra) -> dict:
    d = {"command": command, "config": cfg.name, "variant": cfg.synthesis.variant,
         "version": __version__}
    d.update(extra)
    return d


def _oracle(cfg: ExperimentConfig) -> GainSet:
    sys_ = cfg.lti_system()
    try:
        return riccati.lqr(sys_.A, sys_.B, cfg.weights(), cfg.tracking_spec())
    except riccati.UnsolvableAREError as exc:
        raise CliError(EXIT_ARE, "are", f"no stabilizing Riccati solution: {exc}") from None
    except riccati.RankDeficiencyError as exc:
        raise CliError(EXIT_ARE, "feedforward", f"feedforward undefined: {exc}") from None


def _read_data(args, out: Path) -> Trajectory:
    path = Path(args.data) if args.data else out / "data.csv"
    try:
        return traj_read(path)
    except FileNotFoundError:
        raise CliError(EXIT_INVALID, "data", f"cannot read {path}", "--data") from None
    except (TrajectoryParseError, ValueError) as exc:
        raise CliError(EXIT_INVALID, "data", f"{path}: {exc}", "--data") from None


def _gain_matrix(d: dict, key: str, shape: tuple[int, int], required: bool) -> np.ndarray | None:
    if d.get(key) is None:
        if required:
            raise CliError(EXIT_INVALID, "gains", "missing matrix", f"gains.{key}")
        return None
    try:
        M = np.array(d[key], dtype=float)
    except (TypeError, ValueError):
        raise CliError(EXIT_INVALID, "gains", "expected a numeric matrix", f"gains.{key}") from None
    if M.ndim == 1 and shape[1] == 1:
        M = M.reshape(-1, 1)
    if M.shape != shape:
        raise CliError(EXIT_INVALID, "gains", f"expected shape {shape[0]}x{shape[1]}, got "
                       f"{'x'.join(map(str, M.shape))}", f"gains.{key}")
    if not np.all(np.isfinite(M)):
        raise CliError(EXIT_INVALID, "gains", "non-finite entries", f"gains.{key}")
    return M


def _read_gains(args, out: Path, cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(args.gains) if args.gains else out / "gains.json"
    try:
        d = json.loads(path.read_text())
    except OSError:
        raise CliError(EXIT_INVALID, "gains", f"cannot read {path}", "--gains") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_INVALID, "gains", f"{path}: invalid JSON ({exc.msg})", "--gains") from None
    if not isinstance(d, dict):
        raise CliError(EXIT_INVALID, "gains", "expected a JSON object", "--gains")
    sys_ = cfg.lti_system()
    tr = cfg.tracking_spec()
    K = _gain_matrix(d, "K", (sys_.m, sys_.n), True)
    F = None if tr is None else _gain_matrix(d, "F", (sys_.m, tr.q), False)
    return K, F


# ---- commands -------------------------------------------------------------

def cmd_generate(args) -> tuple[int, dict, str]:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    sys_ = cfg.lti_system()
    noise = cfg.noise_spec(args.seed)
    try:
        traj = simulate(sys_, cfg.input_signal(), cfg.x0(), cfg.sampling.T, cfg.sampling.dt,
                        cfg.sampling.substeps)
    except DivergenceError as exc:
        raise CliError(EXIT_DIVERGED, "divergence", str(exc)) from None
    except ValueError as exc:
        raise CliError(EXIT_INVALID, "config", str(exc), "sampling") from None
    traj = add_noise(traj, noise)
    traj_write(traj, out / "data.csv")
    meta = _meta(cfg, "generate", seed=noise.seed, noise_sigma=noise.sigma, dt=traj.dt,
                 samples=traj.N + 1, n=traj.p, m=traj.m, hold=cfg.hold,
                 files={"data": "data.csv"})
    if "json" in cfg.output.formats:
        _write_json(out / "generate.json", meta)
    text = f"wrote {out / 'data.csv'} ({traj.N + 1} samples, dt={traj.dt:g} s)"
    return EXIT_OK, meta, text


def cmd_lqr(args) -> tuple[int, dict, str]:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    sys_ = cfg.lti_system()
    g = _oracle(cfg)
    eig = np.linalg.eigvals(sys_.A - sys_.B @ g.K)
    eig = eig[np.lexsort((eig.imag, eig.real))]
    report = {
        "K": _mat(g.K), "F": _mat(g.F), "P": _mat(g.P),
        "closed_loop_eigenvalues": {"real": eig.real.tolist(), "imag": eig.imag.tolist()},
        "are_residual": g.are_residual,
        "spectral_abscissa": g.spectral_abscissa,
        "meta": _meta(cfg, "lqr"),
    }
    _write_json(out / "oracle.json", report)
    lines = ["K* =", riccati.format_gain(g.K)]
    if g.F is not None:
        lines += ["F* =", riccati.format_gain(g.F)]
    lines += ["P =", riccati.format_gain(g.P), "closed-loop eigenvalues:"]
    lines += [f"  {z.real:.4f} {'+' if z.imag >= 0 else '-'} {abs(z.imag):.4f}j" for z in eig]
    return EXIT_OK, report, "\n".join(lines)


def cmd_synth(args) -> tuple[int, dict, str]:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    data = _read_data(args, out)
    sys_ = cfg.lti_system()
    if data.p != sys_.n or data.m != sys_.m:
        raise CliError(EXIT_INVALID, "data", f"data has {data.p} states and {data.m} inputs, "
                       f"config expects {sys_.n} and {sys_.m}", "--data")
    if abs(data.dt - cfg.sampling.dt) > 1e-9 * cfg.sampling.dt:
        raise CliError(EXIT_INVALID, "data", f"data dt={data.dt:g} disagrees with "
                       f"sampling.rate={cfg.sampling.rate:g}", "sampling.rate")
    res = synth.synthesize(data, cfg.synthesis_spec(), cfg.solver_options(),
                           depth=cfg.synthesis.depth, normalize=cfg.synthesis.normalize)
    g = res.gains
    meta = _meta(cfg, "synth", samples=data.N + 1, dt=data.dt, scale=res.scale,
                 warnings=list(res.warnings),
                 excitation=None if res.excitation is None else res.excitation.to_dict())
    if res.x_eq is not None:
        meta["x_eq"] = res.x_eq.tolist()
        meta["u_eq"] = res.u_eq.tolist()
    report = {"K": _mat(g.K), "F": _mat(g.F), "P": _mat(g.P), "solve": res.solve.to_dict(),
              "meta": meta}
    _write_json(out / "gains.json", report)
    status = res.solve.status.value
    lines = [f"status: {status} ({res.solve.outer_iterations} outer, "
             f"{res.solve.inner_iterations} inner iterations)", "K^ =", riccati.format_gain(g.K)]
    if g.F is not None:
        lines += ["F^ =", riccati.format_gain(g.F)]
    lines += [f"warning: {w}" for w in res.warnings]
    code = EXIT_OK if status == "Converged" else EXIT_NOT_CONVERGED
    return code, report, "\n".join(lines)


def doublet(amplitude: float, times) -> callable:
    """``+amplitude`` on ``[t1, t2)``, ``-amplitude`` on ``[t2, t3)``, zero elsewhere."""
    t1, t2, t3 = times

    def r(t: float) -> float:
        if t1 <= t < t2:
            return amplitude
        if t2 <= t < t3:
            return -amplitude
        return 0.0

    return r


def _closed_loop(sys_: LtiSystem, K, F, spec: TrackingSpec, r_scalar, x0, cfg) -> tuple[Trajectory, np.ndarray]:
    """Closed-loop run with the doublet on the first reference channel."""
    v = cfg.validation
    first = np.eye(spec.q)[0]
    r_vec = lambda t: r_scalar(t) * first  # noqa: E731
    tr = riccati.simulate_tracking(sys_, K, F, spec, r_vec, x0, v.T, 1.0 / v.rate)
    return tr, np.column_stack([r_vec(t) for t in tr.t])


def cmd_validate(args) -> tuple[int, dict, str]:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    sys_ = cfg.lti_system()
    K, F = _read_gains(args, out, cfg)
    oracle = _oracle(cfg)
    spec = cfg.tracking_spec()
    if spec is None:
        # a regulator has no reference: release it from the initial state instead
        spec = TrackingSpec.unit(sys_.n, 0, 0.0)
        F_hat = F_star = np.zeros((sys_.m, 1))
        r_scalar = doublet(0.0, cfg.validation.times)
        x0 = cfg.x0() if np.any(cfg.x0()) else np.ones(sys_.n)
    else:
        F_hat = np.zeros((sys_.m, spec.q)) if F is None else F
        F_star = oracle.F
        r_scalar = doublet(math.radians(cfg.validation.amplitude_deg), cfg.validation.times)
        x0 = np.zeros(sys_.n)

    abscissa, stable = riccati.stability_check(sys_.A, sys_.B, K)
    metrics = {"stable": bool(stable), "spectral_abscissa": abscissa,
               "amplitude_deg": cfg.validation.amplitude_deg, "times": list(cfg.validation.times),
               "horizon": cfg.validation.T, "rate": cfg.validation.rate}
    if not stable:
        metrics.update(rms_error=None, rms_error_oracle=None, rms_ratio=None)
        report = {"metrics": metrics, "meta": _meta(cfg, "validate")}
        _write_json(out / "validate.json", report)
        return EXIT_DIVERGED, report, f"gains are destabilizing (spectral abscissa {abscissa:.4g})"

    try:
        runs = [_closed_loop(sys_, Kx, Fx, spec, r_scalar, x0, cfg)
                for Kx, Fx in ((K, F_hat), (oracle.K, F_star))]
    except DivergenceError as exc:
        raise CliError(EXIT_DIVERGED, "divergence", str(exc)) from None

    (tr_hat, Rr), (tr_star, _) = runs
    err_hat = Rr - spec.C @ tr_hat.Y
    err_star = Rr - spec.C @ tr_star.Y
    rms_hat = float(np.sqrt(np.mean(err_hat ** 2)))
    rms_star = float(np.sqrt(np.mean(err_star ** 2)))
    metrics.update(rms_error=rms_hat, rms_error_oracle=rms_star,
                   rms_ratio=rms_hat / rms_star if rms_star > 0 else (1.0 if rms_hat == 0 else None))
    report = {"metrics": metrics, "meta": _meta(cfg, "validate", files={"trace": "validate.csv"})}
    _write_json(out / "validate.json", report)
    if "csv" in cfg.output.formats:
        _write_trace(out / "validate.csv", tr_hat, tr_star, Rr)
    ratio = metrics["rms_ratio"]
    text = (f"RMS tracking error: synthesized {rms_hat:.6g}, oracle {rms_star:.6g}, "
            f"ratio {'n/a' if ratio is None else format(ratio, '.6g')}")
    return EXIT_OK, report, text


def _write_trace(path: Path, tr_hat: Trajectory, tr_star: Trajectory, R: np.ndarray) -> None:
    n, m, q = tr_hat.p, tr_hat.m, R.shape[0]
    cols = (["t"] + [f"r{i + 1}" for i in range(q)]
            + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
            + [f"x{i + 1}_oracle" for i in range(n)] + [f"u{i + 1}_oracle" for i in range(m)])
    data = np.vstack([tr_hat.t[None, :], R, tr_hat.Y, tr_hat.U, tr_star.Y, tr_star.U])
    lines = [",".join(cols)]
    lines += [",".join(format(float(v), ".17g") for v in col) for col in data.T]
    path.write_text("\n".join(lines) + "\n")


def cmd_compare(args) -> tuple[int, dict, str]:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    sys_ = cfg.lti_system()
    K, F = _read_gains(args, out, cfg)
    oracle = _oracle(cfg)
    cmp = synth.compare_gains(K, F, oracle, sys_, cfg.weights())
    report = {"comparison": cmp.to_dict(), "K": _mat(K), "F": _mat(F),
              "K_oracle": _mat(oracle.K), "F_oracle": _mat(oracle.F), "meta": _meta(cfg, "compare")}
    _write_json(out / "compare.json", report)
    lines = [f"max |K^ - K*| = {cmp.max_abs_diff_K:.6g}"]
    if cmp.max_abs_diff_F is not None:
        lines.append(f"max |F^ - F*| = {cmp.max_abs_diff_F:.6g}")
    lines.append(f"both stable: {cmp.both_stable}")
    if cmp.cost_ratio is not None:
        lines.append(f"cost ratio J(K^)/J(K*) = {cmp.cost_ratio:.6g}")
    return EXIT_OK, report, "\n".join(lines)


COMMANDS = {
    "generate": cmd_generate,
    "lqr": cmd_lqr,
    "synth": cmd_synth,
    "validate": cmd_validate,
    "compare": cmd_compare,
}


def _u64(text: str) -> int:
    try:
        v = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mflqr", description="Model-free LQR synthesis from trajectory data.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--data", help="trajectory CSV (default <out>/data.csv)")
    p.add_argument("--gains", help="gains JSON (default <out>/gains.json)")
    p.add_argument("--out", help="output directory (default from config)")
    p.add_argument("--seed", type=_u64, help="noise seed override")
    p.add_argument("--json", action="store_true", help="print machine-readable JSON to stdout")
    p.add_argument("--version", action="version", version=f"mflqr {__version__}")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code, report, text = COMMANDS[args.command](args)
    except CliError as exc:
        if args.json:
            err = {"code": exc.code, "kind": exc.kind, "field": exc.field, "message": str(exc)}
            print(dumps({"error": err}))
        else:
            where = f" [{exc.field}]" if exc.field else ""
            print(f"mflqr {args.command}: error{where}: {exc}", file=sys.stderr)
        return exc.code
    if args.json:
        print(dumps(report))
    else:
        print(text)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""JSON experiment configuration.

One document drives every CLI command::

    {
      "name": "a4d-tracking",
      "system":     {"preset": "a4d"}            or {"A": [[...]], "B": [[...]]},
      "sampling":   {"rate": 40, "T": 30},
      "excitation": {"chirps": [{"psi": .., "f0": .., "f1": .., "c": ..}, ...],
                     "hold": "continuous"},
      "noise":      {"sigma": 0, "seed": 0},
      "synthesis":  {"variant": "ref-tracking", "Q": [..], "R": [..],
                     "tracking": {"index": 1, "r_hat": [0.0872665]},
                     "actuator": {"A_hat": .., "B_hat": ..}, "solver": {...}},
      "validation": {"amplitude_deg": 10, "times": [1, 6, 11], "T": 16, "rate": 100},
      "output":     {"directory": "out", "formats": ["json", "csv"]}
    }

``Q`` and ``R`` accept a full matrix or a list of diagonal entries. Missing
optional blocks take the defaults below; unknown keys are rejected so typos
surface as errors naming the offending field.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import presets
from .constraints import KnownActuator, SynthesisSpec, Variant
from .lti import ChirpSpec, LtiSystem, NoiseSpec, chirp_input, sample_and_hold
from .nlp import SolverOptions
from .riccati import TrackingSpec, Weights

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "preset_config",
    "PRESET_EXPERIMENTS",
]


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted field name."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _matrix(value, path: str, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a numeric matrix") from None
    if M.ndim == 1:
        M = M.reshape(1, -1) if rows == 1 else M.reshape(-1, 1) if cols == 1 else M
    if M.ndim != 2:
        raise ConfigError(path, f"expected a 2-D matrix, got {M.ndim} dimensions")
    if not np.all(np.isfinite(M)):
        raise ConfigError(path, "entries must be finite")
    if rows is not None and M.shape[0] != rows:
        raise ConfigError(path, f"expected {rows} rows, got {M.shape[0]}")
    if cols is not None and M.shape[1] != cols:
        raise ConfigError(path, f"expected {cols} columns, got {M.shape[1]}")
    return M


def _weight(value, path: str, size: int) -> np.ndarray:
    M = np.array(value, dtype=float) if value is not None else None
    if M is None:
        return np.eye(size)
    if M.ndim == 0:
        M = M.reshape(1)
    if M.ndim == 1:
        if M.size != size:
            raise ConfigError(path, f"expected {size} diagonal entries, got {M.size}")
        return np.diag(M)
    return _matrix(M, path, size, size)


def _number(d: dict, key: str, path: str, default=None, *, positive=False, integer=False):
    if key not in d:
        if default is None:
            raise ConfigError(f"{path}.{key}", "required field is missing")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {type(v).__name__}")
    if not math.isfinite(v):
        raise ConfigError(f"{path}.{key}", "must be finite")
    if integer and int(v) != v:
        raise ConfigError(f"{path}.{key}", "must be an integer")
    if positive and v <= 0:
        raise ConfigError(f"{path}.{key}", "must be positive")
    return int(v) if integer else float(v)


def _block(d: dict, key: str, path: str, allowed: set[str]) -> dict:
    sub = d.get(key, {})
    if sub is None:
        sub = {}
    if not isinstance(sub, dict):
        raise ConfigError(f"{path}{key}", "expected an object")
    extra = set(sub) - allowed
    if extra:
        raise ConfigError(f"{path}{key}.{sorted(extra)[0]}", "unknown field")
    return sub


@dataclass
class SystemConfig:
    preset: str | None = None
    A: list | None = None
    B: list | None = None

    def build(self) -> LtiSystem:
        if self.preset is not None:
            return presets.SYSTEMS[self.preset]()
        return LtiSystem(self.A, self.B)


@dataclass
class SamplingConfig:
    rate: float
    T: float
    substeps: int = 10

    @property
    def dt(self) -> float:
        return 1.0 / self.rate


@dataclass
class ChirpConfig:
    psi: float
    f0: float
    f1: float
    c: float | None = None


@dataclass
class NoiseConfig:
    sigma: float = 0.0
    seed: int = 0


@dataclass
class TrackingConfig:
    r_hat: list[float]
    index: int | None = None
    H: list | None = None
    C: list | None = None


@dataclass
class ActuatorConfig:
    A_hat: list
    B_hat: list


@dataclass
class SynthesisConfig:
    variant: str = "regulator"
    Q: list | None = None
    R: list | None = None
    tracking: TrackingConfig | None = None
    actuator: ActuatorConfig | None = None
    solver: dict = field(default_factory=dict)
    depth: int = 5
    normalize: bool = True


@dataclass
class ValidationConfig:
    amplitude_deg: float = 10.0
    times: list[float] = field(default_factory=lambda: [1.0, 6.0, 11.0])
    T: float = 16.0
    rate: float = 100.0


@dataclass
class OutputConfig:
    directory: str = "out"
    formats: list[str] = field(default_factory=lambda: ["json", "csv"])


@dataclass
class ExperimentConfig:
    system: SystemConfig
    sampling: SamplingConfig
    chirps: list[ChirpConfig]
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    initial_state: list[float] | None = None
    name: str = "experiment"
    hold: str = "continuous"

    # ---- parsing -------------------------------------------------------
    @classmethod
    def from_dict(cls, d: Any) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "expected a JSON object")
        top = {"name", "system", "sampling", "excitation", "noise", "synthesis", "validation",
               "output", "initial_state"}
        extra = set(d) - top
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown field")
        if "system" not in d:
            raise ConfigError("system", "required block is missing")
        if "sampling" not in d:
            raise ConfigError("sampling", "required block is missing")

        s = _block(d, "system", "", {"preset", "A", "B"})
        if "preset" in s:
            if s["preset"] not in presets.SYSTEMS:
                raise ConfigError("system.preset", f"unknown preset {s['preset']!r}; "
                                  f"choose from {sorted(presets.SYSTEMS)}")
            if "A" in s or "B" in s:
                raise ConfigError("system", "give either a preset or matrices, not both")
            system = SystemConfig(preset=s["preset"])
        else:
            for k in ("A", "B"):
                if k not in s:
                    raise ConfigError(f"system.{k}", "required field is missing")
            A = _matrix(s["A"], "system.A")
            if A.shape[0] != A.shape[1]:
                raise ConfigError("system.A", f"must be square, got {A.shape}")
            B = _matrix(s["B"], "system.B", rows=A.shape[0])
            system = SystemConfig(A=A.tolist(), B=B.tolist())
        sys_ = system.build()

        sm = _block(d, "sampling", "", {"rate", "T", "substeps"})
        sampling = SamplingConfig(
            rate=_number(sm, "rate", "sampling", positive=True),
            T=_number(sm, "T", "sampling", positive=True),
            substeps=_number(sm, "substeps", "sampling", 10, positive=True, integer=True),
        )

        ex = _block(d, "excitation", "", {"chirps", "use_table_c", "hold"})
        hold = ex.get("hold", "continuous")
        if hold not in ("continuous", "zoh"):
            raise ConfigError("excitation.hold", f"expected 'continuous' or 'zoh', got {hold!r}")
        if "chirps" in ex:
            raw = ex["chirps"]
            if not isinstance(raw, list):
                raise ConfigError("excitation.chirps", "expected a list")
            chirps = []
            for i, c in enumerate(raw):
                p = f"excitation.chirps[{i}]"
                if not isinstance(c, dict):
                    raise ConfigError(p, "expected an object")
                extra = set(c) - {"psi", "f0", "f1", "c"}
                if extra:
                    raise ConfigError(f"{p}.{sorted(extra)[0]}", "unknown field")
                chirps.append(ChirpConfig(
                    psi=_number(c, "psi", p), f0=_number(c, "f0", p), f1=_number(c, "f1", p),
                    c=None if c.get("c") is None else _number(c, "c", p)))
        else:
            chirps = _default_chirps(system.preset, sampling.T, ex.get("use_table_c", True))
            if chirps is None:
                raise ConfigError("excitation.chirps", "required for systems given as matrices")
        if len(chirps) != sys_.m:
            raise ConfigError("excitation.chirps", f"need one chirp per input ({sys_.m}), got {len(chirps)}")
        for i, c in enumerate(chirps):
            try:
                ChirpSpec(c.psi, c.f0, c.f1, sampling.T, c.c)
            except ValueError as exc:
                raise ConfigError(f"excitation.chirps[{i}]", str(exc)) from None

        nz = _block(d, "noise", "", {"sigma", "seed"})
        noise = NoiseConfig(sigma=_number(nz, "sigma", "noise", 0.0),
                            seed=_number(nz, "seed", "noise", 0, integer=True))
        if noise.sigma < 0:
            raise ConfigError("noise.sigma", "must be non-negative")
        if not 0 <= noise.seed < 2**64:
            raise ConfigError("noise.seed", "must fit in an unsigned 64-bit integer")

        synthesis = _parse_synthesis(d, system, sys_)

        v = _block(d, "validation", "", {"amplitude_deg", "times", "T", "rate"})
        validation = ValidationConfig(
            amplitude_deg=_number(v, "amplitude_deg", "validation", 10.0),
            times=[float(t) for t in v.get("times", [1.0, 6.0, 11.0])],
            T=_number(v, "T", "validation", 16.0, positive=True),
            rate=_number(v, "rate", "validation", 100.0, positive=True),
        )
        if len(validation.times) != 3 or not (0 <= validation.times[0] < validation.times[1]
                                              < validation.times[2] <= validation.T):
            raise ConfigError("validation.times", "expected increasing [start, switch, stop] within [0, T]")

        o = _block(d, "output", "", {"directory", "formats"})
        output = OutputConfig(directory=str(o.get("directory", "out")),
                              formats=list(o.get("formats", ["json", "csv"])))
        bad = set(output.formats) - {"json", "csv"}
        if bad:
            raise ConfigError("output.formats", f"unsupported format {sorted(bad)[0]!r}")

        x0 = d.get("initial_state")
        if x0 is not None:
            x0 = _matrix(x0, "initial_state", cols=1).ravel()
            if x0.size != sys_.n:
                raise ConfigError("initial_state", f"expected {sys_.n} entries, got {x0.size}")
            x0 = x0.tolist()
        name = d.get("name", "experiment")
        if not isinstance(name, str):
            raise ConfigError("name", "expected a string")

        return cls(system, sampling, chirps, noise, synthesis, validation, output, x0, name, hold)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "system": {k: v for k, v in asdict(self.system).items() if v is not None},
            "sampling": asdict(self.sampling),
            "excitation": {"chirps": [{k: v for k, v in asdict(c).items() if v is not None}
                                      for c in self.chirps],
                           "hold": self.hold},
            "noise": asdict(self.noise),
            "synthesis": _drop_none(asdict(self.synthesis)),
            "validation": asdict(self.validation),
            "output": asdict(self.output),
        }
        if self.initial_state is not None:
            d["initial_state"] = list(self.initial_state)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    # ---- builders ------------------------------------------------------
    def lti_system(self) -> LtiSystem:
        return self.system.build()

    def chirp_specs(self) -> list[ChirpSpec]:
        return [ChirpSpec(c.psi, c.f0, c.f1, self.sampling.T, c.c) for c in self.chirps]

    def input_signal(self):
        """Excitation as a function of time, held between samples if configured."""
        u = chirp_input(self.chirp_specs())
        return sample_and_hold(u, self.sampling.dt) if self.hold == "zoh" else u

    def noise_spec(self, seed: int | None = None) -> NoiseSpec:
        return NoiseSpec(self.noise.sigma, self.noise.seed if seed is None else seed)

    def x0(self) -> np.ndarray:
        n = self.lti_system().n
        return np.zeros(n) if self.initial_state is None else np.array(self.initial_state, dtype=float)

    def weights(self) -> Weights:
        sys_ = self.lti_system()
        return Weights(_weight(self.synthesis.Q, "synthesis.Q", sys_.n),
                       _weight(self.synthesis.R, "synthesis.R", sys_.m))

    def tracking_spec(self) -> TrackingSpec | None:
        t = self.synthesis.tracking
        if t is None:
            return None
        n = self.lti_system().n
        if t.index is not None:
            spec = TrackingSpec.unit(n, t.index, t.r_hat[0])
            return spec if len(t.r_hat) == 1 else TrackingSpec(spec.H, t.r_hat)
        if t.H is not None:
            return TrackingSpec(np.array(t.H, dtype=float), t.r_hat,
                                None if t.C is None else np.array(t.C, dtype=float))
        return TrackingSpec.from_output(np.array(t.C, dtype=float), t.r_hat)

    def known_actuator(self) -> KnownActuator | None:
        a = self.synthesis.actuator
        return None if a is None else KnownActuator(np.array(a.A_hat, dtype=float), np.array(a.B_hat, dtype=float))

    def synthesis_spec(self) -> SynthesisSpec:
        return SynthesisSpec(Variant(self.synthesis.variant), self.weights(), self.tracking_spec(),
                             self.known_actuator(), self.sampling.dt)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self.synthesis.solver)


def _drop_none(d):
    if isinstance(d, dict):
        return {k: _drop_none(v) for k, v in d.items() if v is not None}
    return d


def _default_chirps(preset: str | None, T: float, use_table_c: bool) -> list[ChirpConfig] | None:
    if preset == "a4d":
        specs = presets.a4d_chirps("model-free", T, use_table_c)
    elif preset == "a4d-mixed":
        specs = presets.a4d_chirps("mixed", T, use_table_c)
    elif preset == "b747":
        specs = presets.b747_chirps(T)
    else:
        return None
    return [ChirpConfig(s.psi, s.f0, s.f1, s.c if use_table_c and preset != "b747" else None) for s in specs]


def _parse_synthesis(d: dict, system: SystemConfig, sys_: LtiSystem) -> SynthesisConfig:
    sy = _block(d, "synthesis", "", {"variant", "Q", "R", "tracking", "actuator", "solver",
                                     "depth", "normalize"})
    try:
        variant = Variant(sy.get("variant", "regulator"))
    except ValueError:
        raise ConfigError("synthesis.variant", f"unknown variant {sy.get('variant')!r}; "
                          f"choose from {[v.value for v in Variant]}") from None
    Q = sy.get("Q")
    R = sy.get("R")
    Qm = _weight(Q, "synthesis.Q", sys_.n)
    Rm = _weight(R, "synthesis.R", sys_.m)
    try:
        Weights(Qm, Rm)
    except ValueError as exc:
        raise ConfigError("synthesis.Q" if "Q" in str(exc) else "synthesis.R", str(exc)) from None

    tracking = None
    if "tracking" in sy and sy["tracking"] is not None:
        t = _block(sy, "tracking", "synthesis.", {"index", "H", "C", "r_hat"})
        if "r_hat" not in t:
            raise ConfigError("synthesis.tracking.r_hat", "required field is missing")
        r_hat = _matrix(t["r_hat"], "synthesis.tracking.r_hat", cols=1).ravel().tolist()
        index = t.get("index")
        if index is not None and (isinstance(index, bool) or not isinstance(index, int)
                                  or not 0 <= index < sys_.n):
            raise ConfigError("synthesis.tracking.index", f"must be an integer in [0, {sys_.n})")
        if index is None and t.get("H") is None and t.get("C") is None:
            raise ConfigError("synthesis.tracking", "give one of index, H or C")
        tracking = TrackingConfig(r_hat=r_hat, index=index, H=t.get("H"), C=t.get("C"))
    if variant.tracking and tracking is None:
        raise ConfigError("synthesis.tracking", f"required for variant {variant.value!r}")
    if not variant.tracking and tracking is not None:
        raise ConfigError("synthesis.tracking", f"not used by variant {variant.value!r}")

    actuator = None
    if "actuator" in sy and sy["actuator"] is not None:
        a = _block(sy, "actuator", "synthesis.", {"A_hat", "B_hat"})
        for k in ("A_hat", "B_hat"):
            if k not in a:
                raise ConfigError(f"synthesis.actuator.{k}", "required field is missing")
        Ah = _matrix(a["A_hat"], "synthesis.actuator.A_hat")
        Bh = _matrix(a["B_hat"], "synthesis.actuator.B_hat", rows=Ah.shape[0], cols=sys_.m)
        actuator = ActuatorConfig(Ah.tolist(), Bh.tolist())
    elif variant.mixed and system.preset == "a4d-mixed":
        Ah, Bh = presets.actuator_matrices()
        actuator = ActuatorConfig(Ah.tolist(), Bh.tolist())
    if variant.mixed and actuator is None:
        raise ConfigError("synthesis.actuator", f"required for variant {variant.value!r}")
    if not variant.mixed and actuator is not None:
        raise ConfigError("synthesis.actuator", f"not used by variant {variant.value!r}")

    solver = sy.get("solver", {}) or {}
    if not isinstance(solver, dict):
        raise ConfigError("synthesis.solver", "expected an object")
    known = {f.name for f in fields(SolverOptions)}
    for k in solver:
        if k not in known:
            raise ConfigError(f"synthesis.solver.{k}", "unknown field")
    try:
        SolverOptions(**solver)
    except (TypeError, ValueError) as exc:
        raise ConfigError("synthesis.solver", str(exc)) from None

    cfg = SynthesisConfig(
        variant=variant.value,
        Q=Qm.tolist() if Q is not None else None,
        R=Rm.tolist() if R is not None else None,
        tracking=tracking,
        actuator=actuator,
        solver=dict(solver),
        depth=_number(sy, "depth", "synthesis", 5, positive=True, integer=True),
        normalize=bool(sy.get("normalize", True)),
    )
    try:
        SynthesisSpec(variant, Weights(Qm, Rm),
                      None if tracking is None else _tracking_from(tracking, sys_.n),
                      None if actuator is None else KnownActuator(np.array(actuator.A_hat),
                                                                  np.array(actuator.B_hat)))
    except ValueError as exc:
        raise ConfigError("synthesis", str(exc)) from None
    return cfg


def _tracking_from(t: TrackingConfig, n: int) -> TrackingSpec:
    try:
        if t.index is not None:
            spec = TrackingSpec.unit(n, t.index, t.r_hat[0])
            return spec if len(t.r_hat) == 1 else TrackingSpec(spec.H, t.r_hat)
        if t.H is not None:
            return TrackingSpec(np.array(t.H, dtype=float), t.r_hat,
                                None if t.C is None else np.array(t.C, dtype=float))
        return TrackingSpec.from_output(np.array(t.C, dtype=float), t.r_hat)
    except ValueError as exc:
        raise ConfigError("synthesis.tracking", str(exc)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return ExperimentConfig.from_dict(raw)


R_HAT_5DEG = math.radians(5.0)

PRESET_EXPERIMENTS: dict[str, dict] = {
    "a4d": {
        "name": "a4d-tracking",
        "system": {"preset": "a4d"},
        "sampling": {"rate": 40, "T": 30},
        "synthesis": {"variant": "ref-tracking", "Q": [1, 5, 2, 1], "R": [1, 1],
                      "tracking": {"index": 1, "r_hat": [R_HAT_5DEG]}},
    },
    "a4d-mixed": {
        "name": "a4d-mixed-tracking",
        "system": {"preset": "a4d-mixed"},
        "sampling": {"rate": 20, "T": 30},
        "synthesis": {"variant": "mixed-tracking", "Q": [1, 5, 2, 1, 10, 10], "R": [1, 1],
                      "tracking": {"index": 1, "r_hat": [R_HAT_5DEG]}},
    },
    "b747": {
        "name": "b747-regulator",
        "system": {"preset": "b747"},
        "sampling": {"rate": 40, "T": 30},
        "synthesis": {"variant": "regulator", "Q": [10, 1, 1, 10], "R": [1]},
    },
}


def preset_config(name: str) -> ExperimentConfig:
    if name not in PRESET_EXPERIMENTS:
        raise KeyError(f"unknown preset experiment {name!r}")
    return ExperimentConfig.from_dict(json.loads(json.dumps(PRESET_EXPERIMENTS[name])))

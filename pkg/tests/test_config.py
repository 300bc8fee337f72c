import json

import numpy as np
import pytest

from mflqr import presets
from mflqr.config import PRESET_EXPERIMENTS, ConfigError, ExperimentConfig, load_config, preset_config
from mflqr.constraints import Variant


def minimal(**over):
    d = {
        "system": {"A": [[0.0, 1.0], [-2.0, -0.5]], "B": [[0.0], [1.0]]},
        "sampling": {"rate": 50, "T": 4},
        "excitation": {"chirps": [{"psi": 1.0, "f0": 0.1, "f1": 2.0}]},
    }
    d.update(over)
    return d


@pytest.mark.parametrize("name", sorted(PRESET_EXPERIMENTS))
def test_preset_round_trip(name):
    cfg = preset_config(name)
    again = ExperimentConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert again.to_json() == cfg.to_json()


def test_minimal_round_trip(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(minimal()))
    cfg = load_config(p)
    assert cfg.sampling.dt == pytest.approx(0.02)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.synthesis.variant == "regulator"
    assert np.array_equal(cfg.weights().Q, np.eye(2))


def test_missing_rate_names_field():
    d = minimal()
    del d["sampling"]["rate"]
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict(d)
    assert err.value.path == "sampling.rate"


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d.update(extra=1), "extra"),
    (lambda d: d["sampling"].update(hz=3), "sampling.hz"),
    (lambda d: d.pop("system"), "system"),
    (lambda d: d["system"].update(A=[[1.0, 2.0]]), "system.A"),
    (lambda d: d["excitation"]["chirps"].append({"psi": 1, "f0": 0, "f1": 1}), "excitation.chirps"),
    (lambda d: d.update(synthesis={"variant": "nope"}), "synthesis.variant"),
    (lambda d: d.update(synthesis={"variant": "ref-tracking"}), "synthesis.tracking"),
    (lambda d: d.update(synthesis={"solver": {"tol": 1}}), "synthesis.solver.tol"),
    (lambda d: d.update(noise={"seed": -1}), "noise.seed"),
    (lambda d: d.update(excitation={"chirps": d["excitation"]["chirps"], "hold": "foh"}), "excitation.hold"),
    (lambda d: d.update(validation={"times": [3, 2, 1]}), "validation.times"),
])
def test_invalid_fields(mutate, path):
    d = minimal()
    mutate(d)
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict(d)
    assert err.value.path == path


def test_bad_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError) as err:
        load_config(p)
    assert err.value.path == "<file>"


def test_full_weight_matrix_accepted():
    d = minimal(synthesis={"Q": [[2.0, 0.5], [0.5, 1.0]], "R": [3.0]})
    cfg = ExperimentConfig.from_dict(d)
    assert cfg.weights().Q[0, 1] == 0.5 and cfg.weights().R[0, 0] == 3.0


class TestPresets:
    def test_a4d(self):
        cfg = preset_config("a4d")
        A, B = presets.a4d_matrices()
        sys_ = cfg.lti_system()
        assert np.array_equal(sys_.A, A) and np.array_equal(sys_.B, B)
        assert cfg.sampling.rate == 40 and cfg.sampling.T == 30
        spec = cfg.synthesis_spec()
        assert spec.variant is Variant.REF_TRACKING
        assert np.allclose(np.diag(spec.weights.Q), [1, 5, 2, 1])
        assert spec.tracking.r_hat[0] == pytest.approx(0.0872665, abs=1e-7)
        assert spec.tracking.H[:, 0].tolist() == [0, 1, 0, 0]

    def test_a4d_mixed(self):
        cfg = preset_config("a4d-mixed")
        spec = cfg.synthesis_spec()
        assert spec.variant is Variant.MIXED_TRACKING
        assert spec.n == 6 and cfg.sampling.rate == 20
        Ah, Bh = presets.actuator_matrices()
        assert np.array_equal(spec.known_actuator.A_hat, Ah)
        assert np.array_equal(spec.B_tilde[4:], Bh)

    def test_b747(self):
        cfg = preset_config("b747")
        assert cfg.lti_system().m == 1
        assert np.allclose(np.diag(cfg.weights().Q), [10, 1, 1, 10])

    def test_unknown(self):
        with pytest.raises(KeyError):
            preset_config("concorde")

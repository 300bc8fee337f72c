import numpy as np
import pytest

from mflqr import presets
from mflqr.constraints import SynthesisSpec, Variant
from mflqr.lti import (InsufficientDataError, NoiseSpec, Trajectory, add_noise, chirp_input,
                       sample_and_hold, simulate)
from mflqr.nlp import SolverOptions
from mflqr.riccati import GainSet, TrackingSpec, Weights, lqr
from mflqr.synth import (build_problem, compare_gains, excitation_diagnostic, initial_guess,
                         synthesize, warm_start)

A4D_W = Weights(np.diag([1.0, 5.0, 2.0, 1.0]), np.eye(2))
A4D_K_STAR = np.array([[-1.9720, 2.0435, 1.3938, 0.6144], [0.1676, 0.8942, 0.5429, -1.0581]])
A4D_K_HAT = np.array([[-1.9841, 2.0619, 1.3834, 0.5234], [0.1442, 0.8597, 0.5376, -0.9944]])


def random_run(seed, dt=0.01, sigma_rel=0.0):
    s, chirps, x0 = presets.random_stable(np.random.default_rng(seed))
    traj = simulate(s, sample_and_hold(chirp_input(chirps), dt), x0, 20.0, dt)
    if sigma_rel:
        rms = float(np.sqrt(np.mean(traj.Y ** 2)))
        traj = add_noise(traj, NoiseSpec(sigma_rel * rms, seed))
    w = Weights(np.eye(s.n), np.eye(s.m))
    return s, traj, w


class TestExcitation:
    def a4d_data(self):
        return simulate(presets.a4d(), chirp_input(presets.a4d_chirps()), np.zeros(4), 30.0, 0.025)

    def test_zero_input_fails(self):
        d = self.a4d_data()
        rep = excitation_diagnostic(Trajectory(d.dt, d.Y, np.zeros_like(d.U)), 5)
        assert not rep.passed and rep.hankel_rank == 0

    def test_constant_input_fails(self):
        U = np.ones((1, 50))
        rep = excitation_diagnostic(Trajectory(0.1, np.random.default_rng(0).normal(size=(2, 50)), U), 2)
        assert not rep.passed and rep.hankel_rank == 1

    def test_a4d_chirps_pass(self):
        rep = excitation_diagnostic(self.a4d_data(), 5)
        assert rep.passed and rep.hankel_rows == 10 and rep.data_rows == 6

    def test_too_few_samples(self):
        with pytest.raises(InsufficientDataError):
            excitation_diagnostic(Trajectory(0.1, np.zeros((2, 5)), np.zeros((1, 5))), 5)


class TestCompareGains:
    def setup_method(self):
        self.sys = presets.a4d()

    def test_identical(self):
        g = lqr(self.sys.A, self.sys.B, A4D_W)
        cmp = compare_gains(g.K, None, g, self.sys, A4D_W)
        assert cmp.max_abs_diff_K == 0 and cmp.cost_ratio == pytest.approx(1.0, abs=1e-12)
        assert cmp.both_stable and cmp.max_abs_diff_F is None

    def test_published_pair(self):
        oracle = GainSet(P=np.eye(4), K=A4D_K_STAR)
        cmp = compare_gains(A4D_K_HAT, None, oracle, self.sys, A4D_W)
        assert cmp.max_abs_diff_K == pytest.approx(0.0910, abs=1e-12)
        assert cmp.both_stable and cmp.cost_ratio >= 1.0

    def test_destabilizing(self):
        g = lqr(self.sys.A, self.sys.B, A4D_W)
        cmp = compare_gains(-10 * g.K, None, g, self.sys, A4D_W)
        assert not cmp.both_stable and cmp.cost_ratio is None


class TestRegulator:
    def test_recovers_oracle(self):
        s, traj, w = random_run(1)
        res = synthesize(traj, SynthesisSpec(Variant.REGULATOR, w))
        assert res.solve.status.value == "Converged"
        assert np.max(np.abs(res.gains.K - lqr(s.A, s.B, w).K)) <= 1e-2
        assert np.allclose(res.gains.P, res.gains.P.T)

    @pytest.mark.parametrize("alpha", [0.1, 10.0])
    def test_weight_scaling(self, alpha):
        _, traj, w = random_run(3)
        K1 = synthesize(traj, SynthesisSpec(Variant.REGULATOR, w)).gains.K
        Ka = synthesize(traj, SynthesisSpec(Variant.REGULATOR, w.scaled(alpha))).gains.K
        assert np.max(np.abs(Ka - K1)) <= 1e-3

    def test_finer_sampling_tightens(self):
        errs = []
        for dt in (0.02, 0.005):
            s, traj, w = random_run(7, dt=dt)
            K = synthesize(traj, SynthesisSpec(Variant.REGULATOR, w)).gains.K
            errs.append(np.max(np.abs(K - lqr(s.A, s.B, w).K)))
        assert errs[1] < 0.5 * errs[0]

    @pytest.mark.parametrize("seed", [1, 3, 14])
    def test_small_noise_cost_ratio(self, seed):
        s, traj, w = random_run(seed, sigma_rel=1e-3)
        res = synthesize(traj, SynthesisSpec(Variant.REGULATOR, w))
        cmp = compare_gains(res.gains.K, None, lqr(s.A, s.B, w), s, w)
        assert cmp.both_stable and cmp.cost_ratio <= 1.10


def test_ref_tracking_zero_reference_matches_regulator():
    s, traj, w = random_run(1)
    reg = synthesize(traj, SynthesisSpec(Variant.REGULATOR, w)).gains.K
    trk = TrackingSpec.unit(s.n, 0, 0.0)
    ref = synthesize(traj, SynthesisSpec(Variant.REF_TRACKING, w, trk)).gains.K
    assert np.max(np.abs(ref - reg)) <= 1e-6


def test_warm_start_reduces_residual():
    _, traj, w = random_run(2)
    problem, layout = build_problem(traj, SynthesisSpec(Variant.REGULATOR, w))
    th0 = layout.flatten(initial_guess(layout, traj))
    th1 = warm_start(problem, layout, th0)
    assert np.linalg.norm(problem.c(th1)) < 0.1 * np.linalg.norm(problem.c(th0))
    xs = layout.slice("X")
    assert np.array_equal(th1[xs], th0[xs])


def test_initial_guess():
    _, traj, w = random_run(2)
    _, layout = build_problem(traj, SynthesisSpec(Variant.REGULATOR, w))
    dv = initial_guess(layout, traj)
    assert np.array_equal(dv.L, np.eye(traj.p)) and np.all(dv.K == 1)
    assert np.array_equal(dv.X, traj.Y)


def test_dt_mismatch_rejected():
    _, traj, w = random_run(2)
    with pytest.raises(ValueError):
        synthesize(traj, SynthesisSpec(Variant.REGULATOR, w, dt=0.02))


def test_not_converged_is_reported():
    _, traj, w = random_run(2)
    res = synthesize(traj, SynthesisSpec(Variant.REGULATOR, w), SolverOptions(max_outer=1, max_inner=1))
    assert res.solve.status.value != "Converged"
    assert any("status" in m for m in res.warnings)

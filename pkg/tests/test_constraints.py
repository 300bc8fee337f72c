import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mflqr import presets
from mflqr.constraints import (DecisionVector, KnownActuator, Layout, SynthesisSpec, Variant,
                               constraint_hessian, jacobian, objective, residual, residual_equilibrium, residual_mixed,
                               residual_reference, residual_regulator, weighted_gradient)
from mflqr.lti import ChirpSpec, LtiSystem, Trajectory, chirp_input, simulate
from mflqr.riccati import TrackingSpec, Weights, lqr, simulate_tracking

ALL_VARIANTS = list(Variant)


def random_weights(rng, n, m):
    M = rng.normal(size=(n, n))
    N = rng.normal(size=(m, m))
    return Weights(M @ M.T + 0.5 * np.eye(n), N @ N.T + 0.5 * np.eye(m))


def random_case(variant, rng, N=7):
    """Random spec, data and decision vector of a variant, small enough for dense FD."""
    variant = Variant(variant)
    m = int(rng.integers(1, 3))
    pa = m if variant.mixed else 0
    n = int(rng.integers(2, 4)) + pa
    w = random_weights(rng, n, m)
    tracking = ka = None
    if variant.tracking:
        q = int(rng.integers(1, 3))
        H = np.zeros((n, q))
        H[rng.choice(n, q, replace=False), np.arange(q)] = 1.0
        tracking = TrackingSpec(H=H, r_hat=rng.normal(size=q))
    if variant.mixed:
        ka = KnownActuator(-np.diag(rng.uniform(5, 20, pa)), np.diag(rng.uniform(5, 20, pa)))
    spec = SynthesisSpec(variant, w, tracking, ka)
    data = Trajectory(dt=0.05, Y=rng.normal(size=(n, N + 1)), U=rng.normal(size=(m, N + 1)))
    lay = Layout.for_problem(spec, data)
    theta = rng.normal(size=lay.size)
    return spec, data, lay, theta


def central_fd(fun, theta, h=1e-6):
    c0 = fun(theta)
    J = np.empty((c0.size, theta.size))
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        J[:, j] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return J


def chol_factor(P):
    """Upper factor with P = L'L."""
    return np.linalg.cholesky(P).T


def stable_system(rng, n, m):
    A = rng.normal(size=(n, n))
    A -= (np.linalg.eigvals(A).real.max() + rng.uniform(0.3, 1.0)) * np.eye(n)
    return LtiSystem(A, rng.normal(size=(n, m)))


def rich_input(rng, m, T):
    return chirp_input([ChirpSpec(psi=1.0, f0=rng.uniform(0.05, 0.2), f1=rng.uniform(1.0, 2.0), T=T)
                        for _ in range(m)])


def regulator_residual(sysm, weights, dt, rng_input, T=4.0):
    g = lqr(sysm.A, sysm.B, weights)
    traj = simulate(sysm, rng_input, np.ones(sysm.n), T, dt)
    spec = SynthesisSpec("regulator", weights)
    dv = DecisionVector(L=chol_factor(g.P), K=g.K, X=traj.Y)
    return residual_regulator(dv, traj, spec), g, traj, spec


class TestLayout:
    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_round_trip(self, variant):
        spec, data, lay, theta = random_case(variant, np.random.default_rng(0))
        assert np.array_equal(lay.flatten(lay.unflatten(theta)), theta)

    def test_ordering_column_major(self):
        spec = SynthesisSpec("ref-tracking", Weights(np.eye(2), np.eye(1)), TrackingSpec.unit(2, 0, 1.0))
        data = Trajectory(0.1, np.zeros((2, 3)), np.zeros((1, 3)))
        lay = Layout.for_problem(spec, data)
        assert lay.offsets == {"L": 0, "K": 4, "F": 6, "X": 7, "x_eq": 13, "u_eq": 13}
        dv = lay.unflatten(np.arange(lay.size, dtype=float))
        assert dv.L.tolist() == [[0, 2], [1, 3]]
        assert dv.X[:, 1].tolist() == [9, 10]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    def test_p_is_psd(self, seed, n):
        L = np.random.default_rng(seed).normal(size=(n, n)) * 10
        P = DecisionVector(L=L, X=np.zeros((n, 2))).P
        assert np.array_equal(P, P.T)
        assert np.linalg.eigvalsh(P).min() >= -1e-12 * max(1.0, np.abs(P).max())

    def test_presence_rules(self):
        w = Weights(np.eye(3), np.eye(1))
        with pytest.raises(ValueError):
            SynthesisSpec("ref-tracking", w)
        with pytest.raises(ValueError):
            SynthesisSpec("regulator", w, TrackingSpec.unit(3, 0, 1.0))
        with pytest.raises(ValueError):
            SynthesisSpec("mixed", w)

    def test_dimension_mismatch(self):
        spec = SynthesisSpec("regulator", Weights(np.eye(3), np.eye(1)))
        with pytest.raises(ValueError):
            residual(np.zeros(100), Trajectory(0.1, np.zeros((2, 4)), np.zeros((1, 4))), spec)

    def test_wrong_variant_entry_point(self):
        spec, data, lay, theta = random_case("regulator", np.random.default_rng(1))
        with pytest.raises(ValueError):
            residual_reference(theta, data, spec)


class TestTrivialZeros:
    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_zero_state_and_input(self, variant):
        rng = np.random.default_rng(2)
        spec, data, lay, theta = random_case(variant, rng)
        dv = lay.unflatten(theta)
        if variant.tracking:
            dv.X = np.repeat(spec.tracking.H @ spec.tracking.r_hat[:, None], lay.samples, axis=1)
            dv.F = np.zeros_like(dv.F)
        elif variant is Variant.EQUILIBRIUM:
            dv.X = np.repeat(dv.x_eq[:, None], lay.samples, axis=1)
        else:
            dv.X = np.zeros_like(dv.X)
        zero_u = Trajectory(data.dt, data.Y, np.zeros_like(data.U))
        c = residual(dv, zero_u, spec)
        assert np.all(c[: lay.samples - 1] == 0)
        if variant.mixed and not variant.tracking:
            assert np.all(c == 0)

    def test_value_rows_vanish_for_broadcast_offsets_with_input(self):
        rng = np.random.default_rng(3)
        spec, data, lay, theta = random_case("equilibrium", rng)
        dv = lay.unflatten(theta)
        dv.X = np.repeat(dv.x_eq[:, None], lay.samples, axis=1)
        assert np.all(residual_equilibrium(dv, data, spec) == 0)
        spec, data, lay, theta = random_case("ref-tracking", rng)
        dv = lay.unflatten(theta)
        dv.X = np.repeat(spec.tracking.H @ spec.tracking.r_hat[:, None], lay.samples, axis=1)
        assert np.all(residual_reference(dv, data, spec) == 0)

    def test_actuator_fixed_point(self):
        rng = np.random.default_rng(4)
        spec, data, lay, theta = random_case("mixed", rng, N=20)
        ka = spec.known_actuator
        dv = lay.unflatten(theta)
        g = dv.X[spec.n - ka.pa:, :]
        for k in range(lay.samples - 1):
            g[:, k + 1] = g[:, k] + data.dt * (ka.A_hat @ g[:, k] + ka.B_hat @ data.U[:, k])
        _, act = residual_mixed(dv, data, spec)
        assert np.max(np.abs(act)) <= 1e-12


class TestReductionChain:
    def _shared(self, rng):
        n, m, N = 3, 2, 25
        w = random_weights(rng, n, m)
        data = Trajectory(0.02, rng.normal(size=(n, N + 1)), rng.normal(size=(m, N + 1)))
        return w, data, rng.normal(size=(n, n)), rng.normal(size=(m, n)), rng.normal(size=(n, N + 1))

    def test_equilibrium_zero_offsets(self):
        w, data, L, K, X = self._shared(np.random.default_rng(5))
        base = residual_regulator(DecisionVector(L=L, K=K, X=X), data, SynthesisSpec("regulator", w))
        eq = residual_equilibrium(DecisionVector(L=L, K=K, X=X, x_eq=np.zeros(3), u_eq=np.zeros(2)),
                                  data, SynthesisSpec("equilibrium", w))
        assert np.max(np.abs(eq - base)) <= 1e-12

    def test_reference_zero_rhat(self):
        w, data, L, K, X = self._shared(np.random.default_rng(6))
        base = residual_regulator(DecisionVector(L=L, K=K, X=X), data, SynthesisSpec("regulator", w))
        spec = SynthesisSpec("ref-tracking", w, TrackingSpec.unit(3, 1, 0.0))
        ref = residual_reference(DecisionVector(L=L, K=K, X=X, F=np.ones((2, 1))), data, spec)
        assert np.max(np.abs(ref - base)) <= 1e-12

    def test_mixed_tracking_zero_rhat(self):
        rng = np.random.default_rng(7)
        w, data, L, _, X = self._shared(rng)
        w = Weights(np.eye(3), w.R)
        ka = KnownActuator(-np.diag([10.0, 20.0]), np.diag([10.0, 20.0]))
        base = residual(DecisionVector(L=L, X=X), data, SynthesisSpec("mixed", w, known_actuator=ka))
        spec = SynthesisSpec("mixed-tracking", w, TrackingSpec.unit(3, 0, 0.0), ka)
        trk = residual(DecisionVector(L=L, X=X, F=rng.normal(size=(2, 1))), data, spec)
        assert np.max(np.abs(trk - base)) <= 1e-12


class TestJacobian:
    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_matches_central_differences(self, variant):
        rng = np.random.default_rng(100 + ALL_VARIANTS.index(variant))
        for _ in range(20):
            spec, data, lay, theta = random_case(variant, rng)
            J = jacobian(theta, data, spec).toarray()
            fd = central_fd(lambda th: residual(th, data, spec), theta)
            assert np.max(np.abs(J - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_row_sparsity(self, variant):
        spec, data, lay, theta = random_case(variant, np.random.default_rng(8), N=10)
        J = jacobian(theta, data, spec).tocsr()
        x0, n = lay.offsets["X"], lay.n
        for k in range(lay.samples - 1):
            cols = J.indices[J.indptr[k]:J.indptr[k + 1]]
            xs = cols[(cols >= x0) & (cols < x0 + lay.sizes["X"])]
            assert set((xs - x0) // n) <= {k, k + 1}
        assert J.shape == (lay.n_constraints, lay.size)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_l_block_zero_at_zero_state(self, variant):
        spec, data, lay, theta = random_case(variant, np.random.default_rng(9))
        dv = lay.unflatten(theta)
        dv.X = np.zeros_like(dv.X)
        if variant.tracking:
            dv.X += spec.tracking.H @ spec.tracking.r_hat[:, None]
        if variant is Variant.EQUILIBRIUM:
            dv.X += dv.x_eq[:, None]
        J = jacobian(lay.flatten(dv), data, spec).toarray()
        assert np.all(J[:, lay.slice("L")] == 0)


class TestSecondOrder:
    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_weighted_gradient_is_jt_w(self, variant):
        rng = np.random.default_rng(300 + ALL_VARIANTS.index(variant))
        for _ in range(5):
            spec, data, lay, theta = random_case(variant, rng)
            w = rng.normal(size=lay.n_constraints)
            expected = jacobian(theta, data, spec).T @ w
            assert np.allclose(weighted_gradient(theta, data, spec, w), expected, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_hessian_matches_differenced_gradient(self, variant):
        rng = np.random.default_rng(400 + ALL_VARIANTS.index(variant))
        for _ in range(5):
            spec, data, lay, theta = random_case(variant, rng, N=8)
            w = rng.normal(size=lay.n_constraints)
            H = constraint_hessian(theta, data, spec, w).toarray()
            fd = central_fd(lambda th: weighted_gradient(th, data, spec, w), theta)
            assert np.max(np.abs(H - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))
            assert np.allclose(H, H.T, rtol=0, atol=1e-9 * max(1.0, np.abs(H).max()))

    def test_actuator_rows_add_no_curvature(self):
        spec, data, lay, theta = random_case(Variant.MIXED_MODEL, np.random.default_rng(5))
        N = lay.samples - 1
        w = np.zeros(lay.n_constraints)
        w[N:] = 1.0
        assert constraint_hessian(theta, data, spec, w).count_nonzero() == 0


class TestObjective:
    def test_zero_at_data(self):
        spec, data, lay, theta = random_case("regulator", np.random.default_rng(10))
        dv = lay.unflatten(theta)
        dv.X = data.Y.copy()
        f, g = objective(lay.flatten(dv), data, spec)
        assert f == 0 and np.all(g == 0)

    def test_single_offset(self):
        spec, data, lay, theta = random_case("mixed", np.random.default_rng(11))
        dv = lay.unflatten(theta)
        dv.X = data.Y.copy()
        h = 0.37
        dv.X[1, 2] += h
        f, g = objective(lay.flatten(dv), data, spec)
        assert f == pytest.approx(h * h, rel=1e-14)
        assert g[lay.offsets["X"] + 2 * lay.n + 1] == pytest.approx(2 * h, rel=1e-14)
        assert np.count_nonzero(g) == 1

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_gradient_fd(self, variant):
        spec, data, lay, theta = random_case(variant, np.random.default_rng(12))
        _, g = objective(theta, data, spec)
        fd = central_fd(lambda th: np.array([objective(th, data, spec)[0]]), theta)[0]
        assert np.max(np.abs(g - fd)) <= 1e-7 * max(1.0, np.max(np.abs(fd)))


class TestOracleConsistency:
    def test_regulator_first_order(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            n, m = int(rng.integers(2, 5)), int(rng.integers(1, 3))
            sysm, w = stable_system(rng, n, m), random_weights(rng, n, m)
            u = rich_input(rng, m, 4.0)
            errs = [np.max(np.abs(regulator_residual(sysm, w, dt, u)[0])) for dt in (0.02, 0.01, 0.005)]
            assert 1.5 <= errs[0] / errs[1] <= 3.0
            assert 1.5 <= errs[1] / errs[2] <= 3.0

    def test_perturbed_gain_breaks_constraint(self):
        rng = np.random.default_rng(21)
        sysm, w = stable_system(rng, 3, 1), random_weights(rng, 3, 1)
        c, g, traj, spec = regulator_residual(sysm, w, 0.001, rich_input(rng, 1, 4.0))
        K = g.K.copy()
        K[0, 0] += 0.1
        bad = residual_regulator(DecisionVector(L=chol_factor(g.P), K=K, X=traj.Y), traj, spec)
        assert np.max(np.abs(bad)) > 10 * np.max(np.abs(c))

    def test_equilibrium_first_order(self):
        rng = np.random.default_rng(22)
        sysm, w = stable_system(rng, 3, 2), random_weights(rng, 3, 2)
        x_eq, u_eq = rng.normal(size=3), rng.normal(size=2)
        g = lqr(sysm.A, sysm.B, w)
        base = rich_input(rng, 2, 4.0)
        shifted = LtiSystem(sysm.A, sysm.B)
        spec = SynthesisSpec("equilibrium", w)

        def worst(dt):
            dev = simulate(shifted, base, np.ones(3), 4.0, dt)
            data = Trajectory(dt, dev.Y + x_eq[:, None], dev.U + u_eq[:, None])
            dv = DecisionVector(L=chol_factor(g.P), K=g.K, X=data.Y, x_eq=x_eq, u_eq=u_eq)
            return np.max(np.abs(residual_equilibrium(dv, data, spec)))

        e = [worst(dt) for dt in (0.02, 0.01, 0.005)]
        assert 1.5 <= e[0] / e[1] <= 3.0 and 1.5 <= e[1] / e[2] <= 3.0

    def _tracking_case(self, rng, nx_equals_h):
        # single input keeps the steady-state block system square, so N_x is unique
        sysm, w = stable_system(rng, 3, 1), random_weights(rng, 3, 1)
        A, B = sysm.A.copy(), sysm.B
        if nx_equals_h:
            # A e_2 in range(B) makes N_x = H, i.e. the reference is an equilibrium
            A[:, 1] = B @ rng.normal(size=1)
        sysm = LtiSystem(A, B)
        spec = TrackingSpec.unit(3, 1, 0.8)
        g = lqr(A, B, w, spec)
        return sysm, w, spec, g

    def test_reference_first_order_when_reference_is_equilibrium(self):
        rng = np.random.default_rng(23)
        sysm, w, trk, g = self._tracking_case(rng, True)
        sspec = SynthesisSpec("ref-tracking", w, trk)

        def worst(dt):
            data = simulate_tracking(sysm, g.K, g.F, trk, lambda t: trk.r_hat, np.array([1.0, -1.0, 0.5]), 4.0, dt)
            dv = DecisionVector(L=chol_factor(g.P), K=g.K, F=g.F, X=data.Y)
            return np.max(np.abs(residual_reference(dv, data, sspec)))

        e = [worst(dt) for dt in (0.02, 0.01, 0.005)]
        assert 1.5 <= e[0] / e[1] <= 3.0 and 1.5 <= e[1] / e[2] <= 3.0

    def test_reference_bias_when_reference_is_not_equilibrium(self):
        # with d = N_x - H != 0 the oracle triple leaves -2 r^2 d'P(A-BK)d at steady state
        rng = np.random.default_rng(24)
        sysm, w, trk, g = self._tracking_case(rng, False)
        M = np.block([[sysm.A, sysm.B], [trk.C, np.zeros((1, 1))]])
        Nx = np.linalg.lstsq(M, np.r_[np.zeros(3), 1.0], rcond=None)[0][:3]
        d = Nx - trk.H[:, 0]
        r = trk.r_hat[0]
        expected = -2 * r * r * d @ g.P @ (sysm.A - sysm.B @ g.K) @ d
        data = simulate_tracking(sysm, g.K, g.F, trk, lambda t: trk.r_hat, np.zeros(3), 30.0, 0.005)
        dv = DecisionVector(L=chol_factor(g.P), K=g.K, F=g.F, X=data.Y)
        c = residual_reference(dv, data, SynthesisSpec("ref-tracking", w, trk))
        assert expected > 0
        assert c[-1] == pytest.approx(expected, rel=1e-3)

    def test_mixed_first_order_both_blocks(self):
        joint = presets.a4d_mixed()
        w = Weights(np.diag([1.0, 5, 2, 1, 10, 10]), np.eye(2))
        g = lqr(joint.A, joint.B, w)
        ka = KnownActuator(*presets.actuator_matrices())
        spec = SynthesisSpec("mixed", w, known_actuator=ka)
        u = chirp_input(presets.a4d_chirps("mixed", T=10.0))

        def worst(dt):
            data = simulate(joint, u, np.zeros(6), 10.0, dt)
            val, act = residual_mixed(DecisionVector(L=chol_factor(g.P), X=data.Y), data, spec)
            return np.max(np.abs(val)), np.max(np.abs(act))

        e = np.array([worst(dt) for dt in (0.01, 0.005, 0.0025)])
        for col in range(2):
            assert 1.5 <= e[0, col] / e[1, col] <= 3.0 and 1.5 <= e[1, col] / e[2, col] <= 3.0

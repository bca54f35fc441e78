import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from casbandit.env import (
    AngleUndefinedError,
    AssumptionViolation,
    DivergenceError,
    EnvState,
    QuadraticRisk,
    accuracy_proxy,
    avg_gradient,
    avg_hessian,
    avg_risk,
    calibrate_epsilon,
    cos_psi,
    drift_report,
    drift_threshold,
    hessian_lambda_max,
    risk_change_bound,
    make_environment,
    pareto_reweighted_direction,
    risk_accuracy,
    risk_gradient,
    risk_value,
    train_step,
    weighted_step,
)


def random_psd(rng, d, rank=None):
    g = rng.standard_normal((d, rank or d))
    return g @ g.T / d


def random_risk(rng, d):
    return QuadraticRisk(random_psd(rng, d), rng.standard_normal(d),
                         float(rng.uniform(0, 1)), float(rng.uniform(0.5, 2)))


def central_difference(f, x, h=1e-5):
    out = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


IDENTITY2 = QuadraticRisk(np.eye(2), np.zeros(2))


class TestRisk:
    def test_minimum(self):
        r = QuadraticRisk(np.diag([2.0, 3.0]), [1.0, -1.0], 0.3, 2.0)
        assert risk_value(r, [1.0, -1.0]) == pytest.approx(0.6)
        np.testing.assert_array_equal(risk_gradient(r, [1.0, -1.0]), [0.0, 0.0])

    def test_identity(self):
        assert risk_value(IDENTITY2, [3.0, 4.0]) == 12.5
        np.testing.assert_array_equal(risk_gradient(IDENTITY2, [3.0, 4.0]), [3.0, 4.0])

    def test_strength_linear(self):
        rng = np.random.default_rng(0)
        r = random_risk(rng, 4)
        th = rng.standard_normal(4)
        assert r.with_strength(2 * r.strength).value(th) == pytest.approx(2 * r.value(th))

    def test_validation(self):
        with pytest.raises(ValueError):
            QuadraticRisk([[1.0, 2.0], [0.0, 1.0]], [0, 0])
        with pytest.raises(ValueError):
            QuadraticRisk(np.diag([1.0, -1.0]), [0, 0])
        with pytest.raises(ValueError):
            IDENTITY2.value([1.0, 2.0, 3.0])

    @given(st.integers(0, 10_000))
    @settings(max_examples=30)
    def test_value_lower_bound(self, seed):
        rng = np.random.default_rng(seed)
        r = random_risk(rng, 3)
        assert r.value(rng.standard_normal(3) * 10) >= r.offset * r.strength - 1e-12

    @pytest.mark.parametrize("d", [2, 10, 50])
    def test_gradient_matches_finite_differences(self, d):
        rng = np.random.default_rng(d)
        worst = 0.0
        for _ in range(100):
            r = random_risk(rng, d)
            th = rng.standard_normal(d)
            g = r.gradient(th)
            fd = central_difference(r.value, th)
            worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(g))
        assert worst < 1e-6

    def test_avg(self):
        rng = np.random.default_rng(1)
        r = random_risk(rng, 3)
        th = rng.standard_normal(3)
        assert avg_risk([r, r], th) == pytest.approx(r.value(th))
        a = QuadraticRisk(np.zeros((1, 1)), [0.0], 1.0)
        b = QuadraticRisk(np.zeros((1, 1)), [0.0], 3.0)
        assert avg_risk([a, b], [5.0]) == 2.0
        risks = [random_risk(rng, 3) for _ in range(3)]
        fd = central_difference(lambda x: avg_risk(risks, x), th)
        np.testing.assert_allclose(avg_gradient(risks, th), fd, rtol=1e-6)
        with pytest.raises(ValueError):
            avg_risk([], th)


class TestTrainStep:
    def test_zero_learning_rate(self):
        env = EnvState([1.0, 2.0], learning_rate=0.0)
        new, _ = train_step(env, IDENTITY2, IDENTITY2, 0.5)
        np.testing.assert_array_equal(new.theta, env.theta)
        assert new.step == 1 and new.grad_evals == 1

    def test_single_step(self):
        new, loss = train_step(EnvState([1.0, 0.0], learning_rate=0.1), IDENTITY2, IDENTITY2, 1.0)
        np.testing.assert_allclose(new.theta, [0.9, 0.0], rtol=1e-15)
        assert loss == pytest.approx(0.5 * 0.81)

    def test_monotone_descent(self):
        rng = np.random.default_rng(4)
        risk = QuadraticRisk(random_psd(rng, 5) + 0.5 * np.eye(5), rng.standard_normal(5), 0.1)
        clean = QuadraticRisk(np.eye(5), np.zeros(5), 0.1)
        h = 0.7 * risk.hessian() + 0.3 * clean.hessian()
        eta = 1.9 / np.linalg.eigvalsh(h)[-1]
        env = EnvState(rng.standard_normal(5) * 5, learning_rate=eta)
        losses = []
        for _ in range(200):
            env, loss = train_step(env, risk, clean, 0.7)
            losses.append(loss)
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_divergence_named(self):
        big = QuadraticRisk(np.eye(1) * 1e200, [0.0])
        env = EnvState([1e200], learning_rate=1e200)
        with pytest.raises(DivergenceError) as exc:
            train_step(env, big, big, 1.0)
        assert exc.value.step == 1

    def test_noise_lognormal(self):
        env = EnvState([1.0, 1.0], learning_rate=0.1, noise_scale=0.5)
        _, clean_loss = train_step(EnvState([1.0, 1.0], learning_rate=0.1), IDENTITY2, IDENTITY2, 1.0)
        rng = np.random.default_rng(2)
        z = np.random.default_rng(2).standard_normal()
        _, noisy = train_step(env, IDENTITY2, IDENTITY2, 1.0, rng)
        assert noisy == pytest.approx(clean_loss * math.exp(0.5 * z))
        with pytest.raises(ValueError):
            train_step(env, IDENTITY2, IDENTITY2, 1.0)

    def test_weighted_step_reduces(self):
        rng = np.random.default_rng(3)
        r = random_risk(rng, 3)
        clean = random_risk(rng, 3)
        e1, _ = train_step(EnvState(np.ones(3), learning_rate=0.05), r, clean, 0.8)
        e2, _, vals = weighted_step(EnvState(np.ones(3), learning_rate=0.05), [r], clean, [3.0], 0.8)
        np.testing.assert_array_equal(e1.theta, e2.theta)
        assert vals[0] == r.value(e2.theta)


class TestAccuracyProxy:
    def test_values(self):
        assert accuracy_proxy(0.0) == 1.0
        assert accuracy_proxy(math.log(2)) == pytest.approx(0.5, rel=1e-15)
        with pytest.raises(ValueError):
            accuracy_proxy(-0.1)

    @given(st.floats(0, 700), st.floats(0, 700))
    def test_monotone(self, a, b):
        if a < b and math.exp(-a) != math.exp(-b):
            assert accuracy_proxy(a) > accuracy_proxy(b)
        assert 0 < accuracy_proxy(a) <= 1


class TestLambdaMax:
    def test_diagonal(self):
        r = QuadraticRisk(np.diag([3.0, 1.0]), [0, 0])
        assert hessian_lambda_max([r]) == pytest.approx(3.0, rel=1e-8)

    def test_mean(self):
        a = QuadraticRisk(np.diag([3.0, 1.0]), [0, 0])
        b = QuadraticRisk(np.diag([1.0, 3.0]), [0, 0])
        assert hessian_lambda_max([a, b]) == pytest.approx(2.0, rel=1e-12)

    def test_against_dense_solver(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            d = int(rng.integers(2, 51))
            risks = [random_risk(rng, d) for _ in range(int(rng.integers(1, 4)))]
            exact = np.linalg.eigvalsh(avg_hessian(risks))[-1]
            assert hessian_lambda_max(risks) == pytest.approx(exact, abs=1e-6, rel=1e-6)

    def test_iteration_cap(self):
        from casbandit.env import ConvergenceError
        r = QuadraticRisk(np.diag([1.0, 0.999999, 0.5]), [0, 0, 0])
        with pytest.raises(ConvergenceError):
            hessian_lambda_max([r], tolerance=1e-15, max_iter=5)


class TestDriftQuantities:
    def test_cos(self):
        assert cos_psi([1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.0)
        assert cos_psi([1.0, 0.0], [0.0, 3.0]) == 0.0
        assert cos_psi([1.0, 0.0], [1.0, 1.0]) == pytest.approx(1 / math.sqrt(2), rel=1e-15)
        with pytest.raises(AngleUndefinedError):
            cos_psi([0.0, 0.0], [1.0, 0.0])

    def test_risk_change_bound_values(self):
        assert risk_change_bound(1.3, 0.0, 0.4, 2.0) == 0.0
        assert risk_change_bound(1.0, 1.0, 1.0, 1.0) == -0.5

    def test_threshold(self):
        assert drift_threshold(1.0, 1.0, 1.0) == 2.0
        assert drift_threshold(1.0, 0.0, 1.0) == 0.0
        assert drift_threshold(1.0, -0.5, 1.0) == 0.0
        assert drift_threshold(2.0, 0.3, 0.7) == pytest.approx(2 * drift_threshold(1.0, 0.3, 0.7))
        with pytest.raises(AssumptionViolation):
            drift_threshold(1.0, 1.0, 0.0)

    @pytest.mark.parametrize("drift, after", [(1.9, 0.405), (2.1, 0.605)])
    def test_two_sided_example(self, drift, after):
        theta1 = np.array([1.0, 0.0])
        g = avg_gradient([IDENTITY2, IDENTITY2], theta1)
        rep = drift_report(theta1, IDENTITY2, IDENTITY2, -drift * g / np.linalg.norm(g))
        assert rep.threshold == pytest.approx(2.0, rel=1e-12) and rep.cos_psi == pytest.approx(1.0)
        assert rep.lambda_max == pytest.approx(1.0, rel=1e-12)
        assert avg_risk([IDENTITY2, IDENTITY2], theta1) == 0.5
        assert 0.5 + rep.actual_delta == pytest.approx(after, abs=1e-15)
        assert rep.actual_delta == pytest.approx(rep.bound_value, abs=1e-12)

    def test_random_pairs_respect_threshold(self):
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 1000:
            d = int(rng.integers(2, 8))
            p, q = random_risk(rng, d), random_risk(rng, d)
            theta1 = rng.standard_normal(d) * 2
            gq = q.gradient(theta1)
            rep0 = drift_report(theta1, p, q, np.zeros(d))
            if rep0.cos_psi <= 0:
                continue
            frac = rng.uniform(0.01, 0.99)
            delta = -frac * rep0.threshold * gq / np.linalg.norm(gq)
            rep = drift_report(theta1, p, q, delta)
            assert rep.drift_norm < rep.threshold
            assert rep.actual_delta < 0
            assert rep.actual_delta <= rep.bound_value + 1e-12
            checked += 1


class TestCalibration:
    def test_fixed_point(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = calibrate_epsilon(lambda e: 0.0, 1.0, 0.3)
        assert res.epsilon == 0.3 and not res.converged

    def test_warns(self):
        with pytest.warns(RuntimeWarning):
            calibrate_epsilon(lambda e: 0.0, 1.0, 0.3, max_iter=3)

    def test_one_substitution(self):
        seen = []

        def acc(eps):
            seen.append(eps)
            return 0.4

        res = calibrate_epsilon(acc, 0.0, 2.0)
        assert seen[1] == pytest.approx(0.8) and res.epsilon == pytest.approx(0.8)
        assert res.converged and res.iterations == 1

    def test_lands_in_range(self):
        r = QuadraticRisk(np.eye(3), np.ones(3), 0.05)
        theta = np.zeros(3)
        acc = risk_accuracy(r, theta)
        # bisection oracle: some strength puts accuracy inside the target range
        lo, hi = 1e-6, 100.0
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if acc(mid) > 0.4 else (lo, mid)
        assert 0.2 <= acc(lo) <= 0.6
        res = calibrate_epsilon(acc, 0.1, 1.0)
        assert res.converged and 0.2 <= res.accuracy <= 0.6
        assert acc(res.epsilon) == res.accuracy


class TestPareto:
    def test_static_scalarisation(self):
        g = np.array([[1.0, 2.0], [3.0, -1.0]])
        np.testing.assert_allclose(pareto_reweighted_direction(g, [2.0, 1.0], [0, 0], 10), 2 * g[0] + g[1])

    def test_single_arm(self):
        g = np.array([[1.0, -2.0]])
        out = pareto_reweighted_direction(g, [3.0], [0.1], 10)
        np.testing.assert_allclose(out, 3 * math.e * g[0])

    def test_opposing(self):
        g = np.array([0.3, -1.2])
        out = pareto_reweighted_direction([g, -g], [1.0, 1.0], [0.05, 0.0], 10)
        assert cos_psi(out, g) == pytest.approx(1.0)


class TestEnvironment:
    def test_deterministic(self):
        a = make_environment(4, [1.0] * 3, 0.7, seed=5)
        b = make_environment(4, [1.0] * 3, 0.7, seed=5)
        for ra, rb in zip(a.risks, b.risks):
            np.testing.assert_array_equal(ra.matrix, rb.matrix)
            np.testing.assert_array_equal(ra.center, rb.center)

    def test_zero_conflict_shares_minimiser(self):
        env = make_environment(4, [1.0, 2.0, 0.5], 0.0, seed=2)
        for r in env.risks[1:]:
            np.testing.assert_allclose(r.center, env.risks[0].center)
            assert np.count_nonzero(r.matrix - np.diag(np.diag(r.matrix))) == 0

    def test_strengths(self):
        env = make_environment(3, [1.0, 2.5], 0.5, seed=2)
        assert [r.strength for r in env.risks] == [1.0, 2.5]
        assert np.all(env.accuracies(env.theta0) < 1)

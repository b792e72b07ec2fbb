import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from jarzynski_ebm import dynamics as dyn
from jarzynski_ebm.energy import GaussianMixture, IsotropicGaussian, ZOnlyMixture

GAUSS1 = IsotropicGaussian(1)
MU0 = np.zeros(1)


class TestAlpha:
    def test_stationary_point(self):
        assert dyn.alpha(GAUSS1, MU0, [0.0], [3.7], 0.1) == 0.0

    def test_hand_value(self):
        assert dyn.alpha(GAUSS1, MU0, [1.0], [2.0], 0.1) == pytest.approx(1.025, abs=1e-15)

    def test_no_step(self, rng):
        m = GaussianMixture(2)
        theta = rng.normal(size=5)
        x = rng.normal(size=2)
        assert dyn.alpha(m, theta, x, x, 0.0) == m.energy(theta, x)

    def test_batched(self, rng):
        m = GaussianMixture(2)
        theta = rng.normal(size=5)
        x, y = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
        vals = dyn.alpha(m, theta, x, y, 0.05)
        assert np.allclose(vals, [dyn.alpha(m, theta, xi, yi, 0.05) for xi, yi in zip(x, y)])


class TestUlaStep:
    def test_fixed_point_no_noise(self):
        out = dyn.ula_step(GAUSS1, MU0, np.array([0.0]), dyn.StepParams(0.1, noise=np.zeros(1)))
        assert out[0] == 0.0

    def test_hand_value(self):
        out = dyn.ula_step(GAUSS1, MU0, np.array([2.0]), dyn.StepParams(0.1, noise=np.ones(1)))
        assert out[0] == pytest.approx(2 - 0.2 + math.sqrt(0.2), abs=1e-15)

    def test_stationary_variance(self):
        h, n = 0.1, 100_000
        x = np.zeros((n, 1))
        rng = dyn.stream(7, 99)
        for _ in range(200):
            x = dyn.ula_step(GAUSS1, MU0, x, dyn.StepParams(h), rng)
        assert x.var() == pytest.approx(1 / (1 - h / 2), rel=0.02)

    def test_needs_noise_source(self):
        with pytest.raises(ValueError):
            dyn.ula_step(GAUSS1, MU0, np.zeros(1), dyn.StepParams(0.1))

    def test_nonpositive_step(self):
        with pytest.raises(ValueError):
            dyn.StepParams(0.0)

    def test_blowup_names_walker(self):
        x = np.array([[0.0], [1.0], [0.0]])
        noise = np.array([[0.0], [0.0], [np.inf]])
        with pytest.raises(dyn.NumericalBlowup) as info:
            dyn.ula_step(GAUSS1, MU0, x, dyn.StepParams(0.1, noise=noise))
        assert info.value.walker == 2

    def test_blowup_detected(self):
        x = np.array([[0.0], [np.inf]])
        with pytest.raises(dyn.NumericalBlowup) as info:
            dyn.check_finite(x, "position", iteration=4)
        assert info.value.walker == 1 and info.value.iteration == 4
        assert "walker 1" in str(info.value)


class TestWeightIncrement:
    def test_identical_states(self, rng):
        m = GaussianMixture(2)
        theta = rng.normal(size=5)
        x = rng.normal(size=2)
        assert dyn.weight_increment(m, theta, theta, x, x, 0.1) == 0.0

    def test_argument_order(self):
        # the new-parameter alpha is evaluated at (x_next, x_prev)
        m = IsotropicGaussian(1)
        t0, t1 = np.array([0.0]), np.array([0.3])
        x0, x1 = np.array([1.0]), np.array([0.4])
        expected = -dyn.alpha(m, t1, x1, x0, 0.1) + dyn.alpha(m, t0, x0, x1, 0.1)
        assert dyn.weight_increment(m, t0, t1, x0, x1, 0.1) == expected

    def test_reduces_to_frozen_for_small_h(self, rng):
        m = GaussianMixture(2)
        t0 = rng.normal(size=5)
        t1 = t0 + 0.05 * rng.normal(size=5)
        x = rng.normal(size=2)
        moved = dyn.weight_increment(m, t0, t1, x, x, 1e-12)
        frozen = dyn.frozen_weight_increment(m, t0, t1, x)
        assert moved == pytest.approx(frozen, abs=1e-10)

    def test_static_gaussian_telescopes(self, rng):
        # for U = |x|^2/2 the increments sum to h(|x_0|^2 - |x_k|^2)/4
        h = 0.1
        x = rng.normal(size=(50, 1))
        x0, A = x.copy(), np.zeros(50)
        for _ in range(30):
            x1 = dyn.ula_step(GAUSS1, MU0, x, dyn.StepParams(h), rng)
            A += dyn.weight_increment(GAUSS1, MU0, MU0, x, x1, h)
            x = x1
        assert np.allclose(A, 0.25 * h * (x0[:, 0] ** 2 - x[:, 0] ** 2), atol=1e-12)


class TestFrozenIncrement:
    def test_no_change(self, rng):
        m = GaussianMixture(1)
        theta = rng.normal(size=3)
        assert dyn.frozen_weight_increment(m, theta, theta, [0.4]) == 0.0

    @pytest.mark.parametrize("x", [-9.0, 0.0, 5.5])
    def test_taylor_in_z(self, x):
        m = GaussianMixture(1)
        theta = np.array([-10.0, 6.0, 0.2])
        for delta in (1e-3, 1e-4):
            t1 = theta + np.array([0.0, 0.0, delta])
            inc = dyn.frozen_weight_increment(m, theta, t1, [x])
            dz = m.grad_theta(theta, [x])[2]
            assert abs(inc + dz * delta) < 2 * delta**2

    def test_energy_difference(self, rng):
        m = GaussianMixture(3)
        t0, t1 = rng.normal(size=7), rng.normal(size=7)
        x = rng.normal(size=(10, 3))
        assert np.array_equal(dyn.frozen_weight_increment(m, t0, t1, x), m.energy(t0, x) - m.energy(t1, x))


class TestTransitionDensity:
    def test_noiseless_image(self, rng):
        m = GaussianMixture(2)
        theta = rng.normal(size=5)
        x = rng.normal(size=2)
        h = 0.1
        y = x - h * m.grad_x(theta, x)
        assert dyn.log_transition_density(m, theta, x, y, h) == pytest.approx(-math.log(4 * math.pi * h), abs=1e-14)

    def test_hand_value(self):
        val = dyn.log_transition_density(GAUSS1, MU0, [1.0], [1.0], 0.1)
        assert val == pytest.approx(-0.5 * math.log(0.4 * math.pi) - 0.01 / 0.4, abs=1e-14)

    def test_normalized(self):
        m = ZOnlyMixture([-3.0], [4.0])
        theta = np.array([0.5])
        x = np.array([1.2])
        y = np.linspace(-6, 8, 40001)[:, None]
        dens = np.exp(dyn.log_transition_density(m, theta, np.repeat(x[None], y.shape[0], 0), y, 0.1))
        assert trapezoid(dens, y[:, 0]) == pytest.approx(1.0, abs=1e-6)

    def test_rejects_nonpositive_h(self):
        with pytest.raises(ValueError):
            dyn.log_transition_density(GAUSS1, MU0, [0.0], [0.0], 0.0)


def test_telescoping_identity_short(rng):
    m = GaussianMixture(2)
    h = 0.05
    theta = np.array([-2.0, 0.0, 2.0, 0.5, 0.3])
    x = m.sample(theta, 1, rng)[0]
    x0, t0 = x.copy(), theta.copy()
    A, log_ratio = 0.0, 0.0
    for _ in range(20):
        t1 = theta + 0.05 * rng.normal(size=5)
        x1 = dyn.ula_step(m, theta, x, dyn.StepParams(h), rng)
        A += dyn.weight_increment(m, theta, t1, x, x1, h)
        log_ratio += dyn.log_transition_density(m, t1, x1, x, h) - dyn.log_transition_density(m, theta, x, x1, h)
        x, theta = x1, t1
    rhs = -m.energy(theta, x) + m.energy(t0, x0) + log_ratio
    assert A == pytest.approx(rhs, abs=1e-10)


class TestStreams:
    def test_reproducible(self):
        a = dyn.walker_noise(3, 10, 5, 2)
        b = dyn.walker_noise(3, 10, 5, 2)
        assert np.array_equal(a, b)

    def test_distinct_keys(self):
        a = dyn.walker_noise(3, 10, 5, 2)
        assert not np.array_equal(a, dyn.walker_noise(3, 11, 5, 2))
        assert not np.array_equal(a, dyn.walker_noise(4, 10, 5, 2))
        assert not np.array_equal(a, dyn.walker_noise(3, 10, 5, 2, dyn.STREAM_CD))

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv(dyn.THREADS_ENV, "3")
        assert dyn.num_threads() == 3
        monkeypatch.setenv(dyn.THREADS_ENV, "0")
        assert dyn.num_threads() >= 1
        monkeypatch.setenv(dyn.THREADS_ENV, "many")
        with pytest.raises(ValueError):
            dyn.num_threads()

    @pytest.mark.parametrize("threads", ["1", "2", "4"])
    def test_chunked_evaluation_bitwise(self, monkeypatch, threads):
        m = GaussianMixture(3)
        theta = np.linspace(-1, 1, 7)
        x = dyn.stream(0, 42).normal(size=(3 * dyn.CHUNK_ROWS + 17, 3))
        monkeypatch.setenv(dyn.THREADS_ENV, "1")
        ref = m.evaluate(theta, x)
        monkeypatch.setenv(dyn.THREADS_ENV, threads)
        out = dyn.evaluate_walkers(m, theta, x)
        for r, o in zip(ref, out):
            assert np.array_equal(r, o)


def test_step_size_warning():
    m = GaussianMixture(1)
    theta = np.array([-10.0, 6.0, 0.0])
    with pytest.warns(RuntimeWarning, match="2/L"):
        assert not dyn.check_step_size(m, theta, 0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert dyn.check_step_size(m, theta, 0.01)


@given(x=st.floats(-20, 20), y=st.floats(-20, 20), h=st.floats(1e-4, 0.5))
def test_alpha_quadratic_closed_form(x, y, h):
    # U = x^2/2: alpha = x^2/2 + (y - x) x / 2 + h x^2 / 4
    expected = 0.5 * x * x + 0.5 * (y - x) * x + 0.25 * h * x * x
    assert dyn.alpha(GAUSS1, MU0, [x], [y], h) == pytest.approx(expected, rel=1e-12, abs=1e-12)

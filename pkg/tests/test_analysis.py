import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jarzynski_ebm import analysis as an
from jarzynski_ebm.energy import GaussianMixture, IsotropicGaussian, ZOnlyMixture

LOG_2PI = math.log(2 * math.pi)


class TestQuadrature:
    def test_gaussian(self):
        assert an.quadrature_log_partition(IsotropicGaussian(1), np.array([0.0])) == pytest.approx(
            0.5 * LOG_2PI, abs=1e-8
        )

    def test_gmm_1d(self):
        m = GaussianMixture(1)
        theta = np.array([-10.0, 6.0, 0.0])
        assert an.quadrature_log_partition(m, theta) == pytest.approx(m.log_partition(theta), abs=1e-6)

    @pytest.mark.parametrize("z", [-1.0, 0.0, 2.0])
    def test_gmm_2d(self, z):
        m = GaussianMixture(2)
        theta = np.array([-2.0, 1.0, 3.0, 0.5, z])
        assert an.quadrature_log_partition(m, theta) == pytest.approx(LOG_2PI + math.log1p(math.exp(-z)), abs=1e-6)

    def test_z_only_model(self):
        m = ZOnlyMixture([-5.0], [5.0])
        theta = np.array([0.7])
        assert an.quadrature_log_partition(m, theta) == pytest.approx(m.log_partition(theta), abs=1e-6)

    def test_normalization(self):
        m = GaussianMixture(1)
        theta = np.array([-3.0, 2.0, 0.4])
        assert an.quadrature_expectation(m, theta, lambda x: np.ones(len(x))) == pytest.approx(1.0, abs=1e-12)

    def test_vector_observable(self):
        m = IsotropicGaussian(2)
        mu = np.array([0.5, -1.5])
        assert np.allclose(an.quadrature_expectation(m, mu, lambda x: x), mu, atol=1e-8)

    @pytest.mark.parametrize("z", [-2.0, -math.log(3), 0.0, 1.5])
    def test_dz_expectation_near_mode_mass(self, z):
        m = ZOnlyMixture([-5.0], [5.0])
        theta = np.array([z])
        val = an.quadrature_expectation(m, theta, lambda x: m.grad_theta(theta, x)[:, 0])
        bound = 0.0002 + 2 * math.exp(-10) * math.exp(abs(z))
        assert abs(val - math.exp(-z) / (1 + math.exp(-z))) <= bound

    def test_dimension_limit(self):
        with pytest.raises(ValueError):
            an.quadrature_log_partition(GaussianMixture(3), np.zeros(7))

    def test_explicit_grid(self):
        grid = an.GridSpec(-10, 10, 0.01)
        val = an.quadrature_log_partition(IsotropicGaussian(1), np.array([1.0]), grid)
        assert val == pytest.approx(0.5 * LOG_2PI, abs=1e-8)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            an.GridSpec(1.0, 0.0, 0.1)
        with pytest.raises(ValueError):
            an.GridSpec(0.0, 1.0, 0.0)


class TestMass:
    @given(z=st.floats(-15, 15))
    def test_roundtrip(self, z):
        assert an.log_odds_from_mass_b(float(an.mass_b(z))) == pytest.approx(z, abs=1e-6)

    def test_quarter(self):
        assert an.mass_b(-math.log(3)) == pytest.approx(0.75)

    def test_rejects_edges(self):
        with pytest.raises(ValueError):
            an.log_odds_from_mass_b(1.0)


class TestReducedOde:
    def test_pcd_constant(self):
        traj = an.reduced_ode_trajectory(an.ReducedState(0.3, "pcd", 0.5, -math.log(3)), 0.01, 100)
        assert np.all(traj == 0.3)

    def test_unweighted_linear(self):
        # q0 = 0.5 against a target mass 0.25: z(T) = 0.25 T
        state = an.ReducedState(0.0, "unweighted", 0.5, an.log_odds_from_mass_b(0.25))
        traj = an.reduced_ode_trajectory(state, 0.01, 1e4)
        assert traj[-1] == pytest.approx(0.25 * 1e4, rel=1e-12)
        assert len(traj) == 10**6 + 1

    def test_jarzynski_converges(self):
        state = an.ReducedState(0.0, "jarzynski", 0.5, -math.log(3))
        traj = an.reduced_ode_trajectory(state, 0.01, 1e4)
        assert abs(traj[-1] - an.jarzynski_fixed_point(0.5, -math.log(3))) < 1e-3

    @pytest.mark.parametrize("q0,zs", [(0.5, -math.log(3)), (0.3, 0.4), (0.8, -2.0)])
    def test_root_solve_matches_closed_form(self, q0, zs):
        state = an.ReducedState(0.0, "jarzynski", q0, zs)
        assert an.reduced_fixed_point(state) == pytest.approx(an.jarzynski_fixed_point(q0, zs), abs=1e-6)

    def test_field_sign(self):
        state = an.ReducedState(0.0, "jarzynski", 0.5, -math.log(3))
        zt = an.jarzynski_fixed_point(0.5, -math.log(3))
        assert an.reduced_field(state, zt - 1) > 0 > an.reduced_field(state, zt + 1)

    def test_no_fixed_point_without_weights(self):
        with pytest.raises(ValueError):
            an.reduced_fixed_point(an.ReducedState(0.0, "pcd", 0.5, 0.0))

    def test_state_validation(self):
        with pytest.raises(ValueError):
            an.ReducedState(0.0, "jarzynski", 1.0, 0.0)
        with pytest.raises(ValueError):
            an.ReducedState(0.0, "weighted", 0.5, 0.0)


class TestEmpirical:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            an.EmpiricalConfig(a=-2, b=2).validate()
        with pytest.raises(ValueError):
            an.EmpiricalConfig(regime="other").validate()

    def test_weights_track_log_odds(self):
        res = an.empirical_1d_dynamics(an.EmpiricalConfig("jarzynski", T=200, seed=3))
        hopped = {i for _, i in res.hops}
        keep = np.array([i not in hopped for i in range(200)])
        z_t = res.z[-1]
        near_b = keep & res.start_near_b
        near_a = keep & ~res.start_near_b
        assert near_b.any() and near_a.any()
        assert np.all(np.abs(res.log_weights[near_b] + (z_t - res.z[0])) < 0.1)
        assert np.all(np.abs(res.log_weights[near_a]) < 0.1)

    def test_unweighted_has_no_weights(self):
        res = an.empirical_1d_dynamics(an.EmpiricalConfig("unweighted", T=20))
        assert np.all(res.log_weights == 0)

    def test_pcd_starts_at_data(self):
        res = an.empirical_1d_dynamics(an.EmpiricalConfig("pcd", T=1))
        assert res.q0_hat == res.q_star_hat

    def test_reproducible(self):
        cfg = an.EmpiricalConfig("jarzynski", T=30, seed=9)
        r1, r2 = an.empirical_1d_dynamics(cfg), an.empirical_1d_dynamics(cfg)
        assert np.array_equal(r1.z, r2.z) and np.array_equal(r1.positions, r2.positions)

    def test_record_grid(self):
        res = an.empirical_1d_dynamics(an.EmpiricalConfig("pcd", T=10, record_every=50))
        assert np.allclose(res.t, np.arange(0, 10.01, 0.5))
        assert np.allclose(res.q, an.mass_b(res.z))


class TestClassify:
    def test_collapse(self):
        assert an.classify_mass_path([0.5, 0.3, 0.01, 0.2], 0.75) == "collapse"

    def test_settle(self):
        assert an.classify_mass_path([0.5, 0.6, 0.74], 0.75) == "settle"

    def test_freeze(self):
        assert an.classify_mass_path([0.5, 0.5, 0.51], 0.75) == "freeze"

    def test_other(self):
        assert an.classify_mass_path([0.5, 0.68], 0.75) == "other"

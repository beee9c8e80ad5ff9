import numpy as np
import pytest

import stepanneal as sa


@pytest.fixture
def x():
    return np.random.default_rng(0).standard_normal((4, 3, 4))


class TestDiffusionConversions:
    @pytest.mark.parametrize("alpha_bar", [0.05, 0.5, 0.95])
    def test_round_trip(self, x, alpha_bar):
        back = sa.score_from_eps(sa.eps_from_score(x, alpha_bar), alpha_bar)
        np.testing.assert_allclose(back, x, atol=1e-10)

    def test_matches_oracle_outputs(self, aniso_cond, oracle, x):
        for a in (0.2, 0.8):
            eps = oracle.epsilon(x, a, aniso_cond)
            score = oracle.score(x, a, aniso_cond)
            np.testing.assert_allclose(sa.eps_from_score(score, a), eps, atol=1e-12)

    def test_score_from_eps_at_unit_signal(self, x):
        with pytest.raises(ValueError, match="alpha_bar"):
            sa.score_from_eps(x, 1.0)


class TestFlowConversions:
    @pytest.mark.parametrize("t", [0.05, 0.4, 0.9])
    def test_velocity_score_round_trip(self, x, t):
        score = np.random.default_rng(1).standard_normal(x.shape)
        v = sa.velocity_from_flow_score(score, x, t)
        back = sa.flow_score_from_velocity(v, x, t)
        np.testing.assert_allclose(back, score, atol=1e-10)

    @pytest.mark.parametrize("t", [0.1, 0.5, 0.95])
    def test_velocity_eps_round_trip(self, x, t):
        v = np.random.default_rng(2).standard_normal(x.shape)
        eps = sa.eps_from_velocity(v, x, t)
        np.testing.assert_allclose(sa.velocity_from_eps(eps, x, t), v, atol=1e-10)

    @pytest.mark.parametrize("t", [0.1, 0.6])
    def test_conversions_match_exact_posteriors(self, aniso_cond, oracle, x, t):
        v = oracle.velocity(x, t, aniso_cond)
        score = oracle.flow_score(x, t, aniso_cond)
        np.testing.assert_allclose(
            sa.velocity_from_flow_score(score, x, t), v, atol=1e-9)

    def test_singular_times_raise(self, x):
        with pytest.raises(ValueError, match="t"):
            sa.velocity_from_flow_score(x, x, 1.0)
        with pytest.raises(ValueError, match="t"):
            sa.flow_score_from_velocity(x, x, 0.0)


class TestExactDenoiser:
    def test_native_parameterization(self, oracle):
        assert oracle.native_parameterization == "score"

    def test_combined_flow_call(self, aniso_cond, oracle, x):
        v, score = oracle.velocity_and_flow_score(x, 0.4, aniso_cond)
        np.testing.assert_allclose(v, oracle.velocity(x, 0.4, aniso_cond), atol=1e-9)
        np.testing.assert_allclose(
            score, oracle.flow_score(x, 0.4, aniso_cond), atol=1e-12)

    def test_combined_flow_call_at_endpoints(self, aniso_cond, oracle, x):
        for t in (0.0, 1.0):
            v, score = oracle.velocity_and_flow_score(x, t, aniso_cond)
            np.testing.assert_allclose(v, oracle.velocity(x, t, aniso_cond))

    def test_x0_posterior_mean(self, aniso_cond, oracle, x):
        # E[x0|x] and E[eps|x] recombine to the state itself.
        for a in (0.3, 0.9):
            x0 = oracle.x0(x, a, aniso_cond)
            eps = oracle.epsilon(x, a, aniso_cond)
            np.testing.assert_allclose(
                np.sqrt(a) * x0 + np.sqrt(1 - a) * eps, x, atol=1e-10)


class TestBiasedDenoiser:
    def test_bias_breaks_gradient_identity(self, aniso_cond):
        biased = sa.BiasedDenoiser(0.5)
        exact = sa.ExactDenoiser()
        x = np.random.default_rng(3).standard_normal((3, 4))
        good = exact.score(x, 0.5, aniso_cond)
        bad = biased.score(x, 0.5, aniso_cond)
        assert np.max(np.abs(bad - good)) > 0.4

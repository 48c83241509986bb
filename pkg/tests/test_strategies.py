import numpy as np
import pytest

from conftest import quadratic_network
from diffpareto.costs import FinanceCost, QuadraticCost, total_gradient
from diffpareto.operators import GradientDescentSpec, diffuse
from diffpareto.strategies import (
    LearningCurve,
    StrategyConfig,
    atc_step,
    centralized_step,
    consensus_step,
    cta_step,
    general_diffusion_step,
    noise_free_map,
    run_monte_carlo,
    solve_reference_optimum,
    strategy_step,
)

A2 = np.array([[0.75, 0.25], [0.25, 0.75]])


def two_node():
    return [QuadraticCost(np.eye(1), [1.0]), QuadraticCost(2 * np.eye(1), [-1.0])]


class TestConfig:
    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            StrategyConfig.atc(A2, 0.1, horizon=0)
        with pytest.raises(ValueError):
            StrategyConfig.atc(A2, -0.1)
        with pytest.raises(ValueError):
            StrategyConfig("gossip", np.ones(2), A2, A2, A2)

    def test_variant_guard(self):
        cfg = StrategyConfig.cta(A2, 0.1)
        with pytest.raises(ValueError):
            atc_step(np.zeros((2, 1)), two_node(), cfg, None)


class TestSpecialization:
    @pytest.mark.parametrize("variant", ["atc", "cta"])
    def test_matches_general(self, finance, variant):
        exp = finance
        cfg = getattr(StrategyConfig, variant)(exp.a, 0.05)
        gen = StrategyConfig.general(cfg.a1, cfg.c, cfg.a2, 0.05)
        w = np.random.default_rng(1).uniform(0, 1, (exp.config.n_nodes, 5))
        step = atc_step if variant == "atc" else cta_step
        x = step(w, exp.costs, cfg, np.random.default_rng(7))
        y = general_diffusion_step(w, exp.costs, gen, np.random.default_rng(7))
        assert np.max(np.abs(x - y)) <= 1e-15

    def test_identity_combination_is_local_sgd(self, rng):
        costs = quadratic_network(4, 3, rng, noise_std=0.3)
        w = rng.standard_normal((4, 3))
        outs = [strategy_step(w, costs, getattr(StrategyConfig, v)(np.eye(4), 0.1), np.random.default_rng(3))
                for v in ("atc", "cta", "consensus")]
        np.testing.assert_array_equal(outs[0], outs[1])
        np.testing.assert_array_equal(outs[1], outs[2])

    def test_single_node_is_sgd(self):
        cost = QuadraticCost.isotropic(2.0, [1.0, -1.0], noise_std=0.5)
        cfg = StrategyConfig.general(np.eye(1), np.eye(1), np.eye(1), 0.1)
        w = np.array([[0.0, 0.0]])
        z = np.random.default_rng(9).standard_normal(2)
        out = general_diffusion_step(w, [cost], cfg, np.random.default_rng(9))
        np.testing.assert_allclose(out[0], w[0] - 0.1 * (cost.gradient(w[0]) + 0.5 * z), rtol=1e-15)

    def test_noise_off_matches_operator(self, rng):
        costs = quadratic_network(3, 2, rng)
        a = np.array([[0.5, 0.3, 0.2], [0.3, 0.4, 0.3], [0.2, 0.3, 0.5]])
        c = np.array([[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]])
        mu = np.array([0.1, 0.2, 0.15])
        cfg = StrategyConfig("general", mu, a, c, a.T)
        w = rng.standard_normal((3, 2))
        spec = GradientDescentSpec(costs, c, mu)
        np.testing.assert_allclose(strategy_step(w, costs, cfg, None), diffuse(a, spec, a.T, w), rtol=1e-14)
        np.testing.assert_array_equal(noise_free_map(costs, cfg)(w), strategy_step(w, costs, cfg, None))

    def test_deterministic(self, finance):
        cfg = StrategyConfig.atc(finance.a, 0.01)
        w = np.zeros((10, 5))
        a = strategy_step(w, finance.costs, cfg, np.random.default_rng(5))
        b = strategy_step(w, finance.costs, cfg, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)


class TestConsensus:
    def test_hand_step(self):
        w = np.array([[1.0], [3.0]])
        out = consensus_step(w, two_node(), StrategyConfig.consensus(A2, 0.1), None)
        # combination gives (1.5, 2.5); gradients at the old iterates are (0, 7)
        np.testing.assert_allclose(out.ravel(), [1.5, 1.8], rtol=1e-15)
        out = cta_step(w, two_node(), StrategyConfig.cta(A2, 0.1), None)
        # gradients at the combined values are (0.5, 6)
        np.testing.assert_allclose(out.ravel(), [1.45, 1.9], rtol=1e-15)

    def test_differs_from_cta_with_same_seed(self, finance):
        w = np.random.default_rng(2).uniform(0, 1, (10, 5))
        x = consensus_step(w, finance.costs, StrategyConfig.consensus(finance.a, 0.01), np.random.default_rng(0))
        y = cta_step(w, finance.costs, StrategyConfig.cta(finance.a, 0.01), np.random.default_rng(0))
        assert np.max(np.abs(x - y)) > 1e-6


class TestCentralized:
    def test_single_node_is_sgd(self):
        cost = QuadraticCost.isotropic(1.0, [2.0])
        np.testing.assert_allclose(centralized_step(np.array([0.0]), [cost], 0.5, None), [1.0])

    def test_identical_costs_match_single_node(self):
        cost = QuadraticCost.isotropic(1.5, [1.0, 2.0], noise_std=0.0)
        w = np.array([0.3, -0.4])
        np.testing.assert_allclose(centralized_step(w, [cost] * 6, 0.2, None),
                                   centralized_step(w, [cost], 0.2, None), rtol=1e-15)

    def test_converges_to_minimizer(self, rng):
        costs = quadratic_network(5, 3, rng)
        w_o = solve_reference_optimum(costs)
        w = np.zeros(3)
        for _ in range(2000):
            w = centralized_step(w, costs, 0.5, None)
        np.testing.assert_allclose(w, w_o, atol=1e-12)


class TestMonteCarlo:
    def test_noise_free_convergence(self, rng):
        costs = quadratic_network(4, 2, rng, common=True)
        a = np.full((4, 4), 0.25)
        w_o = solve_reference_optimum(costs)
        curve = run_monte_carlo(costs, StrategyConfig.atc(a, 0.3, horizon=400, runs=2), w_o)
        net = curve.mse_network
        assert net[-1] < 1e-10 * net[0]
        assert np.all(np.diff(net[50:]) <= 1e-15 * net[0])

    def test_shapes_and_determinism(self, finance):
        cfg = StrategyConfig.cta(finance.a, 0.01, horizon=30, runs=3, seed=4)
        a = run_monte_carlo(finance.costs, cfg, finance.w_o)
        b = run_monte_carlo(finance.costs, cfg, finance.w_o)
        assert a.mse_nodes.shape == (30, 10) and np.all(a.mse_nodes >= 0)
        np.testing.assert_array_equal(a.mse_nodes, b.mse_nodes)
        c = run_monte_carlo(finance.costs, cfg.with_(seed=5), finance.w_o)
        assert not np.array_equal(a.mse_nodes, c.mse_nodes)

    def test_runs_are_independent_of_batch(self, finance):
        cfg = StrategyConfig.atc(finance.a, 0.01, horizon=20, runs=4)
        four = run_monte_carlo(finance.costs, cfg, finance.w_o)
        one = run_monte_carlo(finance.costs, cfg.with_(runs=1), finance.w_o)
        assert four.run_steady_state[0] == pytest.approx(one.run_steady_state[0], rel=1e-14)

    def test_centralized_curve(self, finance):
        cfg = StrategyConfig.centralized(10, 0.01, horizon=10, runs=2)
        curve = run_monte_carlo(finance.costs, cfg, finance.w_o)
        assert curve.mse_nodes.shape == (10, 10)
        assert np.ptp(curve.mse_nodes, axis=1).max() == 0.0

    def test_csv_round_trip(self, finance):
        cfg = StrategyConfig.atc(finance.a, 0.01, horizon=15, runs=2)
        curve = run_monte_carlo(finance.costs, cfg, finance.w_o)
        parsed = LearningCurve.read_csv(curve.to_csv("config_hash: abc\nvariant: atc"))
        np.testing.assert_array_equal(parsed["mse_network"], curve.mse_network)
        np.testing.assert_array_equal(parsed["mse_node_3"], curve.mse_nodes[:, 3])
        np.testing.assert_array_equal(parsed["iteration"], np.arange(15))

    def test_steady_state_window(self):
        curve = LearningCurve("atc", np.zeros(1), np.arange(1.0, 11.0)[:, None], runs=1, window=0.2)
        assert curve.steady_state() == pytest.approx(9.5)

    def test_doubling_runs_halves_variance(self, rng):
        costs = quadratic_network(3, 2, rng, noise_std=0.5)
        a = np.full((3, 3), 1 / 3)
        cfg = StrategyConfig.atc(a, 0.1, horizon=60, runs=8000, window=0.5)
        w_o = solve_reference_optimum(costs)
        per_run = run_monte_carlo(costs, cfg, w_o).run_steady_state
        small = per_run.reshape(-1, 10).mean(axis=1)
        large = per_run.reshape(-1, 20).mean(axis=1)
        assert 1.6 < small.var(ddof=1) / large.var(ddof=1) < 2.5


class TestReferenceOptimum:
    def test_mean_of_centers(self, rng):
        centers = rng.standard_normal((6, 4))
        costs = [QuadraticCost.isotropic(1.0, m) for m in centers]
        np.testing.assert_allclose(solve_reference_optimum(costs), centers.mean(axis=0), atol=1e-14)

    def test_single_cost(self):
        cost = QuadraticCost(np.array([[2.0, 0.5], [0.5, 1.0]]), [1.0, 1.0])
        np.testing.assert_allclose(solve_reference_optimum([cost]), cost.minimizer(), rtol=1e-14)

    def test_newton_path_on_quadratic_wrapped(self, rng):
        # a barrier-free finance family exercises the Newton branch
        costs = [FinanceCost("S", 3, None, ridge=0.0), FinanceCost("U", 3, None, ridge=0.5, noisy=False)]
        w = solve_reference_optimum(costs)
        assert np.linalg.norm(total_gradient(costs, w)) < 1e-10

    def test_finance_feasible(self, finance):
        w_o = finance.w_o
        assert np.all(w_o >= -1e-8) and w_o.sum() <= 5.0 + 0.1
        assert np.linalg.norm(total_gradient(finance.costs, w_o)) < 1e-10

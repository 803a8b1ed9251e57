import numpy as np
import pytest

from core import ConfigError, CyclicProblem, DenseProblem, StabilityError, expand, expand_plan
from datagen import gen_image_problem, gen_synthetic
from sinkhorn import (
    ScalingState,
    build_cyclic_kernel,
    build_gibbs_kernel,
    cyclic_sinkhorn,
    sinkhorn,
    sinkhorn_scaling,
    two_stage_sinkhorn,
)


def bounded_cyclic(seed, m=4, n=3, spread=4.0):
    rng = np.random.default_rng(seed)
    alpha = rng.random(m) + 0.1
    beta = rng.random(m) + 0.1
    return CyclicProblem(
        alpha=alpha / (n * alpha.sum()),
        beta=beta / (n * beta.sum()),
        cost_blocks=spread * rng.random((n, m, m)),
    )


def bounded_dense(seed, d=6, spread=4.0):
    rng = np.random.default_rng(seed)
    a = rng.random(d) + 0.1
    b = rng.random(d) + 0.1
    return DenseProblem(a=a / a.sum(), b=b / b.sum(), cost=spread * rng.random((d, d)))


class TestKernels:
    def test_cyclic_kernel_example(self):
        half = np.array([0.5])
        problem = CyclicProblem(alpha=half, beta=half, cost_blocks=[[[0.0]], [[1.0]]])
        kernel = build_cyclic_kernel(problem, 1.0)
        assert kernel.K[0, 0] == pytest.approx(1.0 + np.exp(-1.0))

    @pytest.mark.parametrize('seed', range(5))
    def test_cyclic_kernel_is_dense_block_row_sum(self, seed):
        problem = bounded_cyclic(seed)
        n, m = problem.order, problem.block_size
        dense_K = build_gibbs_kernel(expand(problem).cost, 0.7).K
        cyclic_K = build_cyclic_kernel(problem, 0.7).K
        np.testing.assert_allclose(dense_K[:m].reshape(m, n, m).sum(axis=1), cyclic_K, atol=1e-14)
        assert np.all(cyclic_K > 0) and np.all(cyclic_K <= n)

    def test_log_kernel_matches(self):
        problem = bounded_cyclic(1)
        kernel = build_cyclic_kernel(problem, 0.5, log_domain=True)
        np.testing.assert_allclose(np.exp(kernel.log_K), kernel.K, rtol=1e-13)

    def test_underflowing_kernel(self):
        dense = bounded_dense(0, spread=10.0)
        with pytest.raises(StabilityError):
            build_gibbs_kernel(dense.cost + 1e4, 1.0)

    def test_lambda_must_be_positive(self):
        with pytest.raises(ConfigError):
            build_gibbs_kernel(np.zeros((2, 2)), 0.0)
        with pytest.raises(ConfigError):
            cyclic_sinkhorn(bounded_cyclic(0), lam=-1.0)


class TestDenseSinkhorn:
    def test_uniform_zero_cost_converges_immediately(self):
        d = 4
        uniform = np.full(d, 1.0 / d)
        plan, report = sinkhorn(DenseProblem(a=uniform, b=uniform, cost=np.zeros((d, d))), lam=1.0)
        assert report.iterations == 1 and report.converged
        np.testing.assert_allclose(plan, np.full((d, d), 1.0 / d ** 2), rtol=1e-14)

    def test_zero_cost_gives_product_plan(self):
        dense = bounded_dense(3)
        plan, report = sinkhorn(DenseProblem(a=dense.a, b=dense.b, cost=np.zeros((6, 6))), lam=1.0,
                                check_every=1)
        assert report.converged
        np.testing.assert_allclose(plan, np.outer(dense.a, dense.b), atol=1e-15)

    @pytest.mark.parametrize('c', [0.5, 1.0, 3.0])
    def test_two_point_diagonal_mass(self, c):
        half = np.array([0.5, 0.5])
        lam = 0.8
        plan, _ = sinkhorn(DenseProblem(a=half, b=half, cost=[[0.0, c], [c, 0.0]]), lam=lam, tol=1e-14)
        assert plan[0, 0] == pytest.approx(0.5 / (1.0 + np.exp(-c / lam)), rel=1e-12)

    @pytest.mark.parametrize('seed', range(5))
    def test_rows_are_exact_at_convergence(self, seed):
        dense = bounded_dense(seed)
        plan, report = sinkhorn(dense, lam=0.5, tol=1e-10)
        assert report.converged
        assert np.max(np.abs(plan.sum(axis=1) - dense.a)) <= 1e-12
        assert report.marginal_error <= 1e-9

    def test_warm_start_converges_in_one_iteration(self):
        dense = bounded_dense(7)
        kernel = build_gibbs_kernel(dense.cost, 0.5)
        cold = sinkhorn_scaling(kernel, dense.a, dense.b, tol=1e-11, check_every=1)
        warm = sinkhorn_scaling(kernel, dense.a, dense.b, tol=1e-11, check_every=1, init=cold.state)
        assert cold.iterations > 1
        assert warm.iterations == 1 and warm.converged

    def test_scaling_gauge_does_not_change_plan(self):
        dense = bounded_dense(8)
        ones = np.ones(6)
        plan, _ = sinkhorn(dense, lam=0.5, tol=1e-11, init=ScalingState(ones, ones))
        scaled, _ = sinkhorn(dense, lam=0.5, tol=1e-11, init=ScalingState(ones, 7.0 * ones))
        np.testing.assert_allclose(scaled, plan, rtol=1e-9, atol=1e-14)

    def test_log_domain_matches(self):
        dense = bounded_dense(9)
        plan, _ = sinkhorn(dense, lam=0.3, tol=1e-12)
        log_plan, report = sinkhorn(dense, lam=0.3, tol=1e-12, log_domain=True)
        assert report.extras['log_domain'] is True
        np.testing.assert_allclose(log_plan, plan, atol=1e-10)

    def test_log_domain_survives_small_lambda(self):
        dense = bounded_dense(10)
        with pytest.raises(StabilityError):
            sinkhorn(dense, lam=0.004)
        plan, _ = sinkhorn(dense, lam=0.004, max_iters=50, log_domain=True)
        assert np.all(np.isfinite(plan))
        np.testing.assert_allclose(plan.sum(axis=1), dense.a, atol=1e-12)

    def test_tiny_kernel_products_raise(self):
        half = np.array([0.5, 0.5])
        cost = np.array([[700.0, 700.0], [0.0, 0.0]])
        with pytest.raises(StabilityError):
            sinkhorn(DenseProblem(a=half, b=half, cost=cost), lam=1.0)

    def test_zero_marginals_stay_zero(self):
        a = np.array([0.5, 0.0, 0.5])
        b = np.array([0.0, 0.6, 0.4])
        plan, report = sinkhorn(DenseProblem(a=a, b=b, cost=np.arange(9.0).reshape(3, 3) / 9), lam=0.5)
        assert report.converged
        assert not plan[1].any() and not plan[:, 0].any()

    def test_deterministic_mode(self):
        dense = bounded_dense(11)
        first, _ = sinkhorn(dense, lam=0.5, deterministic=True)
        second, _ = sinkhorn(dense, lam=0.5, deterministic=True)
        default, _ = sinkhorn(dense, lam=0.5, deterministic=False)
        np.testing.assert_array_equal(first, second)
        np.testing.assert_allclose(first, default, rtol=1e-9)

    def test_check_interval_only_delays_stopping(self):
        dense = bounded_dense(12)
        _, every = sinkhorn(dense, lam=0.5, check_every=1)
        _, sparse = sinkhorn(dense, lam=0.5, check_every=10)
        assert every.iterations <= sparse.iterations
        assert (sparse.iterations - 1) % 10 == 0

    def test_invalid_settings(self):
        with pytest.raises(ConfigError):
            sinkhorn(bounded_dense(0), lam=0.5, tol=0.0)
        with pytest.raises(ConfigError):
            sinkhorn(bounded_dense(0), lam=0.5, check_every=0)


class TestCyclicSinkhorn:
    def test_single_entry_blocks_closed_form(self):
        n = 3
        costs = np.array([0.5, 1.0, 2.0])
        lam = 0.7
        third = np.array([1.0 / n])
        problem = CyclicProblem(alpha=third, beta=third, cost_blocks=costs.reshape(n, 1, 1))
        plan, report = cyclic_sinkhorn(problem, lam=lam)
        weights = np.exp(-costs / lam)
        np.testing.assert_allclose(plan.blocks.ravel(), weights / (n * weights.sum()), rtol=1e-13)
        assert report.iterations == 1
        assert report.small_objective == pytest.approx(np.sum(costs * weights) / (n * weights.sum()))

    @pytest.mark.parametrize('seed', range(6))
    def test_matches_dense_sinkhorn(self, seed):
        problem = bounded_cyclic(seed, m=3, n=seed % 3 + 2)
        lam = 0.5
        plan, report = cyclic_sinkhorn(problem, lam=lam, tol=1e-12)
        dense_plan, dense_report = sinkhorn(expand(problem), lam=lam, tol=1e-12)
        assert report.objective == pytest.approx(dense_report.objective, rel=1e-6)
        np.testing.assert_allclose(expand_plan(plan.blocks), dense_plan, atol=1e-9)

    def test_reported_errors_are_dense_scale(self):
        problem = bounded_cyclic(4, n=4)
        plan, report = cyclic_sinkhorn(problem, lam=0.5, tol=1e-3, check_every=1)
        dense = expand(problem)
        expected = np.linalg.norm(plan.dense.sum(axis=0) - dense.b)
        assert report.marginal_error == pytest.approx(expected, rel=1e-9)

    def test_log_domain_matches(self):
        problem = bounded_cyclic(5)
        plan, _ = cyclic_sinkhorn(problem, lam=0.3, tol=1e-12)
        log_plan, _ = cyclic_sinkhorn(problem, lam=0.3, tol=1e-12, log_domain=True)
        np.testing.assert_allclose(log_plan.blocks, plan.blocks, atol=1e-10)

    def test_order_one_is_plain_sinkhorn(self):
        problem = bounded_cyclic(6, n=1)
        plan, _ = cyclic_sinkhorn(problem, lam=0.5, tol=1e-12)
        dense_plan, _ = sinkhorn(expand(problem), lam=0.5, tol=1e-12)
        np.testing.assert_allclose(plan.blocks[0], dense_plan, atol=1e-14)


class TestTwoStage:
    def test_exactly_symmetric_input(self):
        problem = bounded_cyclic(0, m=3, n=4)
        dense = expand(problem)
        plan, report = two_stage_sinkhorn(dense, 4, lam=0.5, stage1_tol=1e-12, stage2_tol=1e-9)
        assert report.converged
        assert report.extras['stage2_iterations'] == 1
        cyclic_plan, _ = cyclic_sinkhorn(problem, lam=0.5, tol=1e-12)
        np.testing.assert_allclose(plan, cyclic_plan.dense, atol=1e-10)
        assert set(report.phases) >= {'stage1', 'stage2_iterations'}

    def test_perturbed_image_problem(self):
        dense, n, exact = gen_image_problem(4, 4, 'mirror', 'euclidean', noise=0.01, seed=3)
        assert not exact and n == 2
        lam = 0.5
        plan, report = two_stage_sinkhorn(dense, n, lam=lam, stage2_tol=1e-10, check_every=1)
        cold_plan, cold = sinkhorn(dense, lam=lam, tol=1e-10, check_every=1)
        assert report.converged
        assert report.objective == pytest.approx(cold.objective, rel=1e-6)
        assert report.extras['stage2_iterations'] <= cold.iterations
        np.testing.assert_allclose(plan, cold_plan, atol=1e-8)

    def test_order_one_falls_back(self):
        dense = bounded_dense(2)
        plan, report = two_stage_sinkhorn(dense, 1, lam=0.5)
        direct, _ = sinkhorn(dense, lam=0.5)
        assert report.extras['stage1_iterations'] == 0
        assert report.algorithm == 'two-stage'
        np.testing.assert_array_equal(plan, direct)


@pytest.mark.benchmark
def test_cyclic_iteration_cost_does_not_grow_with_order():
    m = 50
    timings = []
    for n in (1, 10, 50):
        problem = gen_synthetic(m, n, seed=n)
        _, report = cyclic_sinkhorn(problem, lam=5.0, max_iters=200, tol=1e-300)
        per_iteration = report.phases['iterations'] / report.iterations
        timings.append(per_iteration)
    assert timings[-1] <= 5 * timings[0]


@pytest.mark.benchmark
def test_cyclic_iteration_cost_is_quadratic_in_block_size():
    def per_iteration(m):
        problem = gen_synthetic(m, 4, seed=m)
        runs = []
        for _ in range(3):
            _, report = cyclic_sinkhorn(problem, lam=5.0, max_iters=200, tol=1e-300)
            runs.append(report.phases['iterations'] / report.iterations)
        return min(runs)

    ratio = per_iteration(512) / per_iteration(256)
    assert 3.0 <= ratio <= 6.0

"""
Entropic OT by Sinkhorn scaling.

sinkhorn works on a dense d×d problem. cyclic_sinkhorn works on the m×m
aggregated Gibbs kernel K_ij = sum_k exp(-C_k[i][j] / lambda), so each
iteration costs O(m^2) whatever n is. two_stage_sinkhorn warm-starts the
dense iteration from a cyclic solve on folded marginals, for inputs that are
only approximately symmetric.
"""

from dataclasses import dataclass
import logging
import time

import numpy as np
from scipy.special import logsumexp

from config import Config
from core import (
    ConfigError,
    SolveReport,
    StabilityError,
    TransportPlan,
    fold_problem,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GibbsKernel:
    K: np.ndarray
    lam: float
    log_K: np.ndarray = None
    blocks: np.ndarray = None


@dataclass(frozen=True)
class ScalingState:
    """
    Scaling vectors p, q. A log-domain run also keeps log p and log q; when
    exp overflows there, p and q are left as None.
    """

    p: np.ndarray = None
    q: np.ndarray = None
    log_p: np.ndarray = None
    log_q: np.ndarray = None

    def __post_init__(self):
        if (self.p is None or self.q is None) and (self.log_p is None or self.log_q is None):
            raise ValueError("a scaling state needs p and q or their logarithms")
        for name in ('p', 'q'):
            if getattr(self, name) is None:
                continue
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise StabilityError(f"scaling vector {name} must be finite and non-negative")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_logs(cls, log_p, log_q):
        log_p = np.asarray(log_p, dtype=float)
        log_q = np.asarray(log_q, dtype=float)
        with np.errstate(over='ignore'):
            p, q = np.exp(log_p), np.exp(log_q)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            p = q = None
        return cls(p=p, q=q, log_p=log_p, log_q=log_q)

    def tile(self, n):
        """Concatenate n copies, the warm start for a dense solve."""
        def rep(x):
            return None if x is None else np.tile(x, n)
        return ScalingState(rep(self.p), rep(self.q), rep(self.log_p), rep(self.log_q))


@dataclass(frozen=True)
class ScalingRun:
    state: ScalingState
    iterations: int
    converged: bool
    error: float


def _check_lambda(lam):
    if lam is None or not lam > 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    return float(lam)


def build_gibbs_kernel(cost, lam, log_domain=False):
    """K = exp(-C / lambda) for a dense cost."""
    lam = _check_lambda(lam)
    cost = np.asarray(cost, dtype=float)
    K = np.exp(-cost / lam)
    if not log_domain and np.any(K == 0):
        raise StabilityError(f"Gibbs kernel underflows at lambda={lam:g}; "
                             f"use a larger lambda or the log domain")
    return GibbsKernel(K=K, lam=lam, log_K=-cost / lam if log_domain else None)


def build_cyclic_kernel(problem, lam, log_domain=False):
    """Aggregated kernel K_ij = sum_k exp(-C_k[i][j] / lambda); entries lie in (0, n]."""
    lam = _check_lambda(lam)
    blocks = np.exp(-problem.cost_blocks / lam)
    K = blocks.sum(axis=0)
    if not log_domain and np.any(K == 0):
        raise StabilityError(f"cyclic Gibbs kernel underflows at lambda={lam:g}; "
                             f"use a larger lambda or the log domain")
    log_K = logsumexp(-problem.cost_blocks / lam, axis=0) if log_domain else None
    return GibbsKernel(K=K, lam=lam, log_K=log_K, blocks=blocks)


def _matvec(K, x, deterministic):
    if deterministic:
        return np.einsum('ij,j->i', K, x)
    return K @ x


def _rmatvec(K, x, deterministic):
    if deterministic:
        return np.einsum('ij,i->j', K, x)
    return K.T @ x


def _balance(mass, product, floor):
    active = mass > 0
    if np.any(product[active] < floor):
        raise StabilityError(f"kernel product fell below {floor:g}; "
                             f"increase lambda or use the log domain")
    return np.divide(mass, product, out=np.zeros_like(mass), where=active)


def _scale(kernel, a, b, tol, max_iters, check_every, init, deterministic):
    K = kernel.K
    floor = Config.UNDERFLOW_FLOOR
    if init is not None and init.q is None:
        raise StabilityError("warm start overflows outside the log domain")
    q = np.ones(len(b)) if init is None else np.array(init.q, dtype=float)
    q = np.where(b > 0, q, 0.0)
    p = np.zeros(len(a))
    error = np.inf
    for it in range(max_iters):
        p = _balance(a, _matvec(K, q, deterministic), floor)
        if it % check_every == 0 or it == max_iters - 1:
            error = float(np.linalg.norm(q * _rmatvec(K, p, deterministic) - b))
            logger.debug(f"Iteration {it}: marginal error {error:.3e}")
            if error <= tol:
                return ScalingRun(ScalingState(p, q), it + 1, True, error)
        q = _balance(b, _rmatvec(K, p, deterministic), floor)
    return ScalingRun(ScalingState(p, q), max_iters, False, error)


def _log_ratio(mass, log_product):
    with np.errstate(divide='ignore'):
        return np.where(mass > 0, np.log(mass) - log_product, -np.inf)


def _scale_log(kernel, a, b, tol, max_iters, check_every, init):
    log_K = kernel.log_K
    if init is None:
        log_q = np.zeros(len(b))
    elif init.log_q is not None:
        log_q = np.array(init.log_q, dtype=float)
    else:
        with np.errstate(divide='ignore'):
            log_q = np.log(init.q)
    log_q = np.where(b > 0, log_q, -np.inf)
    log_p = np.zeros(len(a))
    error = np.inf
    for it in range(max_iters):
        log_p = _log_ratio(a, logsumexp(log_K + log_q[None, :], axis=1))
        if it % check_every == 0 or it == max_iters - 1:
            columns = np.exp(log_q + logsumexp(log_K + log_p[:, None], axis=0))
            error = float(np.linalg.norm(np.nan_to_num(columns) - b))
            logger.debug(f"Iteration {it}: marginal error {error:.3e}")
            if error <= tol:
                return ScalingRun(ScalingState.from_logs(log_p, log_q), it + 1, True, error)
        log_q = _log_ratio(b, logsumexp(log_K + log_p[:, None], axis=0))
    return ScalingRun(ScalingState.from_logs(log_p, log_q), max_iters, False, error)


def sinkhorn_scaling(kernel, a, b, tol=None, max_iters=None, check_every=None,
                     init=None, log_domain=False, deterministic=None):
    """
    Alternate p = a / (K q) and q = b / (K^T p).

    The column error ||q * (K^T p) - b|| is measured right after the
    p-update, so a converged run has exact rows.
    """
    tol = Config.SINKHORN_TOL if tol is None else tol
    max_iters = Config.SINKHORN_MAX_ITERS if max_iters is None else max_iters
    check_every = Config.SINKHORN_CHECK_EVERY if check_every is None else check_every
    deterministic = Config.DETERMINISTIC if deterministic is None else deterministic
    if tol <= 0 or max_iters < 1 or check_every < 1:
        raise ConfigError("tol must be positive, max_iters and check_every at least 1")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if log_domain:
        if kernel.log_K is None:
            raise ConfigError("log-domain scaling needs a kernel built with log_domain=True")
        return _scale_log(kernel, a, b, tol, max_iters, check_every, init)
    return _scale(kernel, a, b, tol, max_iters, check_every, init, deterministic)


def cyclic_scaling(problem, kernel, tol=None, max_iters=None, check_every=None,
                   init=None, log_domain=False, deterministic=None):
    """Scaling on the aggregated kernel; the error is measured on the block marginals."""
    return sinkhorn_scaling(kernel, problem.alpha, problem.beta, tol, max_iters,
                            check_every, init, log_domain, deterministic)


def _plan_from_state(kernel, state, log_domain):
    if log_domain and state.log_p is not None:
        return np.exp(state.log_p[:, None] + kernel.log_K + state.log_q[None, :])
    return state.p[:, None] * kernel.K * state.q[None, :]


def _block_plan(problem, kernel, state, log_domain):
    if log_domain and state.log_p is not None:
        exponent = (state.log_p[None, :, None] - problem.cost_blocks / kernel.lam
                    + state.log_q[None, None, :])
        return np.exp(exponent)
    return state.p[None, :, None] * kernel.blocks * state.q[None, None, :]


def _warn_unconverged(name, run, tol):
    if not run.converged:
        logger.warning(f"{name} stopped after {run.iterations} iterations "
                       f"with marginal error {run.error:.3e} > {tol:g}")


def sinkhorn(dense, lam=None, tol=None, max_iters=None, init=None, log_domain=False,
             deterministic=None, check_every=None):
    """Classic Sinkhorn on a dense problem. Returns the d×d plan and a report."""
    lam = Config.DEFAULT_LAMBDA if lam is None else lam
    tol = Config.SINKHORN_TOL if tol is None else tol
    start = time.perf_counter()
    kernel = build_gibbs_kernel(dense.cost, lam, log_domain)
    t_kernel = time.perf_counter()
    run = sinkhorn_scaling(kernel, dense.a, dense.b, tol, max_iters, check_every,
                           init, log_domain, deterministic)
    t_iter = time.perf_counter()
    plan = _plan_from_state(kernel, run.state, log_domain)
    t_plan = time.perf_counter()

    _warn_unconverged('Sinkhorn', run, tol)
    report = SolveReport(
        objective=float(np.sum(dense.cost * plan)),
        marginal_error=float(np.linalg.norm(plan.sum(axis=0) - dense.b)),
        row_error=float(np.linalg.norm(plan.sum(axis=1) - dense.a)),
        iterations=run.iterations,
        wall_time=t_plan - start,
        converged=run.converged,
        algorithm='sinkhorn',
        phases={'kernel': t_kernel - start, 'iterations': t_iter - t_kernel, 'plan': t_plan - t_iter},
        extras={'lambda': kernel.lam, 'log_domain': bool(log_domain)},
    )
    logger.info(f"Sinkhorn d={dense.dim} lambda={kernel.lam:g}: iterations={run.iterations} "
                f"error={report.marginal_error:.3e} time={report.wall_time:.3f}s")
    return plan, report


def cyclic_sinkhorn(problem, lam=None, tol=None, max_iters=None, init=None, log_domain=False,
                    deterministic=None, check_every=None):
    """
    Sinkhorn on the aggregated m×m kernel of an order-n cyclic problem.
    Returns the plan blocks T_k = diag(p) exp(-C_k / lambda) diag(q).
    """
    lam = Config.DEFAULT_LAMBDA if lam is None else lam
    tol = Config.SINKHORN_TOL if tol is None else tol
    start = time.perf_counter()
    kernel = build_cyclic_kernel(problem, lam, log_domain)
    t_kernel = time.perf_counter()
    run = cyclic_scaling(problem, kernel, tol, max_iters, check_every, init,
                         log_domain, deterministic)
    t_iter = time.perf_counter()
    blocks = _block_plan(problem, kernel, run.state, log_domain)
    t_plan = time.perf_counter()

    _warn_unconverged('Cyclic Sinkhorn', run, tol)
    scale = np.sqrt(problem.order)
    small = float(np.einsum('kij,kij->', problem.cost_blocks, blocks))
    report = SolveReport(
        objective=problem.order * small,
        marginal_error=float(scale * np.linalg.norm(blocks.sum(axis=(0, 1)) - problem.beta)),
        row_error=float(scale * np.linalg.norm(blocks.sum(axis=(0, 2)) - problem.alpha)),
        iterations=run.iterations,
        wall_time=t_plan - start,
        converged=run.converged,
        algorithm='csinkhorn',
        small_objective=small,
        phases={'kernel': t_kernel - start, 'iterations': t_iter - t_kernel, 'plan': t_plan - t_iter},
        extras={'lambda': kernel.lam, 'log_domain': bool(log_domain)},
    )
    logger.info(f"Cyclic Sinkhorn n={problem.order} m={problem.block_size} lambda={kernel.lam:g}: "
                f"iterations={run.iterations} error={report.marginal_error:.3e} "
                f"time={report.wall_time:.3f}s")
    return TransportPlan(blocks=blocks), report


def two_stage_sinkhorn(dense, n, lam=None, stage1_tol=None, stage2_tol=None, max_iters=None,
                       log_domain=False, deterministic=None, check_every=None):
    """
    Stage 1: cyclic Sinkhorn on the folded marginals and cost.
    Stage 2: dense Sinkhorn warm-started from the n concatenated stage-1 scalings.
    """
    lam = Config.DEFAULT_LAMBDA if lam is None else lam
    stage1_tol = Config.STAGE1_TOL if stage1_tol is None else stage1_tol
    stage2_tol = Config.SINKHORN_TOL if stage2_tol is None else stage2_tol

    if n == 1:
        plan, report = sinkhorn(dense, lam, stage2_tol, max_iters, None, log_domain,
                                deterministic, check_every)
        return plan, _two_stage_report(report, None, 0.0)

    start = time.perf_counter()
    folded = fold_problem(dense, n)
    kernel = build_cyclic_kernel(folded, lam, log_domain)
    stage1 = cyclic_scaling(folded, kernel, stage1_tol, max_iters, check_every, None,
                            log_domain, deterministic)
    stage1_time = time.perf_counter() - start
    logger.info(f"Two-stage: stage 1 took {stage1.iterations} iterations "
                f"(error {stage1.error:.3e}) in {stage1_time:.3f}s")

    plan, report = sinkhorn(dense, lam, stage2_tol, max_iters, stage1.state.tile(n),
                            log_domain, deterministic, check_every)
    return plan, _two_stage_report(report, stage1, stage1_time)


def _two_stage_report(stage2, stage1, stage1_time):
    phases = {'stage1': stage1_time}
    phases.update({f"stage2_{k}": v for k, v in stage2.phases.items()})
    extras = dict(stage2.extras)
    extras.update({
        'stage1_iterations': 0 if stage1 is None else stage1.iterations,
        'stage1_error': None if stage1 is None else stage1.error,
        'stage2_iterations': stage2.iterations,
    })
    return SolveReport(
        objective=stage2.objective,
        marginal_error=stage2.marginal_error,
        row_error=stage2.row_error,
        iterations=stage2.iterations + (0 if stage1 is None else stage1.iterations),
        wall_time=stage1_time + stage2.wall_time,
        converged=stage2.converged,
        algorithm='two-stage',
        phases=phases,
        extras=extras,
    )

"""
Strongly-convex regularized cyclic OT through its Fenchel dual.

The dual has only 2m variables w, z whatever the order n:

    D(w, z) = <w, alpha> + <z, beta> - sum_k sum_ij phi*(w_i + z_j - C_k[i][j])

Each coordinate derivative is monotone in its own variable, so alternating
minimization solves one scalar root problem per coordinate with a
safeguarded Newton iteration. The primal plan is recovered as
T_k[i][j] = (phi*)'(w_i + z_j - C_k[i][j]).
"""

from dataclasses import dataclass
from typing import Callable
import logging
import time

import numpy as np

from config import Config
from core import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    SolveReport,
    StabilityError,
    TransportPlan,
    block_marginal_errors,
    block_objective,
)

logger = logging.getLogger(__name__)

MAX_BRACKET_EXPANSIONS = 200


@dataclass(frozen=True)
class Regularizer:
    conjugate: Callable
    conjugate_derivative: Callable
    conjugate_second_derivative: Callable
    primal: Callable
    modulus: float
    tag: str


def entropic(lam):
    """phi(x) = lam * x * (log x - 1), the entropic regularizer."""
    if not lam > 0:
        raise ConfigError(f"entropic strength must be positive, got {lam}")
    lam = float(lam)

    def primal(x):
        x = np.asarray(x, dtype=float)
        safe = np.where(x > 0, x, 1.0)
        return np.where(x > 0, lam * x * (np.log(safe) - 1.0), 0.0)

    return Regularizer(
        conjugate=lambda y: lam * np.exp(np.asarray(y) / lam),
        conjugate_derivative=lambda y: np.exp(np.asarray(y) / lam),
        conjugate_second_derivative=lambda y: np.exp(np.asarray(y) / lam) / lam,
        primal=primal,
        modulus=lam,
        tag=f"entropic:{lam:g}",
    )


def squared(gamma):
    """phi(x) = x^2 / (2 gamma) on x >= 0; gives sparse plans."""
    if not gamma > 0:
        raise ConfigError(f"squared strength must be positive, got {gamma}")
    gamma = float(gamma)
    return Regularizer(
        conjugate=lambda y: 0.5 * gamma * np.maximum(np.asarray(y), 0.0) ** 2,
        conjugate_derivative=lambda y: gamma * np.maximum(np.asarray(y), 0.0),
        conjugate_second_derivative=lambda y: gamma * (np.asarray(y) > 0),
        primal=lambda x: np.asarray(x, dtype=float) ** 2 / (2.0 * gamma),
        modulus=1.0 / gamma,
        tag=f"squared:{gamma:g}",
    )


REGULARIZERS = {
    'entropic': entropic,
    'squared': squared,
}


def parse_regularizer(tag):
    """Build a regularizer from 'entropic:<lambda>' or 'squared:<gamma>'."""
    name, _, value = str(tag).partition(':')
    factory = REGULARIZERS.get(name.strip().lower())
    if factory is None:
        raise ConfigError(f"unknown regularizer {tag!r}; expected one of {sorted(REGULARIZERS)}")
    try:
        strength = float(value) if value else Config.DEFAULT_LAMBDA
    except ValueError:
        raise ConfigError(f"regularizer strength in {tag!r} is not a number")
    return factory(strength)


@dataclass(frozen=True)
class DualState:
    w: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        z = np.array(self.z, dtype=float)
        if w.ndim != 1 or z.ndim != 1:
            raise DimensionError("dual variables must be vectors")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(z))):
            raise StabilityError("dual state contains non-finite entries")
        w.flags.writeable = False
        z.flags.writeable = False
        object.__setattr__(self, 'w', w)
        object.__setattr__(self, 'z', z)

    @classmethod
    def zeros(cls, m):
        return cls(np.zeros(m), np.zeros(m))


def _check_state(state, problem):
    m = problem.block_size
    if len(state.w) != m or len(state.z) != m:
        raise DimensionError(f"dual state of size ({len(state.w)}, {len(state.z)}) for block size {m}")


def _arguments(w, z, cost_blocks):
    return w[None, :, None] + z[None, None, :] - cost_blocks


def dual_objective(state, problem, reg):
    _check_state(state, problem)
    with np.errstate(over='ignore'):
        penalty = np.sum(reg.conjugate(_arguments(state.w, state.z, problem.cost_blocks)))
    value = float(state.w @ problem.alpha + state.z @ problem.beta - penalty)
    if not np.isfinite(value):
        raise StabilityError("dual objective is not finite; the dual state has overflowed")
    return value


def partial_w(i, state, problem, reg):
    _check_state(state, problem)
    y = state.w[i] + state.z[None, :] - problem.cost_blocks[:, i, :]
    return float(problem.alpha[i] - np.sum(reg.conjugate_derivative(y)))


def partial_z(j, state, problem, reg):
    _check_state(state, problem)
    y = state.w[None, :] + state.z[j] - problem.cost_blocks[:, :, j]
    return float(problem.beta[j] - np.sum(reg.conjugate_derivative(y)))


def _solve_decreasing(residual, slope, x0, tol, max_iters):
    """
    Root of a non-increasing scalar function: bracket by doubling, then
    Newton steps with a bisection fallback.
    """
    f0 = residual(x0)
    if abs(f0) <= tol:
        return x0

    step = 1.0
    if f0 > 0:
        lo, hi = x0, x0 + step
        f_hi = residual(hi)
        expansions = 0
        while f_hi > 0:
            if abs(f_hi) <= tol:
                return hi
            lo = hi
            step *= 2.0
            hi = x0 + step
            f_hi = residual(hi)
            expansions += 1
            if expansions > MAX_BRACKET_EXPANSIONS:
                raise ConvergenceError(f"no sign change found above {x0}")
        if abs(f_hi) <= tol:
            return hi
    else:
        lo, hi = x0 - step, x0
        f_lo = residual(lo)
        expansions = 0
        while f_lo < 0:
            if abs(f_lo) <= tol:
                return lo
            hi = lo
            step *= 2.0
            lo = x0 - step
            f_lo = residual(lo)
            expansions += 1
            if expansions > MAX_BRACKET_EXPANSIONS:
                raise ConvergenceError(f"no sign change found below {x0}")
        if abs(f_lo) <= tol:
            return lo

    x = 0.5 * (lo + hi)
    for _ in range(max_iters):
        fx = residual(x)
        if abs(fx) <= tol:
            return x
        if fx > 0:
            lo = x
        else:
            hi = x
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(x)):
            return x
        d = slope(x)
        candidate = x - fx / d if d < 0 else np.nan
        if not (np.isfinite(candidate) and lo < candidate < hi):
            candidate = 0.5 * (lo + hi)
        x = candidate
    raise ConvergenceError(f"coordinate solve did not reach {tol:g} in {max_iters} iterations")


def _coordinate_solve(mass, shifted, x0, reg, tol, max_iters):
    # shifted holds z_j - C_k[i][j] (or w_i - C_k[i][j]) for the active coordinate
    def residual(x):
        with np.errstate(over='ignore'):
            return float(mass - np.sum(reg.conjugate_derivative(x + shifted)))

    def slope(x):
        with np.errstate(over='ignore', invalid='ignore'):
            return float(-np.sum(reg.conjugate_second_derivative(x + shifted)))

    return _solve_decreasing(residual, slope, float(x0), tol, max_iters)


def coordinate_solve_w(i, state, problem, reg, tol=None, max_iters=None):
    """New w_i making the i-th row residual vanish within tol."""
    tol = Config.AMIN_TOL if tol is None else tol
    max_iters = Config.NEWTON_MAX_ITERS if max_iters is None else max_iters
    if tol <= 0:
        raise ValueError("tol must be positive")
    shifted = state.z[None, :] - problem.cost_blocks[:, i, :]
    return _coordinate_solve(problem.alpha[i], shifted, state.w[i], reg, tol, max_iters)


def coordinate_solve_z(j, state, problem, reg, tol=None, max_iters=None):
    """New z_j making the j-th column residual vanish within tol."""
    tol = Config.AMIN_TOL if tol is None else tol
    max_iters = Config.NEWTON_MAX_ITERS if max_iters is None else max_iters
    if tol <= 0:
        raise ValueError("tol must be positive")
    shifted = state.w[None, :] - problem.cost_blocks[:, :, j]
    return _coordinate_solve(problem.beta[j], shifted, state.z[j], reg, tol, max_iters)


def primal_from_dual(state, problem, reg):
    _check_state(state, problem)
    with np.errstate(over='ignore'):
        blocks = reg.conjugate_derivative(_arguments(state.w, state.z, problem.cost_blocks))
    blocks = np.asarray(blocks, dtype=float)
    if not np.all(np.isfinite(blocks)):
        raise StabilityError("reconstructed plan is not finite")
    return TransportPlan(blocks=blocks)


def primal_objective(blocks, problem, reg):
    """Regularized block objective sum_k <C_k, T_k> + phi(T_k)."""
    blocks = np.asarray(blocks, dtype=float)
    return block_objective(problem, blocks) + float(np.sum(reg.primal(blocks)))


def _column_block_error(blocks, problem):
    return float(np.linalg.norm(blocks.sum(axis=(0, 1)) - problem.beta))


def alternating_minimize(problem, reg, tol=None, max_sweeps=None, init=None, inner_tol=None):
    """
    Gauss-Seidel sweeps over w then z until the reconstructed plan's column
    error drops to tol. Each w sweep leaves the rows balanced within
    inner_tol, so the column error is the remaining feasibility gap.
    """
    tol = Config.AMIN_TOL if tol is None else tol
    max_sweeps = Config.AMIN_MAX_SWEEPS if max_sweeps is None else max_sweeps
    inner_tol = min(tol, 1e-12) if inner_tol is None else inner_tol
    if tol <= 0 or inner_tol <= 0:
        raise ValueError("tolerances must be positive")

    start = time.perf_counter()
    m = problem.block_size
    state = DualState.zeros(m) if init is None else init
    _check_state(state, problem)
    w = state.w.copy()
    z = state.z.copy()

    history = [dual_objective(state, problem, reg)]
    converged = False
    sweeps = 0
    error = np.inf
    for sweeps in range(1, max_sweeps + 1):
        for i in range(m):
            w[i] = coordinate_solve_w(i, DualState(w, z), problem, reg, inner_tol)
        state = DualState(w, z)

        error = _column_block_error(primal_from_dual(state, problem, reg).blocks, problem)
        logger.debug(f"Sweep {sweeps}: column error {error:.3e}")
        if error <= tol:
            history.append(dual_objective(state, problem, reg))
            converged = True
            break

        for j in range(m):
            z[j] = coordinate_solve_z(j, DualState(w, z), problem, reg, inner_tol)
        state = DualState(w, z)
        history.append(dual_objective(state, problem, reg))

    plan = primal_from_dual(state, problem, reg)
    row_err, col_err = block_marginal_errors(problem, plan.blocks)
    primal_value = primal_objective(plan.blocks, problem, reg)
    elapsed = time.perf_counter() - start
    if not converged:
        logger.warning(f"Alternating minimization stopped after {sweeps} sweeps "
                       f"with column error {error:.3e} > {tol:g}")

    report = SolveReport(
        objective=problem.order * block_objective(problem, plan.blocks),
        marginal_error=col_err,
        row_error=row_err,
        iterations=sweeps,
        wall_time=elapsed,
        converged=converged,
        algorithm='amin',
        small_objective=block_objective(problem, plan.blocks),
        phases={'sweeps': elapsed},
        extras={
            'regularizer': reg.tag,
            'dual_objective': history[-1],
            'primal_objective': primal_value,
            'duality_gap': primal_value - history[-1],
            'dual_history': history,
        },
    )
    logger.info(f"Alternating minimization ({reg.tag}) n={problem.order} m={m}: "
                f"sweeps={sweeps} error={col_err:.3e} time={elapsed:.3f}s")
    return state, report

"""
Core types and block-circulant operators for cyclic optimal transport.

A problem with n-order cyclic symmetry has marginals made of n copies of a
length-m block and a cost matrix whose m×m blocks shift cyclically along the
block rows:

    C[i + m*r][j + m*s] = C_{(s - r) mod n}[i][j]

Every function here is pure and every type is immutable once built.
"""

from dataclasses import dataclass, field
from functools import cached_property
import logging

import numpy as np

from config import Config

logger = logging.getLogger(__name__)


class CyclicOTError(Exception):
    """Base class for every error raised by the toolkit"""


class DimensionError(CyclicOTError, ValueError):
    """Shapes do not match or the order does not divide the dimension"""


class InfeasibleError(CyclicOTError, ValueError):
    """Masses are invalid or unbalanced"""


class SymmetryError(CyclicOTError):
    """Input does not have the claimed cyclic symmetry"""

    def __init__(self, violation):
        self.violation = violation
        super().__init__(
            f"input is not {violation.order}-cyclic: {violation.kind} deviates by "
            f"{violation.magnitude:.3e} at {violation.location}"
        )


class ConvergenceError(CyclicOTError):
    """An inner solver could not reach its target"""


class StabilityError(CyclicOTError, ArithmeticError):
    """Underflow, overflow or non-finite values during an iteration"""


class ConfigError(CyclicOTError, ValueError):
    """Invalid benchmark or command-line configuration"""


def _frozen_array(values, ndim, name, dtype=float):
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise StabilityError(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


def _check_mass(vec, target, name, tol):
    if np.any(vec < 0):
        raise InfeasibleError(f"{name} has negative entries")
    total = float(vec.sum())
    if abs(total - target) > tol:
        raise InfeasibleError(f"{name} sums to {total!r}, expected {target!r}")


@dataclass(frozen=True)
class ProbabilityVector:
    entries: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.entries, 1, 'probability vector')
        _check_mass(arr, 1.0, 'probability vector', Config.MASS_TOL)
        object.__setattr__(self, 'entries', arr)

    def __len__(self):
        return len(self.entries)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True)
class DenseProblem:
    a: np.ndarray
    b: np.ndarray
    cost: np.ndarray
    # declared symmetry order, None when unknown
    order: int = None

    def __post_init__(self):
        a = ProbabilityVector(np.asarray(self.a, dtype=float)).entries
        b = ProbabilityVector(np.asarray(self.b, dtype=float)).entries
        cost = _frozen_array(self.cost, 2, 'cost')
        d = len(a)
        if len(b) != d or cost.shape != (d, d):
            raise DimensionError(
                f"inconsistent dimensions: a={len(a)}, b={len(b)}, cost={cost.shape}"
            )
        if np.any(cost < 0):
            raise InfeasibleError("cost entries must be non-negative")
        if self.order is not None:
            if int(self.order) < 1 or d % int(self.order):
                raise DimensionError(f"declared order n={self.order} does not divide d={d}")
            object.__setattr__(self, 'order', int(self.order))
        object.__setattr__(self, 'a', a)
        object.__setattr__(self, 'b', b)
        object.__setattr__(self, 'cost', cost)

    @property
    def dim(self):
        return len(self.a)


@dataclass(frozen=True)
class CyclicProblem:
    alpha: np.ndarray
    beta: np.ndarray
    cost_blocks: np.ndarray

    def __post_init__(self):
        alpha = _frozen_array(self.alpha, 1, 'alpha')
        beta = _frozen_array(self.beta, 1, 'beta')
        blocks = _frozen_array(self.cost_blocks, 3, 'cost_blocks')
        n, m1, m2 = blocks.shape
        if n < 1 or m1 < 1 or m1 != m2 or len(alpha) != m1 or len(beta) != m1:
            raise DimensionError(
                f"inconsistent dimensions: alpha={len(alpha)}, beta={len(beta)}, "
                f"cost_blocks={blocks.shape}"
            )
        _check_mass(alpha, 1.0 / n, 'alpha', Config.MASS_TOL)
        _check_mass(beta, 1.0 / n, 'beta', Config.MASS_TOL)
        if np.any(blocks < 0):
            raise InfeasibleError("cost blocks must be non-negative")
        object.__setattr__(self, 'alpha', alpha)
        object.__setattr__(self, 'beta', beta)
        object.__setattr__(self, 'cost_blocks', blocks)

    @property
    def order(self):
        return self.cost_blocks.shape[0]

    @property
    def block_size(self):
        return self.cost_blocks.shape[1]

    @property
    def dim(self):
        return self.order * self.block_size


@dataclass(frozen=True)
class TransportPlan:
    """A plan stored either as n circulant blocks or as a dense d×d matrix."""

    blocks: np.ndarray = None
    matrix: np.ndarray = None

    def __post_init__(self):
        if (self.blocks is None) == (self.matrix is None):
            raise ValueError("exactly one of blocks or matrix must be given")
        if self.blocks is not None:
            blocks = np.array(self.blocks, dtype=float, copy=True)
            if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
                raise DimensionError(f"plan blocks must have shape (n, m, m), got {blocks.shape}")
            blocks.flags.writeable = False
            object.__setattr__(self, 'blocks', blocks)
        else:
            matrix = np.array(self.matrix, dtype=float, copy=True)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise DimensionError(f"plan must be square, got {matrix.shape}")
            matrix.flags.writeable = False
            object.__setattr__(self, 'matrix', matrix)

    @property
    def is_blocked(self):
        return self.blocks is not None

    @property
    def order(self):
        return self.blocks.shape[0] if self.is_blocked else 1

    @property
    def dim(self):
        if self.is_blocked:
            return self.blocks.shape[0] * self.blocks.shape[1]
        return self.matrix.shape[0]

    @cached_property
    def dense(self):
        # O(d^2) memory, built on first access only
        if self.is_blocked:
            return expand_plan(self.blocks)
        return self.matrix

    @property
    def row_sums(self):
        if self.is_blocked:
            return np.tile(self.blocks.sum(axis=(0, 2)), self.order)
        return self.matrix.sum(axis=1)

    @property
    def column_sums(self):
        if self.is_blocked:
            return np.tile(self.blocks.sum(axis=(0, 1)), self.order)
        return self.matrix.sum(axis=0)


@dataclass(frozen=True)
class SolveReport:
    objective: float
    marginal_error: float
    iterations: int
    wall_time: float
    converged: bool
    algorithm: str
    row_error: float = 0.0
    small_objective: float = None
    phases: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.marginal_error < 0 or self.iterations < 0:
            raise ValueError("marginal_error and iterations must be non-negative")

    def to_dict(self):
        return {
            'algorithm': self.algorithm,
            'objective': float(self.objective),
            'small_objective': None if self.small_objective is None else float(self.small_objective),
            'marginal_error': float(self.marginal_error),
            'row_error': float(self.row_error),
            'iterations': int(self.iterations),
            'wall_time': float(self.wall_time),
            'converged': bool(self.converged),
            'phases': {k: float(v) for k, v in self.phases.items()},
            'extras': dict(self.extras),
        }


@dataclass(frozen=True)
class SymmetryViolation:
    order: int
    magnitude: float
    kind: str
    location: tuple
    dense_index: tuple


def divisors(n):
    """Sorted positive divisors of n."""
    if n < 1:
        raise ValueError("n must be positive")
    return [k for k in range(1, n + 1) if n % k == 0]


def _block_size(d, n):
    if n < 1 or d % n != 0:
        raise DimensionError(f"order n={n} does not divide dimension d={d}")
    return d // n


def _circulant_copies(matrix, n):
    """
    Stack the n copies of every circulant block of a d×d matrix.

    Returns an array of shape (n, n, m, m) indexed [r, k, i, j] holding
    matrix[i + m*r][j + m*((r + k) mod n)].
    """
    d = matrix.shape[0]
    m = _block_size(d, n)
    grid = matrix.reshape(n, m, n, m)
    r = np.arange(n)[:, None]
    s = (r + np.arange(n)[None, :]) % n
    return grid[r, :, s, :]


def _fold_copies(copies):
    # mean over axis 0, exact wherever all copies agree
    first = copies[0]
    same = np.all(copies == first, axis=0)
    return np.where(same, first, copies.mean(axis=0))


def _circulant_layout(blocks):
    n, m, _ = blocks.shape
    r = np.arange(n)[:, None]
    s = np.arange(n)[None, :]
    grid = blocks[(s - r) % n]  # [r, s, i, j]
    return grid.transpose(0, 2, 1, 3).reshape(n * m, n * m)


def fold_average(v, n):
    """Average of the n length-m pieces of v; the first piece if v is exactly periodic."""
    v = np.asarray(v, dtype=float)
    m = _block_size(len(v), n)
    return _fold_copies(v.reshape(n, m))


def fold_cost(cost, n):
    """Cost blocks C_0..C_{n-1} from a d×d cost by averaging each circulant diagonal."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionError(f"cost must be square, got {cost.shape}")
    return _fold_copies(_circulant_copies(cost, n))


def fold_problem(dense, n):
    """
    Nearest n-cyclic problem to a dense one: averaged marginal pieces,
    renormalized to mass 1/n, and averaged cost blocks.
    """
    alpha = fold_average(dense.a, n)
    beta = fold_average(dense.b, n)
    return CyclicProblem(
        alpha=alpha / (n * alpha.sum()),
        beta=beta / (n * beta.sum()),
        cost_blocks=fold_cost(dense.cost, n),
    )


def expand(problem):
    """Dense problem with n copies of alpha/beta and the block-circulant cost."""
    n = problem.order
    return DenseProblem(
        a=np.tile(problem.alpha, n),
        b=np.tile(problem.beta, n),
        cost=_circulant_layout(problem.cost_blocks),
        order=n,
    )


def expand_plan(blocks):
    blocks = np.asarray(blocks, dtype=float)
    if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
        raise DimensionError(f"plan blocks must share one square shape, got {blocks.shape}")
    return _circulant_layout(blocks)


def symmetrize(plan, n):
    """
    Average a dense plan over conjugation by the powers of the block shift.

    The result is block-circulant, keeps the total mass, and keeps the row
    and column sums whenever those are themselves n-periodic.
    """
    plan = np.asarray(plan, dtype=float)
    if plan.ndim != 2 or plan.shape[0] != plan.shape[1]:
        raise DimensionError(f"plan must be square, got {plan.shape}")
    return _circulant_layout(_fold_copies(_circulant_copies(plan, n)))


def _vector_violation(v, n, name):
    m = _block_size(len(v), n)
    pieces = v.reshape(n, m)
    spread = pieces.max(axis=0) - pieces.min(axis=0)
    i = int(np.argmax(spread))
    deviation = np.abs(pieces[:, i] - np.median(pieces[:, i]))
    k = int(np.argmax(deviation))
    return float(spread[i]), name, (i,), (i + m * k,)


def _cost_violation(cost, n):
    m = _block_size(cost.shape[0], n)
    copies = _circulant_copies(cost, n)
    spread = copies.max(axis=0) - copies.min(axis=0)
    k, i, j = np.unravel_index(int(np.argmax(spread)), spread.shape)
    column = copies[:, k, i, j]
    r = int(np.argmax(np.abs(column - np.median(column))))
    s = (r + k) % n
    return float(spread[k, i, j]), 'cost', (int(i), int(j), int(k)), (int(i + m * r), int(j + m * s))


def validate_cyclic(dense, n, tol=None):
    """
    Fold a dense problem into its order-n cyclic form.

    Returns a CyclicProblem when a and b are n-periodic and the cost is
    block-circulant within the entrywise tolerance, otherwise the largest
    SymmetryViolation found.
    """
    tol = Config.SYMMETRY_TOL if tol is None else tol
    if tol < 0:
        raise ValueError("tol must be non-negative")
    d = dense.dim
    _block_size(d, n)

    worst = None
    for candidate in (
        _vector_violation(dense.a, n, 'a'),
        _vector_violation(dense.b, n, 'b'),
        _cost_violation(dense.cost, n),
    ):
        if worst is None or candidate[0] > worst[0]:
            worst = candidate

    magnitude, kind, location, dense_index = worst
    if magnitude > tol:
        logger.warning(f"Symmetry check failed for n={n}: {kind} spread {magnitude:.3e} at {location}")
        return SymmetryViolation(order=n, magnitude=magnitude, kind=kind,
                                 location=location, dense_index=dense_index)

    alpha = fold_average(dense.a, n)
    beta = fold_average(dense.b, n)
    # exact for periodic input; averaged input is renormalized onto the simplex slice
    if not np.array_equal(np.tile(alpha, n), dense.a):
        alpha = alpha / (n * alpha.sum())
    if not np.array_equal(np.tile(beta, n), dense.b):
        beta = beta / (n * beta.sum())
    return CyclicProblem(alpha=alpha, beta=beta, cost_blocks=fold_cost(dense.cost, n))


def require_cyclic(dense, n, tol=None):
    """validate_cyclic that raises SymmetryError instead of returning a violation."""
    result = validate_cyclic(dense, n, tol)
    if isinstance(result, SymmetryViolation):
        raise SymmetryError(result)
    return result


def refold(problem, n):
    """Re-express an order-N cyclic problem at a divisor n of N."""
    order = problem.order
    if n < 1 or order % n != 0:
        raise DimensionError(f"n={n} does not divide the problem order {order}")
    if n == order:
        return problem
    return require_cyclic(expand(problem), n, tol=0.0)


def objective(cost, plan):
    cost = np.asarray(cost, dtype=float)
    plan = np.asarray(plan, dtype=float)
    if cost.shape != plan.shape:
        raise DimensionError(f"cost {cost.shape} and plan {plan.shape} differ in shape")
    return float(np.sum(cost * plan))


def block_objective(problem, blocks):
    blocks = np.asarray(blocks, dtype=float)
    if blocks.shape != problem.cost_blocks.shape:
        raise DimensionError(
            f"plan blocks {blocks.shape} do not match cost blocks {problem.cost_blocks.shape}"
        )
    return float(np.einsum('kij,kij->', problem.cost_blocks, blocks))


def marginal_error(plan, b):
    """Column residual ||T^T 1 - b||_2."""
    plan = np.asarray(plan, dtype=float)
    b = np.asarray(b, dtype=float)
    if plan.ndim != 2 or plan.shape[1] != len(b):
        raise DimensionError(f"plan {plan.shape} does not match marginal of length {len(b)}")
    return float(np.linalg.norm(plan.sum(axis=0) - b))


def row_error(plan, a):
    """Row residual ||T 1 - a||_2."""
    plan = np.asarray(plan, dtype=float)
    a = np.asarray(a, dtype=float)
    if plan.ndim != 2 or plan.shape[0] != len(a):
        raise DimensionError(f"plan {plan.shape} does not match marginal of length {len(a)}")
    return float(np.linalg.norm(plan.sum(axis=1) - a))


def block_marginal_errors(problem, blocks):
    """Dense-scale (row, column) residuals of a block plan, without expanding it."""
    blocks = np.asarray(blocks, dtype=float)
    scale = np.sqrt(problem.order)
    rows = blocks.sum(axis=(0, 2)) - problem.alpha
    cols = blocks.sum(axis=(0, 1)) - problem.beta
    return float(scale * np.linalg.norm(rows)), float(scale * np.linalg.norm(cols))

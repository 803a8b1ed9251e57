"""
Exact solvers for the linear optimal transport problem

    min <G, S>  s.t.  S 1 = alpha,  S^T 1 = beta,  S >= 0

solve_lot runs a primal network simplex on the complete bipartite graph with
integer masses and integer-quantized costs, so every pivot is exact.
solve_lot_oracle is an independent successive-shortest-path min-cost flow on
exact rational masses, meant for cross-checking on small instances.
"""

from dataclasses import dataclass
from fractions import Fraction
import logging
import math
import time

import numpy as np

from config import Config
from core import (
    ConvergenceError,
    DimensionError,
    InfeasibleError,
    SolveReport,
    StabilityError,
)

logger = logging.getLogger(__name__)

# masses whose exact dyadic denominator exceeds this are rounded onto this grid
MAX_EXACT_MASS_BITS = 128
MIN_BLOCK_SIZE = 10


@dataclass(frozen=True)
class FlowNetwork:
    supplies: np.ndarray
    demands: np.ndarray
    costs: np.ndarray
    flows: np.ndarray
    u: np.ndarray
    v: np.ndarray
    pivots: int


def _check_lot_inputs(alpha, beta, G):
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    G = np.asarray(G, dtype=float)
    if alpha.ndim != 1 or beta.ndim != 1 or G.shape != (len(alpha), len(beta)):
        raise DimensionError(
            f"cost shape {G.shape} does not match masses ({len(alpha)}, {len(beta)})"
        )
    if len(alpha) == 0:
        raise DimensionError("empty transport problem")
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
        raise InfeasibleError("masses must be finite")
    if not np.all(np.isfinite(G)):
        raise StabilityError("cost matrix contains non-finite entries")
    if np.any(alpha < 0) or np.any(beta < 0):
        raise InfeasibleError("masses must be non-negative")
    gap = abs(float(alpha.sum()) - float(beta.sum()))
    if gap > Config.MASS_TOL:
        raise InfeasibleError(f"supply and demand differ by {gap:.3e}")
    if np.any(G < 0):
        logger.warning("Negative arc costs passed to the LOT solver")
    return alpha, beta, G


def _balance(supplies, demands):
    # push the rounding residual onto the largest entry of the lighter side
    diff = sum(supplies) - sum(demands)
    if diff > 0:
        k = max(range(len(demands)), key=lambda j: demands[j])
        demands[k] += diff
    elif diff < 0:
        k = max(range(len(supplies)), key=lambda i: supplies[i])
        supplies[k] -= diff
    return supplies, demands


def integer_masses(alpha, beta, scale=None):
    """
    Scale masses onto a common integer grid.

    scale=0 uses the exact power-of-two common denominator of the float
    masses; a positive scale multiplies and rounds. Returns the integer
    supplies, demands and the unit that maps integers back to masses.
    """
    scale = Config.LOT_MASS_SCALE if scale is None else scale
    values = [Fraction(float(x)) for x in alpha] + [Fraction(float(x)) for x in beta]
    if scale == 0:
        unit = max(f.denominator for f in values)
        if unit > 2 ** MAX_EXACT_MASS_BITS:
            unit = 2 ** MAX_EXACT_MASS_BITS
    else:
        unit = int(scale)
    ints = [int(round(f * unit)) for f in values]
    k = len(alpha)
    supplies, demands = _balance(ints[:k], ints[k:])
    return supplies, demands, unit


def quantize_costs(G, bits=None):
    """Integer costs on a power-of-two grid covering the dynamic range of G."""
    bits = Config.LOT_COST_BITS if bits is None else bits
    gmax = float(np.max(np.abs(G))) if G.size else 0.0
    if gmax == 0.0:
        return np.zeros(G.shape, dtype=np.int64), 1.0
    _, exponent = math.frexp(gmax)
    unit = math.ldexp(1.0, bits - exponent)
    return np.rint(G * unit).astype(np.int64), unit


class _NetworkSimplex:
    """Primal network simplex with a strongly feasible spanning tree."""

    def __init__(self, supplies, demands, cost_int):
        self.n1 = len(supplies)
        self.n2 = len(demands)
        self.n_real = self.n1 * self.n2
        self.root = self.n1 + self.n2
        self.cost = cost_int.reshape(-1)
        self.art_cost = (max(self.n1, self.n2) + 1) * (int(np.max(np.abs(self.cost))) + 1)

        nodes = self.root + 1
        self.parent = [self.root] * self.root + [-1]
        self.pred = [self.n_real + v for v in range(self.root)] + [-1]
        self.up = [False] * nodes
        self.depth = [1] * self.root + [0]
        self.children = [set() for _ in range(nodes)]
        self.children[self.root] = set(range(self.root))
        self.pi = np.zeros(nodes, dtype=np.int64)
        self.flow = {}

        # artificial arcs: supply nodes with mass point to the root, everything else hangs from it
        for i, s in enumerate(supplies):
            arc = self.n_real + i
            self.flow[arc] = s
            if s > 0:
                self.up[i] = True
                self.pi[i] = -self.art_cost
            else:
                self.pi[i] = self.art_cost
        for j, t in enumerate(demands):
            node = self.n1 + j
            self.flow[self.n_real + node] = t
            self.pi[node] = self.art_cost

        self.arc_rows = np.repeat(np.arange(self.n1), self.n2)
        self.arc_cols = np.tile(np.arange(self.n2), self.n1) + self.n1
        self.block = min(self.n_real, max(int(math.sqrt(self.n_real)), MIN_BLOCK_SIZE))
        self.next_arc = 0
        self.pivots = 0

    def _find_entering(self):
        # blocks are scanned from the last entering position; inside a block the most
        # negative reduced cost wins and ties go to the lowest (i, j) index
        start = self.next_arc
        scanned = 0
        while scanned < self.n_real:
            end = min(start + self.block, self.n_real)
            rc = (self.cost[start:end]
                  + self.pi[self.arc_rows[start:end]]
                  - self.pi[self.arc_cols[start:end]])
            k = int(np.argmin(rc))
            if rc[k] < 0:
                self.next_arc = end % self.n_real
                return start + k, int(rc[k])
            scanned += end - start
            start = end % self.n_real
        return None, 0

    def _pivot(self, entering, rc):
        u, v = entering // self.n2, self.n1 + entering % self.n2
        parent, up, flow = self.parent, self.up, self.flow

        a, b = u, v
        while a != b:
            if self.depth[a] > self.depth[b]:
                a = parent[a]
            elif self.depth[b] > self.depth[a]:
                b = parent[b]
            else:
                a, b = parent[a], parent[b]
        join = a

        # last blocking arc along the cycle orientation keeps the tree strongly feasible
        delta, out_node, side = None, None, 0
        x = u
        while x != join:
            if up[x]:
                f = flow[self.pred[x]]
                if delta is None or f < delta:
                    delta, out_node, side = f, x, 1
            x = parent[x]
        x = v
        while x != join:
            if not up[x]:
                f = flow[self.pred[x]]
                if delta is None or f <= delta:
                    delta, out_node, side = f, x, 2
            x = parent[x]

        if delta:
            x = u
            while x != join:
                flow[self.pred[x]] += -delta if up[x] else delta
                x = parent[x]
            x = v
            while x != join:
                flow[self.pred[x]] += delta if up[x] else -delta
                x = parent[x]
        flow[entering] = delta
        leaving = self.pred[out_node]
        del flow[leaving]

        moved, anchor = (u, v) if side == 1 else (v, u)
        path = [moved]
        while path[-1] != out_node:
            path.append(parent[path[-1]])
        old_pred = [self.pred[x] for x in path]
        old_up = [up[x] for x in path]
        self.children[parent[out_node]].discard(out_node)
        for k in range(len(path) - 1, 0, -1):
            child, x = path[k - 1], path[k]
            self.children[x].discard(child)
            self.children[child].add(x)
            parent[x] = child
            self.pred[x] = old_pred[k - 1]
            up[x] = not old_up[k - 1]
        parent[moved] = anchor
        self.pred[moved] = entering
        up[moved] = moved == u
        self.children[anchor].add(moved)

        sigma = -rc if moved == u else rc
        stack = [moved]
        subtree = []
        self.depth[moved] = self.depth[anchor] + 1
        while stack:
            x = stack.pop()
            subtree.append(x)
            for c in self.children[x]:
                self.depth[c] = self.depth[x] + 1
                stack.append(c)
        self.pi[subtree] += sigma
        self.pivots += 1

    def run(self):
        while True:
            entering, rc = self._find_entering()
            if entering is None:
                break
            self._pivot(entering, rc)
            if self.pivots % 10000 == 0:
                logger.debug(f"Network simplex: {self.pivots} pivots")
        for node in range(self.root):
            arc = self.n_real + node
            if self.flow.get(arc, 0) > 0:
                raise InfeasibleError("artificial arc carries flow at optimality")
        return self


def network_simplex(alpha, beta, G, mass_scale=None, cost_bits=None):
    """Solve the transport LP and return flows with dual potentials."""
    alpha, beta, G = _check_lot_inputs(alpha, beta, G)
    supplies, demands, unit = integer_masses(alpha, beta, mass_scale)
    cost_int, cost_unit = quantize_costs(G, cost_bits)

    solver = _NetworkSimplex(supplies, demands, cost_int).run()

    flows = np.zeros(G.shape)
    for arc, f in solver.flow.items():
        if arc < solver.n_real and f:
            flows[arc // solver.n2, arc % solver.n2] = f / unit
    pi = solver.pi.astype(float) / cost_unit
    return FlowNetwork(
        supplies=alpha,
        demands=beta,
        costs=G,
        flows=flows,
        u=-pi[:solver.n1],
        v=pi[solver.n1:solver.root],
        pivots=solver.pivots,
    )


def solve_lot(alpha, beta, G, mass_scale=None, cost_bits=None):
    """
    Exact LOT by network simplex.

    Returns the optimal plan S, its value <G, S> and a SolveReport. S is a
    vertex of the transportation polytope.
    """
    start = time.perf_counter()
    network = network_simplex(alpha, beta, G, mass_scale, cost_bits)
    S = network.flows
    value = float(np.sum(network.costs * S))
    elapsed = time.perf_counter() - start
    report = SolveReport(
        objective=value,
        marginal_error=float(np.linalg.norm(S.sum(axis=0) - network.demands)),
        row_error=float(np.linalg.norm(S.sum(axis=1) - network.supplies)),
        iterations=network.pivots,
        wall_time=elapsed,
        converged=True,
        algorithm='lot',
        phases={'solve': elapsed},
    )
    logger.info(f"LOT {S.shape[0]}x{S.shape[1]} solved: value={value:.10g} "
                f"pivots={network.pivots} time={elapsed:.3f}s")
    return S, value, report


def _shortest_paths(G, flow_pos, origin):
    """Bellman-Ford from all origin rows over the residual bipartite graph."""
    n1, n2 = G.shape
    eps = 1e-12 * max(1.0, float(np.max(np.abs(G))))
    dist_src = np.where(origin, 0.0, np.inf)
    pred_src = np.full(n1, -1)
    rows = np.arange(n1)
    cols = np.arange(n2)
    for _ in range(n1 + n2 + 1):
        cand = dist_src[:, None] + G
        pred_dst = np.argmin(cand, axis=0)
        dist_dst = cand[pred_dst, cols]
        back = np.where(flow_pos, dist_dst[None, :] - G, np.inf)
        best_j = np.argmin(back, axis=1)
        best = back[rows, best_j]
        better = best < dist_src - eps
        if not better.any():
            return dist_dst, pred_dst, pred_src
        dist_src = np.where(better, best, dist_src)
        pred_src = np.where(better, best_j, pred_src)
    raise ConvergenceError("negative residual cycle in oracle shortest paths")


def solve_lot_oracle(alpha, beta, G):
    """
    Reference LOT value by successive shortest paths on exact rational masses.

    Independent of the network simplex; limited to small instances.
    """
    start = time.perf_counter()
    alpha, beta, G = _check_lot_inputs(alpha, beta, G)
    n1, n2 = G.shape
    if max(n1, n2) > Config.ORACLE_MAX_SIZE:
        raise DimensionError(
            f"oracle is limited to size {Config.ORACLE_MAX_SIZE}, got {n1}x{n2}"
        )

    supply, demand = _balance([Fraction(float(x)) for x in alpha],
                              [Fraction(float(x)) for x in beta])
    flow = [[Fraction(0)] * n2 for _ in range(n1)]
    flow_pos = np.zeros((n1, n2), dtype=bool)
    rs, rd = list(supply), list(demand)

    augmentations = 0
    limit = 10 * (n1 + n2) ** 2 + 10
    while any(r > 0 for r in rs):
        origin = np.array([r > 0 for r in rs])
        dist_dst, pred_dst, pred_src = _shortest_paths(G, flow_pos, origin)
        open_sinks = [j for j in range(n2) if rd[j] > 0]
        sink = min(open_sinks, key=lambda j: (dist_dst[j], j))

        forward, backward = [], []
        j = sink
        while True:
            i = int(pred_dst[j])
            forward.append((i, j))
            if pred_src[i] < 0:
                break
            j = int(pred_src[i])
            backward.append((i, j))
        push = min([rs[i], rd[sink]] + [flow[bi][bj] for bi, bj in backward])

        for fi, fj in forward:
            flow[fi][fj] += push
            flow_pos[fi, fj] = True
        for bi, bj in backward:
            flow[bi][bj] -= push
            flow_pos[bi, bj] = flow[bi][bj] > 0
        rs[i] -= push
        rd[sink] -= push

        augmentations += 1
        if augmentations > limit:
            raise ConvergenceError("oracle exceeded its augmentation limit")

    S = np.array([[float(f) for f in row] for row in flow])
    value = math.fsum(float(G[i, j]) * S[i, j] for i in range(n1) for j in range(n2) if S[i, j])
    elapsed = time.perf_counter() - start
    report = SolveReport(
        objective=value,
        marginal_error=float(np.linalg.norm(S.sum(axis=0) - beta)),
        row_error=float(np.linalg.norm(S.sum(axis=1) - alpha)),
        iterations=augmentations,
        wall_time=elapsed,
        converged=True,
        algorithm='lot-oracle',
    )
    return S, value, report

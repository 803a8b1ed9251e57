"""
Benchmark harness: generate instances, run algorithm suites, collect
objective / marginal error / wall time and summarize mean ± std per
(algorithm, n).
"""

from dataclasses import dataclass, field, replace
import csv
import json
import logging
import os

import numpy as np

from config import Config
from core import (
    ConfigError,
    CyclicOTError,
    DenseProblem,
    divisors,
    expand,
    fold_problem,
    marginal_error,
    objective,
    refold,
    require_cyclic,
    row_error,
)
from clot import solve_clot, solve_naive_blockwise
from datagen import gen_counter_example, gen_image_problem, gen_synthetic
from lot import solve_lot
from sinkhorn import cyclic_sinkhorn, sinkhorn, two_stage_sinkhorn
from srot import alternating_minimize, parse_regularizer, primal_from_dual

logger = logging.getLogger(__name__)

DEFAULT_BENCH_CONFIG = {
    'name': 'bench',
    'instances': {'generator': 'synthetic', 'params': {'m': 8, 'n': 4}, 'seeds': [0]},
    'algorithms': [],
    'repetitions': 1,
    'warmup': 0,
    'rng_spec': None,
    'deterministic': False,
    'tolerances': {'exact': 1e-6, 'entropic': 1e-5},
    'output_dir': None,
}

DIRECT_BASELINE = {
    'lot': 'lot',
    'clot': 'lot',
    'naive': 'lot',
    'sinkhorn': 'sinkhorn',
    'csinkhorn': 'sinkhorn',
    'two-stage': 'sinkhorn',
}

EXACT_FAMILY = ('lot', 'clot')
ENTROPIC_FAMILY = ('sinkhorn', 'csinkhorn', 'two-stage')


@dataclass(frozen=True)
class BenchConfig:
    name: str
    instances: dict
    algorithms: list
    repetitions: int = 1
    warmup: int = 0
    rng_spec: str = None
    deterministic: bool = False
    tolerances: dict = field(default_factory=dict)
    output_dir: str = None

    @classmethod
    def from_dict(cls, data):
        merged = dict(DEFAULT_BENCH_CONFIG)
        merged.update(data or {})
        unknown = set(merged) - set(DEFAULT_BENCH_CONFIG)
        if unknown:
            raise ConfigError(f"unknown bench config keys: {sorted(unknown)}")
        tolerances = dict(DEFAULT_BENCH_CONFIG['tolerances'])
        tolerances.update(merged['tolerances'] or {})
        merged['tolerances'] = tolerances
        config = cls(**merged)
        issues = config.validate()
        if issues:
            raise ConfigError("invalid bench config: " + "; ".join(issues))
        return config

    @classmethod
    def load(cls, path):
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read bench config {path}: {e}")
        logger.info(f"Loaded bench config from {path}")
        return cls.from_dict(data)

    def validate(self):
        issues = []
        if not self.algorithms:
            issues.append("at least one algorithm is required")
        for spec in self.algorithms:
            tag = spec.get('tag') if isinstance(spec, dict) else None
            if tag not in SOLVERS:
                issues.append(f"unknown algorithm {tag!r}")
            elif spec.get('fold') and tag not in CYCLIC_ALGORITHMS:
                issues.append(f"fold only applies to block solvers, not {tag!r}")
        generator = self.instances.get('generator')
        if generator not in GENERATORS:
            issues.append(f"unknown generator {generator!r}")
        if not self.instances.get('seeds'):
            issues.append("at least one instance seed is required")
        if self.repetitions < 1:
            issues.append("repetitions must be at least 1")
        if self.warmup < 0:
            issues.append("warmup must be non-negative")
        return issues


@dataclass(frozen=True)
class BenchInstance:
    instance_id: str
    dense: DenseProblem
    order: int
    cyclic: object = None
    exact: bool = True


@dataclass(frozen=True)
class BenchRecord:
    instance_id: str
    algorithm: str
    n: int
    report: object = None
    repetition: int = 0
    error: str = None

    @property
    def ok(self):
        return self.error is None and self.report is not None

    def to_dict(self):
        return {
            'instance_id': self.instance_id,
            'algorithm': self.algorithm,
            'n': self.n,
            'repetition': self.repetition,
            'error': self.error,
            'report': self.report.to_dict() if self.report is not None else None,
        }


def _synthetic_instance(seed, params, rng_spec):
    n = int(params.get('n', params.get('n_max', 1)))
    problem = gen_synthetic(int(params['m']), n, seed=seed, rng_spec=rng_spec)
    return BenchInstance(f"synthetic-m{problem.block_size}-n{n}-s{seed}", expand(problem), n, problem)


def _image_instance(seed, params, rng_spec):
    h = int(params['h'])
    w = int(params.get('w', h))
    symmetry = params.get('symmetry', 'mirror')
    dense, order, exact = gen_image_problem(
        h, w, symmetry, params.get('metric', 'euclidean'),
        float(params.get('noise', 0.0)), seed=seed, rng_spec=rng_spec,
    )
    cyclic = require_cyclic(dense, order) if exact else None
    return BenchInstance(f"image-{symmetry}-{h}x{w}-s{seed}", dense, order, cyclic, exact)


def _counter_instance(seed, params, rng_spec):
    problem = gen_counter_example(float(params.get('scale', 1.0)), int(params.get('m', 1)))
    return BenchInstance(f"counter-m{problem.block_size}-s{seed}", expand(problem), 2, problem)


GENERATORS = {
    'synthetic': _synthetic_instance,
    'image': _image_instance,
    'counter': _counter_instance,
}


def _cyclic_at(instance, n, symmetry_tol=None):
    if instance.cyclic is not None and n == instance.order:
        return instance.cyclic
    if instance.cyclic is not None and instance.order % n == 0:
        return refold(instance.cyclic, n)
    return require_cyclic(instance.dense, n, symmetry_tol)


def _solve_cyclic(instance, n, params, solve):
    """
    Run a block solver at order n. With params['fold'] the instance is folded
    to its nearest n-cyclic problem first, and the expanded plan is scored
    against the original dense marginals and cost.
    """
    if not params.get('fold', False):
        return solve(_cyclic_at(instance, n, params.get('symmetry_tol')))[1]
    plan, report = solve(fold_problem(instance.dense, n))
    dense_plan = plan.dense
    extras = dict(report.extras)
    extras.update({
        'folded': True,
        'folded_objective': report.objective,
        'folded_marginal_error': report.marginal_error,
    })
    return replace(
        report,
        objective=objective(instance.dense.cost, dense_plan),
        marginal_error=marginal_error(dense_plan, instance.dense.b),
        row_error=row_error(dense_plan, instance.dense.a),
        extras=extras,
    )


def _run_lot(instance, n, params, deterministic):
    _, _, report = solve_lot(instance.dense.a, instance.dense.b, instance.dense.cost)
    return report


def _run_clot(instance, n, params, deterministic):
    return _solve_cyclic(instance, n, params, solve_clot)


def _run_naive(instance, n, params, deterministic):
    return _solve_cyclic(instance, n, params, solve_naive_blockwise)


def _run_amin(instance, n, params, deterministic):
    reg = parse_regularizer(params.get('regularizer', f"entropic:{params.get('lambda', Config.DEFAULT_LAMBDA)}"))

    def solve(cyclic):
        state, report = alternating_minimize(cyclic, reg, params.get('tol'), params.get('max_sweeps'))
        return primal_from_dual(state, cyclic, reg), report

    return _solve_cyclic(instance, n, params, solve)


def _run_sinkhorn(instance, n, params, deterministic):
    return sinkhorn(instance.dense, params.get('lambda'), params.get('tol'), params.get('max_iters'),
                    log_domain=params.get('log_domain', False), deterministic=deterministic)[1]


def _run_csinkhorn(instance, n, params, deterministic):
    def solve(cyclic):
        return cyclic_sinkhorn(cyclic, params.get('lambda'), params.get('tol'), params.get('max_iters'),
                               log_domain=params.get('log_domain', False), deterministic=deterministic)

    return _solve_cyclic(instance, n, params, solve)


def _run_two_stage(instance, n, params, deterministic):
    return two_stage_sinkhorn(instance.dense, n, params.get('lambda'), params.get('stage1_tol'),
                              params.get('tol'), params.get('max_iters'),
                              log_domain=params.get('log_domain', False),
                              deterministic=deterministic)[1]


SOLVERS = {
    'lot': _run_lot,
    'clot': _run_clot,
    'naive': _run_naive,
    'amin': _run_amin,
    'sinkhorn': _run_sinkhorn,
    'csinkhorn': _run_csinkhorn,
    'two-stage': _run_two_stage,
}

DIRECT_ALGORITHMS = ('lot', 'sinkhorn')
CYCLIC_ALGORITHMS = ('clot', 'naive', 'amin', 'csinkhorn')


def _orders(spec, instance):
    if spec['tag'] in DIRECT_ALGORITHMS:
        return [1]
    orders = spec.get('orders')
    if orders == 'divisors':
        return divisors(instance.order)
    return list(orders) if orders else [instance.order]


def run_one(instance, tag, n, params=None, deterministic=False, repetition=0):
    """One timed solve; failures become records with the error message."""
    params = params or {}
    try:
        report = SOLVERS[tag](instance, n, params, deterministic)
        logger.info(f"{instance.instance_id} {tag} n={n}: objective={report.objective:.10g} "
                    f"error={report.marginal_error:.3e} time={report.wall_time:.3f}s")
        return BenchRecord(instance.instance_id, tag, n, report, repetition)
    except (CyclicOTError, ValueError, ArithmeticError) as e:
        logger.exception(f"{instance.instance_id} {tag} n={n} failed: {e}")
        return BenchRecord(instance.instance_id, tag, n, None, repetition, str(e))


def generate_instances(config):
    generator = GENERATORS[config.instances['generator']]
    params = config.instances.get('params', {})
    return [generator(int(seed), params, config.rng_spec) for seed in config.instances['seeds']]


def run_suite(config):
    """
    Run every algorithm at every requested order on every instance.
    Returns the records and the summary rows.
    """
    instances = generate_instances(config)
    logger.info(f"Bench '{config.name}': {len(instances)} instances, "
                f"{len(config.algorithms)} algorithms, {config.repetitions} repetitions")

    if config.warmup and instances:
        for spec in config.algorithms:
            for n in _orders(spec, instances[0]):
                for _ in range(config.warmup):
                    run_one(instances[0], spec['tag'], n, spec, config.deterministic)

    records = []
    for instance in instances:
        for spec in config.algorithms:
            for n in _orders(spec, instance):
                for rep in range(config.repetitions):
                    records.append(run_one(instance, spec['tag'], n, spec, config.deterministic, rep))

    return records, summarize(records)


def divisor_sweep(problem, algorithm='clot', params=None, rel_tol=1e-6):
    """
    Run a cyclic algorithm at every divisor of the problem order and check
    that the objectives agree.
    """
    if algorithm not in CYCLIC_ALGORITHMS:
        raise ConfigError(f"{algorithm!r} is not a cyclic algorithm")
    instance = BenchInstance(f"sweep-m{problem.block_size}-n{problem.order}",
                             expand(problem), problem.order, problem)
    records = []
    for n in divisors(problem.order):
        cyclic = refold(problem, n)
        sub = BenchInstance(instance.instance_id, instance.dense, n, cyclic)
        report = SOLVERS[algorithm](sub, n, params or {}, Config.DETERMINISTIC)
        logger.info(f"Sweep {algorithm} n={n}: objective={report.objective:.12g} "
                    f"time={report.wall_time:.3f}s")
        records.append(BenchRecord(instance.instance_id, algorithm, n, report))

    if algorithm != 'naive':
        values = np.array([r.report.objective for r in records])
        reference = values[0]
        spread = np.max(np.abs(values - reference)) / max(abs(reference), 1e-300)
        if spread > rel_tol:
            raise CyclicOTError(
                f"objectives disagree across divisors by {spread:.3e} relative: {values.tolist()}"
            )
    return records


def _stats(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return None, None
    return float(values.mean()), float(values.std())


def summarize(records):
    """Mean ± std of objective, marginal error and time per (algorithm, n)."""
    groups = {}
    for record in records:
        groups.setdefault((record.algorithm, record.n), []).append(record)

    time_means = {}
    rows = []
    for (tag, n), group in groups.items():
        ok = [r.report for r in group if r.ok]
        obj_mean, obj_std = _stats([r.objective for r in ok])
        err_mean, err_std = _stats([r.marginal_error for r in ok])
        time_mean, time_std = _stats([r.wall_time for r in ok])
        time_means[(tag, n)] = time_mean
        rows.append({
            'algorithm': tag,
            'n': n,
            'runs': len(group),
            'failures': len(group) - len(ok),
            'objective_mean': obj_mean,
            'objective_std': obj_std,
            'marginal_error_mean': err_mean,
            'marginal_error_std': err_std,
            'time_mean': time_mean,
            'time_std': time_std,
            'speedup': None,
        })

    for row in rows:
        baseline = time_means.get((DIRECT_BASELINE.get(row['algorithm']), 1))
        if baseline and row['time_mean']:
            row['speedup'] = baseline / row['time_mean']
    return rows


def check_agreement(records, tolerances=None):
    """
    Relative objective disagreements inside the exact and entropic families.
    Folded runs solve a nearby problem and are left out.
    """
    tolerances = dict(DEFAULT_BENCH_CONFIG['tolerances'], **(tolerances or {}))
    issues = []
    by_instance = {}
    for record in records:
        if record.ok and not record.report.extras.get('folded'):
            by_instance.setdefault(record.instance_id, []).append(record)

    for instance_id, group in by_instance.items():
        for family, key in ((EXACT_FAMILY, 'exact'), (ENTROPIC_FAMILY, 'entropic')):
            members = [r for r in group if r.algorithm in family]
            if len(members) < 2:
                continue
            reference = members[0].report.objective
            for r in members[1:]:
                rel = abs(r.report.objective - reference) / max(abs(reference), 1e-300)
                if rel > tolerances[key]:
                    issues.append(
                        f"{instance_id}: {r.algorithm} n={r.n} differs from "
                        f"{members[0].algorithm} n={members[0].n} by {rel:.3e} relative"
                    )
    return issues


def write_records(records, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record.to_dict()))
            f.write('\n')
    logger.info(f"Wrote {len(records)} records to {path}")


SUMMARY_FIELDS = [
    'algorithm', 'n', 'runs', 'failures',
    'objective_mean', 'objective_std',
    'marginal_error_mean', 'marginal_error_std',
    'time_mean', 'time_std', 'speedup',
]


def write_summary(rows, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ('' if row[k] is None else row[k]) for k in SUMMARY_FIELDS})
    logger.info(f"Wrote summary with {len(rows)} rows to {path}")


def write_outputs(records, rows, output_dir):
    output_dir = output_dir or Config.BENCH_OUTPUT_DIR
    write_records(records, os.path.join(output_dir, 'records.jsonl'))
    write_summary(rows, os.path.join(output_dir, 'summary.csv'))
    return output_dir

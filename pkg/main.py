# main.py - command line entry point for cyclic-ot
import logging
import os
import sys

import click

from config import Config
from core import (
    CyclicOTError,
    CyclicProblem,
    DenseProblem,
    TransportPlan,
    expand,
    refold,
    require_cyclic,
)
from bench import (
    BenchConfig,
    check_agreement,
    divisor_sweep,
    run_suite,
    summarize,
    write_outputs,
)
from clot import solve_clot, solve_naive_blockwise
from datagen import (
    gen_counter_example,
    gen_image_problem,
    gen_synthetic,
    image_pair_problem,
    load_image,
    make_ordering,
)
from lot import solve_lot
from problem_io import load_problem, save_plan, save_problem
from sinkhorn import cyclic_sinkhorn, sinkhorn, two_stage_sinkhorn
from srot import alternating_minimize, parse_regularizer, primal_from_dual

logger = logging.getLogger(__name__)

CYCLIC_ALGORITHMS = ('clot', 'naive', 'amin', 'csinkhorn')
DENSE_ALGORITHMS = ('lot', 'sinkhorn', 'two-stage')


def configure_logging(verbose=False):
    level = logging.DEBUG if verbose else getattr(logging, Config.LOG_LEVEL, logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


@click.group()
@click.option('--verbose', is_flag=True, help='Log at DEBUG level.')
def cli(verbose):
    """Exact and entropic optimal transport for cyclically symmetric problems."""
    configure_logging(verbose)


@cli.group()
def gen():
    """Generate problem instances in the cyclic-ot/1 JSON format."""


@gen.command('synthetic')
@click.option('--m', 'm', type=int, required=True, help='Block size.')
@click.option('--n', 'n', type=int, required=True, help='Symmetry order.')
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--rng', 'rng_spec', default=None, help='pcg64 | philox | sfc64 | mt19937')
@click.option('--dense', is_flag=True, help='Write the expanded dense problem.')
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False))
def gen_synthetic_cmd(m, n, seed, rng_spec, dense, out_path):
    """Random cyclic problem with Gaussian cost blocks."""
    problem = _guard(lambda: gen_synthetic(m, n, seed=seed, rng_spec=rng_spec))
    save_problem(expand(problem) if dense else problem, out_path)
    click.echo(f"✅ wrote {'dense' if dense else 'cyclic'} problem d={problem.dim} to {out_path}")


@gen.command('counter')
@click.option('--scale', type=float, default=1.0, show_default=True)
@click.option('--m', 'm', type=int, default=1, show_default=True)
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False))
def gen_counter_cmd(scale, m, out_path):
    """Order-2 instance where the blockwise strategy is suboptimal."""
    problem = _guard(lambda: gen_counter_example(scale, m))
    save_problem(problem, out_path)
    click.echo(f"✅ wrote counter-example m={m} scale={scale:g} to {out_path}")


@gen.command('image')
@click.option('--h', 'h', type=int, required=True)
@click.option('--w', 'w', type=int, default=None)
@click.option('--symmetry', type=click.Choice(['mirror', 'rotation']), default='mirror', show_default=True)
@click.option('--metric', type=click.Choice(['manhattan', 'euclidean', 'chebyshev']),
              default='euclidean', show_default=True)
@click.option('--noise', type=float, default=0.0, show_default=True, help='Relative marginal noise.')
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--image-a', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--image-b', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False))
def gen_image_cmd(h, w, symmetry, metric, noise, seed, image_a, image_b, out_path):
    """Dense problem between two gray images (random symmetric ones unless files are given)."""
    w = h if w is None else w

    def build():
        if image_a and image_b:
            ordering = make_ordering(h, w, symmetry)
            dense, exact = image_pair_problem(load_image(image_a), load_image(image_b), ordering, metric)
            return dense, exact
        dense, _, exact = gen_image_problem(h, w, symmetry, metric, noise, seed=seed)
        return dense, exact

    dense, exact = _guard(build)
    save_problem(dense, out_path)
    status = 'exactly' if exact else 'approximately'
    click.echo(f"✅ wrote {status} {symmetry}-symmetric image problem d={dense.dim} to {out_path}")


def _guard(fn):
    try:
        return fn()
    except CyclicOTError as e:
        raise click.ClickException(str(e))


def _as_cyclic(problem, n, symmetry_tol):
    if isinstance(problem, CyclicProblem):
        if n is None or n == problem.order:
            return problem
        return refold(problem, n)
    n = problem.order if n is None else n
    if n is None:
        raise click.UsageError("--n is required to run a cyclic algorithm on a dense problem "
                               "that does not declare its order")
    return require_cyclic(problem, n, symmetry_tol)


def _as_dense(problem):
    return expand(problem) if isinstance(problem, CyclicProblem) else problem


def run_algorithm(problem, algo, n=None, lam=None, tol=None, max_iters=None, stage1_tol=None,
                  log_domain=False, deterministic=None, regularizer=None, symmetry_tol=None):
    """Dispatch one solve by algorithm tag; returns (plan, report)."""
    if algo == 'lot':
        dense = _as_dense(problem)
        S, _, report = solve_lot(dense.a, dense.b, dense.cost)
        return TransportPlan(matrix=S), report
    if algo == 'sinkhorn':
        plan, report = sinkhorn(_as_dense(problem), lam, tol, max_iters,
                                log_domain=log_domain, deterministic=deterministic)
        return TransportPlan(matrix=plan), report
    if algo == 'two-stage':
        order = n if n is not None else problem.order
        if order is None:
            raise click.UsageError("--n is required for the two-stage algorithm")
        plan, report = two_stage_sinkhorn(_as_dense(problem), order, lam, stage1_tol, tol, max_iters,
                                          log_domain=log_domain, deterministic=deterministic)
        return TransportPlan(matrix=plan), report

    cyclic = _as_cyclic(problem, n, symmetry_tol)
    if algo == 'clot':
        return solve_clot(cyclic)
    if algo == 'naive':
        return solve_naive_blockwise(cyclic)
    if algo == 'csinkhorn':
        return cyclic_sinkhorn(cyclic, lam, tol, max_iters,
                               log_domain=log_domain, deterministic=deterministic)
    if algo == 'amin':
        reg = parse_regularizer(regularizer or f"entropic:{lam if lam is not None else Config.DEFAULT_LAMBDA}")
        state, report = alternating_minimize(cyclic, reg, tol, max_iters)
        return primal_from_dual(state, cyclic, reg), report
    raise click.UsageError(f"unknown algorithm {algo!r}")


@cli.command()
@click.option('--algo', type=click.Choice(DENSE_ALGORITHMS + CYCLIC_ALGORITHMS), required=True)
@click.option('--in', 'in_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_path', default=None, type=click.Path(dir_okay=False))
@click.option('--n', 'n', type=int, default=None, help='Symmetry order used by cyclic algorithms.')
@click.option('--lambda', 'lam', type=float, default=None, help='Entropic strength.')
@click.option('--tol', type=float, default=None)
@click.option('--max-iters', type=int, default=None)
@click.option('--stage1-tol', type=float, default=None)
@click.option('--regularizer', default=None, help='entropic:<lambda> or squared:<gamma> (amin only).')
@click.option('--symmetry-tol', type=float, default=None)
@click.option('--log-domain', is_flag=True)
@click.option('--deterministic', is_flag=True)
@click.option('--dense-plan', is_flag=True, help='Store the expanded d×d plan.')
def solve(algo, in_path, out_path, n, lam, tol, max_iters, stage1_tol, regularizer,
          symmetry_tol, log_domain, deterministic, dense_plan):
    """Solve a problem file and optionally write the plan."""
    def run():
        problem = load_problem(in_path)
        return run_algorithm(problem, algo, n, lam, tol, max_iters, stage1_tol, log_domain,
                             deterministic or None, regularizer, symmetry_tol)

    plan, report = _guard(run)
    if out_path:
        save_plan(plan, report, out_path, dense=dense_plan)
    status = '✅' if report.converged else '⚠️'
    click.echo(f"{status} {algo}: objective={report.objective:.12g} "
               f"marginal_error={report.marginal_error:.3e} iterations={report.iterations} "
               f"time={report.wall_time:.3f}s")


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out-dir', default=None, type=click.Path(file_okay=False))
def bench(config_path, out_dir):
    """Run a benchmark suite from a JSON BenchConfig."""
    def run():
        config = BenchConfig.load(config_path)
        records, rows = run_suite(config)
        return config, records, rows

    config, records, rows = _guard(run)
    target = write_outputs(records, rows, out_dir or config.output_dir)
    for issue in check_agreement(records, config.tolerances):
        logger.warning(issue)
    failures = sum(1 for r in records if not r.ok)
    click.echo(f"✅ {len(records)} records ({failures} failed) written to {target}")


@cli.command()
@click.option('--in', 'in_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--algo', type=click.Choice(CYCLIC_ALGORITHMS), default='clot', show_default=True)
@click.option('--lambda', 'lam', type=float, default=None)
@click.option('--out-dir', default=None, type=click.Path(file_okay=False))
def sweep(in_path, algo, lam, out_dir):
    """Run a cyclic algorithm at every divisor of the problem order."""
    def run():
        problem = load_problem(in_path)
        if isinstance(problem, DenseProblem):
            raise click.UsageError("sweep needs a cyclic problem file")
        params = {} if lam is None else {'lambda': lam}
        return divisor_sweep(problem, algo, params)

    records = _guard(run)
    for r in records:
        click.echo(f"n={r.n:<4d} objective={r.report.objective:.12g} time={r.report.wall_time:.3f}s")
    if out_dir:
        write_outputs(records, summarize(records), out_dir)


@cli.command('config')
def config_cmd():
    """Show the solver configuration and any problems with it."""
    ok = Config.print_config_status()
    if not ok:
        sys.exit(1)


def main():
    cli(prog_name=os.path.basename(sys.argv[0]) or 'cyclic-ot')


if __name__ == '__main__':
    main()

import csv
import json
import os

import pytest

from bench import (
    BenchConfig,
    BenchRecord,
    check_agreement,
    divisor_sweep,
    generate_instances,
    run_one,
    run_suite,
    summarize,
    write_outputs,
)
from core import ConfigError, CyclicOTError, SolveReport
from datagen import gen_synthetic

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'bench_configs')


def exact_config(**overrides):
    data = {
        'name': 'unit',
        'instances': {'generator': 'synthetic', 'params': {'m': 3, 'n': 4}, 'seeds': [0, 1]},
        'algorithms': [{'tag': 'lot'}, {'tag': 'clot', 'orders': [2, 4]}],
    }
    data.update(overrides)
    return BenchConfig.from_dict(data)


def fake_record(instance_id, algorithm, objective, n=1, wall_time=1.0):
    report = SolveReport(objective=objective, marginal_error=0.0, iterations=1,
                         wall_time=wall_time, converged=True, algorithm=algorithm)
    return BenchRecord(instance_id, algorithm, n, report)


class TestBenchConfig:
    def test_defaults_are_merged(self):
        config = exact_config()
        assert config.repetitions == 1
        assert config.tolerances == {'exact': 1e-6, 'entropic': 1e-5}

    def test_partial_tolerances_keep_defaults(self):
        config = exact_config(tolerances={'exact': 1e-3})
        assert config.tolerances == {'exact': 1e-3, 'entropic': 1e-5}

    @pytest.mark.parametrize('overrides', [
        {'algorithms': []},
        {'algorithms': [{'tag': 'simplex'}]},
        {'algorithms': [{'tag': 'lot', 'fold': True}]},
        {'instances': {'generator': 'mnist', 'seeds': [0]}},
        {'instances': {'generator': 'synthetic', 'params': {'m': 2}, 'seeds': []}},
        {'repetitions': 0},
        {'threads': 4},
    ])
    def test_invalid_configs(self, overrides):
        with pytest.raises(ConfigError):
            exact_config(**overrides)

    def test_load_shipped_configs(self):
        for name in sorted(os.listdir(CONFIG_DIR)):
            config = BenchConfig.load(os.path.join(CONFIG_DIR, name))
            assert config.algorithms

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            BenchConfig.load(str(tmp_path / 'missing.json'))
        broken = tmp_path / 'broken.json'
        broken.write_text('{"name": ')
        with pytest.raises(ConfigError):
            BenchConfig.load(str(broken))


class TestRunSuite:
    def test_exact_suite_agrees(self):
        records, rows = run_suite(exact_config())
        assert len(records) == 6
        assert all(r.ok for r in records)
        assert check_agreement(records) == []
        by_key = {(row['algorithm'], row['n']): row for row in rows}
        assert set(by_key) == {('lot', 1), ('clot', 2), ('clot', 4)}
        assert by_key[('lot', 1)]['speedup'] == pytest.approx(1.0)
        assert by_key[('clot', 4)]['speedup'] > 0
        assert by_key[('clot', 4)]['objective_mean'] == pytest.approx(by_key[('lot', 1)]['objective_mean'], rel=1e-6)

    def test_divisor_orders_and_repetitions(self):
        config = exact_config(algorithms=[{'tag': 'clot', 'orders': 'divisors'}], repetitions=2,
                              instances={'generator': 'synthetic', 'params': {'m': 2, 'n': 6}, 'seeds': [3]})
        records, rows = run_suite(config)
        assert sorted({r.n for r in records}) == [1, 2, 3, 6]
        assert len(records) == 8
        assert all(row['runs'] == 2 for row in rows)

    def test_counter_generator(self):
        config = exact_config(algorithms=[{'tag': 'clot'}, {'tag': 'naive'}],
                              instances={'generator': 'counter', 'params': {'scale': 1.0}, 'seeds': [0]})
        records, _ = run_suite(config)
        values = {r.algorithm: r.report.objective for r in records}
        assert values['clot'] == pytest.approx(1.0)
        assert values['naive'] == pytest.approx(5.0)

    def test_perturbed_images_use_two_stage(self):
        config = exact_config(
            instances={'generator': 'image',
                       'params': {'h': 2, 'w': 4, 'symmetry': 'mirror', 'noise': 0.02}, 'seeds': [0]},
            algorithms=[{'tag': 'sinkhorn', 'lambda': 1.0, 'tol': 1e-11},
                        {'tag': 'two-stage', 'lambda': 1.0, 'tol': 1e-11}],
        )
        instance, = generate_instances(config)
        assert not instance.exact and instance.cyclic is None
        records, _ = run_suite(config)
        assert all(r.ok for r in records)
        assert [r.n for r in records] == [1, 2]
        assert check_agreement(records, config.tolerances) == []

    def test_folded_cyclic_sinkhorn_on_perturbed_images(self):
        instances = {'generator': 'image',
                     'params': {'h': 2, 'w': 4, 'symmetry': 'mirror', 'noise': 0.02}, 'seeds': [0]}
        config = exact_config(
            instances=instances,
            algorithms=[{'tag': 'sinkhorn', 'lambda': 1.0, 'tol': 1e-11},
                        {'tag': 'csinkhorn', 'lambda': 1.0, 'tol': 1e-11, 'fold': True}],
        )
        records, _ = run_suite(config)
        direct, folded = records
        assert folded.ok and folded.n == 2
        extras = folded.report.extras
        assert extras['folded']
        assert extras['folded_marginal_error'] <= 1e-9
        assert 1e-6 < folded.report.marginal_error < 0.05
        assert folded.report.objective == pytest.approx(direct.report.objective, rel=0.05)
        assert check_agreement(records, config.tolerances) == []

        unfolded = exact_config(instances=instances,
                                algorithms=[{'tag': 'csinkhorn', 'lambda': 1.0}])
        record, = run_suite(unfolded)[0]
        assert not record.ok and 'not 2-cyclic' in record.error

    def test_fold_on_exact_instance_changes_nothing(self):
        config = exact_config(algorithms=[{'tag': 'clot'}, {'tag': 'clot', 'fold': True}],
                              instances={'generator': 'synthetic', 'params': {'m': 3, 'n': 2}, 'seeds': [5]})
        plain, folded = run_suite(config)[0]
        assert folded.report.objective == pytest.approx(plain.report.objective, rel=1e-12)
        assert folded.report.marginal_error <= 1e-12
        assert folded.report.extras['folded_objective'] == pytest.approx(plain.report.objective, rel=1e-12)

    def test_symmetry_tolerance_param(self):
        instance, = generate_instances(exact_config(instances={
            'generator': 'image', 'params': {'h': 2, 'w': 4, 'noise': 0.02}, 'seeds': [0]}))
        assert not run_one(instance, 'clot', 2, {}).ok
        assert run_one(instance, 'clot', 2, {'symmetry_tol': 0.1}).ok

    def test_failed_solve_becomes_record(self):
        instance, = generate_instances(exact_config(instances={
            'generator': 'synthetic', 'params': {'m': 2, 'n': 2}, 'seeds': [0]}))
        record = run_one(instance, 'csinkhorn', 2, {'lambda': -1.0})
        assert not record.ok
        assert 'lambda' in record.error
        row, = summarize([record])
        assert row['failures'] == 1 and row['objective_mean'] is None


class TestAgreement:
    def test_exact_family_disagreement_is_reported(self):
        records = [fake_record('i0', 'lot', 1.0), fake_record('i0', 'clot', 1.1, n=2)]
        issues = check_agreement(records)
        assert len(issues) == 1 and 'clot' in issues[0]

    def test_families_are_compared_separately(self):
        records = [fake_record('i0', 'lot', 1.0), fake_record('i0', 'sinkhorn', 1.5),
                   fake_record('i1', 'lot', 2.0)]
        assert check_agreement(records) == []

    def test_speedup_against_direct_baseline(self):
        rows = summarize([fake_record('i0', 'sinkhorn', 1.0, wall_time=4.0),
                          fake_record('i0', 'csinkhorn', 1.0, n=4, wall_time=0.5)])
        speedups = {row['algorithm']: row['speedup'] for row in rows}
        assert speedups['csinkhorn'] == pytest.approx(8.0)


class TestDivisorSweep:
    @pytest.mark.parametrize('n', [4, 5])
    def test_clot_objective_is_order_independent(self, n):
        records = divisor_sweep(gen_synthetic(3, n, seed=n))
        assert [r.n for r in records] == ([1, 2, 4] if n == 4 else [1, 5])

    def test_entropic_sweep(self):
        records = divisor_sweep(gen_synthetic(2, 4, seed=1), 'csinkhorn', {'lambda': 5.0, 'tol': 1e-12})
        assert len(records) == 3

    def test_disagreement_raises(self):
        with pytest.raises(CyclicOTError):
            divisor_sweep(gen_synthetic(2, 2, seed=0), rel_tol=-1.0)

    def test_dense_algorithm_rejected(self):
        with pytest.raises(ConfigError):
            divisor_sweep(gen_synthetic(2, 2, seed=0), 'lot')


def test_write_outputs(tmp_path):
    records, rows = run_suite(exact_config())
    target = write_outputs(records, rows, str(tmp_path / 'out'))
    with open(os.path.join(target, 'records.jsonl'), encoding='utf-8') as f:
        lines = [json.loads(line) for line in f]
    assert len(lines) == len(records)
    assert lines[0]['report']['algorithm'] == 'lot'
    with open(os.path.join(target, 'summary.csv'), encoding='utf-8', newline='') as f:
        summary = list(csv.DictReader(f))
    assert len(summary) == len(rows)
    assert summary[0]['algorithm'] == 'lot'


def shipped_config(name):
    return BenchConfig.load(os.path.join(CONFIG_DIR, f"{name}.json"))


@pytest.mark.benchmark
def test_exact_and_cyclic_solvers_agree_at_desk_scale():
    config = shipped_config('exact_vs_cyclic')
    assert config.instances['params'] == {'m': 40, 'n': 50}
    records, rows = run_suite(config)
    assert all(r.ok for r in records)
    assert check_agreement(records, config.tolerances) == []
    for r in records:
        if r.algorithm in ('lot', 'clot'):
            assert r.report.marginal_error <= 1e-10
            assert r.report.row_error <= 1e-10

    by_key = {(row['algorithm'], row['n']): row for row in rows}
    assert by_key[('clot', 50)]['time_mean'] <= 0.2 * by_key[('lot', 1)]['time_mean']
    assert by_key[('csinkhorn', 50)]['time_mean'] <= 0.2 * by_key[('sinkhorn', 1)]['time_mean']


@pytest.mark.benchmark
def test_two_stage_matches_cold_start_on_perturbed_images():
    config = shipped_config('two_stage')
    assert len(config.instances['seeds']) == 20
    records, _ = run_suite(config)
    assert all(r.ok for r in records)

    cold = {r.instance_id: r.report for r in records if r.algorithm == 'sinkhorn'}
    warm = {r.instance_id: r.report for r in records if r.algorithm == 'two-stage'}
    assert set(cold) == set(warm)
    faster = 0
    for instance_id, report in warm.items():
        assert report.objective == pytest.approx(cold[instance_id].objective, rel=1e-6)
        assert report.marginal_error <= 1e-8
        faster += report.wall_time < cold[instance_id].wall_time
    assert faster >= 0.6 * len(warm)

    folded = [r.report for r in records if r.algorithm == 'csinkhorn']
    assert len(folded) == len(warm)
    assert all(report.extras['folded'] for report in folded)

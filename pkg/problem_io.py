import json
import os
import logging

import numpy as np

from core import (
    ConfigError,
    CyclicOTError,
    CyclicProblem,
    DenseProblem,
    DimensionError,
    TransportPlan,
)

logger = logging.getLogger(__name__)

FORMAT_TAG = 'cyclic-ot/1'


def _format(value, indent, level):
    """Render JSON with every real written to 17 significant digits"""
    pad = ' ' * (indent * (level + 1))
    end = ' ' * (indent * level)
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, (bool, np.bool_)) or value is None:
        return json.dumps(None if value is None else bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not np.isfinite(value):
            return json.dumps(str(value))
        return format(value, '.16e')
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        if not value:
            return '{}'
        items = [f"{pad}{json.dumps(str(k))}: {_format(v, indent, level + 1)}" for k, v in value.items()]
        return '{\n' + ',\n'.join(items) + '\n' + end + '}'
    if isinstance(value, (list, tuple)):
        if not value:
            return '[]'
        # numeric rows stay on one line
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in value):
            return '[' + ', '.join(_format(v, indent, level + 1) for v in value) + ']'
        items = [pad + _format(v, indent, level + 1) for v in value]
        return '[\n' + ',\n'.join(items) + '\n' + end + ']'
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(obj, indent=2):
    return _format(obj, indent, 0)


def problem_to_dict(problem):
    if isinstance(problem, CyclicProblem):
        return {
            'format': FORMAT_TAG,
            'kind': 'cyclic',
            'n': problem.order,
            'm': problem.block_size,
            'alpha': problem.alpha,
            'beta': problem.beta,
            'cost_blocks': problem.cost_blocks,
        }
    if isinstance(problem, DenseProblem):
        n = problem.order or 1
        return {
            'format': FORMAT_TAG,
            'kind': 'dense',
            'n': n,
            'm': problem.dim // n,
            'd': problem.dim,
            'a': problem.a,
            'b': problem.b,
            'cost': problem.cost,
        }
    raise TypeError(f"unsupported problem type {type(problem).__name__}")


def _declared_order(data, d):
    if 'n' not in data:
        return None
    n = int(data['n'])
    if 'm' in data and n * int(data['m']) != d:
        raise DimensionError(f"declared n={n}, m={data['m']} but the marginals have length {d}")
    return n


def problem_from_dict(data):
    if not isinstance(data, dict):
        raise DimensionError(f"problem document must be a JSON object, got {type(data).__name__}")
    fmt = data.get('format', FORMAT_TAG)
    if fmt != FORMAT_TAG:
        raise DimensionError(f"unsupported problem format {fmt!r}")
    kind = data.get('kind')
    try:
        if kind == 'cyclic':
            problem = CyclicProblem(
                alpha=np.asarray(data['alpha'], dtype=float),
                beta=np.asarray(data['beta'], dtype=float),
                cost_blocks=np.asarray(data['cost_blocks'], dtype=float),
            )
            if 'n' in data and int(data['n']) != problem.order:
                raise DimensionError(f"declared n={data['n']} but found {problem.order} cost blocks")
            return problem
        if kind == 'dense':
            a = np.asarray(data['a'], dtype=float)
            return DenseProblem(
                a=a,
                b=np.asarray(data['b'], dtype=float),
                cost=np.asarray(data['cost'], dtype=float),
                order=_declared_order(data, len(a)),
            )
    except CyclicOTError:
        raise
    except KeyError as e:
        raise DimensionError(f"{kind} problem document is missing field {e}")
    except (TypeError, ValueError) as e:
        raise DimensionError(f"{kind} problem document has invalid values: {e}")
    raise DimensionError(f"unknown problem kind {kind!r}")


def _read_json(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}")


def load_problem(path):
    """
    Load a dense or cyclic problem from a cyclic-ot/1 JSON file.
    Unreadable files raise ConfigError; malformed documents raise the core errors.
    """
    data = _read_json(path)
    problem = problem_from_dict(data)
    logger.info(f"Loaded {data.get('kind')} problem from {path}")
    return problem


def _write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.exists(directory):
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
        f.write('\n')


def save_problem(problem, path):
    _write(path, dumps(problem_to_dict(problem)))
    logger.info(f"Saved problem to {path}")


def save_plan(plan, report, path, dense=False):
    """Save a plan (blocks unless dense=True) together with its SolveReport"""
    payload = {'format': FORMAT_TAG, 'report': report.to_dict() if report is not None else None}
    if isinstance(plan, TransportPlan):
        if plan.is_blocked and not dense:
            payload['plan_blocks'] = plan.blocks
        else:
            payload['plan'] = plan.dense
    else:
        payload['plan'] = np.asarray(plan, dtype=float)
    _write(path, dumps(payload))
    logger.info(f"Saved plan to {path}")


def load_plan(path):
    data = _read_json(path)
    if not isinstance(data, dict) or not ('plan_blocks' in data or 'plan' in data):
        raise DimensionError(f"{path} does not contain a plan")
    if 'plan_blocks' in data:
        return TransportPlan(blocks=np.asarray(data['plan_blocks'], dtype=float)), data.get('report')
    return TransportPlan(matrix=np.asarray(data['plan'], dtype=float)), data.get('report')

import os
import logging
from pathlib import Path
from dotenv import load_dotenv

logger = logging.getLogger(__name__)

# Get the directory where this config.py file is located
config_dir = Path(__file__).parent.absolute()
env_path = config_dir / '.env'

env_loaded = load_dotenv(env_path)
if env_loaded:
    logger.debug(f"Loaded .env file from: {env_path}")
else:
    # Try alternative locations
    alt_path = Path.cwd() / '.env'
    if alt_path.exists():
        load_dotenv(alt_path)
        logger.debug(f"Loaded .env from alternative location: {alt_path}")


def _env_float(name, default):
    raw = os.environ.get(name)
    if raw is None or raw == '':
        return default
    try:
        return float(raw)
    except ValueError:
        logger.warning(f"Ignoring non-numeric {name}={raw!r}, using {default}")
        return default


def _env_int(name, default):
    raw = os.environ.get(name)
    if raw is None or raw == '':
        return default
    try:
        return int(float(raw))
    except ValueError:
        logger.warning(f"Ignoring non-integer {name}={raw!r}, using {default}")
        return default


def _env_bool(name, default):
    raw = os.environ.get(name)
    if raw is None or raw == '':
        return default
    return raw.strip().lower() in ('1', 'true', 'yes', 'on')


class Config:
    # Logging
    LOG_LEVEL = os.environ.get('CYCLIC_OT_LOG_LEVEL', 'INFO').upper()

    # Input validation
    SYMMETRY_TOL = _env_float('SYMMETRY_TOL', 1e-9)
    MASS_TOL = _env_float('MASS_TOL', 1e-12)

    # Network simplex: 0 selects exact power-of-two mass scaling
    LOT_MASS_SCALE = _env_int('LOT_MASS_SCALE', 0)
    LOT_COST_BITS = _env_int('LOT_COST_BITS', 40)
    ORACLE_MAX_SIZE = _env_int('ORACLE_MAX_SIZE', 64)

    # Sinkhorn family
    DEFAULT_LAMBDA = _env_float('DEFAULT_LAMBDA', 0.5)
    SINKHORN_TOL = _env_float('SINKHORN_TOL', 1e-9)
    SINKHORN_MAX_ITERS = _env_int('SINKHORN_MAX_ITERS', 100000)
    SINKHORN_CHECK_EVERY = _env_int('SINKHORN_CHECK_EVERY', 10)
    STAGE1_TOL = _env_float('STAGE1_TOL', 1e-3)
    UNDERFLOW_FLOOR = _env_float('UNDERFLOW_FLOOR', 1e-300)
    DETERMINISTIC = _env_bool('DETERMINISTIC', False)

    # Alternating minimization on the Fenchel dual
    AMIN_TOL = _env_float('AMIN_TOL', 1e-9)
    AMIN_MAX_SWEEPS = _env_int('AMIN_MAX_SWEEPS', 10000)
    NEWTON_MAX_ITERS = _env_int('NEWTON_MAX_ITERS', 100)

    # Instance generation and benchmarks
    RNG_SPEC = os.environ.get('RNG_SPEC', 'pcg64').lower()
    BENCH_OUTPUT_DIR = os.environ.get('BENCH_OUTPUT_DIR', 'bench_results')

    @classmethod
    def validate_solver_config(cls):
        """Validate solver configuration"""
        issues = []

        if cls.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            issues.append(f"CYCLIC_OT_LOG_LEVEL={cls.LOG_LEVEL} is not a logging level")

        if cls.SYMMETRY_TOL < 0:
            issues.append("SYMMETRY_TOL must be non-negative")
        if cls.MASS_TOL <= 0:
            issues.append("MASS_TOL must be positive")

        if cls.LOT_MASS_SCALE < 0:
            issues.append("LOT_MASS_SCALE must be 0 (exact) or a positive integer")
        if not 8 <= cls.LOT_COST_BITS <= 48:
            issues.append("LOT_COST_BITS should lie in [8, 48] to keep pricing inside int64")
        if cls.ORACLE_MAX_SIZE < 12:
            issues.append("ORACLE_MAX_SIZE below 12 disables the documented oracle range")

        if cls.DEFAULT_LAMBDA <= 0:
            issues.append("DEFAULT_LAMBDA must be positive")
        for name in ('SINKHORN_TOL', 'STAGE1_TOL', 'AMIN_TOL'):
            if getattr(cls, name) <= 0:
                issues.append(f"{name} must be positive")
        for name in ('SINKHORN_MAX_ITERS', 'SINKHORN_CHECK_EVERY', 'AMIN_MAX_SWEEPS', 'NEWTON_MAX_ITERS'):
            if getattr(cls, name) < 1:
                issues.append(f"{name} must be at least 1")

        if cls.RNG_SPEC not in ('pcg64', 'philox', 'sfc64', 'mt19937'):
            issues.append(f"RNG_SPEC={cls.RNG_SPEC} is not one of pcg64, philox, sfc64, mt19937")

        return issues

    @classmethod
    def print_config_status(cls):
        """Print configuration status for debugging"""
        print("\n" + "=" * 60)
        print("🔧 cyclic-ot Configuration Status")
        print("=" * 60)

        print(f"📍 Log level: {cls.LOG_LEVEL}")
        print(f"📍 Symmetry tolerance: {cls.SYMMETRY_TOL:g}")
        mass_scale = 'exact (power of two)' if cls.LOT_MASS_SCALE == 0 else str(cls.LOT_MASS_SCALE)
        print(f"📍 LOT mass scale: {mass_scale}, cost bits: {cls.LOT_COST_BITS}")
        print(f"📍 Sinkhorn: lambda={cls.DEFAULT_LAMBDA:g} tol={cls.SINKHORN_TOL:g} "
              f"max_iters={cls.SINKHORN_MAX_ITERS} check_every={cls.SINKHORN_CHECK_EVERY}")
        print(f"📍 Two-stage: stage1_tol={cls.STAGE1_TOL:g}")
        print(f"📍 Alternating minimization: tol={cls.AMIN_TOL:g} max_sweeps={cls.AMIN_MAX_SWEEPS}")
        print(f"📍 RNG: {cls.RNG_SPEC}")
        print(f"📁 Bench output: {cls.BENCH_OUTPUT_DIR}")

        issues = cls.validate_solver_config()
        if issues:
            print("❌ Configuration Issues:")
            for issue in issues:
                print(f"   - {issue}")
        else:
            print("✅ Solver configuration: OK")

        print("=" * 60)

        return len(issues) == 0

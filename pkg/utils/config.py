import os

# Integrator tolerances (DOP853 companion system)
RTOL = 1e-10
ATOL = 1e-12

# Lateral jet order compared by sing_supp, and its relative threshold
JET_ORDER = 8
SING_SUPP_RTOL = 1e-9

# equals(): tolerance and samples per common-refinement interval
EQUALS_TOL = 1e-9
EQUALS_SAMPLES = 33

# Pole check on coefficients, samples per interval
POLE_SAMPLES = 129

# Smooth-ODE check mesh per regular interval
CHECK_MESH = 65

# Linear algebra thresholds
RANK_RTOL = 1e-10
CONSISTENCY_RTOL = 1e-8
LEADING_RTOL = 1e-12

# End-to-end residual tolerance (both components)
RESIDUAL_TOL = 1e-7

# Beam constants against the closed form, relative to max(|value|, |C| L^(4-k) / min(A, B))
BEAM_CONSTANT_TOL = 1e-8

# Weak-residual convergence over an eps schedule: final residual and minimum drop factor
REG_FINAL_RESIDUAL_TOL = 1e-2
REG_MIN_DECAY = 20

# Quadrature
QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-10
QUAD_LIMIT = 200

# Sampling window used when a piece lives on an unbounded interval
WORKING_DOMAIN = (-10.0, 10.0)

# CLI defaults
DEFAULT_MESH = 201
DEFAULT_NPOINTS = 1001
DEFAULT_SCHEDULE = [2.0 ** -k for k in range(3, 11)]
CSV_FLOAT_FORMAT = "%.17g"

THREADS_ENV_VAR = "DISTRODE_THREADS"
MAX_DEFAULT_THREADS = 8


def max_threads():
    """Worker cap for parallel interval solves and eps schedules"""
    raw = os.environ.get(THREADS_ENV_VAR, "").strip()
    if raw:
        try:
            value = int(raw)
            if value > 0:
                return value
        except ValueError:
            pass
    return min(os.cpu_count() or 1, MAX_DEFAULT_THREADS)

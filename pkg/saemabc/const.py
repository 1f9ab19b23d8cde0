import copy

# =============================================================================

DOMAIN = "saemabc"

MODEL_NONLINEAR_GAUSSIAN = "nonlinear-gaussian"
MODEL_THEOPHYLLINE = "theophylline"
MODEL_LINEAR_GAUSSIAN = "linear-gaussian"
MODEL_IDS = [MODEL_NONLINEAR_GAUSSIAN, MODEL_THEOPHYLLINE, MODEL_LINEAR_GAUSSIAN]

ALGO_SAEM_ABC = "saem-abc"
ALGO_SAEM_SMC = "saem-smc"
ALGO_REJECTION_SAEM = "rejection-saem"
ALGO_GIBBS = "gibbs"
ALGO_PMM = "pmm"
ALGORITHMS = [
    ALGO_SAEM_ABC,
    ALGO_SAEM_SMC,
    ALGO_REJECTION_SAEM,
    ALGO_GIBBS,
    ALGO_PMM,
]

KERNEL_GAUSSIAN = "gaussian"
KERNEL_UNIFORM = "uniform"

DATA_MODE_SHARED = "shared"
DATA_MODE_FRESH = "fresh"

# =============================================================================
# Numerical tolerances and guards

WEIGHT_SUM_TOLERANCE = 1e-10
VARIANCE_FLOOR = 1e-12
REGRESSION_CONDITION_LIMIT = 1e12
# sin(e^x) carries no precision past this exponent
EXP_ARGUMENT_CAP = 700.0

# =============================================================================
# Theophylline known constants

THEO_KA = 1.492
THEO_DOSE = 4.0
THEO_X0 = 8.0

# =============================================================================
# Sampler defaults

DEFAULT_MAX_ATTEMPTS = 10_000
DEFAULT_GIBBS_STEP = 0.2
DEFAULT_GIBBS_TARGET_ACCEPTANCE = 0.44
DEFAULT_PMM_STEP = 0.1
DEFAULT_PMM_TARGET_ACCEPTANCE = 0.07
ADAPTATION_FREEZE_FRACTION = 0.5
ADAPTATION_DECAY = 0.6

# =============================================================================
# CLI exit codes

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_ESTIMATION_FAILURE = 3

# =============================================================================
# Reproduction presets (raw config documents, validated by config.py)

NLG_SIGMA = 5.0**0.5

# Threshold ladders
NLG_DELTAS = (2.0, 1.7, 1.3, 1.0)
NLG_DELTA_ROBUSTNESS = (4.0, 3.0, 2.0, 1.0)
NLG_DELTA_UNIFORM_STEPS = (2.0, 1.67, 1.33, 1.0)
NLG_LEVEL_ITERATIONS = (80, 70, 50, 200)
THEO_DELTAS_ABC0 = (0.5, 0.2, 0.1, 0.05, 0.01)
THEO_DELTAS_ABC1 = (0.5, 0.2, 0.1, 0.03)
THEO_DELTAS_ABC2 = (1.0, 0.4, 0.1)


def _levels(deltas, iterations):
    return [{"delta": d, "iterations": k} for d, k in zip(deltas, iterations, strict=True)]


def _stepped_levels(deltas, first, every, total):
    """Same block layout as ThresholdSchedule.stepped."""
    counts = [first] + [every] * (len(deltas) - 2)
    return _levels(deltas, [*counts, total - sum(counts)])


def _variant(base, **algorithm):
    doc = copy.deepcopy(base)
    doc["algorithm"].update(algorithm)
    return doc


_NLG_BENCHMARK = {
    "model": {
        "id": MODEL_NONLINEAR_GAUSSIAN,
        "theta": {"sigma_x": NLG_SIGMA, "sigma_y": NLG_SIGMA},
    },
    "grid": {"n": 50, "delta": 1.0, "substeps": 1},
    "algorithm": {
        "name": ALGO_SAEM_ABC,
        "M": 1000,
        "M_bar": 200,
        "K": 400,
        "K1": 300,
        "kernel": KERNEL_GAUSSIAN,
        "schedule": _levels(NLG_DELTAS, NLG_LEVEL_ITERATIONS),
    },
    "replicates": 30,
    "start": {
        "law": "gaussian",
        "center": {"sigma_x": NLG_SIGMA, "sigma_y": NLG_SIGMA},
        "sd": 2.0**0.5,
    },
    "data_mode": DATA_MODE_SHARED,
    "seed": 20170101,
}

_THEO_BENCHMARK = {
    "model": {
        "id": MODEL_THEOPHYLLINE,
        "theta": {"ke": 0.05, "cl": 0.04, "sigma": 0.1, "sigma_eps": 0.1},
    },
    "grid": {"n": 100, "delta": 1.0, "substeps": 20},
    "algorithm": {
        "name": ALGO_SAEM_ABC,
        "M": 200,
        "M_bar": 10,
        "K": 300,
        "K1": 250,
        "kernel": KERNEL_GAUSSIAN,
        "schedule": _stepped_levels(THEO_DELTAS_ABC1, 80, 50, 300),
    },
    "replicates": 50,
    "start": {
        "law": "fixed",
        "value": {"ke": 0.8, "cl": 10.0, "sigma": 0.14, "sigma_eps": 1.0},
    },
    "data_mode": DATA_MODE_FRESH,
    "seed": 20170303,
}

_NLG_GIBBS = {
    **copy.deepcopy(_NLG_BENCHMARK),
    "algorithm": {
        "name": ALGO_GIBBS,
        "chain_length": 4000,
        "priors": {
            "sigma_x": {"family": "uniform", "lo": 0.1, "hi": 15.0},
            "sigma_y": {"family": "uniform", "lo": 0.1, "hi": 15.0},
        },
    },
    "replicates": 3,
}

_THEO_PMM = {
    **copy.deepcopy(_THEO_BENCHMARK),
    "algorithm": {
        "name": ALGO_PMM,
        "M": 1000,
        "M_bar": 500,
        "chain_length": 2000,
        "priors": {
            "ke": {"family": "uniform", "lo": 0.01, "hi": 0.2},
            "cl": {"family": "uniform", "lo": 0.01, "hi": 0.2},
            "sigma": {"family": "uniform", "lo": 0.01, "hi": 0.3},
            "sigma_eps": {"family": "uniform", "lo": 0.05, "hi": 0.5},
        },
    },
    "replicates": 1,
    # remote starts give a non-finite likelihood estimate at this M
    "start": {
        "law": "fixed",
        "value": {"ke": 0.05, "cl": 0.04, "sigma": 0.2, "sigma_eps": 0.3},
    },
}

PRESETS = {
    "nlg-benchmark": _NLG_BENCHMARK,
    "nlg-delta-robustness": _variant(
        _NLG_BENCHMARK, schedule=_levels(NLG_DELTA_ROBUSTNESS, NLG_LEVEL_ITERATIONS)
    ),
    "nlg-uniform-steps": _variant(
        _NLG_BENCHMARK, schedule=_stepped_levels(NLG_DELTA_UNIFORM_STEPS, 50, 50, 400)
    ),
    "nlg-smc": _variant(_NLG_BENCHMARK, name=ALGO_SAEM_SMC, schedule=[]),
    "nlg-smc-low-threshold": _variant(_NLG_BENCHMARK, name=ALGO_SAEM_SMC, M_bar=20, schedule=[]),
    "nlg-gibbs": _NLG_GIBBS,
    "theo-benchmark": _THEO_BENCHMARK,
    "theo-abc0": _variant(_THEO_BENCHMARK, schedule=_stepped_levels(THEO_DELTAS_ABC0, 80, 50, 300)),
    "theo-abc2": _variant(_THEO_BENCHMARK, schedule=_stepped_levels(THEO_DELTAS_ABC2, 80, 50, 300)),
    "theo-pmm": _THEO_PMM,
}

"""SAEM with ABC-SMC path simulation, plus baseline estimators, for state-space models."""

import logging

from .bayes import PriorSpec, gelman_rubin, gibbs_run, pmm_run
from .config import ExperimentConfig, load_config
from .const import DOMAIN
from .exceptions import (
    AcceptanceFailure,
    ChainInitializationError,
    ConfigError,
    ContractViolation,
    DegenerateFilterError,
    MStepDomainError,
    SaemAbcError,
    SingularRegressionError,
)
from .filters import (
    FilterDiagnostics,
    ParticleSystem,
    bootstrap_loglik,
    rejection_abc_path,
    run_abc_smc,
    run_bootstrap,
    sample_genealogy_path,
)
from .kernels import KernelSpec, ThresholdSchedule, kernel_log_weight, schedule_delta
from .linear_gaussian import LinearGaussianTestModel, kalman_loglik
from .model import (
    LatentPath,
    ObservationSeries,
    ParameterVector,
    StateSpaceModel,
    TimeGrid,
    complete_loglik,
    simulate_dataset,
    simulate_path,
)
from .nonlinear_gaussian import NonlinearGaussianModel
from .saem import (
    AbcFilterSpec,
    BootstrapFilterSpec,
    RejectionSpec,
    SAEMResult,
    StepSizeSchedule,
    run_saem,
)
from .theophylline import TheophyllineModel

logging.getLogger(DOMAIN).addHandler(logging.NullHandler())

__all__ = [
    "AbcFilterSpec",
    "AcceptanceFailure",
    "BootstrapFilterSpec",
    "ChainInitializationError",
    "ConfigError",
    "ContractViolation",
    "DegenerateFilterError",
    "ExperimentConfig",
    "FilterDiagnostics",
    "KernelSpec",
    "LatentPath",
    "LinearGaussianTestModel",
    "MStepDomainError",
    "NonlinearGaussianModel",
    "ObservationSeries",
    "ParameterVector",
    "ParticleSystem",
    "PriorSpec",
    "RejectionSpec",
    "SAEMResult",
    "SaemAbcError",
    "SingularRegressionError",
    "StateSpaceModel",
    "StepSizeSchedule",
    "TheophyllineModel",
    "ThresholdSchedule",
    "TimeGrid",
    "bootstrap_loglik",
    "complete_loglik",
    "gelman_rubin",
    "gibbs_run",
    "kalman_loglik",
    "kernel_log_weight",
    "load_config",
    "pmm_run",
    "rejection_abc_path",
    "run_abc_smc",
    "run_bootstrap",
    "run_saem",
    "sample_genealogy_path",
    "schedule_delta",
    "simulate_dataset",
    "simulate_path",
]

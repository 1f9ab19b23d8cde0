"""Experiment configuration: JSON document + dotted overrides, validated with voluptuous."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import voluptuous as vol

from .bayes import Prior, PriorSpec
from .const import (
    ALGO_GIBBS,
    ALGO_PMM,
    ALGO_REJECTION_SAEM,
    ALGO_SAEM_ABC,
    ALGO_SAEM_SMC,
    ALGORITHMS,
    DATA_MODE_FRESH,
    DATA_MODE_SHARED,
    DEFAULT_GIBBS_STEP,
    DEFAULT_GIBBS_TARGET_ACCEPTANCE,
    DEFAULT_MAX_ATTEMPTS,
    DEFAULT_PMM_STEP,
    DEFAULT_PMM_TARGET_ACCEPTANCE,
    KERNEL_GAUSSIAN,
    KERNEL_UNIFORM,
    MODEL_IDS,
    MODEL_LINEAR_GAUSSIAN,
    MODEL_NONLINEAR_GAUSSIAN,
    MODEL_THEOPHYLLINE,
    PRESETS,
)
from .exceptions import ConfigError
from .kernels import KernelSpec, ThresholdSchedule
from .linear_gaussian import LinearGaussianTestModel
from .model import ParameterVector, StateSpaceModel, TimeGrid
from .nonlinear_gaussian import NonlinearGaussianModel
from .saem import AbcFilterSpec, BootstrapFilterSpec, RejectionSpec, StepSizeSchedule
from .theophylline import TheophyllineModel

_LOGGER = logging.getLogger(__name__)

SAEM_ALGORITHMS = (ALGO_SAEM_ABC, ALGO_SAEM_SMC, ALGO_REJECTION_SAEM)
SCHEDULED_ALGORITHMS = (ALGO_SAEM_ABC, ALGO_REJECTION_SAEM)

# =============================================================================
# Schemas

_positive_float = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
_positive_int = vol.All(vol.Coerce(int), vol.Range(min=1))
_parameter_map = vol.Schema({str: vol.Coerce(float)})

MODEL_SCHEMA = vol.Schema(
    {
        vol.Required("id"): vol.In(MODEL_IDS),
        vol.Required("theta"): _parameter_map,
        # linear-gaussian only: b, x0_mean, x0_var
        vol.Optional("options", default={}): _parameter_map,
    }
)

GRID_SCHEMA = vol.Schema(
    {
        vol.Required("n"): _positive_int,
        vol.Optional("delta", default=1.0): _positive_float,
        vol.Optional("substeps", default=1): _positive_int,
        vol.Optional("t0", default=0.0): vol.Coerce(float),
    }
)

LEVEL_SCHEMA = vol.Schema(
    {
        vol.Required("delta"): _positive_float,
        vol.Required("iterations"): _positive_int,
    }
)

PRIOR_SCHEMA = vol.Schema(
    {
        vol.Required("family"): vol.In(["uniform", "flat-log"]),
        vol.Optional("lo"): vol.Coerce(float),
        vol.Optional("hi"): vol.Coerce(float),
    }
)

ALGORITHM_SCHEMA = vol.Schema(
    {
        vol.Required("name"): vol.In(ALGORITHMS),
        vol.Optional("M", default=1000): _positive_int,
        vol.Optional("M_bar", default=200): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional("K", default=400): _positive_int,
        vol.Optional("K1", default=300): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional("schedule", default=[]): [LEVEL_SCHEMA],
        vol.Optional("kernel", default=KERNEL_GAUSSIAN): vol.In([KERNEL_GAUSSIAN, KERNEL_UNIFORM]),
        vol.Optional("max_attempts", default=DEFAULT_MAX_ATTEMPTS): _positive_int,
        vol.Optional("fisher", default=True): vol.Boolean(),
        vol.Optional("priors", default={}): vol.Schema({str: PRIOR_SCHEMA}),
        vol.Optional("chain_length", default=4000): _positive_int,
        vol.Optional("burn_in", default=0.5): vol.All(vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)),
        vol.Optional("target_acceptance"): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, min_included=False, max_included=False)
        ),
        vol.Optional("step"): _positive_float,
    }
)

START_SCHEMA = vol.Schema(
    {
        vol.Required("law"): vol.In(["fixed", "gaussian"]),
        vol.Optional("value"): _parameter_map,
        vol.Optional("center"): _parameter_map,
        vol.Optional("sd", default=2.0**0.5): _positive_float,
    }
)

DIAGNOSE_SCHEMA = vol.Schema(
    {
        vol.Optional("repetitions", default=30): _positive_int,
    }
)

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required("model"): MODEL_SCHEMA,
        vol.Required("grid"): GRID_SCHEMA,
        vol.Required("algorithm"): ALGORITHM_SCHEMA,
        vol.Optional("replicates", default=1): _positive_int,
        vol.Optional("start", default={"law": "fixed"}): START_SCHEMA,
        vol.Optional("data_mode", default=DATA_MODE_SHARED): vol.In([DATA_MODE_SHARED, DATA_MODE_FRESH]),
        vol.Optional("seed", default=0): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional("jobs", default=1): _positive_int,
        vol.Optional("log_scale_report", default=False): vol.Boolean(),
        vol.Optional("diagnose", default={}): DIAGNOSE_SCHEMA,
    }
)

MODEL_CLASSES: dict[str, type[StateSpaceModel]] = {
    MODEL_NONLINEAR_GAUSSIAN: NonlinearGaussianModel,
    MODEL_THEOPHYLLINE: TheophyllineModel,
    MODEL_LINEAR_GAUSSIAN: LinearGaussianTestModel,
}


# =============================================================================
# Raw documents


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset '{name}' (known: {sorted(PRESETS)})", name)
    return copy.deepcopy(PRESETS[name])


def load_document(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}", str(path)) from None
    except json.JSONDecodeError as err:
        raise ConfigError("config", f"not valid JSON ({err})", str(path)) from None


def parse_override_value(text: str) -> Any:
    """JSON literal if it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except (json.JSONDecodeError, TypeError):
        return text


def apply_overrides(raw: dict, overrides: list[tuple[str, Any]]) -> dict:
    """Set dotted keys (numeric segments index lists) on a copy of raw."""
    doc = copy.deepcopy(raw)
    for dotted, value in overrides:
        parts = dotted.split(".")
        node: Any = doc
        for i, part in enumerate(parts):
            last = i == len(parts) - 1
            if isinstance(node, list):
                try:
                    index = int(part)
                    if last:
                        node[index] = value
                    else:
                        node = node[index]
                except (ValueError, IndexError):
                    raise ConfigError(dotted, f"'{part}' is not a valid list index", value) from None
                continue
            if not isinstance(node, dict):
                raise ConfigError(dotted, "cannot descend into a scalar", value)
            if last:
                node[part] = value
            else:
                node = node.setdefault(part, {})
    return doc


# =============================================================================
# Validation


def _path_of(err: vol.Invalid) -> str:
    return ".".join(str(p) for p in err.path) or "<root>"


def validate_config(raw: dict) -> dict:
    """Schema pass, then cross-field rules. Raises ConfigError naming the field."""
    try:
        cfg = CONFIG_SCHEMA(raw)
    except vol.MultipleInvalid as err:
        first = err.errors[0]
        raise ConfigError(_path_of(first), first.error_message) from None
    except vol.Invalid as err:
        raise ConfigError(_path_of(err), err.error_message) from None
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: dict) -> None:
    model_cls = MODEL_CLASSES[cfg["model"]["id"]]
    names = set(model_cls.parameter_names)
    algo = cfg["algorithm"]

    if set(cfg["model"]["theta"]) != names:
        raise ConfigError("model.theta", f"expected parameters {sorted(names)}", sorted(cfg["model"]["theta"]))
    for name, value in cfg["model"]["theta"].items():
        index = model_cls.parameter_names.index(name)
        if model_cls.positive[index] and value <= 0:
            raise ConfigError(f"model.theta.{name}", "must be > 0", value)

    if cfg["model"]["id"] != MODEL_THEOPHYLLINE and cfg["grid"]["substeps"] != 1:
        raise ConfigError("grid.substeps", "this model is defined without sub-steps (use 1)", cfg["grid"]["substeps"])

    if algo["M_bar"] > algo["M"]:
        raise ConfigError("algorithm.M_bar", f"must not exceed M={algo['M']}", algo["M_bar"])

    if algo["name"] in SAEM_ALGORITHMS:
        if algo["K1"] >= algo["K"]:
            raise ConfigError("algorithm.K1", f"must be smaller than K={algo['K']}", algo["K1"])
    if algo["name"] in SCHEDULED_ALGORITHMS:
        if not algo["schedule"]:
            raise ConfigError("algorithm.schedule", "a threshold schedule is required")
        total = sum(level["iterations"] for level in algo["schedule"])
        if total != algo["K"]:
            raise ConfigError("algorithm.schedule", f"iterations sum to {total}, K={algo['K']}", total)
        deltas = [level["delta"] for level in algo["schedule"]]
        if any(b >= a for a, b in zip(deltas, deltas[1:], strict=False)):
            raise ConfigError("algorithm.schedule", "thresholds must be strictly decreasing", deltas)

    if algo["name"] == ALGO_GIBBS and cfg["model"]["id"] != MODEL_NONLINEAR_GAUSSIAN:
        raise ConfigError("algorithm.name", "the Gibbs sampler is specific to the nonlinear Gaussian model")
    if algo["name"] == ALGO_PMM:
        missing = names - set(algo["priors"])
        if missing:
            raise ConfigError("algorithm.priors", f"missing priors for {sorted(missing)}")
    for pname, prior in algo["priors"].items():
        try:
            Prior(prior["family"], prior.get("lo"), prior.get("hi"))
        except ValueError as err:
            raise ConfigError(f"algorithm.priors.{pname}", str(err)) from None

    start = cfg["start"]
    key = "value" if start["law"] == "fixed" else "center"
    if key not in start:
        raise ConfigError(f"start.{key}", f"required for the '{start['law']}' starting law")
    if set(start[key]) != names:
        raise ConfigError(f"start.{key}", f"expected parameters {sorted(names)}", sorted(start[key]))


# =============================================================================
# Typed view


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment document with builders for the run objects."""

    document: dict

    @classmethod
    def from_document(cls, raw: dict) -> ExperimentConfig:
        return cls(validate_config(raw))

    @property
    def model_id(self) -> str:
        return self.document["model"]["id"]

    @property
    def algorithm(self) -> dict:
        return self.document["algorithm"]

    @property
    def algorithm_name(self) -> str:
        return self.algorithm["name"]

    @property
    def replicates(self) -> int:
        return self.document["replicates"]

    @property
    def seed(self) -> int:
        return self.document["seed"]

    @property
    def jobs(self) -> int:
        return self.document["jobs"]

    @property
    def data_mode(self) -> str:
        return self.document["data_mode"]

    @property
    def log_scale_report(self) -> bool:
        return self.document["log_scale_report"]

    @property
    def label(self) -> str:
        algo = self.algorithm
        if algo["name"] in (ALGO_SAEM_ABC, ALGO_SAEM_SMC, ALGO_PMM):
            return f"{algo['name']} ({algo['M']},{algo['M_bar']})"
        return algo["name"]

    def build_model(self) -> StateSpaceModel:
        cls = MODEL_CLASSES[self.model_id]
        options = self.document["model"]["options"]
        if self.model_id == MODEL_LINEAR_GAUSSIAN:
            return cls(**options)
        return cls()

    def time_grid(self) -> TimeGrid:
        grid = self.document["grid"]
        return TimeGrid(n=grid["n"], delta=grid["delta"], substeps=grid["substeps"], t0=grid["t0"])

    def true_theta(self) -> ParameterVector:
        return self.build_model().parameters(**self.document["model"]["theta"])

    def step_sizes(self) -> StepSizeSchedule:
        return StepSizeSchedule(K=self.algorithm["K"], K1=self.algorithm["K1"])

    def threshold_schedule(self) -> ThresholdSchedule:
        return ThresholdSchedule(
            tuple((level["delta"], level["iterations"]) for level in self.algorithm["schedule"])
        )

    def simulation_spec(self):
        algo = self.algorithm
        if algo["name"] == ALGO_SAEM_ABC:
            return AbcFilterSpec(self.threshold_schedule(), algo["M"], algo["M_bar"], KernelSpec(algo["kernel"]))
        if algo["name"] == ALGO_SAEM_SMC:
            return BootstrapFilterSpec(algo["M"], algo["M_bar"])
        if algo["name"] == ALGO_REJECTION_SAEM:
            return RejectionSpec(self.threshold_schedule(), algo["max_attempts"])
        raise ConfigError("algorithm.name", f"'{algo['name']}' is not an SAEM algorithm")

    def priors(self) -> PriorSpec:
        return PriorSpec(
            {
                name: Prior(p["family"], p.get("lo"), p.get("hi"))
                for name, p in self.algorithm["priors"].items()
            }
        )

    def target_acceptance(self) -> float:
        default = DEFAULT_PMM_TARGET_ACCEPTANCE if self.algorithm_name == ALGO_PMM else DEFAULT_GIBBS_TARGET_ACCEPTANCE
        return self.algorithm.get("target_acceptance", default)

    def proposal_step(self) -> float:
        default = DEFAULT_PMM_STEP if self.algorithm_name == ALGO_PMM else DEFAULT_GIBBS_STEP
        return self.algorithm.get("step", default)

    def starting_values(self, rng: np.random.Generator) -> ParameterVector:
        """Fixed value, or Gaussian on the working scale around the center."""
        model = self.build_model()
        start = self.document["start"]
        if start["law"] == "fixed":
            return model.parameters(**start["value"])
        center = model.parameters(**start["center"])
        working = center.to_working() + start["sd"] * rng.standard_normal(len(center))
        return center.with_working(working)


def load_config(
    path: str | Path | None = None,
    *,
    preset: str | None = None,
    overrides: list[tuple[str, Any]] | None = None,
    seed: int | None = None,
    jobs: int | None = None,
) -> ExperimentConfig:
    """Read a config file or preset, apply CLI overrides, validate."""
    if path is not None:
        raw = load_document(path)
    elif preset is not None:
        raw = load_preset(preset)
    else:
        raise ConfigError("config", "either --config or --preset is required")
    extra = list(overrides or [])
    if seed is not None:
        extra.append(("seed", seed))
    if jobs is not None:
        extra.append(("jobs", jobs))
    raw = apply_overrides(raw, extra)
    cfg = ExperimentConfig.from_document(raw)
    _LOGGER.debug(f"✅ Config validated: {cfg.label}, model {cfg.model_id}, {cfg.replicates} replicate(s)")
    return cfg

"""
experiment.py  (replicated experiment orchestration)

What this module does
---------------------
- cmd_generate: simulate a dataset from the configured model and write
  dataset.csv (time,y at sampling times) plus dataset_truth.csv (time,x_true
  on the fine grid, N+1 rows).
- cmd_estimate: run the configured algorithm for every replicate, in
  parallel up to --jobs, and write one trace and one diagnostics file per
  replicate, report.csv and the aggregate table.
- cmd_summarize: medians and quartiles from one or more report files,
  merged into a single table.
- cmd_diagnose: run the configured particle filter repeatedly at the true
  parameter and summarise ESS and distinct-particle counts.

Replicate seeds are seed_i = master XOR i. Each replicate splits its seed into
independent streams for data (fresh mode), starting values and the algorithm.
Workers only compute; the collector coroutine writes every file.

Quartiles use linear interpolation between order statistics.
"""

from __future__ import annotations

import asyncio
import logging
import time
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .bayes import NLG_GIBBS_PRIORS, gibbs_run, pmm_run
from .config import SAEM_ALGORITHMS, ExperimentConfig
from .const import ALGO_GIBBS, ALGO_PMM, ALGO_SAEM_ABC, ALGO_SAEM_SMC, DATA_MODE_FRESH
from .exceptions import ConfigError, ContractViolation, SaemAbcError
from .filters import run_abc_smc, run_bootstrap
from .helpers import quartiles
from .kernels import KernelSpec
from .model import LatentPath, ObservationSeries, TimeGrid, simulate_dataset
from .saem import run_saem

_LOGGER = logging.getLogger(__name__)

DATASET_FILE = "dataset.csv"
TRUTH_FILE = "dataset_truth.csv"
REPORT_FILE = "report.csv"
SUMMARY_CSV = "summary.csv"
SUMMARY_TXT = "summary.txt"


# ---------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------


def write_dataset(path: Path, Y: ObservationSeries, X: LatentPath | None = None) -> Path:
    """time,y[,x_true] at the sampling times."""
    if Y.values.shape[1] != 1:
        raise ContractViolation("CSV datasets hold scalar observations only")
    frame = pd.DataFrame({"time": Y.times, "y": Y.values[:, 0]})
    if X is not None:
        frame["x_true"] = X.at_sampling_times()[:, 0]
    frame.to_csv(path, index=False)
    return path


def write_truth(path: Path, X: LatentPath) -> Path:
    """time,x_true over the whole fine grid, x_0 included."""
    frame = pd.DataFrame({"time": X.grid.fine_times, "x_true": X.full()[:, 0]})
    frame.to_csv(path, index=False)
    return path


def read_dataset(path: str | Path, grid: TimeGrid) -> ObservationSeries:
    frame = pd.read_csv(path)
    if "y" not in frame.columns:
        raise ContractViolation(f"{path}: no 'y' column")
    if len(frame) != grid.n:
        raise ContractViolation(f"{path}: {len(frame)} rows, config grid has n={grid.n}")
    if "time" in frame.columns and not np.allclose(frame["time"].to_numpy(), grid.sampling_times):
        raise ContractViolation(f"{path}: time column does not match the config grid")
    return ObservationSeries(frame["y"].to_numpy(dtype=float), grid)


def cmd_generate(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    """Simulate one dataset under the master seed and write it with its truth."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.build_model()
    X, Y = simulate_dataset(model, cfg.time_grid(), cfg.true_theta(), np.random.default_rng(cfg.seed))
    dataset = write_dataset(out / DATASET_FILE, Y)
    write_truth(out / TRUTH_FILE, X)
    _LOGGER.info("Dataset written to %s (n=%d, N=%d)", dataset, Y.n, X.grid.N)
    return dataset


# ---------------------------------------------------------------------
# Replicates
# ---------------------------------------------------------------------


def replicate_seed(master: int, index: int) -> int:
    return master ^ index


@dataclass
class ReplicateOutcome:
    replicate: int
    seed: int
    status: str  # "ok" | "failed"
    estimates: dict[str, float] = field(default_factory=dict)
    se: dict[str, float] = field(default_factory=dict)
    trace: pd.DataFrame | None = None
    diagnostics: pd.DataFrame | None = None
    ess_mean: float = float("nan")
    distinct_mean: float = float("nan")
    wall_time: float = 0.0
    error: str = ""


def run_replicate(document: dict, replicate: int, observations: np.ndarray | None) -> ReplicateOutcome:
    """Worker entry point; takes plain data so it can cross process boundaries."""
    cfg = ExperimentConfig(document)
    seed = replicate_seed(cfg.seed, replicate)
    data_rng, start_rng, algo_rng = np.random.default_rng(seed).spawn(3)
    started = time.perf_counter()
    try:
        model = cfg.build_model()
        grid = cfg.time_grid()
        if observations is None:
            _, Y = simulate_dataset(model, grid, cfg.true_theta(), data_rng)
        else:
            Y = ObservationSeries(observations, grid)
        theta0 = cfg.starting_values(start_rng)
        outcome = _run_algorithm(cfg, model, Y, theta0, algo_rng)
    except (SaemAbcError, FloatingPointError, np.linalg.LinAlgError) as err:
        _LOGGER.warning("⚠️ Replicate %d failed: %s", replicate, err)
        return ReplicateOutcome(
            replicate=replicate,
            seed=seed,
            status="failed",
            wall_time=time.perf_counter() - started,
            error=f"{type(err).__name__}: {err}",
        )
    outcome.replicate = replicate
    outcome.seed = seed
    outcome.wall_time = time.perf_counter() - started
    return outcome


def _run_algorithm(cfg: ExperimentConfig, model, Y, theta0, rng) -> ReplicateOutcome:
    algo = cfg.algorithm
    if cfg.algorithm_name in SAEM_ALGORITHMS:
        result = run_saem(
            model, Y, theta0, cfg.step_sizes(), cfg.simulation_spec(), rng, fisher=algo["fisher"]
        )
        diag = result.last_diagnostics
        trace = result.trace.to_frame()
        return ReplicateOutcome(
            replicate=-1,
            seed=-1,
            status="ok",
            estimates=result.theta.as_dict(),
            se=dict(zip(result.theta.names, result.se.tolist(), strict=True)),
            trace=trace,
            diagnostics=None if diag is None else diag.to_frame(),
            ess_mean=float(trace["ess_mean"].mean()),
            distinct_mean=float(trace["distinct_mean"].mean()),
        )

    if cfg.algorithm_name == ALGO_GIBBS:
        chain = gibbs_run(
            Y,
            theta0,
            algo["chain_length"],
            rng,
            priors=cfg.priors() if algo["priors"] else NLG_GIBBS_PRIORS,
            step=cfg.proposal_step(),
            target_acceptance=cfg.target_acceptance(),
            x0=model.x0,
        )
    elif cfg.algorithm_name == ALGO_PMM:
        chain = pmm_run(
            model,
            Y,
            cfg.priors(),
            theta0,
            algo["M"],
            algo["chain_length"],
            cfg.target_acceptance(),
            rng,
            M_bar=algo["M_bar"],
            step=cfg.proposal_step(),
        )
    else:
        raise ConfigError("algorithm.name", f"unsupported algorithm '{cfg.algorithm_name}'")

    names = chain.parameter_names
    return ReplicateOutcome(
        replicate=-1,
        seed=-1,
        status="ok",
        estimates=dict(zip(names, chain.posterior_mean(algo["burn_in"]).tolist(), strict=True)),
        se=dict(zip(names, chain.posterior_sd(algo["burn_in"]).tolist(), strict=True)),
        trace=chain.to_frame(),
    )


def _make_executor(jobs: int) -> Executor:
    if jobs <= 1:
        return ThreadPoolExecutor(max_workers=1)
    return ProcessPoolExecutor(max_workers=jobs)


async def async_run_replicates(
    cfg: ExperimentConfig, observations: np.ndarray | None
) -> list[ReplicateOutcome]:
    """Fan replicates out to an executor and gather them in replicate order."""
    loop = asyncio.get_running_loop()
    with _make_executor(cfg.jobs) as executor:
        tasks = [
            loop.run_in_executor(executor, run_replicate, cfg.document, i, observations)
            for i in range(cfg.replicates)
        ]
        outcomes = await asyncio.gather(*tasks, return_exceptions=True)

    collected = []
    for i, outcome in enumerate(outcomes):
        if isinstance(outcome, BaseException):
            _LOGGER.exception("❌ Replicate %d crashed", i, exc_info=outcome)
            outcome = ReplicateOutcome(
                replicate=i,
                seed=replicate_seed(cfg.seed, i),
                status="failed",
                error=f"{type(outcome).__name__}: {outcome}",
            )
        collected.append(outcome)
    return collected


# ---------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------


def aggregate(frame: pd.DataFrame, parameter_names, *, log_scale: bool = False) -> pd.DataFrame:
    """Median and quartiles per parameter over successful replicates."""
    ok = frame[frame["status"] == "ok"]
    rows = []
    for name in parameter_names:
        values = ok[name].to_numpy(dtype=float)
        label = name
        if log_scale:
            with np.errstate(divide="ignore", invalid="ignore"):
                values = np.log(values)
            label = f"log_{name}"
        median, q1, q3 = quartiles(values)
        rows.append({"parameter": label, "median": median, "q1": q1, "q3": q3, "n": int(np.isfinite(values).sum())})
    return pd.DataFrame(rows, columns=["parameter", "median", "q1", "q3", "n"])


@dataclass
class ExperimentReport:
    label: str
    algorithm: str
    parameter_names: tuple[str, ...]
    frame: pd.DataFrame  # one row per replicate
    aggregate: pd.DataFrame
    path: Path | None = None

    @property
    def n_succeeded(self) -> int:
        return int((self.frame["status"] == "ok").sum())

    @property
    def n_failed(self) -> int:
        return int((self.frame["status"] != "ok").sum())

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, *, log_scale: bool = False, path: Path | None = None) -> ExperimentReport:
        names = tuple(c for c in frame.columns if c.startswith("param_"))
        params = tuple(c.removeprefix("param_") for c in names)
        renamed = frame.rename(columns=dict(zip(names, params, strict=True)))
        return cls(
            label=str(frame["label"].iloc[0]) if len(frame) else "",
            algorithm=str(frame["algorithm"].iloc[0]) if len(frame) else "",
            parameter_names=params,
            frame=renamed,
            aggregate=aggregate(renamed, params, log_scale=log_scale),
            path=path,
        )

    def to_csv_frame(self) -> pd.DataFrame:
        return self.frame.rename(columns={p: f"param_{p}" for p in self.parameter_names})


def load_report(path: str | Path, *, log_scale: bool = False) -> ExperimentReport:
    path = Path(path)
    frame = pd.read_csv(path, keep_default_na=True)
    if "status" not in frame.columns or "label" not in frame.columns:
        raise ContractViolation(f"{path}: not a report file")
    frame["error"] = frame["error"].fillna("") if "error" in frame.columns else ""
    return ExperimentReport.from_frame(frame, log_scale=log_scale, path=path)


def _report_rows(cfg: ExperimentConfig, outcomes, names, out: Path) -> pd.DataFrame:
    rows = []
    for o in outcomes:
        row = {"replicate": o.replicate, "seed": o.seed, "label": cfg.label, "algorithm": cfg.algorithm_name, "status": o.status}
        for name in names:
            row[f"param_{name}"] = o.estimates.get(name, np.nan)
        for name in names:
            row[f"se_{name}"] = o.se.get(name, np.nan)
        row["ess_mean"] = o.ess_mean
        row["distinct_mean"] = o.distinct_mean

        trace_path = diag_path = ""
        if o.trace is not None:
            trace_path = f"traces/rep_{o.replicate:03d}.csv"
            o.trace.to_csv(out / trace_path, index=False)
        if o.diagnostics is not None:
            diag_path = f"diagnostics/rep_{o.replicate:03d}.csv"
            o.diagnostics.to_csv(out / diag_path, index=False)
        row["trace_path"] = trace_path
        row["diagnostics_path"] = diag_path
        row["wall_time"] = round(o.wall_time, 3)
        row["error"] = o.error
        rows.append(row)
    return pd.DataFrame(rows)


def cmd_estimate(
    cfg: ExperimentConfig, dataset: str | Path | None, out_dir: str | Path
) -> ExperimentReport:
    """Run every replicate and write traces, diagnostics, report and summary."""
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "diagnostics").mkdir(parents=True, exist_ok=True)
    grid = cfg.time_grid()

    if cfg.data_mode == DATA_MODE_FRESH:
        if dataset is not None:
            _LOGGER.warning("⚠️ data_mode is 'fresh'; ignoring dataset %s", dataset)
        observations = None
    elif dataset is not None:
        observations = read_dataset(dataset, grid).values
    else:
        observations = read_dataset(cmd_generate(cfg, out), grid).values

    started = time.perf_counter()
    _LOGGER.info("Estimating %s: %d replicate(s), %d job(s)", cfg.label, cfg.replicates, cfg.jobs)
    outcomes = asyncio.run(async_run_replicates(cfg, observations))

    names = cfg.build_model().parameter_names
    frame = _report_rows(cfg, outcomes, names, out)
    frame.to_csv(out / REPORT_FILE, index=False)
    report = ExperimentReport.from_frame(frame, log_scale=cfg.log_scale_report, path=out / REPORT_FILE)

    summary = summary_table([report])
    summary.to_csv(out / SUMMARY_CSV, index=False)
    (out / SUMMARY_TXT).write_text(format_summary(summary), encoding="utf-8")

    _LOGGER.info(
        "Done in %.1fs: %d succeeded, %d failed",
        time.perf_counter() - started,
        report.n_succeeded,
        report.n_failed,
    )
    return report


# ---------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------


def summary_table(reports: list[ExperimentReport]) -> pd.DataFrame:
    """Long table: label, parameter, median, q1, q3, n, failed."""
    if not reports:
        raise ContractViolation("Need at least one report to summarise")
    expected = set(reports[0].parameter_names)
    frames = []
    for report in reports:
        if set(report.parameter_names) != expected:
            raise ContractViolation(
                f"Incompatible parameter sets: {sorted(expected)} vs {sorted(report.parameter_names)}"
            )
        agg = report.aggregate.copy()
        agg.insert(0, "label", report.label)
        agg["failed"] = report.n_failed
        frames.append(agg)
    return pd.concat(frames, ignore_index=True)


def format_summary(table: pd.DataFrame) -> str:
    """One block per parameter, one aligned row per algorithm: median [Q1,Q3]."""
    width = max(len(str(label)) for label in table["label"]) + 2
    lines = []
    for parameter, block in table.groupby("parameter", sort=False):
        lines.append(f"{parameter}")
        for _, row in block.iterrows():
            cell = f"{row['median']:.2f} [{row['q1']:.2f},{row['q3']:.2f}]"
            note = f"  ({int(row['failed'])} failed)" if row["failed"] else ""
            lines.append(f"  {str(row['label']).ljust(width)}{cell}{note}")
        lines.append("")
    return "\n".join(lines)


def cmd_summarize(
    report_paths, out_dir: str | Path | None = None, *, log_scale: bool = False
) -> pd.DataFrame:
    reports = [load_report(p, log_scale=log_scale) for p in report_paths]
    table = summary_table(reports)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / SUMMARY_CSV, index=False)
        (out / SUMMARY_TXT).write_text(format_summary(table), encoding="utf-8")
    return table


# ---------------------------------------------------------------------
# Filter diagnostics
# ---------------------------------------------------------------------


def cmd_diagnose(
    cfg: ExperimentConfig, dataset: str | Path | None, out_dir: str | Path | None = None
) -> pd.DataFrame:
    """Repeated filter runs at the true parameter; ESS and distinct-particle summary.

    The ABC filter uses the last threshold of the schedule.
    """
    if cfg.algorithm_name not in (ALGO_SAEM_ABC, ALGO_SAEM_SMC):
        raise ConfigError("algorithm.name", "diagnose needs saem-abc or saem-smc", cfg.algorithm_name)
    model = cfg.build_model()
    grid = cfg.time_grid()
    theta = cfg.true_theta()
    if dataset is not None:
        Y = read_dataset(dataset, grid)
    else:
        _, Y = simulate_dataset(model, grid, theta, np.random.default_rng(cfg.seed))

    algo = cfg.algorithm
    repetitions = cfg.document["diagnose"]["repetitions"]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "diagnostics").mkdir(parents=True, exist_ok=True)

    rows = []
    for r in range(repetitions):
        rng = np.random.default_rng(replicate_seed(cfg.seed, r))
        if cfg.algorithm_name == ALGO_SAEM_ABC:
            delta = cfg.threshold_schedule().deltas[-1]
            _, diag = run_abc_smc(model, Y, theta, algo["M"], algo["M_bar"], delta, KernelSpec(algo["kernel"]), rng)
        else:
            _, diag = run_bootstrap(model, Y, theta, algo["M"], algo["M_bar"], rng)
        if out is not None:
            diag.to_frame().to_csv(out / "diagnostics" / f"run_{r:03d}.csv", index=False)
        rows.append(
            {
                "ess_mean": diag.ess_mean,
                "distinct_mean": diag.distinct_mean,
                "resample_events": diag.resample_events.size,
                "distinct_drops": diag.distinct_drops,
                "final_ess": diag.final_ess,
            }
        )

    runs = pd.DataFrame(rows)
    summary = pd.DataFrame(
        [
            {
                "label": cfg.label,
                "metric": metric,
                "mean": float(runs[metric].mean()),
                "sd": float(runs[metric].std(ddof=1)) if len(runs) > 1 else float("nan"),
                "runs": len(runs),
            }
            for metric in runs.columns
        ]
    )
    if out is not None:
        summary.to_csv(out / "diagnose_summary.csv", index=False)
    for _, row in summary.iterrows():
        _LOGGER.info("%s %s: %.2f (%.2f)", row["label"], row["metric"], row["mean"], row["sd"])
    return summary

"""
Batch experiments: benchmark generation, multi-seed runs of the method variants, the replay-size
sweep and the seed-stability study. Every command writes machine-readable reports.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from datetime import datetime, timezone
from functools import partial
from pathlib import Path
from time import perf_counter
from typing import Any, TypeVar

import anyio
import anyio.to_thread
import pandas as pd

from .base import atomic_write_text, content_hash, write_json
from .data import (
    DomainDataset,
    Scenario,
    generate_domain,
    load_dataset,
    save_dataset,
    save_scenario,
)
from .evaluation import MetricReport, MetricSummary, summarize
from .exceptions import ConfigError, MissingArtifactError
from .settings import EverAdaptSettings, get_settings
from .trainer import AdaptationRun, run_sequence
from .types import AdaptMode

logger = logging.getLogger(__name__)

T = TypeVar("T")

VARIANTS: dict[str, dict[str, Any]] = {
    "everadapt": {"norm_mode": "CBN"},
    "bn_baseline": {"norm_mode": "BN"},
    "cca_only": {"norm_mode": "BN", "use_entropy": False, "use_replay": False},
    "cca_replay": {"norm_mode": "BN", "use_entropy": False},
    "cbn_no_entropy": {"norm_mode": "CBN", "use_entropy": False},
    "source_only": {"norm_mode": "CBN", "adapt": False},
}
"""TrainConfig overrides of every method variant."""

STABILITY_VARIANTS = ("everadapt", "cbn_no_entropy", "bn_baseline")
DEFAULT_FRACTIONS = (0.01, 0.05, 0.10)
METRIC_COLUMNS = [
    "mode",
    "scenario",
    "seed",
    "ACC",
    "ACC_std",
    "BWT",
    "BWT_std",
    "ADAPT",
    "ADAPT_std",
]
FLOAT_FORMAT = "%.6f"


def run_jobs(jobs: Sequence[Callable[[], T]], workers: int = 1) -> list[T]:
    """
    Run independent jobs, in worker threads when `workers > 1`.

    Results come back in job order whatever the completion order.
    """
    if workers <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]

    async def gather() -> list[T]:
        limiter = anyio.CapacityLimiter(workers)
        results: list[Any] = [None] * len(jobs)

        async def run_one(index: int, job: Callable[[], T]) -> None:
            results[index] = await anyio.to_thread.run_sync(job, limiter=limiter)

        async with anyio.create_task_group() as task_group:
            for index, job in enumerate(jobs):
                task_group.start_soon(run_one, index, job)
        return results

    return anyio.run(gather)


def data_dir_of(out: Path) -> Path:
    return out / "data"


def generate_benchmark(settings: EverAdaptSettings) -> dict[str, DomainDataset]:
    data = settings.data
    return {
        domain_id: generate_domain(
            spec.model_copy(update={"n_per_class": data.n_per_class}),
            data.window_len,
            data.seed,
            sample_rate=data.sample_rate,
        )
        for domain_id, spec in sorted(data.domains.items())
    }


def _resolve(settings: EverAdaptSettings | None) -> EverAdaptSettings:
    """The given settings, else the active ones (see `monkay.with_settings`)."""
    return settings if settings is not None else get_settings()


def cmd_gen_data(out: Path, *, settings: EverAdaptSettings | None = None) -> Path:
    """
    Write every domain of the benchmark and the scenario files under `<out>/data`.
    """
    settings = _resolve(settings)
    directory = data_dir_of(out)
    for domain_id, dataset in generate_benchmark(settings).items():
        save_dataset(dataset, directory / domain_id)
    for name, scenario in sorted(settings.scenario.scenarios.items()):
        save_scenario(scenario, directory / "scenarios" / f"scenario_{name}.json")
    write_json(directory / "manifest.json", {"data": settings.data.model_dump(mode="json")})
    logger.info("Benchmark written to %s.", directory, extra={"path": str(directory)})
    return directory


def load_benchmark(data_dir: Path, scenario: Scenario) -> tuple[DomainDataset, list[DomainDataset]]:
    if not data_dir.is_dir():
        raise MissingArtifactError(f"No benchmark at {data_dir}; run `everadapt gen-data` first.")
    source = load_dataset(data_dir / scenario.source)
    return source, [load_dataset(data_dir / domain) for domain in scenario.targets]


def input_files(data_dir: Path) -> list[Path]:
    return sorted(path for path in data_dir.rglob("*") if path.is_file())


@dataclass
class RunResult:
    mode: str
    scenario: str
    seed: int
    run: AdaptationRun
    seconds: float
    adapt_mode: AdaptMode = "corrected"

    @property
    def report(self) -> MetricReport:
        return self.run.report(self.adapt_mode)


def _run_one(
    settings: EverAdaptSettings,
    data_dir: Path,
    scenario: Scenario,
    mode: str,
    seed: int,
    run_root: Path,
    overrides: dict[str, Any],
) -> RunResult:
    cfg = settings.build_train_config(seed, **{**VARIANTS[mode], **overrides})
    source, targets = load_benchmark(data_dir, scenario)
    started = perf_counter()
    run = run_sequence(
        source,
        targets,
        cfg,
        spec=settings.build_spec(),
        run_dir=run_root / mode / f"scenario_{scenario.name}" / f"seed_{seed}",
    )
    return RunResult(mode, scenario.name, seed, run, perf_counter() - started, cfg.adapt_mode)


def run_grid(
    settings: EverAdaptSettings,
    out: Path,
    run_root: Path,
    *,
    modes: Iterable[str],
    seeds: Iterable[int],
    overrides: dict[str, Any] | None = None,
) -> list[RunResult]:
    """Every (mode, scenario, seed) combination; parallel over `settings.workers` threads."""
    modes, seeds = list(modes), list(seeds)
    data_dir = data_dir_of(out)
    if not data_dir.is_dir():
        raise MissingArtifactError(f"No benchmark at {data_dir}; run `everadapt gen-data` first.")
    unknown = [mode for mode in modes if mode not in VARIANTS]
    if unknown:
        raise ConfigError(f"Unknown modes {unknown}; choose from {sorted(VARIANTS)}.")
    jobs = [
        partial(_run_one, settings, data_dir, scenario, mode, seed, run_root, overrides or {})
        for mode in modes
        for scenario in settings.scenario.selected()
        for seed in seeds
    ]
    return run_jobs(jobs, settings.workers)


def _metric_row(mode: str, scenario: str, seed: int | str, summary: MetricSummary) -> dict[str, Any]:
    return {
        "mode": mode,
        "scenario": scenario,
        "seed": seed,
        "ACC": summary.acc,
        "ACC_std": summary.acc_std,
        "BWT": summary.bwt,
        "BWT_std": summary.bwt_std,
        "ADAPT": summary.adapt,
        "ADAPT_std": summary.adapt_std,
    }


def metrics_frame(results: Sequence[RunResult]) -> pd.DataFrame:
    """
    Raw per-seed rows, then one `seed="mean"` row per mode and scenario with the population std.

    With several scenarios every mode also gets a `scenario="all"` summary.
    """
    rows = []
    for result in results:
        report = result.report
        rows.append(
            {
                "mode": result.mode,
                "scenario": result.scenario,
                "seed": result.seed,
                "ACC": report.acc,
                "ACC_std": math.nan,
                "BWT": report.bwt,
                "BWT_std": math.nan,
                "ADAPT": report.adapt,
                "ADAPT_std": math.nan,
            }
        )
    groups: dict[tuple[str, str], list[MetricReport]] = {}
    for result in results:
        groups.setdefault((result.mode, result.scenario), []).append(result.report)
    for (mode, scenario), reports in groups.items():
        rows.append(_metric_row(mode, scenario, "mean", summarize(reports)))
    scenarios = {result.scenario for result in results}
    if len(scenarios) > 1:
        for mode in dict.fromkeys(result.mode for result in results):
            reports = [result.report for result in results if result.mode == mode]
            rows.append(_metric_row(mode, "all", "mean", summarize(reports)))
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def _write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def _write_run_tables(results: Sequence[RunResult], run_root: Path) -> None:
    traces = []
    for result in results:
        directory = run_root / result.mode / f"scenario_{result.scenario}"
        _write_frame(
            result.run.result_matrix.to_frame().reset_index(),
            directory / f"result_matrix_seed{result.seed}.csv",
        )
        for stage, value in enumerate(result.run.first_target_trace(), start=1):
            traces.append(
                {
                    "mode": result.mode,
                    "scenario": result.scenario,
                    "seed": result.seed,
                    "stage": stage,
                    "accuracy": value,
                }
            )
    _write_frame(pd.DataFrame(traces), run_root / "first_target.csv")


def write_manifest(
    path: Path,
    *,
    command: str,
    settings: EverAdaptSettings,
    data_dir: Path,
    results: Sequence[RunResult],
    extra: dict[str, Any] | None = None,
) -> Path:
    files = input_files(data_dir)
    manifest = {
        "command": command,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "config": settings.model_dump(mode="json"),
        "input_hash": content_hash(files, settings.model_dump_json()),
        "runs": [
            {
                "mode": result.mode,
                "scenario": result.scenario,
                "seed": result.seed,
                "seconds": result.seconds,
                "source_accuracy": result.run.source_accuracy,
                "stages": result.run.stages,
            }
            for result in results
        ],
        **(extra or {}),
    }
    return write_json(path, manifest, atomic=True)


def cmd_run(
    out: Path,
    *,
    settings: EverAdaptSettings | None = None,
    modes: Sequence[str] = ("everadapt",),
    seeds: Sequence[int] | None = None,
) -> pd.DataFrame:
    """
    Run the selected variants over every seed and scenario; writes `<out>/run/metrics.csv` with a
    JSON mirror, the per-run result matrices and the first-target forgetting trace.
    """
    settings = _resolve(settings)
    seeds = list(seeds if seeds is not None else range(settings.seeds))
    report_dir = out / "run"
    results = run_grid(settings, out, report_dir / "runs", modes=modes, seeds=seeds)
    frame = metrics_frame(results)
    _write_frame(frame, report_dir / "metrics.csv")
    atomic_write_text(report_dir / "metrics.json", frame.to_json(orient="records", indent=2) + "\n")
    _write_run_tables(results, report_dir / "runs")
    write_manifest(
        report_dir / "manifest.json",
        command="run",
        settings=settings,
        data_dir=data_dir_of(out),
        results=results,
        extra={"modes": list(modes), "seeds": seeds},
    )
    logger.info("Metrics written to %s.", report_dir, extra={"path": str(report_dir)})
    return frame


def check_fractions(fractions: Iterable[float]) -> list[float]:
    fractions = list(fractions)
    bad = [fraction for fraction in fractions if not 0.0 < fraction <= 1.0]
    if not fractions or bad:
        raise ConfigError(f"Replay fractions must lie in (0, 1], got {fractions}.")
    return fractions


def cmd_replay_study(
    out: Path,
    *,
    settings: EverAdaptSettings | None = None,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seeds: Sequence[int] | None = None,
) -> pd.DataFrame:
    """
    BWT as a function of the replay fraction, with and without continual normalization.

    Writes `replay_study.csv` (one row per fraction and normalization) and a wide
    `replay_study_plot.csv` with one BWT column per normalization.
    """
    settings = _resolve(settings)
    fractions = check_fractions(fractions)
    seeds = list(seeds if seeds is not None else range(settings.seeds))
    report_dir = out / "replay_study"
    rows = []
    all_results: list[RunResult] = []
    for fraction in fractions:
        for cbn, mode in ((True, "everadapt"), (False, "bn_baseline")):
            results = run_grid(
                settings,
                out,
                report_dir / "runs" / f"fraction_{fraction:g}",
                modes=[mode],
                seeds=seeds,
                overrides={"replay_fraction": fraction},
            )
            all_results.extend(results)
            summary = summarize([result.report for result in results])
            rows.append(
                {
                    "fraction": fraction,
                    "cbn": cbn,
                    "ACC": summary.acc,
                    "BWT": summary.bwt,
                    "BWT_std": summary.bwt_std,
                    "ADAPT": summary.adapt,
                }
            )
    frame = pd.DataFrame(rows)
    _write_frame(frame, report_dir / "replay_study.csv")
    plot = frame.pivot(index="fraction", columns="cbn", values="BWT").rename(
        columns={True: "BWT_cbn", False: "BWT_no_cbn"}
    )
    plot.columns.name = None
    _write_frame(plot.reset_index(), report_dir / "replay_study_plot.csv")
    write_manifest(
        report_dir / "manifest.json",
        command="replay-study",
        settings=settings,
        data_dir=data_dir_of(out),
        results=all_results,
        extra={"fractions": fractions, "seeds": seeds},
    )
    return frame


def cmd_stability_study(
    out: Path,
    *,
    settings: EverAdaptSettings | None = None,
    seeds: Sequence[int] | None = None,
) -> pd.DataFrame:
    """
    Spread of the final accuracy over seeds for the full method, the variant without entropy
    and conventional normalization. All variants share the same seeds.
    """
    settings = _resolve(settings)
    seeds = list(seeds if seeds is not None else range(settings.seeds))
    if len(seeds) < 5:
        logger.warning("Stability study over only %d seeds.", len(seeds))
    report_dir = out / "stability_study"
    results = run_grid(settings, out, report_dir / "runs", modes=STABILITY_VARIANTS, seeds=seeds)
    raw = pd.DataFrame(
        [
            {
                "mode": result.mode,
                "scenario": result.scenario,
                "seed": result.seed,
                "ACC": result.report.acc,
            }
            for result in results
        ]
    )
    summary = (
        raw.groupby("mode", sort=False)["ACC"]
        .agg(min="min", median="median", max="max")
        .reset_index()
    )
    summary["range"] = summary["max"] - summary["min"]
    _write_frame(raw, report_dir / "stability_study_raw.csv")
    _write_frame(summary, report_dir / "stability_study.csv")
    write_manifest(
        report_dir / "manifest.json",
        command="stability-study",
        settings=settings,
        data_dir=data_dir_of(out),
        results=results,
        extra={"seeds": seeds},
    )
    return summary


REPORT_FILES = (
    Path("run") / "metrics.csv",
    Path("replay_study") / "replay_study.csv",
    Path("stability_study") / "stability_study.csv",
)


def cmd_report(out: Path) -> dict[str, pd.DataFrame]:
    """Load every metric table found under `out`."""
    tables = {
        str(relative): pd.read_csv(out / relative)
        for relative in REPORT_FILES
        if (out / relative).is_file()
    }
    if not tables:
        raise MissingArtifactError(f"No reports under {out}; run an experiment first.")
    return tables


"""Experiment runner: config parsing, single runs, sweeps and reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .learners import VARIANT_AXES, AlgorithmConfig, Learner, NumericalDivergence
from .metrics import AccuracyMatrix, RunRecord, aggregate, evaluate_row
from .streams import (
    DataError,
    StreamSchedule,
    TaskStream,
    iterate,
    load_mnist,
    make_permutations,
    make_rotations,
    make_synthetic,
)

log = logging.getLogger(__name__)

BENCHMARKS = ("rotations", "permutations", "many_permutations", "synthetic")
SWEEP_AXES = ("alpha0", "beta", "eta", "glances")
ALGORITHM_KEYS = tuple(f.name for f in fields(AlgorithmConfig))


class ConfigError(ValueError):
    pass


class ReportError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    benchmark: str = "synthetic"
    tasks: Optional[int] = None
    per_task: Optional[int] = None
    dim: int = 20
    classes: int = 10
    hidden: list = field(default_factory=lambda: [100, 100])
    stream_seed: int = 0
    eval_test_size: int = 500

    pass_mode: str = "single"
    epochs: int = 1
    batch_size: int = 10

    variant: str = "la_maml"
    alpha0: float = 0.25
    beta: float = 0.3
    eta: float = 0.1
    glances: int = 5
    replay_sample: int = 10
    buffer_capacity: int = 200
    inner_batch_size: Optional[int] = None
    meta_loss_at: str = "every_step"
    clip_alpha: bool = True
    grad_clip_norm: Optional[float] = 2.0

    seeds: list = field(default_factory=lambda: [0, 1, 2])
    data_dir: Optional[str] = None
    output_dir: str = "runs"

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ConfigError(f"benchmark must be one of {BENCHMARKS}, not {self.benchmark!r}")
        try:
            self.algorithm().validate_rates()
            self.schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.eval_test_size < 1:
            raise ConfigError("eval_test_size must be >= 1")
        if any(int(h) < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")

    def algorithm(self) -> AlgorithmConfig:
        return AlgorithmConfig(**{k: getattr(self, k) for k in ALGORITHM_KEYS})

    def schedule(self) -> StreamSchedule:
        return StreamSchedule(self.pass_mode, self.epochs, self.batch_size, self.glances)

    def to_dict(self) -> dict:
        return asdict(self)

    def snapshot(self) -> dict:
        """Everything that determines a run's results, minus the seed list."""
        d = self.to_dict()
        d.pop("seeds")
        d.pop("output_dir")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig(**d)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, value):
    kind = _TYPES[key]
    if value is None:
        return None
    if kind in ("int", "Optional[int]"):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if kind in ("float", "Optional[float]"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if kind == "list":
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list, got {value!r}")
        return [int(v) for v in value]
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def config_from_dict(d: dict) -> ExperimentConfig:
    unknown = sorted(set(d) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in d.items()})


def load_config(path) -> ExperimentConfig:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    nested = [k for k, v in raw.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config must be flat; found tables {nested}")
    return config_from_dict(raw)


def build_stream(config: ExperimentConfig) -> TaskStream:
    c = config
    if c.benchmark == "synthetic":
        return make_synthetic(c.tasks or 5, c.per_task if c.per_task is not None else 200, c.dim, c.classes,
                              seed=c.stream_seed, test_size=c.eval_test_size)
    data_dir = c.data_dir or os.environ.get("CLRUN_DATA_DIR")
    train, test = load_mnist(data_dir)
    if c.benchmark == "rotations":
        return make_rotations(train, test, c.tasks or 20, c.per_task or 1000, c.stream_seed, c.eval_test_size)
    return make_permutations(train, test, c.tasks, c.per_task, c.stream_seed,
                             many=c.benchmark == "many_permutations", test_size=c.eval_test_size)


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def record_path(output_dir, config: ExperimentConfig, seed: int) -> Path:
    name = f"{config.benchmark}_{config.variant}_{config.config_hash()}_seed{seed}.json"
    return Path(output_dir) / "records" / name


def _clock_info() -> dict:
    info = time.get_clock_info("perf_counter")
    return {"clock": "perf_counter", "implementation": info.implementation,
            "resolution": info.resolution, "monotonic": info.monotonic}


def run(
    config: ExperimentConfig,
    seed: int,
    output_dir=None,
    stream: Optional[TaskStream] = None,
    learner_factory: Optional[Callable] = None,
) -> RunRecord:
    """Train through the stream, evaluating every task after each stage.

    Divergence ends the run early with the partial matrix kept. The record is
    written to ``output_dir`` (when given) as JSON.
    """
    t_start = time.perf_counter()
    if stream is None:
        stream = build_stream(config)
    n_tasks = len(stream)
    dims = [stream.tasks[0].train_x.shape[1], *config.hidden, max(stream.n_classes, config.classes)]
    if learner_factory is None:
        learner = Learner(config.algorithm(), dims, seed)
    else:
        learner = learner_factory(config, dims, seed)
    shuffle_seed = np.random.SeedSequence(seed).spawn(3)[2]

    matrix = AccuracyMatrix(n_tasks)
    # Each task's time runs from the end of the previous stage to the end of
    # its own evaluation, so the per-task times add up to the training phase.
    task_seconds: list[float] = []
    eval_seconds: list[float] = []
    batch_times: list[list[float]] = [[] for _ in range(n_tasks)]
    alpha_stats: list = []
    divergence = None
    t_setup = time.perf_counter()
    stage_start = t_setup

    def finish_task(tid: int) -> None:
        nonlocal stage_start
        t0 = time.perf_counter()
        matrix.set_row(tid, evaluate_row(learner, stream))
        t1 = time.perf_counter()
        eval_seconds.append(t1 - t0)
        task_seconds.append(t1 - stage_start)
        stage_start = t1
        summary = getattr(learner, "alpha_summary", lambda: None)()
        if summary is not None:
            alpha_stats.append({"task": tid, **summary})

    current = 0
    try:
        for tid, batch in iterate(stream, config.schedule(), shuffle_seed):
            while tid != current:
                finish_task(current)
                current += 1
            t0 = time.perf_counter()
            learner.observe_batch(tid, batch)
            batch_times[tid].append(time.perf_counter() - t0)
        while current < n_tasks:
            finish_task(current)
            current += 1
    except NumericalDivergence as exc:
        divergence = {"task": current, "step": exc.step, "message": str(exc)}
        task_seconds.append(time.perf_counter() - stage_start)
        log.warning("run diverged: %s", exc)

    total = time.perf_counter() - t_start
    record = RunRecord(
        config=config.snapshot(),
        seed=int(seed),
        accuracy=matrix.tolist(),
        diverged=divergence is not None,
        divergence=divergence,
        alpha_stats=alpha_stats,
        stream_notes=list(stream.notes),
        gradient_evals=int(getattr(learner, "gradient_evals", 0)),
        timing={
            "total_seconds": total,
            "setup_seconds": t_setup - t_start,
            "task_seconds": task_seconds,
            "eval_seconds": eval_seconds,
            "batch_seconds_median": [float(np.median(b)) if b else None for b in batch_times],
            **_clock_info(),
        },
    )
    record.config["config_hash"] = config.config_hash()
    if output_dir is not None:
        write_atomic(record_path(output_dir, config, seed), json.dumps(record.to_dict(), indent=1))
    return record


def load_records(run_dir) -> list[RunRecord]:
    return [RunRecord.from_dict(json.loads(p.read_text())) for p in sorted(Path(run_dir).rglob("*.json"))]


# --- sweeps ----------------------------------------------------------------


def validate_axis(config: ExperimentConfig, axis: str) -> None:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, not {axis!r}")
    if axis not in VARIANT_AXES[config.variant]:
        raise ConfigError(f"{axis} is not a hyperparameter of {config.variant} (allowed: {VARIANT_AXES[config.variant]})")


@dataclass
class SweepResult:
    rows: list[dict]
    summary: list[dict]
    series_path: Path
    summary_path: Path
    figure_path: Optional[Path]

    @property
    def ra_spread(self) -> float:
        means = [r["RA_mean"] for r in self.summary if r["RA_mean"] == r["RA_mean"]]
        return max(means) - min(means) if means else float("nan")


def _csv_text(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def sweep(base: ExperimentConfig, axis: str, values: Sequence, seeds: Optional[Sequence[int]] = None,
          output_dir=None, plot: bool = True) -> SweepResult:
    """One run per (value, seed); writes the per-run series, an aggregated
    companion and a figure of RA against the swept value."""
    validate_axis(base, axis)
    seeds = list(seeds) if seeds is not None else list(base.seeds)
    out = Path(output_dir or base.output_dir)
    stream = None
    rows, summary = [], []
    for value in values:
        value = int(value) if axis == "glances" else float(value)
        config = base.replace(**{axis: value})
        if stream is None:
            stream = build_stream(config)
        records = [run(config, s, out, stream=stream) for s in seeds]
        for r in records:
            rows.append({"axis_value": value, "seed": r.seed,
                         "RA": "" if r.ra is None else round(r.ra, 6),
                         "BTI": "" if r.bti is None else round(r.bti, 6),
                         "diverged": int(r.diverged)})
        agg = aggregate(records)
        summary.append({"axis_value": value, "RA_mean": agg["ra_mean"], "RA_std": agg["ra_std"],
                        "n_diverged": agg["n_diverged"]})
    stem = f"sweep_{base.benchmark}_{base.variant}_{axis}"
    series_path = out / f"{stem}.csv"
    summary_path = out / f"{stem}_summary.csv"
    write_atomic(series_path, _csv_text(rows, ["axis_value", "seed", "RA", "BTI", "diverged"]))
    write_atomic(summary_path, _csv_text(
        [{**s, "RA_mean": round(s["RA_mean"], 6), "RA_std": round(s["RA_std"], 6)} for s in summary],
        ["axis_value", "RA_mean", "RA_std", "n_diverged"]))
    figure_path = None
    if plot:
        from .plots import plot_sweep

        figure_path = plot_sweep(summary, axis, f"{base.variant} on {base.benchmark}", out / f"{stem}.png")
    return SweepResult(rows, summary, series_path, summary_path, figure_path)


# --- reports ---------------------------------------------------------------


def _fmt(mean: float, std: float) -> str:
    if mean != mean:
        return "n/a"
    return f"{mean:.1f} ± {std:.1f}"


def summarize(records: list[RunRecord]) -> dict[str, list[dict]]:
    """Aggregate rows per benchmark, one per (variant, config hash)."""
    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.config["benchmark"], r.config["variant"], r.config.get("config_hash", "")), []).append(r)
    tables: dict[str, list[dict]] = {}
    for (bench, variant, chash), recs in sorted(groups.items()):
        agg = aggregate(recs, ignore=())
        tables.setdefault(bench, []).append({"benchmark": bench, "variant": variant, "config_hash": chash, **agg})
    return tables


def report(run_dir, output_dir=None, plot: bool = True) -> dict[str, Path]:
    """Markdown and CSV tables (plus figures) of mean ± std RA/BTI/runtime."""
    run_dir = Path(run_dir)
    records = load_records(run_dir) if run_dir.is_dir() else []
    if not records:
        raise ReportError(f"no run records found under {run_dir}")
    out = Path(output_dir or run_dir)
    tables = summarize(records)

    columns = ["benchmark", "variant", "config_hash", "n_runs", "n_clean", "n_diverged",
               "ra_mean", "ra_std", "bti_mean", "bti_std", "runtime_mean", "runtime_std"]
    flat = [row for rows in tables.values() for row in rows]
    paths = {"csv": out / "report.csv", "markdown": out / "report.md"}
    write_atomic(paths["csv"], _csv_text(flat, columns))

    lines = ["# Results", "",
             "RA: mean final accuracy over all tasks (%). BTI: mean over all T tasks of "
             "final minus just-learned accuracy (points; the last task's zero term is included). "
             "Runtime in seconds. Mean ± sample std over clean (non-divergent) seeds.", ""]
    for bench, rows in tables.items():
        lines += [f"## {bench}", "", "| variant | RA | BTI | runtime (s) | runs |", "|---|---|---|---|---|"]
        notes = []
        for row in rows:
            mark = ""
            if row["n_diverged"]:
                notes.append(row)
                mark = f"[^{bench}-{len(notes)}]"
            label = row["variant"] if len([r for r in rows if r["variant"] == row["variant"]]) == 1 \
                else f"{row['variant']} ({row['config_hash']})"
            lines.append(f"| {label} | {_fmt(row['ra_mean'], row['ra_std'])} | {_fmt(row['bti_mean'], row['bti_std'])} "
                         f"| {_fmt(row['runtime_mean'], row['runtime_std'])} | {row['n_clean']}{mark} |")
        lines.append("")
        for i, row in enumerate(notes, 1):
            lines.append(f"[^{bench}-{i}]: {row['n_diverged']} of {row['n_runs']} runs diverged and are excluded.")
        if notes:
            lines.append("")
        if plot:
            from .plots import plot_accuracy_matrices, plot_benchmark_summary

            fig = plot_benchmark_summary(rows, bench, out / f"report_{bench}.png")
            mats = plot_accuracy_matrices([r for r in records if r.config["benchmark"] == bench],
                                          out / f"matrices_{bench}.png")
            paths[f"figure_{bench}"] = fig
            paths[f"matrices_{bench}"] = mats
            lines += [f"![{bench} summary]({fig.name})", "", f"![{bench} accuracy matrices]({mats.name})", ""]
    write_atomic(paths["markdown"], "\n".join(lines))
    return paths

"""Benchmark harness: config loading, paired pipeline runs, sweeps, reports.

Every command is deterministic given (config, seed) except the wall-clock
fields. A run executes the plain and the clustered pipeline on identical
synthetic inputs and identical weights, then reports analytic FLOPs, median
wall time (after a warm-up), and reconstruction fidelity at the two
full-resolution checkpoints.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace

import numpy as np

from .flops import ArchSpec, FlopsReport, flops_pipeline
from .grid import ParameterError
from .minivit import (
    CHECKPOINT_Z_ALPHA_BETA,
    CHECKPOINT_Z_FINAL,
    PipelineConfig,
    measure_fidelity,
    random_pipeline_weights,
    run_pipeline,
)
from .container import NamedTensorContainer, save_container
from .synth import generate_synthetic_tokens

CSV_COLUMNS = [
    "config_id",
    "flops_total",
    "flops_ratio",
    "wall_ms_plain",
    "wall_ms_clustered",
    "cos_mean_z_alpha_beta",
    "cos_min_z_alpha_beta",
    "cos_mean_z_final",
    "cos_min_z_final",
]

SWEEP_AXES = ("cluster_size", "lambda", "kappa", "tau", "k", "alpha", "beta")


class ConfigError(ValueError):
    """The run configuration is malformed."""


@dataclass(frozen=True)
class SynthSpec:
    height: int
    width: int
    channels: int
    octaves: int = 4


@dataclass(frozen=True)
class OutputSpec:
    report_json: str | None = None
    report_csv: str | None = None
    dump_features: bool = False
    features_path: str | None = None

    def __post_init__(self):
        if self.dump_features and not self.features_path:
            raise ConfigError("outputs.dump_features requires outputs.features_path")


@dataclass(frozen=True)
class TimingSpec:
    repeats: int = 5
    warmup: int = 1

    def __post_init__(self):
        if self.repeats < 1 or self.warmup < 0:
            raise ConfigError("timing needs repeats >= 1 and warmup >= 0")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    arch: ArchSpec
    pipeline: PipelineConfig
    synth: SynthSpec
    outputs: OutputSpec = OutputSpec()
    timing: TimingSpec = TimingSpec()

    def __post_init__(self):
        if self.pipeline.total_layers != self.arch.layers:
            raise ConfigError(
                f"pipeline alpha+beta+gamma = {self.pipeline.total_layers} "
                f"but arch.layers = {self.arch.layers}"
            )
        if (self.synth.height, self.synth.width) != (self.arch.grid_h, self.arch.grid_w):
            raise ConfigError("synth grid must match arch grid")
        if self.synth.channels != self.arch.channels:
            raise ConfigError("synth channels must match arch channels")


_TOP_LEVEL_KEYS = {"seed", "arch", "pipeline", "synth", "outputs", "timing"}


def run_config_from_json_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"config root must be an object, got {type(d).__name__}")
    unknown = set(d) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        arch = ArchSpec.from_json_dict(d["arch"])
        pipeline = PipelineConfig.from_json_dict(d["pipeline"])
        synth_d = d.get("synth", {})
        synth = SynthSpec(
            height=int(synth_d.get("grid", [arch.grid_h, arch.grid_w])[0]),
            width=int(synth_d.get("grid", [arch.grid_h, arch.grid_w])[1]),
            channels=int(synth_d.get("channels", arch.channels)),
            octaves=int(synth_d.get("octaves", 4)),
        )
        out_d = d.get("outputs", {})
        outputs = OutputSpec(
            report_json=out_d.get("report_json"),
            report_csv=out_d.get("report_csv"),
            dump_features=bool(out_d.get("dump_features", False)),
            features_path=out_d.get("features_path"),
        )
        timing_d = d.get("timing", {})
        timing = TimingSpec(
            repeats=int(timing_d.get("repeats", 5)), warmup=int(timing_d.get("warmup", 1))
        )
        return RunConfig(
            seed=int(d["seed"]),
            arch=arch,
            pipeline=pipeline,
            synth=synth,
            outputs=outputs,
            timing=timing,
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config: {exc}") from exc


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return run_config_from_json_dict(raw)


@dataclass(frozen=True)
class BenchRow:
    config_id: str
    flops_total: int
    flops_ratio: float
    wall_ms_plain: float
    wall_ms_clustered: float
    cos_mean_z_alpha_beta: float
    cos_min_z_alpha_beta: float
    cos_mean_z_final: float
    cos_min_z_final: float

    def to_json_dict(self) -> dict:
        return {col: getattr(self, col) for col in CSV_COLUMNS}

    @classmethod
    def from_json_dict(cls, d: dict) -> "BenchRow":
        return cls(**{col: d[col] for col in CSV_COLUMNS})


@dataclass(frozen=True)
class BenchReport:
    rows: tuple[BenchRow, ...]

    def to_json_dict(self) -> dict:
        return {"rows": [r.to_json_dict() for r in self.rows]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "BenchReport":
        return cls(rows=tuple(BenchRow.from_json_dict(r) for r in d["rows"]))

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_dict(), f, indent=2)
            f.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                writer.writerow([getattr(row, col) for col in CSV_COLUMNS])


def _median_wall_ms(fn, repeats: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times))


def make_run_inputs(cfg: RunConfig):
    """Deterministic (tokens, weights) pair for a config; weights use a derived seed stream."""
    z0 = generate_synthetic_tokens(
        cfg.seed, cfg.synth.height, cfg.synth.width, cfg.synth.channels, cfg.synth.octaves
    )
    rng = np.random.default_rng([cfg.seed, 1])
    weights = random_pipeline_weights(
        rng, cfg.arch.layers, cfg.arch.channels, cfg.arch.heads, cfg.arch.mlp_ratio
    )
    return z0, weights


def execute_run(cfg: RunConfig, config_id: str = "run", time_it: bool = True):
    """Run plain + clustered on shared inputs; returns (BenchRow, traces dict)."""
    z0, weights = make_run_inputs(cfg)
    plain_cfg = replace(cfg.pipeline, mode="plain")
    clustered_cfg = replace(cfg.pipeline, mode="clustered")

    trace_plain = run_pipeline(z0, weights, plain_cfg)
    trace_clustered = run_pipeline(z0, weights, clustered_cfg)
    fidelity = measure_fidelity(
        trace_clustered, trace_plain, checkpoints=(CHECKPOINT_Z_ALPHA_BETA, CHECKPOINT_Z_FINAL)
    )

    flops = flops_pipeline(clustered_cfg, cfg.arch)
    wall_plain = wall_clustered = 0.0
    if time_it:
        wall_plain = _median_wall_ms(
            lambda: run_pipeline(z0, weights, plain_cfg), cfg.timing.repeats, cfg.timing.warmup
        )
        wall_clustered = _median_wall_ms(
            lambda: run_pipeline(z0, weights, clustered_cfg),
            cfg.timing.repeats,
            cfg.timing.warmup,
        )

    mid = fidelity[CHECKPOINT_Z_ALPHA_BETA]
    final = fidelity[CHECKPOINT_Z_FINAL]
    row = BenchRow(
        config_id=config_id,
        flops_total=flops.total,
        flops_ratio=flops.ratio,
        wall_ms_plain=wall_plain,
        wall_ms_clustered=wall_clustered,
        cos_mean_z_alpha_beta=mid.mean,
        cos_min_z_alpha_beta=mid.min,
        cos_mean_z_final=final.mean,
        cos_min_z_final=final.min,
    )
    return row, {"plain": trace_plain, "clustered": trace_clustered}


def dump_trace_features(traces: dict, path) -> None:
    container = NamedTensorContainer()
    for mode, trace in traces.items():
        for name, grid in trace.checkpoints.items():
            container.add(f"{mode}.{name}", grid.data)
    save_container(path, container)


def cmd_run(cfg: RunConfig, time_it: bool = True) -> BenchReport:
    row, traces = execute_run(cfg, config_id="run", time_it=time_it)
    if cfg.outputs.dump_features:
        dump_trace_features(traces, cfg.outputs.features_path)
    report = BenchReport(rows=(row,))
    _write_outputs(report, cfg.outputs)
    return report


def apply_sweep_value(cfg: RunConfig, axis: str, value) -> RunConfig:
    """One sweep point: override a single hyper-parameter, keeping L fixed."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    try:
        pipe = cfg.pipeline
        clus = pipe.clustering
        rec = pipe.reconstruction
        if axis == "cluster_size":
            h, w = (value, value) if np.isscalar(value) else (value[0], value[1])
            clus = replace(clus, target_h=int(h), target_w=int(w))
        elif axis == "lambda":
            h, w = (value, value) if np.isscalar(value) else (value[0], value[1])
            clus = replace(clus, lambda_h=int(h), lambda_w=int(w))
        elif axis == "kappa":
            clus = replace(clus, kappa=int(value))
        elif axis == "tau":
            clus = replace(clus, tau=float(value))
            rec = replace(rec, tau=float(value))
        elif axis == "k":
            rec = replace(rec, k=int(value))
        elif axis in ("alpha", "beta"):
            alpha = int(value) if axis == "alpha" else pipe.alpha
            beta = int(value) if axis == "beta" else pipe.beta
            gamma = cfg.arch.layers - alpha - beta
            if gamma < 0:
                raise ConfigError(f"{axis}={value} leaves gamma negative (L={cfg.arch.layers})")
            pipe = replace(pipe, alpha=alpha, beta=beta, gamma=gamma)
        pipe = replace(pipe, clustering=clus, reconstruction=rec)
        return replace(cfg, pipeline=pipe)
    except ParameterError as exc:
        raise ConfigError(f"sweep value {axis}={value} is invalid: {exc}") from exc


def cmd_sweep(cfg: RunConfig, axis: str, values, time_it: bool = True) -> BenchReport:
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    for value in values:
        point = apply_sweep_value(cfg, axis, value)
        row, traces = execute_run(point, config_id=f"{axis}={value}", time_it=time_it)
        rows.append(row)
        if point.outputs.dump_features:
            dump_trace_features(traces, f"{point.outputs.features_path}.{axis}_{value}")
    report = BenchReport(rows=tuple(rows))
    _write_outputs(report, cfg.outputs)
    return report


def cmd_flops(cfg: RunConfig) -> FlopsReport:
    """Analytic report only; nothing is executed."""
    return flops_pipeline(replace(cfg.pipeline, mode="clustered"), cfg.arch)


def _write_outputs(report: BenchReport, outputs: OutputSpec) -> None:
    if outputs.report_json:
        report.write_json(outputs.report_json)
    if outputs.report_csv:
        report.write_csv(outputs.report_csv)

"""Benchmark metrics and sweeps over the spiking solver.

A benchmark run compiles a full-coverage network (every start cell appears
in equally many tiles), runs it for a fixed neural budget, decodes the
estimate, and reports error metrics against the analytic curve, the
spikes-in-flight load trace, the neural-per-simulation timestep cost, and
per-start absorption statistics, each phase wall-clocked separately.

Numeric report content is deterministic for a fixed config and seed; wall
clock readings are kept out of the default JSON payload so emitted report
files stay byte-identical across reruns.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from spikewalk.mcwalk import MeshSolution
from spikewalk.problem import ProblemSpec, analytic_solution, mesh
from spikewalk.snn import (
    REMOVE,
    PrecisionConfig,
    SimulationRecord,
    build_network,
    decode_counts,
    run,
)

TILES = "tiles"
WALKERS = "walkers"
NEURAL_STEPS = "neural_steps"
SWEEP_AXES = (TILES, WALKERS, NEURAL_STEPS)

MOVING_AVERAGE_WINDOW = 25

# Accumulate-policy cost ratio reported for a neuromorphic-hardware
# deployment of this network family, kept as reference metadata for report
# files.  It is a property of that machine's scheduler, not of this
# software engine, and is never an assertion target.
ACCUMULATE_RATIO_REFERENCE = {"mean": 31.8, "std": 0.166}

SWEEP_CSV_SCHEMA = "bench-sweep-v1"
REPORT_SCHEMA = "bench-report-v1"


def moving_average(trace, window: int) -> np.ndarray:
    """Trailing moving average; the first window-1 entries average the
    available prefix so the output has the input's length."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    values = np.asarray(trace, dtype=np.float64)
    if values.size == 0:
        return values
    sums = np.cumsum(values)
    out = np.empty_like(sums)
    head = min(window, values.size)
    out[:head] = sums[:head] / np.arange(1, head + 1)
    if values.size > window:
        out[window:] = (sums[window:] - sums[:-window]) / window
    return out


@dataclass(frozen=True)
class ErrorReport:
    """Deviation of an estimate from the analytic midpoint temperatures."""

    rmse: float
    max_abs: float
    signed_bias: float


def error_report(solution: MeshSolution, spec: ProblemSpec) -> ErrorReport:
    """RMSE, max-abs, and mean signed deviation against the analytic curve."""
    if solution.n_nodes != spec.n_nodes:
        raise ValueError(
            f"solution has {solution.n_nodes} nodes, mesh has {spec.n_nodes}"
        )
    reference = analytic_solution(mesh(spec).midpoints, spec)
    errors = solution.u - reference
    return ErrorReport(
        rmse=float(np.sqrt(np.mean(errors**2))),
        max_abs=float(np.max(np.abs(errors))),
        signed_bias=float(np.mean(errors)),
    )


def timestep_ratio(record: SimulationRecord) -> tuple[float, float]:
    """Mean and population std of neural ticks per simulation timestep."""
    if record.sim_timesteps_completed < 1:
        raise ValueError("record has no completed simulation timesteps")
    return record.neural_per_sim_stats()


@dataclass(frozen=True)
class BenchConfig:
    """One benchmark point: a full-coverage network and a neural budget.

    tiles_per_start replicas of every start cell keep the decoded estimate
    well-defined on every run, so total tiles = tiles_per_start * N.
    """

    spec: ProblemSpec
    walkers_per_tile: int
    tiles_per_start: int
    neural_timesteps: int
    seed: int
    absorb_policy: str = REMOVE
    quantization: PrecisionConfig = field(default_factory=PrecisionConfig)

    def __post_init__(self) -> None:
        if self.tiles_per_start < 1:
            raise ValueError(
                f"tiles_per_start must be >= 1, got {self.tiles_per_start}"
            )
        if self.neural_timesteps < 1:
            raise ValueError(
                f"neural_timesteps must be >= 1, got {self.neural_timesteps}"
            )

    @property
    def tiles(self) -> int:
        return self.tiles_per_start * self.spec.n_nodes

    @property
    def start_nodes(self) -> tuple[int, ...]:
        n = self.spec.n_nodes
        return tuple(c % n for c in range(self.tiles))


@dataclass(frozen=True)
class BenchReport:
    """Metrics from one benchmark run; see docs/output-formats.md."""

    config: BenchConfig
    error_rmse: float
    error_max_abs: float
    signed_bias: float
    spikes_in_flight_ma: np.ndarray
    ratio_mean: float
    ratio_std: float
    absorption_mean_by_start: np.ndarray
    absorption_max_by_start: np.ndarray
    unabsorbed: int
    wall_clock: dict[str, float]

    def __post_init__(self) -> None:
        assert self.error_rmse <= self.error_max_abs + 1e-12
        assert len(self.spikes_in_flight_ma) == self.config.neural_timesteps
        n = self.config.spec.n_nodes
        assert len(self.absorption_mean_by_start) == n
        assert len(self.absorption_max_by_start) == n

    def to_json_dict(self, include_wall_clock: bool = False) -> dict:
        cfg = self.config
        payload = {
            "schema": REPORT_SCHEMA,
            "config": {
                "problem": {
                    "length_l": cfg.spec.length_l,
                    "forcing_f": cfg.spec.forcing_f,
                    "dx": cfg.spec.dx,
                    "dt": cfg.spec.dt,
                    "threshold_c": cfg.spec.threshold_c,
                },
                "walkers_per_tile": cfg.walkers_per_tile,
                "tiles_per_start": cfg.tiles_per_start,
                "tiles": cfg.tiles,
                "neural_timesteps": cfg.neural_timesteps,
                "seed": cfg.seed,
                "absorb_policy": cfg.absorb_policy,
                "precision_bits": cfg.quantization.bits,
                "rounding": cfg.quantization.rounding,
            },
            "error_rmse": self.error_rmse,
            "error_max_abs": self.error_max_abs,
            "signed_bias": self.signed_bias,
            "ratio_mean": self.ratio_mean,
            "ratio_std": self.ratio_std,
            "accumulate_ratio_reference": ACCUMULATE_RATIO_REFERENCE,
            "absorption_mean_by_start": [
                None if np.isnan(v) else float(v)
                for v in self.absorption_mean_by_start
            ],
            "absorption_max_by_start": [
                None if np.isnan(v) else float(v)
                for v in self.absorption_max_by_start
            ],
            "unabsorbed": self.unabsorbed,
            "spikes_in_flight_ma_peak_tick": int(
                np.argmax(self.spikes_in_flight_ma) + 1
            ),
        }
        if include_wall_clock:
            payload["wall_clock"] = dict(self.wall_clock)
        return payload


def run_benchmark(config: BenchConfig) -> BenchReport:
    """Build, run, and decode one configuration, timing each phase."""
    t0 = time.perf_counter()
    network = build_network(
        config.spec,
        walkers_per_tile=config.walkers_per_tile,
        tiles=config.tiles,
        quantization=config.quantization,
        absorb_policy=config.absorb_policy,
        start_index=list(config.start_nodes),
    )
    t1 = time.perf_counter()
    record = run(network, neural_timesteps=config.neural_timesteps,
                 seed=config.seed)
    t2 = time.perf_counter()
    solution = decode_counts(record, config.spec)
    errors = error_report(solution, config.spec)
    ratio_mean, ratio_std = timestep_ratio(record)
    t3 = time.perf_counter()

    n = config.spec.n_nodes
    walkers = config.walkers_per_tile
    completion: list[list[float]] = [[] for _ in range(n)]
    for tile, start in enumerate(config.start_nodes):
        samples = record.absorption_sim_steps[tile]
        done = len(samples) == walkers and walkers > 0
        completion[start].append(float(samples[-1]) if done else np.nan)
    mean_by_start = np.array([np.mean(c) if c else np.nan for c in completion])
    max_by_start = np.array([np.max(c) if c else np.nan for c in completion])

    return BenchReport(
        config=config,
        error_rmse=errors.rmse,
        error_max_abs=errors.max_abs,
        signed_bias=errors.signed_bias,
        spikes_in_flight_ma=moving_average(
            record.spikes_in_flight, MOVING_AVERAGE_WINDOW
        ),
        ratio_mean=ratio_mean,
        ratio_std=ratio_std,
        absorption_mean_by_start=mean_by_start,
        absorption_max_by_start=max_by_start,
        unabsorbed=record.unabsorbed,
        wall_clock={
            "build": t1 - t0,
            "run": t2 - t1,
            "decode": t3 - t2,
        },
    )


def scaling_sweep(axis: str, values, base: BenchConfig) -> list[BenchReport]:
    """One benchmark per value along the chosen axis.

    Each point runs with seed base.seed + index so sweeps are reproducible
    but points stay decorrelated.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    reports = []
    for index, value in enumerate(values):
        if axis == TILES:
            cfg = replace(base, tiles_per_start=int(value))
        elif axis == WALKERS:
            cfg = replace(base, walkers_per_tile=int(value))
        else:
            cfg = replace(base, neural_timesteps=int(value))
        cfg = replace(cfg, seed=base.seed + index)
        reports.append(run_benchmark(cfg))
    return reports


def sweep_to_csv(axis: str, reports: list[BenchReport]) -> str:
    """Flat per-point table; columns are versioned by the header comment."""
    lines = [
        f"# {SWEEP_CSV_SCHEMA} axis={axis}",
        "sweep_value,tiles,walkers_per_tile,neural_timesteps,seed,"
        "error_rmse,error_max_abs,signed_bias,ratio_mean,ratio_std,unabsorbed",
    ]
    for report in reports:
        cfg = report.config
        value = {
            TILES: cfg.tiles_per_start,
            WALKERS: cfg.walkers_per_tile,
            NEURAL_STEPS: cfg.neural_timesteps,
        }[axis]
        lines.append(
            f"{value},{cfg.tiles},{cfg.walkers_per_tile},{cfg.neural_timesteps},"
            f"{cfg.seed},{report.error_rmse!r},{report.error_max_abs!r},"
            f"{report.signed_bias!r},{report.ratio_mean!r},{report.ratio_std!r},"
            f"{report.unabsorbed}"
        )
    return "\n".join(lines) + "\n"


def load_trace_csv(report: BenchReport) -> str:
    """The smoothed spikes-in-flight trace, one row per neural tick."""
    cfg = report.config
    lines = [
        f"# {REPORT_SCHEMA} seed={cfg.seed} window={MOVING_AVERAGE_WINDOW}",
        "neural_t,spikes_in_flight_ma",
    ]
    lines.extend(
        f"{tick},{float(value)!r}"
        for tick, value in enumerate(report.spikes_in_flight_ma, start=1)
    )
    return "\n".join(lines) + "\n"

"""Command-line front end: solve, simulate, generate, and bench workflows.

Configuration precedence is hard defaults, then a JSON config file given
with --config, then explicit flags.  The effective configuration is echoed
into every output file (JSON outputs get a "config" object, CSV outputs a
leading "# config: {...}" comment), so a rerun with that config reproduces
the numeric outputs byte for byte.  The echo covers only values that shape
the numbers; worker count and output paths are execution details and stay
out of it.  Wall-clock readings are confined to the bench timing sidecar,
the one deliberately non-reproducible output.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from spikewalk.bench import (
    BenchConfig,
    error_report,
    load_trace_csv,
    run_benchmark,
)
from spikewalk.mcwalk import solution_to_csv, solve
from spikewalk.netgen import export_netlist
from spikewalk.problem import ProblemSpec, analytic_solution, mesh
from spikewalk.snn import (
    ACCUMULATE,
    NEAREST,
    ONE_SIDED_DOWN,
    ONE_SIDED_UP,
    REMOVE,
    PrecisionConfig,
    build_network,
    decode_counts,
    run,
    spikes_in_flight_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_ROUNDING_CHOICES = (NEAREST, ONE_SIDED_DOWN, ONE_SIDED_UP)
_POLICY_CHOICES = (REMOVE, ACCUMULATE)

# Problem defaults across all commands: the full-scale reference
# configuration (flux 3 on a bar of length 2, dx 0.05, dt 1e-4).
GLOBAL_DEFAULTS: dict = {
    "length": 2.0,
    "flux": 3.0,
    "dx": 0.05,
    "dt": 1e-4,
    "threshold_c": 0.05,
    "walkers": 100,
    "tiles": 5,
    "neural_steps": 1_000_000,
    "max_steps": None,
    "runs": 1,
    "seed": 0,
    "precision_bits": 8,
    "rounding": NEAREST,
    "absorb_policy": REMOVE,
    "workers": None,
    "out": ".",
}

COMMAND_DEFAULTS: dict[str, dict] = {
    "solve": {"walkers": 10_000},
    "simulate": {},
    "generate": {"tiles": 1},
    # Benchmarks must not pick up an implicit seed; reports are only
    # comparable when the seed was chosen deliberately.
    "bench": {"seed": None},
}

# Keys a config file may set, with coercions applied after merging.
_FLOAT_KEYS = ("length", "flux", "dx", "dt", "threshold_c")
_INT_KEYS = ("walkers", "tiles", "neural_steps", "runs", "workers")
_OPTIONAL_INT_KEYS = ("max_steps", "seed")
_STR_KEYS = ("rounding", "absorb_policy", "out")
_CONFIG_KEYS = frozenset(
    _FLOAT_KEYS + _INT_KEYS + _OPTIONAL_INT_KEYS + _STR_KEYS
    + ("precision_bits",)
)

# What the outputs echo: everything that shapes the numbers.
_ECHO_KEYS = (
    "command", "length", "flux", "dx", "dt", "threshold_c", "walkers",
    "tiles", "neural_steps", "max_steps", "runs", "seed",
    "precision_bits", "rounding", "absorb_policy",
)


class ConfigError(ValueError):
    """Bad flag combination, config file, or problem parameters."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikewalk",
        description="Random-walk heat solver with a spiking-network backend.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "solve": "direct Monte Carlo solve; writes solution/runs CSV and a"
                 " JSON summary",
        "simulate": "spiking-network run; writes the simulation record,"
                    " spikes-in-flight CSV, and decoded solution CSV",
        "generate": "compile and export the network as a netlist JSON file",
        "bench": "one benchmark run; writes report JSON, load-trace CSV,"
                 " and a wall-clock sidecar",
    }
    for name, help_text in commands.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--length", type=float, help="bar length")
        sp.add_argument("--flux", type=float, help="boundary flux F")
        sp.add_argument("--dx", type=float, help="cell width")
        sp.add_argument("--dt", type=float, help="walker timestep")
        sp.add_argument("--threshold-c", type=float, dest="threshold_c",
                        help="tail-mass ceiling for the dt validity check")
        sp.add_argument("--walkers", type=int,
                        help="walkers per start cell (solve) or per tile")
        sp.add_argument("--tiles", type=int,
                        help="tiles per start cell (total = tiles * cells)")
        sp.add_argument("--neural-steps", type=int, dest="neural_steps",
                        help="neural timestep budget")
        sp.add_argument("--max-steps", type=int, dest="max_steps",
                        help="walker step cap for the direct solver")
        sp.add_argument("--runs", type=int, help="independent repetitions")
        sp.add_argument("--seed", type=int, help="base RNG seed")
        sp.add_argument("--precision-bits", dest="precision_bits",
                        help="stochastic resolution bits, or 'none' for exact")
        sp.add_argument("--rounding", choices=_ROUNDING_CHOICES,
                        help="probability quantization rounding mode")
        sp.add_argument("--absorb-policy", dest="absorb_policy",
                        choices=_POLICY_CHOICES,
                        help="what the network does with absorbed walkers")
        sp.add_argument("--workers", type=int,
                        help="parallel workers (results are independent of it)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--config",
                        help="JSON config file; explicit flags override it")
    return parser


def _parse_precision_bits(value) -> int | None:
    if value is None:
        return None
    if isinstance(value, str):
        if value.lower() == "none":
            return None
        try:
            return int(value)
        except ValueError:
            raise ConfigError(
                f"precision_bits must be an integer or 'none', got {value!r}"
            ) from None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(
            f"precision_bits must be an integer or 'none', got {value!r}"
        )
    return value


def _load_config_file(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(data) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config file keys: {', '.join(unknown)}")
    return data


def resolve_config(ns: argparse.Namespace) -> dict:
    """Merge hard defaults, the config file, and explicit flags, then
    validate and coerce every field.  Raises ConfigError on any problem."""
    command = ns.command
    eff = dict(GLOBAL_DEFAULTS)
    eff.update(COMMAND_DEFAULTS[command])
    if ns.config is not None:
        eff.update(_load_config_file(ns.config))
    for key in _CONFIG_KEYS:
        value = getattr(ns, key, None)
        if value is not None:
            eff[key] = value

    try:
        for key in _FLOAT_KEYS:
            eff[key] = float(eff[key])
        for key in _INT_KEYS:
            if key == "workers" and eff[key] is None:
                continue
            eff[key] = int(eff[key])
        for key in _OPTIONAL_INT_KEYS:
            if eff[key] is not None:
                eff[key] = int(eff[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc

    eff["precision_bits"] = _parse_precision_bits(eff["precision_bits"])
    if eff["rounding"] not in _ROUNDING_CHOICES:
        raise ConfigError(f"unknown rounding mode {eff['rounding']!r}")
    if eff["absorb_policy"] not in _POLICY_CHOICES:
        raise ConfigError(f"unknown absorb policy {eff['absorb_policy']!r}")
    for key in ("walkers", "tiles", "neural_steps", "runs"):
        if eff[key] < 0 or (key in ("tiles", "neural_steps", "runs")
                            and eff[key] < 1):
            raise ConfigError(f"{key} must be positive, got {eff[key]}")
    if eff["seed"] is None:
        if command == "bench":
            raise ConfigError(
                "bench requires an explicit --seed (or a seed in --config); "
                "benchmark outputs are only comparable with a deliberate seed"
            )
        raise ConfigError("seed must be an integer, got null")
    if eff["workers"] is None:
        eff["workers"] = os.cpu_count() or 1
    if eff["workers"] < 1:
        raise ConfigError(f"workers must be >= 1, got {eff['workers']}")

    eff["command"] = command
    # The problem parameters are validated here so a bad dt is a config
    # error, caught before any run starts.
    try:
        eff["spec"] = ProblemSpec(
            length_l=eff["length"],
            forcing_f=eff["flux"],
            dx=eff["dx"],
            dt=eff["dt"],
            threshold_c=eff["threshold_c"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        eff["quantization"] = PrecisionConfig(
            bits=eff["precision_bits"], rounding=eff["rounding"]
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return eff


def config_echo(eff: dict) -> dict:
    return {key: eff[key] for key in _ECHO_KEYS}


def _config_comment(eff: dict) -> str:
    return "# config: " + json.dumps(config_echo(eff), sort_keys=True)


def _dump_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _out_dir(eff: dict) -> Path:
    out = Path(eff["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _float_csv(value: float) -> str:
    return repr(float(value))


def _start_nodes(eff: dict) -> list[int]:
    n = eff["spec"].n_nodes
    return [c % n for c in range(eff["tiles"] * n)]


def _build(eff: dict):
    return build_network(
        eff["spec"],
        walkers_per_tile=eff["walkers"],
        tiles=eff["tiles"] * eff["spec"].n_nodes,
        quantization=eff["quantization"],
        absorb_policy=eff["absorb_policy"],
        start_index=_start_nodes(eff),
    )


def cmd_solve(eff: dict) -> list[Path]:
    spec: ProblemSpec = eff["spec"]
    result = solve(
        spec,
        walkers_per_node=eff["walkers"],
        runs=eff["runs"],
        seed=eff["seed"],
        max_steps=eff["max_steps"],
        workers=eff["workers"],
    )
    mids = mesh(spec).midpoints
    exact = analytic_solution(mids, spec)
    mean = result.mean_solution

    solution_lines = [_config_comment(eff), "x,u_estimate,u_analytic,abs_error"]
    for x, u, ua in zip(mids, mean.u, exact):
        solution_lines.append(
            f"{_float_csv(x)},{_float_csv(u)},{_float_csv(ua)},"
            f"{_float_csv(abs(u - ua))}"
        )

    runs_lines = [_config_comment(eff), "run,x,u_estimate"]
    for run_index, data in enumerate(result.runs):
        runs_lines.extend(
            f"{run_index},{_float_csv(x)},{_float_csv(u)}"
            for x, u in zip(mids, data.solution.u)
        )

    errors = error_report(mean, spec)
    summary = {
        "schema": "solve-summary-v1",
        "config": config_echo(eff),
        "error_rmse": errors.rmse,
        "error_max_abs": errors.max_abs,
        "signed_bias": errors.signed_bias,
        "per_run_rmse": [
            error_report(data.solution, spec).rmse for data in result.runs
        ],
        "unabsorbed_fraction": result.unabsorbed_fraction(),
    }

    out = _out_dir(eff)
    paths = [out / "solution.csv", out / "runs.csv", out / "summary.json"]
    paths[0].write_text("\n".join(solution_lines) + "\n")
    paths[1].write_text("\n".join(runs_lines) + "\n")
    paths[2].write_text(_dump_json(summary))
    return paths


def cmd_simulate(eff: dict) -> list[Path]:
    network = _build(eff)
    record = run(network, neural_timesteps=eff["neural_steps"],
                 seed=eff["seed"])
    solution = decode_counts(record, eff["spec"])

    payload = record.to_json_dict()
    payload["config"] = config_echo(eff)

    out = _out_dir(eff)
    paths = [
        out / "record.json",
        out / "spikes_in_flight.csv",
        out / "solution.csv",
    ]
    paths[0].write_text(_dump_json(payload))
    paths[1].write_text(
        _config_comment(eff) + "\n" + spikes_in_flight_csv(record)
    )
    paths[2].write_text(
        _config_comment(eff) + "\n" + solution_to_csv(solution, eff["spec"])
    )
    return paths


def cmd_generate(eff: dict) -> list[Path]:
    network = _build(eff)
    # The netlist's own metadata block embeds the full effective
    # configuration and the seed stamp, so the file stays pure netlist-v1.
    text = export_netlist(network, seed=eff["seed"])
    out = _out_dir(eff)
    path = out / "netlist.json"
    path.write_text(text)
    return [path]


def cmd_bench(eff: dict) -> list[Path]:
    config = BenchConfig(
        spec=eff["spec"],
        walkers_per_tile=eff["walkers"],
        tiles_per_start=eff["tiles"],
        neural_timesteps=eff["neural_steps"],
        seed=eff["seed"],
        absorb_policy=eff["absorb_policy"],
        quantization=eff["quantization"],
    )
    report = run_benchmark(config)

    payload = report.to_json_dict()
    payload["config"]["command"] = "bench"
    timing = {
        "schema": "bench-timing-v1",
        "config": config_echo(eff),
        "wall_clock": report.wall_clock,
    }

    out = _out_dir(eff)
    paths = [
        out / "bench_report.json",
        out / "bench_trace.csv",
        out / "bench_timing.json",
    ]
    paths[0].write_text(_dump_json(payload))
    paths[1].write_text(_config_comment(eff) + "\n" + load_trace_csv(report))
    # Timing goes in its own sidecar: wall clock is the one output that is
    # legitimately different on every rerun.
    paths[2].write_text(
        json.dumps(timing, indent=2, sort_keys=True) + "\n"
    )
    return paths


_COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "generate": cmd_generate,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        eff = resolve_config(ns)
    except ConfigError as exc:
        print(f"spikewalk: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        paths = _COMMANDS[ns.command](eff)
    except Exception as exc:  # noqa: BLE001 - boundary: report, don't crash
        print(f"spikewalk: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print("wrote " + " ".join(str(p) for p in paths))
    return EXIT_OK


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()

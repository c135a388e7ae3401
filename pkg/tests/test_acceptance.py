"""Acceptance gate: ten end-to-end criteria, one visible line each.

Each test prints a `[criterion NN] PASS/FAIL` line (bypassing capture) and
asserts the same condition, so `pytest tests/test_acceptance.py -v` yields
one verdict per criterion.  Tolerances are pinned in the assertions, never
computed from the observed data.  The direct Monte Carlo reproduction
(criterion 2) dominates the runtime; the whole module takes roughly
fifteen minutes single-core.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from spikewalk.bench import (
    ACCUMULATE_RATIO_REFERENCE,
    error_report,
    moving_average,
    timestep_ratio,
)
from spikewalk.cli import main as cli_main
from spikewalk.mcwalk import (
    TransitionProbabilities,
    exact_expected_counts,
    exact_expected_solution,
    exact_visit_variance,
    run_walkers,
    solve,
)
from spikewalk.problem import (
    ProblemSpec,
    analytic_solution,
    expected_stopping_time,
    mesh,
)
from spikewalk.netgen import export_netlist, import_netlist
from spikewalk.snn import (
    ACCUMULATE,
    REMOVE,
    build_network,
    decode_counts,
    imbalanced_gate_preset,
    run,
)

HOP_Z = 1.7315


def matched_dt(dx: float) -> float:
    """Timestep at which the chain's per-step displacement variance matches
    the continuum diffusion rate (hop ratio z = dx / (2 sqrt(2 dt)))."""
    return (dx / (2.0 * HOP_Z)) ** 2 / 2.0


# Full-scale reference configuration: flux 3 on a bar of length 2,
# dx 0.05, dt 1e-4.
FULL_SCALE = ProblemSpec(length_l=2.0, forcing_f=3.0, dx=0.05, dt=1e-4)

# Fast-mixing unit bar for engine-level comparisons (N = 10).
FAST = ProblemSpec(length_l=1.0, forcing_f=3.0, dx=0.1, dt=0.0028125)

# Standard spiking layout: N = 20 mesh, 100 tiles cycling over the start
# cells (5 per start), 100 walkers per tile, variance-matched timestep.
STANDARD = ProblemSpec(length_l=2.0, forcing_f=3.0, dx=0.1, dt=matched_dt(0.1))
STANDARD_STARTS = [c % STANDARD.n_nodes for c in range(100)]
STANDARD_WALKERS = 100

# Coarse mesh for the imbalance-bias criterion: margins scale as dx^2, so
# N = 5 is the feasible operating point for a strict every-node direction
# test at attainable walker counts.
BIAS = ProblemSpec(length_l=2.0, forcing_f=3.0, dx=0.4, dt=matched_dt(0.4))


def unit_spec(n: int) -> ProblemSpec:
    dx = 1.0 / n
    return ProblemSpec(length_l=1.0, forcing_f=3.0, dx=dx, dt=matched_dt(dx))


def report(capsys, number: int, passed: bool, detail: str) -> None:
    verdict = "PASS" if passed else "FAIL"
    with capsys.disabled():
        print(f"\n[criterion {number:02d}] {verdict} — {detail}")
    assert passed, f"criterion {number:02d} failed — {detail}"


def test_criterion_01_transition_probabilities(capsys):
    probs = FULL_SCALE.probabilities()
    ok = abs(probs.p_go - 0.0385) <= 5e-4 and abs(probs.p_stay - 0.9229) <= 5e-4
    report(
        capsys, 1, ok,
        f"p_go={probs.p_go:.6f} (ref 0.0385), p_stay={probs.p_stay:.6f} "
        f"(ref 0.9229), tolerance 5e-4",
    )


def test_criterion_02_analytic_reproduction(capsys):
    # Known deterministic shortfall: the walk's reflection rule sends both
    # lateral outcomes from the first midpoint to the second (mass 2*p_go),
    # which is a mirror about the first midpoint rather than about x = 0.
    # The insulated wall therefore sits half a cell inside the bar, tilting
    # the expectation curve by about -F*(dx/2)*x; together with the slight
    # under-diffusion of the hop probabilities the expected relative error
    # at x = 0.525 is -6.7%, outside the 5% band for every seed.  The test
    # states the intended bound and reports the floor next to the sample.
    result = solve(FULL_SCALE, walkers_per_node=10_000, runs=10, seed=2024,
                   workers=1)
    mids = mesh(FULL_SCALE).midpoints
    exact = analytic_solution(mids, FULL_SCALE)
    tail = mids >= 0.5
    rel = np.abs(result.mean_solution.u[tail] - exact[tail]) / exact[tail]
    worst = float(rel.max())
    worst_x = float(mids[tail][int(np.argmax(rel))])
    floor = exact_expected_solution(FULL_SCALE)
    floor_rel = float(
        np.max(np.abs(floor[tail] - exact[tail]) / exact[tail])
    )
    report(
        capsys, 2, worst <= 0.05,
        f"10-run mean curve, max relative error {worst:.4f} at x={worst_x} "
        f"(limit 0.05); zero-noise chain expectation already off by "
        f"{floor_rel:.4f} (boundary tilt, seed-independent); unabsorbed "
        f"{result.unabsorbed_fraction():.2e}",
    )


def test_criterion_03_oracle_equivalence(capsys):
    walkers = 50_000
    worst = 0.0
    for n in (1, 2, 5, 10):
        spec = unit_spec(n)
        probs = spec.probabilities()
        expected = exact_expected_counts(n, probs)
        variance = exact_visit_variance(n, probs)
        for start in range(n):
            batch = run_walkers(spec, start, walkers, seed=300 + 10 * n + start)
            se = np.sqrt(variance[start] / walkers)
            z = np.abs(batch.counts_row / walkers - expected[start]) / se
            worst = max(worst, float(z.max()))
    report(
        capsys, 3, worst < 4.0,
        f"visit tables for N in {{1,2,5,10}} at M={walkers}: worst entry "
        f"|z| = {worst:.2f} (limit 4 standard errors)",
    )


def test_criterion_04_stopping_time(capsys):
    spec = ProblemSpec(length_l=2.0, forcing_f=3.0, dx=2.0 / 41.0, dt=1e-4)
    # The default cap (10x the expected time) censors roughly one walker in
    # 1e5; a 50x cap keeps the mean a complete measurement, not an estimate.
    batch = run_walkers(spec, 0, 100_000, seed=424, max_steps=1_000_000)
    target = expected_stopping_time(spec.length_l, 0.0) / spec.dt
    mean = float(batch.absorption_steps.mean())
    rel = mean / target - 1.0
    ok = batch.n_unabsorbed == 0 and abs(rel) <= 0.02
    report(
        capsys, 4, ok,
        f"mean absorption from the leftmost cell {mean:.0f} steps vs "
        f"{target:.0f} expected ({rel:+.4%}, limit ±2%), "
        f"{batch.n_unabsorbed} walkers capped",
    )


def test_criterion_05_engine_equivalence(capsys):
    n = FAST.n_nodes
    runs, walkers = 12, 1000
    quantized = TransitionProbabilities(
        p_stay=1.0 - 130.0 / 256.0, p_go=65.0 / 256.0, tail_mass=0.0
    )
    direct = solve(FAST, walkers_per_node=walkers, runs=runs, seed=77,
                   probs=quantized)
    direct_u = direct.per_run_u()

    network = build_network(FAST, walkers_per_tile=walkers, tiles=n,
                            start_index=list(range(n)))
    assert network.gate_probs.p_left == 65.0 / 256.0  # same chain, exactly
    spiking_u = []
    for r in range(runs):
        record = run(network, neural_timesteps=400_000, seed=900 + r)
        assert record.unabsorbed == 0
        spiking_u.append(decode_counts(record, FAST).u)
    spiking_u = np.stack(spiking_u)

    half_d = 1.96 * direct_u.std(axis=0, ddof=1) / np.sqrt(runs)
    half_s = 1.96 * spiking_u.std(axis=0, ddof=1) / np.sqrt(runs)
    gap = np.abs(direct_u.mean(axis=0) - spiking_u.mean(axis=0))
    overlap = gap <= half_d + half_s
    worst = int(np.argmax(gap - (half_d + half_s)))
    report(
        capsys, 5, bool(overlap.all()),
        f"per-node 95% CIs overlap at all {n} nodes "
        f"({runs} runs x {walkers} walkers per engine, shared 65/256 hop "
        f"masses); tightest node {worst}: gap {gap[worst]:.4f} vs "
        f"half-widths {half_d[worst] + half_s[worst]:.4f}",
    )


def test_criterion_06_budget_monotonicity(capsys):
    network = build_network(STANDARD, walkers_per_tile=STANDARD_WALKERS,
                            tiles=len(STANDARD_STARTS),
                            start_index=STANDARD_STARTS)
    medians = []
    for budget in (100_000, 500_000, 1_000_000):
        rmses = []
        for seed in (0, 1, 2):
            record = run(network, neural_timesteps=budget, seed=seed)
            solution = decode_counts(record, STANDARD)
            rmses.append(error_report(solution, STANDARD).rmse)
        medians.append(float(np.median(rmses)))
    ok = medians[0] >= medians[1] >= medians[2]
    report(
        capsys, 6, ok,
        "3-seed median RMSE non-increasing across budgets "
        f"{{100k, 500k, 1M}}: {medians[0]:.3f} >= {medians[1]:.3f} >= "
        f"{medians[2]:.3f}",
    )


def test_criterion_07_quantization_bias(capsys):
    with pytest.warns(UserWarning):
        network = build_network(
            BIAS,
            walkers_per_tile=2000,
            tiles=125,
            start_index=[c % BIAS.n_nodes for c in range(125)],
            gate_probs=imbalanced_gate_preset(),
            absorb_policy=REMOVE,
        )
    baseline = exact_expected_solution(BIAS)
    curves = []
    for seed in range(4200, 4205):
        record = run(network, neural_timesteps=4_000_000, seed=seed)
        assert record.unabsorbed == 0
        curves.append(decode_counts(record, BIAS).u)
    bias = np.mean(curves, axis=0) - baseline
    interior = bias[1:]
    ok = bool((interior > 0.0).all()) and bias[0] == 0.0
    report(
        capsys, 7, ok,
        "imbalanced 8-bit preset vs balanced-chain expectation, 5-run "
        f"mean bias per interior node {np.array2string(interior, precision=4)} "
        "(all strictly positive)",
    )


def test_criterion_08_load_shape(capsys):
    network = build_network(STANDARD, walkers_per_tile=STANDARD_WALKERS,
                            tiles=len(STANDARD_STARTS),
                            start_index=STANDARD_STARTS)
    record = run(network, neural_timesteps=300_000, seed=0)
    ma = moving_average(record.spikes_in_flight, window=25)
    half = len(ma) // 2
    peak = int(np.argmax(ma))
    slope = float(np.polyfit(np.arange(half), ma[half:], 1)[0])
    ok = peak < half and slope <= 0.0
    report(
        capsys, 8, ok,
        f"25-tick moving average peaks at tick {peak + 1} of {len(ma)} "
        f"(first half) and the second-half trend slope is {slope:.2e} <= 0",
    )


def test_criterion_09_policy_contrast(capsys):
    n = FAST.n_nodes
    ratios = {}
    for policy in (REMOVE, ACCUMULATE):
        network = build_network(FAST, walkers_per_tile=200, tiles=n,
                                start_index=list(range(n)),
                                absorb_policy=policy)
        ratios[policy] = [
            timestep_ratio(run(network, neural_timesteps=300_000, seed=seed))[0]
            for seed in (1, 2, 3)
        ]
    pairs = list(zip(ratios[ACCUMULATE], ratios[REMOVE]))
    ok = all(acc > rem for acc, rem in pairs)
    formatted = ", ".join(f"{acc:.2f}>{rem:.2f}" for acc, rem in pairs)
    report(
        capsys, 9, ok and ACCUMULATE_RATIO_REFERENCE == {"mean": 31.8,
                                                         "std": 0.166},
        "accumulate neural-per-sim-step ratio exceeds remove on paired "
        f"seeds 1-3 ({formatted}); hardware reference 31.8±0.166 recorded "
        "as metadata only",
    )


def test_criterion_10_determinism_roundtrip(capsys, tmp_path):
    args = [
        "simulate", "--length", "1", "--dx", "0.25", "--dt", "0.017578125",
        "--walkers", "25", "--tiles", "2", "--neural-steps", "15000",
        "--seed", "8",
    ]
    assert cli_main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli_main([*args, "--out", str(tmp_path / "b")]) == 0
    names = ("record.json", "spikes_in_flight.csv", "solution.csv")
    identical = all(
        (tmp_path / "a" / name).read_bytes()
        == (tmp_path / "b" / name).read_bytes()
        for name in names
    )

    round_trips = []
    for policy in (REMOVE, ACCUMULATE):
        network = build_network(FAST, walkers_per_tile=50, tiles=4,
                                start_index=[0, 3, 5, 9],
                                absorb_policy=policy)
        original = run(network, neural_timesteps=30_000, seed=6)
        rebuilt = import_netlist(export_netlist(network, seed=6))
        replayed = run(rebuilt, neural_timesteps=30_000, seed=6)
        round_trips.append(
            json.dumps(original.to_json_dict(), sort_keys=True)
            == json.dumps(replayed.to_json_dict(), sort_keys=True)
        )
    ok = identical and all(round_trips)
    report(
        capsys, 10, ok,
        "rerun outputs byte-identical across "
        f"{len(names)} files; netlist export-import-run reproduces the "
        "simulation record exactly under both absorb policies",
    )

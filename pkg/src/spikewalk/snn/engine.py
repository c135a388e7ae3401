"""Execute compiled spiking networks: a tick-level reference engine and a
phase-computed fast engine that produce identical results.

Time discipline
---------------
Every tile alternates two phases under its supervisor's barrier:

* ROUTE: counters serialise their walker populations (one spike per neural
  timestep each); spikes flow counter -> gate -> chosen output -> destination
  buffer + tally.  With a busiest counter holding c walkers the phase takes
  c + 3 ticks (pipeline depth 3); an empty phase takes 1 tick.
* TRANSFER: buffers serialise arrivals back into their counters, taking
  b + 1 ticks for a busiest buffer of b (1 if empty).

The supervisor detects quiescence (no spikes pending for the tile and the
draining population fully below threshold) at the end of a tick, emits
weight-0 enable spikes to the next phase's population, and flips the phase;
the TRANSFER -> ROUTE flip completes one simulation timestep.  One
simulation timestep therefore costs (cmax + 3) + (bmax + 1) neural
timesteps — a fixed overhead of 4 plus terms proportional to the busiest
cell, which is the serialisation cost law asserted in tests.

Randomness contract
-------------------
Tile t draws from default_rng(SeedSequence(entropy=seed, spawn_key=(t,))).
A probability gate with a single target forwards deterministically and
consumes no draw; a multi-target gate consumes exactly one uniform per
firing, routed by searchsorted over the cumulative target masses.  Gates
fire in ascending neuron id within a tick, so a tile's draw order is
tick-major then cell-ascending — exactly the row-major raster of the
occupancy mask the fast engine batches per phase (numpy Generators produce
identical streams for batched and repeated scalar draws).

Both engines honour a mid-phase budget cut-off identically: an event
counts toward spikes-in-flight at its emission tick, and tallies,
absorption samples, and buffer contents advance only on delivery.  The
spikes-in-flight trace counts weighted spikes only: the supervisor's
weight-0 enable pulses are barrier control, not payload, and excluding
them lets a drained tile idle silently (its simulation clock still
advances at the 2-tick empty-cycle rate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from spikewalk.mcwalk import ContractViolation, MeshSolution, NodeCounts, estimate_solution
from spikewalk.problem import ProblemSpec
from spikewalk.snn.circuit import (
    ACCUMULATE,
    REMOVE,
    ROLE_BUFFER,
    ROLE_COUNTER,
    ROLE_GATE,
    ROLE_OUTPUT,
    ROLE_SUPERVISOR,
    ROLE_TALLY,
    SpikingNetwork,
)

ROUTE = 0
TRANSFER = 1

_ROLE_CODE = {
    ROLE_COUNTER: 0,
    ROLE_BUFFER: 1,
    ROLE_GATE: 2,
    ROLE_OUTPUT: 3,
    ROLE_SUPERVISOR: 4,
    ROLE_TALLY: 5,
}
_COUNTER, _BUFFER, _GATE, _OUTPUT, _SUPERVISOR, _TALLY = range(6)


def tile_rngs(tiles: int, seed: int) -> list[np.random.Generator]:
    """One independent stream per tile, keyed by tile index."""
    return [
        np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(t,)))
        for t in range(tiles)
    ]


class _Tables:
    """Prebuilt per-id arrays and per-tile groupings for the tick engine."""

    def __init__(self, network: SpikingNetwork) -> None:
        n_ids = max(network.neurons) + 1
        if set(network.neurons) != set(range(n_ids)):
            raise ContractViolation("neuron ids must be contiguous from 0")
        self.threshold = np.empty(n_ids)
        self.reset = np.empty(n_ids)
        self.leak = np.empty(n_ids)
        self.role_code = np.empty(n_ids, dtype=np.int8)
        self.tile_of = np.empty(n_ids, dtype=np.int64)
        self.is_absorb_tally = np.zeros(n_ids, dtype=bool)
        self.adjacency: list[list] = [[] for _ in range(n_ids)]
        self.gate_cum: dict[int, np.ndarray] = {}

        n = network.spec.n_nodes
        per_tile_roles: list[dict[int, list[int]]] = [
            {code: [] for code in range(6)} for _ in range(network.tiles)
        ]
        mesh_counter: dict[tuple[int, int], int] = {}
        mesh_tally: dict[tuple[int, int], int] = {}
        self.sink_counter = [None] * network.tiles
        self.absorb_tally_of: list[int | None] = [None] * network.tiles

        for nid in range(n_ids):
            spec = network.neurons[nid]
            tile, cell, role = network.node_of_neuron[nid]
            code = _ROLE_CODE[spec.role]
            self.threshold[nid] = spec.threshold
            self.reset[nid] = spec.reset_potential
            self.leak[nid] = spec.leak
            self.role_code[nid] = code
            self.tile_of[nid] = tile
            per_tile_roles[tile][code].append(nid)
            if code == _TALLY and cell is not None and cell >= n:
                self.is_absorb_tally[nid] = True
                self.absorb_tally_of[tile] = nid
            if code == _TALLY and cell is not None and cell < n:
                mesh_tally[(tile, cell)] = nid
            if code == _COUNTER and cell is not None:
                if cell < n:
                    mesh_counter[(tile, cell)] = nid
                else:
                    self.sink_counter[tile] = nid

        for nid, syns in network.synapses.items():
            self.adjacency[nid] = list(syns)
            if self.role_code[nid] == _GATE and len(syns) > 1:
                masses = []
                for syn in syns:
                    p = network.neurons[syn.target].stochastic_p
                    if p is None:
                        raise ContractViolation(
                            f"gate {nid} target {syn.target} has no stochastic_p"
                        )
                    masses.append(p)
                self.gate_cum[nid] = np.cumsum(masses)

        self.leak_ids = np.flatnonzero(self.leak > 0)
        self.supervisor_of: list[int] = []
        self.route_drain: list[np.ndarray] = []
        self.transfer_drain: list[np.ndarray] = []
        self.route_enables: list[list[int]] = []
        self.transfer_enables: list[list[int]] = []
        self.tile_counters: list[np.ndarray] = []
        for tile, groups in enumerate(per_tile_roles):
            sups = groups[_SUPERVISOR]
            if len(sups) != 1:
                raise ContractViolation(
                    f"tile {tile} must have exactly one supervisor, found {len(sups)}"
                )
            self.supervisor_of.append(sups[0])
            self.route_drain.append(
                np.array(
                    sorted(groups[_COUNTER] + groups[_GATE] + groups[_OUTPUT]),
                    dtype=np.int64,
                )
            )
            self.transfer_drain.append(np.array(sorted(groups[_BUFFER]), dtype=np.int64))
            self.route_enables.append(sorted(groups[_COUNTER]))
            self.transfer_enables.append(sorted(groups[_BUFFER]))
            self.tile_counters.append(np.array(sorted(groups[_COUNTER]), dtype=np.int64))

        # id matrices for harvest; complete only for mesh-shaped networks
        self.mesh_counter_ids = None
        self.mesh_tally_ids = None
        if len(mesh_counter) == network.tiles * n and len(mesh_tally) == network.tiles * n:
            self.mesh_counter_ids = np.array(
                [[mesh_counter[(t, c)] for c in range(n)] for t in range(network.tiles)],
                dtype=np.int64,
            )
            self.mesh_tally_ids = np.array(
                [[mesh_tally[(t, c)] for c in range(n)] for t in range(network.tiles)],
                dtype=np.int64,
            )


@dataclass
class NetworkState:
    """Mutable execution state of a network under the tick engine."""

    potentials: np.ndarray
    pending: dict[int, list[tuple[int, float]]]
    pending_by_tile: np.ndarray
    neural_t: int
    tile_phase: np.ndarray
    tile_sim_t: np.ndarray
    tile_step_start: np.ndarray
    absorption: list[list[int]]
    step_ticks: list[list[int]]
    tables: _Tables = field(repr=False)

    @property
    def sim_t(self) -> int:
        """Simulation timesteps completed by every tile."""
        return int(self.tile_sim_t.min())

    def tally_potentials(self) -> np.ndarray:
        """Per-(tile, cell) accumulated visit counts, read from tally neurons."""
        if self.tables.mesh_tally_ids is None:
            raise ContractViolation("network has no complete per-cell tally structure")
        return self.potentials[self.tables.mesh_tally_ids].astype(np.int64)


def initial_state(network: SpikingNetwork) -> NetworkState:
    """Fresh state: walkers preloaded as counter potentials, route phase armed.

    Initial placements are potentials, not spikes, so they produce no tally
    arrivals — matching the direct walker engine's convention that the
    initial occupancy is not counted.
    """
    tables = _Tables(network)
    potentials = np.zeros(len(network.neurons))
    if network.walkers_per_tile > 0:
        if tables.mesh_counter_ids is None:
            raise ContractViolation("network has no complete per-cell counter structure")
        for tile, start in enumerate(network.start_nodes):
            potentials[tables.mesh_counter_ids[tile, start]] = network.walkers_per_tile
    tiles = network.tiles
    return NetworkState(
        potentials=potentials,
        pending={},
        pending_by_tile=np.zeros(tiles, dtype=np.int64),
        neural_t=0,
        tile_phase=np.full(tiles, ROUTE, dtype=np.int8),
        tile_sim_t=np.zeros(tiles, dtype=np.int64),
        tile_step_start=np.ones(tiles, dtype=np.int64),
        absorption=[[] for _ in range(tiles)],
        step_ticks=[[] for _ in range(tiles)],
        tables=tables,
    )


def _check_conservation(network: SpikingNetwork, state: NetworkState, tile: int) -> None:
    tables = state.tables
    on_mesh = float(state.potentials[tables.tile_counters[tile]].sum())
    absorb_id = tables.absorb_tally_of[tile]
    absorbed = float(state.potentials[absorb_id]) if absorb_id is not None else 0.0
    if network.absorb_policy == ACCUMULATE:
        sink_id = tables.sink_counter[tile]
        in_sink = float(state.potentials[sink_id]) if sink_id is not None else 0.0
        # sink walkers are already inside tile_counters; absorbed mirrors them
        total = on_mesh
        if abs(absorbed - in_sink) > 1e-9:
            raise ContractViolation(
                f"tile {tile}: absorb tally {absorbed} != sink population {in_sink}"
            )
    else:
        total = on_mesh + absorbed
    if abs(total - network.walkers_per_tile) > 1e-9:
        raise ContractViolation(
            f"tile {tile}: walker conservation violated "
            f"({total} != {network.walkers_per_tile})"
        )


def neural_step(
    network: SpikingNetwork,
    state: NetworkState,
    rng: np.random.Generator | list[np.random.Generator],
) -> list[tuple[int, int, float, int]]:
    """Advance one neural timestep; returns the spikes emitted during it.

    One synchronous pass: deliver due spikes into potentials; fire eligible
    neurons in ascending id order (counters only while their tile routes,
    buffers only while it transfers; one fire per neuron per tick with
    subtractive reset v -> v - threshold + reset_potential); apply leaks;
    then run each tile's supervisor barrier, which on quiescence emits
    weight-0 enables to the next phase's population and flips the phase.
    Emitted events are (source, target, weight, due_tick), enables
    included; the spikes-in-flight trace counts only the weighted ones.
    """
    tables = state.tables
    rngs = rng if isinstance(rng, list) else [rng] * network.tiles
    t = state.neural_t + 1
    emitted: list[tuple[int, int, float, int]] = []

    for target, weight in state.pending.pop(t, []):
        state.potentials[target] += weight
        tile = tables.tile_of[target]
        state.pending_by_tile[tile] -= 1
        if weight != 0.0 and tables.is_absorb_tally[target]:
            state.absorption[tile].append(int(state.tile_sim_t[tile]) + 1)

    def emit(source: int, target: int, weight: float, due: int) -> None:
        state.pending.setdefault(due, []).append((target, weight))
        state.pending_by_tile[tables.tile_of[target]] += 1
        emitted.append((source, target, weight, due))

    for nid in np.flatnonzero(state.potentials >= tables.threshold):
        nid = int(nid)
        code = tables.role_code[nid]
        tile = int(tables.tile_of[nid])
        if code == _COUNTER and state.tile_phase[tile] != ROUTE:
            continue
        if code == _BUFFER and state.tile_phase[tile] != TRANSFER:
            continue
        state.potentials[nid] += tables.reset[nid] - tables.threshold[nid]
        syns = tables.adjacency[nid]
        if code == _GATE and len(syns) > 1:
            u = rngs[tile].random()
            cum = tables.gate_cum[nid]
            choice = min(int(np.searchsorted(cum, u, side="right")), len(syns) - 1)
            syns = [syns[choice]]
        for syn in syns:
            emit(nid, syn.target, syn.weight, t + syn.delay)

    for nid in tables.leak_ids:
        state.potentials[nid] = max(state.potentials[nid] - tables.leak[nid], 0.0)

    for tile in range(network.tiles):
        if state.pending_by_tile[tile] != 0:
            continue
        phase = state.tile_phase[tile]
        drain = tables.route_drain[tile] if phase == ROUTE else tables.transfer_drain[tile]
        if np.any(state.potentials[drain] >= tables.threshold[drain]):
            continue
        sup = tables.supervisor_of[tile]
        targets = (
            tables.transfer_enables[tile] if phase == ROUTE
            else tables.route_enables[tile]
        )
        for tgt in targets:
            emit(sup, tgt, 0.0, t + 1)
        if phase == ROUTE:
            state.tile_phase[tile] = TRANSFER
        else:
            state.tile_phase[tile] = ROUTE
            state.tile_sim_t[tile] += 1
            state.step_ticks[tile].append(t - int(state.tile_step_start[tile]) + 1)
            state.tile_step_start[tile] = t + 1
            if network.canonical:
                _check_conservation(network, state, tile)

    state.neural_t = t
    return emitted


# ---------------------------------------------------------------------------
# Simulation record
# ---------------------------------------------------------------------------


@dataclass
class SimulationRecord:
    """Everything observable from one run, identical across both engines.

    tallies[tile, cell] are the visit counts read from tally potentials;
    absorption_sim_steps holds, per tile, the (sorted) simulation timestep
    at which each absorbed walker arrived.  spikes_in_flight[k] counts the
    weighted spikes emitted during neural timestep k+1 (weight-0 supervisor
    enables are control, not payload, and are excluded).  step_tick_stats rows are
    (steps, sum, sum of squares) of per-simulation-timestep neural costs,
    enough for ratio statistics without materialising long traces;
    step_ticks carries the explicit per-step costs only when requested.
    counts is the decoded NodeCounts when tiles cover every start cell with
    equal multiplicity, else None.
    """

    seed: int
    absorb_policy: str
    walkers_per_tile: int
    start_nodes: tuple[int, ...]
    neural_timesteps_used: int
    spikes_in_flight: np.ndarray
    tallies: np.ndarray
    absorb_tallies: np.ndarray
    per_tile_sim_timesteps: np.ndarray
    absorption_sim_steps: list[np.ndarray]
    step_tick_stats: np.ndarray
    unabsorbed: int
    counts: NodeCounts | None
    step_ticks: list[np.ndarray] | None = None

    @property
    def tiles(self) -> int:
        return len(self.start_nodes)

    @property
    def total_walkers(self) -> int:
        return self.tiles * self.walkers_per_tile

    @property
    def sim_timesteps_completed(self) -> int:
        """Simulation timesteps completed by every tile."""
        return int(self.per_tile_sim_timesteps.min())

    def neural_per_sim_stats(self) -> tuple[float, float]:
        """Population mean and std of neural timesteps per simulation timestep."""
        n = int(self.step_tick_stats[:, 0].sum())
        if n == 0:
            return (math.nan, math.nan)
        total = float(self.step_tick_stats[:, 1].sum())
        sq = float(self.step_tick_stats[:, 2].sum())
        mean = total / n
        var = max(sq / n - mean * mean, 0.0)
        return (mean, math.sqrt(var))

    def absorption_by_start(self) -> dict[int, np.ndarray]:
        """Absorption sim-timestep samples pooled per start cell."""
        pooled: dict[int, list[np.ndarray]] = {}
        for start, samples in zip(self.start_nodes, self.absorption_sim_steps):
            pooled.setdefault(start, []).append(samples)
        return {
            start: np.sort(np.concatenate(parts)) if parts else np.empty(0, np.int64)
            for start, parts in pooled.items()
        }

    def to_json_dict(self) -> dict:
        return {
            "schema": "simulation-record-v1",
            "seed": self.seed,
            "absorb_policy": self.absorb_policy,
            "walkers_per_tile": self.walkers_per_tile,
            "start_nodes": list(self.start_nodes),
            "neural_timesteps_used": self.neural_timesteps_used,
            "spikes_in_flight": self.spikes_in_flight.tolist(),
            "tallies": self.tallies.tolist(),
            "absorb_tallies": self.absorb_tallies.tolist(),
            "per_tile_sim_timesteps": self.per_tile_sim_timesteps.tolist(),
            "absorption_sim_steps": [a.tolist() for a in self.absorption_sim_steps],
            "step_tick_stats": self.step_tick_stats.tolist(),
            "unabsorbed": self.unabsorbed,
            "counts": None if self.counts is None else self.counts.to_json_dict(),
            "step_ticks": None
            if self.step_ticks is None
            else [s.tolist() for s in self.step_ticks],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SimulationRecord":
        if d.get("schema") != "simulation-record-v1":
            raise ValueError(f"unsupported record schema: {d.get('schema')!r}")
        return cls(
            seed=int(d["seed"]),
            absorb_policy=d["absorb_policy"],
            walkers_per_tile=int(d["walkers_per_tile"]),
            start_nodes=tuple(int(s) for s in d["start_nodes"]),
            neural_timesteps_used=int(d["neural_timesteps_used"]),
            spikes_in_flight=np.asarray(d["spikes_in_flight"], dtype=np.int64),
            tallies=np.asarray(d["tallies"], dtype=np.int64),
            absorb_tallies=np.asarray(d["absorb_tallies"], dtype=np.int64),
            per_tile_sim_timesteps=np.asarray(
                d["per_tile_sim_timesteps"], dtype=np.int64
            ),
            absorption_sim_steps=[
                np.asarray(a, dtype=np.int64) for a in d["absorption_sim_steps"]
            ],
            step_tick_stats=np.asarray(d["step_tick_stats"], dtype=np.int64),
            unabsorbed=int(d["unabsorbed"]),
            counts=None if d["counts"] is None else NodeCounts.from_json_dict(d["counts"]),
            step_ticks=None
            if d.get("step_ticks") is None
            else [np.asarray(s, dtype=np.int64) for s in d["step_ticks"]],
        )


def _decoded_counts(
    network: SpikingNetwork,
    tallies: np.ndarray,
    sim_completed: int,
) -> NodeCounts | None:
    """Fold per-tile tallies into NodeCounts when start coverage is uniform."""
    n = network.spec.n_nodes
    multiplicity: dict[int, int] = {}
    for start in network.start_nodes:
        multiplicity[start] = multiplicity.get(start, 0) + 1
    if set(multiplicity) != set(range(n)) or len(set(multiplicity.values())) != 1:
        return None
    tiles_per_start = next(iter(multiplicity.values()))
    counts = np.zeros((n, n), dtype=np.int64)
    for start, row in zip(network.start_nodes, tallies):
        counts[start] += row
    return NodeCounts(
        counts=counts,
        walkers_per_start=tiles_per_start * network.walkers_per_tile,
        max_steps_used=sim_completed,
    )


def _assemble_record(
    network: SpikingNetwork,
    seed: int,
    neural_timesteps: int,
    in_flight: np.ndarray,
    tallies: np.ndarray,
    absorb: np.ndarray,
    per_tile_sim: np.ndarray,
    absorption: list[list[int]],
    step_stats: np.ndarray,
    step_ticks: list[np.ndarray] | None,
) -> SimulationRecord:
    absorption_arrays = [np.sort(np.asarray(a, dtype=np.int64)) for a in absorption]
    record = SimulationRecord(
        seed=seed,
        absorb_policy=network.absorb_policy,
        walkers_per_tile=network.walkers_per_tile,
        start_nodes=network.start_nodes,
        neural_timesteps_used=neural_timesteps,
        spikes_in_flight=in_flight,
        tallies=tallies,
        absorb_tallies=absorb,
        per_tile_sim_timesteps=per_tile_sim,
        absorption_sim_steps=absorption_arrays,
        step_tick_stats=step_stats,
        unabsorbed=network.tiles * network.walkers_per_tile - int(absorb.sum()),
        counts=_decoded_counts(network, tallies, int(per_tile_sim.min())),
        step_ticks=step_ticks,
    )
    return record


# ---------------------------------------------------------------------------
# Reference engine
# ---------------------------------------------------------------------------


def _run_reference(
    network: SpikingNetwork,
    neural_timesteps: int,
    seed: int,
    record_steps: bool,
) -> SimulationRecord:
    state = initial_state(network)
    rngs = tile_rngs(network.tiles, seed)
    in_flight = np.zeros(neural_timesteps, dtype=np.int64)
    for t in range(neural_timesteps):
        events = neural_step(network, state, rngs)
        in_flight[t] = sum(1 for _, _, weight, _ in events if weight != 0.0)
    tallies = state.tally_potentials()
    if any(a is None for a in state.tables.absorb_tally_of):
        raise ContractViolation("network has no absorb tally on every tile")
    absorb = np.array(
        [
            int(state.potentials[state.tables.absorb_tally_of[tile]])
            for tile in range(network.tiles)
        ],
        dtype=np.int64,
    )
    stats = np.array(
        [
            (len(s), sum(s), sum(x * x for x in s))
            for s in state.step_ticks
        ],
        dtype=np.int64,
    )
    steps = (
        [np.asarray(s, dtype=np.int64) for s in state.step_ticks]
        if record_steps
        else None
    )
    return _assemble_record(
        network,
        seed,
        neural_timesteps,
        in_flight,
        tallies,
        absorb,
        state.tile_sim_t.copy(),
        state.absorption,
        stats,
        steps,
    )


# ---------------------------------------------------------------------------
# Fast engine
# ---------------------------------------------------------------------------


# Above this busiest-cell load, phase series are built with numpy; below it
# a plain-Python body is faster (per-step arrays this small are call-bound).
SMALL_POP = 256


def _fires_per_serial(loads: np.ndarray, width: int) -> np.ndarray:
    """count[o] = how many entries of loads exceed o, for o in 0..width-1."""
    if width == 0:
        return np.zeros(0, dtype=np.int64)
    ordered = np.sort(loads)
    return loads.size - np.searchsorted(ordered, np.arange(width), side="right")


def _spill(flight: list[int], series, first_tick: int, budget: int) -> None:
    """Add series[i] into tick first_tick + i, discarding ticks > budget."""
    if first_tick > budget:
        return
    k = min(len(series), budget - first_tick + 1)
    base = first_tick - 1
    for i in range(k):
        flight[base + i] += series[i]


def _run_fast_tile(
    network: SpikingNetwork,
    tile: int,
    neural_timesteps: int,
    rng: np.random.Generator,
    flight: list[int],
    record_steps: bool,
) -> tuple[list[int], int, int, list[int], tuple[int, int, int], list[int]]:
    """Advance one tile to the budget; returns its tallies and bookkeeping.

    Three regimes per iteration: a drained tile fast-forwards through its
    silent 2-tick empty cycles; a small-population step that provably fits
    the remaining budget runs a scalar body; anything else (large
    populations, or the possibly-truncated final cycle) runs the vector
    body, the one place the mid-phase cut-off rules live.
    """
    n = network.spec.n_nodes
    gp = network.gate_probs
    p_l = gp.p_left
    p_lr = gp.p_left + gp.p_right
    cum = np.array([p_l, p_lr, 1.0])
    accumulate = network.absorb_policy == ACCUMULATE
    budget = neural_timesteps

    c = [0] * n
    occ: list[int] = []  # sorted cells with c > 0
    if network.walkers_per_tile > 0:
        c[network.start_nodes[tile]] = network.walkers_per_tile
        occ = [network.start_nodes[tile]]
    walkers = network.walkers_per_tile
    sink = 0
    tallies = [0] * n
    absorbed_total = 0
    absorption: list[int] = []
    sim = 0
    t = 0
    stat_n = stat_sum = stat_sq = 0
    steps_list: list[int] = []

    while t < budget:
        if walkers == 0 and sink == 0:
            # drained: empty 2-tick cycles of silent enable traffic
            cycles = (budget - t) // 2
            sim += cycles
            stat_n += cycles
            stat_sum += 2 * cycles
            stat_sq += 4 * cycles
            if record_steps:
                steps_list.extend([2] * cycles)
            t = budget
            break

        if walkers == 1 and sink == 0 and t + 6 <= budget:
            # ---- lone-walker body: the long REMOVE drain tail ----
            j = occ[0]
            u = rng.random()  # same stream position as a length-1 batch
            if u < p_l:
                dest = j - 1 if j else 1
            elif u < p_lr:
                dest = j + 1
            else:
                dest = j
            flight[t] += 1  # counter, tick t+1
            flight[t + 1] += 1  # gate, tick t+2
            if dest >= n:
                if accumulate:
                    flight[t + 2] += 2  # absorb tally + sink buffer
                    sink = 1
                    # sink buffer drains during the 2-tick transfer
                    flight[t + 4] += 1
                    cost = 6
                else:
                    flight[t + 2] += 1  # absorb tally only
                    cost = 5  # empty transfer: 1 tick
                t += cost
                absorption.append(sim + 1)
                absorbed_total += 1
                c[j] = 0
                occ = []
                walkers = 0
            else:
                flight[t + 2] += 2  # destination buffer + tally
                tallies[dest] += 1
                flight[t + 4] += 1  # buffer, tick t+5
                t += 6
                cost = 6
                if dest != j:
                    c[j] = 0
                    c[dest] = 1
                    occ = [dest]
            sim += 1
            stat_n += 1
            stat_sum += cost
            stat_sq += cost * cost
            if record_steps:
                steps_list.append(cost)
            continue

        omax = max(map(c.__getitem__, occ)) if occ else 0
        cmax = omax if omax > sink else sink

        if cmax <= SMALL_POP and t + cmax + 4 + sink + walkers + 1 <= budget:
            # ---- scalar body: whole cycle fits, no truncation checks ----
            route_len = cmax + 3
            counter_series = [0] * cmax
            out_series = [0] * cmax
            draws = rng.random(walkers).tolist() if walkers else ()
            di = 0
            b: dict[int, int] = {}
            absorbed_step = 0
            row = occ
            for o in range(omax):
                if o:
                    row = [j for j in row if c[j] > o]
                fires = len(row)
                outv = 2 * fires
                if o < sink:
                    counter_series[o] = fires + 1
                    outv += 1
                else:
                    counter_series[o] = fires
                for j in row:
                    u = draws[di]
                    di += 1
                    if u < p_l:
                        dest = j - 1 if j else 1
                    elif u < p_lr:
                        dest = j + 1
                    else:
                        dest = j
                    if dest >= n:
                        absorbed_step += 1
                        if not accumulate:
                            outv -= 1
                    else:
                        tallies[dest] += 1
                        b[dest] = b.get(dest, 0) + 1
                out_series[o] = outv
            for o in range(omax, cmax):  # sink-only serialization rows
                counter_series[o] = 1
                out_series[o] = 1
            for o in range(cmax):
                v = counter_series[o]
                base = t + o
                flight[base] += v  # counter fires, tick t+o+1
                flight[base + 1] += v  # gate fires, tick t+o+2
                flight[base + 2] += out_series[o]  # outputs, tick t+o+3
            t += route_len

            if absorbed_step:
                absorption.extend([sim + 1] * absorbed_step)
                absorbed_total += absorbed_step
                if accumulate:
                    sink += absorbed_step
            bmax_mesh = max(b.values()) if b else 0
            bmax = bmax_mesh if bmax_mesh > sink else sink
            if bmax == 0:
                transfer_len = 1
            else:
                transfer_len = bmax + 1
                brow = sorted(b)
                for o in range(bmax):
                    if o:
                        brow = [j for j in brow if b[j] > o]
                    flight[t + o] += len(brow) + (1 if o < sink else 0)
            t += transfer_len
            for j in occ:
                c[j] = 0
            occ = sorted(b)
            for j in occ:
                c[j] = b[j]
            walkers -= absorbed_step
        else:
            # ---- vector body: large populations and budget-cut phases ----
            cnp = np.asarray(c, dtype=np.int64)
            route_len = cmax + 3
            route_end = t + route_len
            width = cmax
            pad = np.zeros(width, dtype=np.int64)
            pad[:omax] = _fires_per_serial(cnp, omax)
            sink_fires = (np.arange(width) < sink).astype(np.int64)

            # gate fire ticks are t+o+2, so draws exist for o <= budget-t-2
            draw_rows = (
                omax if route_end <= budget else max(min(omax, budget - t - 1), 0)
            )
            if draw_rows > 0:
                alive = cnp[None, :] > np.arange(draw_rows)[:, None]
                oo, jj = np.nonzero(alive)
                u = rng.random(oo.size)
                choice = np.minimum(np.searchsorted(cum, u, side="right"), 2)
                dest = np.abs(
                    jj + np.where(choice == 0, -1, np.where(choice == 1, 1, 0))
                )
                absorbed = dest >= n
            else:
                oo = np.zeros(0, dtype=np.int64)
                dest = np.zeros(0, dtype=np.int64)
                absorbed = np.zeros(0, dtype=bool)

            if route_end <= budget:
                landed = dest[~absorbed]
            else:
                arrived = t + oo + 4 <= budget
                landed = dest[~absorbed & arrived]
                absorbed = absorbed & arrived
            bnp = np.bincount(landed, minlength=n)
            for v in landed.tolist():
                tallies[v] += 1
            n_absorbed = int(np.count_nonzero(absorbed))
            if n_absorbed:
                absorption.extend([sim + 1] * n_absorbed)
                absorbed_total += n_absorbed

            out_series = 2 * pad + sink_fires
            if not accumulate and oo.size:
                hits = np.bincount(oo[dest >= n], minlength=width)[:width]
                out_series = out_series - hits
            counter_series = (pad + sink_fires).tolist()
            _spill(flight, counter_series, t + 1, budget)
            _spill(flight, counter_series, t + 2, budget)
            _spill(flight, out_series.tolist(), t + 3, budget)
            if route_end > budget:
                t = budget
                break
            t = route_end

            if accumulate:
                sink += n_absorbed
            bmax_mesh = int(bnp.max())
            bmax = max(bmax_mesh, sink)
            if bmax == 0:
                if t >= budget:
                    break
                t += 1
                transfer_len = 1
            else:
                transfer_len = bmax + 1
                transfer_end = t + transfer_len
                buf_fires = np.zeros(bmax, dtype=np.int64)
                buf_fires[:bmax_mesh] = _fires_per_serial(bnp, bmax_mesh)
                buf_fires += (np.arange(bmax) < sink).astype(np.int64)
                _spill(flight, buf_fires.tolist(), t + 1, budget)
                if transfer_end > budget:
                    t = budget
                    break
                t = transfer_end

            c = bnp.tolist()
            occ = np.flatnonzero(bnp).tolist()
            walkers = int(bnp.sum())

        sim += 1
        cost = route_len + transfer_len
        stat_n += 1
        stat_sum += cost
        stat_sq += cost * cost
        if record_steps:
            steps_list.append(cost)
        if accumulate:
            if absorbed_total != sink or walkers + sink != network.walkers_per_tile:
                raise ContractViolation(
                    f"tile {tile}: walker conservation violated at sim step {sim}"
                )
        elif walkers + absorbed_total != network.walkers_per_tile:
            raise ContractViolation(
                f"tile {tile}: walker conservation violated at sim step {sim}"
            )

    return tallies, absorbed_total, sim, absorption, (stat_n, stat_sum, stat_sq), steps_list


def _run_fast(
    network: SpikingNetwork,
    neural_timesteps: int,
    seed: int,
    record_steps: bool,
) -> SimulationRecord:
    rngs = tile_rngs(network.tiles, seed)
    n = network.spec.n_nodes
    flight = [0] * neural_timesteps
    tallies = np.zeros((network.tiles, n), dtype=np.int64)
    absorb = np.zeros(network.tiles, dtype=np.int64)
    per_tile_sim = np.zeros(network.tiles, dtype=np.int64)
    stats = np.zeros((network.tiles, 3), dtype=np.int64)
    absorption: list[list[int]] = []
    steps: list[np.ndarray] = []
    for tile in range(network.tiles):
        row, absorbed, sim, samples, stat, step_list = _run_fast_tile(
            network, tile, neural_timesteps, rngs[tile], flight, record_steps
        )
        tallies[tile] = row
        absorb[tile] = absorbed
        per_tile_sim[tile] = sim
        stats[tile] = stat
        absorption.append(samples)
        steps.append(np.asarray(step_list, dtype=np.int64))
    return _assemble_record(
        network,
        seed,
        neural_timesteps,
        np.asarray(flight, dtype=np.int64),
        tallies,
        absorb,
        per_tile_sim,
        absorption,
        stats,
        steps if record_steps else None,
    )


def _fast_capable(network: SpikingNetwork) -> bool:
    if not network.canonical:
        return False
    return all(
        syn.delay == 1 for syns in network.synapses.values() for syn in syns
    )


def run(
    network: SpikingNetwork,
    neural_timesteps: int,
    seed: int,
    record_steps: bool = False,
) -> SimulationRecord:
    """Advance the network for a fixed neural-timestep budget.

    Uses the phase-computed fast engine for canonical unit-delay networks
    and falls back to the tick-level reference engine otherwise; both yield
    identical records for the same seed.  record_steps additionally attaches
    the explicit per-simulation-timestep neural costs (potentially long for
    drained tiles — intended for small runs and diagnostics).
    """
    if neural_timesteps < 1:
        raise ValueError(f"neural_timesteps must be >= 1, got {neural_timesteps}")
    if _fast_capable(network):
        return _run_fast(network, neural_timesteps, seed, record_steps)
    return _run_reference(network, neural_timesteps, seed, record_steps)


def decode_counts(record: SimulationRecord, spec: ProblemSpec) -> MeshSolution:
    """Decode a record's tallies into midpoint temperatures.

    Requires tiles to cover every start cell with equal multiplicity so the
    tally matrix folds into one NodeCounts table.
    """
    if record.counts is None:
        raise ContractViolation(
            "record's tiles do not cover every start cell uniformly"
        )
    if record.counts.n_nodes != spec.n_nodes:
        raise ContractViolation(
            f"record covers {record.counts.n_nodes} cells, mesh has {spec.n_nodes}"
        )
    frac = record.unabsorbed / record.total_walkers if record.total_walkers else 0.0
    return estimate_solution(record.counts, spec, unabsorbed_fraction=frac)


def spikes_in_flight_csv(record: SimulationRecord) -> str:
    """CSV trace of spike events in flight per neural timestep."""
    lines = [
        f"# simulation-record-v1 seed={record.seed} "
        f"neural_timesteps={record.neural_timesteps_used} "
        f"tiles={record.tiles} absorb_policy={record.absorb_policy}",
        "neural_t,spikes_in_flight",
    ]
    for t, count in enumerate(record.spikes_in_flight, start=1):
        lines.append(f"{t},{int(count)}")
    return "\n".join(lines) + "\n"

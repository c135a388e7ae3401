"""Compile the mesh walk into a spiking network of per-cell sub-circuits.

Each mesh cell in each tile gets a seven-neuron sub-circuit:

    counter -> gate -> {out_left, out_right, out_stay} -> neighbour buffer
                                                        +  neighbour tally

The counter holds the cell's walker population as membrane potential and
serialises it, one spike per neural timestep, while its tile is in the
routing phase.  Each spike reaches the probability gate, which forwards it
to exactly one of the three output gates: a single uniform draw partitioned
by the outputs' cumulative probabilities, so the three-way choice is
mutually exclusive by construction.  The chosen output fires to the
destination cell's buffer (the walker itself) and tally (the visit count);
tallies never fire and never decay, so final counts are read from their
potentials.  Buffers hold arrivals until the tile's transfer phase, then
serialise them back into their cell's counter, completing one simulation
timestep.

Layout is canonical and arithmetic: neuron ids run tile-major, cell-major,
with roles ordered [counter, buffer, gate, out_left, out_right, out_stay,
tally] inside a cell, then a per-tile trailer [supervisor, absorb_tally]
and, under the accumulate policy, [sink_buffer, sink_counter, sink_gate,
sink_out].  A tile therefore holds 7*N + 2 neurons (+4 with accumulate).

Boundary wiring: cell 0's out_left routes to cell 1 (the reflecting wall),
and cell N-1's out_right routes to the absorption path — straight into the
absorb tally under the remove policy, or into the sink group (which keeps
cycling its walkers through the count-and-route phases, inflating the
per-step cost as it fills) under the accumulate policy.  For N == 1 both
lateral outputs absorb.

The supervisor neuron never fires on potential; the engine drives it as the
tile's phase barrier, and its weight-0 enable synapses to every counter and
buffer document the control topology in exported netlists.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

from spikewalk.problem import ProblemSpec

ROLE_COUNTER = "counter"
ROLE_BUFFER = "buffer"
ROLE_GATE = "probability_gate"
ROLE_OUTPUT = "output_gate"
ROLE_SUPERVISOR = "supervisor"
ROLE_TALLY = "tally"

ROLES = (
    ROLE_COUNTER,
    ROLE_BUFFER,
    ROLE_GATE,
    ROLE_OUTPUT,
    ROLE_SUPERVISOR,
    ROLE_TALLY,
)

# Role order of the seven neurons inside one cell's sub-circuit.
CELL_ROLES = (
    ROLE_COUNTER,
    ROLE_BUFFER,
    ROLE_GATE,
    ROLE_OUTPUT,  # out_left
    ROLE_OUTPUT,  # out_right
    ROLE_OUTPUT,  # out_stay
    ROLE_TALLY,
)
CELL_SIZE = len(CELL_ROLES)

# Offsets within a cell's id block.
COUNTER, BUFFER, GATE, OUT_LEFT, OUT_RIGHT, OUT_STAY, TALLY = range(CELL_SIZE)

# Offsets within the accumulate-policy sink group.
SINK_BUFFER, SINK_COUNTER, SINK_GATE, SINK_OUT = range(4)

REMOVE = "remove"
ACCUMULATE = "accumulate"
ABSORB_POLICIES = (REMOVE, ACCUMULATE)

NEAREST = "nearest"
ONE_SIDED_DOWN = "one_sided_down"
ONE_SIDED_UP = "one_sided_up"
ROUNDING_MODES = (NEAREST, ONE_SIDED_DOWN, ONE_SIDED_UP)


def quantize_probability(p: float, resolution_bits: int, rounding: str = NEAREST) -> float:
    """Snap p to the grid k / 2**resolution_bits per the rounding mode.

    NEAREST rounds ties half-up; the one-sided modes floor or ceil, matching
    hardware tables that only round in one direction.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    if resolution_bits < 1:
        raise ValueError(f"resolution_bits must be >= 1, got {resolution_bits}")
    if rounding not in ROUNDING_MODES:
        raise ValueError(f"unknown rounding mode {rounding!r}")
    scale = float(2**resolution_bits)
    if rounding == NEAREST:
        k = math.floor(p * scale + 0.5)
    elif rounding == ONE_SIDED_DOWN:
        k = math.floor(p * scale)
    else:
        k = math.ceil(p * scale)
    return min(max(k, 0), int(scale)) / scale


@dataclass(frozen=True)
class PrecisionConfig:
    """Stochastic-parameter resolution: k/2^bits grid, or exact when bits is None."""

    bits: int | None = 8
    rounding: str = NEAREST

    def __post_init__(self) -> None:
        if self.bits is not None and self.bits < 1:
            raise ValueError(f"bits must be >= 1 or None, got {self.bits}")
        if self.rounding not in ROUNDING_MODES:
            raise ValueError(f"unknown rounding mode {self.rounding!r}")

    def quantize(self, p: float) -> float:
        if self.bits is None:
            return p
        return quantize_probability(p, self.bits, self.rounding)


@dataclass(frozen=True)
class GateProbabilities:
    """The three-way routing partition held by one cell's gate outputs.

    p_stay is conventionally the exact complement 1 - p_left - p_right so the
    partition sums to one in floating point without a third rounding.
    """

    p_left: float
    p_right: float
    p_stay: float

    def __post_init__(self) -> None:
        for name, p in (("p_left", self.p_left), ("p_right", self.p_right),
                        ("p_stay", self.p_stay)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        total = self.p_left + self.p_right + self.p_stay
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"gate probabilities sum to {total}, not 1")


def imbalanced_gate_preset() -> GateProbabilities:
    """One-sided-rounding hardware preset with p_left slightly above p_right.

    The left surplus drives visit counts near the reflecting wall up and
    biases the estimated temperature high at every interior cell relative
    to the balanced walk; the quantization-bias acceptance criterion
    measures exactly that direction.
    """
    p_left, p_right = 0.0374, 0.0368
    return GateProbabilities(p_left, p_right, 1.0 - p_left - p_right)


@dataclass(frozen=True)
class NeuronSpec:
    """Static parameters of one neuron.

    stochastic_p is configuration data for routing: on an output gate it is
    the probability mass of that route, read by the upstream probability
    gate when it partitions its single uniform draw.  Neurons themselves
    fire deterministically on threshold.
    """

    threshold: float
    leak: float = 0.0
    reset_potential: float = 0.0
    stochastic_p: float | None = None
    role: str = ROLE_COUNTER

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.stochastic_p is not None and not 0.0 <= self.stochastic_p <= 1.0:
            raise ValueError(f"stochastic_p={self.stochastic_p} outside [0, 1]")


@dataclass(frozen=True)
class SynapseSpec:
    """Directed edge: spikes from source arrive at target after delay ticks."""

    source: int
    target: int
    weight: float
    delay: int = 1

    def __post_init__(self) -> None:
        if self.delay < 1:
            raise ValueError(f"delay must be >= 1, got {self.delay}")


@dataclass
class SpikingNetwork:
    """A compiled network plus the metadata needed to run and export it.

    neurons is an id-indexed table; synapses adjacency lists keyed by source
    id, each list ascending by target id (for probability gates that order
    is semantic: left, right, stay).  node_of_neuron maps every id to
    (tile, cell, role) with cell None for supervisors and cell == N for the
    absorption-side neurons.  canonical marks networks whose layout follows
    the arithmetic id scheme above, enabling the fast engine.
    """

    neurons: dict[int, NeuronSpec]
    synapses: dict[int, list[SynapseSpec]]
    tiles: int
    node_of_neuron: dict[int, tuple[int, int | None, str]]
    absorb_policy: str
    spec: ProblemSpec
    walkers_per_tile: int
    start_nodes: tuple[int, ...]
    gate_probs: GateProbabilities
    precision: PrecisionConfig
    canonical: bool = True
    # True when gate_probs were supplied directly rather than derived from
    # the mesh via quantization; exporters need the distinction because the
    # per-neuron precision metadata only applies to derived masses.
    gate_probs_overridden: bool = False

    @property
    def n_neurons(self) -> int:
        return len(self.neurons)

    @property
    def n_synapses(self) -> int:
        return sum(len(v) for v in self.synapses.values())

    @property
    def tile_stride(self) -> int:
        return neurons_per_tile(self.spec.n_nodes, self.absorb_policy)

    # --- canonical id arithmetic -------------------------------------------
    def cell_neuron(self, tile: int, cell: int, offset: int) -> int:
        return tile * self.tile_stride + cell * CELL_SIZE + offset

    def supervisor(self, tile: int) -> int:
        return tile * self.tile_stride + self.spec.n_nodes * CELL_SIZE

    def absorb_tally(self, tile: int) -> int:
        return self.supervisor(tile) + 1

    def sink_neuron(self, tile: int, offset: int) -> int:
        if self.absorb_policy != ACCUMULATE:
            raise ValueError("sink group exists only under the accumulate policy")
        return self.absorb_tally(tile) + 1 + offset


def neurons_per_tile(n_nodes: int, absorb_policy: str = REMOVE) -> int:
    """Tile size formula: 7 per cell + supervisor + absorb tally (+4 sink)."""
    base = CELL_SIZE * n_nodes + 2
    return base + 4 if absorb_policy == ACCUMULATE else base


def _normalized_start_nodes(
    start_index: int | tuple[int, ...] | list[int], tiles: int, n_nodes: int
) -> tuple[int, ...]:
    if isinstance(start_index, int):
        starts = (start_index,) * tiles
    else:
        starts = tuple(int(s) for s in start_index)
        if len(starts) != tiles:
            raise ValueError(
                f"start_index sequence has {len(starts)} entries for {tiles} tiles"
            )
    for s in starts:
        if not 0 <= s < n_nodes:
            raise ValueError(f"start node {s} outside 0..{n_nodes - 1}")
    return starts


def build_network(
    spec: ProblemSpec,
    walkers_per_tile: int,
    tiles: int,
    quantization: PrecisionConfig | None = None,
    absorb_policy: str = REMOVE,
    start_index: int | tuple[int, ...] | list[int] = 0,
    gate_probs: GateProbabilities | None = None,
) -> SpikingNetwork:
    """Compile the mesh into tiles of chained sub-circuits.

    start_index may be a single cell (every tile starts its walkers there)
    or one cell per tile, which lets a single network cover all start cells
    for full-mesh estimates.  gate_probs overrides the quantized hop
    probabilities (used by the imbalanced preset); by default the mesh's
    hop probability is quantized per `quantization` and the stay mass is
    its exact complement.  Asymmetric left/right masses are legal but
    warned about, since they bias the estimate.
    """
    if walkers_per_tile < 0:
        raise ValueError(f"walkers_per_tile must be >= 0, got {walkers_per_tile}")
    if tiles < 1:
        raise ValueError(f"tiles must be >= 1, got {tiles}")
    if absorb_policy not in ABSORB_POLICIES:
        raise ValueError(f"unknown absorb policy {absorb_policy!r}")
    if quantization is None:
        quantization = PrecisionConfig()

    n = spec.n_nodes
    starts = _normalized_start_nodes(start_index, tiles, n)

    overridden = gate_probs is not None
    if gate_probs is None:
        p_go = spec.probabilities().p_go
        p_left = quantization.quantize(p_go)
        p_right = quantization.quantize(p_go)
        gate_probs = GateProbabilities(p_left, p_right, 1.0 - p_left - p_right)
    if gate_probs.p_left != gate_probs.p_right:
        warnings.warn(
            "asymmetric gate probabilities "
            f"(p_left={gate_probs.p_left}, p_right={gate_probs.p_right}) "
            "bias the estimated temperature",
            stacklevel=2,
        )

    stride = neurons_per_tile(n, absorb_policy)
    neurons: dict[int, NeuronSpec] = {}
    synapses: dict[int, list[SynapseSpec]] = {}
    node_of: dict[int, tuple[int, int | None, str]] = {}

    relay = NeuronSpec(threshold=1.0, role=ROLE_GATE)
    counter = NeuronSpec(threshold=1.0, role=ROLE_COUNTER)
    buffer = NeuronSpec(threshold=1.0, role=ROLE_BUFFER)
    tally = NeuronSpec(threshold=math.inf, role=ROLE_TALLY)
    supervisor = NeuronSpec(threshold=math.inf, role=ROLE_SUPERVISOR)

    def out_spec(p: float) -> NeuronSpec:
        return NeuronSpec(threshold=1.0, role=ROLE_OUTPUT, stochastic_p=p)

    def wire(source: int, targets: list[int], weight: float = 1.0) -> None:
        synapses[source] = [
            SynapseSpec(source=source, target=t, weight=weight)
            for t in sorted(targets)
        ]

    for tile in range(tiles):
        base = tile * stride
        sup = base + n * CELL_SIZE
        absorb = sup + 1

        def cell_id(cell: int, offset: int) -> int:
            return base + cell * CELL_SIZE + offset

        # absorption path destinations (walker event, visit event)
        if absorb_policy == ACCUMULATE:
            sink = absorb + 1
            absorb_targets = [absorb, sink + SINK_BUFFER]
        else:
            absorb_targets = [absorb]

        for cell in range(n):
            cid = cell_id(cell, COUNTER)
            neurons[cid] = counter
            neurons[cell_id(cell, BUFFER)] = buffer
            neurons[cell_id(cell, GATE)] = relay
            neurons[cell_id(cell, OUT_LEFT)] = out_spec(gate_probs.p_left)
            neurons[cell_id(cell, OUT_RIGHT)] = out_spec(gate_probs.p_right)
            neurons[cell_id(cell, OUT_STAY)] = out_spec(gate_probs.p_stay)
            neurons[cell_id(cell, TALLY)] = tally
            for offset, role in enumerate(CELL_ROLES):
                node_of[cell_id(cell, offset)] = (tile, cell, role)

            wire(cid, [cell_id(cell, GATE)])
            # gate targets ascend as (left, right, stay): the draw partition
            wire(
                cell_id(cell, GATE),
                [
                    cell_id(cell, OUT_LEFT),
                    cell_id(cell, OUT_RIGHT),
                    cell_id(cell, OUT_STAY),
                ],
            )
            left_dest = abs(cell - 1)  # reflecting wall at cell 0
            if left_dest >= n:
                wire(cell_id(cell, OUT_LEFT), absorb_targets)  # N == 1 only
            else:
                wire(
                    cell_id(cell, OUT_LEFT),
                    [cell_id(left_dest, BUFFER), cell_id(left_dest, TALLY)],
                )
            if cell + 1 >= n:
                wire(cell_id(cell, OUT_RIGHT), absorb_targets)
            else:
                wire(
                    cell_id(cell, OUT_RIGHT),
                    [cell_id(cell + 1, BUFFER), cell_id(cell + 1, TALLY)],
                )
            wire(
                cell_id(cell, OUT_STAY),
                [cell_id(cell, BUFFER), cell_id(cell, TALLY)],
            )
            wire(cell_id(cell, BUFFER), [cid])

        neurons[sup] = supervisor
        node_of[sup] = (tile, None, ROLE_SUPERVISOR)
        neurons[absorb] = tally
        node_of[absorb] = (tile, n, ROLE_TALLY)

        enable_counters = [cell_id(c, COUNTER) for c in range(n)]
        enable_buffers = [cell_id(c, BUFFER) for c in range(n)]
        if absorb_policy == ACCUMULATE:
            sink = absorb + 1
            neurons[sink + SINK_BUFFER] = buffer
            neurons[sink + SINK_COUNTER] = counter
            neurons[sink + SINK_GATE] = relay
            neurons[sink + SINK_OUT] = out_spec(1.0)
            for offset, role in (
                (SINK_BUFFER, ROLE_BUFFER),
                (SINK_COUNTER, ROLE_COUNTER),
                (SINK_GATE, ROLE_GATE),
                (SINK_OUT, ROLE_OUTPUT),
            ):
                node_of[sink + offset] = (tile, n, role)
            # the sink cycles its walkers: buffer -> counter -> gate -> out
            # -> buffer, with no tally on re-arrival
            wire(sink + SINK_BUFFER, [sink + SINK_COUNTER])
            wire(sink + SINK_COUNTER, [sink + SINK_GATE])
            wire(sink + SINK_GATE, [sink + SINK_OUT])
            wire(sink + SINK_OUT, [sink + SINK_BUFFER])
            enable_counters.append(sink + SINK_COUNTER)
            enable_buffers.append(sink + SINK_BUFFER)

        # weight-0 enable edges document the supervisor's phase control
        wire(sup, sorted(enable_counters + enable_buffers), weight=0.0)

    return SpikingNetwork(
        neurons=neurons,
        synapses=synapses,
        tiles=tiles,
        node_of_neuron=node_of,
        absorb_policy=absorb_policy,
        spec=spec,
        walkers_per_tile=walkers_per_tile,
        start_nodes=starts,
        gate_probs=gate_probs,
        precision=quantization,
        canonical=True,
        gate_probs_overridden=overridden,
    )

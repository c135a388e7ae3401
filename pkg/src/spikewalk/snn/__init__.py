"""Spiking execution of the mesh walk: circuit compiler and engines."""

from spikewalk.snn.circuit import (
    ACCUMULATE,
    NEAREST,
    ONE_SIDED_DOWN,
    ONE_SIDED_UP,
    REMOVE,
    ROLE_BUFFER,
    ROLE_COUNTER,
    ROLE_GATE,
    ROLE_OUTPUT,
    ROLE_SUPERVISOR,
    ROLE_TALLY,
    GateProbabilities,
    NeuronSpec,
    PrecisionConfig,
    SpikingNetwork,
    SynapseSpec,
    build_network,
    imbalanced_gate_preset,
    neurons_per_tile,
    quantize_probability,
)
from spikewalk.snn.engine import (
    NetworkState,
    SimulationRecord,
    decode_counts,
    initial_state,
    neural_step,
    run,
    spikes_in_flight_csv,
)

__all__ = [
    "ACCUMULATE",
    "NEAREST",
    "ONE_SIDED_DOWN",
    "ONE_SIDED_UP",
    "REMOVE",
    "ROLE_BUFFER",
    "ROLE_COUNTER",
    "ROLE_GATE",
    "ROLE_OUTPUT",
    "ROLE_SUPERVISOR",
    "ROLE_TALLY",
    "GateProbabilities",
    "NeuronSpec",
    "NetworkState",
    "PrecisionConfig",
    "SimulationRecord",
    "SpikingNetwork",
    "SynapseSpec",
    "build_network",
    "decode_counts",
    "imbalanced_gate_preset",
    "initial_state",
    "neural_step",
    "neurons_per_tile",
    "quantize_probability",
    "run",
    "spikes_in_flight_csv",
]

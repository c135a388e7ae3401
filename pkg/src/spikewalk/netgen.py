"""Portable netlist export/import for compiled spiking networks.

The format, ``netlist-v1``, is plain UTF-8 JSON documented field by field in
docs/netlist-v1.md.  Export is canonical — neurons ascend by id, synapses by
(source, target), keys appear in a fixed order — so identical networks always
serialize to identical bytes and golden-file comparisons are stable.

Import validates the document (schema shape, referential integrity, version)
with JSON-path error locations, then rebuilds the network from its metadata
and verifies the rebuilt circuit matches the document body neuron for neuron
and synapse for synapse.  The body is authoritative: a document whose body
diverges from what its metadata generates is rejected rather than trusted,
which keeps every imported network runnable by the fast engine and
guarantees export -> import -> run reproduces the exact SimulationRecord.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Any

from spikewalk.mcwalk import ContractViolation
from spikewalk.problem import ProblemSpec
from spikewalk.snn.circuit import (
    ABSORB_POLICIES,
    ROLES,
    ROUNDING_MODES,
    GateProbabilities,
    NeuronSpec,
    PrecisionConfig,
    SpikingNetwork,
    SynapseSpec,
    build_network,
    neurons_per_tile,
)

FORMAT_NAME = "netlist-v1"
FORMAT_VERSION = "1.0.0"


class NetlistParseError(ValueError):
    """Document rejected; the message starts with the offending JSON path."""


def _fail(path: str, message: str) -> None:
    raise NetlistParseError(f"{path}: {message}")


def _threshold_to_json(value: float) -> float | str:
    # JSON has no Infinity literal; never-firing neurons store "inf"
    return "inf" if math.isinf(value) else value


def _threshold_from_json(value: Any, path: str) -> float:
    if value == "inf":
        return math.inf
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    _fail(path, f"threshold must be a number or \"inf\", got {value!r}")
    raise AssertionError  # unreachable


@dataclass(frozen=True)
class NetlistDocument:
    """Parsed netlist: metadata plus flat neuron and synapse tables.

    The neuron tuples are (id, role, threshold, leak, reset, stochastic_p,
    precision_bits); synapse tuples are (source, target, weight, delay).
    """

    format_version: str
    spec: ProblemSpec
    tiles: int
    walkers_per_tile: int
    start_nodes: tuple[int, ...]
    absorb_policy: str
    gate_probs: GateProbabilities
    gate_probs_overridden: bool
    precision: PrecisionConfig
    seed: int | None
    neurons: tuple[tuple[int, str, float, float, float, float | None, int | None], ...]
    synapses: tuple[tuple[int, int, float, int], ...]


def document_of(network: SpikingNetwork, seed: int | None = None) -> NetlistDocument:
    """Flatten a compiled network into its canonical document form.

    seed is carried as metadata for tooling that wants to pin the intended
    run seed; the netlist itself is seed-free.
    """
    expected = network.tiles * neurons_per_tile(
        network.spec.n_nodes, network.absorb_policy
    )
    if network.n_neurons != expected:
        raise ContractViolation(
            f"network has {network.n_neurons} neurons, the tile formula "
            f"gives {expected}"
        )
    gate_bits = None if network.gate_probs_overridden else network.precision.bits
    neurons = []
    for nid in sorted(network.neurons):
        spec = network.neurons[nid]
        bits = gate_bits if spec.stochastic_p is not None else None
        neurons.append(
            (nid, spec.role, spec.threshold, spec.leak, spec.reset_potential,
             spec.stochastic_p, bits)
        )
    synapses = sorted(
        (syn.source, syn.target, syn.weight, syn.delay)
        for row in network.synapses.values()
        for syn in row
    )
    return NetlistDocument(
        format_version=FORMAT_VERSION,
        spec=network.spec,
        tiles=network.tiles,
        walkers_per_tile=network.walkers_per_tile,
        start_nodes=network.start_nodes,
        absorb_policy=network.absorb_policy,
        gate_probs=network.gate_probs,
        gate_probs_overridden=network.gate_probs_overridden,
        precision=network.precision,
        seed=seed,
        neurons=tuple(neurons),
        synapses=tuple(synapses),
    )


def document_to_text(doc: NetlistDocument) -> str:
    """Serialize with a fixed key order; byte-stable for equal documents."""
    payload = {
        "format": FORMAT_NAME,
        "format_version": doc.format_version,
        "metadata": {
            "problem": {
                "length_l": doc.spec.length_l,
                "forcing_f": doc.spec.forcing_f,
                "dx": doc.spec.dx,
                "dt": doc.spec.dt,
                "threshold_c": doc.spec.threshold_c,
            },
            "tiles": doc.tiles,
            "walkers_per_tile": doc.walkers_per_tile,
            "start_nodes": list(doc.start_nodes),
            "absorb_policy": doc.absorb_policy,
            "gate_probs": {
                "p_left": doc.gate_probs.p_left,
                "p_right": doc.gate_probs.p_right,
                "p_stay": doc.gate_probs.p_stay,
                "overridden": doc.gate_probs_overridden,
            },
            "precision": {
                "bits": doc.precision.bits,
                "rounding": doc.precision.rounding,
            },
            "seed": doc.seed,
        },
        "neurons": [
            {
                "id": nid,
                "role": role,
                "threshold": _threshold_to_json(threshold),
                "leak": leak,
                "reset": reset,
                "stochastic_p": stochastic_p,
                "precision_bits": bits,
            }
            for nid, role, threshold, leak, reset, stochastic_p, bits in doc.neurons
        ],
        "synapses": [
            {"source": s, "target": t, "weight": w, "delay": d}
            for s, t, w, d in doc.synapses
        ],
    }
    return json.dumps(payload, indent=2, allow_nan=False) + "\n"


def export_netlist(network: SpikingNetwork, seed: int | None = None) -> str:
    """Canonical JSON text for a compiled network."""
    return document_to_text(document_of(network, seed))


# --- parsing -----------------------------------------------------------------


def _req(mapping: Any, key: str, path: str) -> Any:
    if not isinstance(mapping, dict):
        _fail(path, f"expected an object, got {type(mapping).__name__}")
    if key not in mapping:
        _fail(path, f"missing required key {key!r}")
    return mapping[key]


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {value!r}")
    return float(value)


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, f"expected an integer, got {value!r}")
    return value


def parse_document(text: str) -> NetlistDocument:
    """Validate netlist JSON and return its parsed document.

    Raises NetlistParseError with a JSON-path location for any violation:
    malformed JSON, wrong format name, unsupported major version, missing or
    mistyped fields, dangling synapse endpoints, or non-contiguous ids.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetlistParseError(f"$: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        _fail("$", "document root must be an object")

    fmt = _req(raw, "format", "$")
    if fmt != FORMAT_NAME:
        _fail("$.format", f"unsupported format {fmt!r}, expected {FORMAT_NAME!r}")
    version = _req(raw, "format_version", "$")
    if not isinstance(version, str) or not version.split(".")[0].isdigit():
        _fail("$.format_version", f"malformed version {version!r}")
    if version.split(".")[0] != FORMAT_VERSION.split(".")[0]:
        _fail("$.format_version", f"unsupported major version {version!r}")

    meta = _req(raw, "metadata", "$")
    prob = _req(meta, "problem", "$.metadata")
    ppath = "$.metadata.problem"
    try:
        spec = ProblemSpec(
            length_l=_number(_req(prob, "length_l", ppath), f"{ppath}.length_l"),
            forcing_f=_number(_req(prob, "forcing_f", ppath), f"{ppath}.forcing_f"),
            dx=_number(_req(prob, "dx", ppath), f"{ppath}.dx"),
            dt=_number(_req(prob, "dt", ppath), f"{ppath}.dt"),
            threshold_c=_number(
                _req(prob, "threshold_c", ppath), f"{ppath}.threshold_c"
            ),
        )
    except NetlistParseError:
        raise
    except ValueError as exc:
        raise NetlistParseError(f"{ppath}: {exc}") from exc

    tiles = _integer(_req(meta, "tiles", "$.metadata"), "$.metadata.tiles")
    if tiles < 1:
        _fail("$.metadata.tiles", f"must be >= 1, got {tiles}")
    walkers = _integer(
        _req(meta, "walkers_per_tile", "$.metadata"), "$.metadata.walkers_per_tile"
    )
    if walkers < 0:
        _fail("$.metadata.walkers_per_tile", f"must be >= 0, got {walkers}")

    raw_starts = _req(meta, "start_nodes", "$.metadata")
    if not isinstance(raw_starts, list):
        _fail("$.metadata.start_nodes", "expected a list")
    starts = tuple(
        _integer(s, f"$.metadata.start_nodes[{i}]") for i, s in enumerate(raw_starts)
    )
    if len(starts) != tiles:
        _fail("$.metadata.start_nodes", f"{len(starts)} entries for {tiles} tiles")
    for i, s in enumerate(starts):
        if not 0 <= s < spec.n_nodes:
            _fail(f"$.metadata.start_nodes[{i}]",
                  f"start node {s} outside 0..{spec.n_nodes - 1}")

    policy = _req(meta, "absorb_policy", "$.metadata")
    if policy not in ABSORB_POLICIES:
        _fail("$.metadata.absorb_policy", f"unknown policy {policy!r}")

    gp = _req(meta, "gate_probs", "$.metadata")
    gpath = "$.metadata.gate_probs"
    try:
        gate_probs = GateProbabilities(
            p_left=_number(_req(gp, "p_left", gpath), f"{gpath}.p_left"),
            p_right=_number(_req(gp, "p_right", gpath), f"{gpath}.p_right"),
            p_stay=_number(_req(gp, "p_stay", gpath), f"{gpath}.p_stay"),
        )
    except NetlistParseError:
        raise
    except ValueError as exc:
        raise NetlistParseError(f"{gpath}: {exc}") from exc
    overridden = _req(gp, "overridden", gpath)
    if not isinstance(overridden, bool):
        _fail(f"{gpath}.overridden", f"expected a boolean, got {overridden!r}")

    prec = _req(meta, "precision", "$.metadata")
    bits = _req(prec, "bits", "$.metadata.precision")
    if bits is not None:
        bits = _integer(bits, "$.metadata.precision.bits")
    rounding = _req(prec, "rounding", "$.metadata.precision")
    if rounding not in ROUNDING_MODES:
        _fail("$.metadata.precision.rounding", f"unknown mode {rounding!r}")
    try:
        precision = PrecisionConfig(bits=bits, rounding=rounding)
    except ValueError as exc:
        raise NetlistParseError(f"$.metadata.precision: {exc}") from exc

    seed = meta.get("seed")
    if seed is not None:
        seed = _integer(seed, "$.metadata.seed")

    raw_neurons = _req(raw, "neurons", "$")
    if not isinstance(raw_neurons, list) or not raw_neurons:
        _fail("$.neurons", "expected a non-empty list")
    neurons = []
    seen_ids = set()
    for i, entry in enumerate(raw_neurons):
        path = f"$.neurons[{i}]"
        nid = _integer(_req(entry, "id", path), f"{path}.id")
        if nid in seen_ids:
            _fail(f"{path}.id", f"duplicate neuron id {nid}")
        seen_ids.add(nid)
        role = _req(entry, "role", path)
        if role not in ROLES:
            _fail(f"{path}.role", f"unknown role {role!r}")
        threshold = _threshold_from_json(
            _req(entry, "threshold", path), f"{path}.threshold"
        )
        leak = _number(_req(entry, "leak", path), f"{path}.leak")
        reset = _number(_req(entry, "reset", path), f"{path}.reset")
        stochastic_p = _req(entry, "stochastic_p", path)
        if stochastic_p is not None:
            stochastic_p = _number(stochastic_p, f"{path}.stochastic_p")
            if not 0.0 <= stochastic_p <= 1.0:
                _fail(f"{path}.stochastic_p", f"{stochastic_p} outside [0, 1]")
        nbits = _req(entry, "precision_bits", path)
        if nbits is not None:
            nbits = _integer(nbits, f"{path}.precision_bits")
        neurons.append((nid, role, threshold, leak, reset, stochastic_p, nbits))
    if sorted(seen_ids) != list(range(len(neurons))):
        _fail("$.neurons", "neuron ids must be contiguous from 0")

    raw_synapses = _req(raw, "synapses", "$")
    if not isinstance(raw_synapses, list):
        _fail("$.synapses", "expected a list")
    synapses = []
    for i, entry in enumerate(raw_synapses):
        path = f"$.synapses[{i}]"
        source = _integer(_req(entry, "source", path), f"{path}.source")
        target = _integer(_req(entry, "target", path), f"{path}.target")
        for name, endpoint in (("source", source), ("target", target)):
            if endpoint not in seen_ids:
                _fail(f"{path}.{name}", f"dangling endpoint {endpoint}")
        weight = _number(_req(entry, "weight", path), f"{path}.weight")
        delay = _integer(_req(entry, "delay", path), f"{path}.delay")
        if delay < 1:
            _fail(f"{path}.delay", f"delay must be >= 1, got {delay}")
        synapses.append((source, target, weight, delay))

    return NetlistDocument(
        format_version=version,
        spec=spec,
        tiles=tiles,
        walkers_per_tile=walkers,
        start_nodes=starts,
        absorb_policy=policy,
        gate_probs=gate_probs,
        gate_probs_overridden=overridden,
        precision=precision,
        seed=seed,
        neurons=tuple(neurons),
        synapses=tuple(synapses),
    )


def _network_body(network: SpikingNetwork):
    neurons = tuple(
        (nid, s.role, s.threshold, s.leak, s.reset_potential, s.stochastic_p)
        for nid in sorted(network.neurons)
        for s in (network.neurons[nid],)
    )
    synapses = tuple(sorted(
        (syn.source, syn.target, syn.weight, syn.delay)
        for row in network.synapses.values()
        for syn in row
    ))
    return neurons, synapses


def import_netlist(text: str) -> SpikingNetwork:
    """Reconstruct a runnable network from netlist-v1 text.

    The metadata is compiled through build_network and the result is checked
    against the document body; any divergence (edited neuron parameters,
    rewired synapses, counts off the tile formula) rejects the document, so
    an imported network is always canonical and engine-equivalent to the
    network that was exported.
    """
    doc = parse_document(text)
    with warnings.catch_warnings():
        # an asymmetric preset already warned when first built; importing
        # the resulting netlist is not a new modelling decision
        warnings.simplefilter("ignore")
        rebuilt = build_network(
            doc.spec,
            walkers_per_tile=doc.walkers_per_tile,
            tiles=doc.tiles,
            quantization=doc.precision,
            absorb_policy=doc.absorb_policy,
            start_index=doc.start_nodes,
            gate_probs=doc.gate_probs if doc.gate_probs_overridden else None,
        )
    if not doc.gate_probs_overridden and rebuilt.gate_probs != doc.gate_probs:
        _fail("$.metadata.gate_probs",
              "masses do not match the problem's quantized hop probability")
    body_neurons, body_synapses = _network_body(rebuilt)
    doc_neurons = tuple(entry[:6] for entry in doc.neurons)
    if doc_neurons != body_neurons:
        for i, (got, want) in enumerate(zip(doc.neurons, body_neurons)):
            if got[:6] != want:
                _fail(f"$.neurons[{i}]",
                      "does not match the canonical layout for this metadata")
        _fail("$.neurons", "neuron count does not match the tile formula")
    if doc.synapses != body_synapses:
        for i, (got, want) in enumerate(zip(doc.synapses, body_synapses)):
            if got != want:
                _fail(f"$.synapses[{i}]",
                      "does not match the canonical wiring for this metadata")
        _fail("$.synapses", "synapse count does not match the canonical wiring")
    return rebuilt

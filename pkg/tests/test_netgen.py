"""Tests for netlist export/import: canonical bytes, round trips, validation.

The import path is checked two ways: structurally (the reconstructed network
equals the original field by field) and behaviourally (running the import
reproduces the exact SimulationRecord of the original network).
"""

from __future__ import annotations

import json

import pytest

from spikewalk.mcwalk import ContractViolation
from spikewalk.netgen import (
    FORMAT_VERSION,
    NetlistParseError,
    document_of,
    export_netlist,
    import_netlist,
    parse_document,
)
from spikewalk.problem import ProblemSpec
from spikewalk.snn import (
    ACCUMULATE,
    PrecisionConfig,
    build_network,
    imbalanced_gate_preset,
    run,
)

FAST = ProblemSpec(length_l=1.0, forcing_f=3.0, dx=0.1, dt=0.0028125)
PAPER = ProblemSpec(length_l=2.0, forcing_f=3.0, dx=0.05, dt=1e-4)


def small_net(**overrides):
    args = dict(spec=FAST, walkers_per_tile=5, tiles=2, start_index=[0, 7])
    args.update(overrides)
    return build_network(**args)


class TestExport:
    def test_minimal_single_cell_network(self):
        spec = ProblemSpec(length_l=1.0, forcing_f=3.0, dx=1.0, dt=0.28125)
        net = build_network(spec, walkers_per_tile=1, tiles=1)
        doc = json.loads(export_netlist(net))
        assert doc["format"] == "netlist-v1"
        assert doc["format_version"] == FORMAT_VERSION
        assert len(doc["neurons"]) == 9  # one sub-circuit + supervisor + tally

    def test_paper_scale_tile_has_282_neurons(self):
        net = build_network(PAPER, walkers_per_tile=1, tiles=1)
        doc = json.loads(export_netlist(net))
        assert len(doc["neurons"]) == 282

    def test_export_is_deterministic(self):
        assert export_netlist(small_net()) == export_netlist(small_net())

    def test_neurons_ascend_and_synapses_sort(self):
        doc = json.loads(export_netlist(small_net()))
        ids = [n["id"] for n in doc["neurons"]]
        assert ids == sorted(ids) == list(range(len(ids)))
        keys = [(s["source"], s["target"]) for s in doc["synapses"]]
        assert keys == sorted(keys)

    def test_infinite_thresholds_serialize_as_strings(self):
        doc = json.loads(export_netlist(small_net()))
        tallies = [n for n in doc["neurons"] if n["role"] == "tally"]
        assert tallies and all(n["threshold"] == "inf" for n in tallies)

    def test_quantized_gates_carry_precision_bits(self):
        doc = json.loads(export_netlist(small_net()))
        outs = [n for n in doc["neurons"] if n["role"] == "output_gate"]
        assert outs and all(n["precision_bits"] == 8 for n in outs)

    def test_overridden_gates_have_no_precision_bits(self):
        with pytest.warns(UserWarning, match="asymmetric"):
            net = small_net(gate_probs=imbalanced_gate_preset())
        doc = json.loads(export_netlist(net))
        outs = [n for n in doc["neurons"] if n["role"] == "output_gate"]
        assert all(n["precision_bits"] is None for n in outs)
        assert doc["metadata"]["gate_probs"]["overridden"] is True

    def test_seed_metadata_is_stamped(self):
        doc = json.loads(export_netlist(small_net(), seed=42))
        assert doc["metadata"]["seed"] == 42
        doc = json.loads(export_netlist(small_net()))
        assert doc["metadata"]["seed"] is None

    def test_tampered_network_fails_the_count_assertion(self):
        net = small_net()
        del net.neurons[net.n_neurons - 1]
        with pytest.raises(ContractViolation):
            export_netlist(net)


class TestRoundTrip:
    @pytest.mark.parametrize("kwargs", [
        {},
        {"absorb_policy": ACCUMULATE},
        {"quantization": PrecisionConfig(bits=None)},
        {"walkers_per_tile": 0},
    ])
    def test_export_import_export_is_byte_identical(self, kwargs):
        text = export_netlist(small_net(**kwargs))
        assert export_netlist(import_netlist(text)) == text

    def test_preset_round_trip(self):
        with pytest.warns(UserWarning, match="asymmetric"):
            net = small_net(gate_probs=imbalanced_gate_preset())
        text = export_netlist(net)
        clone = import_netlist(text)  # import itself must not re-warn
        assert export_netlist(clone) == text
        assert clone.gate_probs == net.gate_probs

    def test_import_reconstructs_every_field(self):
        net = small_net(absorb_policy=ACCUMULATE)
        clone = import_netlist(export_netlist(net))
        assert clone.canonical
        assert clone.spec == net.spec
        assert clone.start_nodes == net.start_nodes
        assert clone.walkers_per_tile == net.walkers_per_tile
        assert clone.absorb_policy == net.absorb_policy
        assert clone.neurons == net.neurons
        assert clone.synapses == net.synapses

    @pytest.mark.parametrize("policy", ["remove", ACCUMULATE])
    def test_imported_network_reproduces_the_record(self, policy):
        net = small_net(absorb_policy=policy)
        clone = import_netlist(export_netlist(net))
        a = run(net, neural_timesteps=2000, seed=17, record_steps=True)
        b = run(clone, neural_timesteps=2000, seed=17, record_steps=True)
        assert a.to_json_dict() == b.to_json_dict()

    def test_parse_document_round_trips_metadata(self):
        doc = document_of(small_net(), seed=7)
        from spikewalk.netgen import document_to_text

        clone = parse_document(document_to_text(doc))
        assert clone == doc


class TestValidation:
    def tampered(self, mutate):
        doc = json.loads(export_netlist(small_net()))
        mutate(doc)
        return json.dumps(doc)

    def assert_rejects(self, mutate, path_fragment):
        with pytest.raises(NetlistParseError, match=path_fragment):
            import_netlist(self.tampered(mutate))

    def test_rejects_malformed_json(self):
        with pytest.raises(NetlistParseError, match="not valid JSON"):
            import_netlist("{nope")

    def test_rejects_wrong_format_name(self):
        self.assert_rejects(lambda d: d.update(format="other-v1"), "format")

    def test_rejects_unsupported_major_version(self):
        self.assert_rejects(
            lambda d: d.update(format_version="2.0.0"), "format_version")

    def test_accepts_newer_minor_version(self):
        text = self.tampered(lambda d: d.update(format_version="1.9.3"))
        assert import_netlist(text).canonical

    def test_rejects_dangling_synapse_target(self):
        self.assert_rejects(
            lambda d: d["synapses"][5].update(target=10**6),
            r"\$\.synapses\[5\]\.target")

    def test_rejects_non_contiguous_ids(self):
        self.assert_rejects(
            lambda d: d["neurons"][-1].update(id=10**6), "contiguous")

    def test_rejects_unknown_role(self):
        self.assert_rejects(
            lambda d: d["neurons"][0].update(role="oscillator"),
            r"\$\.neurons\[0\]\.role")

    def test_rejects_bad_stochastic_p(self):
        def mutate(d):
            outs = [n for n in d["neurons"] if n["role"] == "output_gate"]
            outs[0]["stochastic_p"] = 1.5
        self.assert_rejects(mutate, "stochastic_p")

    def test_rejects_bad_gate_probs_sum(self):
        self.assert_rejects(
            lambda d: d["metadata"]["gate_probs"].update(p_stay=0.5),
            "gate_probs")

    def test_rejects_start_nodes_length_mismatch(self):
        self.assert_rejects(
            lambda d: d["metadata"]["start_nodes"].append(0), "start_nodes")

    def test_rejects_out_of_range_start(self):
        self.assert_rejects(
            lambda d: d["metadata"]["start_nodes"].__setitem__(0, 99),
            r"start_nodes\[0\]")

    def test_rejects_bad_delay(self):
        self.assert_rejects(
            lambda d: d["synapses"][0].update(delay=0), "delay")

    def test_rejects_invalid_timestep(self):
        self.assert_rejects(
            lambda d: d["metadata"]["problem"].update(dt=0.01), "problem")

    def test_rejects_missing_key(self):
        def mutate(d):
            del d["metadata"]["tiles"]
        self.assert_rejects(mutate, "tiles")

    def test_rejects_edited_neuron_parameters(self):
        def mutate(d):
            d["neurons"][0]["threshold"] = 2.0
        self.assert_rejects(mutate, r"\$\.neurons\[0\]")

    def test_rejects_rewired_synapses(self):
        def mutate(d):
            d["synapses"][3]["weight"] = 0.5
        self.assert_rejects(mutate, r"\$\.synapses\[3\]")

    def test_rejects_mismatched_quantized_masses(self):
        def mutate(d):
            for n in d["neurons"]:
                if n["role"] == "output_gate":
                    pass
            d["metadata"]["gate_probs"].update(
                p_left=0.25, p_right=0.25, p_stay=0.5)
        self.assert_rejects(mutate, "quantized hop probability")

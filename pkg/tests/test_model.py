import io
import json
from collections import Counter

import pytest

from flowmig.model import (
    InstanceError,
    MappingState,
    allocated_rate,
    candidate_vnfis,
    derive_mapping_delta,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    load_mapping,
    load_traffic,
)
from flowmig.topology import TYPE_COUNTS

from .conftest import TOY_EXTRA_EDGES, toy_doc


def state(a, b, t=1):
    return MappingState({("s", 1): a, ("s", 2): b}, t)


def test_load_mesh_document(mesh):
    inst, _ = mesh
    again = load_instance(json.dumps(instance_to_dict(inst)))
    assert len(again.vnfis) == 64
    assert Counter(v.vnf_type for v in again.vnfis) == Counter(TYPE_COUNTS)
    assert again == inst


def test_singleton_candidate_sets(chain4):
    inst, _ = chain4
    for h in range(1, 5):
        assert candidate_vnfis(inst, "1", h) == (f"v{h}",)


def test_empty_candidate_set_rejected():
    doc = toy_doc()
    doc["vnf_types"].append("C")
    doc["sfcs"][0]["chain"] = ["A", "C"]
    with pytest.raises(InstanceError, match="empty candidate set"):
        instance_from_dict(doc)


def test_all_problems_reported():
    doc = toy_doc()
    doc["vnfis"][0]["capacity_cycles"] = 0
    doc["edges"].append({"from": "a1", "to": "nowhere", "capacity_bits": 1.0})
    doc["sfcs"][0]["deadline_ms"] = -1
    with pytest.raises(InstanceError) as err:
        instance_from_dict(doc)
    text = " ".join(err.value.problems)
    assert "non-positive capacity" in text
    assert "dangling" in text
    assert "non-positive deadline" in text
    assert err.value.kind == "validation"


def test_malformed_document_is_parse_error():
    with pytest.raises(InstanceError) as err:
        load_instance("{not json")
    assert err.value.kind == "parse"


def test_repeated_type_in_chain_rejected():
    doc = toy_doc()
    doc["sfcs"][0]["chain"] = ["A", "A"]
    with pytest.raises(InstanceError, match="more than once"):
        instance_from_dict(doc)


def test_deadline_converted_from_ms(toy):
    assert toy.sfc("s").deadline_s == pytest.approx(0.02)
    assert toy.n_virtual_links == 3


def test_per_vnfi_density_override():
    doc = toy_doc()
    doc["sfcs"][0]["density"] = {"default": 1e6, "per_vnfi": {"a2": 2e6}}
    inst = instance_from_dict(doc)
    assert inst.sfc("s").density["a2"] == 2e6
    assert inst.sfc("s").density["a1"] == 1e6


def test_candidates_mesh_first_hop(mesh):
    inst, _ = mesh
    cands = candidate_vnfis(inst, "1", 1)
    assert len(cands) == 15
    assert all(inst.vnfi(v).vnf_type == "f4" for v in cands)
    assert list(cands) == sorted(cands)


def test_candidates_hop_out_of_range(toy):
    with pytest.raises(IndexError):
        candidate_vnfis(toy, "s", 3)
    with pytest.raises(KeyError):
        candidate_vnfis(toy, "nope", 1)


def test_candidates_are_exactly_type_matches(mesh):
    inst, _ = mesh
    for s in inst.sfcs:
        for h, f in enumerate(s.chain, start=1):
            assert set(candidate_vnfis(inst, s.id, h)) == {v.id for v in inst.vnfis if v.vnf_type == f}


def test_delta_no_change(toy):
    d = derive_mapping_delta(toy, state("a1", "b1", 0), state("a1", "b1"))
    assert d.migrations == frozenset()
    assert d.extra_edges == 0


def test_delta_single_move(toy):
    d = derive_mapping_delta(toy, state("a1", "b1", 0), state("a2", "b1"))
    assert d.migrations == {("s", 1, "a1", "a2")}


@pytest.mark.parametrize("pair,extra", sorted(TOY_EXTRA_EDGES.items()))
def test_delta_extra_edges_hand_counted(toy, pair, extra):
    d = derive_mapping_delta(toy, state("a1", "b1", 0), state(*pair))
    assert d.extra_edges == extra
    assert len(d.existing_edge_hits) == 3 - extra


def test_delta_interval_order(toy):
    with pytest.raises(ValueError, match="interval"):
        derive_mapping_delta(toy, state("a1", "b1", 0), state("a1", "b1", 3))


def test_delta_rejects_non_candidate(toy):
    with pytest.raises(InstanceError):
        derive_mapping_delta(toy, state("a1", "b1", 0), state("b1", "b1"))


@pytest.mark.parametrize(
    "share,cap,dens,expect", [(1.0, 1000, 1, 1000), (0.0, 1e9, 1e6, 0), (0.5, 2000, 2, 500)]
)
def test_allocated_rate(share, cap, dens, expect):
    assert allocated_rate(share, cap, dens) == expect


def test_allocated_rate_rejects_bad_share():
    with pytest.raises(ValueError):
        allocated_rate(1.5, 1000, 1)


def test_mapping_document_round_trip(mesh):
    inst, prev = mesh
    again = load_mapping(json.dumps(prev.to_doc()), inst)
    assert dict(again.assign) == dict(prev.assign)


def test_mapping_rejects_wrong_type(toy):
    with pytest.raises(InstanceError, match="not a candidate"):
        load_mapping(json.dumps({"(s,1)": "b1", "(s,2)": "b2"}), toy)


def test_traffic_document():
    prof = load_traffic(io.StringIO('[{"1": 200, "2": 300}, {"1": 250, "2": 0}]'))
    assert prof.at(1) == {"1": 250.0, "2": 0.0}
    with pytest.raises(InstanceError):
        load_traffic('[{"1": -5}]')


def test_epsilon_override():
    inst = instance_from_dict(toy_doc(epsilon=1e-3))
    assert inst.epsilon == 1e-3
    with pytest.raises(InstanceError):
        instance_from_dict(toy_doc(epsilon=0))

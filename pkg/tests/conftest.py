import json

import pytest

from flowmig.model import instance_from_dict
from flowmig.topology import dedicated_chain_instance, generate_paper_topology


def toy_doc(**overrides):
    """Two VNF types, two VNFIs each, one 2-hop SFC.

    Edges: src->a1, a1->b1, b1->dst and a2->b2. The hand-counted extra
    edges for every assignment are listed in ``TOY_EXTRA_EDGES``.
    """
    doc = {
        "vnf_types": ["A", "B"],
        "vnfis": [
            {"id": "a1", "type": "A", "capacity_cycles": 1e9},
            {"id": "a2", "type": "A", "capacity_cycles": 1e9},
            {"id": "b1", "type": "B", "capacity_cycles": 1e9},
            {"id": "b2", "type": "B", "capacity_cycles": 1e9},
        ],
        "access_nodes": [{"id": "src", "kind": "source"}, {"id": "dst", "kind": "destination"}],
        "edges": [
            {"from": "src", "to": "a1", "capacity_bits": 1e9},
            {"from": "a1", "to": "b1", "capacity_bits": 1e9},
            {"from": "b1", "to": "dst", "capacity_bits": 1e9},
            {"from": "a2", "to": "b2", "capacity_bits": 1e9},
        ],
        "sfcs": [
            {
                "id": "s",
                "source": "src",
                "dest": "dst",
                "chain": ["A", "B"],
                "deadline_ms": 20,
                "packet_bits": 12000,
                "density": {"default": 1e6},
            }
        ],
    }
    doc.update(overrides)
    return doc


# (hop-1 VNFI, hop-2 VNFI) -> virtual links (src->h1, h1->h2, h2->dst) without an edge
TOY_EXTRA_EDGES = {("a1", "b1"): 0, ("a1", "b2"): 2, ("a2", "b1"): 2, ("a2", "b2"): 2}


@pytest.fixture
def toy():
    return instance_from_dict(toy_doc())


@pytest.fixture
def toy_json():
    return json.dumps(toy_doc())


@pytest.fixture
def chain4():
    return dedicated_chain_instance()


@pytest.fixture(scope="session")
def mesh():
    return generate_paper_topology(0)

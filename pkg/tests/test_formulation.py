import math

import numpy as np
import pytest

from flowmig.experiments import PRESETS
from flowmig.formulation import (
    Weights,
    build_p1,
    check_feasibility,
    make_solution,
    objective_value,
    transform_to_miqcp,
)
from flowmig.model import Instance, InstanceError, LogicalEdge, MappingState
from flowmig.topology import generate_tiny_instance

from .checks import discrete_terms_exhaustive, gamma_exhaustive, xi_exhaustive

HFM = Weights(0.4, 0.4, 0.2)


def single_hop_solution(p1, mu, d, eta):
    """Solution on the 4-hop chain with the same rate and delay on every hop."""
    cur = MappingState(p1.prev.assign, p1.interval)
    mus = {s: mu for s in p1.slots}
    ds = {s: d for s in p1.slots}
    return make_solution(p1, cur, mus, ds, eta)


def test_weights_validated():
    with pytest.raises(ValueError):
        Weights(-1, 0, 0)
    with pytest.raises(ValueError):
        Weights(math.nan, 0, 0)


def test_binary_count_mesh(mesh):
    inst, prev = mesh
    p1 = build_p1(inst, prev, {"1": 700, "2": 200, "3": 700}, HFM)
    model = transform_to_miqcp(p1)
    expected = sum(len(inst.candidates(r, h)) for r, h in inst.hops)
    assert sum(1 for role in model.roles if role[0] == "x") == expected
    assert len(p1.slots) == expected


def test_missing_rate(toy):
    prev = MappingState({("s", 1): "a1", ("s", 2): "b1"})
    with pytest.raises(InstanceError, match="missing rate"):
        build_p1(toy, prev, {}, HFM)


def test_unknown_margin_sfc(toy):
    prev = MappingState({("s", 1): "a1", ("s", 2): "b1"})
    with pytest.raises(InstanceError, match="unknown SFCs"):
        build_p1(toy, prev, {"s": 100}, HFM, soft_delay=True, margin_sfcs={"zz"})


def test_soft_variant_only_listed_margins(mesh):
    inst, prev = mesh
    p1 = build_p1(inst, prev, {"1": 200, "2": 200, "3": 500}, replace_a4(HFM), True, {"3"})
    model = transform_to_miqcp(p1)
    assert [role for role in model.roles if role[0] == "delta"] == [("delta", "3")]


def replace_a4(w, a4=50.0):
    return Weights(w.alpha1, w.alpha2, w.alpha3, a4)


def test_zero_traffic_is_feasible(chain4):
    inst, prev = chain4
    p1 = build_p1(inst, prev, {"1": 0.0}, HFM)
    eps = inst.epsilon
    # any positive rate with d = 1/(mu + eps) meets the deadline once mu >= 200
    sol = single_hop_solution(p1, 200.0, 1.0 / (200.0 + eps), 0.2)
    assert check_feasibility(p1, sol) == []


def test_objective_arithmetic(toy):
    prev = MappingState({("s", 1): "a1", ("s", 2): "b1"})
    p1 = build_p1(toy, prev, {"s": 100.0}, HFM)
    # a2 -> b2: one migration on hop 1, one on hop 2 (2 migrations), 2 extra edges
    cur = MappingState({("s", 1): "a2", ("s", 2): "b2"}, 1)
    sol = make_solution(p1, cur, {}, {}, 0.5)
    o = objective_value(p1, sol)
    assert o.total == pytest.approx(0.4 * 0.5 + 0.4 * 2 + 0.2 * 2)
    # the worked example: eta 0.5, 2 migrations, 1 extra edge
    assert 0.4 * 0.5 + 0.4 * 2 + 0.2 * 1 == pytest.approx(1.2)


def test_no_change_zero_reconfiguration(toy):
    prev = MappingState({("s", 1): "a1", ("s", 2): "b1"})
    p1 = build_p1(toy, prev, {"s": 100.0}, HFM)
    sol = make_solution(p1, MappingState(prev.assign, 1), {}, {}, 0.3)
    assert sol.objective.migration == 0 and sol.objective.extra_edge == 0


def test_lbfm_ignores_migrations(toy):
    prev = MappingState({("s", 1): "a1", ("s", 2): "b1"})
    p1 = build_p1(toy, prev, {"s": 100.0}, PRESETS["LBFM"].weights)
    stay = make_solution(p1, MappingState({("s", 1): "a2", ("s", 2): "b2"}, 1), {}, {}, 0.3)
    moved = make_solution(p1, MappingState({("s", 1): "a1", ("s", 2): "b2"}, 1), {}, {}, 0.3)
    assert stay.migrations == 2 and moved.migrations == 1
    assert stay.objective.total == moved.objective.total


def test_feasibility_reports_rate_below_lambda(chain4):
    inst, prev = chain4
    p1 = build_p1(inst, prev, {"1": 700.0}, HFM)
    sol = single_hop_solution(p1, 690.0, 0.005, 0.69)
    fams = {v.family for v in check_feasibility(p1, sol)}
    assert "rate_lower" in fams


def test_feasibility_reports_edge_overload(chain4):
    inst, prev = chain4
    # 12000 bit/packet at 700 packet/s is 8.4e6 bit/s on every link
    edges = tuple(
        LogicalEdge(e.id, e.src, e.dst, 1e6 if e.src == "src" else e.capacity_bits) for e in inst.edges
    )
    tight = Instance(inst.vnf_types, inst.vnfis, inst.access_nodes, edges, inst.sfcs)
    p1 = build_p1(tight, prev, {"1": 700.0}, HFM)
    eps = inst.epsilon
    sol = single_hop_solution(p1, 900.0, 1 / (200 + eps), 0.9)
    report = check_feasibility(p1, sol)
    assert [v.family for v in report] == ["transmission"]
    assert report[0].index == ("src", "v1")


def test_feasible_point_passes(chain4):
    inst, prev = chain4
    p1 = build_p1(inst, prev, {"1": 700.0}, HFM)
    eps = inst.epsilon
    sol = single_hop_solution(p1, 900.0, 1 / (200 + eps), 0.9)
    assert check_feasibility(p1, sol) == []


def test_one_cone_per_slot(mesh):
    inst, prev = mesh
    model = transform_to_miqcp(build_p1(inst, prev, {"1": 700, "2": 200, "3": 700}, HFM))
    assert len(model.cones) == len(model.meta["slots"])
    slots_from_cones = [model.roles[a][1:] for a, _, _ in model.cones]
    assert slots_from_cones == list(model.meta["slots"])
    assert all(model.roles[c] == ("c",) for _, _, c in model.cones)
    assert all(model.lb[p] >= inst.epsilon for _, p, _ in model.cones)


@pytest.mark.parametrize("seed", range(5))
def test_linearization_exhaustive(seed):
    inst, prev, rates = generate_tiny_instance(seed)
    model = transform_to_miqcp(build_p1(inst, prev, rates, HFM))
    checked, bad = xi_exhaustive(model)
    assert bad == 0
    cases, worst, rejected = gamma_exhaustive(model)
    assert rejected == 0 and worst <= 1e-12
    n, gap = discrete_terms_exhaustive(model, inst, prev, HFM)
    assert n > 0 and gap <= 1e-12


def test_xi_combinations_on_toy(toy):
    prev = MappingState({("s", 1): "a1", ("s", 2): "b1"})
    model = transform_to_miqcp(build_p1(toy, prev, {"s": 100.0}, HFM))
    checked, bad = xi_exhaustive(model)
    # xi exists only for VNFI pairs joined by an edge: (a1,b1) and (a2,b2)
    assert checked == 8 and bad == 0


def test_p1_feasible_points_are_model_feasible(chain4):
    """Sampled P1-feasible points map to model points with zero residuals."""
    inst, prev = chain4
    p1 = build_p1(inst, prev, {"1": 600.0}, HFM)
    model = transform_to_miqcp(p1)
    eps = inst.epsilon
    rng = np.random.default_rng(3)
    for _ in range(20):
        mu = rng.uniform(800.0, 1000.0)
        d = 1.0 / (mu - 600.0 + eps)
        sol = single_hop_solution(p1, mu, d, mu / 1000.0)
        assert check_feasibility(p1, sol) == []
        v = np.zeros(model.n_vars)
        for s in p1.slots:
            v[model.var("x", *s)] = 1.0
            v[model.var("mu", *s)] = mu
            v[model.var("d", *s)] = d
            v[model.var("gamma", *s)] = d
            v[model.var("pi", *s)] = mu - 600.0 + eps
        v[model.var("eta")] = mu / 1000.0
        v[model.var("c")] = 1.0
        for k, role in enumerate(model.roles):
            if role[0] == "xi":
                v[k] = 1.0
        res = model.residuals(v)
        assert max(res.values()) <= 1e-12
        assert model.objective(v) == pytest.approx(objective_value(p1, sol).total, abs=1e-12)


def test_dump_is_deterministic(mesh):
    inst, prev = mesh
    p1 = build_p1(inst, prev, {"1": 700, "2": 200, "3": 700}, HFM)
    a, b = transform_to_miqcp(p1).dump(), transform_to_miqcp(p1).dump()
    assert a == b
    head = a.splitlines()[0]
    assert head.startswith("# miqcp vars=")


def test_transmission_rows_only_when_binding(chain4):
    inst, prev = chain4
    model = transform_to_miqcp(build_p1(inst, prev, {"1": 700.0}, HFM))
    assert not any(n.startswith("transmission") for n in model.row_names)

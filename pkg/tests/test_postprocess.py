import pytest

from flowmig.bnb import BnbParams, solve_miqcp
from flowmig.experiments import PRESETS
from flowmig.formulation import Weights, build_p1, check_feasibility, make_solution, transform_to_miqcp
from flowmig.postprocess import PostprocessError, postprocess, postprocess_optimum
from flowmig.topology import dedicated_chain_instance, generate_tiny_instance

SLOT = ("1", 1, "v1")


def one_hop(weights, mu, d, eta, lam=700.0):
    inst, prev = dedicated_chain_instance(hops=1)
    p1 = build_p1(inst, prev, {"1": lam}, weights)
    return p1, make_solution(p1, prev, {SLOT: mu}, {SLOT: d}, eta)


def test_load_weight_resets_slack_delay():
    p1, sol = one_hop(Weights(0.4, 0.4, 0.2), 800.0, 0.02, 0.8)
    out = postprocess(p1, sol)
    eps = p1.instance.epsilon
    assert out.d[SLOT] == pytest.approx(1.0 / (100.0 + eps), rel=1e-15)
    assert out.d[SLOT] == pytest.approx(9.99999e-3, rel=1e-6)
    assert out.mu[SLOT] == 800.0
    assert out.objective.total == sol.objective.total
    assert check_feasibility(p1, out) == []


def test_no_load_weight_lowers_rate():
    p1, sol = one_hop(PRESETS["MOFM"].weights, 900.0, 0.0125, 0.9)
    out = postprocess(p1, sol)
    eps = p1.instance.epsilon
    assert out.mu[SLOT] == pytest.approx(780.0 - eps, rel=1e-15)
    assert out.d[SLOT] == 0.0125
    # eta is recomputed from the lowered rate (C/P = 1000)
    assert out.eta == pytest.approx((780.0 - eps) / 1000.0, rel=1e-12)
    assert out.objective.total == sol.objective.total


def test_rising_load_is_an_error():
    # d * pi = 0.0125 * 50 < 1: the input breaks the cone, so mu would have to grow
    p1, sol = one_hop(PRESETS["MOFM"].weights, 750.0, 0.0125, 0.75)
    with pytest.raises(PostprocessError, match="exceeds"):
        postprocess(p1, sol)


def test_cone_active_input_is_unchanged():
    eps = 1e-4
    p1, sol = one_hop(Weights(0.4, 0.4, 0.2), 800.0, 1.0 / (100.0 + eps), 0.8)
    out = postprocess(p1, sol)
    assert out.mu == sol.mu and out.d == sol.d and out.eta == sol.eta


@pytest.mark.parametrize("weights", [Weights(0.4, 0.4, 0.2), PRESETS["MOFM"].weights])
def test_idempotent(weights):
    p1, sol = one_hop(weights, 900.0, 0.0125, 0.9)
    once = postprocess(p1, sol)
    twice = postprocess(p1, once)
    assert once.to_doc() == twice.to_doc()


def test_unused_slots_normalised():
    inst, prev, rates = generate_tiny_instance(0)
    p1 = build_p1(inst, prev, rates, Weights(0.4, 0.4, 0.2))
    res = solve_miqcp(transform_to_miqcp(p1), BnbParams(), [prev])
    out = postprocess_optimum(res, p1)
    for r, h, i in p1.slots:
        if out.cur.assign[(r, h)] != i:
            assert out.mu[(r, h, i)] == 0.0
            assert out.d[(r, h, i)] == 1.0 / inst.epsilon


def test_missing_incumbent_is_an_error():
    inst, prev, rates = generate_tiny_instance(2)
    p1 = build_p1(inst, prev, rates, Weights(0.4, 0.4, 0.2))
    res = solve_miqcp(transform_to_miqcp(p1), BnbParams(node_cap=1), [])
    with pytest.raises(PostprocessError, match="no incumbent"):
        postprocess_optimum(res, p1)


def test_corrupted_input_point_rejected():
    inst, prev, rates = generate_tiny_instance(0)
    p1 = build_p1(inst, prev, rates, Weights(0.4, 0.4, 0.2))
    model = transform_to_miqcp(p1)
    res = solve_miqcp(model, BnbParams(), [prev])
    res.values[model.var("eta")] -= 0.1
    with pytest.raises(PostprocessError, match="violates"):
        postprocess_optimum(res, p1)

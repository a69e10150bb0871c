"""Property tests over randomly drawn inputs."""

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from flowmig.bnb import branch_select
from flowmig.formulation import Weights, build_p1, check_feasibility, make_solution
from flowmig.model import MappingState, allocated_rate, derive_mapping_delta, instance_from_dict
from flowmig.postprocess import postprocess
from flowmig.queuesim import simulate_chain
from flowmig.topology import dedicated_chain_instance

from .conftest import TOY_EXTRA_EDGES, toy_doc

TOY = instance_from_dict(toy_doc())
CHAIN1 = dedicated_chain_instance(hops=1)
PAIRS = sorted(TOY_EXTRA_EDGES)
SLOT = ("1", 1, "v1")


@given(st.sampled_from(PAIRS), st.sampled_from(PAIRS))
def test_delta_counts(before, after):
    prev = MappingState({("s", 1): before[0], ("s", 2): before[1]}, 0)
    cur = MappingState({("s", 1): after[0], ("s", 2): after[1]}, 1)
    d = derive_mapping_delta(TOY, prev, cur)
    assert d.n_migrations == sum(a != b for a, b in zip(before, after))
    assert d.extra_edges == TOY_EXTRA_EDGES[after]
    assert 0 <= d.extra_edges <= TOY.n_virtual_links


@given(st.floats(0, 1), st.floats(1e6, 1e10), st.floats(1e3, 1e7))
def test_allocated_rate_linear(share, cap, dens):
    mu = allocated_rate(share, cap, dens)
    assert mu == pytest.approx(share * cap / dens, rel=1e-12)
    assert mu <= cap / dens * (1 + 1e-12)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
def test_branch_select_is_most_fractional(vals):
    v = np.array(vals)
    cand = np.arange(len(v))
    k = branch_select(v, cand)
    frac = np.minimum(v, 1 - v)
    if k is None:
        assert np.all(np.round(frac, 9) <= 1e-6)
    else:
        assert np.round(frac[k], 9) == np.round(frac, 9).max()
        assert k == int(np.argmax(np.round(frac, 9)))


@settings(max_examples=60, deadline=None)
@given(
    lam=st.floats(0, 900),
    slack=st.floats(1.0, 300.0),
    stretch=st.floats(1.0, 3.0),
    load=st.sampled_from([Weights(0.4, 0.4, 0.2), Weights(0.0, 0.8, 0.2)]),
)
def test_postprocess_restores_equality(lam, slack, stretch, load):
    """Any cone-feasible single-hop point maps to an exact-delay point with the same objective."""
    inst, prev = CHAIN1
    eps = inst.epsilon
    mu = min(lam + slack, 1000.0)
    d = min(stretch / (mu - lam + eps), 0.02)
    assume(d * (mu - lam + eps) >= 1.0)  # the deadline cap can push d below the cone
    p1 = build_p1(inst, prev, {"1": lam}, load)
    sol = make_solution(p1, prev, {SLOT: mu}, {SLOT: d}, mu / 1000.0)
    out = postprocess(p1, sol)
    assert out.d[SLOT] * (out.mu[SLOT] - lam + eps) == pytest.approx(1.0, rel=1e-9)
    assert out.objective.total == pytest.approx(sol.objective.total, abs=1e-9)
    assert check_feasibility(p1, out) == []
    assert postprocess(p1, out).to_doc() == out.to_doc()


def _lindley_loop(arrive, services):
    t = arrive.copy()
    for s in services:
        out = np.empty_like(t)
        free = 0.0
        for k in range(len(t)):
            free = max(free, t[k]) + s[k]
            out[k] = free
        t = out
    return t


class _Cfg:
    warmup = 0.0

    def __init__(self, n):
        self.packets = n


@settings(max_examples=25, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.floats(10.0, 900.0),
    st.lists(st.floats(950.0, 3000.0), min_size=1, max_size=4),
)
def test_vectorised_queue_matches_recursion(seed, lam, mus):
    n = 400
    e2e, hops = simulate_chain(lam, mus, _Cfg(n), np.random.SeedSequence(seed))
    streams = np.random.SeedSequence(seed).spawn(len(mus) + 1)
    arrive = np.cumsum(np.random.default_rng(streams[0]).exponential(1.0 / lam, n))
    services = [np.random.default_rng(streams[k + 1]).exponential(1.0 / m, n) for k, m in enumerate(mus)]
    depart = _lindley_loop(arrive, services)
    np.testing.assert_allclose(e2e, depart - arrive, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(sum(hops), e2e, rtol=1e-9, atol=1e-12)

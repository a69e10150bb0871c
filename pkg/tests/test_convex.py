import numpy as np
import pytest

from flowmig.convex import ConeProgram, ToleranceConfig, solve_cone
from flowmig.formulation import Weights, build_p1, transform_to_miqcp
from flowmig.topology import dedicated_chain_instance, generate_tiny_instance

LOAD_ONLY = Weights(1.0, 0.0, 0.0)


def fixed_chain_program(hops, lam, weights=LOAD_ONLY):
    inst, prev = dedicated_chain_instance(hops=hops)
    model = transform_to_miqcp(build_p1(inst, prev, {"1": lam}, weights))
    return model, ConeProgram.from_model(model.with_fixed_mapping(prev))


def test_single_hop_kkt_point():
    # minimise mu subject to 1/(mu - 700 + eps) <= 0.02  ->  mu = 750 - eps
    model, prog = fixed_chain_program(1, 700.0)
    sol = solve_cone(prog)
    assert sol.status == "optimal"
    eps = 1e-4
    assert sol.values[model.var("eta")] == pytest.approx((750.0 - eps) / 1000.0, abs=1e-7)
    mu = sol.values[model.var("mu", "1", 1, "v1")]
    assert mu == pytest.approx(750.0 - eps, rel=1e-7)


def test_zero_traffic_load_vanishes():
    model, prog = fixed_chain_program(1, 0.0)
    sol = solve_cone(prog)
    assert sol.status == "optimal"
    # with no traffic the deadline needs only 1/(mu + eps) <= 0.02, i.e. mu >= 50
    assert sol.values[model.var("eta")] == pytest.approx(0.05, abs=1e-6)


def test_zero_traffic_four_hops_equal_split():
    model, prog = fixed_chain_program(4, 0.0)
    sol = solve_cone(prog)
    assert sol.values[model.var("eta")] == pytest.approx(0.2, abs=1e-6)


def test_infeasible_box():
    _, prog = fixed_chain_program(2, 1200.0)
    sol = solve_cone(prog)
    assert sol.status == "infeasible"
    assert sol.certificate is not None


def test_optimal_point_within_tolerance():
    model, prog = fixed_chain_program(4, 700.0)
    tol = ToleranceConfig()
    sol = solve_cone(prog, tol)
    assert sol.status == "optimal"
    res = model.residuals(sol.values)
    assert max(res["rows"], res["bounds"], res["cones"]) <= tol.feas


def test_deterministic():
    _, prog = fixed_chain_program(4, 700.0)
    a, b = solve_cone(prog), solve_cone(prog)
    assert np.array_equal(a.values, b.values)
    assert a.objective == b.objective


@pytest.mark.parametrize("seed", range(4))
def test_relaxation_bound_valid_under_fixings(seed):
    """Fixing a binary never drops the optimum below the parent's bound."""
    inst, prev, rates = generate_tiny_instance(seed)
    model = transform_to_miqcp(build_p1(inst, prev, rates, Weights(0.4, 0.4, 0.2)))
    root = solve_cone(ConeProgram.from_model(model))
    if root.status != "optimal":
        pytest.skip("root relaxation infeasible")
    assert root.bound <= root.objective + 1e-12
    x = model.meta["x"]
    for k in x[:3]:
        for v in (0.0, 1.0):
            child = solve_cone(ConeProgram.from_model(model, {int(k): v}))
            if child.status == "optimal":
                assert child.objective >= root.bound - 1e-9


def test_row_permutation_invariance():
    model, prog = fixed_chain_program(3, 650.0)
    perm = np.random.default_rng(0).permutation(prog.A.shape[0])
    shuffled = ConeProgram(
        lb=prog.lb, ub=prog.ub, A=prog.A[perm], sense=prog.sense[perm], rhs=prog.rhs[perm],
        cones=prog.cones, obj=prog.obj, offset=prog.offset, binary=prog.binary, fixings=prog.fixings,
    )
    a, b = solve_cone(prog), solve_cone(shuffled)
    assert a.objective == pytest.approx(b.objective, abs=1e-8)


def test_cone_active_or_deadline_slack():
    """At a load-minimising leaf each assigned cone is tight unless the
    SFC's deadline row has slack."""
    model, prog = fixed_chain_program(4, 700.0)
    v = solve_cone(prog).values
    e2e_slack = 0.02 - sum(v[model.var("gamma", "1", h, f"v{h}")] for h in range(1, 5))
    for h in range(1, 5):
        d = v[model.var("d", "1", h, f"v{h}")]
        pi = v[model.var("pi", "1", h, f"v{h}")]
        assert abs(d * pi - 1.0) <= 1e-6 or e2e_slack > 1e-9


def test_tolerance_validation():
    with pytest.raises(ValueError):
        ToleranceConfig(feas=0)

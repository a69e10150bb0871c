"""One interval end to end: build, reformulate, search, post-process."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .bnb import BnbParams, MiqcpSolution, solve_miqcp
from .formulation import MiqcpModel, ProblemP1, Solution, Weights, build_p1, transform_to_miqcp
from .model import Instance, MappingState
from .postprocess import postprocess_optimum


@dataclass
class IntervalResult:
    problem: ProblemP1
    model: MiqcpModel
    search: MiqcpSolution
    solution: Solution | None  # None when infeasible or capped without incumbent

    @property
    def status(self) -> str:
        return self.search.status


def solve_interval(
    inst: Instance,
    prev: MappingState,
    rates: Mapping[str, float],
    weights: Weights,
    params: BnbParams | None = None,
    soft_delay: bool = False,
    margin_sfcs=None,
    warm_starts: Iterable[MappingState] = (),
) -> IntervalResult:
    p1 = build_p1(inst, prev, rates, weights, soft_delay, margin_sfcs)
    model = transform_to_miqcp(p1)
    search = solve_miqcp(model, params, [prev, *warm_starts])
    solution = None
    if search.values is not None:
        solution = postprocess_optimum(search, p1)
    return IntervalResult(p1, model, search, solution)


def _drop_rows(model: MiqcpModel, prefix: str) -> MiqcpModel:
    keep = np.array([not n.startswith(prefix) for n in model.row_names])
    return replace(
        model,
        A=model.A[keep],
        sense=model.sense[keep],
        rhs=model.rhs[keep],
        row_names=[n for n, k in zip(model.row_names, keep) if k],
    )


def binding_families(
    inst: Instance,
    prev: MappingState,
    rates: Mapping[str, float],
    weights: Weights,
    params: BnbParams | None = None,
    soft_delay: bool = False,
    margin_sfcs=None,
) -> list[str]:
    """Constraint families whose removal alone restores feasibility.

    Tries lifting the end-to-end deadlines and the link capacities one at a
    time. If neither helps, the per-VNFI processing capacity (rate bounds,
    utilisation and the per-hop delay bound together) is what binds.
    """
    params = replace(params or BnbParams(), first_feasible=True)
    found = []
    p1 = build_p1(inst, prev, rates, weights, True, None)
    if solve_miqcp(transform_to_miqcp(p1), params, [prev]).values is not None:
        found.append("e2e_deadline")
    p1 = build_p1(inst, prev, rates, weights, soft_delay, margin_sfcs)
    relaxed = _drop_rows(transform_to_miqcp(p1), "transmission")
    if solve_miqcp(relaxed, params, [prev]).values is not None:
        found.append("transmission")
    return found or ["rate_upper", "utilization", "delay_bound"]

"""Strategy presets, traffic sweeps, feasibility boundaries and the margin variant."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .bnb import BnbParams, solve_miqcp
from .formulation import Solution, Weights, build_p1, transform_to_miqcp
from .model import Instance, InstanceError, MappingState
from .pipeline import IntervalResult, solve_interval
from .topology import generate_paper_topology, generate_tiny_instance

__all__ = [
    "PRESETS",
    "MARGIN_WEIGHT",
    "StrategyPreset",
    "SweepSpec",
    "SweepRecord",
    "run_sweep",
    "max_feasible_rate",
    "run_margin_experiment",
    "records_to_csv",
    "records_to_plot_json",
    "generate_paper_topology",
    "generate_tiny_instance",
]

# Weight per second of deadline margin. One millisecond costs 1.0, more than
# a migration or a full swing of eta under any preset, so a margin is only
# taken when the hard deadline cannot be met.
MARGIN_WEIGHT = 1000.0


@dataclass(frozen=True)
class StrategyPreset:
    name: str
    weights: Weights


PRESETS = {
    "LBFM": StrategyPreset("LBFM", Weights(0.8, 0.0, 0.2)),
    "MOFM": StrategyPreset("MOFM", Weights(0.0, 0.8, 0.2)),
    "HFM": StrategyPreset("HFM", Weights(0.4, 0.4, 0.2)),
}


def preset(name: str) -> StrategyPreset:
    try:
        return PRESETS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; expected one of {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class SweepSpec:
    """One strategy over a grid of rates for the swept SFCs.

    ``prev_mode`` picks the previous mapping of each point: ``"initial"``
    measures every point against the starting mapping, ``"chained"`` feeds
    each point's solution forward as the next point's previous mapping.
    """

    fixed_rates: Mapping[str, float]
    swept: tuple[str, ...]
    start: float
    stop: float
    step: float
    strategy: StrategyPreset
    params: BnbParams = field(default_factory=BnbParams)
    prev_mode: str = "chained"
    margin_sfcs: frozenset[str] | None = None  # soft deadline for these SFCs
    margin_weight: float = MARGIN_WEIGHT
    allow_migration: bool = True

    def __post_init__(self):
        if self.step <= 0 or self.stop < self.start:
            raise ValueError("sweep needs step > 0 and stop >= start")
        if self.prev_mode not in ("initial", "chained"):
            raise ValueError(f"unknown prev_mode {self.prev_mode!r}")
        if set(self.swept) & set(self.fixed_rates):
            raise ValueError("an SFC cannot be both fixed and swept")

    def points(self) -> list[float]:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9))
        return [self.start + k * self.step for k in range(n + 1)]

    def rates_at(self, value: float) -> dict[str, float]:
        return {**self.fixed_rates, **{r: value for r in self.swept}}

    @property
    def weights(self) -> Weights:
        w = self.strategy.weights
        if self.margin_sfcs:
            return replace(w, alpha4=self.margin_weight)
        return w


@dataclass
class SweepRecord:
    t: int
    rates: dict[str, float]
    strategy: str
    status: str  # optimal | capped | infeasible
    eta: float
    migrations: int
    extra_edges: int
    delta: dict[str, float]
    objective: float
    terms: tuple[float, float, float, float]
    gap: float
    wall_ms: float
    solution: Solution | None = None


def _record_status(search_status: str) -> str:
    return {"optimal": "optimal", "infeasible": "infeasible"}.get(search_status, "capped")


def _solve_point(inst, prev, rates, spec: SweepSpec, warm: Sequence[MappingState]) -> IntervalResult:
    if spec.allow_migration:
        return solve_interval(
            inst, prev, rates, spec.weights, spec.params,
            soft_delay=bool(spec.margin_sfcs), margin_sfcs=spec.margin_sfcs, warm_starts=warm,
        )
    p1 = build_p1(inst, prev, rates, spec.weights, bool(spec.margin_sfcs), spec.margin_sfcs)
    model = transform_to_miqcp(p1).with_fixed_mapping(prev)
    from .postprocess import postprocess_optimum

    search = solve_miqcp(model, spec.params, [prev])
    sol = postprocess_optimum(search, p1) if search.values is not None else None
    return IntervalResult(p1, model, search, sol)


def run_sweep(inst: Instance, prev: MappingState, spec: SweepSpec) -> list[SweepRecord]:
    """Solve every point in order; infeasible points are recorded, not skipped."""
    records = []
    current = prev
    last_map: MappingState | None = None
    for k, value in enumerate(spec.points()):
        rates = spec.rates_at(value)
        base = current if spec.prev_mode == "chained" else prev
        warm = [last_map] if last_map is not None else []
        t0 = time.perf_counter()
        res = _solve_point(inst, base, rates, spec, warm)
        ms = (time.perf_counter() - t0) * 1e3
        sol = res.solution
        status = _record_status(res.status)
        if sol is None:
            rec = SweepRecord(
                base.interval + 1, rates, spec.strategy.name, status, math.nan, 0, 0, {},
                math.nan, (math.nan,) * 4, res.search.gap, ms,
            )
        else:
            o = sol.objective
            rec = SweepRecord(
                sol.cur.interval, rates, spec.strategy.name, status, sol.eta, sol.migrations,
                sol.extra_edges, dict(sol.delta), o.total, (o.load, o.migration, o.extra_edge, o.margin),
                sol.gap, ms, sol,
            )
            last_map = MappingState(sol.cur.assign, 0)
            if spec.prev_mode == "chained":
                current = sol.cur
        records.append(rec)
    return records


def _feasible(inst, prev, rates, allow_migration, hard: frozenset[str], params: BnbParams) -> bool:
    soft = frozenset(inst.sfc_ids) - hard
    p1 = build_p1(inst, prev, rates, Weights(1.0, 0.0, 0.0, 0.0), bool(soft), soft or None)
    model = transform_to_miqcp(p1)
    if not allow_migration:
        model = model.with_fixed_mapping(prev)
    search = solve_miqcp(model, replace(params, first_feasible=True), [prev])
    if search.status == "capped":
        raise RuntimeError(f"feasibility at {dict(rates)} undecided within the search caps")
    return search.values is not None


def max_feasible_rate(
    inst: Instance,
    prev: MappingState,
    sfc: str | Sequence[str],
    fixed_rates: Mapping[str, float],
    allow_migration: bool = True,
    hard_delay_sfcs: Iterable[str] | None = None,
    bracket: tuple[float, float] = (0.0, 2000.0),
    resolution: float = 1.0,
    params: BnbParams | None = None,
) -> float:
    """Largest rate of ``sfc`` (to ``resolution``) that keeps the problem feasible.

    ``sfc`` may also be a sequence of SFC ids that all carry the probed rate.
    SFCs in ``hard_delay_sfcs`` (all when ``None``) keep a hard deadline;
    the rest only keep their per-hop bounds. Without migration the mapping
    is pinned to ``prev``. Raises ``ValueError`` unless the bracket's low end
    is feasible and its high end infeasible.
    """
    params = params or BnbParams()
    hard = frozenset(inst.sfc_ids if hard_delay_sfcs is None else hard_delay_sfcs)
    swept = (sfc,) if isinstance(sfc, str) else tuple(sfc)

    def ok(value: float) -> bool:
        rates = {**fixed_rates, **{r: value for r in swept}}
        return _feasible(inst, prev, rates, allow_migration, hard, params)

    lo, hi = bracket
    if not ok(lo) or ok(hi):
        raise ValueError(f"bracket {bracket} does not straddle the feasibility boundary")
    while hi - lo > resolution:
        mid = lo + math.floor((hi - lo) / (2 * resolution)) * resolution
        if mid <= lo:
            mid = lo + resolution
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def run_margin_experiment(inst: Instance, prev: MappingState, spec: SweepSpec) -> list[SweepRecord]:
    """Sweep with deadline margins for ``spec.margin_sfcs`` and hard deadlines elsewhere."""
    if not spec.margin_sfcs:
        raise ValueError("the margin experiment needs at least one SFC with a margin")
    unknown = set(spec.margin_sfcs) - set(inst.sfc_ids)
    if unknown:
        raise InstanceError([f"margin requested for unknown SFCs {sorted(unknown)}"])
    return run_sweep(inst, prev, spec)


# ---------------------------------------------------------------- output

CSV_HEADER = [
    "t", "lambda_1", "lambda_2", "lambda_3", "strategy", "eta", "migrations", "extra_edges",
    "delta_3", "obj", "obj_t1", "obj_t2", "obj_t3", "obj_t4", "status", "gap", "ms",
]


def _num(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def records_to_csv(records: Sequence[SweepRecord], sfc_order: Sequence[str] = ("1", "2", "3"),
                   timing: bool = False) -> str:
    """CSV in the fixed column layout.

    The ``ms`` column is left empty unless ``timing`` is set, so that files
    from repeated runs are byte-identical; wall times belong in metadata.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    third = sfc_order[2] if len(sfc_order) > 2 else None
    for r in records:
        lam = [_num(r.rates.get(s, math.nan)) for s in sfc_order[:3]]
        lam += [""] * (3 - len(lam))
        delta3 = r.delta.get(third, 0.0) if r.solution is not None else math.nan
        w.writerow([
            r.t, *lam, r.strategy, _num(r.eta), r.migrations, r.extra_edges, _num(delta3),
            _num(r.objective), *(_num(x) for x in r.terms), r.status, _num(r.gap),
            f"{r.wall_ms:.1f}" if timing else "",
        ])
    return buf.getvalue()


def records_to_plot_json(records: Sequence[SweepRecord]) -> str:
    """Records grouped by strategy, one array per metric."""
    groups: dict[str, dict[str, list]] = {}
    for r in records:
        g = groups.setdefault(r.strategy, {k: [] for k in ("rates", "eta", "migrations", "extra_edges",
                                                            "delta", "objective", "status")})
        g["rates"].append(r.rates)
        g["eta"].append(None if math.isnan(r.eta) else r.eta)
        g["migrations"].append(r.migrations)
        g["extra_edges"].append(r.extra_edges)
        g["delta"].append(r.delta)
        g["objective"].append(None if math.isnan(r.objective) else r.objective)
        g["status"].append(r.status)
    return json.dumps(groups, sort_keys=True, indent=1) + "\n"


def summarize(records: Sequence[SweepRecord]) -> dict[str, float]:
    """Means over points certified optimal, plus how many were excluded."""
    solved = [r for r in records if r.status == "optimal"]
    excluded = [r for r in records if r.status == "capped"]
    return {
        "points": len(records),
        "optimal": len(solved),
        "capped": len(excluded),
        "infeasible": sum(r.status == "infeasible" for r in records),
        "mean_migrations": float(np.mean([r.migrations for r in solved])) if solved else math.nan,
        "mean_eta": float(np.mean([r.eta for r in solved])) if solved else math.nan,
        "mean_extra_edges": float(np.mean([r.extra_edges for r in solved])) if solved else math.nan,
    }

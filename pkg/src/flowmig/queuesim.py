"""Packet-level simulation of each SFC's tandem of processing queues.

Each assigned hop is its own FIFO single-server queue with exponential
service at the hop's allocated rate; arrivals to an SFC are Poisson. Queue
departures are computed in closed form from the Lindley recursion:

    D_k = S_1 + ... + S_k + max_{j <= k} (A_j - (S_1 + ... + S_{j-1}))

which is a cumulative sum plus a running maximum, so a million packets per
hop is a handful of numpy passes.

Random streams are derived from ``SeedSequence(seed)``: SFC ``r`` (in
instance order) gets child ``r``, whose first child drives arrivals and
whose child ``h`` drives hop ``h`` service times.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .formulation import Solution
from .model import Instance, MappingState, mapping_from_doc

N_BATCHES = 20
Z95 = 1.959963984540054


@dataclass(frozen=True)
class SimConfig:
    packets: int = 1_000_000
    warmup: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.packets < 100_000:
            raise ValueError("packets must be at least 1e5")
        if not (0.0 <= self.warmup < 0.5):
            raise ValueError("warmup must lie in [0, 0.5)")


@dataclass
class DelayStats:
    e2e_mean: dict[str, float]
    e2e_ci: dict[str, float]
    hop_mean: dict[tuple[str, int], float]
    hop_ci: dict[tuple[str, int], float]
    samples: dict[str, int]
    skipped: dict[str, str] = field(default_factory=dict)

    def to_csv(self) -> str:
        """Rows ``sfc, hop, mean_s, ci_s, n``; hop ``e2e`` is the chain total."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sfc", "hop", "mean_s", "ci_s", "n"])
        for r in self.e2e_mean:
            hops = sorted(h for rr, h in self.hop_mean if rr == r)
            for h in hops:
                w.writerow([r, h, repr(self.hop_mean[(r, h)]), repr(self.hop_ci[(r, h)]), self.samples[r]])
            w.writerow([r, "e2e", repr(self.e2e_mean[r]), repr(self.e2e_ci[r]), self.samples[r]])
        return buf.getvalue()


class UnstableQueueError(ValueError):
    pass


@dataclass(frozen=True)
class Allocation:
    """The part of a solution the simulator needs: mapping and rates.

    A :class:`~flowmig.formulation.Solution` works wherever an
    ``Allocation`` is accepted.
    """

    cur: MappingState
    mu: Mapping[tuple[str, int, str], float]

    @classmethod
    def from_doc(cls, doc: Mapping) -> "Allocation":
        """Read a solution document as written by ``Solution.to_doc``."""
        mu = {}
        for key, val in doc.get("mu", {}).items():
            r, h, i = (part.strip() for part in key.strip("()").split(","))
            mu[(r, int(h), i)] = float(val)
        return cls(mapping_from_doc(doc), mu)


def _batch_ci(x: np.ndarray) -> float:
    """95% half-width from batch means (removes most autocorrelation)."""
    nb = min(N_BATCHES, len(x))
    if nb < 2:
        return math.inf
    means = np.array([b.mean() for b in np.array_split(x, nb)])
    return float(Z95 * means.std(ddof=1) / math.sqrt(nb))


def _hop_rates(inst: Instance, sol: Solution | Allocation, r: str) -> list[float]:
    s = inst.sfc(r)
    return [sol.mu.get((r, h, sol.cur.assign[(r, h)]), 0.0) for h in range(1, s.n_hops + 1)]


def simulate_chain(lam: float, mus, cfg: SimConfig, seq: np.random.SeedSequence):
    """Simulate one SFC; returns (e2e sojourns, per-hop sojourns) after warm-up."""
    streams = seq.spawn(len(mus) + 1)
    n = cfg.packets
    arrive = np.cumsum(np.random.default_rng(streams[0]).exponential(1.0 / lam, n))
    t = arrive
    per_hop = []
    for k, mu in enumerate(mus):
        service = np.random.default_rng(streams[k + 1]).exponential(1.0 / mu, n)
        cum = np.cumsum(service)
        depart = cum + np.maximum.accumulate(t - (cum - service))
        per_hop.append(depart - t)
        t = depart
    cut = int(cfg.warmup * n)
    return t[cut:] - arrive[cut:], [x[cut:] for x in per_hop]


def simulate(inst: Instance, sol: Solution | Allocation, rates: Mapping[str, float], cfg: SimConfig | None = None) -> DelayStats:
    """Measure mean sojourn times for every SFC of a solved configuration."""
    cfg = cfg or SimConfig()
    for s in inst.sfcs:
        lam = rates[s.id]
        for h, mu in enumerate(_hop_rates(inst, sol, s.id), start=1):
            if lam > 0 and mu <= lam:
                raise UnstableQueueError(f"SFC {s.id} hop {h}: service rate {mu} <= arrival rate {lam}")
    root = np.random.SeedSequence(cfg.seed)
    children = root.spawn(len(inst.sfcs))
    out = DelayStats({}, {}, {}, {}, {})
    for s, seq in zip(inst.sfcs, children):
        lam = rates[s.id]
        if lam <= 0:
            out.skipped[s.id] = "zero traffic: no packets to measure"
            continue
        e2e, hops = simulate_chain(lam, _hop_rates(inst, sol, s.id), cfg, seq)
        out.e2e_mean[s.id] = float(e2e.mean())
        out.e2e_ci[s.id] = _batch_ci(e2e)
        out.samples[s.id] = len(e2e)
        for h, x in enumerate(hops, start=1):
            out.hop_mean[(s.id, h)] = float(x.mean())
            out.hop_ci[(s.id, h)] = _batch_ci(x)
    return out


@dataclass
class SfcComparison:
    sfc: str
    measured_s: float
    model_s: float
    rel_error: float
    deadline_s: float
    ci_s: float
    passed: bool

    @property
    def within_deadline(self) -> bool:
        """Measured mean not significantly above the deadline (95% level)."""
        return self.measured_s - self.ci_s <= self.deadline_s


@dataclass
class ComparisonReport:
    rows: list[SfcComparison]
    threshold: float
    notes: list[str]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def render(self) -> str:
        lines = [f"{'sfc':>6} {'measured_ms':>12} {'model_ms':>10} {'rel_err':>9} {'deadline_ms':>12} result"]
        for r in self.rows:
            lines.append(
                f"{r.sfc:>6} {r.measured_s * 1e3:12.5f} {r.model_s * 1e3:10.5f} {r.rel_error:9.5f} "
                f"{r.deadline_s * 1e3:12.3f} {'PASS' if r.passed else 'FAIL'}"
            )
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def compare_to_model(
    inst: Instance, stats: DelayStats, sol: Solution | Allocation, rates: Mapping[str, float], threshold: float = 0.03
) -> ComparisonReport:
    """Relative error of each measured mean against ``sum_h 1/(mu - lambda + eps)``."""
    eps = inst.epsilon
    rows = []
    notes = [f"SFC {r} excluded: {why}" for r, why in sorted(stats.skipped.items())]
    for s in inst.sfcs:
        if s.id not in stats.e2e_mean:
            continue
        lam = rates[s.id]
        model = sum(1.0 / (mu - lam + eps) for mu in _hop_rates(inst, sol, s.id))
        err = abs(stats.e2e_mean[s.id] - model) / model
        rows.append(SfcComparison(
            s.id, stats.e2e_mean[s.id], model, err, s.deadline_s, stats.e2e_ci[s.id], err <= threshold
        ))
    return ComparisonReport(rows, threshold, notes)

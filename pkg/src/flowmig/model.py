"""Domain types for the VNFI network abstraction.

An :class:`Instance` is a directed graph of typed VNF instances (VNFIs) and
service access nodes, plus the SFC requests that run over it. A
:class:`MappingState` is the one-hot VNF -> VNFI assignment for one interval.

Units are fixed internally: seconds, packet/s, cycle/s, bit/s, cycle/packet
and bit/packet. Instance documents give deadlines in milliseconds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import IO, Any, Iterable, Mapping

DEFAULT_EPSILON = 1e-4

Hop = tuple[str, int]


class InstanceError(ValueError):
    """Raised when an instance (or a document tied to one) fails validation.

    ``problems`` lists every violation found, not only the first one.
    ``kind`` is ``"parse"`` for unreadable documents and ``"validation"``
    for well-formed documents that break an invariant.
    """

    def __init__(self, problems: list[str], kind: str = "validation"):
        self.problems = list(problems)
        self.kind = kind
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Vnfi:
    id: str
    vnf_type: str
    capacity_cycles: float
    position: tuple[int, int] | None = None


@dataclass(frozen=True)
class AccessNode:
    id: str
    kind: str  # "source" | "destination"


@dataclass(frozen=True)
class LogicalEdge:
    id: str
    src: str
    dst: str
    capacity_bits: float


@dataclass(frozen=True)
class Sfc:
    id: str
    source: str
    dest: str
    chain: tuple[str, ...]
    deadline_s: float
    packet_bits: float
    density: Mapping[str, float]

    @property
    def n_hops(self) -> int:
        return len(self.chain)


@dataclass(frozen=True)
class Instance:
    vnf_types: tuple[str, ...]
    vnfis: tuple[Vnfi, ...]
    access_nodes: tuple[AccessNode, ...]
    edges: tuple[LogicalEdge, ...]
    sfcs: tuple[Sfc, ...]
    epsilon: float = DEFAULT_EPSILON
    _vnfi_by_id: Mapping[str, Vnfi] = field(init=False, repr=False, compare=False)
    _sfc_by_id: Mapping[str, Sfc] = field(init=False, repr=False, compare=False)
    _edge_by_pair: Mapping[tuple[str, str], LogicalEdge] = field(init=False, repr=False, compare=False)
    _candidates: Mapping[Hop, tuple[str, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        problems = _instance_problems(self)
        if problems:
            raise InstanceError(problems)
        object.__setattr__(self, "_vnfi_by_id", MappingProxyType({v.id: v for v in self.vnfis}))
        object.__setattr__(self, "_sfc_by_id", MappingProxyType({s.id: s for s in self.sfcs}))
        object.__setattr__(
            self, "_edge_by_pair", MappingProxyType({(e.src, e.dst): e for e in self.edges})
        )
        by_type: dict[str, list[str]] = {}
        for v in self.vnfis:
            by_type.setdefault(v.vnf_type, []).append(v.id)
        cands = {}
        for s in self.sfcs:
            for h, f in enumerate(s.chain, start=1):
                cands[(s.id, h)] = tuple(sorted(by_type.get(f, ())))
        object.__setattr__(self, "_candidates", MappingProxyType(cands))

    def vnfi(self, vid: str) -> Vnfi:
        return self._vnfi_by_id[vid]

    def sfc(self, sid: str) -> Sfc:
        try:
            return self._sfc_by_id[sid]
        except KeyError:
            raise KeyError(f"unknown SFC {sid!r}") from None

    def edge(self, src: str, dst: str) -> LogicalEdge | None:
        return self._edge_by_pair.get((src, dst))

    def has_edge(self, src: str, dst: str) -> bool:
        return (src, dst) in self._edge_by_pair

    @property
    def sfc_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.sfcs)

    @property
    def hops(self) -> list[Hop]:
        """All (SFC id, hop index) pairs, hop index starting at 1."""
        return [(s.id, h) for s in self.sfcs for h in range(1, s.n_hops + 1)]

    @property
    def n_virtual_links(self) -> int:
        return sum(s.n_hops + 1 for s in self.sfcs)

    def candidates(self, r: str, h: int) -> tuple[str, ...]:
        return candidate_vnfis(self, r, h)


def _instance_problems(inst: Instance) -> list[str]:
    problems = []
    types = set(inst.vnf_types)
    if len(types) != len(inst.vnf_types):
        problems.append("duplicate VNF type ids")
    if not (inst.epsilon > 0):
        problems.append(f"epsilon must be > 0, got {inst.epsilon}")
    node_ids: set[str] = set()
    for v in inst.vnfis:
        if v.id in node_ids:
            problems.append(f"duplicate node id {v.id!r}")
        node_ids.add(v.id)
        if v.vnf_type not in types:
            problems.append(f"VNFI {v.id!r} has unknown type {v.vnf_type!r}")
        if not (v.capacity_cycles > 0):
            problems.append(f"VNFI {v.id!r}: non-positive capacity {v.capacity_cycles}")
    access = {}
    for a in inst.access_nodes:
        if a.id in node_ids:
            problems.append(f"duplicate node id {a.id!r}")
        node_ids.add(a.id)
        access[a.id] = a
        if a.kind not in ("source", "destination"):
            problems.append(f"access node {a.id!r}: kind must be source|destination")
    pairs = set()
    for e in inst.edges:
        for end in (e.src, e.dst):
            if end not in node_ids:
                problems.append(f"edge {e.id!r}: dangling node reference {end!r}")
        if e.src == e.dst:
            problems.append(f"edge {e.id!r}: self loop on {e.src!r}")
        if (e.src, e.dst) in pairs:
            problems.append(f"edge {e.id!r}: duplicate pair ({e.src}, {e.dst})")
        pairs.add((e.src, e.dst))
        if not (e.capacity_bits > 0):
            problems.append(f"edge {e.id!r}: non-positive capacity {e.capacity_bits}")
    by_type: dict[str, set[str]] = {}
    for v in inst.vnfis:
        by_type.setdefault(v.vnf_type, set()).add(v.id)
    seen_sfc = set()
    for s in inst.sfcs:
        if s.id in seen_sfc:
            problems.append(f"duplicate SFC id {s.id!r}")
        seen_sfc.add(s.id)
        if s.source not in access:
            problems.append(f"SFC {s.id!r}: dangling source {s.source!r}")
        if s.dest not in access:
            problems.append(f"SFC {s.id!r}: dangling destination {s.dest!r}")
        if not s.chain:
            problems.append(f"SFC {s.id!r}: empty chain")
        if len(set(s.chain)) != len(s.chain):
            problems.append(f"SFC {s.id!r}: a VNF type appears more than once in the chain")
        if not (s.deadline_s > 0):
            problems.append(f"SFC {s.id!r}: non-positive deadline")
        if not (s.packet_bits > 0):
            problems.append(f"SFC {s.id!r}: non-positive packet size")
        for h, f in enumerate(s.chain, start=1):
            if f not in types:
                problems.append(f"SFC {s.id!r} hop {h}: unknown type {f!r}")
            cands = by_type.get(f, set())
            if not cands:
                problems.append(f"SFC {s.id!r} hop {h}: empty candidate set for type {f!r}")
            for vid in cands:
                p = s.density.get(vid)
                if p is None:
                    problems.append(f"SFC {s.id!r}: missing processing density for {vid!r}")
                elif not (p > 0):
                    problems.append(f"SFC {s.id!r}: non-positive density {p} on {vid!r}")
    return problems


@dataclass(frozen=True)
class MappingState:
    """One-hot VNF -> VNFI assignment for interval ``interval``."""

    assign: Mapping[Hop, str]
    interval: int = 0

    def __post_init__(self):
        object.__setattr__(self, "assign", MappingProxyType(dict(self.assign)))

    def __getitem__(self, hop: Hop) -> str:
        return self.assign[hop]

    def to_doc(self) -> dict[str, str]:
        return {f"({r},{h})": v for (r, h), v in sorted(self.assign.items())}


@dataclass(frozen=True)
class MappingDelta:
    migrations: frozenset[tuple[str, int, str, str]]
    existing_edge_hits: frozenset[tuple[str, int, str, str]]
    extra_edges: int

    @property
    def n_migrations(self) -> int:
        return len(self.migrations)


@dataclass(frozen=True)
class TrafficProfile:
    """Per-interval traffic rates; ``rates[t][sfc_id]`` in packet/s."""

    rates: tuple[Mapping[str, float], ...]

    def at(self, t: int) -> dict[str, float]:
        return dict(self.rates[t])


def candidate_vnfis(inst: Instance, r: str, h: int) -> tuple[str, ...]:
    """VNFIs whose type matches hop ``h`` of SFC ``r``, ascending by id."""
    s = inst.sfc(r)
    if not 1 <= h <= s.n_hops:
        raise IndexError(f"hop index {h} out of range 1..{s.n_hops} for SFC {r!r}")
    return inst._candidates[(r, h)]


def allocated_rate(share: float, cap: float, density: float) -> float:
    """Processing rate in packet/s obtained from a CPU share on a VNFI."""
    if not 0.0 <= share <= 1.0:
        raise ValueError(f"share must lie in [0, 1], got {share}")
    if cap <= 0 or density <= 0:
        raise ValueError("capacity and density must be positive")
    return share * cap / density


def validate_mapping(inst: Instance, state: MappingState) -> None:
    problems = []
    hops = set(inst.hops)
    for hop in hops - set(state.assign):
        problems.append(f"hop {hop} is not mapped")
    for hop, vid in state.assign.items():
        if hop not in hops:
            problems.append(f"mapping names unknown hop {hop}")
        elif vid not in inst._candidates[hop]:
            problems.append(f"hop {hop} mapped to {vid!r}, which is not a candidate")
    if problems:
        raise InstanceError(problems)


def link_endpoints(inst: Instance, state: MappingState, r: str) -> list[tuple[str, str]]:
    """Endpoints (from, to) of each virtual link 0..H_r of SFC ``r``."""
    s = inst.sfc(r)
    nodes = [s.source] + [state[(r, h)] for h in range(1, s.n_hops + 1)] + [s.dest]
    return list(zip(nodes[:-1], nodes[1:]))


def derive_mapping_delta(inst: Instance, prev: MappingState, cur: MappingState) -> MappingDelta:
    """Migrations between two consecutive mappings and the edge usage of ``cur``."""
    if cur.interval != prev.interval + 1:
        raise ValueError(
            f"interval ordering mismatch: prev={prev.interval}, cur={cur.interval}"
        )
    validate_mapping(inst, prev)
    validate_mapping(inst, cur)
    return _delta(inst, prev, cur)


def _delta(inst: Instance, prev: MappingState, cur: MappingState) -> MappingDelta:
    migrations = set()
    for r, h in inst.hops:
        i, j = prev[(r, h)], cur[(r, h)]
        if i != j:
            migrations.add((r, h, i, j))
    hits = set()
    for s in inst.sfcs:
        for h, (a, b) in enumerate(link_endpoints(inst, cur, s.id)):
            if inst.has_edge(a, b):
                hits.add((s.id, h, a, b))
    return MappingDelta(
        migrations=frozenset(migrations),
        existing_edge_hits=frozenset(hits),
        extra_edges=inst.n_virtual_links - len(hits),
    )


# ---------------------------------------------------------------- documents


def _num(d: Mapping[str, Any], key: str, where: str, problems: list[str], default=None):
    val = d.get(key, default)
    if val is None:
        problems.append(f"{where}: missing {key!r}")
        return float("nan")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        problems.append(f"{where}: {key!r} must be a number")
        return float("nan")
    return float(val)


def instance_from_dict(doc: Mapping[str, Any]) -> Instance:
    problems: list[str] = []
    if not isinstance(doc, Mapping):
        raise InstanceError(["instance document must be an object"])
    for key in ("vnf_types", "vnfis", "access_nodes", "edges", "sfcs"):
        if not isinstance(doc.get(key), list):
            problems.append(f"missing or non-list key {key!r}")
    if problems:
        raise InstanceError(problems)

    vnf_types = tuple(str(t["id"]) if isinstance(t, Mapping) else str(t) for t in doc["vnf_types"])
    vnfis = []
    for k, v in enumerate(doc["vnfis"]):
        where = f"vnfis[{k}]"
        if not isinstance(v, Mapping) or "id" not in v or "type" not in v:
            problems.append(f"{where}: needs 'id' and 'type'")
            continue
        pos = v.get("position")
        vnfis.append(
            Vnfi(
                id=str(v["id"]),
                vnf_type=str(v["type"]),
                capacity_cycles=_num(v, "capacity_cycles", where, problems),
                position=tuple(pos) if pos is not None else None,
            )
        )
    access = []
    for k, a in enumerate(doc["access_nodes"]):
        if not isinstance(a, Mapping) or "id" not in a:
            problems.append(f"access_nodes[{k}]: needs 'id'")
            continue
        access.append(AccessNode(id=str(a["id"]), kind=str(a.get("kind", "source"))))
    edges = []
    for k, e in enumerate(doc["edges"]):
        where = f"edges[{k}]"
        if not isinstance(e, Mapping) or "from" not in e or "to" not in e:
            problems.append(f"{where}: needs 'from' and 'to'")
            continue
        edges.append(
            LogicalEdge(
                id=str(e.get("id", f"{e['from']}->{e['to']}")),
                src=str(e["from"]),
                dst=str(e["to"]),
                capacity_bits=_num(e, "capacity_bits", where, problems),
            )
        )
    type_of = {v.id: v.vnf_type for v in vnfis}
    sfcs = []
    for k, s in enumerate(doc["sfcs"]):
        where = f"sfcs[{k}]"
        if not isinstance(s, Mapping) or not {"id", "source", "dest", "chain"} <= set(s):
            problems.append(f"{where}: needs 'id', 'source', 'dest', 'chain'")
            continue
        chain = tuple(str(f) for f in s["chain"])
        dens = s.get("density", {})
        if isinstance(dens, (int, float)):
            dens = {"default": dens}
        default = dens.get("default")
        overrides = dens.get("per_vnfi", {})
        density = {}
        for vid, f in type_of.items():
            if f in chain:
                p = overrides.get(vid, default)
                if p is not None:
                    density[vid] = float(p)
        sfcs.append(
            Sfc(
                id=str(s["id"]),
                source=str(s["source"]),
                dest=str(s["dest"]),
                chain=chain,
                deadline_s=_num(s, "deadline_ms", where, problems) / 1000.0,
                packet_bits=_num(s, "packet_bits", where, problems),
                density=MappingProxyType(density),
            )
        )
    eps = doc.get("epsilon", DEFAULT_EPSILON)
    if problems:
        raise InstanceError(problems)
    return Instance(
        vnf_types=vnf_types,
        vnfis=tuple(sorted(vnfis, key=lambda v: v.id)),
        access_nodes=tuple(sorted(access, key=lambda a: a.id)),
        edges=tuple(sorted(edges, key=lambda e: (e.src, e.dst))),
        sfcs=tuple(sfcs),
        epsilon=float(eps),
    )


def instance_to_dict(inst: Instance) -> dict[str, Any]:
    sfcs = []
    for s in inst.sfcs:
        vals = set(s.density.values())
        if len(vals) == 1:
            dens: dict[str, Any] = {"default": next(iter(vals))}
        else:
            dens = {"per_vnfi": dict(sorted(s.density.items()))}
        sfcs.append(
            {
                "id": s.id,
                "source": s.source,
                "dest": s.dest,
                "chain": list(s.chain),
                "deadline_ms": s.deadline_s * 1000.0,
                "packet_bits": s.packet_bits,
                "density": dens,
            }
        )
    return {
        "vnf_types": list(inst.vnf_types),
        "vnfis": [
            {"id": v.id, "type": v.vnf_type, "capacity_cycles": v.capacity_cycles}
            | ({"position": list(v.position)} if v.position is not None else {})
            for v in inst.vnfis
        ],
        "access_nodes": [{"id": a.id, "kind": a.kind} for a in inst.access_nodes],
        "edges": [
            {"id": e.id, "from": e.src, "to": e.dst, "capacity_bits": e.capacity_bits}
            for e in inst.edges
        ],
        "sfcs": sfcs,
        "epsilon": inst.epsilon,
    }


def _read_json(source: IO | str | bytes) -> Any:
    if hasattr(source, "read"):
        source = source.read()
    try:
        return json.loads(source)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InstanceError([f"parse error: {exc}"], kind="parse") from exc


def load_instance(source: IO | str | bytes) -> Instance:
    """Parse and validate an instance document (JSON text or stream)."""
    return instance_from_dict(_read_json(source))


def parse_hop_key(key: str) -> Hop:
    body = key.strip().strip("()")
    r, _, h = body.rpartition(",")
    if not r:
        raise InstanceError([f"bad hop key {key!r}; expected '(r,h)'"])
    return r.strip(), int(h)


def mapping_from_doc(doc: Mapping[str, Any], interval: int = 0) -> MappingState:
    if "assign" in doc:
        interval = int(doc.get("interval", interval))
        doc = doc["assign"]
    return MappingState({parse_hop_key(k): str(v) for k, v in doc.items()}, interval)


def load_mapping(source: IO | str | bytes, inst: Instance | None = None, interval: int = 0) -> MappingState:
    state = mapping_from_doc(_read_json(source), interval)
    if inst is not None:
        validate_mapping(inst, state)
    return state


def traffic_from_doc(doc: Any) -> TrafficProfile:
    if isinstance(doc, Mapping):
        doc = [doc]
    rows = []
    problems = []
    for t, row in enumerate(doc):
        clean = {}
        for k, v in row.items():
            v = float(v)
            if not (v >= 0 and v < float("inf")):
                problems.append(f"interval {t}: rate for {k!r} must be finite and >= 0")
            clean[str(k)] = v
        rows.append(MappingProxyType(clean))
    if problems:
        raise InstanceError(problems)
    return TrafficProfile(tuple(rows))


def load_traffic(source: IO | str | bytes) -> TrafficProfile:
    return traffic_from_doc(_read_json(source))


def hamming(prev: MappingState, cur: MappingState, hops: Iterable[Hop]) -> int:
    return sum(prev[hp] != cur[hp] for hp in hops)

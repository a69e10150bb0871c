"""Seeded generator for the 64-VNFI mesh used in the experiments."""

from __future__ import annotations

import numpy as np

from .model import AccessNode, Instance, LogicalEdge, MappingState, Sfc, Vnfi

GRID = 8
TYPE_COUNTS = {"f1": 16, "f2": 16, "f3": 17, "f4": 15}
CHAINS = {
    "1": ("f4", "f2", "f3"),
    "2": ("f1", "f3", "f2", "f4"),
    "3": ("f3", "f1", "f4", "f2"),
}
# Grid cells of the two shared instances; vertically adjacent.
SHARED_F4_CELL = 28
SHARED_F2_CELL = 20

CAPACITY_CYCLES = 1.0e9
DENSITY = 1.0e6  # cycle/packet, so C/P = 1000 packet/s
PACKET_BITS = 12_000.0
EDGE_CAPACITY_BITS = 1.0e9
DEADLINE_MS = 20.0
MAX_RETRIES = 200


def vnfi_name(cell: int, vnf_type: str) -> str:
    return f"N{cell:02d}-F{vnf_type[1:]}"


def _neighbors(cell: int) -> list[int]:
    r, c = divmod(cell, GRID)
    out = []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        rr, cc = r + dr, c + dc
        if 0 <= rr < GRID and 0 <= cc < GRID:
            out.append(rr * GRID + cc)
    return out


def _place_types(rng: np.random.Generator) -> list[str]:
    pool = []
    for f, n in TYPE_COUNTS.items():
        n -= (f == "f4") + (f == "f2")
        pool += [f] * n
    pool = list(rng.permutation(pool))
    types = []
    for cell in range(GRID * GRID):
        if cell == SHARED_F4_CELL:
            types.append("f4")
        elif cell == SHARED_F2_CELL:
            types.append("f2")
        else:
            types.append(str(pool.pop()))
    return types


def _pick(rng, options: list[int]) -> int | None:
    if not options:
        return None
    return int(options[rng.integers(len(options))])


def _initial_chains(types: list[str], rng) -> dict[str, list[int]] | None:
    used = {SHARED_F4_CELL, SHARED_F2_CELL}

    def step(cell: int, want: str) -> int | None:
        opts = [n for n in _neighbors(cell) if types[n] == want and n not in used]
        got = _pick(rng, sorted(opts))
        if got is not None:
            used.add(got)
        return got

    f4, f2 = SHARED_F4_CELL, SHARED_F2_CELL
    s1_f3 = step(f2, "f3")
    s3_f1 = step(f4, "f1")
    s3_f3 = step(s3_f1, "f3") if s3_f1 is not None else None
    s2_f2 = step(f4, "f2")
    s2_f3 = step(s2_f2, "f3") if s2_f2 is not None else None
    s2_f1 = step(s2_f3, "f1") if s2_f3 is not None else None
    cells = {
        "1": [f4, f2, s1_f3],
        "2": [s2_f1, s2_f3, s2_f2, f4],
        "3": [s3_f3, s3_f1, f4, f2],
    }
    if any(c is None for chain in cells.values() for c in chain):
        return None
    return cells


def generate_paper_topology(seed: int = 0) -> tuple[Instance, MappingState]:
    """Build the 8x8 mesh instance and its initial mapping.

    Types are shuffled over the grid with the 16/16/17/15 histogram, with
    cell 28 pinned to f4 and cell 20 to f2. Logical edges join 4-adjacent
    VNFIs of different types in both directions; each SFC's source and
    destination connect only to the VNFIs of the initial mapping. The
    initial mapping runs along mesh edges, shares the f4 VNFI among all three
    SFCs and the f2 VNFI between SFCs 1 and 3, and uses dedicated VNFIs
    elsewhere. Infeasible shuffles are redrawn deterministically.
    """
    for attempt in range(MAX_RETRIES):
        rng = np.random.default_rng([seed, attempt])
        types = _place_types(rng)
        chains = _initial_chains(types, rng)
        if chains is not None:
            break
    else:  # pragma: no cover - the retry budget is far above what is needed
        raise RuntimeError(f"no admissible placement for seed {seed}")

    names = [vnfi_name(c, types[c]) for c in range(GRID * GRID)]
    vnfis = tuple(
        Vnfi(names[c], types[c], CAPACITY_CYCLES, position=divmod(c, GRID)) for c in range(GRID * GRID)
    )
    edges = []
    for c in range(GRID * GRID):
        for n in _neighbors(c):
            if types[c] != types[n]:
                edges.append(LogicalEdge(f"{names[c]}->{names[n]}", names[c], names[n], EDGE_CAPACITY_BITS))
    access = []
    sfcs = []
    for r, chain in CHAINS.items():
        src, dst = f"src{r}", f"dst{r}"
        access += [AccessNode(src, "source"), AccessNode(dst, "destination")]
        first, last = names[chains[r][0]], names[chains[r][-1]]
        edges.append(LogicalEdge(f"{src}->{first}", src, first, EDGE_CAPACITY_BITS))
        edges.append(LogicalEdge(f"{last}->{dst}", last, dst, EDGE_CAPACITY_BITS))
        density = {v.id: DENSITY for v in vnfis if v.vnf_type in chain}
        sfcs.append(Sfc(r, src, dst, chain, DEADLINE_MS / 1000.0, PACKET_BITS, density))
    inst = Instance(
        vnf_types=tuple(TYPE_COUNTS),
        vnfis=vnfis,
        access_nodes=tuple(sorted(access, key=lambda a: a.id)),
        edges=tuple(sorted(edges, key=lambda e: (e.src, e.dst))),
        sfcs=tuple(sfcs),
    )
    assign = {(r, h + 1): names[c] for r, cells in chains.items() for h, c in enumerate(cells)}
    return inst, MappingState(assign, interval=0)


def generate_tiny_instance(seed: int) -> tuple[Instance, MappingState, dict[str, float]]:
    """Small random instance for exhaustive cross-checks.

    Two or three VNF types with at most six VNFIs in total, two SFCs of one
    or two hops, random logical edges (some with tight bit-rate capacity)
    and a random valid previous mapping. Returns ``(instance, prev, rates)``.
    """
    rng = np.random.default_rng([seed, 7919])
    n_types = int(rng.integers(2, 4))
    types = [f"t{k}" for k in range(1, n_types + 1)]
    per_type = [2] * n_types
    for k in rng.permutation(n_types)[: 6 - 2 * n_types]:
        per_type[k] += int(rng.integers(0, 2))
    vnfis = []
    for t, count in zip(types, per_type):
        for k in range(count):
            cap = float(rng.choice([0.8e9, 1.0e9, 1.2e9]))
            vnfis.append(Vnfi(f"{t}-{k}", t, cap))
    ids = [v.id for v in vnfis]
    sfcs, access, edges = [], [], []
    for r in ("a", "b"):
        hops = int(rng.integers(1, 3))
        chain = tuple(str(t) for t in rng.choice(types, size=hops, replace=False))
        src, dst = f"src-{r}", f"dst-{r}"
        access += [AccessNode(src, "source"), AccessNode(dst, "destination")]
        density = {v.id: float(rng.uniform(0.8e6, 1.2e6)) for v in vnfis if v.vnf_type in chain}
        deadline_ms = float(rng.uniform(6.0, 30.0)) * hops / 2
        sfcs.append(Sfc(r, src, dst, chain, deadline_ms / 1000.0, PACKET_BITS, density))
        for v in vnfis:
            if v.vnf_type == chain[0] and rng.random() < 0.6:
                edges.append((src, v.id))
            if v.vnf_type == chain[-1] and rng.random() < 0.6:
                edges.append((v.id, dst))
    for a in ids:
        for b in ids:
            if a != b and rng.random() < 0.5:
                edges.append((a, b))
    caps = rng.choice([EDGE_CAPACITY_BITS, 4.0e6], size=len(edges), p=[0.8, 0.2])
    links = tuple(LogicalEdge(f"{a}->{b}", a, b, float(c)) for (a, b), c in zip(edges, caps))
    inst = Instance(tuple(types), tuple(vnfis), tuple(access), links, tuple(sfcs))
    assign = {}
    for s in sfcs:
        for h in range(1, s.n_hops + 1):
            cands = inst.candidates(s.id, h)
            assign[(s.id, h)] = cands[int(rng.integers(len(cands)))]
    rates = {s.id: float(rng.uniform(100.0, 500.0)) for s in sfcs}
    return inst, MappingState(assign, interval=0), rates


def dedicated_chain_instance(
    hops: int = 4, rate_cap: float = 1000.0, deadline_s: float = 0.02
) -> tuple[Instance, MappingState]:
    """One SFC over ``hops`` distinct types with a single VNFI each."""
    types = tuple(f"g{k}" for k in range(1, hops + 1))
    vnfis = tuple(Vnfi(f"v{k}", t, CAPACITY_CYCLES) for k, t in enumerate(types, start=1))
    names = ["src"] + [v.id for v in vnfis] + ["dst"]
    edges = tuple(
        LogicalEdge(f"{a}->{b}", a, b, EDGE_CAPACITY_BITS) for a, b in zip(names, names[1:])
    )
    density = {v.id: CAPACITY_CYCLES / rate_cap for v in vnfis}
    sfc = Sfc("1", "src", "dst", types, deadline_s, PACKET_BITS, density)
    inst = Instance(types, vnfis, (AccessNode("src", "source"), AccessNode("dst", "destination")), edges, (sfc,))
    return inst, MappingState({("1", h): f"v{h}" for h in range(1, hops + 1)}, interval=0)

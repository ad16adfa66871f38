"""Multi-modal network expansion.

A physical network (road links plus public-transit lines) and an OD demand
profile are expanded into one Markov decision graph per destination.  Each
graph contains origin states, per-OD mode-choice dummy nodes and separate
copies of the driving, MaaS and non-MaaS service networks.  Subnetwork copies
are shared by all origins of a destination that belong to the same
duplication group (same value of time by default, or one copy per OD pair).

Every expanded action whose utility depends on a travel time points at one
entry of ``MultiModalNetwork.time_links``; that many-to-one map is the
aggregation used by the traffic operator.
"""
from __future__ import annotations

import enum
import hashlib
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class NetworkError(ValueError):
    """Raised for malformed inputs or an expansion that cannot be solved."""


# --------------------------------------------------------------------------
# Physical inputs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RoadLink:
    tail: int
    head: int
    length: float
    t0: float
    capacity: float


@dataclass(frozen=True)
class PtLine:
    """A directed transit line; ``times`` and ``capacities`` are per segment."""

    name: str
    stops: tuple[int, ...]
    times: tuple[float, ...]
    capacities: tuple[float, ...]
    operator: str = "PT"

    @property
    def segments(self) -> list[tuple[int, int]]:
        return list(zip(self.stops[:-1], self.stops[1:]))

    def reversed(self, suffix: str = "-") -> "PtLine":
        return PtLine(self.name + suffix, tuple(reversed(self.stops)),
                      tuple(reversed(self.times)), tuple(reversed(self.capacities)),
                      self.operator)


@dataclass(frozen=True)
class PhysicalNetwork:
    nodes: tuple[int, ...]
    road_links: tuple[RoadLink, ...]
    pt_lines: tuple[PtLine, ...] = ()

    def validate(self) -> None:
        nodes = set(self.nodes)
        if len(nodes) != len(self.nodes):
            raise NetworkError("duplicate node ids")
        seen = set()
        for k, a in enumerate(self.road_links):
            if a.tail not in nodes or a.head not in nodes:
                raise NetworkError(f"road_links[{k}] ({a.tail},{a.head}): endpoint is not a declared node")
            if not (a.length > 0 and a.t0 > 0 and a.capacity > 0):
                raise NetworkError(f"road_links[{k}] ({a.tail},{a.head}): length, t0 and capacity must be positive")
            if (a.tail, a.head) in seen:
                raise NetworkError(f"road_links[{k}] ({a.tail},{a.head}): duplicate link")
            seen.add((a.tail, a.head))
        names = set()
        for line in self.pt_lines:
            if line.name in names:
                raise NetworkError(f"duplicate PT line name {line.name!r}")
            names.add(line.name)
            if len(set(line.stops)) < 2 or len(set(line.stops)) != len(line.stops):
                raise NetworkError(f"PT line {line.name!r} must visit at least 2 distinct nodes, each once")
            for s in line.stops:
                if s not in nodes:
                    raise NetworkError(f"PT line {line.name!r}: dangling stop {s} is not a declared node")
            nseg = len(line.stops) - 1
            if len(line.times) != nseg or len(line.capacities) != nseg:
                raise NetworkError(f"PT line {line.name!r}: need one time and capacity per segment")
            if min(line.times) <= 0 or min(line.capacities) <= 0:
                raise NetworkError(f"PT line {line.name!r}: times and capacities must be positive")


@dataclass(frozen=True)
class DemandProfile:
    entries: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        seen = set()
        for o, d, q in self.entries:
            if q < 0:
                raise NetworkError(f"negative demand for OD ({o},{d})")
            if (o, d) in seen:
                raise NetworkError(f"duplicate OD entry ({o},{d})")
            seen.add((o, d))

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence]) -> "DemandProfile":
        return cls(tuple((int(o), int(d), float(q)) for o, d, q in pairs))

    def positive(self) -> list[tuple[int, int, float]]:
        return [(o, d, q) for o, d, q in self.entries if q > 0 and o != d]

    @property
    def total(self) -> float:
        return float(sum(q for _, _, q in self.positive()))

    def scaled(self, factor: float) -> "DemandProfile":
        return DemandProfile(tuple((o, d, q * factor) for o, d, q in self.entries))

    def validate(self) -> None:
        if not self.positive():
            raise NetworkError("demand profile has no positive OD entry")


# --------------------------------------------------------------------------
# Expanded network
# --------------------------------------------------------------------------

class LinkKind(enum.IntEnum):
    ROAD = 0            # congestible road traversal (driving or MoD)
    MOD_ACCESS = 1      # congestible MoD access (waiting and pickup)
    PT_RIDE = 2         # fixed-time capacitated transit segment
    PT_ACCESS = 3       # boarding a transit line from an OD-mode node
    TRANSFER = 4        # transfer between services inside one subnetwork
    MODE_CHOICE = 5     # dummy origin -> OD-mode link
    DRIVE_ACCESS = 6    # OD-mode node -> driving copy (carries the fixed cost)


class Subnet(enum.IntEnum):
    DUMMY = 0
    MAAS = 1
    NONMAAS = 2
    DRIVE = 3


MODE_NAMES = {Subnet.MAAS: "MaaS", Subnet.NONMAAS: "nonMaaS", Subnet.DRIVE: "Driving"}


@dataclass(frozen=True)
class TimeLink:
    """One coordinate of the traffic operator's travel-time vector."""

    key: tuple
    kind: str            # 'road' | 'mod_access' | 'pt_ride' | 'pt_board'
    congestible: bool
    t0: float
    capacity: float
    length: float = 0.0
    operator: str | None = None


@dataclass(frozen=True)
class ExpansionConfig:
    """Options for :func:`build_multimodal`.

    ``mod_access_scope`` is ``"node"`` (one congestible access link per
    physical node and MoD operator) or ``"network"`` (a single shared access
    link per operator).  ``duplication`` selects how service copies are
    shared inside a destination: ``"group"`` uses ``od_group`` (by default
    every OD of a destination shares one copy), ``"od"`` copies per OD pair.
    """

    mod_operators: tuple[str, ...] = ("MoD",)
    include_maas: bool = True
    include_nonmaas: bool = True
    include_driving: bool = True
    pt_transfer_nodes: frozenset[int] = frozenset()
    mod_pt_transfers: bool = True
    mod_access_time: float = 1.0
    mod_access_capacity: float = 100.0
    mod_access_scope: str = "node"
    pt_access_time: float = 2.0
    pt_access_capacity: float = 500.0
    duplication: str = "group"
    od_group: Callable[[int, int], Hashable] | None = None
    prune: bool = True
    strict: bool = True


@dataclass
class DestinationGraph:
    """Expanded MDP for one destination.

    States are indexed ``0..n_states-1``; the absorbing destination is the
    virtual state ``n_states``.  Actions are sorted by tail state.
    """

    dest: int
    states: list[tuple]
    tail: np.ndarray
    head: np.ndarray
    kind: np.ndarray
    subnet: np.ndarray
    operator: np.ndarray          # index into network.operators, -1 if none
    time_link: np.ndarray         # index into network.time_links, -1 if none
    od: np.ndarray                # OD index for dummy and OD-mode access actions, else -1
    road: np.ndarray              # index into physical road_links, -1 if none
    pt_seg: np.ndarray            # index into network.pt_segments, -1 if none
    vot_od: np.ndarray            # OD whose value of time applies to the action, -1 = group default
    group_od: np.ndarray          # representative OD of the copy the action lives in
    q: np.ndarray                 # demand per state (nonzero at origins only)
    origin_state: dict[int, int] = field(default_factory=dict)
    odmode_state: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.tail)


@dataclass
class MultiModalNetwork:
    physical: PhysicalNetwork
    demand: DemandProfile
    config: ExpansionConfig
    lines: tuple[PtLine, ...]
    operators: tuple[str, ...]
    operator_kind: dict[str, str]
    time_links: list[TimeLink]
    pt_segments: list[tuple[str, int, int]]
    ods: list[tuple[int, int]]
    od_demand: np.ndarray
    graphs: list[DestinationGraph]
    violations: list[tuple[int, int, str]] = field(default_factory=list)

    @property
    def n_actions(self) -> int:
        return sum(g.n_actions for g in self.graphs)

    @property
    def n_states(self) -> int:
        # +1 per graph for the absorbing destination
        return sum(g.n_states + 1 for g in self.graphs)

    @property
    def action_offsets(self) -> np.ndarray:
        return np.cumsum([0] + [g.n_actions for g in self.graphs])

    @property
    def destinations(self) -> list[int]:
        return [g.dest for g in self.graphs]

    def od_index(self, o: int, d: int) -> int:
        return self.ods.index((o, d))

    def time_link_index(self, key: tuple) -> int:
        for k, tl in enumerate(self.time_links):
            if tl.key == key:
                return k
        raise KeyError(key)

    def serialize(self) -> str:
        """Canonical text form; identical inputs give identical text."""
        out = [f"time_links {len(self.time_links)}"]
        out += [f"T {k} {tl.key} {tl.kind} {tl.t0:.12g} {tl.capacity:.12g}" for k, tl in enumerate(self.time_links)]
        for g in self.graphs:
            out.append(f"dest {g.dest} states {g.n_states} actions {g.n_actions}")
            out += [f"S {i} {s}" for i, s in enumerate(g.states)]
            for a in range(g.n_actions):
                out.append(f"A {g.tail[a]} {g.head[a]} {g.kind[a]} {g.subnet[a]} {g.operator[a]} "
                           f"{g.time_link[a]} {g.od[a]} {g.road[a]} {g.pt_seg[a]}")
        return "\n".join(out) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()

    def summary(self) -> dict:
        kinds = np.concatenate([g.kind for g in self.graphs]) if self.graphs else np.zeros(0, int)
        return {
            "destinations": len(self.graphs),
            "od_pairs": len(self.ods),
            "states": self.n_states,
            "actions": self.n_actions,
            "time_links": len(self.time_links),
            "congestible_links": sum(tl.congestible for tl in self.time_links),
            "capacitated_links": sum(not tl.congestible for tl in self.time_links),
            "actions_by_kind": {k.name: int(np.sum(kinds == k)) for k in LinkKind},
        }


# --------------------------------------------------------------------------
# Construction
# --------------------------------------------------------------------------

class _GraphBuilder:
    def __init__(self, dest: int):
        self.dest = dest
        self.states: list[tuple] = []
        self.index: dict[tuple, int] = {}
        self.actions: list[tuple] = []

    def state(self, label: tuple) -> int:
        # every copy of the destination node collapses onto the absorbing state
        if label[-1] == self.dest and label[0] in ("drive", "mod", "pt"):
            return -1
        if label not in self.index:
            self.index[label] = len(self.states)
            self.states.append(label)
        return self.index[label]

    def add(self, tail: int, head: int, kind, subnet, operator=-1, time_link=-1, od=-1,
            road=-1, pt_seg=-1, vot_od=-1, group_od=-1):
        if tail < 0:
            return
        self.actions.append((tail, head, int(kind), int(subnet), operator, time_link, od,
                             road, pt_seg, vot_od, group_od))


def build_multimodal(base: PhysicalNetwork, demand: DemandProfile,
                     cfg: ExpansionConfig | None = None) -> MultiModalNetwork:
    """Expand ``base`` into per-destination MDP graphs for ``demand``.

    Raises :class:`NetworkError` when an input is malformed or, with
    ``cfg.strict``, when some OD cannot reach its destination through one of
    the modes that the configuration makes available.
    """
    cfg = cfg or ExpansionConfig()
    base.validate()
    demand.validate()
    if cfg.mod_access_scope not in ("node", "network"):
        raise NetworkError(f"unknown mod_access_scope {cfg.mod_access_scope!r}")
    if cfg.duplication not in ("group", "od"):
        raise NetworkError(f"unknown duplication {cfg.duplication!r}")
    nodes = set(base.nodes)
    for o, d, _ in demand.positive():
        if o not in nodes or d not in nodes:
            raise NetworkError(f"OD ({o},{d}) references an undeclared node")

    lines = tuple(base.pt_lines)
    operators = tuple(cfg.mod_operators) + tuple(sorted({l.operator for l in lines} - set(cfg.mod_operators)))
    operator_kind = {m: "MoD" for m in cfg.mod_operators}
    operator_kind.update({l.operator: "PT" for l in lines})
    op_index = {m: k for k, m in enumerate(operators)}

    # time-link registry, in a fixed canonical order
    time_links: list[TimeLink] = []
    tl_index: dict[tuple, int] = {}

    def reg(tl: TimeLink) -> int:
        tl_index[tl.key] = len(time_links)
        time_links.append(tl)
        return tl_index[tl.key]

    for a in base.road_links:
        reg(TimeLink(("road", a.tail, a.head), "road", True, a.t0, a.capacity, a.length))
    for m in cfg.mod_operators:
        if cfg.mod_access_scope == "network":
            reg(TimeLink(("mod_access", m), "mod_access", True, cfg.mod_access_time,
                         cfg.mod_access_capacity, 0.0, m))
        else:
            for i in base.nodes:
                reg(TimeLink(("mod_access", m, i), "mod_access", True, cfg.mod_access_time,
                             cfg.mod_access_capacity, 0.0, m))
    pt_segments: list[tuple[str, int, int]] = []
    for line in lines:
        for (i, j), t, cap in zip(line.segments, line.times, line.capacities):
            reg(TimeLink(("pt_ride", line.name, i, j), "pt_ride", False, t, cap, 0.0, line.operator))
            pt_segments.append((line.name, i, j))
    for line in lines:
        for i in line.stops[:-1]:
            reg(TimeLink(("pt_board", line.name, i), "pt_board", False, cfg.pt_access_time,
                         cfg.pt_access_capacity, 0.0, line.operator))

    road_idx = {(a.tail, a.head): k for k, a in enumerate(base.road_links)}
    seg_idx = {s: k for k, s in enumerate(pt_segments)}
    lines_at: dict[int, list[PtLine]] = defaultdict(list)   # lines boardable at a node
    stops_at: dict[int, list[PtLine]] = defaultdict(list)   # lines calling at a node
    for line in lines:
        for i in line.stops[:-1]:
            lines_at[i].append(line)
        for i in line.stops:
            stops_at[i].append(line)

    def mod_access_tl(m: str, i: int) -> int:
        key = ("mod_access", m) if cfg.mod_access_scope == "network" else ("mod_access", m, i)
        return tl_index[key]

    positive = demand.positive()
    ods = [(o, d) for o, d, _ in positive]
    od_demand = np.array([q for _, _, q in positive], dtype=float)
    od_of = {od: k for k, od in enumerate(ods)}
    dests = sorted({d for _, d in ods})

    subnets = []
    if cfg.include_maas:
        subnets.append(Subnet.MAAS)
    if cfg.include_nonmaas:
        subnets.append(Subnet.NONMAAS)
    if cfg.include_driving:
        subnets.append(Subnet.DRIVE)
    if not subnets:
        raise NetworkError("no travel mode enabled")

    graphs: list[DestinationGraph] = []
    violations: list[tuple[int, int, str]] = []
    for d in dests:
        origins = sorted(o for o, dd in ods if dd == d)
        if cfg.duplication == "od":
            group_of = {o: (o,) for o in origins}
        else:
            fn = cfg.od_group or (lambda o, d: 0)
            group_of = {o: fn(o, d) for o in origins}
        groups = sorted(set(group_of.values()), key=repr)
        # representative OD per group (its value of time drives the copy)
        rep = {g: od_of[(min(o for o in origins if group_of[o] == g), d)] for g in groups}

        b = _GraphBuilder(d)
        for o in origins:
            b.state(("origin", o))
        for o in origins:
            for sn in subnets:
                b.state(("odmode", o, MODE_NAMES[sn]))

        for g in groups:
            gk = rep[g]
            # ---- driving copy
            if Subnet.DRIVE in subnets:
                for a in base.road_links:
                    t, h = b.state(("drive", g, a.tail)), b.state(("drive", g, a.head))
                    b.add(t, h, LinkKind.ROAD, Subnet.DRIVE, time_link=tl_index[("road", a.tail, a.head)],
                          road=road_idx[(a.tail, a.head)], group_od=gk)
            for sn in (Subnet.MAAS, Subnet.NONMAAS):
                if sn not in subnets:
                    continue
                tag = MODE_NAMES[sn]
                for m in cfg.mod_operators:
                    for a in base.road_links:
                        t, h = b.state(("mod", tag, g, m, a.tail)), b.state(("mod", tag, g, m, a.head))
                        b.add(t, h, LinkKind.ROAD, sn, op_index[m], tl_index[("road", a.tail, a.head)],
                              road=road_idx[(a.tail, a.head)], group_od=gk)
                for line in lines:
                    for (i, j) in line.segments:
                        t, h = b.state(("pt", tag, g, line.name, i)), b.state(("pt", tag, g, line.name, j))
                        b.add(t, h, LinkKind.PT_RIDE, sn, op_index[line.operator],
                              tl_index[("pt_ride", line.name, i, j)], pt_seg=seg_idx[(line.name, i, j)],
                              group_od=gk)
                # transfers inside the subnetwork (never at the destination)
                for i in sorted(stops_at):
                    if i == d:
                        continue
                    for line in stops_at[i]:
                        ps = b.state(("pt", tag, g, line.name, i))
                        if cfg.mod_pt_transfers:
                            for m in cfg.mod_operators:
                                b.add(ps, b.state(("mod", tag, g, m, i)), LinkKind.TRANSFER, sn,
                                      op_index[m], mod_access_tl(m, i), group_od=gk)
                        if i in cfg.pt_transfer_nodes:
                            for l2 in lines_at.get(i, []):
                                if l2.name != line.name:
                                    b.add(ps, b.state(("pt", tag, g, l2.name, i)), LinkKind.TRANSFER, sn,
                                          op_index[l2.operator], tl_index[("pt_board", l2.name, i)],
                                          group_od=gk)
                    if cfg.mod_pt_transfers:
                        for m in cfg.mod_operators:
                            ms = b.state(("mod", tag, g, m, i))
                            for l2 in lines_at.get(i, []):
                                b.add(ms, b.state(("pt", tag, g, l2.name, i)), LinkKind.TRANSFER, sn,
                                      op_index[l2.operator], tl_index[("pt_board", l2.name, i)],
                                      group_od=gk)

        # ---- origins, dummy links and access links
        for o in origins:
            k = od_of[(o, d)]
            gk = rep[group_of[o]]
            g = group_of[o]
            os_ = b.state(("origin", o))
            for sn in subnets:
                tag = MODE_NAMES[sn]
                om = b.state(("odmode", o, tag))
                b.add(os_, om, LinkKind.MODE_CHOICE, Subnet.DUMMY, od=k, vot_od=k, group_od=gk)
                if sn == Subnet.DRIVE:
                    b.add(om, b.state(("drive", g, o)), LinkKind.DRIVE_ACCESS, sn, od=k, vot_od=k, group_od=gk)
                    continue
                for m in cfg.mod_operators:
                    b.add(om, b.state(("mod", tag, g, m, o)), LinkKind.MOD_ACCESS, sn, op_index[m],
                          mod_access_tl(m, o), od=k, vot_od=k, group_od=gk)
                for line in lines_at.get(o, []):
                    b.add(om, b.state(("pt", tag, g, line.name, o)), LinkKind.PT_ACCESS, sn,
                          op_index[line.operator], tl_index[("pt_board", line.name, o)], od=k,
                          vot_od=k, group_od=gk)

        graph, bad = _finalize(b, origins, subnets, demand_of={o: od_demand[od_of[(o, d)]] for o in origins},
                               prune=cfg.prune)
        violations += bad
        graphs.append(graph)

    net = MultiModalNetwork(base, demand, cfg, lines, operators, operator_kind, time_links,
                            pt_segments, ods, od_demand, graphs, violations)
    if cfg.strict and violations:
        o, d, mode = violations[0]
        raise NetworkError(f"destination {d} unreachable from origin {o} via mode {mode}"
                           + (f" (+{len(violations) - 1} more)" if len(violations) > 1 else ""))
    return net


def _finalize(b: _GraphBuilder, origins, subnets, demand_of, prune: bool):
    n = len(b.states)
    acts = b.actions
    DEST = n
    heads = [DEST if a[1] < 0 else a[1] for a in acts]
    # backward reachability to the destination
    rev = defaultdict(list)
    fwd = defaultdict(list)
    for a, h in zip(acts, heads):
        rev[h].append(a[0])
        fwd[a[0]].append(h)
    reach = set()
    dq = deque([DEST])
    while dq:
        s = dq.popleft()
        for t in rev[s]:
            if t not in reach:
                reach.add(t)
                dq.append(t)
    violations = []
    for o in origins:
        for sn in subnets:
            if b.index[("odmode", o, MODE_NAMES[sn])] not in reach:
                violations.append((o, b.dest, MODE_NAMES[sn]))
    if prune:
        seen = set()
        dq = deque(b.index[("origin", o)] for o in origins if demand_of[o] > 0)
        seen.update(dq)
        while dq:
            s = dq.popleft()
            for h in fwd[s]:
                if h != DEST and h not in seen and h in reach:
                    seen.add(h)
                    dq.append(h)
        keep = sorted(s for s in seen if s in reach)
    else:
        keep = list(range(n))
    remap = {s: k for k, s in enumerate(keep)}
    remap[DEST] = len(keep)
    rows = [(remap[a[0]], remap[h]) + a[2:] for a, h in zip(acts, heads) if a[0] in remap and h in remap]
    rows.sort(key=lambda r: r[0])  # stable: keeps creation order within a state
    arr = np.array(rows, dtype=np.int64).reshape(-1, 11)
    states = [b.states[s] for s in keep]
    q = np.zeros(len(keep))
    origin_state = {}
    odmode_state = {}
    for o in origins:
        s = b.index[("origin", o)]
        if s in remap and remap[s] < len(keep):
            q[remap[s]] = demand_of[o]
            origin_state[o] = remap[s]
        for sn in subnets:
            s = b.index[("odmode", o, MODE_NAMES[sn])]
            if s in remap and remap[s] < len(keep):
                odmode_state[(o, int(sn))] = remap[s]
    graph = DestinationGraph(
        dest=b.dest, states=states, tail=arr[:, 0].copy(), head=arr[:, 1].copy(), kind=arr[:, 2].copy(),
        subnet=arr[:, 3].copy(), operator=arr[:, 4].copy(), time_link=arr[:, 5].copy(), od=arr[:, 6].copy(),
        road=arr[:, 7].copy(), pt_seg=arr[:, 8].copy(), vot_od=arr[:, 9].copy(), group_od=arr[:, 10].copy(),
        q=q, origin_state=origin_state, odmode_state=odmode_state)
    if prune:
        missing = set(range(graph.n_states)) - set(graph.tail.tolist())
        if missing:
            raise NetworkError(f"destination {b.dest}: states without actions after pruning")
    return graph, violations


# --------------------------------------------------------------------------
# Incidence structures and diagnostics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IncidenceMaps:
    action_state: sp.csr_matrix     # Lambda: actions x states (tail)
    aggregation: sp.csr_matrix      # delta: actions x time links
    transition: sp.csr_matrix       # P: actions x states (head, destination included)


def incidence_maps(net: MultiModalNetwork) -> IncidenceMaps:
    """Global action-state, action-time-link and transition incidences.

    States are numbered graph by graph with each graph's destination as the
    last state of its block.
    """
    rows_l, cols_l, rows_d, cols_d, cols_p = [], [], [], [], []
    a0 = s0 = 0
    for g in net.graphs:
        idx = np.arange(g.n_actions) + a0
        rows_l.append(idx)
        cols_l.append(g.tail + s0)
        cols_p.append(g.head + s0)
        m = g.time_link >= 0
        rows_d.append(idx[m])
        cols_d.append(g.time_link[m])
        a0 += g.n_actions
        s0 += g.n_states + 1
    na, ns = a0, s0
    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64)
    ones = lambda k: np.ones(len(k))
    L = sp.csr_matrix((ones(cat(rows_l)), (cat(rows_l), cat(cols_l))), shape=(na, ns))
    D = sp.csr_matrix((ones(cat(rows_d)), (cat(rows_d), cat(cols_d))), shape=(na, len(net.time_links)))
    P = sp.csr_matrix((ones(cat(rows_l)), (cat(rows_l), cat(cols_p))), shape=(na, ns))
    return IncidenceMaps(L, D, P)


def validate(net: MultiModalNetwork, demand: DemandProfile | None = None) -> list[str]:
    """Structured violation list (empty when the network is usable)."""
    problems = [f"unreachable: origin {o} -> destination {d} via {mode}" for o, d, mode in net.violations]
    demand = demand or net.demand
    for o, d, q in demand.positive():
        if (o, d) not in net.ods:
            problems.append(f"missing OD ({o},{d}) in the expanded network")
    for g in net.graphs:
        for o in {o for o, d in net.ods if d == g.dest}:
            if o not in g.origin_state:
                problems.append(f"origin {o} pruned from destination {g.dest}")
        # disjointness: no action joins states of different mode subnetworks
        sub_of = [_state_subnet(s) for s in g.states] + [None]
        for a in range(g.n_actions):
            st, sh = sub_of[g.tail[a]], sub_of[g.head[a]]
            if g.kind[a] == LinkKind.MODE_CHOICE:
                continue
            if sh is not None and st != sh:
                problems.append(f"destination {g.dest}: action {a} crosses {st} -> {sh}")
    return problems


def _state_subnet(label: tuple):
    kind = label[0]
    if kind == "origin":
        return "origin"
    if kind == "odmode":
        return label[2]
    if kind == "drive":
        return "Driving"
    return label[1]

"""Time-series snapshot network: per-interval weighted layers joined by
self-connections between copies of the same vertex in successive layers."""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass
from enum import Enum
from typing import IO, NamedTuple

import numpy as np

from .ingest import Role, TemporalEdgeList

SECONDS_PER_DAY = 86_400
MONTH_SECONDS = 30 * SECONDS_PER_DAY


class EdgeKind(str, Enum):
    INTRA = "intra"
    SELF = "self"


class TssnVertex(NamedTuple):
    base: int
    snap: int


@dataclass(frozen=True)
class TssnEdge:
    src: TssnVertex
    dst: TssnVertex
    weight: float
    kind: EdgeKind

    @property
    def time_accessibility(self) -> int:
        return self.dst.snap - self.src.snap


@dataclass(frozen=True)
class TssnBuildConfig:
    """Exactly one of ``epsilon`` (seconds), ``events_per_snapshot`` or
    ``calendar_months`` selects the bucketing rule."""

    epsilon: float | None = MONTH_SECONDS
    events_per_snapshot: int | None = None
    calendar_months: bool = False
    origin: int | None = None
    self_weight: float = 1.0

    def __post_init__(self):
        modes = [self.epsilon is not None, self.events_per_snapshot is not None, self.calendar_months]
        if sum(modes) != 1:
            raise ValueError("set exactly one of epsilon, events_per_snapshot, calendar_months")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.events_per_snapshot is not None and self.events_per_snapshot < 1:
            raise ValueError("events_per_snapshot must be >= 1")
        if self.self_weight <= 0:
            raise ValueError("self_weight must be positive")

    @classmethod
    def by_count(cls, events_per_snapshot: int, **kw) -> "TssnBuildConfig":
        return cls(epsilon=None, events_per_snapshot=events_per_snapshot, **kw)

    @classmethod
    def by_calendar_month(cls, **kw) -> "TssnBuildConfig":
        return cls(epsilon=None, calendar_months=True, **kw)


def _month_index(ts: int) -> int:
    d = _dt.datetime.fromtimestamp(ts, tz=_dt.timezone.utc)
    return d.year * 12 + d.month - 1


def bucket_events(edges: TemporalEdgeList, cfg: TssnBuildConfig) -> list[int]:
    """Snapshot index of every event, in edge-list order."""
    if cfg.events_per_snapshot is not None:
        return [i // cfg.events_per_snapshot for i in range(len(edges))]
    origin = edges.timestamps[0] if cfg.origin is None else cfg.origin
    if cfg.calendar_months:
        m0 = _month_index(origin)
        out = [_month_index(t) - m0 for t in edges.timestamps]
    else:
        out = [int((t - origin) // cfg.epsilon) for t in edges.timestamps]
    if out and min(out) < 0:
        raise ValueError("origin lies after the first event")
    return out


class TssnGraph:
    """Immutable layered graph.

    States ``(base, snap)`` are numbered snapshot-major, then by base id.
    Accessible edges of each state are kept in CSR arrays: ``acc_ptr``,
    ``acc_dst`` (state ids), ``acc_weight`` and ``acc_self`` (True for the
    self-connection, which is always stored last).
    """

    def __init__(self, layers: list[dict[int, dict[int, float]]], roles: dict[int, Role],
                 self_weight: float = 1.0):
        self.layers = layers
        self.roles = dict(roles)
        self.self_weight = self_weight

        states = [TssnVertex(b, t) for t, layer in enumerate(layers) for b in sorted(layer)]
        self.states: list[TssnVertex] = states
        self.state_index: dict[TssnVertex, int] = {s: i for i, s in enumerate(states)}

        self.self_connections: list[TssnEdge] = [
            TssnEdge(TssnVertex(b, t), TssnVertex(b, t + 1), self_weight, EdgeKind.SELF)
            for t in range(len(layers) - 1)
            for b in sorted(layers[t])
            if b in layers[t + 1]
        ]

        ptr = [0]
        dst, wts, is_self = [], [], []
        for s in states:
            for nb, w in sorted(layers[s.snap][s.base].items()):
                dst.append(self.state_index[TssnVertex(nb, s.snap)])
                wts.append(w)
                is_self.append(False)
            nxt = TssnVertex(s.base, s.snap + 1)
            if nxt in self.state_index:
                dst.append(self.state_index[nxt])
                wts.append(self_weight)
                is_self.append(True)
            ptr.append(len(dst))
        self.acc_ptr = np.asarray(ptr, dtype=np.int64)
        self.acc_dst = np.asarray(dst, dtype=np.int64)
        self.acc_weight = np.asarray(wts, dtype=np.float64)
        self.acc_self = np.asarray(is_self, dtype=bool)
        self.state_role = [self.roles[s.base] for s in states]

        # undirected neighbourhood over all stored edges, for hop distances
        nbrs: list[set[int]] = [set() for _ in states]
        for i in range(len(states)):
            for j in self.acc_dst[ptr[i]:ptr[i + 1]]:
                nbrs[i].add(int(j))
                nbrs[int(j)].add(i)
        self.neighbors = [frozenset(n) for n in nbrs]

    @property
    def n_snapshots(self) -> int:
        return len(self.layers)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def role(self, v: TssnVertex) -> Role:
        return self.roles[v.base]

    def accessible_ids(self, state: int) -> slice:
        return slice(self.acc_ptr[state], self.acc_ptr[state + 1])

    def edge_at(self, state: int, k: int) -> TssnEdge:
        """The ``k``-th accessible edge of ``state`` as a :class:`TssnEdge`."""
        i = self.acc_ptr[state] + k
        kind = EdgeKind.SELF if self.acc_self[i] else EdgeKind.INTRA
        return TssnEdge(self.states[state], self.states[self.acc_dst[i]],
                        float(self.acc_weight[i]), kind)

    def intra_edges(self):
        """Each undirected intra-snapshot edge once, with ``src.base < dst.base``."""
        for t, layer in enumerate(self.layers):
            for u in sorted(layer):
                for v, w in sorted(layer[u].items()):
                    if u < v:
                        yield TssnEdge(TssnVertex(u, t), TssnVertex(v, t), w, EdgeKind.INTRA)

    def bases(self) -> list[int]:
        return sorted({s.base for s in self.states})


def build_tssn(edges: TemporalEdgeList, roles: dict[int, Role], cfg: TssnBuildConfig | None = None) -> TssnGraph:
    cfg = cfg or TssnBuildConfig()
    if len(edges) == 0:
        raise ValueError("cannot build a snapshot network from zero events")
    snaps = bucket_events(edges, cfg)
    layers: list[dict[int, dict[int, float]]] = [{} for _ in range(max(snaps) + 1)]
    for (u, v, _), t in zip(edges, snaps):
        layer = layers[t]
        layer.setdefault(u, {})
        layer.setdefault(v, {})
        layer[u][v] = layer[u].get(v, 0.0) + 1.0
        layer[v][u] = layer[v].get(u, 0.0) + 1.0
    return TssnGraph(layers, roles, cfg.self_weight)


def accessible_edges(g: TssnGraph, v: TssnVertex) -> list[TssnEdge]:
    """Edges leaving ``v`` with non-negative time accessibility.

    Raises KeyError for a state not present in ``g``.
    """
    state = g.state_index[TssnVertex(*v)]
    n = g.acc_ptr[state + 1] - g.acc_ptr[state]
    return [g.edge_at(state, k) for k in range(n)]


@dataclass(frozen=True)
class SnapshotSummary:
    snapshot: int
    n_vertices: int
    n_edges: int
    total_weight: float


def snapshot_stats(g: TssnGraph) -> list[SnapshotSummary]:
    out = []
    for t, layer in enumerate(g.layers):
        n_edges = sum(len(nb) for nb in layer.values()) // 2
        weight = sum(sum(nb.values()) for nb in layer.values()) / 2
        out.append(SnapshotSummary(t, len(layer), n_edges, weight))
    return out


def dump_graph(g: TssnGraph, sink: IO[str]) -> None:
    """One line per stored edge: ``src_base src_snap dst_base dst_snap weight kind``."""
    for e in list(g.intra_edges()) + g.self_connections:
        sink.write(f"{e.src.base} {e.src.snap} {e.dst.base} {e.dst.snap} {e.weight:g} {e.kind.value}\n")

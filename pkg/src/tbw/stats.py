"""Descriptive role statistics and a synthetic role-labeled temporal network."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, Mapping

import numpy as np
from scipy import stats as _st

from .ingest import RawEvent, Role, TemporalEdgeList, clean_and_index
from .tssn import MONTH_SECONDS


@dataclass(frozen=True)
class WelchResult:
    mean_user: float
    mean_developer: float
    t: float
    df: float
    p: float


@dataclass(frozen=True)
class RoleActivitySummary:
    received: WelchResult
    sent: WelchResult

    def table(self) -> str:
        """Rows in the layout: measure, user mean, developer mean, t, significance."""
        lines = ["measure\tuser\tdeveloper\tt\tsignificance"]
        for name, r in (("emails_received", self.received), ("emails_sent", self.sent)):
            sig = "p<0.001" if r.p < 0.001 else f"p={r.p:.4f}"
            lines.append(f"{name}\t{r.mean_user:.4f}\t{r.mean_developer:.4f}\t{r.t:.4f}\t{sig}")
        return "\n".join(lines) + "\n"


def welch_ttest(a, b) -> WelchResult:
    """Unequal-variance t-test of ``mean(a) - mean(b)``, two-sided p-value."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least two individuals")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    se2 = va + vb
    diff = a.mean() - b.mean()
    if se2 == 0:
        t = 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return WelchResult(a.mean(), b.mean(), t, math.nan, 1.0 if diff == 0 else 0.0)
    t = diff / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    p = float(2 * _st.t.sf(abs(t), df))
    return WelchResult(float(a.mean()), float(b.mean()), float(t), float(df), p)


def _role_counts(edges: TemporalEdgeList, roles: Mapping[int, Role]):
    sent = np.zeros(edges.n_vertices)
    recv = np.zeros(edges.n_vertices)
    np.add.at(sent, np.asarray(edges.src, dtype=np.int64), 1)
    np.add.at(recv, np.asarray(edges.dst, dtype=np.int64), 1)
    is_user = np.array([roles[v] is Role.USER for v in range(edges.n_vertices)])
    return sent, recv, is_user


def role_ttest(edges: TemporalEdgeList, roles: Mapping[int, Role]) -> RoleActivitySummary:
    sent, recv, is_user = _role_counts(edges, roles)
    return RoleActivitySummary(
        received=welch_ttest(recv[is_user], recv[~is_user]),
        sent=welch_ttest(sent[is_user], sent[~is_user]),
    )


@dataclass(frozen=True)
class TendencyReport:
    cross_real: float
    cross_expected: float
    same_real: float
    same_expected: float

    @property
    def cross_ratio(self) -> float | None:
        return self.cross_real / self.cross_expected if self.cross_expected > 0 else None

    @property
    def same_ratio(self) -> float | None:
        return self.same_real / self.same_expected if self.same_expected > 0 else None


def tendency_ratio(edges: TemporalEdgeList, roles: Mapping[int, Role]) -> TendencyReport:
    """Event-weighted share of cross-role contact against uniform random mixing.

    Ratios above one mean the contact type is over-represented.
    """
    if len(edges) == 0:
        raise ValueError("no events")
    present = set(edges.src) | set(edges.dst)
    p_user = sum(roles[v] is Role.USER for v in present) / len(present)
    p_dev = 1.0 - p_user
    cross = sum(roles[u] is not roles[v] for u, v, _ in edges) / len(edges)
    return TendencyReport(cross, 2 * p_user * p_dev, 1.0 - cross, p_user ** 2 + p_dev ** 2)


@dataclass(frozen=True)
class SyntheticSpec:
    """Snapshot-structured random interaction stream.

    Individuals carry a role, a latent community and a heavy-tailed activity
    weight (``activity_skew`` is the Pareto tail index; larger = flatter),
    multiplied by ``developer_activity`` for developers.
    An event is cross-role with probability ``cross_role_affinity``; its
    endpoints share a community with probability ``community_strength``;
    at every snapshot after the first each individual moves to a uniformly
    drawn community with probability ``community_drift``;
    with probability ``repeat_prob`` it re-uses a pair already active in the
    previous snapshot. Every snapshot receives ``events_per_snapshot`` events
    (activity spread uniformly over time) unless ``snapshot_activity``
    rescales them.
    """

    n_users: int = 120
    n_developers: int = 80
    snapshots: int = 3
    events_per_snapshot: int = 600
    cross_role_affinity: float = 0.5
    activity_skew: float = 1.5
    developer_activity: float = 1.0
    n_communities: int = 2
    community_strength: float = 0.9
    community_drift: float = 0.0
    repeat_prob: float = 0.3
    epsilon: int = MONTH_SECONDS
    start: int = 1_500_000_000
    snapshot_activity: tuple[float, ...] | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.n_users, self.n_developers, self.snapshots, self.events_per_snapshot) < 1:
            raise ValueError("counts must be positive")
        if not 0 <= self.cross_role_affinity <= 1:
            raise ValueError("cross_role_affinity must lie in [0, 1]")
        if self.snapshot_activity is not None and len(self.snapshot_activity) != self.snapshots:
            raise ValueError("snapshot_activity needs one factor per snapshot")


@dataclass
class SyntheticNetwork:
    edges: TemporalEdgeList
    roles: dict[int, Role]
    community: dict[int, int]
    activity: dict[int, float]
    community_history: list[dict[int, int]] = field(default_factory=list)


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator | None = None) -> SyntheticNetwork:
    rng = rng or np.random.default_rng(spec.rng_seed)
    n = spec.n_users + spec.n_developers
    is_user = np.arange(n) < spec.n_users
    community = rng.integers(spec.n_communities, size=n)
    activity = rng.pareto(spec.activity_skew, size=n) + 1.0
    activity[~is_user] *= spec.developer_activity

    def make_pools():
        pools = {}
        for role in (True, False):
            for c in range(spec.n_communities):
                pools[role, c] = np.flatnonzero((is_user == role) & (community == c))
            pools[role, None] = np.flatnonzero(is_user == role)
        return pools

    def draw(role: bool, comm, exclude=-1) -> int:
        idx = pools[role, comm]
        if comm is not None and len(idx) < 2:
            idx = pools[role, None]
        w = activity[idx].copy()
        if exclude >= 0:
            w[idx == exclude] = 0.0
        return int(idx[rng.choice(len(idx), p=w / w.sum())])

    p_user_side = spec.n_users / n
    events = []
    prev_pairs: list[tuple[int, int]] = []
    history = []
    for t in range(spec.snapshots):
        if t > 0 and spec.community_drift > 0:
            moved = rng.random(n) < spec.community_drift
            community = np.where(moved, rng.integers(spec.n_communities, size=n), community)
        history.append(community.copy())
        pools = make_pools()
        scale = 1.0 if spec.snapshot_activity is None else spec.snapshot_activity[t]
        n_events = int(round(spec.events_per_snapshot * scale))
        pairs = []
        for _ in range(n_events):
            if prev_pairs and rng.random() < spec.repeat_prob:
                u, v = prev_pairs[rng.integers(len(prev_pairs))]
            else:
                u = draw(bool(rng.random() < p_user_side), None)
                comm = int(community[u]) if rng.random() < spec.community_strength else None
                if rng.random() < spec.cross_role_affinity:
                    v = draw(not is_user[u], comm)
                else:
                    v = draw(bool(is_user[u]), comm, exclude=u)
            if rng.random() < 0.5:
                u, v = v, u
            pairs.append((u, v))
        times = np.sort(rng.integers(0, spec.epsilon, size=n_events)) + spec.start + t * spec.epsilon
        events.extend(RawEvent(f"p{u}", f"p{v}", int(ts)) for (u, v), ts in zip(pairs, times))
        prev_pairs = pairs or prev_pairs

    key_roles = {f"p{i}": (Role.USER if is_user[i] else Role.DEVELOPER) for i in range(n)}
    edges, roles = clean_and_index(events, key_roles)
    comm = {edges.index[k]: int(community[int(k[1:])]) for k in edges.keys}
    act = {edges.index[k]: float(activity[int(k[1:])]) for k in edges.keys}
    hist = [{edges.index[k]: int(c[int(k[1:])]) for k in edges.keys} for c in history]
    return SyntheticNetwork(edges, roles, comm, act, hist)


def write_tendency(report: TendencyReport, sink: IO[str]) -> None:
    sink.write("contact\treal\texpected\tratio\n")
    for name, real, exp, ratio in (("cross", report.cross_real, report.cross_expected, report.cross_ratio),
                                   ("same", report.same_real, report.same_expected, report.same_ratio)):
        sink.write(f"{name}\t{real:.6f}\t{exp:.6f}\t{'' if ratio is None else f'{ratio:.6f}'}\n")

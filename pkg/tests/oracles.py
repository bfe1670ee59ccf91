"""Reference computations written independently of the package internals."""

import itertools

import networkx as nx
import numpy as np

from tbw.ingest import Role


def random_layered_events(rng, max_vertices=8, max_snapshots=3, max_events=14):
    """(u, v, snap) triples plus roles for a small random layered graph."""
    n = int(rng.integers(2, max_vertices + 1))
    T = int(rng.integers(1, max_snapshots + 1))
    m = int(rng.integers(1, max_events + 1))
    events = []
    for _ in range(m):
        u, v = rng.choice(n, 2, replace=False)
        events.append((int(u), int(v), int(rng.integers(T))))
    roles = {i: Role.USER if rng.random() < 0.5 else Role.DEVELOPER for i in range(n)}
    return events, roles


class LayeredOracle:
    """Snapshot graph rebuilt from (u, v, snap) triples with networkx."""

    def __init__(self, events, roles, self_weight=1.0):
        self.roles = roles
        self.w = {}
        for u, v, t in events:
            key = (t, min(u, v), max(u, v))
            self.w[key] = self.w.get(key, 0) + 1
        self.present = {(u, t) for u, v, t in events} | {(v, t) for u, v, t in events}
        self.self_weight = self_weight
        self.G = nx.Graph()
        self.G.add_nodes_from(self.present)
        for (t, u, v) in self.w:
            self.G.add_edge((u, t), (v, t))
        for (b, t) in self.present:
            if (b, t + 1) in self.present:
                self.G.add_edge((b, t), (b, t + 1))

    def candidates(self, cur):
        """[(dst state, weight, is_self)] leaving ``cur``."""
        b, t = cur
        out = []
        for (s, u, v), w in self.w.items():
            if s == t and b in (u, v):
                out.append(((v if u == b else u, t), float(w), False))
        if (b, t + 1) in self.present:
            out.append(((b, t + 1), self.self_weight, True))
        return out

    def distance(self, a, x):
        return min(nx.shortest_path_length(self.G, a, x), 2)

    def joint(self, cur, prev, r, q, alpha, beta, biased, reference="previous"):
        """{(dst, is_self): probability} by normalizing each factor, multiplying, renormalizing."""
        cands = self.candidates(cur)
        if not cands:
            return {}
        ref = cur if prev is None or reference == "current" else prev
        psi_t = np.array([alpha if s else 1 - alpha for _, _, s in cands])
        if biased:
            psi_r = np.array([beta if self.roles[x[0]] == self.roles[ref[0]] else 1 - beta for x, _, _ in cands])
        else:
            psi_r = np.ones(len(cands))
        W = np.array([w for _, w, _ in cands])
        if prev is None:
            p = W * psi_t * psi_r
        else:
            psi_s = np.array([(1 / r, 1.0, 1 / q)[self.distance(prev, x)] for x, _, _ in cands])
            P_S = psi_s * W / (psi_s * W).sum()
            P_T = psi_t / psi_t.sum()
            P_R = psi_r / psi_r.sum()
            p = P_S * P_T * P_R
        p = p / p.sum()
        return {(x, s): float(pi) for (x, _, s), pi in zip(cands, p)}

    def contexts(self):
        """Every (prev, cur) pair a walk can be in, plus first steps (None, cur)."""
        for cur in sorted(self.present):
            yield None, cur
            for x, _, _ in self.candidates(cur):
                yield cur, x


def mann_whitney_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for a, b in itertools.product(pos, neg):
        total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def welch_direct(a, b):
    """Textbook Welch statistic with explicit loops."""
    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    va = sum((x - ma) ** 2 for x in a) / (na - 1)
    vb = sum((x - mb) ** 2 for x in b) / (nb - 1)
    return (ma - mb) / ((va / na + vb / nb) ** 0.5)


def build_from_layered(events, roles, self_weight=1.0):
    """Push (u, v, snap) triples through ingest + build; return graph and id maps."""
    from tbw.ingest import RawEvent, clean_and_index
    from tbw.tssn import MONTH_SECONDS, TssnBuildConfig, build_tssn

    raw = [RawEvent(f"n{u}", f"n{v}", t * MONTH_SECONDS + i) for i, (u, v, t) in enumerate(events)]
    edges, table = clean_and_index(raw, {f"n{k}": r for k, r in roles.items()})
    g = build_tssn(edges, table, TssnBuildConfig(origin=0, self_weight=self_weight))
    to_pkg = {int(k[1:]): i for k, i in edges.index.items()}
    to_oracle = {i: o for o, i in to_pkg.items()}
    return g, to_pkg, to_oracle

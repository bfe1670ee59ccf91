"""Temporal biased walks over a :class:`~tbw.tssn.TssnGraph`.

A step from the current state ``c`` (reached from ``t``) picks one of
``c``'s accessible edges with probability proportional to the product of
three separately normalised factors: structural (return/in-out bias times
edge weight), temporal (``alpha`` for the self-connection, ``1 - alpha``
for edges inside the snapshot) and role (``beta`` towards the reference
vertex's role, ``1 - beta`` away from it, or uniform).
"""

from __future__ import annotations

import logging
import random
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Hashable, NamedTuple, Sequence

import numpy as np

from .tssn import EdgeKind, TssnEdge, TssnGraph, TssnVertex

log = logging.getLogger(__name__)


class RoleMode(str, Enum):
    UNBIASED = "unbiased"
    BIASED = "biased"


class RoleReference(str, Enum):
    PREVIOUS = "previous"
    CURRENT = "current"


class TokenMode(str, Enum):
    BASE = "base"
    SNAPSHOT = "snapshot"


@dataclass(frozen=True)
class WalkConfig:
    r: float = 1.0
    q: float = 1.0
    alpha: float = 0.5
    beta: float = 0.5
    role_mode: RoleMode = RoleMode.BIASED
    walks_per_vertex: int = 10
    walk_length: int = 80
    rng_seed: int = 0
    token_mode: TokenMode = TokenMode.BASE
    cache_size: int = 200_000
    role_reference: RoleReference = RoleReference.PREVIOUS

    def __post_init__(self):
        if self.r <= 0 or self.q <= 0:
            raise ValueError("r and q must be positive")
        for name in ("alpha", "beta"):
            val = getattr(self, name)
            if not 0.1 <= val <= 0.9:
                raise ValueError(f"{name} must lie in [0.1, 0.9], got {val}")
        if self.walks_per_vertex < 1 or self.walk_length < 1:
            raise ValueError("walks_per_vertex and walk_length must be positive")
        object.__setattr__(self, "role_mode", RoleMode(self.role_mode))
        object.__setattr__(self, "token_mode", TokenMode(self.token_mode))
        object.__setattr__(self, "role_reference", RoleReference(self.role_reference))


class StepContext(NamedTuple):
    current: TssnVertex
    previous: TssnVertex | None = None


@dataclass
class Walk:
    tokens: list[Hashable]
    states: list[TssnVertex] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)


# --- transition factors -----------------------------------------------------

def hop_distance(g: TssnGraph, a: int, b: int) -> int:
    """0, 1 or 2 (meaning "two or more") between state ids ``a`` and ``b``."""
    if a == b:
        return 0
    return 1 if b in g.neighbors[a] else 2


def structural_factor(g: TssnGraph, ctx: StepContext, e: TssnEdge, cfg: WalkConfig) -> float:
    prev = g.state_index[ctx.previous]
    d = hop_distance(g, prev, g.state_index[e.dst])
    psi = (1.0 / cfg.r, 1.0, 1.0 / cfg.q)[d]
    return psi * e.weight


def temporal_factor(cfg: WalkConfig, e: TssnEdge) -> float:
    if e.time_accessibility < 0:
        raise ValueError("edge goes backwards in time")
    return cfg.alpha if e.time_accessibility > 0 else 1.0 - cfg.alpha


def role_factor(g: TssnGraph, ctx: StepContext, e: TssnEdge, cfg: WalkConfig) -> float:
    if cfg.role_mode is RoleMode.UNBIASED:
        return 1.0
    ref = ctx.previous
    if ref is None or cfg.role_reference is RoleReference.CURRENT:
        ref = ctx.current
    return cfg.beta if g.role(ref) == g.role(e.dst) else 1.0 - cfg.beta


def step_probabilities(g: TssnGraph, cfg: WalkConfig, prev: int, cur: int) -> list[float]:
    """Distribution over the accessible edges of state ``cur`` (CSR order).

    ``prev`` is the previous state id, or -1 on the first step, where the
    structural term is dropped and ``cur`` serves as the role reference.
    With ``role_reference="current"`` candidates are always compared with
    ``cur`` instead of ``prev``.

    Normalizing each factor before multiplying only rescales the product,
    and the final renormalization removes that scale, so the factors are
    multiplied unnormalized. A factor that is the same for every candidate
    is skipped altogether, which keeps the degenerate settings (one
    snapshot, uniform roles, beta=0.5) bit-identical to plain weighting.
    """
    lo, hi = int(g.acc_ptr[cur]), int(g.acc_ptr[cur + 1])
    n = hi - lo
    if n == 0:
        return []
    if n == 1:
        return [1.0]
    p = g.acc_weight[lo:hi].tolist()
    dsts = g.acc_dst[lo:hi].tolist()

    if prev >= 0 and (cfg.r != 1.0 or cfg.q != 1.0):
        near = g.neighbors[prev]
        inv_r, inv_q = 1.0 / cfg.r, 1.0 / cfg.q
        p = [w * (inv_r if x == prev else 1.0 if x in near else inv_q) for w, x in zip(p, dsts)]

    selfs = g.acc_self[lo:hi].tolist()
    if any(selfs) and not all(selfs):
        a, b = cfg.alpha, 1.0 - cfg.alpha
        p = [w * (a if s else b) for w, s in zip(p, selfs)]

    if cfg.role_mode is RoleMode.BIASED and cfg.beta != 0.5:
        use_prev = prev >= 0 and cfg.role_reference is RoleReference.PREVIOUS
        ref = g.state_role[prev if use_prev else cur]
        same = [g.state_role[x] == ref for x in dsts]
        if any(same) and not all(same):
            a, b = cfg.beta, 1.0 - cfg.beta
            p = [w * (a if m else b) for w, m in zip(p, same)]

    z = sum(p)
    return [x / z for x in p]


def joint_step_distribution(ctx: StepContext, cfg: WalkConfig, g: TssnGraph) -> tuple[list[TssnEdge], np.ndarray]:
    """Accessible edges of ``ctx.current`` and their selection probabilities.

    An empty edge list means the walk has to stop here.
    """
    cur = g.state_index[TssnVertex(*ctx.current)]
    prev = -1 if ctx.previous is None else g.state_index[TssnVertex(*ctx.previous)]
    probs = step_probabilities(g, cfg, prev, cur)
    edges = [g.edge_at(cur, k) for k in range(len(probs))]
    return edges, np.asarray(probs, dtype=np.float64)


# --- alias sampling ---------------------------------------------------------

class AliasTable(NamedTuple):
    prob: list[float]
    alias: list[int]


def build_alias_table(dist: Sequence[float], tol: float = 1e-9) -> AliasTable:
    """Vose's alias construction. ``dist`` must already sum to one."""
    n = len(dist)
    if n == 0:
        raise ValueError("empty distribution")
    total = float(sum(dist))
    if abs(total - 1.0) > tol or min(dist) < 0:
        raise ValueError(f"not a probability distribution (sum={total!r})")
    scaled = [p * n for p in dist]
    prob = [1.0] * n
    alias = list(range(n))
    small = [i for i, x in enumerate(scaled) if x < 1.0]
    large = [i for i, x in enumerate(scaled) if x >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] + scaled[s] - 1.0
        (small if scaled[l] < 1.0 else large).append(l)
    # leftovers are 1 up to rounding
    return AliasTable(prob, alias)


def alias_sample(table: AliasTable, rng) -> int:
    n = len(table.prob)
    i = int(rng.random() * n)
    return i if rng.random() < table.prob[i] else table.alias[i]


def alias_sample_many(table: AliasTable, rng: np.random.Generator, size: int) -> np.ndarray:
    prob = np.asarray(table.prob)
    alias = np.asarray(table.alias)
    i = rng.integers(0, len(prob), size=size)
    keep = rng.random(size) < prob[i]
    return np.where(keep, i, alias[i])


class TransitionCache:
    """Lazily built alias tables keyed by ``(previous, current)`` with LRU eviction."""

    def __init__(self, g: TssnGraph, cfg: WalkConfig, capacity: int | None = None):
        self.g = g
        self.cfg = cfg
        self.capacity = cfg.cache_size if capacity is None else capacity
        self._tables: OrderedDict[tuple[int, int], AliasTable | None] = OrderedDict()
        self.misses = 0

    def get(self, prev: int, cur: int) -> AliasTable | None:
        key = (prev, cur)
        tables = self._tables
        table = tables.get(key)
        if table is not None or key in tables:
            tables.move_to_end(key)
            return table
        self.misses += 1
        probs = step_probabilities(self.g, self.cfg, prev, cur)
        table = build_alias_table(probs) if probs else None
        tables[key] = table
        if len(tables) > self.capacity:
            tables.popitem(last=False)
        return table


# --- walks ------------------------------------------------------------------

def _token(g: TssnGraph, state: int, mode: TokenMode):
    s = g.states[state]
    return s.base if mode is TokenMode.BASE else (s.base, s.snap)


def _walk_states(g: TssnGraph, start: int, cfg: WalkConfig, rng, cache: TransitionCache) -> list[int]:
    path = [start]
    prev, cur = -1, start
    ptr, dst = g.acc_ptr, g.acc_dst
    for _ in range(cfg.walk_length):
        table = cache.get(prev, cur)
        if table is None:
            break
        k = alias_sample(table, rng)
        prev, cur = cur, int(dst[ptr[cur] + k])
        path.append(cur)
    return path


def temporal_biased_walk(g: TssnGraph, start: TssnVertex, cfg: WalkConfig, rng,
                         cache: TransitionCache | None = None) -> Walk:
    """One walk of at most ``walk_length`` steps; stops early at a dead end.

    ``rng`` is anything with a ``random()`` method returning floats in [0, 1).
    """
    cache = cache or TransitionCache(g, cfg)
    path = _walk_states(g, g.state_index[TssnVertex(*start)], cfg, rng, cache)
    return Walk([_token(g, s, cfg.token_mode) for s in path], [g.states[s] for s in path])


def walk_rng(seed: int, state: int, iteration: int) -> random.Random:
    """Independent stream per (seed, start state, iteration)."""
    entropy = np.random.SeedSequence([seed & 0xFFFFFFFF, state, iteration]).generate_state(2)
    return random.Random(int(entropy[0]) << 32 | int(entropy[1]))


def start_order(g: TssnGraph, seed: int, iteration: int) -> list[int]:
    order = list(range(g.n_states))
    random.Random(int(np.random.SeedSequence([seed & 0xFFFFFFFF, iteration]).generate_state(1)[0])).shuffle(order)
    return order


def _run_tasks(g: TssnGraph, cfg: WalkConfig, tasks: list[tuple[int, int]]) -> list[list[int]]:
    cache = TransitionCache(g, cfg)
    return [_walk_states(g, s, cfg, walk_rng(cfg.rng_seed, s, it), cache) for it, s in tasks]


_WORKER: dict = {}


def _init_worker(g, cfg):
    _WORKER["g"] = g
    _WORKER["cfg"] = cfg


def _worker_tasks(tasks):
    return _run_tasks(_WORKER["g"], _WORKER["cfg"], tasks)


def generate_corpus(g: TssnGraph, cfg: WalkConfig, workers: int = 1, keep_states: bool = False) -> list[Walk]:
    """``walks_per_vertex`` passes over all states in a per-pass shuffled order.

    The output does not depend on ``workers``: each walk draws from its own
    stream. Walks with fewer than two tokens are dropped.
    """
    tasks = [(it, s) for it in range(cfg.walks_per_vertex) for s in start_order(g, cfg.rng_seed, it)]
    if workers <= 1 or len(tasks) < 2 * workers:
        paths = _run_tasks(g, cfg, tasks)
    else:
        n_chunks = workers * 4
        chunks = [tasks[i::n_chunks] for i in range(n_chunks)]
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(g, cfg)) as pool:
            results = list(pool.map(_worker_tasks, chunks))
        paths = [None] * len(tasks)
        for i, res in enumerate(results):
            paths[i::n_chunks] = res
    corpus = []
    for path in paths:
        if len(path) < 2:
            continue
        states = [g.states[s] for s in path] if keep_states else []
        corpus.append(Walk([_token(g, s, cfg.token_mode) for s in path], states))
    log.debug("generated %d walks from %d tasks", len(corpus), len(tasks))
    return corpus


def write_corpus(corpus: Sequence[Walk], sink: IO[str], keys: Sequence[str] | None = None) -> None:
    """One walk per line, space-separated tokens (vertex keys when ``keys`` is given)."""
    for w in corpus:
        sink.write(" ".join(token_label(t, keys) for t in w.tokens) + "\n")


def token_label(token, keys: Sequence[str] | None = None) -> str:
    if isinstance(token, tuple):
        base, snap = token
        return f"{keys[base] if keys else base}@{snap}"
    return str(keys[token]) if keys else str(token)

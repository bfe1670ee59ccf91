"""Link-prediction evaluation: edge holdout, edge features, logistic
regression scorer and rank-based AUC."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import IO, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .embed import EmbeddingMatrix, TrainConfig, collapse_snapshot_tokens, sgd_train
from .ingest import Role, TemporalEdgeList
from .sampler import RoleMode, TokenMode, WalkConfig, generate_corpus
from .tssn import TssnBuildConfig, build_tssn

log = logging.getLogger(__name__)


class Protocol(str, Enum):
    TRADITIONAL = "traditional"
    TIME_PRESERVING = "time-preserving"


class Operator(str, Enum):
    AVERAGE = "average"
    HADAMARD = "hadamard"


@dataclass(frozen=True)
class SplitSpec:
    protocol: Protocol = Protocol.TRADITIONAL
    test_fraction: float = 0.25
    negative_ratio: float = 1.0
    restrict_cross_role: bool = False
    holdout_fraction: float = 0.25
    operator: Operator = Operator.AVERAGE
    l2: float = 1e-3

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if not 0 < self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in (0, 1)")
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "operator", Operator(self.operator))


@dataclass
class Split:
    train: TemporalEdgeList
    positives: list[tuple[int, int]]
    negatives: list[tuple[int, int]]


def pair_key(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


def distinct_pairs(edges: Iterable[tuple[int, int, int]]) -> list[tuple[int, int]]:
    """Unordered vertex pairs in order of first occurrence."""
    return list(dict.fromkeys(pair_key(u, v) for u, v, _ in edges))


def _train_vertices(train: TemporalEdgeList) -> list[int]:
    return sorted(set(train.src) | set(train.dst))


def sample_negatives(vertices: Sequence[int], observed: set, count: int, rng: np.random.Generator,
                     roles: Mapping[int, Role] | None = None) -> list[tuple[int, int]]:
    """``count`` distinct unordered pairs over ``vertices`` absent from ``observed``.

    With ``roles`` given, only user-developer pairs are eligible.
    """
    verts = np.asarray(sorted(vertices), dtype=np.int64)
    vset = set(verts.tolist())
    inside = [(u, v) for u, v in observed if u in vset and v in vset]
    if roles is not None:
        users = verts[[roles[v] is Role.USER for v in verts]]
        devs = verts[[roles[v] is Role.DEVELOPER for v in verts]]
        n_total = len(users) * len(devs)
        n_seen = sum(1 for u, v in inside if roles[u] is not roles[v])
    else:
        n = len(verts)
        n_total = n * (n - 1) // 2
        n_seen = len(inside)
    available = n_total - n_seen
    if available < count:
        raise ValueError(f"only {available} unconnected candidate pairs for {count} negatives")

    chosen: dict = {}
    if available <= 4 * count:
        # dense case: enumerate, then draw without replacement
        if roles is not None:
            cands = [pair_key(int(u), int(v)) for u in users for v in devs]
        else:
            cands = [(int(u), int(v)) for u, v in itertools.combinations(verts.tolist(), 2)]
        cands = [p for p in cands if p not in observed]
        picks = rng.choice(len(cands), size=count, replace=False)
        return [cands[i] for i in picks]
    while len(chosen) < count:
        if roles is not None:
            p = pair_key(int(users[rng.integers(len(users))]), int(devs[rng.integers(len(devs))]))
        else:
            a, b = rng.choice(len(verts), size=2, replace=False)
            p = pair_key(int(verts[a]), int(verts[b]))
        if p not in observed and p not in chosen:
            chosen[p] = None
    return list(chosen)


def make_split(edges: TemporalEdgeList, roles: Mapping[int, Role], spec: SplitSpec,
               rng: np.random.Generator) -> Split:
    """Hide a fraction of links (at random, or the most recent events) and
    pair them with as many unconnected vertex pairs."""
    all_pairs = distinct_pairs(edges)
    observed = set(all_pairs)
    if spec.protocol is Protocol.TRADITIONAL:
        n_test = int(round(spec.test_fraction * len(all_pairs)))
        hidden_idx = rng.permutation(len(all_pairs))[:n_test]
        positives = [all_pairs[i] for i in sorted(hidden_idx)]
        hidden = set(positives)
        keep = [i for i, (u, v, _) in enumerate(edges) if pair_key(u, v) not in hidden]
        train = edges.subset(keep)
    else:
        n_train = len(edges) - int(round(spec.test_fraction * len(edges)))
        train = edges.subset(range(n_train))
        seen = set(distinct_pairs(train))
        positives = [p for p in distinct_pairs(edges.subset(range(n_train, len(edges))))
                     if p not in seen]
    if not positives:
        raise ValueError("split produced no test positives")
    if len(train) == 0:
        raise ValueError("split left no training events")
    n_neg = int(round(spec.negative_ratio * len(positives)))
    negatives = sample_negatives(_train_vertices(train), observed, n_neg, rng,
                                 roles if spec.restrict_cross_role else None)
    return Split(train, positives, negatives)


def edge_features(m: EmbeddingMatrix, pairs: Sequence[tuple], op: Operator = Operator.AVERAGE
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Feature rows for the in-vocabulary pairs, and the boolean mask of kept pairs."""
    op = Operator(op)
    keep = np.array([u in m.index and v in m.index for u, v in pairs], dtype=bool)
    if (~keep).any():
        log.warning("dropped %d of %d pairs with out-of-vocabulary endpoints", (~keep).sum(), len(pairs))
    kept = [p for p, k in zip(pairs, keep) if k]
    if not kept:
        return np.empty((0, m.dim)), keep
    a = m.vectors[[m.index[u] for u, _ in kept]]
    b = m.vectors[[m.index[v] for _, v in kept]]
    feats = (a + b) / 2.0 if op is Operator.AVERAGE else a * b
    return feats, keep


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    iterations: int = 0
    grad_norm: float = math.nan

    def decision(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights + self.bias

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        z = self.decision(X)
        return np.exp(-np.logaddexp(0.0, -z))


def logreg_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean log-loss plus ``l2/2 * |w|^2``; returns (value, grad_w, grad_b)."""
    z = X @ w + b
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * w @ w
    r = np.exp(-np.logaddexp(0.0, -z)) - y
    return loss, X.T @ r / len(y) + l2 * w, r.mean()


def train_logreg(X: np.ndarray, y: np.ndarray, l2: float = 1e-3, iters: int = 20_000,
                 tol: float = 1e-6) -> LogisticModel:
    """Full-batch accelerated gradient descent with adaptive restart.

    Stops once the gradient norm drops below ``tol`` or after ``iters`` steps.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise ValueError("logistic regression needs both classes")
    n, d = X.shape
    Xb = np.hstack([X, np.ones((n, 1))])
    lip = 0.25 * np.linalg.norm(Xb, 2) ** 2 / n + l2
    step = 1.0 / lip
    theta = np.zeros(d + 1)
    mom = theta.copy()
    t = 1.0
    prev_loss = math.inf
    gnorm = math.inf
    for it in range(1, iters + 1):
        loss, gw, gb = logreg_objective(mom[:d], mom[d], X, y, l2)
        g = np.append(gw, gb)
        new = mom - step * g
        cur_loss, cw, cb = logreg_objective(new[:d], new[d], X, y, l2)
        gnorm = float(np.linalg.norm(np.append(cw, cb)))
        if gnorm < tol:
            theta = new
            break
        if cur_loss > prev_loss:
            # restart momentum
            t = 1.0
            mom = theta.copy()
            prev_loss = math.inf
            continue
        t_next = (1 + math.sqrt(1 + 4 * t * t)) / 2
        mom = new + ((t - 1) / t_next) * (new - theta)
        theta, t, prev_loss = new, t_next, cur_loss
    return LogisticModel(theta[:d], float(theta[d]), it, gnorm)


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def stratified_holdout(y: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of held-out rows, taking ``fraction`` of each class."""
    mask = np.zeros(len(y), dtype=bool)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        n = max(1, int(round(fraction * len(idx))))
        mask[rng.permutation(idx)[:n]] = True
    return mask


# --- experiments ------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    auc: float | None = None
    n_positive: int = 0
    n_negative: int = 0
    dropped: int = 0
    error: str | None = None


@dataclass
class EvalReport:
    protocol: str
    results: list[SeedResult]
    config: dict = field(default_factory=dict)

    @property
    def aucs(self) -> list[float]:
        return [r.auc for r in self.results if r.auc is not None]

    @property
    def complete(self) -> bool:
        return all(r.error is None for r in self.results)

    @property
    def mean(self) -> float:
        return float(np.mean(self.aucs)) if self.aucs else math.nan

    @property
    def std(self) -> float:
        a = self.aucs
        return float(np.std(a, ddof=1)) if len(a) > 1 else 0.0


def embed_graph(edges: TemporalEdgeList, roles: Mapping[int, Role], tssn_cfg: TssnBuildConfig,
                walk_cfg: WalkConfig, train_cfg: TrainConfig, workers: int = 1) -> EmbeddingMatrix:
    """Snapshot network -> walk corpus -> Skip-Gram, keyed by base vertex id."""
    g = build_tssn(edges, dict(roles), tssn_cfg)
    corpus = generate_corpus(g, walk_cfg, workers=workers)
    m = sgd_train(corpus, train_cfg)
    if walk_cfg.token_mode is TokenMode.SNAPSHOT:
        m = collapse_snapshot_tokens(m)
    return m


def score_split(m: EmbeddingMatrix, split: Split, spec: SplitSpec, rng: np.random.Generator):
    pairs = split.positives + split.negatives
    y_all = np.array([1] * len(split.positives) + [0] * len(split.negatives))
    X, keep = edge_features(m, pairs, spec.operator)
    y = y_all[keep]
    test = stratified_holdout(y, spec.holdout_fraction, rng)
    model = train_logreg(X[~test], y[~test], l2=spec.l2)
    value = auc(model.decision(X[test]), y[test])
    return value, int(y.sum()), int((1 - y).sum()), int((~keep).sum())


def run_seed(edges, roles, tssn_cfg, walk_cfg, train_cfg, spec, seed, workers=1) -> SeedResult:
    try:
        rng = np.random.default_rng(seed)
        split = make_split(edges, roles, spec, rng)
        m = embed_graph(split.train, roles, tssn_cfg, replace(walk_cfg, rng_seed=seed),
                        replace(train_cfg, rng_seed=seed), workers)
        value, n_pos, n_neg, dropped = score_split(m, split, spec, rng)
        return SeedResult(seed, value, n_pos, n_neg, dropped)
    except (ValueError, FloatingPointError, KeyError) as exc:
        log.error("seed %d failed: %s", seed, exc)
        return SeedResult(seed, error=f"{type(exc).__name__}: {exc}")


def _echo(obj) -> dict:
    return {k: (v.value if isinstance(v, Enum) else v) for k, v in asdict(obj).items()}


def run_experiment(edges: TemporalEdgeList, roles: Mapping[int, Role], tssn_cfg: TssnBuildConfig,
                   walk_cfg: WalkConfig, train_cfg: TrainConfig, spec: SplitSpec,
                   seeds: Sequence[int] = tuple(range(10)), workers: int = 1) -> EvalReport:
    """Split, embed, score and measure AUC once per seed.

    A failing seed is recorded in the report rather than aborting the run.
    """
    results = [run_seed(edges, roles, tssn_cfg, walk_cfg, train_cfg, spec, s, workers) for s in seeds]
    config = {"tssn": _echo(tssn_cfg), "walk": _echo(walk_cfg), "train": _echo(train_cfg),
              "split": _echo(spec)}
    return EvalReport(spec.protocol.value, results, config)


SWEEPABLE = ("r", "q", "alpha", "beta", "role_mode")


def parameter_sweep(grid: Mapping[str, Sequence], edges, roles, tssn_cfg, walk_cfg, train_cfg,
                    spec, seeds=tuple(range(10)), workers=1) -> list[tuple[dict, EvalReport]]:
    """One report per cell of the Cartesian product of ``grid`` (walk parameters)."""
    unknown = set(grid) - set(SWEEPABLE)
    if unknown:
        raise ValueError(f"cannot sweep {sorted(unknown)}")
    names = list(grid)
    out = []
    for values in itertools.product(*(grid[n] for n in names)):
        params = dict(zip(names, values))
        cfg = replace(walk_cfg, **params)
        out.append((params, run_experiment(edges, roles, tssn_cfg, cfg, train_cfg, spec, seeds, workers)))
    return out


REPORT_FIELDS = ("protocol", "r", "q", "alpha", "beta", "role_mode", "seed", "auc")


def write_report_table(rows: Sequence[tuple[dict, EvalReport]], sink: IO[str]) -> None:
    """Tab-separated rows (one per seed) followed by a ``mean`` row per report."""
    writer = csv.writer(sink, delimiter="\t", lineterminator="\n")
    writer.writerow(REPORT_FIELDS + ("std", "error"))
    for params, rep in rows:
        walk = rep.config.get("walk", {})
        base = [rep.protocol] + [params.get(k, walk.get(k)) for k in REPORT_FIELDS[1:6]]
        for r in rep.results:
            writer.writerow(base + [r.seed, "" if r.auc is None else f"{r.auc:.6f}", "", r.error or ""])
        writer.writerow(base + ["mean", f"{rep.mean:.6f}", f"{rep.std:.6f}",
                                "" if rep.complete else "incomplete"])


def write_summary_table(rows: Sequence[tuple[dict, EvalReport]], sink: IO[str]) -> None:
    """One row per report: parameters, mean and std AUC, completed seeds."""
    writer = csv.writer(sink, delimiter="\t", lineterminator="\n")
    writer.writerow(REPORT_FIELDS[:6] + ("mean_auc", "std", "seeds"))
    for params, rep in rows:
        walk = rep.config.get("walk", {})
        writer.writerow([rep.protocol] + [params.get(k, walk.get(k)) for k in REPORT_FIELDS[1:6]]
                        + [f"{rep.mean:.6f}", f"{rep.std:.6f}", f"{len(rep.aucs)}/{len(rep.results)}"])


# --- recommendation ---------------------------------------------------------

def fit_scorer(m: EmbeddingMatrix, edges: TemporalEdgeList, rng: np.random.Generator,
               op: Operator = Operator.AVERAGE, l2: float = 1e-3) -> LogisticModel:
    """Logistic scorer trained on every linked pair against as many unlinked ones."""
    pos = [p for p in distinct_pairs(edges) if p[0] in m.index and p[1] in m.index]
    verts = [v for v in _train_vertices(edges) if v in m.index]
    neg = sample_negatives(verts, set(distinct_pairs(edges)), len(pos), rng)
    X, _ = edge_features(m, pos + neg, op)
    y = np.array([1] * len(pos) + [0] * len(neg))
    return train_logreg(X, y, l2=l2)


def recommend(m: EmbeddingMatrix, model: LogisticModel, target: int, k: int, linked: set,
              roles: Mapping[int, Role] | None = None, cross_role_only: bool = False,
              op: Operator = Operator.AVERAGE) -> list[tuple[int, float]]:
    """Top-``k`` unlinked partners of ``target`` by predicted link probability."""
    if target not in m.index:
        raise KeyError(f"unknown target {target!r}")
    cands = [v for v in m.tokens if v != target and pair_key(target, v) not in linked]
    if cross_role_only:
        cands = [v for v in cands if roles[v] is not roles[target]]
    if not cands:
        return []
    X, _ = edge_features(m, [(target, v) for v in cands], op)
    scores = model.predict_proba(X)
    order = np.argsort(-scores, kind="stable")[:k]
    return [(cands[i], float(scores[i])) for i in order]

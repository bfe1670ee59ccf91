"""Skip-Gram with negative sampling over a walk corpus."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import IO, Hashable, Iterable, Mapping, Sequence

import numba
import numpy as np

from .sampler import Walk, build_alias_table, token_label

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 128
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    initial_lr: float = 0.025
    min_lr: float = 0.0001
    noise_exponent: float = 0.75
    rng_seed: int = 0
    deterministic: bool = True
    snapshot_tie: float = 0.0

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.negatives < 0 or self.epochs < 0:
            raise ValueError("dim, window must be >= 1; negatives, epochs >= 0")
        if not 0 < self.min_lr < self.initial_lr:
            raise ValueError("need 0 < min_lr < initial_lr")


@dataclass
class Vocabulary:
    tokens: list[Hashable]
    counts: np.ndarray
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def noise_distribution(self, exponent: float = 0.75) -> np.ndarray:
        p = self.counts.astype(np.float64) ** exponent
        return p / p.sum()


def build_vocab(corpus: Iterable[Walk | Sequence]) -> Vocabulary:
    """Token counts, with rows assigned in first-appearance order."""
    counts: dict = {}
    for walk in corpus:
        for tok in getattr(walk, "tokens", walk):
            counts[tok] = counts.get(tok, 0) + 1
    if not counts:
        raise ValueError("empty corpus")
    return Vocabulary(list(counts), np.fromiter(counts.values(), dtype=np.int64, count=len(counts)))


def positive_pairs(walk: Walk | Sequence, window: int) -> list[tuple]:
    """Ordered (center, context) pairs at distance 1..window within the walk."""
    toks = list(getattr(walk, "tokens", walk))
    n = len(toks)
    return [(toks[i], toks[j])
            for i in range(n)
            for j in range(max(0, i - window), min(n, i + window + 1))
            if j != i]


def count_pairs(lengths: np.ndarray, window: int) -> int:
    total = 0
    for n in np.unique(lengths):
        pos = np.arange(n)
        per_walk = (np.minimum(pos + window, n - 1) - np.maximum(pos - window, 0)).sum()
        total += int(per_walk) * int((lengths == n).sum())
    return total


@dataclass
class EmbeddingMatrix:
    tokens: list[Hashable]
    vectors: np.ndarray
    context: np.ndarray | None = None
    index: dict = field(default_factory=dict)
    epoch_loss: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.index:
            self.index = {t: i for i, t in enumerate(self.tokens)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, token) -> bool:
        return token in self.index

    def __getitem__(self, token) -> np.ndarray:
        return self.vectors[self.index[token]]


# --- numerical kernels ------------------------------------------------------

@numba.njit(cache=True)
def pair_loss_grad(h, outs, labels, grad_h, grad_out):
    """Loss of one center vector ``h`` against output rows ``outs``.

    ``labels[j]`` is 1 for the observed context, 0 for noise samples and -1
    for unused rows. The
    loss is ``-sum_j log sigmoid(s_j * h.outs[j])`` with ``s_j = +1/-1``.
    Gradients are written into ``grad_h`` and ``grad_out``; the loss is
    returned.
    """
    d = h.shape[0]
    grad_h[:] = 0.0
    loss = 0.0
    for j in range(outs.shape[0]):
        if labels[j] < 0:
            continue
        dot = 0.0
        for i in range(d):
            dot += h[i] * outs[j, i]
        # e = exp(-|dot|) gives both sigmoid(dot) and log sigmoid(+-dot) stably
        e = math.exp(-abs(dot))
        sig = 1.0 / (1.0 + e) if dot >= 0 else e / (1.0 + e)
        softplus = math.log1p(e)
        if labels[j] == 1:
            loss += softplus + max(-dot, 0.0)
            g = sig - 1.0
        else:
            loss += softplus + max(dot, 0.0)
            g = sig
        for i in range(d):
            grad_h[i] += g * outs[j, i]
            grad_out[j, i] = g * h[i]
    return loss


@numba.njit(cache=True)
def _next_uniform(state):
    state = state * numba.uint64(25214903917) + numba.uint64(11)
    return state, (state >> numba.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def _train_walk(tokens, lo, hi, syn0, syn1, noise_prob, noise_alias, window, negatives,
                lr0, lr1, total_pairs, done, rng_state, outs, labels, targets,
                grad_h, grad_out):
    d = syn0.shape[1]
    n_noise = noise_prob.shape[0]
    loss_sum = 0.0
    n_pairs = 0
    for i in range(lo, hi):
        center = tokens[i]
        jlo = max(lo, i - window)
        jhi = min(hi, i + window + 1)
        for j in range(jlo, jhi):
            if j == i:
                continue
            lr = lr0 - (lr0 - lr1) * min(1.0, done / total_pairs)
            ctx = tokens[j]
            targets[0] = ctx
            labels[0] = 1
            k = 1
            for _ in range(negatives):
                rng_state, u = _next_uniform(rng_state)
                rng_state, u2 = _next_uniform(rng_state)
                neg = min(int(u * n_noise), n_noise - 1)
                if u2 >= noise_prob[neg]:
                    neg = noise_alias[neg]
                if neg == ctx:
                    continue
                targets[k] = neg
                labels[k] = 0
                k += 1
            for t in range(k):
                for c in range(d):
                    outs[t, c] = syn1[targets[t], c]
            for t in range(k, outs.shape[0]):
                labels[t] = -1
            loss = pair_loss_grad(syn0[center], outs, labels, grad_h, grad_out)
            if not math.isfinite(loss):
                return loss_sum, n_pairs, done, rng_state, False
            for t in range(k):
                row = targets[t]
                for c in range(d):
                    syn1[row, c] -= lr * grad_out[t, c]
            for c in range(d):
                syn0[center, c] -= lr * grad_h[c]
            loss_sum += loss
            n_pairs += 1
            done += 1
    return loss_sum, n_pairs, done, rng_state, True


@numba.njit(cache=True)
def _train_epoch_serial(tokens, offsets, syn0, syn1, noise_prob, noise_alias, window, negatives,
                        lr0, lr1, total_pairs, done, rng_state):
    d = syn0.shape[1]
    outs = np.empty((negatives + 1, d))
    grad_out = np.empty((negatives + 1, d))
    grad_h = np.empty(d)
    labels = np.empty(negatives + 1, dtype=np.int64)
    targets = np.empty(negatives + 1, dtype=np.int64)
    loss_sum = 0.0
    n_pairs = 0
    for w in range(offsets.shape[0] - 1):
        ls, npairs, done, rng_state, ok = _train_walk(
            tokens, offsets[w], offsets[w + 1], syn0, syn1, noise_prob, noise_alias, window, negatives,
            lr0, lr1, total_pairs, done, rng_state, outs, labels, targets, grad_h, grad_out)
        loss_sum += ls
        n_pairs += npairs
        if not ok:
            return loss_sum, n_pairs, done, rng_state, w
    return loss_sum, n_pairs, done, rng_state, -1


@numba.njit(cache=True, parallel=True)
def _train_epoch_parallel(tokens, offsets, syn0, syn1, noise_prob, noise_alias, window, negatives,
                          lr0, lr1, total_pairs, done0, seeds, pair_offsets):
    # unsynchronised sparse updates; lost writes are accepted
    n_walks = offsets.shape[0] - 1
    d = syn0.shape[1]
    losses = np.zeros(n_walks)
    bad = np.zeros(n_walks, dtype=np.bool_)
    for w in numba.prange(n_walks):
        outs = np.empty((negatives + 1, d))
        grad_out = np.empty((negatives + 1, d))
        grad_h = np.empty(d)
        labels = np.empty(negatives + 1, dtype=np.int64)
        targets = np.empty(negatives + 1, dtype=np.int64)
        ls, _, _, _, ok = _train_walk(
            tokens, offsets[w], offsets[w + 1], syn0, syn1, noise_prob, noise_alias, window, negatives,
            lr0, lr1, total_pairs, done0 + pair_offsets[w], seeds[w], outs, labels, targets,
            grad_h, grad_out)
        losses[w] = ls
        bad[w] = not ok
    return losses.sum(), bad


# --- public API -------------------------------------------------------------

def _flatten(corpus: Sequence[Walk | Sequence], vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    lengths = [len(getattr(w, "tokens", w)) for w in corpus]
    offsets = np.zeros(len(corpus) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    idx = vocab.index
    tokens = np.fromiter((idx[t] for w in corpus for t in getattr(w, "tokens", w)),
                         dtype=np.int64, count=int(offsets[-1]))
    return tokens, offsets


def init_vectors(n: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(cfg.rng_seed)
    syn0 = rng.uniform(-0.5 / cfg.dim, 0.5 / cfg.dim, size=(n, cfg.dim))
    return syn0, np.zeros((n, cfg.dim))


def _tie_snapshot_vectors(tokens: list, syn0: np.ndarray, strength: float) -> None:
    groups: dict = {}
    for row, tok in enumerate(tokens):
        if isinstance(tok, tuple):
            groups.setdefault(tok[0], []).append(row)
    for rows in groups.values():
        if len(rows) > 1:
            mean = syn0[rows].mean(axis=0)
            syn0[rows] += strength * (mean - syn0[rows])


def sgd_train(corpus: Sequence[Walk | Sequence], cfg: TrainConfig | None = None,
              vocab: Vocabulary | None = None) -> EmbeddingMatrix:
    """Train input/context vectors; returns the input vectors as embeddings.

    The learning rate decays linearly from ``initial_lr`` to ``min_lr`` over
    every (center, context) pair of every epoch. Raises FloatingPointError if
    an update produces a non-finite loss or vector.
    """
    cfg = cfg or TrainConfig()
    vocab = vocab or build_vocab(corpus)
    tokens, offsets = _flatten(corpus, vocab)
    syn0, syn1 = init_vectors(len(vocab), cfg)
    table = build_alias_table(vocab.noise_distribution(cfg.noise_exponent).tolist(), tol=1e-6)
    noise_prob = np.asarray(table.prob)
    noise_alias = np.asarray(table.alias, dtype=np.int64)
    lengths = np.diff(offsets)
    per_epoch = count_pairs(lengths, cfg.window)
    total = max(1, per_epoch * cfg.epochs)
    losses = []
    done = 0
    rng_state = np.uint64(cfg.rng_seed * 2654435761 + 1 & 0xFFFFFFFFFFFFFFFF)
    for epoch in range(cfg.epochs):
        if cfg.deterministic:
            loss_sum, n_pairs, done, rng_state, bad_walk = _train_epoch_serial(
                tokens, offsets, syn0, syn1, noise_prob, noise_alias, cfg.window, cfg.negatives,
                cfg.initial_lr, cfg.min_lr, float(total), done, rng_state)
            rng_state = np.uint64(rng_state)
            bad = bad_walk >= 0
        else:
            walk_pairs = np.array([count_pairs(np.array([n]), cfg.window) for n in lengths], dtype=np.int64)
            pair_offsets = np.concatenate([[0], np.cumsum(walk_pairs)[:-1]])
            seeds = np.random.SeedSequence([cfg.rng_seed, epoch]).generate_state(len(lengths), np.uint64)
            loss_sum, bad_walks = _train_epoch_parallel(
                tokens, offsets, syn0, syn1, noise_prob, noise_alias, cfg.window, cfg.negatives,
                cfg.initial_lr, cfg.min_lr, float(total), done, seeds, pair_offsets)
            n_pairs = per_epoch
            done += per_epoch
            bad = bool(bad_walks.any())
            bad_walk = int(np.argmax(bad_walks)) if bad else -1
        if bad or not (np.isfinite(syn0).all() and np.isfinite(syn1).all()):
            raise FloatingPointError(
                f"non-finite value during epoch {epoch} (walk {bad_walk}, "
                f"lr={cfg.initial_lr}, max |w|={np.nanmax(np.abs(syn0)):.3g})")
        if cfg.snapshot_tie > 0:
            frac = done / total
            lr = cfg.initial_lr - (cfg.initial_lr - cfg.min_lr) * frac
            _tie_snapshot_vectors(vocab.tokens, syn0, min(1.0, cfg.snapshot_tie * lr))
        losses.append(loss_sum / max(n_pairs, 1))
        log.debug("epoch %d: mean pair loss %.5f", epoch, losses[-1])
    return EmbeddingMatrix(list(vocab.tokens), syn0, syn1, dict(vocab.index), losses)


def collapse_snapshot_tokens(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Average the per-snapshot vectors of each base vertex into one row."""
    groups: dict = {}
    for row, tok in enumerate(m.tokens):
        base = tok[0] if isinstance(tok, tuple) else tok
        groups.setdefault(base, []).append(row)
    bases = list(groups)
    vecs = np.stack([m.vectors[groups[b]].mean(axis=0) for b in bases])
    return EmbeddingMatrix(bases, vecs)


def export_embeddings(m: EmbeddingMatrix, sink: IO[str], keys: Sequence[str] | None = None) -> None:
    """``N d`` header, then one ``key v1 ... vd`` line per row (shortest round-trip floats)."""
    n, d = m.vectors.shape
    sink.write(f"{n} {d}\n")
    for tok, row in zip(m.tokens, m.vectors.tolist()):
        sink.write(token_label(tok, keys) + " " + " ".join(map(repr, row)) + "\n")


def load_embeddings(source: IO[str], index: Mapping[str, int] | None = None) -> EmbeddingMatrix:
    """Read the text format; keys found in ``index`` are mapped to vertex ids."""
    header = source.readline().split()
    if len(header) != 2:
        raise ValueError("embedding file must start with 'N d'")
    n, d = int(header[0]), int(header[1])
    tokens, rows = [], []
    for lineno, line in enumerate(source, start=2):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != d + 1:
            raise ValueError(f"line {lineno}: expected {d + 1} fields")
        key = parts[0]
        tokens.append(index.get(key, key) if index is not None else key)
        rows.append([float(x) for x in parts[1:]])
    if len(tokens) != n:
        raise ValueError(f"header says {n} rows, found {len(tokens)}")
    return EmbeddingMatrix(tokens, np.asarray(rows, dtype=np.float64).reshape(n, d))

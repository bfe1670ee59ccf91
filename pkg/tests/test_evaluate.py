import io
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from oracles import mann_whitney_auc
from tbw.embed import EmbeddingMatrix, TrainConfig, export_embeddings, load_embeddings, sgd_train
from tbw.evaluate import (LogisticModel, Operator, SplitSpec, auc, distinct_pairs, edge_features, fit_scorer,
                          logreg_objective, make_split, pair_key, parameter_sweep, recommend, run_experiment,
                          sample_negatives, score_split, train_logreg, write_report_table, write_summary_table)
from tbw.ingest import RawEvent, Role, clean_and_index
from tbw.sampler import WalkConfig, alias_sample, build_alias_table, start_order, walk_rng
from tbw.stats import SyntheticSpec, generate_synthetic
from tbw.tssn import TssnBuildConfig

SMALL_WALK = WalkConfig(walks_per_vertex=3, walk_length=10)
SMALL_TRAIN = TrainConfig(dim=8, epochs=1)


@pytest.fixture(scope="module")
def small_net():
    return generate_synthetic(SyntheticSpec(n_users=30, n_developers=20, snapshots=2, events_per_snapshot=150))


def random_edges(rng, n_vertices=30, n_pairs=100, repeats=2):
    pairs = set()
    while len(pairs) < n_pairs:
        u, v = rng.choice(n_vertices, 2, replace=False)
        pairs.add(pair_key(int(u), int(v)))
    ev = [RawEvent(f"v{u}", f"v{v}", int(rng.integers(0, 10**6))) for u, v in sorted(pairs) for _ in range(repeats)]
    roles = {f"v{i}": Role.USER if i % 3 else Role.DEVELOPER for i in range(n_vertices)}
    return clean_and_index(ev, roles)


def test_traditional_counts():
    edges, roles = random_edges(np.random.default_rng(0))
    sp = make_split(edges, roles, SplitSpec(), np.random.default_rng(1))
    assert len(sp.positives) == 25 and len(sp.negatives) == 25


def test_time_preserving_prefix():
    ev = [RawEvent(f"a{i % 7}", f"b{i % 11}", i) for i in range(1, 101)]
    edges, roles = clean_and_index(ev, {**{f"a{i}": "user" for i in range(7)}, **{f"b{i}": "developer" for i in range(11)}})
    sp = make_split(edges, roles, SplitSpec(protocol="time-preserving"), np.random.default_rng(0))
    assert sp.train.timestamps == tuple(range(1, 76))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["traditional", "time-preserving"]), st.booleans())
def test_split_disjointness(seed, protocol, cross):
    rng = np.random.default_rng(seed)
    edges, roles = random_edges(rng, n_vertices=int(rng.integers(12, 25)), n_pairs=30, repeats=1)
    try:
        sp = make_split(edges, roles, SplitSpec(protocol=protocol, restrict_cross_role=cross), rng)
    except ValueError:
        return  # too few candidates / no positives on a degenerate draw
    train = set(distinct_pairs(sp.train))
    everything = set(distinct_pairs(edges))
    assert not set(sp.positives) & train
    assert not set(sp.negatives) & everything
    assert len(set(sp.negatives)) == len(sp.negatives)
    verts = set(sp.train.src) | set(sp.train.dst)
    assert all(u in verts and v in verts and u != v for u, v in sp.negatives)
    if cross:
        assert all(roles[u] is not roles[v] for u, v in sp.negatives)


def test_too_few_negatives():
    with pytest.raises(ValueError, match="only 0"):
        sample_negatives([0, 1, 2], {(0, 1), (0, 2), (1, 2)}, 1, np.random.default_rng(0))


def test_sparse_and_dense_negative_paths():
    rng = np.random.default_rng(0)
    dense = sample_negatives(range(6), {(0, 1)}, 14, rng)
    assert sorted(dense) == sorted(p for p in [(a, b) for a in range(6) for b in range(a + 1, 6)] if p != (0, 1))
    sparse = sample_negatives(range(200), {(0, 1)}, 50, rng)
    assert len(set(sparse)) == 50 and (0, 1) not in sparse


def matrix(rows):
    return EmbeddingMatrix(list(range(len(rows))), np.array(rows, dtype=float))


def test_edge_features():
    m = matrix([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [-1.0, -0.0]])
    X, keep = edge_features(m, [(0, 1), (0, 2), (0, 3), (0, 9)])
    assert keep.tolist() == [True, True, True, False]
    np.testing.assert_array_equal(X, [[0.5, 0.5], [1.0, 0.0], [0.0, 0.0]])
    H, _ = edge_features(m, [(0, 1), (0, 2)], "hadamard")
    np.testing.assert_array_equal(H, [[0.0, 0.0], [1.0, 0.0]])
    rng = np.random.default_rng(0)
    m = matrix(rng.normal(size=(5, 3)))
    a, _ = edge_features(m, [(1, 4)])
    b, _ = edge_features(m, [(4, 1)])
    assert np.array_equal(a, b)


def test_logreg_separable():
    X = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    m = train_logreg(X, y)
    assert ((m.predict_proba(X) > 0.5) == y).all()


def test_logreg_needs_two_classes():
    with pytest.raises(ValueError):
        train_logreg(np.ones((3, 1)), np.ones(3))


def test_logreg_optimality_and_reference():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 3))
    y = (X @ [1.0, -2.0, 0.5] + rng.normal(size=20) > 0).astype(float)
    m = train_logreg(X, y, l2=1e-2)
    _, gw, gb = logreg_objective(m.weights, m.bias, X, y, 1e-2)
    assert np.linalg.norm(np.append(gw, gb)) < 1e-5

    def fun(theta):
        val, gw, gb = logreg_objective(theta[:3], theta[3], X, y, 1e-2)
        return val, np.append(gw, gb)

    ref = minimize(fun, np.zeros(4), jac=True, method="L-BFGS-B", options=dict(gtol=1e-12, ftol=1e-15))
    np.testing.assert_allclose(np.append(m.weights, m.bias), ref.x, atol=1e-3)


def test_auc_examples():
    assert auc([0.9, 0.8, 0.4, 0.3], [1, 0, 1, 0]) == 0.75
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.5] * 6, [0, 1] * 3) == 0.5
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=25))
def test_auc_matches_pairwise_count(data):
    scores, labels = zip(*data)
    if len(set(labels)) < 2:
        return
    assert auc(scores, labels) == mann_whitney_auc(scores, labels)
    # strictly monotone transform
    assert auc(np.exp(np.array(scores) * 0.3) - 7, labels) == auc(scores, labels)


def test_run_experiment_is_reproducible(small_net):
    args = (small_net.edges, small_net.roles, TssnBuildConfig(), SMALL_WALK, SMALL_TRAIN, SplitSpec(), [0, 1])
    a, b = run_experiment(*args), run_experiment(*args)
    assert a.aucs == b.aucs and len(a.aucs) == 2 and a.complete
    assert a.config["walk"]["walks_per_vertex"] == 3
    assert np.isclose(a.std, np.std(a.aucs, ddof=1))


def test_failed_seed_is_recorded():
    edges, roles = clean_and_index([RawEvent("a", "b", 1), RawEvent("b", "c", 2)], {k: "user" for k in "abc"})
    rep = run_experiment(edges, roles, TssnBuildConfig(), SMALL_WALK, SMALL_TRAIN, SplitSpec(), [0])
    assert not rep.complete and rep.results[0].error


def test_sweep_grid_and_tables(small_net):
    grid = {"r": [0.5, 1, 2], "q": [0.5, 1, 2]}
    rows = parameter_sweep(grid, small_net.edges, small_net.roles, TssnBuildConfig(),
                           WalkConfig(walks_per_vertex=1, walk_length=5), SMALL_TRAIN, SplitSpec(), [0])
    assert len(rows) == 9 and {(p["r"], p["q"]) for p, _ in rows} == {(r, q) for r in (0.5, 1, 2) for q in (0.5, 1, 2)}
    best = max(rep.mean for _, rep in rows)
    assert all(best >= rep.mean for _, rep in rows)
    full, summary = io.StringIO(), io.StringIO()
    write_report_table(rows, full)
    write_summary_table(rows, summary)
    assert len(full.getvalue().splitlines()) == 1 + 9 * 2
    lines = summary.getvalue().splitlines()
    assert len(lines) == 10 and lines[0].split("\t")[:6] == ["protocol", "r", "q", "alpha", "beta", "role_mode"]
    with pytest.raises(ValueError):
        parameter_sweep({"dim": [1]}, small_net.edges, small_net.roles, TssnBuildConfig(), SMALL_WALK,
                        SMALL_TRAIN, SplitSpec(), [0])


def test_beta_half_equals_unbiased(small_net):
    run = lambda w: run_experiment(small_net.edges, small_net.roles, TssnBuildConfig(), w, SMALL_TRAIN,
                                   SplitSpec(), [0, 1]).aucs
    from dataclasses import replace
    assert run(replace(SMALL_WALK, beta=0.5)) == run(replace(SMALL_WALK, role_mode="unbiased"))


def plain_first_order_auc(edges, roles, walk_cfg, train_cfg, spec, seed):
    """Weighted first-order walks on the static graph, then the same scorer."""
    rng = np.random.default_rng(seed)
    split = make_split(edges, roles, spec, rng)
    adj = {}
    for u, v, _ in split.train:
        for a, b in ((u, v), (v, u)):
            adj.setdefault(a, {})
            adj[a][b] = adj[a].get(b, 0.0) + 1.0
    verts = sorted(adj)
    tables = {}
    for v in verts:
        nbrs = sorted(adj[v])
        w = [adj[v][x] for x in nbrs]
        z = sum(w)
        tables[v] = (nbrs, build_alias_table([x / z for x in w]))
    corpus = []
    for it in range(walk_cfg.walks_per_vertex):
        for s in start_order(SimpleNamespace(n_states=len(verts)), seed, it):
            r = walk_rng(seed, s, it)
            walk = [verts[s]]
            for _ in range(walk_cfg.walk_length):
                nbrs, table = tables[walk[-1]]
                walk.append(nbrs[alias_sample(table, r)])
            corpus.append(walk)
    from dataclasses import replace
    m = sgd_train(corpus, replace(train_cfg, rng_seed=seed))
    return score_split(m, split, spec, rng)[0]


def test_reduction_matches_plain_first_order_pipeline(small_net):
    cfg = WalkConfig(r=1, q=1, role_mode="unbiased", alpha=0.3, walks_per_vertex=3, walk_length=10)
    single = TssnBuildConfig(epsilon=10**12)
    rep = run_experiment(small_net.edges, small_net.roles, single, cfg, SMALL_TRAIN, SplitSpec(), [0, 1, 2])
    plain = [plain_first_order_auc(small_net.edges, small_net.roles, cfg, SMALL_TRAIN, SplitSpec(), s)
             for s in (0, 1, 2)]
    assert rep.aucs == plain


def test_exported_embeddings_score_identically(small_net):
    rng = np.random.default_rng(0)
    sp = make_split(small_net.edges, small_net.roles, SplitSpec(), rng)
    from tbw.evaluate import embed_graph
    m = embed_graph(sp.train, small_net.roles, TssnBuildConfig(), SMALL_WALK, SMALL_TRAIN)
    buf = io.StringIO()
    export_embeddings(m, buf, small_net.edges.keys)
    back = load_embeddings(io.StringIO(buf.getvalue()), small_net.edges.index)
    a = score_split(m, sp, SplitSpec(), np.random.default_rng(5))
    b = score_split(back, sp, SplitSpec(), np.random.default_rng(5))
    assert a == b


def test_recommend_filters():
    m = matrix([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [-1.0, 0.0]])
    model = LogisticModel(np.array([1.0, 0.0]), 0.0)
    roles = {0: Role.USER, 1: Role.USER, 2: Role.DEVELOPER, 3: Role.DEVELOPER}
    assert [v for v, _ in recommend(m, model, 0, 10, set())] == [1, 2, 3]
    assert [v for v, _ in recommend(m, model, 0, 10, {(0, 1)})] == [2, 3]
    assert [v for v, _ in recommend(m, model, 0, 1, set(), roles, cross_role_only=True)] == [2]
    with pytest.raises(KeyError):
        recommend(m, model, 9, 1, set())


def test_recommend_stays_in_community():
    net = generate_synthetic(SyntheticSpec(n_users=20, n_developers=20, snapshots=2, events_per_snapshot=400,
                                           community_strength=1.0, cross_role_affinity=0.5, activity_skew=5))
    from tbw.evaluate import embed_graph
    m = embed_graph(net.edges, net.roles, TssnBuildConfig(), WalkConfig(walks_per_vertex=10, walk_length=20),
                    TrainConfig(dim=16, epochs=3))
    model = fit_scorer(m, net.edges, np.random.default_rng(0), Operator.HADAMARD)
    linked = set(distinct_pairs(net.edges))
    hits = [net.community[recommend(m, model, v, 1, linked, op=Operator.HADAMARD)[0][0]] == net.community[v]
            for v in m.tokens if recommend(m, model, v, 1, linked, op=Operator.HADAMARD)]
    assert np.mean(hits) > 0.9

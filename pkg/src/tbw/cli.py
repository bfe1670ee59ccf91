"""Command-line entry point: ``tbw <stage> [options]``.

Stages read the artifacts of earlier stages from ``--out``:

    ingest    events/roles/aliases files -> edges.tsv, roles.tsv
    stats     role t-test, contact tendency, per-snapshot summary
    build     snapshot network dump (tssn.txt)
    walk      walk corpus (corpus.txt)
    embed     embeddings.txt and a link scorer (classifier.json)
    evaluate  link-prediction AUC report (report.tsv)
    sweep     AUC table over a parameter grid (sweep.tsv)
    recommend top-k partners for one individual
    synth     write a synthetic events/roles pair

Every run writes ``manifest-<stage>.json`` with the resolved settings and
artifact hashes; ``--manifest`` replays one.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .embed import TrainConfig, export_embeddings, load_embeddings, sgd_train
from .evaluate import (LogisticModel, Operator, Protocol, SplitSpec, distinct_pairs, fit_scorer,
                       parameter_sweep, recommend, run_experiment, write_report_table,
                       write_summary_table)
from .ingest import (ConfigurationError, ParseError, apply_alias_map, clean_and_index, parse_aliases,
                     parse_events, parse_roles, write_events, write_roles)
from .sampler import RoleMode, RoleReference, TokenMode, WalkConfig, generate_corpus, write_corpus
from .stats import SyntheticSpec, generate_synthetic, role_ttest, tendency_ratio, write_tendency
from .tssn import SECONDS_PER_DAY, TssnBuildConfig, build_tssn, dump_graph, snapshot_stats

log = logging.getLogger("tbw")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

DEFAULTS = {
    "events": None, "roles": None, "aliases": None, "out": "tbw-out",
    "seed": 0, "threads": 1, "deterministic": True,
    "epsilon_days": 30.0, "events_per_snapshot": None, "calendar_months": False, "self_weight": 1.0,
    "r": 1.0, "q": 1.0, "alpha": 0.5, "beta": 0.5, "role_mode": "biased", "role_reference": "previous",
    "token_mode": "base", "walks": 10, "walk_length": 80,
    "window": 5, "dim": 128, "negatives": 5, "epochs": 5, "lr": 0.025,
    "protocol": "traditional", "test_fraction": 0.25, "seeds": "0,1,2,3,4,5,6,7,8,9",
    "operator": "average", "cross_role_negatives": False, "l2": 1e-3,
    "grid_r": None, "grid_q": None, "grid_alpha": None, "grid_beta": None,
    "target": None, "k": 10, "cross_role_only": False,
    "n_users": 120, "n_developers": 80, "snapshots": 3, "synth_events": 600, "affinity": 0.5,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    io = common.add_argument_group("inputs and outputs")
    io.add_argument("--events", help="tab-separated sender, recipient, unix seconds")
    io.add_argument("--roles", help="tab-separated key, user|developer")
    io.add_argument("--aliases", help="tab-separated alias, canonical key")
    io.add_argument("--out", help="artifact directory")
    io.add_argument("--config", help="key=value settings file (flags take precedence)")
    io.add_argument("--manifest", help="replay the settings of a previous run")
    io.add_argument("--seed", type=int)
    io.add_argument("--threads", type=int)
    io.add_argument("--deterministic", action="store_true")
    io.add_argument("--no-deterministic", dest="deterministic", action="store_false")
    io.add_argument("-v", "--verbose", action="count")

    g = common.add_argument_group("snapshot network")
    span = g.add_mutually_exclusive_group()
    span.add_argument("--epsilon-days", type=float)
    span.add_argument("--events-per-snapshot", type=int)
    span.add_argument("--calendar-months", action="store_true")
    g.add_argument("--self-weight", type=float)

    w = common.add_argument_group("walks")
    w.add_argument("--r", type=float)
    w.add_argument("--q", type=float)
    w.add_argument("--alpha", type=float)
    w.add_argument("--beta", type=float)
    w.add_argument("--role-mode", choices=[m.value for m in RoleMode])
    w.add_argument("--role-reference", choices=[m.value for m in RoleReference])
    w.add_argument("--token-mode", choices=[m.value for m in TokenMode])
    w.add_argument("--walks", type=int)
    w.add_argument("--walk-length", type=int)

    e = common.add_argument_group("embedding")
    e.add_argument("--window", type=int)
    e.add_argument("--dim", type=int)
    e.add_argument("--negatives", type=int)
    e.add_argument("--epochs", type=int)
    e.add_argument("--lr", type=float)

    ev = common.add_argument_group("evaluation")
    ev.add_argument("--protocol", choices=[p.value for p in Protocol])
    ev.add_argument("--test-fraction", type=float)
    ev.add_argument("--seeds", help="comma-separated seeds")
    ev.add_argument("--operator", choices=[o.value for o in Operator])
    ev.add_argument("--cross-role-negatives", action="store_true")
    ev.add_argument("--l2", type=float)

    parser = _Parser(prog="tbw", description="Temporal biased walk embeddings for partner recommendation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("ingest", "stats", "build", "walk", "embed", "evaluate"):
        sub.add_parser(name, parents=[common], argument_default=argparse.SUPPRESS)
    sw = sub.add_parser("sweep", parents=[common], argument_default=argparse.SUPPRESS)
    for name in ("r", "q", "alpha", "beta"):
        sw.add_argument(f"--grid-{name}", help="comma-separated values")
    rec = sub.add_parser("recommend", parents=[common], argument_default=argparse.SUPPRESS)
    rec.add_argument("--target")
    rec.add_argument("-k", type=int)
    rec.add_argument("--cross-role-only", action="store_true")
    syn = sub.add_parser("synth", parents=[common], argument_default=argparse.SUPPRESS)
    syn.add_argument("--n-users", type=int)
    syn.add_argument("--n-developers", type=int)
    syn.add_argument("--snapshots", type=int)
    syn.add_argument("--synth-events", type=int, help="events per snapshot")
    syn.add_argument("--affinity", type=float, help="cross-role probability")
    return parser


def read_config_file(path: str | Path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
        out[key] = _coerce(key, value)
    return out


_INT_KEYS = {"seed", "threads", "events_per_snapshot", "walks", "walk_length", "window", "dim", "negatives",
             "epochs", "k", "n_users", "n_developers", "snapshots", "synth_events"}


def _coerce(key: str, value: str):
    if isinstance(DEFAULTS[key], bool):
        return value.lower() in ("1", "true", "yes", "on")
    if key in _INT_KEYS:
        return int(value)
    if isinstance(DEFAULTS[key], float):
        return float(value)
    return value


def resolve_settings(ns: argparse.Namespace) -> dict:
    given = vars(ns).copy()
    settings = dict(DEFAULTS)
    if "config" in given:
        settings.update(read_config_file(given.pop("config")))
    if "manifest" in given:
        data = json.loads(Path(given.pop("manifest")).read_text())
        settings.update({k: v for k, v in data["settings"].items() if k in DEFAULTS})
    if "events_per_snapshot" in given or "calendar_months" in given:
        settings["epsilon_days"] = None
    if "epsilon_days" in given:
        settings["events_per_snapshot"] = None
        settings["calendar_months"] = False
    settings.update({k: v for k, v in given.items() if k in DEFAULTS})
    settings["command"] = ns.command
    settings["verbose"] = given.get("verbose", 0)
    if settings["threads"] <= 1:
        settings["deterministic"] = True
    return settings


# --- config objects from settings --------------------------------------------

def tssn_config(s: dict) -> TssnBuildConfig:
    if s.get("events_per_snapshot"):
        return TssnBuildConfig.by_count(int(s["events_per_snapshot"]), self_weight=s["self_weight"])
    if s.get("calendar_months"):
        return TssnBuildConfig.by_calendar_month(self_weight=s["self_weight"])
    return TssnBuildConfig(epsilon=s["epsilon_days"] * SECONDS_PER_DAY, self_weight=s["self_weight"])


def walk_config(s: dict) -> WalkConfig:
    return WalkConfig(r=s["r"], q=s["q"], alpha=s["alpha"], beta=s["beta"], role_mode=s["role_mode"],
                      role_reference=s["role_reference"], token_mode=s["token_mode"],
                      walks_per_vertex=s["walks"], walk_length=s["walk_length"], rng_seed=s["seed"])


def train_config(s: dict) -> TrainConfig:
    return TrainConfig(dim=s["dim"], window=s["window"], negatives=s["negatives"], epochs=s["epochs"],
                       initial_lr=s["lr"], min_lr=s["lr"] * 1e-4, rng_seed=s["seed"],
                       deterministic=s["deterministic"])


def split_spec(s: dict) -> SplitSpec:
    return SplitSpec(protocol=s["protocol"], test_fraction=s["test_fraction"],
                     restrict_cross_role=s["cross_role_negatives"], operator=s["operator"], l2=s["l2"])


def _seeds(s: dict) -> list[int]:
    return [int(x) for x in str(s["seeds"]).split(",") if x.strip()]


# --- artifacts ----------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, settings: dict, artifacts: list[Path]) -> Path:
    path = out / f"manifest-{settings['command']}.json"
    data = {
        "version": __version__,
        "command": settings["command"],
        "seed": settings["seed"],
        "settings": {k: settings[k] for k in DEFAULTS},
        "artifacts": {p.name: _sha256(p) for p in artifacts},
    }
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing {path}; run `tbw {producer}` with the same --out first")
    return path


def load_ingested(out: Path):
    edges_path = _require(out / "edges.tsv", "ingest")
    roles_path = _require(out / "roles.tsv", "ingest")
    with open(edges_path, encoding="utf-8") as f:
        events = parse_events(f)
    with open(roles_path, encoding="utf-8") as f:
        roles = parse_roles(f)
    return clean_and_index(events, roles)


# --- stages -------------------------------------------------------------------

def cmd_ingest(s: dict, out: Path) -> list[Path]:
    if not s["events"] or not s["roles"]:
        raise UsageError("ingest needs --events and --roles")
    with open(s["events"], encoding="utf-8") as f:
        events = parse_events(f)
    with open(s["roles"], encoding="utf-8") as f:
        roles = parse_roles(f)
    if s["aliases"]:
        with open(s["aliases"], encoding="utf-8") as f:
            events = apply_alias_map(events, parse_aliases(f))
    edges, table = clean_and_index(events, roles)
    with open(out / "edges.tsv", "w", encoding="utf-8") as f:
        write_events(edges, f)
    with open(out / "roles.tsv", "w", encoding="utf-8") as f:
        write_roles(edges, table, f)
    log.info("ingested %d events over %d individuals (%d raw)", len(edges), edges.n_vertices, len(events))
    return [out / "edges.tsv", out / "roles.tsv"]


def _write_snapshot_stats(g, path: Path) -> None:
    with open(path, "w") as f:
        f.write("snapshot\tvertices\tedges\tweight\n")
        for r in snapshot_stats(g):
            f.write(f"{r.snapshot}\t{r.n_vertices}\t{r.n_edges}\t{r.total_weight:g}\n")


def cmd_stats(s: dict, out: Path) -> list[Path]:
    edges, roles = load_ingested(out)
    (out / "ttest.tsv").write_text(role_ttest(edges, roles).table())
    with open(out / "tendency.tsv", "w") as f:
        write_tendency(tendency_ratio(edges, roles), f)
    _write_snapshot_stats(build_tssn(edges, roles, tssn_config(s)), out / "snapshots.tsv")
    return [out / "ttest.tsv", out / "tendency.tsv", out / "snapshots.tsv"]


def cmd_build(s: dict, out: Path) -> list[Path]:
    edges, roles = load_ingested(out)
    g = build_tssn(edges, roles, tssn_config(s))
    with open(out / "tssn.txt", "w") as f:
        dump_graph(g, f)
    _write_snapshot_stats(g, out / "snapshots.tsv")
    log.info("%d snapshots, %d states, %d self-connections", g.n_snapshots, g.n_states, len(g.self_connections))
    return [out / "tssn.txt", out / "snapshots.tsv"]


def _corpus(s: dict, out: Path):
    edges, roles = load_ingested(out)
    g = build_tssn(edges, roles, tssn_config(s))
    return edges, roles, generate_corpus(g, walk_config(s), workers=s["threads"])


def cmd_walk(s: dict, out: Path) -> list[Path]:
    edges, _, corpus = _corpus(s, out)
    with open(out / "corpus.txt", "w", encoding="utf-8") as f:
        write_corpus(corpus, f, edges.keys)
    log.info("%d walks", len(corpus))
    return [out / "corpus.txt"]


def cmd_embed(s: dict, out: Path) -> list[Path]:
    edges, roles, corpus = _corpus(s, out)
    m = sgd_train(corpus, train_config(s))
    with open(out / "embeddings.txt", "w", encoding="utf-8") as f:
        export_embeddings(m, f, edges.keys)
    if walk_config(s).token_mode is TokenMode.SNAPSHOT:
        from .embed import collapse_snapshot_tokens
        m = collapse_snapshot_tokens(m)
    model = fit_scorer(m, edges, np.random.default_rng(s["seed"]), Operator(s["operator"]), s["l2"])
    (out / "classifier.json").write_text(json.dumps(
        {"operator": s["operator"], "weights": model.weights.tolist(), "bias": model.bias}) + "\n")
    return [out / "embeddings.txt", out / "classifier.json"]


def _write_table(rows, path: Path) -> None:
    with open(path, "w", newline="") as f:
        write_report_table(rows, f)


def cmd_evaluate(s: dict, out: Path) -> list[Path]:
    edges, roles = load_ingested(out)
    rep = run_experiment(edges, roles, tssn_config(s), walk_config(s), train_config(s), split_spec(s),
                         _seeds(s), workers=s["threads"])
    _write_table([({}, rep)], out / "report.tsv")
    print(f"{rep.protocol}\tmean AUC {rep.mean:.4f}\tstd {rep.std:.4f}\tseeds {len(rep.aucs)}/{len(rep.results)}")
    if not rep.complete:
        raise RuntimeError("some seeds failed; see report.tsv")
    return [out / "report.tsv"]


def cmd_sweep(s: dict, out: Path) -> list[Path]:
    edges, roles = load_ingested(out)
    grid = {name: _floats(s[f"grid_{name}"]) for name in ("r", "q", "alpha", "beta") if s.get(f"grid_{name}")}
    if not grid:
        raise UsageError("sweep needs at least one --grid-* option")
    rows = parameter_sweep(grid, edges, roles, tssn_config(s), walk_config(s), train_config(s),
                           split_spec(s), _seeds(s), workers=s["threads"])
    _write_table(rows, out / "sweep-seeds.tsv")
    with open(out / "sweep.tsv", "w", newline="") as f:
        write_summary_table(rows, f)
    for params, rep in rows:
        print("\t".join(f"{k}={v}" for k, v in params.items()) + f"\tmean AUC {rep.mean:.4f}")
    return [out / "sweep.tsv", out / "sweep-seeds.tsv"]


def cmd_recommend(s: dict, out: Path) -> list[Path]:
    if not s["target"]:
        raise UsageError("recommend needs --target")
    edges, roles = load_ingested(out)
    with open(_require(out / "embeddings.txt", "embed"), encoding="utf-8") as f:
        m = load_embeddings(f, edges.index)
    if any(isinstance(t, str) and "@" in t for t in m.tokens):
        from .embed import collapse_snapshot_tokens
        m.tokens = [(edges.index[t.rsplit("@", 1)[0]], int(t.rsplit("@", 1)[1])) for t in m.tokens]
        m.index = {t: i for i, t in enumerate(m.tokens)}
        m = collapse_snapshot_tokens(m)
    clf = json.loads(_require(out / "classifier.json", "embed").read_text())
    model = LogisticModel(np.asarray(clf["weights"]), float(clf["bias"]))
    if s["target"] not in edges.index:
        raise KeyError(f"unknown target {s['target']!r}")
    ranked = recommend(m, model, edges.index[s["target"]], s["k"], set(distinct_pairs(edges)), roles,
                       s["cross_role_only"], Operator(clf["operator"]))
    path = out / f"recommend-{s['target']}.tsv"
    with open(path, "w", encoding="utf-8") as f:
        f.write("rank\tkey\trole\tscore\n")
        for i, (v, score) in enumerate(ranked, start=1):
            line = f"{i}\t{edges.keys[v]}\t{roles[v].value}\t{score:.6f}"
            f.write(line + "\n")
            print(line)
    return [path]


def cmd_synth(s: dict, out: Path) -> list[Path]:
    net = generate_synthetic(SyntheticSpec(n_users=s["n_users"], n_developers=s["n_developers"],
                                           snapshots=s["snapshots"], events_per_snapshot=s["synth_events"],
                                           cross_role_affinity=s["affinity"], rng_seed=s["seed"]))
    with open(out / "synthetic-events.tsv", "w", encoding="utf-8") as f:
        write_events(net.edges, f)
    with open(out / "synthetic-roles.tsv", "w", encoding="utf-8") as f:
        write_roles(net.edges, net.roles, f)
    return [out / "synthetic-events.tsv", out / "synthetic-roles.tsv"]


COMMANDS = {
    "ingest": cmd_ingest, "stats": cmd_stats, "build": cmd_build, "walk": cmd_walk, "embed": cmd_embed,
    "evaluate": cmd_evaluate, "sweep": cmd_sweep, "recommend": cmd_recommend, "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        s = resolve_settings(ns)
        for make in (tssn_config, walk_config, train_config, split_spec):
            make(s)
    except (UsageError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"tbw: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if s["verbose"] > 1 else logging.INFO if s["verbose"] else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(s["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        artifacts = COMMANDS[ns.command](s, out)
        write_manifest(out, s, artifacts)
    except UsageError as exc:
        print(f"tbw: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ConfigurationError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"tbw: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"tbw: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""``gedforge`` command line: gen, groundtruth, train, eval, bench, rank.

Every command takes ``--seed``, ``--config`` (a JSON file) and ``--out`` (a
directory). Flags override config keys. On failure a JSON error record goes to
stderr (and to ``<out>/error.json`` when possible) and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from gedforge import __version__
from gedforge.graph import (
    CorpusSpec,
    generate_corpus,
    generate_graph,
    load_dataset,
    parse_graph,
    save_dataset,
    split_indices,
)
from gedforge.metrics import nged, reports_to_csv, top_k
from gedforge.model import Checkpoint, ModelConfig, Scorer, config_hash, init_params
from gedforge.pipeline import (
    GedTable,
    GroundTruthPolicy,
    classic_distance,
    compute_ground_truth,
    evaluate_method,
    load_pairs,
    required_pairs,
    save_pairs,
    train_model,
    write_json,
)
from gedforge.rng import substream

log = logging.getLogger("gedforge")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class CliError(Exception):
    """Bad input detected by the harness itself."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("UsageError", message, None, None)
        sys.exit(EXIT_USAGE)


def _emit_error(kind: str, message: str, command, out) -> None:
    record = {"error": kind, "message": message, "command": command}
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            write_json(record, Path(out) / "error.json")
        except OSError:
            pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            cfg = json.load(f)
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise CliError("config must be a JSON object")
    return cfg


def _opt(args, cfg: dict, name: str, default=None):
    val = getattr(args, name, None)
    if val is not None:
        return val
    return cfg.get(name, default)


def _require(args, cfg, name):
    val = _opt(args, cfg, name)
    if val is None:
        raise CliError(f"missing required option --{name.replace('_', '-')}")
    return val


def _data_dir(args, cfg) -> Path:
    d = Path(_require(args, cfg, "data"))
    if not (d / "dataset.json").exists() or not (d / "manifest.json").exists():
        raise CliError(f"{d} does not hold dataset.json and manifest.json (run gen first)")
    return d


def _load_data(d: Path):
    graphs = load_dataset(d / "dataset.json")
    manifest = json.loads((d / "manifest.json").read_text())
    return graphs, manifest


def _stamp(seed, cfg) -> dict:
    return {"seed": seed, "config_hash": config_hash(cfg), "version": __version__}


# -- commands ----------------------------------------------------------------------


def cmd_gen(args, cfg, out: Path) -> dict:
    spec_keys = {"num_graphs", "min_nodes", "max_nodes", "labels", "edge_prob", "connected", "duplicates"}
    spec = CorpusSpec(**{k: v for k, v in cfg.items() if k in spec_keys})
    if spec.min_nodes < 1 or spec.max_nodes < spec.min_nodes:
        raise CliError("need 1 <= min_nodes <= max_nodes")
    if not 0 <= spec.duplicates < spec.num_graphs:
        raise CliError("duplicates must be in [0, num_graphs)")
    fractions = cfg.get("split", [0.6, 0.2, 0.2])
    graphs = generate_corpus(spec, args.seed)
    split = split_indices(len(graphs), args.seed, fractions)
    save_dataset(graphs, out / "dataset.json")
    manifest = {
        **_stamp(args.seed, cfg),
        "generator": asdict(spec),
        "split_fractions": list(fractions),
        "split": split,
        "num_graphs": len(graphs),
    }
    write_json(manifest, out / "manifest.json")
    return {"graphs": len(graphs), **{k: len(v) for k, v in split.items()}}


def cmd_groundtruth(args, cfg, out: Path) -> dict:
    d = _data_dir(args, cfg)
    graphs, manifest = _load_data(d)
    policy = GroundTruthPolicy(
        exact_max_nodes=int(cfg.get("exact_max_nodes", 10)),
        beam_width=int(cfg.get("beam_width", 100)),
        max_expanded=int(cfg.get("max_expanded", 2_000_000)),
    )
    pairs = required_pairs(manifest["split"])
    t0 = time.perf_counter()
    labels = compute_ground_truth(graphs, pairs, policy, workers=int(_opt(args, cfg, "workers", 1)))
    log.info("labeled %d pairs in %.1fs", len(labels), time.perf_counter() - t0)
    kinds = {"exact": 0, "ub": 0}
    for p in labels:
        kinds[p.kind] += 1
    meta = {
        **_stamp(args.seed, cfg),
        "dataset_config_hash": manifest["config_hash"],
        "dataset_seed": manifest["seed"],
        "policy": asdict(policy),
        "counts": kinds,
    }
    save_pairs(labels, out / "pairs.json", meta)
    return {"pairs": len(labels), **kinds}


def _model_overrides(cfg: dict) -> dict:
    fields = set(ModelConfig.__dataclass_fields__) - {"kind"}
    model = cfg.get("model", {})
    bad = set(model) - fields - {"kind"}
    if bad:
        raise CliError(f"unknown model config keys: {sorted(bad)}")
    return {k: v for k, v in model.items() if k in fields}


def cmd_train(args, cfg, out: Path) -> dict:
    d = _data_dir(args, cfg)
    graphs, manifest = _load_data(d)
    table = GedTable(load_pairs(_require(args, cfg, "pairs")))
    kind = _opt(args, cfg, "model_kind") or cfg.get("model", {}).get("kind", "gsimcnn")

    res = train_model(kind, graphs, manifest["split"], table, args.seed, _model_overrides(cfg), log.info)
    res.checkpoint.meta.update(
        {"run_config_hash": config_hash(cfg), "dataset_config_hash": manifest["config_hash"]}
    )
    res.checkpoint.save(out / "checkpoint.json")
    (out / "trace.csv").write_text(res.trace_csv())
    log.info(
        "trained %d iterations in %.1fs (%.4fs/iter)",
        res.checkpoint.config.iterations,
        res.seconds,
        res.seconds / max(1, res.checkpoint.config.iterations),
    )
    return {"best_iteration": res.checkpoint.iteration, "best_val_loss": res.checkpoint.best_val_loss}


def cmd_eval(args, cfg, out: Path) -> dict:
    d = _data_dir(args, cfg)
    graphs, manifest = _load_data(d)
    table = GedTable(load_pairs(_require(args, cfg, "pairs")))
    methods = _opt(args, cfg, "methods")
    if isinstance(methods, str):
        methods = methods.split(",")
    ckpt_path = _opt(args, cfg, "checkpoint")
    checkpoint = Checkpoint.load(ckpt_path) if ckpt_path else None
    if not methods:
        methods = [checkpoint.config.kind] if checkpoint else ["hungarian", "vj", "hed"]
    ks = tuple(cfg.get("ks", [10, 20]))
    reports = []
    for m in methods:
        if m in ("gsimcnn", "embavg"):
            if checkpoint is None or checkpoint.config.kind != m:
                raise CliError(f"method {m} needs a {m} checkpoint (--checkpoint)")
        elif not (m in ("hungarian", "vj", "hed") or m.startswith("beam:")):
            raise CliError(f"unknown method {m!r}")
        t0 = time.perf_counter()
        rep = evaluate_method(m, graphs, manifest["split"], table, checkpoint, ks)
        log.info("%s evaluated in %.1fs", m, time.perf_counter() - t0)
        rep.meta = {**_stamp(args.seed, cfg), "dataset_config_hash": manifest["config_hash"]}
        if checkpoint is not None and m == checkpoint.config.kind:
            rep.meta["checkpoint_config_hash"] = config_hash(checkpoint.config.to_dict())
        (out / f"report_{m.replace(':', '_')}.json").write_text(rep.to_json() + "\n")
        reports.append(rep)
    (out / "reports.csv").write_text(reports_to_csv(reports))
    return {r.method: r.table_row() for r in reports}


def _loglog_slope(sizes, times) -> float | None:
    xs = [s for s, t in zip(sizes, times) if t > 0]
    ys = [t for t in times if t > 0]
    if len(xs) < 2:
        return None
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def cmd_bench(args, cfg, out: Path) -> dict:
    sizes = cfg.get("sizes", [10, 20, 40, 90])
    reps = int(cfg.get("pairs_per_size", 3))
    labels = int(cfg.get("labels", 3))
    methods = cfg.get("methods", ["hungarian", "vj", "hed", "beam:10", "gsimcnn", "embavg"])
    rng = substream(args.seed, "generation")
    model_cfgs = {
        kind: ModelConfig(kind=kind, input_dim=labels, pad_to=max(sizes), **_model_overrides(cfg))
        for kind in ("gsimcnn", "embavg")
    }
    model_params = {kind: init_params(mc, args.seed) for kind, mc in model_cfgs.items()}
    rows = []
    for n in sizes:
        pairs = [
            (generate_graph(n, float(cfg.get("edge_prob", 0.2)), labels, rng, True),
             generate_graph(n, float(cfg.get("edge_prob", 0.2)), labels, rng, True))
            for _ in range(reps)
        ]
        row = {"max_nodes": n}
        for m in methods:
            if m in model_cfgs:
                flat = [g for pair in pairs for g in pair]
                scorer = Scorer(flat, model_params[m], model_cfgs[m], chunk=1)
            t0 = time.perf_counter()
            if m in model_cfgs:
                scorer.scores([(2 * k, 2 * k + 1) for k in range(reps)])
            else:
                for g1, g2 in pairs:
                    classic_distance(m, g1, g2)
            row[m] = (time.perf_counter() - t0) / reps
        rows.append(row)
    slopes = {m: _loglog_slope(sizes, [r[m] for r in rows]) for m in methods}
    result = {**_stamp(args.seed, cfg), "rows": rows, "loglog_slope": slopes}
    write_json(result, out / "bench.json")
    lines = ["max_nodes," + ",".join(methods)]
    lines += [f"{r['max_nodes']}," + ",".join(f"{r[m]:.6f}" for m in methods) for r in rows]
    (out / "bench.csv").write_text("\n".join(lines) + "\n")
    return {"loglog_slope": slopes}


def rank_table(scores, ids, k, true_nged=None) -> list[dict]:
    top = top_k(scores, k, ids)
    pos = {c: idx for idx, c in enumerate(ids)}
    rows = []
    for r, c in enumerate(top, 1):
        row = {"rank": r, "candidate": c, "predicted": float(scores[pos[c]])}
        if true_nged is not None and c in true_nged:
            row["true_nged"] = true_nged[c]
        rows.append(row)
    return rows


def cmd_rank(args, cfg, out: Path) -> dict:
    d = _data_dir(args, cfg)
    graphs, manifest = _load_data(d)
    checkpoint = Checkpoint.load(_require(args, cfg, "checkpoint"))
    k = int(_opt(args, cfg, "k", 10))
    query = _require(args, cfg, "query")
    q_index = None
    if isinstance(query, int) or str(query).isdigit():
        q_index = int(query)
        if not 0 <= q_index < len(graphs):
            raise CliError(f"query index {q_index} out of range")
        qgraph = graphs[q_index]
    else:
        qgraph = parse_graph(Path(query).read_text(), graphs[0].num_labels)
        if qgraph.num_labels > graphs[0].num_labels:
            raise CliError("query uses labels outside the dataset alphabet")
    candidates = [i for i in range(len(graphs)) if i != q_index]
    pool = list(graphs) + [qgraph]
    qi = len(pool) - 1
    scorer = Scorer(pool, checkpoint.params, checkpoint.config)
    scores = scorer.scores([(qi, c) for c in candidates])
    true_nged = None
    pairs_path = _opt(args, cfg, "pairs")
    if pairs_path and q_index is not None:
        table = GedTable(load_pairs(pairs_path))
        true_nged = {
            c: nged(table.ged(q_index, c), graphs[q_index].n, graphs[c].n)
            for c in candidates
            if (q_index, c) in table
        }
    rows = rank_table(scores, candidates, k, true_nged)
    result = {**_stamp(args.seed, cfg), "query": query, "k": k, "method": checkpoint.config.kind, "top": rows}
    write_json(result, out / "rank.json")
    text = [f"query {query}  top-{k} by {checkpoint.config.kind}"]
    text += [
        f"{r['rank']:>4}  graph {r['candidate']:>6}  sim {r['predicted']:.6f}"
        + (f"  true nGED {r['true_nged']:.4f}" if "true_nged" in r else "")
        for r in rows
    ]
    (out / "rank.txt").write_text("\n".join(text) + "\n")
    return {"top": [r["candidate"] for r in rows]}


COMMANDS = {
    "gen": cmd_gen,
    "groundtruth": cmd_groundtruth,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "rank": cmd_rank,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gedforge", description="Graph similarity toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name != "gen" and name != "bench":
            sp.add_argument("--data", default=None, help="directory written by gen")
        if name in ("groundtruth",):
            sp.add_argument("--workers", type=int, default=None)
        if name in ("train", "eval", "rank"):
            sp.add_argument("--pairs", default=None, help="pair file written by groundtruth")
        if name == "train":
            sp.add_argument("--model-kind", dest="model_kind", choices=["gsimcnn", "embavg"], default=None)
        if name in ("eval", "rank"):
            sp.add_argument("--checkpoint", default=None)
        if name == "eval":
            sp.add_argument("--methods", default=None, help="comma list: gsimcnn,embavg,beam:W,hungarian,vj,hed")
        if name == "rank":
            sp.add_argument("--query", default=None, help="dataset index or graph JSON file")
            sp.add_argument("-k", type=int, default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    out = Path(args.out)
    try:
        cfg = _load_config(args.config)
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](args, cfg, out)
    except Exception as exc:  # every failure becomes an error record
        if args.verbose:
            log.exception("command failed")
        _emit_error(type(exc).__name__, str(exc), args.command, out)
        return EXIT_FAILURE
    sys.stdout.write(json.dumps({"command": args.command, "ok": True, **(summary or {})}, sort_keys=True, default=str) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())

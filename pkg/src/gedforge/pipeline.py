"""Corpus, ground truth, training and evaluation steps shared by the CLI and
the acceptance experiments."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

from gedforge.assignment import ged_bipartite, ged_hed
from gedforge.exact import SearchBudgetExceeded, ged_astar, ged_beam
from gedforge.graph import LabeledGraph
from gedforge.metrics import RankingReport, evaluate, ged_similarity
from gedforge.model import Checkpoint, ModelConfig, Scorer, train

log = logging.getLogger("gedforge")


# -- pairs -----------------------------------------------------------------------


@dataclass(frozen=True)
class PairLabel:
    i: int
    j: int
    ged: int
    kind: str  # "exact" | "ub"


def required_pairs(split: dict[str, list[int]]) -> list[tuple[int, int]]:
    """Pairs the protocol needs: train x train, val x train, test x (train + val).

    Returned with i < j, sorted.
    """
    train, val, test = split["train"], split["val"], split["test"]
    out = set()
    for a_idx, a in enumerate(train):
        for b in train[a_idx + 1 :]:
            out.add((min(a, b), max(a, b)))
    for a in val:
        for b in train:
            out.add((min(a, b), max(a, b)))
    for a in test:
        for b in list(train) + list(val):
            out.add((min(a, b), max(a, b)))
    return sorted(out)


def upper_bound_min(g1: LabeledGraph, g2: LabeledGraph, beam_width: int = 100) -> int:
    return int(
        min(
            ged_beam(g1, g2, beam_width).distance,
            ged_bipartite(g1, g2, "hungarian").distance,
            ged_bipartite(g1, g2, "jv").distance,
        )
    )


@dataclass(frozen=True)
class GroundTruthPolicy:
    exact_max_nodes: int = 10
    beam_width: int = 100
    max_expanded: int = 2_000_000


def label_pair(g1: LabeledGraph, g2: LabeledGraph, policy: GroundTruthPolicy) -> tuple[int, str]:
    if max(g1.n, g2.n) <= policy.exact_max_nodes:
        try:
            res = ged_astar(g1, g2, max_nodes=None, max_expanded=policy.max_expanded)
            return int(res.distance), "exact"
        except SearchBudgetExceeded as exc:
            log.warning("A* budget exhausted (%d states); falling back to min-of-three", exc.expanded)
    return upper_bound_min(g1, g2, policy.beam_width), "ub"


def _label_job(args):
    g1, g2, policy = args
    return label_pair(g1, g2, policy)


def compute_ground_truth(
    graphs: Sequence[LabeledGraph],
    pairs: Sequence[tuple[int, int]],
    policy: GroundTruthPolicy = GroundTruthPolicy(),
    workers: int = 1,
) -> list[PairLabel]:
    jobs = [(graphs[i], graphs[j], policy) for i, j in pairs]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            labels = list(pool.map(_label_job, jobs, chunksize=64))
    else:
        labels = [_label_job(job) for job in jobs]
    return [PairLabel(i, j, d, k) for (i, j), (d, k) in zip(pairs, labels)]


PAIRS_FORMAT = "gedforge-pairs"


def save_pairs(labels: Sequence[PairLabel], path, meta: dict | None = None) -> None:
    doc = {"format": PAIRS_FORMAT, "meta": meta or {}, "pairs": [asdict(p) for p in labels]}
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_pairs(path) -> list[PairLabel]:
    with open(path) as f:
        doc = json.load(f)
    data = doc["pairs"] if isinstance(doc, dict) else doc
    out = []
    for rec in data:
        if rec["kind"] not in ("exact", "ub"):
            raise ValueError(f"bad pair kind {rec['kind']!r}")
        out.append(PairLabel(int(rec["i"]), int(rec["j"]), int(rec["ged"]), rec["kind"]))
    return out


class GedTable:
    """Symmetric lookup of ground-truth GED by graph index."""

    def __init__(self, labels: Sequence[PairLabel]):
        self._d = {}
        for p in labels:
            self._d[(p.i, p.j)] = p.ged
            self._d[(p.j, p.i)] = p.ged

    def __contains__(self, key) -> bool:
        return key in self._d

    def ged(self, i: int, j: int) -> int:
        if i == j:
            return 0
        try:
            return self._d[(i, j)]
        except KeyError:
            raise KeyError(f"no ground truth for pair ({i}, {j})") from None


def split_pairs(split, table: GedTable):
    """(train_pairs, val_pairs) as (i, j, ged) triples."""
    train = split["train"]
    tr = [(a, b, table.ged(a, b)) for k, a in enumerate(train) for b in train[k + 1 :]]
    va = [(a, b, table.ged(a, b)) for a in split["val"] for b in train]
    return tr, va


# -- scoring methods ---------------------------------------------------------------


CLASSIC_METHODS = ("hungarian", "vj", "hed")


def classic_distance(method: str, g1: LabeledGraph, g2: LabeledGraph) -> float:
    if method == "hungarian":
        return ged_bipartite(g1, g2, "hungarian").distance
    if method == "vj":
        return ged_bipartite(g1, g2, "jv").distance
    if method == "hed":
        return ged_hed(g1, g2).distance
    if method.startswith("beam:"):
        return ged_beam(g1, g2, int(method.split(":", 1)[1])).distance
    if method == "astar":
        return ged_astar(g1, g2).distance
    raise ValueError(f"unknown method {method!r}")


def evaluate_method(
    method: str,
    graphs: Sequence[LabeledGraph],
    split: dict[str, list[int]],
    table: GedTable,
    checkpoint: Checkpoint | None = None,
    ks=(10, 20),
) -> RankingReport:
    """Test graphs as queries against train + val candidates, in similarity space."""
    queries = list(split["test"])
    candidates = sorted(split["train"] + split["val"])

    def truth(q, c):
        return ged_similarity(table.ged(q, c), graphs[q].n, graphs[c].n)

    if method in ("gsimcnn", "embavg"):
        if checkpoint is None:
            raise ValueError(f"{method} needs a checkpoint")
        scorer = Scorer(graphs, checkpoint.params, checkpoint.config)
        pairs = [(q, c) for q in queries for c in candidates]
        values = scorer.scores(pairs)
        cache = {p: float(v) for p, v in zip(pairs, values)}
        score: Callable[[int, int], float] = lambda q, c: cache[(q, c)]
    else:

        def score(q, c):
            d = classic_distance(method, graphs[q], graphs[c])
            return ged_similarity(d, graphs[q].n, graphs[c].n)

    return evaluate(score, truth, queries, candidates, ks=ks, method=method)


def train_model(
    kind: str,
    graphs: Sequence[LabeledGraph],
    split,
    table: GedTable,
    seed: int,
    overrides: dict | None = None,
    log_fn=None,
):
    num_labels = max(g.num_labels for g in graphs)
    cfg = ModelConfig(kind=kind, input_dim=num_labels if num_labels > 1 else 1, **(overrides or {}))
    tr, va = split_pairs(split, table)
    return train(graphs, tr, va, cfg, seed, log=log_fn)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")

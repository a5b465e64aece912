"""GED normalization, rank correlation, precision@k and ranking reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


def nged(ged: float, n1: int, n2: int) -> float:
    if n1 < 1 or n2 < 1:
        raise MetricError("graph sizes must be >= 1")
    if ged < 0:
        raise MetricError("GED must be non-negative")
    return ged / ((n1 + n2) / 2)


def ged_to_sim(x: float) -> float:
    if x < 0:
        raise MetricError(f"normalized GED must be non-negative, got {x}")
    return math.exp(-x)


def ged_similarity(ged: float, n1: int, n2: int) -> float:
    return ged_to_sim(nged(ged, n1, n2))


def _check_pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise MetricError("pred and truth must be 1-d vectors of equal length")
    if pred.size < 2:
        raise MetricError("need at least two items to correlate")
    return pred, truth


def spearman_rho(pred, truth) -> float:
    """Pearson correlation of average ranks."""
    pred, truth = _check_pair(pred, truth)
    rp = rankdata(pred) - (pred.size + 1) / 2
    rt = rankdata(truth) - (truth.size + 1) / 2
    denom = math.sqrt(float(rp @ rp) * float(rt @ rt))
    if denom == 0:
        raise MetricError("constant input: rank correlation undefined")
    return float(rp @ rt) / denom


def _count_inversions(seq: list) -> int:
    """Strict inversions (i < j, seq[i] > seq[j]) by merge sort."""
    n = len(seq)
    if n < 2:
        return 0
    buf = list(seq)
    tmp = [None] * n
    inv = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if buf[j] < buf[i]:
                    tmp[k] = buf[j]
                    inv += mid - i
                    j += 1
                else:
                    tmp[k] = buf[i]
                    i += 1
                k += 1
            while i < mid:
                tmp[k] = buf[i]
                i += 1
                k += 1
            while j < hi:
                tmp[k] = buf[j]
                j += 1
                k += 1
        buf, tmp = tmp, buf
        width *= 2
    return inv


def _tied_pairs(values) -> int:
    _, counts = np.unique(values, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def kendall_tau(pred, truth) -> float:
    """Tau-b in O(n log n) (Knight's algorithm)."""
    pred, truth = _check_pair(pred, truth)
    n = pred.size
    n0 = n * (n - 1) // 2
    order = np.lexsort((truth, pred))
    p, t = pred[order], truth[order]
    ties_p = _tied_pairs(p)
    ties_t = _tied_pairs(t)
    # pairs tied in both
    joint = 0
    start = 0
    for i in range(1, n + 1):
        if i == n or p[i] != p[start] or t[i] != t[start]:
            run = i - start
            joint += run * (run - 1) // 2
            start = i
    # with pred sorted (ties by truth), inversions in truth are discordant pairs
    discordant = _count_inversions(t.tolist())
    denom = math.sqrt(float(n0 - ties_p) * float(n0 - ties_t))
    if denom == 0:
        raise MetricError("constant input: rank correlation undefined")
    concordant = n0 - ties_p - ties_t + joint - discordant
    return (concordant - discordant) / denom


def kendall_tau_quadratic(pred, truth) -> float:
    """Direct pair counting; reference for ``kendall_tau``."""
    pred, truth = _check_pair(pred, truth)
    n = pred.size
    conc = disc = tp = tt = 0
    for i in range(n):
        for j in range(i + 1, n):
            dp = np.sign(pred[i] - pred[j])
            dt = np.sign(truth[i] - truth[j])
            if dp == 0 and dt == 0:
                continue
            if dp == 0:
                tp += 1
            elif dt == 0:
                tt += 1
            elif dp == dt:
                conc += 1
            else:
                disc += 1
    denom = math.sqrt(float(conc + disc + tp) * float(conc + disc + tt))
    if denom == 0:
        raise MetricError("constant input: rank correlation undefined")
    return (conc - disc) / denom


def top_k(scores, k: int, ids: Sequence[int] | None = None) -> list[int]:
    """Ids of the k highest scores; ties go to the smaller id."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.arange(scores.size) if ids is None else np.asarray(ids)
    order = np.lexsort((ids, -scores))
    return ids[order[:k]].tolist()


def precision_at_k(pred, truth, k: int, ids: Sequence[int] | None = None) -> float:
    """|top-k(pred) & top-k(truth)| / k on similarity scores (higher = closer)."""
    if k <= 0:
        raise MetricError("k must be positive")
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise MetricError("pred and truth must have equal length")
    if k > pred.size:
        raise MetricError(f"k={k} exceeds {pred.size} candidates")
    return len(set(top_k(pred, k, ids)) & set(top_k(truth, k, ids))) / k


# -- reports -------------------------------------------------------------------


@dataclass
class QueryResult:
    query: int
    candidates: list[int]  # ranked by predicted similarity, best first
    predicted: list[float]
    truth: list[float]
    rho: float | None
    tau: float | None
    p_at: dict[str, float]


@dataclass
class RankingReport:
    method: str
    queries: list[QueryResult]
    mse: float
    rho: float | None
    tau: float | None
    p_at: dict[str, float]
    excluded_rho_tau: int
    pooled_rho: float | None
    pooled_tau: float | None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def table_row(self) -> dict:
        row = {"method": self.method, "mse(1e-3)": self.mse * 1e3, "rho": self.rho, "tau": self.tau}
        for key, val in self.p_at.items():
            row[key] = val
        return row


def reports_to_csv(reports: Sequence[RankingReport]) -> str:
    rows = [r.table_row() for r in reports]
    cols = list(rows[0]) if rows else ["method"]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else (f"{v:.6f}" if isinstance(v, float) else v)) for k, v in row.items()})
    return buf.getvalue()


def _safe(fn, a, b):
    try:
        return fn(a, b)
    except MetricError:
        return None


def evaluate(
    score: Callable[[int, int], float],
    truth: Callable[[int, int], float],
    queries: Sequence[int],
    candidates: Sequence[int],
    ks: Sequence[int] = (10, 20),
    method: str = "",
) -> RankingReport:
    """Score every query against every candidate and aggregate.

    ``score`` and ``truth`` return similarities for (query, candidate). Per-query
    rho/tau that are undefined (a constant vector) are excluded and counted.
    """
    candidates = list(candidates)
    if not queries or not candidates:
        raise MetricError("need at least one query and one candidate")
    results = []
    all_pred, all_true = [], []
    for q in queries:
        pred = np.array([score(q, c) for c in candidates], dtype=np.float64)
        true = np.array([truth(q, c) for c in candidates], dtype=np.float64)
        all_pred.append(pred)
        all_true.append(true)
        rank = np.lexsort((np.asarray(candidates), -pred))
        p_at = {f"p@{k}": precision_at_k(pred, true, k, candidates) for k in ks if k <= len(candidates)}
        results.append(
            QueryResult(
                query=q,
                candidates=[candidates[i] for i in rank],
                predicted=pred[rank].tolist(),
                truth=true[rank].tolist(),
                rho=_safe(spearman_rho, pred, true),
                tau=_safe(kendall_tau, pred, true),
                p_at=p_at,
            )
        )
    pred_all = np.concatenate(all_pred)
    true_all = np.concatenate(all_true)
    mse = float(np.mean((pred_all - true_all) ** 2))
    rhos = [r.rho for r in results if r.rho is not None]
    taus = [r.tau for r in results if r.tau is not None]
    excluded = sum(1 for r in results if r.rho is None or r.tau is None)
    p_keys = results[0].p_at.keys()
    return RankingReport(
        method=method,
        queries=results,
        mse=mse,
        rho=float(np.mean(rhos)) if rhos else None,
        tau=float(np.mean(taus)) if taus else None,
        p_at={k: float(np.mean([r.p_at[k] for r in results])) for k in p_keys},
        excluded_rho_tau=excluded,
        pooled_rho=_safe(spearman_rho, pred_all, true_all),
        pooled_tau=_safe(kendall_tau, pred_all, true_all),
    )

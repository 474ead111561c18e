"""Diagnostics: accuracy-efficiency score, regime partitioning and fold statistics."""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

from .core import GroupProfile, RolloutRecord, group_by_query

EASY = "Easy"
WORTHY = "Worthy"
UNSOLVABLE = "Unsolvable"
REGIMES = (EASY, WORTHY, UNSOLVABLE)


def eta(acc_method: float, tok_method: float, acc_vanilla: float, tok_vanilla: float) -> float:
    """Accuracy ratio times inverse token ratio against the vanilla policy."""
    if acc_vanilla == 0 or tok_method == 0:
        raise ValueError("eta undefined for zero vanilla accuracy or zero method tokens")
    if min(acc_method, tok_method, acc_vanilla, tok_vanilla) < 0:
        raise ValueError("eta inputs must be non-negative")
    return (acc_method / acc_vanilla) * (tok_vanilla / tok_method)


def accuracy(records: Iterable[RolloutRecord]) -> float:
    """Fraction of rollouts with a correct boxed answer; folds earn no credit."""
    recs = list(records)
    if not recs:
        raise ValueError("accuracy of an empty log")
    return sum(r.is_correct for r in recs) / len(recs)


def mean_tokens(records: Iterable[RolloutRecord]) -> float:
    recs = list(records)
    if not recs:
        raise ValueError("mean tokens of an empty log")
    return sum(r.think_tokens for r in recs) / len(recs)


def regime_of_count(n_correct: int, k: int) -> str:
    if n_correct == k:
        return EASY
    if n_correct == 0:
        return UNSOLVABLE
    return WORTHY


def partition_regimes(vanilla_profiles: Sequence[GroupProfile], k: int) -> dict[str, str]:
    out = {}
    for prof in vanilla_profiles:
        if prof.k_rollouts != k:
            raise ValueError(f"{prof.query_id}: profile built from {prof.k_rollouts} rollouts, expected {k}")
        out[prof.query_id] = regime_of_count(prof.n_correct, k)
    return out


def regime_token_ratio(
    method_logs: Sequence[RolloutRecord],
    vanilla_logs: Sequence[RolloutRecord],
    partition: Mapping[str, str],
) -> dict[str, float | None]:
    """Per regime: mean method think tokens / mean vanilla think tokens (None if empty)."""
    out: dict[str, float | None] = {}
    for regime in REGIMES:
        qids = {q for q, r in partition.items() if r == regime}
        m = [r.think_tokens for r in method_logs if r.query_id in qids]
        v = [r.think_tokens for r in vanilla_logs if r.query_id in qids]
        if not m or not v or sum(v) == 0:
            out[regime] = None
        else:
            out[regime] = (sum(m) / len(m)) / (sum(v) / len(v))
    return out


def default_bucket_edges(k: int = 16) -> list[float]:
    return [i / k for i in range(k + 1)]


def fold_rate_curve(
    method_logs: Sequence[RolloutRecord],
    vanilla_profiles: Sequence[GroupProfile],
    bucket_edges: Sequence[float] | None = None,
) -> list[dict[str, float | int | None]]:
    """Fraction of method rollouts that abstained, bucketed by vanilla success rate.

    Buckets are half-open ``[lo, hi)`` except the last, which includes 1.0.
    """
    edges = list(bucket_edges) if bucket_edges is not None else default_bucket_edges()
    if len(edges) < 2 or edges[0] != 0.0 or edges[-1] != 1.0 or any(a >= b for a, b in zip(edges, edges[1:])):
        raise ValueError("bucket edges must increase strictly from 0 to 1")
    s0 = {p.query_id: p.success_rate for p in vanilla_profiles}
    nb = len(edges) - 1
    folds = [0] * nb
    totals = [0] * nb
    for rec in method_logs:
        if rec.query_id not in s0:
            continue
        b = _bucket(s0[rec.query_id], edges)
        totals[b] += 1
        folds[b] += rec.abstained
    return [
        {"lo": edges[i], "hi": edges[i + 1], "n": totals[i], "fold_rate": folds[i] / totals[i] if totals[i] else None}
        for i in range(nb)
    ]


def _bucket(x: float, edges: Sequence[float]) -> int:
    for i in range(len(edges) - 2):
        if x < edges[i + 1]:
            return i
    return len(edges) - 2


def fold_pvalue(tau: float, k: int) -> float:
    """P(0 successes in k | s = tau), the one-sided p-value against s >= tau."""
    if not (0 < tau < 1) or k < 1:
        raise ValueError("need tau in (0, 1) and k >= 1")
    return (1.0 - tau) ** k


def fold_posterior(tau: float, k: int) -> float:
    """P(s < tau | 0 of k) under a uniform prior: the Beta(1, k+1) CDF at tau."""
    if not (0 < tau <= 1) or k < 1:
        raise ValueError("need tau in (0, 1] and k >= 1")
    return 1.0 - (1.0 - tau) ** (k + 1)


def misroute_probability(s: float, k: int) -> float:
    """Probability a query of true solvability s shows zero successes in k rollouts."""
    if not (0 <= s <= 1) or k < 1:
        raise ValueError("need s in [0, 1] and k >= 1")
    return (1.0 - s) ** k


def fold_stats_table(k: int, taus: Sequence[float]) -> list[dict[str, float]]:
    return [
        {
            "tau": t,
            "p_value": fold_pvalue(t, k),
            "confidence": 1.0 - fold_pvalue(t, k),
            "posterior": fold_posterior(t, k),
        }
        for t in taus
    ]


def report(
    method_logs: Sequence[RolloutRecord],
    vanilla_logs: Sequence[RolloutRecord],
    vanilla_profiles: Sequence[GroupProfile],
    k: int,
    bucket_edges: Sequence[float] | None = None,
) -> dict:
    partition = partition_regimes(vanilla_profiles, k)
    acc_m, acc_v = accuracy(method_logs), accuracy(vanilla_logs)
    tok_m, tok_v = mean_tokens(method_logs), mean_tokens(vanilla_logs)
    counts = {r: sum(1 for v in partition.values() if v == r) for r in REGIMES}
    by_q = group_by_query(method_logs)
    return {
        "accuracy": {"method": acc_m, "vanilla": acc_v},
        "mean_think_tokens": {"method": tok_m, "vanilla": tok_v},
        "eta": eta(acc_m, tok_m, acc_v, tok_v) if acc_v > 0 and tok_m > 0 else None,
        "fold_rate": sum(r.abstained for r in method_logs) / len(method_logs),
        "regime_counts": counts,
        "regime_token_ratio": regime_token_ratio(method_logs, vanilla_logs, partition),
        "fold_rate_curve": fold_rate_curve(method_logs, vanilla_profiles, bucket_edges or default_bucket_edges(k)),
        "n_queries": len(by_q),
    }

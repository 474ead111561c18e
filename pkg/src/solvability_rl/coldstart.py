"""Cold-start demonstration construction from offline group profiles.

Every profiled query receives exactly one demonstration: zero-success queries
become fold targets, and solvable queries are split by efficient cost into a
short-solve half and a hero-call half.
"""

from __future__ import annotations

import dataclasses
import math
import random
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .core import (
    FOLD_THINK,
    UNSOLVABLE,
    DataIntegrityError,
    FormatError,
    GroupProfile,
    RewardConfig,
    RolloutRecord,
    StructuredResponse,
    count_think_tokens,
    parse_response,
    serialize_response,
)

SHORT_SOLVE = "ShortSolve"
HERO_CALL = "HeroCall"
NICE_FOLD = "NiceFold"
LABELS = (SHORT_SOLVE, HERO_CALL, NICE_FOLD)


@dataclass(frozen=True)
class Demonstration:
    query_id: str
    behavior_label: str
    target_text: str
    source_cost: int

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "Demonstration":
        try:
            return cls(str(obj["query_id"]), str(obj["behavior_label"]), str(obj["target_text"]), int(obj["source_cost"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad demonstration: {exc!r}") from exc


@dataclass(frozen=True)
class PoolEntry:
    """A profiled query together with the rollouts its profile was built from.

    ``traces`` optionally maps group_index to the reasoning text of that rollout;
    rollouts without text get a placeholder naming their origin and length.
    """

    query_id: str
    profile: GroupProfile
    rollouts: tuple[RolloutRecord, ...]
    traces: Mapping[int, str] = field(default_factory=dict)


def split_threshold(efficient_costs: Sequence[float], rho: float) -> float:
    """Nearest-rank rho-quantile: the ceil(rho*n)-th smallest value."""
    if not efficient_costs:
        raise ValueError("split_threshold needs at least one efficient cost")
    if not (0 < rho < 1):
        raise ValueError(f"rho must be in (0, 1), got {rho}")
    values = sorted(efficient_costs)
    rank = max(1, math.ceil(round(rho * len(values), 9)))
    return values[rank - 1]


def nice_fold_target() -> str:
    return serialize_response(StructuredResponse(0.0, 0.0, FOLD_THINK, UNSOLVABLE))


def _trace_text(entry: PoolEntry, rec: RolloutRecord) -> str:
    text = entry.traces.get(rec.group_index)
    if text is not None:
        return text
    return f"[retained trace {entry.query_id}#{rec.group_index}: {rec.think_tokens} think tokens]"


def _shortest(correct: list[RolloutRecord]) -> RolloutRecord:
    return min(correct, key=lambda r: (r.think_tokens, r.group_index))


def _closest(correct: list[RolloutRecord], target: int) -> RolloutRecord:
    return min(correct, key=lambda r: (abs(r.think_tokens - target), r.think_tokens, r.group_index))


def construct(pool: Sequence[PoolEntry], rho: float, cfg: RewardConfig) -> list[Demonstration]:
    """Exhaustive three-way split of the pool into demonstration targets (pool order kept)."""
    solvable = [e for e in pool if e.profile.success_rate >= cfg.eps_abs]
    for e in solvable:
        if e.profile.efficient_cost is None or e.profile.budget_target is None:
            raise DataIntegrityError(f"{e.query_id}: solvable profile lacks efficient cost")
    q_split = split_threshold([e.profile.efficient_cost for e in solvable], rho) if solvable else math.inf

    demos = []
    seen: set[str] = set()
    for entry in pool:
        if entry.query_id in seen:
            raise DataIntegrityError(f"{entry.query_id}: duplicated in pool")
        seen.add(entry.query_id)
        prof = entry.profile
        if prof.success_rate < cfg.eps_abs:
            demos.append(Demonstration(entry.query_id, NICE_FOLD, nice_fold_target(), 0))
            continue
        correct = [r for r in entry.rollouts if r.is_correct]
        if not correct:
            raise DataIntegrityError(f"{entry.query_id}: solvable profile but no correct rollouts supplied")
        if prof.efficient_cost <= q_split:
            label, kept = SHORT_SOLVE, _shortest(correct)
        else:
            label, kept = HERO_CALL, _closest(correct, prof.efficient_cost)
        if kept.answer_text == UNSOLVABLE:
            raise DataIntegrityError(f"{entry.query_id}: retained trace has the abstention answer")
        target = StructuredResponse(
            round(prof.success_rate, 2),
            round(prof.budget_target, 2),
            _trace_text(entry, kept),
            kept.answer_text,
        )
        demos.append(Demonstration(entry.query_id, label, serialize_response(target), kept.think_tokens))
    return demos


def balance(
    demos: Sequence[Demonstration],
    caps: Mapping[str, int | None] | None = None,
    seed: int = 0,
) -> list[Demonstration]:
    """Per-label uniform subsample down to ``caps``; labels without a cap keep everything."""
    caps = caps or {}
    rng = random.Random(seed)
    keep: set[int] = set()
    for label in LABELS:
        idx = [i for i, d in enumerate(demos) if d.behavior_label == label]
        cap = caps.get(label)
        if cap is None:
            keep.update(idx)
            continue
        if cap < 0 or cap > len(idx):
            raise ValueError(f"cap {cap} for {label} exceeds the {len(idx)} available demonstrations")
        keep.update(rng.sample(idx, cap))
    unknown = set(caps) - set(LABELS)
    if unknown:
        raise ValueError(f"unknown labels in caps: {sorted(unknown)}")
    return [d for i, d in enumerate(demos) if i in keep]


def summarize(demos: Sequence[Demonstration]) -> dict[str, dict[str, float]]:
    """Per-label count and mean think-token length of the demonstrations."""
    out: dict[str, dict[str, float]] = {}
    for label in LABELS:
        rows = [d for d in demos if d.behavior_label == label]
        lengths = []
        for d in rows:
            if label == NICE_FOLD:
                parsed = parse_response(d.target_text)
                lengths.append(count_think_tokens(parsed.think_text) if parsed else 0)
            else:
                lengths.append(d.source_cost)
        out[label] = {
            "count": len(rows),
            "mean_think_tokens": (sum(lengths) / len(lengths)) if lengths else 0.0,
        }
    return out

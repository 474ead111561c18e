"""Group statistics over K rollouts of one query: success rate and efficient solution cost."""

from __future__ import annotations

import math
from typing import Sequence

from .core import GroupProfile, RewardConfig, RolloutRecord


def group_success_rate(group: Sequence[RolloutRecord]) -> float:
    if not group:
        raise ValueError("empty rollout group")
    return sum(1 for r in group if r.is_correct) / len(group)


def efficient_cost(correct_costs: Sequence[int], p: float) -> int:
    """Mean of the shortest max(1, ceil(p*n)) costs, rounded half-up to an integer."""
    if not correct_costs:
        raise ValueError("efficient_cost needs at least one correct rollout")
    if not (0 < p <= 1):
        raise ValueError(f"p must be in (0, 1], got {p}")
    costs = sorted(correct_costs)
    # guard against 0.3*10 == 3.0000000000000004 style ceilings
    m = max(1, math.ceil(round(p * len(costs), 9)))
    total = sum(costs[:m])
    return (2 * total + m) // (2 * m)


def build_profile(group: Sequence[RolloutRecord], cfg: RewardConfig) -> GroupProfile:
    if not group:
        raise ValueError("empty rollout group")
    qid = group[0].query_id
    if any(r.query_id != qid for r in group):
        raise ValueError("rollout group mixes query ids")
    costs = tuple(sorted(r.think_tokens for r in group if r.is_correct))
    rate = len(costs) / len(group)
    if not costs:
        return GroupProfile(qid, len(group), rate, costs)
    eff = efficient_cost(costs, cfg.percentile_p)
    return GroupProfile(qid, len(group), rate, costs, eff, eff / cfg.l_max)


def profile_groups(groups: dict[str, list[RolloutRecord]], cfg: RewardConfig) -> list[GroupProfile]:
    return [build_profile(groups[q], cfg) for q in sorted(groups)]

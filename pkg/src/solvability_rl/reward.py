"""Composite investment-aware reward and group-relative advantages.

The total reward for one trajectory is the sum of a solve-or-fold value term,
a correctness-gated efficiency bonus and a calibration term on the declared
(solvability, budget) pair. Each part can be switched off through the
``enable_*`` toggles of :class:`RewardConfig` for ablations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .core import GroupProfile, RewardConfig, RolloutRecord


@dataclass(frozen=True)
class RewardBreakdown:
    r_val: float
    r_eff: float
    r_cal: float
    total: float

    def to_dict(self) -> dict[str, float]:
        return {"r_val": self.r_val, "r_eff": self.r_eff, "r_cal": self.r_cal, "total": self.total}


def fail_penalty(cost: int, cfg: RewardConfig) -> float:
    if cost < 0 or cost > cfg.l_max:
        raise ValueError(f"cost {cost} outside [0, {cfg.l_max}]")
    return cfg.alpha_fail * cost / cfg.l_max


def r_val(record: RolloutRecord, profile: GroupProfile, cfg: RewardConfig) -> float:
    if record.abstained:
        if not cfg.enable_fold_gate:
            return 0.0
        return cfg.delta if profile.success_rate < cfg.eps_abs else -cfg.lambda_
    if record.is_correct:
        return cfg.r_plus
    return -fail_penalty(record.think_tokens, cfg)


def r_eff(record: RolloutRecord, profile: GroupProfile, cfg: RewardConfig) -> float:
    if not (cfg.enable_eff and record.is_correct and profile.success_rate > cfg.tau):
        return 0.0
    assert profile.efficient_cost is not None, "solvable profile without efficient cost"
    return cfg.beta * max(0.0, 1.0 - record.think_tokens / profile.efficient_cost)


def budget_loss(b_hat: float, b_star: float, mu: float) -> float:
    gap = abs(b_hat - b_star)
    return mu * gap if b_hat < b_star else gap


def r_cal(record: RolloutRecord, profile: GroupProfile, cfg: RewardConfig) -> float:
    s_hat = record.predicted_solvability
    b_hat = record.predicted_budget
    # missing estimates are scored as maximally miscalibrated
    missing = not record.format_valid or s_hat is None or b_hat is None
    out = 0.0
    if profile.success_rate >= cfg.eps_abs:
        b_star = profile.budget_target
        assert b_star is not None, "solvable profile without budget target"
        if cfg.enable_cal_solv:
            out -= cfg.gamma_s * (1.0 if missing else abs(s_hat - profile.success_rate))
        if cfg.enable_cal_bud:
            if missing:
                loss = max(budget_loss(0.0, b_star, cfg.mu), budget_loss(1.0, b_star, cfg.mu))
            else:
                loss = budget_loss(b_hat, b_star, cfg.mu)
            out -= cfg.gamma_b * loss
    else:
        if cfg.enable_cal_solv:
            out -= cfg.gamma_s_prime * (1.0 if missing else s_hat)
        if cfg.enable_cal_bud:
            out -= cfg.gamma_b_prime * (1.0 if missing else b_hat)
    return out


def composite(record: RolloutRecord, profile: GroupProfile, cfg: RewardConfig) -> RewardBreakdown:
    if record.query_id != profile.query_id:
        raise ValueError(f"record for {record.query_id!r} scored against profile of {profile.query_id!r}")
    v = r_val(record, profile, cfg)
    e = r_eff(record, profile, cfg)
    c = r_cal(record, profile, cfg)
    return RewardBreakdown(v, e, c, v + e + c)


def group_advantages(rewards: Sequence[float], eps_norm: float = 1e-6) -> list[float]:
    """(R - mean) / (population std + eps_norm) within one rollout group."""
    k = len(rewards)
    if k < 2:
        raise ValueError("group-relative advantages need at least 2 rollouts")
    mean = math.fsum(rewards) / k
    std = math.sqrt(math.fsum((r - mean) ** 2 for r in rewards) / k)
    return [(r - mean) / (std + eps_norm) for r in rewards]

"""GRPO over a tabular categorical policy in the synthetic world.

Each rollout is a three-step decision sequence (declared solvability bucket,
budget bucket, solve/fold). The sequence stands in for the generated tokens of
a language model: the clipped surrogate is averaged over the three steps
exactly as the token-level objective averages over tokens.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import synthworld as sw
from .core import GroupProfile, RewardConfig, RolloutRecord, TrainConfig
from .profiler import build_profile
from .reward import composite, fail_penalty, group_advantages
from .synthworld import PolicyDecision, SynthQuery, World

CLASSES = sw.CLASSES
N_STEPS = 3
SOLVE, FOLD = 0, 1


class TrainingError(RuntimeError):
    pass


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class PolicyParams:
    """Per-class logits of the three decision heads (rows follow ``CLASSES``)."""

    solv: np.ndarray
    budget: np.ndarray
    commit: np.ndarray

    @classmethod
    def initial(cls, n_solv: int = 8, n_budget: int = 8, fold_prob: float = 0.5) -> "PolicyParams":
        c = len(CLASSES)
        commit = np.zeros((c, 2))
        commit[:, FOLD] = math.log(fold_prob / (1.0 - fold_prob))
        return cls(np.zeros((c, n_solv)), np.zeros((c, n_budget)), commit)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.solv.copy(), self.budget.copy(), self.commit.copy())

    @property
    def heads(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.solv, self.budget, self.commit

    def probs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _softmax(self.solv), _softmax(self.budget), _softmax(self.commit)

    def flat(self) -> np.ndarray:
        return np.concatenate([h.ravel() for h in self.heads])

    @classmethod
    def from_flat(cls, vec: np.ndarray, like: "PolicyParams") -> "PolicyParams":
        out = []
        i = 0
        for h in like.heads:
            out.append(vec[i : i + h.size].reshape(h.shape).copy())
            i += h.size
        return cls(*out)

    def is_finite(self) -> bool:
        return all(np.isfinite(h).all() for h in self.heads)

    def to_dict(self) -> dict[str, Any]:
        return {
            "classes": list(CLASSES),
            "solv_logits": self.solv.tolist(),
            "budget_logits": self.budget.tolist(),
            "commit_logits": self.commit.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PolicyParams":
        if list(d.get("classes", [])) != list(CLASSES):
            raise ValueError(f"policy classes must be {list(CLASSES)}")
        p = cls(
            np.asarray(d["solv_logits"], dtype=float),
            np.asarray(d["budget_logits"], dtype=float),
            np.asarray(d["commit_logits"], dtype=float),
        )
        if p.commit.shape != (len(CLASSES), 2) or p.solv.shape[0] != len(CLASSES) or p.budget.shape[0] != len(CLASSES):
            raise ValueError("policy logit shapes do not match the class set")
        if not p.is_finite():
            raise ValueError("policy logits must be finite")
        return p


def bucket_value(index: int, n: int) -> float:
    return (index + 0.5) / n


def class_index(q: SynthQuery) -> int:
    return CLASSES.index(q.class_label)


def _inverse_cdf(probs: np.ndarray, u: float) -> int:
    i = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(i, len(probs) - 1)


def sample_decision(policy: PolicyParams, q: SynthQuery, rng: np.random.Generator, probs=None) -> PolicyDecision:
    ps, pb, pc = probs if probs is not None else policy.probs()
    c = class_index(q)
    u = rng.random(3)
    i = _inverse_cdf(ps[c], u[0])
    j = _inverse_cdf(pb[c], u[1])
    f = _inverse_cdf(pc[c], u[2])
    return PolicyDecision(
        i, j, f == FOLD,
        bucket_value(i, ps.shape[1]), bucket_value(j, pb.shape[1]),
        (float(ps[c, i]), float(pb[c, j]), float(pc[c, f])),
    )


def rollout_group(
    policy: PolicyParams,
    q: SynthQuery,
    k: int,
    rng: np.random.Generator,
    world: World,
    probs=None,
) -> tuple[list[RolloutRecord], list[PolicyDecision]]:
    if k < 2:
        raise ValueError("rollout_group needs k >= 2")
    probs = probs if probs is not None else policy.probs()
    decisions, records = [], []
    for g in range(k):
        d = sample_decision(policy, q, rng, probs)
        decisions.append(d)
        records.append(sw.sample_rollout(q, d, rng, world, g))
    return records, decisions


# --- surrogate objective ----------------------------------------------------


@dataclass
class SurrogateBatch:
    """Flattened rollout data for one update: indices, advantages, old log-probs."""

    cls: np.ndarray
    actions: np.ndarray  # (N, 3): solvability bucket, budget bucket, commit
    adv: np.ndarray
    old_logp: np.ndarray  # (N, 3)
    weight: np.ndarray  # per-rollout weight; sums to 1 over the batch

    @classmethod
    def build(cls, policy: PolicyParams, rows: Sequence[tuple[int, PolicyDecision, float]], weights: Sequence[float]):
        c = np.array([r[0] for r in rows], dtype=int)
        a = np.array([[d.solv_bucket, d.budget_bucket, FOLD if d.fold else SOLVE] for _, d, _ in rows], dtype=int)
        adv = np.array([r[2] for r in rows], dtype=float)
        return cls(c, a, adv, step_logprobs(policy, c, a), np.asarray(weights, dtype=float))


def step_logprobs(policy: PolicyParams, c: np.ndarray, a: np.ndarray) -> np.ndarray:
    out = np.empty((len(c), N_STEPS))
    for t, head in enumerate(policy.heads):
        out[:, t] = _log_softmax(head)[c, a[:, t]]
    return out


def surrogate_terms(policy: PolicyParams, batch: SurrogateBatch, clip_eps: float, clip: bool = True) -> np.ndarray:
    """Per-rollout, per-step surrogate terms, shape (N, 3)."""
    ratio = np.exp(step_logprobs(policy, batch.cls, batch.actions) - batch.old_logp)
    adv = batch.adv[:, None]
    term = ratio * adv
    if clip:
        term = np.minimum(term, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)
    return term


def surrogate(policy: PolicyParams, batch: SurrogateBatch, clip_eps: float, clip: bool = True) -> float:
    term = surrogate_terms(policy, batch, clip_eps, clip)
    return float((batch.weight * term.mean(axis=1)).sum())


def surrogate_grad(policy: PolicyParams, batch: SurrogateBatch, clip_eps: float, clip: bool = True) -> PolicyParams:
    """Analytic gradient of :func:`surrogate` with respect to every logit."""
    logp = step_logprobs(policy, batch.cls, batch.actions)
    ratio = np.exp(logp - batch.old_logp)
    adv = batch.adv[:, None]
    coef = ratio * adv
    if clip:
        # the min picks the constant clipped branch when the ratio has moved past the band in the advantage's favour
        frozen = ((adv > 0) & (ratio > 1.0 + clip_eps)) | ((adv < 0) & (ratio < 1.0 - clip_eps))
        coef = np.where(frozen, 0.0, coef)
    coef = coef * (batch.weight[:, None] / N_STEPS)
    grads = []
    for t, head in enumerate(policy.heads):
        p = _softmax(head)
        g = np.zeros_like(head)
        # d log p[a] / d logits = onehot(a) - p
        np.add.at(g, (batch.cls, batch.actions[:, t]), coef[:, t])
        sums = np.zeros(head.shape[0])
        np.add.at(sums, batch.cls, coef[:, t])
        g -= sums[:, None] * p
        grads.append(g)
    return PolicyParams(*grads)


# --- training ---------------------------------------------------------------


def rollout_value(rec: RolloutRecord, cfg: RewardConfig, cost_weight: float) -> float:
    """Per-rollout net return: value of a correct answer, failure penalty, global cost pressure."""
    v = -cost_weight * rec.think_tokens / cfg.l_max
    if rec.is_correct:
        v += cfg.r_plus
    elif not rec.abstained:
        v -= fail_penalty(rec.think_tokens, cfg)
    return v


@dataclass
class StepStats:
    step: int
    mean_reward: float
    accuracy: float
    fold_rate: dict[str, float | None]
    mean_cost: dict[str, float | None]
    mean_declared_budget: dict[str, float | None]
    objective: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "mean_reward": self.mean_reward,
            "accuracy": self.accuracy,
            "fold_rate": self.fold_rate,
            "mean_cost": self.mean_cost,
            "mean_declared_budget": self.mean_declared_budget,
            "objective": self.objective,
        }


@dataclass
class GroupResult:
    query: SynthQuery
    records: list[RolloutRecord]
    decisions: list[PolicyDecision]
    profile: GroupProfile
    rewards: list[float]
    advantages: list[float] = field(default_factory=list)


def score_group(
    q: SynthQuery,
    records: list[RolloutRecord],
    decisions: list[PolicyDecision],
    rcfg: RewardConfig,
    eps_norm: float,
) -> GroupResult:
    profile = build_profile(records, rcfg)
    rewards = [composite(r, profile, rcfg).total for r in records]
    return GroupResult(q, records, decisions, profile, rewards, group_advantages(rewards, eps_norm))


def _class_mean(values: dict[str, list[float]]) -> dict[str, float | None]:
    return {c: (sum(v) / len(v) if v else None) for c, v in values.items()}


def grpo_step(
    policy: PolicyParams,
    batch: Sequence[SynthQuery],
    world: World,
    rcfg: RewardConfig,
    tcfg: TrainConfig,
    rngs: Sequence[np.random.Generator],
    step: int = 0,
) -> tuple[PolicyParams, StepStats, list[GroupResult]]:
    """One on-policy update: profile each group, score, normalize, ascend the clipped surrogate."""
    if not batch:
        raise ValueError("empty prompt batch")
    probs = policy.probs()
    groups = []
    for q, rng in zip(batch, rngs):
        records, decisions = rollout_group(policy, q, tcfg.k_rollouts, rng, world, probs)
        groups.append(score_group(q, records, decisions, rcfg, tcfg.eps_norm))

    n = len(groups) * tcfg.k_rollouts
    rows = [(class_index(g.query), d, a) for g in groups for d, a in zip(g.decisions, g.advantages)]
    sb = SurrogateBatch.build(policy, rows, [1.0 / n] * n)
    grad = surrogate_grad(policy, sb, tcfg.clip_eps)
    new = PolicyParams(*(h + tcfg.learn_rate * g for h, g in zip(policy.heads, grad.heads)))
    if not new.is_finite():
        raise TrainingError(
            f"non-finite logits after step {step}: "
            f"max|grad|={max(float(np.abs(g).max()) for g in grad.heads):.3g}, "
            f"policy={json.dumps(policy.to_dict())}"
        )
    return new, _stats(step, groups, rcfg, tcfg), groups


def _stats(step: int, groups: list[GroupResult], rcfg: RewardConfig, tcfg: TrainConfig) -> StepStats:
    folds: dict[str, list[float]] = {c: [] for c in CLASSES}
    costs: dict[str, list[float]] = {c: [] for c in CLASSES}
    declared: dict[str, list[float]] = {c: [] for c in CLASSES}
    rewards, values, correct = [], [], 0
    for g in groups:
        label = g.query.class_label
        for rec, rew in zip(g.records, g.rewards):
            folds[label].append(float(rec.abstained))
            costs[label].append(rec.think_tokens / rcfg.l_max)
            declared[label].append(rec.predicted_budget)
            rewards.append(rew)
            values.append(rollout_value(rec, rcfg, tcfg.objective_cost_weight))
            correct += rec.is_correct
    return StepStats(
        step,
        math.fsum(rewards) / len(rewards),
        correct / len(rewards),
        _class_mean(folds),
        _class_mean(costs),
        _class_mean(declared),
        math.fsum(values) / len(values),
    )


def batch_for_step(world: World, seed: int, step: int, size: int) -> tuple[list[SynthQuery], list[np.random.Generator]]:
    n = len(world.queries)
    pick = sw.substream(seed, sw.STREAM_TRAIN, step, 0).choice(n, size=min(size, n), replace=False)
    queries = [world.queries[int(i)] for i in pick]
    rngs = [sw.substream(seed, sw.STREAM_TRAIN, step, 1 + slot) for slot in range(len(queries))]
    return queries, rngs


def train(
    world: World,
    rcfg: RewardConfig,
    tcfg: TrainConfig,
    step_count: int | None = None,
    policy: PolicyParams | None = None,
    seed: int | None = None,
) -> tuple[PolicyParams, list[StepStats]]:
    steps = tcfg.steps if step_count is None else step_count
    if steps < 1:
        raise ValueError("step_count must be >= 1")
    seed = tcfg.seed if seed is None else seed
    if policy is None:
        policy = PolicyParams.initial(tcfg.solv_buckets, tcfg.budget_buckets, tcfg.init_fold_prob)
    history = []
    for step in range(steps):
        queries, rngs = batch_for_step(world, seed, step, tcfg.prompt_batch)
        policy, stats, _ = grpo_step(policy, queries, world, rcfg, tcfg, rngs, step)
        history.append(stats)
    return policy, history


# --- evaluation -------------------------------------------------------------


def objective_value(
    policy: PolicyParams,
    queries: Sequence[SynthQuery],
    world: World,
    rcfg: RewardConfig,
    cost_weight: float,
    k: int = 16,
    seed: int = 0,
) -> float:
    """Monte Carlo estimate of expected net return under the policy."""
    probs = policy.probs()
    vals = []
    for qi, q in enumerate(queries):
        rng = sw.substream(seed, sw.STREAM_EVAL, qi)
        for g in range(k):
            rec = sw.sample_rollout(q, sample_decision(policy, q, rng, probs), rng, world, g)
            vals.append(rollout_value(rec, rcfg, cost_weight))
    return math.fsum(vals) / len(vals)


def policy_rollouts(policy: PolicyParams, world: World, k: int, seed: int, stream: int = sw.STREAM_EVAL) -> list[RolloutRecord]:
    probs = policy.probs()
    return sw.rollout_policy_log(world, lambda q, rng: sample_decision(policy, q, rng, probs), k, seed, stream)


def expected_cost_tokens(budget: float, world: World) -> float:
    """E[min(L, x(1 + n*v))] for invested x = budget*L and v ~ U(-1, 1), ignoring integer rounding."""
    x = budget * world.l_max
    n = world.cost_noise
    if x * (1.0 + n) <= world.l_max or n == 0:
        return x
    v = (world.l_max / x - 1.0) / n
    return 0.5 * (x * ((v + 1.0) + n * (v * v - 1.0) / 2.0) + (1.0 - v) * world.l_max)


@dataclass
class ClassOutcome:
    fold_rate: float
    accuracy: float
    mean_cost: float  # think tokens


def expected_outcomes(policy: PolicyParams, world: World, queries: Sequence[SynthQuery] | None = None) -> dict[str, ClassOutcome]:
    """Exact per-query expectations of fold rate, accuracy and think tokens under the policy."""
    _, pb, pc = policy.probs()
    nb = pb.shape[1]
    costs = np.array([expected_cost_tokens(bucket_value(j, nb), world) for j in range(nb)])
    out = {}
    for q in queries if queries is not None else world.queries:
        c = class_index(q)
        f = float(pc[c, FOLD])
        succ = np.array([sw.success_probability(q, bucket_value(j, nb), world.l_max) for j in range(nb)])
        acc = (1.0 - f) * float(pb[c] @ succ)
        cost = f * world.abstain_cost + (1.0 - f) * float(pb[c] @ costs)
        out[q.query_id] = ClassOutcome(f, acc, cost)
    return out

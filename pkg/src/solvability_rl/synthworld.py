"""Synthetic query world with known solvability ceilings and required reasoning cost.

A query succeeds with probability ``s_max * logistic(steepness * (tokens - c_req))``
where ``tokens`` is the invested budget in think tokens. Three classes are
generated: Easy (cheap, near-certain), Worthy (expensive or uncertain) and
Unsolvable (``s_max == 0``).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .core import UNSOLVABLE, FormatError, RolloutRecord

EASY = "Easy"
WORTHY = "Worthy"
UNSOLVABLE_CLASS = "Unsolvable"
CLASSES = (EASY, WORTHY, UNSOLVABLE_CLASS)

# stream tags so that world generation, vanilla profiling, training and evaluation
# never share random substreams
STREAM_WORLD = 11
STREAM_VANILLA = 13
STREAM_ROLLOUT = 17
STREAM_TRAIN = 19
STREAM_EVAL = 23


def substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *keys])


@dataclass(frozen=True)
class SynthQuery:
    query_id: str
    class_label: str
    s_max: float
    c_req: int
    steepness: float

    def check(self, l_max: int) -> None:
        if self.class_label not in CLASSES:
            raise ValueError(f"{self.query_id}: unknown class {self.class_label!r}")
        if not (0.0 <= self.s_max <= 1.0) or self.steepness <= 0 or self.c_req < 0:
            raise ValueError(f"{self.query_id}: parameters out of range")
        if (self.class_label == UNSOLVABLE_CLASS) != (self.s_max == 0.0):
            raise ValueError(f"{self.query_id}: Unsolvable iff s_max == 0")
        if self.class_label == EASY and not (self.c_req <= 0.25 * l_max and self.s_max >= 0.95):
            raise ValueError(f"{self.query_id}: Easy needs c_req <= L/4 and s_max >= 0.95")
        if self.class_label == WORTHY and not (0 < self.s_max < 0.95 or self.c_req > 0.5 * l_max):
            raise ValueError(f"{self.query_id}: Worthy needs s_max < 0.95 or c_req > L/2")


def _default_ranges() -> dict[str, dict[str, tuple[float, float]]]:
    # c_req is a fraction of l_max; steepness is per token
    return {
        EASY: {"s_max": (0.995, 1.0), "c_req": (0.05, 0.20), "steepness": (0.002, 0.004)},
        WORTHY: {"s_max": (0.25, 0.80), "c_req": (0.50, 0.75), "steepness": (0.002, 0.004)},
        UNSOLVABLE_CLASS: {"s_max": (0.0, 0.0), "c_req": (0.50, 1.00), "steepness": (0.002, 0.004)},
    }


@dataclass(frozen=True)
class WorldConfig:
    n_queries: int = 300
    weights: dict[str, float] = field(default_factory=lambda: {EASY: 0.35, WORTHY: 0.40, UNSOLVABLE_CLASS: 0.25})
    ranges: dict[str, dict[str, tuple[float, float]]] = field(default_factory=_default_ranges)
    seed: int = 0
    l_max: int = 16384
    abstain_cost: int = 40
    cost_noise: float = 0.10

    def __post_init__(self) -> None:
        if set(self.weights) != set(CLASSES):
            raise ValueError(f"weights must cover exactly {CLASSES}")
        if any(w < 0 for w in self.weights.values()) or abs(sum(self.weights.values()) - 1.0) > 1e-9:
            raise ValueError("class weights must be non-negative and sum to 1")
        if self.n_queries < 1 or self.l_max < 1:
            raise ValueError("n_queries and l_max must be positive")
        if not (0 <= self.cost_noise < 1):
            raise ValueError("cost_noise must be in [0, 1)")
        if not (0 <= self.abstain_cost <= self.l_max):
            raise ValueError("abstain_cost must be within [0, l_max]")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "WorldConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise FormatError(f"unknown world config fields {sorted(unknown)}")
        kw = dict(d)
        if "ranges" in kw:
            merged = _default_ranges()
            for label, spec in kw["ranges"].items():
                merged.setdefault(label, {}).update({k: tuple(v) for k, v in spec.items()})
            kw["ranges"] = merged
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"invalid world config: {exc}") from exc


@dataclass(frozen=True)
class World:
    queries: tuple[SynthQuery, ...]
    l_max: int = 16384
    abstain_cost: int = 40
    cost_noise: float = 0.10

    def to_dict(self) -> dict[str, Any]:
        return {
            "l_max": self.l_max,
            "abstain_cost": self.abstain_cost,
            "cost_noise": self.cost_noise,
            "queries": [dataclasses.asdict(q) for q in self.queries],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "World":
        try:
            l_max = int(d["l_max"])
            queries = tuple(
                SynthQuery(str(q["query_id"]), str(q["class_label"]), float(q["s_max"]), int(q["c_req"]), float(q["steepness"]))
                for q in d["queries"]
            )
            world = cls(queries, l_max, int(d.get("abstain_cost", 40)), float(d.get("cost_noise", 0.10)))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad world document: {exc!r}") from exc
        for q in world.queries:
            try:
                q.check(l_max)
            except ValueError as exc:
                raise FormatError(str(exc)) from exc
        if len({q.query_id for q in queries}) != len(queries):
            raise FormatError("duplicate query ids in world")
        return world

    def by_class(self, label: str) -> list[SynthQuery]:
        return [q for q in self.queries if q.class_label == label]


def generate_world(cfg: WorldConfig) -> World:
    rng = substream(cfg.seed, STREAM_WORLD)
    labels = rng.choice(len(CLASSES), size=cfg.n_queries, p=[cfg.weights[c] for c in CLASSES])
    queries = []
    for i, li in enumerate(labels):
        label = CLASSES[li]
        r = cfg.ranges[label]
        s_max = float(rng.uniform(*r["s_max"])) if label != UNSOLVABLE_CLASS else 0.0
        c_req = int(round(rng.uniform(*r["c_req"]) * cfg.l_max))
        steep = float(rng.uniform(*r["steepness"]))
        q = SynthQuery(f"q{i:05d}", label, s_max, c_req, steep)
        q.check(cfg.l_max)
        queries.append(q)
    return World(tuple(queries), cfg.l_max, cfg.abstain_cost, cfg.cost_noise)


def success_probability(q: SynthQuery, invested_budget: float, l_max: int = 16384) -> float:
    """s_max * logistic(steepness * (budget * l_max - c_req))."""
    if not (0.0 <= invested_budget <= 1.0):
        raise ValueError(f"invested budget {invested_budget} outside [0, 1]")
    if q.s_max == 0.0:
        return 0.0
    z = q.steepness * (invested_budget * l_max - q.c_req)
    if z >= 0:
        sig = 1.0 / (1.0 + math.exp(-z))
    else:
        e = math.exp(z)
        sig = e / (1.0 + e)
    return q.s_max * sig


@dataclass(frozen=True)
class PolicyDecision:
    """One sampled (solvability, budget, commit) decision sequence.

    Declared and invested budget are the same bucket value; a fold invests only
    the world's fixed abstention cost.
    """

    solv_bucket: int
    budget_bucket: int
    fold: bool
    declared_solvability: float
    declared_budget: float
    behavior_probs: tuple[float, float, float] = (1.0, 1.0, 1.0)


def attempt_decision(budget: float = 1.0) -> PolicyDecision:
    """Always-attempt decision used by the vanilla reference (declares certainty)."""
    return PolicyDecision(0, 0, False, 1.0, budget)


def sample_rollout(
    q: SynthQuery,
    decision: PolicyDecision,
    rng: np.random.Generator,
    world: World,
    group_index: int = 0,
) -> RolloutRecord:
    # both uniforms are always drawn so that runs differing only in policy stay coupled
    u_success, u_noise = rng.random(2)
    if decision.fold:
        return RolloutRecord(
            q.query_id, group_index, None, True, world.abstain_cost,
            decision.declared_solvability, decision.declared_budget, True, UNSOLVABLE,
        )
    p = success_probability(q, decision.declared_budget, world.l_max)
    correct = bool(u_success < p)
    invested = min(decision.declared_budget * world.l_max, world.l_max)
    noisy = invested * (1.0 + world.cost_noise * (2.0 * u_noise - 1.0))
    tokens = int(min(world.l_max, max(1, round(noisy))))
    answer = f"ans-{q.query_id}" if correct else "ans-wrong"
    return RolloutRecord(
        q.query_id, group_index, correct, False, tokens,
        decision.declared_solvability, decision.declared_budget, True, answer,
    )


def vanilla_rollouts(world: World, k: int, seed: int) -> list[RolloutRecord]:
    """K always-attempt, full-budget rollouts per query (query order, then group index)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    decision = attempt_decision(1.0)
    for qi, q in enumerate(world.queries):
        rng = substream(seed, STREAM_VANILLA, qi)
        out.extend(sample_rollout(q, decision, rng, world, g) for g in range(k))
    return out


@dataclass(frozen=True)
class VanillaStats:
    query_id: str
    class_label: str
    success_rate: float
    mean_cost: float
    regime: str


def vanilla_reference(world: World, k: int, seed: int) -> dict[str, VanillaStats]:
    from .analytics import regime_of_count

    records = vanilla_rollouts(world, k, seed)
    out = {}
    for qi, q in enumerate(world.queries):
        group = records[qi * k : (qi + 1) * k]
        n_ok = sum(r.is_correct for r in group)
        out[q.query_id] = VanillaStats(
            q.query_id,
            q.class_label,
            n_ok / k,
            sum(r.think_tokens for r in group) / k,
            regime_of_count(n_ok, k),
        )
    return out


def rollout_policy_log(
    world: World,
    decide,
    k: int,
    seed: int,
    stream: int = STREAM_ROLLOUT,
) -> list[RolloutRecord]:
    """K rollouts per query with decisions drawn by ``decide(query, rng)``."""
    out = []
    for qi, q in enumerate(world.queries):
        rng = substream(seed, stream, qi)
        for g in range(k):
            out.append(sample_rollout(q, decide(q, rng), rng, world, g))
    return out


def queries_by_id(queries: Sequence[SynthQuery]) -> dict[str, SynthQuery]:
    return {q.query_id: q for q in queries}

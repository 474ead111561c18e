"""Shared domain types, hyperparameter configs and the structured response format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator

UNSOLVABLE = "<Unsolvable>"
FOLD_THINK = "This query is beyond my current reliable capability."


class FormatError(ValueError):
    """Raised for malformed input files (bad JSONL lines, bad config documents)."""


class DataIntegrityError(ValueError):
    """Raised when inputs are well-formed but mutually inconsistent."""


@dataclass(frozen=True)
class RolloutRecord:
    query_id: str
    group_index: int
    correct: bool | None
    abstained: bool
    think_tokens: int
    predicted_solvability: float | None = None
    predicted_budget: float | None = None
    format_valid: bool = True
    answer_text: str = ""

    def check(self, l_max: int | None = None) -> None:
        if self.abstained and self.correct is not None:
            raise DataIntegrityError(f"{self.query_id}[{self.group_index}]: abstained record must have correct=null")
        if not self.format_valid and (self.predicted_solvability is not None or self.predicted_budget is not None):
            raise DataIntegrityError(f"{self.query_id}[{self.group_index}]: format-invalid record carries estimates")
        if self.think_tokens < 0:
            raise DataIntegrityError(f"{self.query_id}[{self.group_index}]: negative think_tokens")
        if l_max is not None and self.think_tokens > l_max:
            raise DataIntegrityError(
                f"{self.query_id}[{self.group_index}]: think_tokens {self.think_tokens} exceeds L_max {l_max}"
            )

    @property
    def is_correct(self) -> bool:
        return self.correct is True and not self.abstained

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "RolloutRecord":
        try:
            correct = obj["correct"]
            rec = cls(
                query_id=str(obj["query_id"]),
                group_index=int(obj["group_index"]),
                correct=None if correct is None else bool(correct),
                abstained=bool(obj["abstained"]),
                think_tokens=int(obj["think_tokens"]),
                predicted_solvability=_opt_float(obj.get("predicted_solvability")),
                predicted_budget=_opt_float(obj.get("predicted_budget")),
                format_valid=bool(obj.get("format_valid", True)),
                answer_text=str(obj.get("answer_text", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad rollout record: {exc!r}") from exc
        rec.check()
        return rec


def _opt_float(v: Any) -> float | None:
    return None if v is None else float(v)


@dataclass(frozen=True)
class GroupProfile:
    query_id: str
    k_rollouts: int
    success_rate: float
    correct_costs: tuple[int, ...]
    efficient_cost: int | None = None
    budget_target: float | None = None

    @property
    def n_correct(self) -> int:
        return len(self.correct_costs)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["correct_costs"] = list(self.correct_costs)
        return d

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "GroupProfile":
        try:
            eff = obj.get("efficient_cost")
            bt = obj.get("budget_target")
            return cls(
                query_id=str(obj["query_id"]),
                k_rollouts=int(obj["k_rollouts"]),
                success_rate=float(obj["success_rate"]),
                correct_costs=tuple(int(c) for c in obj["correct_costs"]),
                efficient_cost=None if eff is None else int(eff),
                budget_target=None if bt is None else float(bt),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad group profile: {exc!r}") from exc


@dataclass(frozen=True)
class RewardConfig:
    """Reward hyperparameters. Defaults are the reference settings for K=16, L_max=16384."""

    delta: float = 0.10
    lambda_: float = 0.80
    beta: float = 0.30
    alpha_fail: float = 0.20
    tau: float = 0.20
    eps_abs: float = 1.0 / 16
    percentile_p: float = 0.30
    gamma_s: float = 0.10
    gamma_b: float = 0.20
    gamma_s_prime: float = 0.20
    gamma_b_prime: float = 0.10
    mu: float = 2.0
    l_max: int = 16384
    r_plus: float = 1.0
    enable_fold_gate: bool = True
    enable_eff: bool = True
    enable_cal_solv: bool = True
    enable_cal_bud: bool = True

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not (self.lambda_ > self.delta > 0):
            raise ValueError(f"need lambda_ > delta > 0, got lambda_={self.lambda_}, delta={self.delta}")
        if not (0 < self.percentile_p <= 1):
            raise ValueError(f"percentile_p must be in (0, 1], got {self.percentile_p}")
        if not (0 <= self.tau < 1):
            raise ValueError(f"tau must be in [0, 1), got {self.tau}")
        if not (0 < self.eps_abs <= 1):
            raise ValueError(f"eps_abs must be in (0, 1], got {self.eps_abs}")
        if self.mu < 1:
            raise ValueError(f"mu must be >= 1, got {self.mu}")
        if self.l_max <= 0:
            raise ValueError(f"l_max must be positive, got {self.l_max}")
        for name in ("beta", "alpha_fail", "gamma_s", "gamma_b", "gamma_s_prime", "gamma_b_prime"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    k_rollouts: int = 16
    prompt_batch: int = 64
    clip_eps: float = 0.0625
    # tabular logits need an O(1) step; the 1e-6 used for transformer weights does not transfer
    learn_rate: float = 4.0
    steps: int = 300
    eps_norm: float = 1e-6
    seed: int = 0
    objective_cost_weight: float = 0.01
    solv_buckets: int = 8
    budget_buckets: int = 8
    init_fold_prob: float = 0.5

    def __post_init__(self) -> None:
        if self.k_rollouts < 2:
            raise ValueError("k_rollouts must be >= 2")
        if self.prompt_batch < 1:
            raise ValueError("prompt_batch must be >= 1")
        if self.eps_norm <= 0:
            raise ValueError("eps_norm must be positive")
        if not (0 < self.clip_eps < 1):
            raise ValueError("clip_eps must be in (0, 1)")
        if self.solv_buckets < 1 or self.budget_buckets < 1:
            raise ValueError("bucket counts must be positive")
        if not (0 < self.init_fold_prob < 1):
            raise ValueError("init_fold_prob must be in (0, 1)")


@dataclass(frozen=True)
class StructuredResponse:
    predicted_solvability: float
    predicted_budget: float
    think_text: str
    final_answer: str

    @property
    def abstained(self) -> bool:
        return self.final_answer == UNSOLVABLE


@dataclass(frozen=True)
class FormatViolation:
    reason: str

    def __bool__(self) -> bool:
        return False


def serialize_response(r: StructuredResponse) -> str:
    return (
        "<predict>\n"
        f"Solvability: {r.predicted_solvability:.2f}\n"
        f"Budget: {r.predicted_budget:.2f}\n"
        "</predict>\n"
        "<think>\n"
        f"{r.think_text}\n"
        "</think>\n"
        f"\\boxed{{{r.final_answer}}}"
    )


_PREDICT_RE = re.compile(r"<predict>(.*?)</predict>", re.S)
_THINK_RE = re.compile(r"<think>(.*?)</think>", re.S)
_FIELD_RE = r"^\s*{name}\s*:\s*([-+0-9.eE]+)\s*$"


def _boxed_answers(text: str) -> list[str] | None:
    out = []
    start = 0
    while (i := text.find("\\boxed{", start)) >= 0:
        j = i + len("\\boxed{")
        depth = 1
        while j < len(text) and depth:
            if text[j] == "{":
                depth += 1
            elif text[j] == "}":
                depth -= 1
            j += 1
        if depth:
            return None
        out.append(text[i + len("\\boxed{") : j - 1])
        start = j
    return out


def parse_response(text: str) -> StructuredResponse | FormatViolation:
    """Parse a templated response; any deviation yields a FormatViolation value."""
    pm = _PREDICT_RE.search(text)
    if pm is None:
        return FormatViolation("missing <predict> block")
    tm = _THINK_RE.search(text, pm.end())
    if tm is None:
        return FormatViolation("missing <think> block")
    values = {}
    for name in ("Solvability", "Budget"):
        m = re.search(_FIELD_RE.format(name=name), pm.group(1), re.M)
        if m is None:
            return FormatViolation(f"missing {name} field")
        try:
            v = float(m.group(1))
        except ValueError:
            return FormatViolation(f"unparseable {name} value")
        if not (math.isfinite(v) and 0.0 <= v <= 1.0):
            return FormatViolation(f"{name} {m.group(1)} outside [0, 1]")
        values[name] = v
    boxed = _boxed_answers(text[tm.end() :])
    if boxed is None:
        return FormatViolation("unbalanced \\boxed{}")
    if len(boxed) != 1:
        return FormatViolation(f"expected exactly one boxed answer, found {len(boxed)}")
    think = tm.group(1)
    if think.startswith("\n"):
        think = think[1:]
    if think.endswith("\n"):
        think = think[:-1]
    return StructuredResponse(values["Solvability"], values["Budget"], think, boxed[0])


def count_think_tokens(think_text: str) -> int:
    return len(think_text.split())


def record_from_text(
    text: str,
    query_id: str,
    group_index: int,
    reference_answer: str | None = None,
) -> RolloutRecord:
    """Turn a raw response into a RolloutRecord, grading against reference_answer if given."""
    parsed = parse_response(text)
    if isinstance(parsed, FormatViolation):
        m = _THINK_RE.search(text)
        tokens = count_think_tokens(m.group(1)) if m else count_think_tokens(text)
        return RolloutRecord(query_id, group_index, False, False, tokens, None, None, False, "")
    if parsed.abstained:
        correct = None
    else:
        correct = reference_answer is not None and parsed.final_answer.strip() == reference_answer.strip()
    return RolloutRecord(
        query_id,
        group_index,
        correct,
        parsed.abstained,
        count_think_tokens(parsed.think_text),
        parsed.predicted_solvability,
        parsed.predicted_budget,
        True,
        parsed.final_answer,
    )


# --- config documents -------------------------------------------------------

_ALIASES = {"lambda": "lambda_"}


def _build(cls, section: dict[str, Any] | None, overrides: dict[str, Any] | None = None):
    kwargs: dict[str, Any] = {}
    names = {f.name for f in dataclasses.fields(cls)}
    for src in (section or {}, overrides or {}):
        for key, value in src.items():
            key = _ALIASES.get(key, key)
            if key not in names:
                raise FormatError(f"unknown {cls.__name__} field {key!r}")
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"invalid {cls.__name__}: {exc}") from exc


def reward_config_for_k(k: int, **overrides: Any) -> RewardConfig:
    """Default reward config with eps_abs tied to the rollout count."""
    overrides.setdefault("eps_abs", 1.0 / k)
    return RewardConfig(**overrides)


def load_config(path: str | Path | None, overrides: dict[str, dict[str, Any]] | None = None):
    """Read a {reward, train, world} JSON document; absent fields keep defaults.

    Returns (RewardConfig, TrainConfig, world section dict). The world section is
    returned raw so this module does not depend on the synthetic world.
    """
    doc: dict[str, Any] = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON config ({exc})") from exc
        if not isinstance(doc, dict):
            raise FormatError(f"{path}: config must be a JSON object")
        unknown = set(doc) - {"reward", "train", "world"}
        if unknown:
            raise FormatError(f"{path}: unknown config sections {sorted(unknown)}")
    overrides = overrides or {}
    train = _build(TrainConfig, doc.get("train"), overrides.get("train"))
    reward_section = dict(doc.get("reward") or {})
    reward_over = dict(overrides.get("reward") or {})
    if "eps_abs" not in reward_section and "eps_abs" not in reward_over:
        reward_over["eps_abs"] = 1.0 / train.k_rollouts
    reward = _build(RewardConfig, reward_section, reward_over)
    world = dict(doc.get("world") or {})
    world.update(overrides.get("world") or {})
    return reward, train, world


def defaults_fingerprint() -> str:
    block = json.dumps(dataclasses.asdict(RewardConfig()), sort_keys=True)
    return hashlib.sha256(block.encode()).hexdigest()[:16]


# --- JSONL ------------------------------------------------------------------


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise FormatError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def read_rollouts(path: str | Path, l_max: int | None = None) -> list[RolloutRecord]:
    out = []
    for lineno, obj in read_jsonl(path):
        try:
            rec = RolloutRecord.from_dict(obj)
            rec.check(l_max)
        except (FormatError, DataIntegrityError) as exc:
            raise type(exc)(f"{path}:{lineno}: {exc}") from exc
        out.append(rec)
    return out


def dumps_jsonl(rows: Iterable[dict[str, Any]]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def group_by_query(records: Iterable[RolloutRecord]) -> dict[str, list[RolloutRecord]]:
    groups: dict[str, list[RolloutRecord]] = {}
    for rec in records:
        groups.setdefault(rec.query_id, []).append(rec)
    return groups

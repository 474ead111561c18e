"""End-to-end acceptance checks, one per criterion.

Each ``check_*`` function returns ``(ok, detail)``. Under pytest every check is
a test and a PASS/FAIL line per criterion is printed in the terminal summary;
running this file directly prints the same lines.
"""

from __future__ import annotations

import dataclasses
import io
import math
import random
import sys
import tempfile
import time
from contextlib import redirect_stdout
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from test_profiler import naive_profile, random_group  # noqa: E402

from solvability_rl import analytics, coldstart, synthworld as sw, trainer as tr  # noqa: E402
from solvability_rl.cli import run  # noqa: E402
from solvability_rl.core import (  # noqa: E402
    GroupProfile,
    RewardConfig,
    RolloutRecord,
    TrainConfig,
    group_by_query,
    parse_response,
    serialize_response,
)
from solvability_rl.profiler import build_profile  # noqa: E402
from solvability_rl.reward import composite, fail_penalty, r_cal, r_eff, r_val  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"
RESULTS: dict[int, tuple[bool, str]] = {}


# --- shared default-world training runs ---------------------------------------


@lru_cache(maxsize=None)
def default_world() -> sw.World:
    return sw.generate_world(sw.WorldConfig())


@lru_cache(maxsize=None)
def vanilla() -> dict[str, sw.VanillaStats]:
    return sw.vanilla_reference(default_world(), 16, seed=0)


@lru_cache(maxsize=None)
def trained(**reward_overrides):
    """Final policy, step history and wall time of a default run with reward overrides."""
    rcfg = RewardConfig(**reward_overrides)
    t0 = time.perf_counter()
    policy, history = tr.train(default_world(), rcfg, TrainConfig())
    return policy, history, time.perf_counter() - t0


def class_summary(policy: tr.PolicyParams) -> dict:
    """Exact expected fold rate, cost ratio to vanilla, and invested budget per class."""
    world, van = default_world(), vanilla()
    out = tr.expected_outcomes(policy, world)
    _, pb, _ = policy.probs()
    mids = np.array([tr.bucket_value(j, pb.shape[1]) for j in range(pb.shape[1])])
    summary = {}
    for label in sw.CLASSES:
        qs = world.by_class(label)
        summary[label] = {
            "fold_rate": sum(out[q.query_id].fold_rate for q in qs) / len(qs),
            "cost_ratio": sum(out[q.query_id].mean_cost for q in qs) / sum(van[q.query_id].mean_cost for q in qs),
            "budget": float(pb[sw.CLASSES.index(label)] @ mids),
        }
    hi = [q for q in world.queries if van[q.query_id].success_rate >= 0.25]
    summary["fold_rate_s0_ge_0.25"] = sum(out[q.query_id].fold_rate for q in hi) / len(hi)
    summary["accuracy"] = sum(o.accuracy for o in out.values()) / len(out)
    summary["total_cost"] = sum(o.mean_cost for o in out.values())
    return summary


# --- criteria -----------------------------------------------------------------


def check_1():
    t0 = time.perf_counter()
    buf = io.StringIO()
    with redirect_stdout(buf):
        status = run(["fold-stats", "--k", "16", "--tau", "0.10,0.15,0.20,0.25", "--s", "0.30"])
    elapsed = time.perf_counter() - t0
    lines = buf.getvalue().splitlines()
    rows = [line.split() for line in lines[2:6]]
    pv = [float(r[1]) for r in rows]
    post = {float(r[0]): float(r[3]) for r in rows}
    mis = float(lines[6].split("=")[-1])
    ok = (
        status == 0
        and all(abs(a - b) <= 5e-4 for a, b in zip(pv, [0.185, 0.074, 0.028, 0.010]))
        and abs(post[0.20] - 0.977) <= 1e-3
        and abs(post[0.25] - 0.993) <= 1e-3
        and abs(mis - 0.003) <= 5e-4
        and elapsed < 1.0
    )
    return ok, f"p={pv} post20={post[0.20]} post25={post[0.25]} misroute={mis} t={elapsed:.3f}s"


def check_2():
    cfg = RewardConfig()
    L = cfg.l_max

    def prof(s, eff=None, k=16):
        return GroupProfile("q", k, s, tuple([eff or 1] * round(s * k)), eff, None if eff is None else eff / L)

    ok_rec = RolloutRecord("q", 0, True, False, 1000, 0.5, 0.2, True, "1")
    fold = RolloutRecord("q", 0, None, True, 40, 0.5, 0.5, True, "<Unsolvable>")
    fail_full = RolloutRecord("q", 0, False, False, L, 0.5, 0.5, True, "0")
    cases = {
        "calibration -0.04": (r_cal(ok_rec, dataclasses.replace(prof(0.5, 4915), budget_target=0.3), cfg), -0.04),
        "efficiency 0.15": (r_eff(ok_rec, prof(0.5, 2000), cfg), 0.15),
        "unsolvable branch -0.15": (r_cal(fold, prof(0.0), cfg), -0.15),
        "full-length failure -0.20": (r_val(fail_full, prof(0.5, 2000), cfg), -0.20),
        "fold gate +0.10": (r_val(fold, prof(0.0), cfg), 0.10),
        "fold gate -0.80": (r_val(fold, prof(0.25, 2000), cfg), -0.80),
        "failure penalty 0.20": (fail_penalty(L, cfg), 0.20),
    }
    bad = {k: v for k, (v, want) in cases.items() if abs(v - want) > 1e-9}
    return not bad, f"{len(cases) - len(bad)}/{len(cases)} examples exact" + (f"; off: {bad}" if bad else "")


def check_3():
    rng = random.Random(10_000)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(10_000):
        k = rng.randint(2, 32)
        p = rng.choice([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
        group = random_group(rng, k)
        got = build_profile(group, RewardConfig(percentile_p=p))
        rate, costs, eff, bt = naive_profile(group, p, 16384)
        same = (
            got.success_rate == float(rate)
            and got.correct_costs == costs
            and got.efficient_cost == eff
            and got.budget_target == (None if bt is None else float(bt))
            and got.k_rollouts == k
        )
        mismatches += not same
    elapsed = time.perf_counter() - t0
    return mismatches == 0 and elapsed < 10.0, f"{mismatches} mismatches in 10^4 groups, t={elapsed:.2f}s"


def check_4():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        old = tr.PolicyParams(*(rng.normal(0, 1, h.shape) for h in tr.PolicyParams.initial().heads))
        n = int(rng.integers(2, 16))
        rows = [
            (int(rng.integers(3)), sw.PolicyDecision(int(rng.integers(8)), int(rng.integers(8)), bool(rng.integers(2)), 0.5, 0.5), float(rng.normal()))
            for _ in range(n)
        ]
        batch = tr.SurrogateBatch.build(old, rows, [1.0 / n] * n)
        cur = tr.PolicyParams.from_flat(old.flat() + rng.normal(0, 0.3, old.flat().shape), old)
        analytic = tr.surrogate_grad(cur, batch, 0.0625, clip=False).flat()
        x = cur.flat()
        h = 1e-5
        numeric = np.array([
            (tr.surrogate(tr.PolicyParams.from_flat(x + h * e, cur), batch, 0.0625, clip=False)
             - tr.surrogate(tr.PolicyParams.from_flat(x - h * e, cur), batch, 0.0625, clip=False)) / (2 * h)
            for e in np.eye(len(x))
        ])
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)))
    return worst <= 1e-4, f"max relative error {worst:.2e} over 100 instances"


def check_5():
    policy, history, elapsed = trained()
    s = class_summary(policy)
    obj = [h.objective for h in history]
    start, end = float(np.mean(obj[:20])), float(np.mean(obj[-20:]))
    parts = {
        "unsolvable_fold>=0.80": s["Unsolvable"]["fold_rate"] >= 0.80,
        "fold(s0>=0.25)<=0.05": s["fold_rate_s0_ge_0.25"] <= 0.05,
        "unsolvable_cost<=0.15": s["Unsolvable"]["cost_ratio"] <= 0.15,
        "easy_budget<worthy_budget": s["Easy"]["budget"] < s["Worthy"]["budget"],
        "objective_non_decreasing": end >= start,
        "steps<=2000,time<=120s": len(history) <= 2000 and elapsed <= 120,
    }
    detail = (
        f"fold U={s['Unsolvable']['fold_rate']:.3f} fold(s0>=.25)={s['fold_rate_s0_ge_0.25']:.4f} "
        f"costU={s['Unsolvable']['cost_ratio']:.3f} budget E={s['Easy']['budget']:.3f} W={s['Worthy']['budget']:.3f} "
        f"obj {start:.3f}->{end:.3f} t={elapsed:.1f}s"
    )
    failed = [k for k, v in parts.items() if not v]
    return not failed, detail + (f" failed={failed}" if failed else "")


def check_6():
    no_gate = class_summary(trained(enable_fold_gate=False)[0])
    no_eff = class_summary(trained(enable_eff=False)[0])
    parts = {
        "gate_off:unsolvable_fold<0.05": no_gate["Unsolvable"]["fold_rate"] < 0.05,
        "gate_off:unsolvable_cost>0.7": no_gate["Unsolvable"]["cost_ratio"] > 0.7,
        "eff_off:easy_cost>0.7": no_eff["Easy"]["cost_ratio"] > 0.7,
        "eff_off:unsolvable_cost<=0.2": no_eff["Unsolvable"]["cost_ratio"] <= 0.2,
    }
    detail = (
        f"gate off: fold U={no_gate['Unsolvable']['fold_rate']:.3f} costU={no_gate['Unsolvable']['cost_ratio']:.3f}; "
        f"eff off: costE={no_eff['Easy']['cost_ratio']:.3f} costU={no_eff['Unsolvable']['cost_ratio']:.3f}"
    )
    failed = [k for k, v in parts.items() if not v]
    return not failed, detail + (f" failed={failed}" if failed else "")


def check_7():
    deltas = (0.05, 0.10, 0.15)
    runs = [class_summary(trained(delta=d)[0] if d != 0.10 else trained()[0]) for d in deltas]
    cost = [r["total_cost"] for r in runs]
    acc = [r["accuracy"] for r in runs]
    ok = all(a >= b for a, b in zip(cost, cost[1:])) and all(a >= b for a, b in zip(acc, acc[1:]))
    return ok, "cost=" + ",".join(f"{c:.1f}" for c in cost) + " acc=" + ",".join(f"{a:.8f}" for a in acc)


def check_8():
    a = analytics.eta(55.64, 3847, 54.45, 8584)
    b = analytics.eta(46.93, 3740, 44.42, 8581)
    return abs(a - 2.280) <= 1e-3 and abs(b - 2.424) <= 1e-3, f"eta={a:.4f}, {b:.4f}"


def check_9():
    world = sw.generate_world(sw.WorldConfig(n_queries=50, seed=9))
    varied = tr.PolicyParams.initial()
    varied.commit[:, tr.SOLVE] = 50.0  # always attempt, budget uniform over buckets
    records = tr.policy_rollouts(varied, world, 16, seed=9)
    groups = group_by_query(records)
    cfg = RewardConfig()
    pool = [coldstart.PoolEntry(q.query_id, build_profile(groups[q.query_id], cfg), tuple(groups[q.query_id])) for q in world.queries]
    demos = coldstart.construct(pool, 0.5, cfg)
    golden = (GOLDEN / "nice_fold_target.txt").read_text(encoding="utf-8")
    folds = [d for d in demos if d.behavior_label == coldstart.NICE_FOLD]
    exhaustive = sorted(d.query_id for d in demos) == sorted(q.query_id for q in world.queries) and len(demos) == 50
    consistent = all(
        (d.behavior_label == coldstart.NICE_FOLD) == (e.profile.success_rate < cfg.eps_abs) for e, d in zip(pool, demos)
    )
    byte_match = bool(folds) and all(d.target_text == golden for d in folds)
    round_trip = all(parse_response(d.target_text) and serialize_response(parse_response(d.target_text)) == d.target_text for d in demos)
    counts = {lab: sum(d.behavior_label == lab for d in demos) for lab in coldstart.LABELS}
    ok = exhaustive and consistent and byte_match and round_trip and all(counts.values())
    return ok, f"counts={counts} exhaustive={exhaustive} golden={byte_match} round_trip={round_trip}"


def check_10():
    outputs = []
    with tempfile.TemporaryDirectory() as tmp:
        world = Path(tmp) / "world.json"
        run(["world", "gen", "--output", str(world), "--n-queries", "60", "--seed", "1"])
        cfg = Path(tmp) / "cfg.json"
        cfg.write_text('{"train": {"prompt_batch": 16}}')
        for i in range(2):
            d = Path(tmp) / f"run{i}"
            d.mkdir()
            statuses = [
                run(["train", "--world", str(world), "--stats-output", str(d / "stats.jsonl"), "--policy-output",
                     str(d / "policy.json"), "--steps", "20", "--seed", "3", "--config", str(cfg)]),
                run(["world", "rollout", "--world", str(world), "--policy", str(d / "policy.json"),
                     "--output", str(d / "rollouts.jsonl"), "--seed", "3"]),
                run(["profile", "--input", str(d / "rollouts.jsonl"), "--output", str(d / "profiles.jsonl")]),
            ]
            with redirect_stdout(io.StringIO()):
                statuses.append(run(["coldstart", "--profiles", str(d / "profiles.jsonl"), "--rollouts",
                                     str(d / "rollouts.jsonl"), "--output", str(d / "demos.jsonl"), "--seed", "3"]))
            if any(statuses):
                return False, f"command failed in run {i}: {statuses}"
            outputs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    same = outputs[0] == outputs[1]
    return same, f"{len(outputs[0])} output files byte-identical={same}"


CHECKS = {
    1: ("fold-stats table", check_1),
    2: ("reward unit examples", check_2),
    3: ("profiler oracle equivalence", check_3),
    4: ("surrogate gradient check", check_4),
    5: ("behavioral emergence", check_5),
    6: ("ablation directionality", check_6),
    7: ("delta sweep monotonicity", check_7),
    8: ("eta regression", check_8),
    9: ("cold-start golden files", check_9),
    10: ("determinism", check_10),
}


def evaluate(n: int) -> tuple[bool, str]:
    name, fn = CHECKS[n]
    ok, detail = fn()
    RESULTS[n] = (ok, detail)
    return ok, f"{'PASS' if ok else 'FAIL'} criterion {n} ({name}): {detail}"


@pytest.mark.parametrize("n", sorted(CHECKS))
def test_criterion(n):
    ok, line = evaluate(n)
    print(line)
    assert ok, line


if __name__ == "__main__":
    failures = 0
    for n in sorted(CHECKS):
        ok, line = evaluate(n)
        print(line, flush=True)
        failures += not ok
    sys.exit(1 if failures else 0)

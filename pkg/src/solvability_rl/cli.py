"""Command-line entry point: ``solvrl <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Sequence

from . import __version__, analytics, coldstart, synthworld as sw, trainer as tr
from .core import (
    DataIntegrityError,
    FormatError,
    GroupProfile,
    defaults_fingerprint,
    dumps_jsonl,
    group_by_query,
    load_config,
    read_jsonl,
    read_rollouts,
)
from .profiler import build_profile, profile_groups
from .reward import composite, group_advantages


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def _configs(args, train_over: dict | None = None, world_over: dict | None = None):
    train_over = dict(train_over or {})
    if getattr(args, "seed", None) is not None:
        train_over.setdefault("seed", args.seed)
    return load_config(args.config, {"train": train_over, "world": world_over or {}})


def _load_world(path: str) -> sw.World:
    return sw.World.from_dict(_read_json(path))


def _load_policy(path: str) -> tr.PolicyParams:
    try:
        return tr.PolicyParams.from_dict(_read_json(path))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad policy document ({exc})") from exc


# --- subcommands ------------------------------------------------------------


def cmd_profile(args) -> int:
    rcfg, _, _ = _configs(args)
    groups = group_by_query(read_rollouts(args.input, rcfg.l_max))
    if not groups:
        raise DataIntegrityError("no rollout groups in input")
    write_atomic(args.output, dumps_jsonl(p.to_dict() for p in profile_groups(groups, rcfg)))
    return 0


def cmd_reward(args) -> int:
    rcfg, tcfg, _ = _configs(args)
    groups = group_by_query(read_rollouts(args.input, rcfg.l_max))
    if not groups:
        raise DataIntegrityError("no rollout groups in input")
    rows, adv_rows = [], []
    for qid in sorted(groups):
        group = sorted(groups[qid], key=lambda r: r.group_index)
        prof = build_profile(group, rcfg)
        totals = []
        for rec in group:
            br = composite(rec, prof, rcfg)
            totals.append(br.total)
            rows.append({"query_id": qid, "group_index": rec.group_index, **br.to_dict()})
        adv = group_advantages(totals, tcfg.eps_norm) if len(group) >= 2 else None
        adv_rows.append({"query_id": qid, "advantages": adv})
    write_atomic(args.output, dumps_jsonl(rows))
    if args.advantages:
        write_atomic(args.advantages, dumps_jsonl(adv_rows))
    return 0


def _parse_caps(items: Sequence[str] | None) -> dict[str, int]:
    caps = {}
    for item in items or []:
        label, _, n = item.partition("=")
        if label not in coldstart.LABELS or not n.isdigit():
            raise FormatError(f"bad --cap {item!r}; expected LABEL=N with LABEL in {coldstart.LABELS}")
        caps[label] = int(n)
    return caps


def cmd_coldstart(args) -> int:
    rcfg, _, _ = _configs(args)
    profiles = []
    for lineno, obj in read_jsonl(args.profiles):
        try:
            profiles.append(GroupProfile.from_dict(obj))
        except FormatError as exc:
            raise FormatError(f"{args.profiles}:{lineno}: {exc}") from exc
    if not profiles:
        raise DataIntegrityError("no group profiles in input")
    groups = group_by_query(read_rollouts(args.rollouts, rcfg.l_max))
    pool = [
        coldstart.PoolEntry(p.query_id, p, tuple(sorted(groups.get(p.query_id, []), key=lambda r: r.group_index)))
        for p in profiles
    ]
    demos = coldstart.construct(pool, args.rho, rcfg)
    demos = coldstart.balance(demos, _parse_caps(args.cap), args.seed if args.seed is not None else 0)
    write_atomic(args.output, dumps_jsonl(d.to_dict() for d in demos))
    summary = coldstart.summarize(demos)
    if args.summary:
        write_atomic(args.summary, _dump_json(summary))
    for label, row in summary.items():
        print(f"{label:<11} count={row['count']:<6} mean_think_tokens={row['mean_think_tokens']:.1f}")
    return 0


def cmd_world_gen(args) -> int:
    _, _, world_section = _configs(args)
    if args.seed is not None:
        world_section["seed"] = args.seed
    if args.n_queries is not None:
        world_section["n_queries"] = args.n_queries
    world = sw.generate_world(sw.WorldConfig.from_dict(world_section))
    write_atomic(args.output, _dump_json(world.to_dict()))
    return 0


def cmd_world_rollout(args) -> int:
    _, tcfg, _ = _configs(args)
    world = _load_world(args.world)
    k = args.k or tcfg.k_rollouts
    seed = tcfg.seed
    if args.policy:
        records = tr.policy_rollouts(_load_policy(args.policy), world, k, seed, sw.STREAM_ROLLOUT)
    else:
        records = sw.vanilla_rollouts(world, k, seed)
    write_atomic(args.output, dumps_jsonl(r.to_dict() for r in records))
    return 0


def cmd_train(args) -> int:
    over = {}
    if args.steps is not None:
        over["steps"] = args.steps
    rcfg, tcfg, _ = _configs(args, over)
    world = _load_world(args.world)
    if world.l_max != rcfg.l_max:
        raise DataIntegrityError(f"world L_max {world.l_max} differs from reward config L_max {rcfg.l_max}")
    policy, history = tr.train(world, rcfg, tcfg)
    write_atomic(args.stats_output, dumps_jsonl(s.to_dict() for s in history))
    write_atomic(args.policy_output, _dump_json(policy.to_dict()))
    return 0


def evaluate(policy: tr.PolicyParams, world: sw.World, rcfg, tcfg, k: int) -> dict[str, Any]:
    vanilla = sw.vanilla_rollouts(world, k, tcfg.seed)
    method = tr.policy_rollouts(policy, world, k, tcfg.seed)
    vprof = profile_groups(group_by_query(vanilla), rcfg)
    rep = analytics.report(method, vanilla, vprof, k)
    rep["objective"] = tr.objective_value(policy, world.queries, world, rcfg, tcfg.objective_cost_weight, k, tcfg.seed)
    by_class = {}
    for label in sw.CLASSES:
        ids = {q.query_id for q in world.by_class(label)}
        m = [r for r in method if r.query_id in ids]
        v = [r for r in vanilla if r.query_id in ids]
        by_class[label] = None if not m else {
            "fold_rate": sum(r.abstained for r in m) / len(m),
            "accuracy": analytics.accuracy(m),
            "cost_ratio": analytics.mean_tokens(m) / analytics.mean_tokens(v),
        }
    rep["by_class"] = by_class
    return rep


def cmd_eval(args) -> int:
    rcfg, tcfg, _ = _configs(args)
    rep = evaluate(_load_policy(args.policy), _load_world(args.world), rcfg, tcfg, args.k or tcfg.k_rollouts)
    text = _dump_json(rep)
    if args.output:
        write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise FormatError(f"bad number list {text!r}") from exc


def cmd_fold_stats(args) -> int:
    taus = _floats(args.tau)
    rows = analytics.fold_stats_table(args.k, taus)
    misroute = [{"s": s, "misroute_probability": analytics.misroute_probability(s, args.k)} for s in _floats(args.s)]
    if args.json:
        sys.stdout.write(_dump_json({"k": args.k, "rows": rows, "misroute": misroute}))
        return 0
    print(f"K={args.k}")
    print(f"{'tau':>6} {'p_value':>8} {'confidence':>11} {'posterior':>10}")
    for r in rows:
        print(f"{r['tau']:>6.2f} {r['p_value']:>8.4f} {r['confidence']:>10.2%} {r['posterior']:>10.4f}")
    for m in misroute:
        print(f"misroute(s={m['s']:.2f}) = {m['misroute_probability']:.4f}")
    return 0


def _csv(rows: list[dict[str, Any]], fields: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def cmd_report(args) -> int:
    rcfg, tcfg, _ = _configs(args)
    k = args.k or tcfg.k_rollouts
    method = read_rollouts(args.method, rcfg.l_max)
    vanilla = read_rollouts(args.vanilla, rcfg.l_max)
    if not method or not vanilla:
        raise DataIntegrityError("no rollout groups in input")
    vprof = profile_groups(group_by_query(vanilla), rcfg)
    rep = analytics.report(method, vanilla, vprof, k)
    write_atomic(args.output, _dump_json(rep))
    if args.csv_dir:
        d = Path(args.csv_dir)
        ratios = [{"regime": r, "token_ratio": v} for r, v in rep["regime_token_ratio"].items()]
        write_atomic(d / "regime_token_ratio.csv", _csv(ratios, ["regime", "token_ratio"]))
        write_atomic(d / "fold_rate_curve.csv", _csv(rep["fold_rate_curve"], ["lo", "hi", "n", "fold_rate"]))
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="solvrl", description="Solvability-aware compute allocation toolkit")
    ap.add_argument(
        "--version", action="version",
        version=f"solvrl {__version__} (reward defaults {defaults_fingerprint()})",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name: str, fn, help_: str, parent=sub):
        p = parent.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config with reward/train/world sections")
        p.add_argument("--seed", type=int, help="random seed (overrides config)")
        p.set_defaults(func=fn)
        return p

    p = add("profile", cmd_profile, "group profiles from a rollout log")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = add("reward", cmd_reward, "per-rollout reward breakdowns and group advantages")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--advantages", help="write per-group advantage arrays here")

    p = add("coldstart", cmd_coldstart, "build cold-start demonstrations")
    p.add_argument("--profiles", required=True)
    p.add_argument("--rollouts", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--summary")
    p.add_argument("--rho", type=float, default=0.5, help="split quantile between short solve and hero call")
    p.add_argument("--cap", action="append", metavar="LABEL=N", help="per-label subsample cap (repeatable)")

    world = sub.add_parser("world", help="synthetic world tools")
    wsub = world.add_subparsers(dest="world_command", required=True)
    p = add("gen", cmd_world_gen, "generate a world description", wsub)
    p.add_argument("--output", required=True)
    p.add_argument("--n-queries", type=int)
    p = add("rollout", cmd_world_rollout, "sample a rollout log from a world", wsub)
    p.add_argument("--world", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--policy", help="trained policy JSON; default is the full-budget vanilla policy")
    p.add_argument("--k", type=int)

    p = add("train", cmd_train, "GRPO training in a synthetic world")
    p.add_argument("--world", required=True)
    p.add_argument("--stats-output", required=True)
    p.add_argument("--policy-output", required=True)
    p.add_argument("--steps", type=int)

    p = add("eval", cmd_eval, "regime diagnostics and objective value of a policy")
    p.add_argument("--policy", required=True)
    p.add_argument("--world", required=True)
    p.add_argument("--output")
    p.add_argument("--k", type=int)

    p = add("fold-stats", cmd_fold_stats, "binomial and Beta-posterior evidence for zero-success folds")
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--tau", default="0.10,0.15,0.20,0.25")
    p.add_argument("--s", default="0.30", help="true solvabilities for the misroute probability")
    p.add_argument("--json", action="store_true")

    p = add("report", cmd_report, "JSON report and CSV tables comparing a method log to vanilla")
    p.add_argument("--method", required=True)
    p.add_argument("--vanilla", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--csv-dir")
    p.add_argument("--k", type=int)
    return ap


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, DataIntegrityError, ValueError, tr.TrainingError, OSError) as exc:
        print(f"solvrl {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

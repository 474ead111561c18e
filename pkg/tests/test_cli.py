import json
import os

import pytest

from solvability_rl.cli import run, write_atomic
from solvability_rl.core import defaults_fingerprint, read_rollouts


@pytest.fixture()
def pipeline(tmp_path):
    """World, vanilla log, profiles: the shared inputs of the downstream commands."""
    world = tmp_path / "world.json"
    log = tmp_path / "vanilla.jsonl"
    profiles = tmp_path / "profiles.jsonl"
    assert run(["world", "gen", "--output", str(world), "--n-queries", "30", "--seed", "2"]) == 0
    assert run(["world", "rollout", "--world", str(world), "--output", str(log), "--seed", "2"]) == 0
    assert run(["profile", "--input", str(log), "--output", str(profiles)]) == 0
    return tmp_path, world, log, profiles


def test_fold_stats_table(capsys):
    assert run(["fold-stats", "--k", "16"]) == 0
    out = capsys.readouterr().out
    rows = [line.split() for line in out.splitlines()[2:6]]
    p_values = [float(r[1]) for r in rows]
    posteriors = [float(r[3]) for r in rows]
    assert p_values == pytest.approx([0.185, 0.074, 0.028, 0.010], abs=5e-4)
    assert posteriors[2:] == pytest.approx([0.977, 0.993], abs=1e-3)
    assert "misroute(s=0.30) = 0.0033" in out


def test_fold_stats_json(capsys):
    assert run(["fold-stats", "--k", "16", "--tau", "0.2", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["rows"][0]["posterior"] == pytest.approx(0.977, abs=1e-3)


def test_version_prints_fingerprint(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["--version"])
    assert exc.value.code == 0
    assert defaults_fingerprint() in capsys.readouterr().out


def test_empty_profile_input_fails(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run(["profile", "--input", str(empty), "--output", str(tmp_path / "o.jsonl")]) != 0
    assert "no rollout groups" in capsys.readouterr().err
    assert not (tmp_path / "o.jsonl").exists()


def test_bad_line_is_named(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{}\n")
    assert run(["profile", "--input", str(bad), "--output", str(tmp_path / "o.jsonl")]) == 1
    assert "bad.jsonl:1" in capsys.readouterr().err


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        run(["frobnicate"])
    assert exc.value.code == 2


def test_profile_and_reward(pipeline):
    tmp, _, log, profiles = pipeline
    rows = [json.loads(x) for x in profiles.read_text().splitlines()]
    assert len(rows) == 30 and all(r["k_rollouts"] == 16 for r in rows)
    rewards = tmp / "rewards.jsonl"
    adv = tmp / "adv.jsonl"
    assert run(["reward", "--input", str(log), "--output", str(rewards), "--advantages", str(adv)]) == 0
    assert len(rewards.read_text().splitlines()) == 30 * 16
    for line in adv.read_text().splitlines():
        a = json.loads(line)["advantages"]
        assert abs(sum(a)) < 1e-9


def test_coldstart_and_determinism(pipeline):
    tmp, world, log, profiles = pipeline
    outs = []
    for i in range(2):
        out = tmp / f"demos{i}.jsonl"
        summary = tmp / f"summary{i}.json"
        assert run(["coldstart", "--profiles", str(profiles), "--rollouts", str(log), "--output", str(out), "--summary", str(summary)]) == 0
        outs.append((out.read_bytes(), summary.read_bytes()))
    assert outs[0] == outs[1]
    demos = [json.loads(x) for x in outs[0][0].decode().splitlines()]
    assert len(demos) == 30
    assert sum(json.loads(outs[0][1])[lab]["count"] for lab in ("ShortSolve", "HeroCall", "NiceFold")) == 30


def test_world_rollout_determinism(pipeline):
    tmp, world, log, _ = pipeline
    again = tmp / "again.jsonl"
    assert run(["world", "rollout", "--world", str(world), "--output", str(again), "--seed", "2"]) == 0
    assert again.read_bytes() == log.read_bytes()
    other = tmp / "other.jsonl"
    assert run(["world", "rollout", "--world", str(world), "--output", str(other), "--seed", "3"]) == 0
    assert other.read_bytes() != log.read_bytes()


def test_train_eval_report(pipeline):
    tmp, world, log, _ = pipeline
    cfg = tmp / "cfg.json"
    cfg.write_text(json.dumps({"train": {"prompt_batch": 8, "k_rollouts": 8}}))
    outputs = []
    for i in range(2):
        stats, pol = tmp / f"stats{i}.jsonl", tmp / f"policy{i}.json"
        argv = ["train", "--world", str(world), "--stats-output", str(stats), "--policy-output", str(pol),
                "--steps", "4", "--seed", "5", "--config", str(cfg)]
        assert run(argv) == 0
        outputs.append((stats.read_bytes(), pol.read_bytes()))
    assert outputs[0] == outputs[1]
    assert len(outputs[0][0].decode().splitlines()) == 4

    ev = tmp / "eval.json"
    assert run(["eval", "--policy", str(tmp / "policy0.json"), "--world", str(world), "--output", str(ev)]) == 0
    rep = json.loads(ev.read_text())
    assert set(rep["by_class"]) == {"Easy", "Worthy", "Unsolvable"} and "objective" in rep

    method = tmp / "method.jsonl"
    assert run(["world", "rollout", "--world", str(world), "--policy", str(tmp / "policy0.json"), "--output", str(method)]) == 0
    out = tmp / "report.json"
    assert run(["report", "--method", str(method), "--vanilla", str(log), "--output", str(out), "--csv-dir", str(tmp / "csv")]) == 0
    assert "eta" in json.loads(out.read_text())
    assert (tmp / "csv" / "fold_rate_curve.csv").read_text().startswith("lo,hi,n,fold_rate")


def test_inputs_are_not_mutated(pipeline):
    tmp, world, log, profiles = pipeline
    before = {p: p.read_bytes() for p in (world, log, profiles)}
    run(["coldstart", "--profiles", str(profiles), "--rollouts", str(log), "--output", str(tmp / "d.jsonl")])
    run(["reward", "--input", str(log), "--output", str(tmp / "r.jsonl")])
    assert {p: p.read_bytes() for p in before} == before
    assert len(read_rollouts(log)) == 30 * 16


def test_write_atomic_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.txt"
    write_atomic(target, "first\n")

    class Boom:
        def __str__(self):
            raise RuntimeError("boom")

    with pytest.raises(TypeError):
        write_atomic(target, Boom())
    assert target.read_text() == "first\n"
    assert os.listdir(tmp_path) == ["out.txt"]

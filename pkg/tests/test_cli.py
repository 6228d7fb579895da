from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pytest

from gaugment.augment_ops import FeatureBatch, FeatureMatrix
from gaugment.cli import build_parser, main
from gaugment.io_formats import (
    asset_path,
    decode_checkpoint,
    encode_features,
    read_features,
    read_policy,
    read_trials,
    write_features,
    write_policy,
)
from gaugment.policy_graph import IDENTITY, AugSpec, linear_policy, validate

MOCK = Path(__file__).resolve().parents[1] / "scripts" / "mock_trainer.py"

# sha256 of `apply chime6 --seed 5` on golden_input(); regenerate only on a
# deliberate change to operator semantics or the container layout
CHIME_GOLDEN = "3b8f8bb7dfcca3c54c79f5012fdecb6b67b5fe157da868bc9af97014234c5c78"


def run(*argv) -> int:
    return main([str(a) for a in argv])


def golden_input() -> FeatureBatch:
    rng = np.random.default_rng(20240601)
    items = []
    for length in (40, 55, 64, 31):
        valid = rng.normal(size=(length, 16)).astype(np.float32)
        items.append(FeatureMatrix.from_valid(valid, 64))
    return FeatureBatch(tuple(items))


@pytest.fixture
def features(tmp_path):
    path = tmp_path / "in.gaug"
    write_features(path, golden_input())
    return path


# -- search and baseline -- #


def test_search_twice_gives_identical_log(tmp_path):
    for name in ("a", "b"):
        args = ("search", "--budget", 64, "--population", 32, "--fitness", "synthetic", "--samples", 4)
        assert run(*args, "--seed", 7, "--ensemble-nodes", 6, "--out", tmp_path / name) == 0
    a, b = (tmp_path / n / "trials.jsonl" for n in "ab")
    assert a.read_bytes() == b.read_bytes()
    assert len(read_trials(a)) == 64
    for artifact in ("checkpoint.json", "best.policy.json", "summary.csv", "run.json"):
        assert (tmp_path / "a" / artifact).exists()
    assert validate(read_policy(tmp_path / "a" / "best.policy.json").policy).ok


def test_search_defaults_follow_published_settings(tmp_path):
    # budget 32 keeps the run to one generation; everything else is default
    assert run("search", "--budget", 32, "--samples", 2, "--out", tmp_path) == 0
    config = decode_checkpoint((tmp_path / "checkpoint.json").read_text())["config"]
    assert (config.population_size, config.mutation_rate, config.n_ensemble) == (32, 0.8, 25)


def test_config_file_overlay_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"population_size": 4, "trial_budget": 8, "n_ensemble": 3, "master_seed": 1}))
    assert run("search", "--config", cfg, "--budget", 12, "--samples", 2, "--out", tmp_path / "o") == 0
    config = decode_checkpoint((tmp_path / "o" / "checkpoint.json").read_text())["config"]
    assert (config.population_size, config.trial_budget, config.n_ensemble) == (4, 12, 3)


@pytest.mark.parametrize(
    "argv",
    [
        ("search", "--population", 1),
        ("search", "--mutation-rate", 1.5),
        ("search", "--budget", 16),  # below the default population of 32
        ("search", "--workers", 0),
        ("search", "--fitness", "external"),
        ("search", "--command", "echo {policy}"),
        ("search", "--fitness", "proxy", "--samples", 3),
        ("baseline", "--budget", 0),
        ("tune", "chime6", "--scale", 1.5),
        ("tune", "chime6", "--increment", 5),
        ("inspect", "ami", "--q-decimals", 9),
        ("bound", "--ensemble-nodes", 0),
        ("search", "--no-such-flag"),
    ],
)
def test_usage_errors_exit_2(tmp_path, argv):
    assert run(*argv, "--out", tmp_path / "o") == 2


def test_bad_config_files_exit_2(tmp_path):
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"populaton_size": 4}))
    assert run("search", "--config", unknown, "--out", tmp_path) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert run("search", "--config", broken, "--out", tmp_path) == 2


def test_unresumable_checkpoint_exits_3(tmp_path, capsys):
    assert run("search", "--resume", tmp_path / "missing.json", "--out", tmp_path) == 3
    bad = tmp_path / "checkpoint.json"
    bad.write_text("{not json")
    assert run("search", "--resume", bad, "--out", tmp_path) == 3
    assert "checkpoint" in capsys.readouterr().err


def test_search_resume_from_checkpoint(tmp_path):
    common = ("--population", 4, "--ensemble-nodes", 4, "--samples", 2, "--seed", 3)
    assert run("search", *common, "--budget", 16, "--out", tmp_path / "full") == 0
    assert run("search", *common, "--budget", 8, "--out", tmp_path / "part") == 0
    # the checkpoint's settings win, so the larger budget must come via a config edit
    ckpt = tmp_path / "part" / "checkpoint.json"
    state = json.loads(ckpt.read_text())
    state["config"]["trial_budget"] = 16
    ckpt.write_text(json.dumps(state))
    assert run("search", *common, "--budget", 16, "--resume", ckpt, "--out", tmp_path / "part") == 0
    full = (tmp_path / "full" / "trials.jsonl").read_bytes()
    assert (tmp_path / "part" / "trials.jsonl").read_bytes() == full


def test_baselines(tmp_path, capsys):
    assert run("baseline", "--budget", 5, "--samples", 2, "--out", tmp_path / "s") == 0
    assert "5/14641 = 0.03%" in capsys.readouterr().out
    assert len(read_trials(tmp_path / "s" / "trials.jsonl")) == 5
    args = ("baseline", "--kind", "random-policy", "--budget", 4, "--ensemble-nodes", 3, "--samples", 2)
    assert run(*args, "--out", tmp_path / "r") == 0
    assert read_policy(tmp_path / "r" / "best.policy.json").policy.n_ensemble == 3


def test_external_search_with_mock_trainer(tmp_path):
    command = f"{sys.executable} {MOCK} {{policy}}"
    args = ("search", "--fitness", "external", "--command", command, "--population", 2, "--budget", 4)
    assert run(*args, "--ensemble-nodes", 5, "--out", tmp_path) == 0
    # the mock scores a policy by its ensemble size
    assert [t.fitness for t in read_trials(tmp_path / "trials.jsonl")] == [5.0] * 4


# -- apply -- #


def test_identity_policy_leaves_bytes_unchanged(tmp_path, features):
    write_policy(tmp_path / "id.json", linear_policy([IDENTITY, IDENTITY]))
    assert run("apply", tmp_path / "id.json", features, "--out", tmp_path / "o") == 0
    assert (tmp_path / "o" / "augmented.gaug").read_bytes() == features.read_bytes()


def test_chime_apply_golden(tmp_path, features):
    assert run("apply", "chime6", features, "--seed", 5, "--out", tmp_path / "a") == 0
    assert run("apply", "chime6", features, "--seed", 5, "--out", tmp_path / "b") == 0
    blob = (tmp_path / "a" / "augmented.gaug").read_bytes()
    assert blob == (tmp_path / "b" / "augmented.gaug").read_bytes()
    assert hashlib.sha256(blob).hexdigest() == CHIME_GOLDEN
    assert blob != features.read_bytes()
    out = read_features(tmp_path / "a" / "augmented.gaug")
    assert all(m.padding_is_zero() for m in out.items)


def test_apply_seed_changes_output(tmp_path, features):
    run("apply", "chime6", features, "--seed", 1, "--out", tmp_path / "a")
    run("apply", "chime6", features, "--seed", 2, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "augmented.gaug").read_bytes() != (tmp_path / "b" / "augmented.gaug").read_bytes()


def test_apply_trace_fig1_frequency(tmp_path):
    rng = np.random.default_rng(0)
    items = tuple(FeatureMatrix(rng.normal(size=(4, 2)).astype(np.float32), 4) for _ in range(100_000))
    (tmp_path / "many.gaug").write_bytes(encode_features(FeatureBatch(items)))
    assert run("apply", "fig1", tmp_path / "many.gaug", "--trace", "--seed", 3, "--out", tmp_path) == 0
    rows = json.loads((tmp_path / "trace.json").read_text())
    assert len(rows) == 100_000
    target = [[1, "left"], [2, "right"], [3, "left"]]
    hits = [r for r in rows if r["steps"] == target]
    assert abs(len(hits) / len(rows) - 0.084) <= 0.003
    assert hits[0]["probability"] == 0.084 and hits[0]["augs"] == ["TM-AM", "TM-AM", "FM"]


def test_apply_csv_round_trip(tmp_path):
    path = tmp_path / "one.csv"
    write_features(path, FeatureBatch((FeatureMatrix(np.ones((5, 3), dtype=np.float32), 5),)))
    write_policy(tmp_path / "gn.json", linear_policy([AugSpec("GN", 1.0, 5, 0)]))
    assert run("apply", tmp_path / "gn.json", path, "--out", tmp_path / "o") == 0
    assert read_features(tmp_path / "o" / "augmented.csv").items[0].valid.shape == (5, 3)


def test_apply_schema_violation_exits_2_with_node(tmp_path, features, capsys):
    doc = json.loads(asset_path("fig1").read_text())
    doc["nodes"][1]["left"]["aug"]["x1"] = 11
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    assert run("apply", tmp_path / "bad.json", features, "--out", tmp_path / "o") == 2
    assert "node 2 left" in capsys.readouterr().err


def test_apply_missing_files_exit_2(tmp_path, features):
    assert run("apply", tmp_path / "none.json", features, "--out", tmp_path) == 2
    assert run("apply", "fig1", tmp_path / "none.gaug", "--out", tmp_path) == 2
    (tmp_path / "junk.gaug").write_bytes(b"junk")
    assert run("apply", "fig1", tmp_path / "junk.gaug", "--out", tmp_path) == 2


# -- policy subcommands -- #


def test_mutate_writes_valid_child(tmp_path):
    assert run("mutate", "chime6", "--seed", 4, "--out", tmp_path / "a") == 0
    assert run("mutate", "chime6", "--seed", 4, "--out", tmp_path / "b") == 0
    child = tmp_path / "a" / "child.policy.json"
    assert child.read_bytes() == (tmp_path / "b" / "child.policy.json").read_bytes()
    assert validate(read_policy(child).policy).ok
    assert run("mutate", "chime6", "--mutation-rate", 2, "--out", tmp_path) == 2


def test_validate(tmp_path, capsys):
    assert run("validate", "ami") == 0
    doc = json.loads(asset_path("fig1").read_text())
    doc["nodes"][2]["left"]["input"] = 3  # node 3 fed by itself
    (tmp_path / "tampered.json").write_text(json.dumps(doc))
    assert run("validate", tmp_path / "tampered.json") != 0
    assert "node 3" in capsys.readouterr().err


def test_tune_scale_and_increment(tmp_path):
    assert run("tune", "chime6", "--scale", 0.8, "--out", tmp_path / "s") == 0
    tuned = read_policy(tmp_path / "s" / "tuned.policy.json")
    assert tuned.policy.node(1).a_left.x1 == 3  # 4 * 0.8 = 3.2
    assert tuned.provenance["tuned"] == {"scale": 0.8}
    assert run("tune", "chime6", "--increment", 1, "--out", tmp_path / "i") == 0
    assert read_policy(tmp_path / "i" / "tuned.policy.json").policy.node(11).a_left.x2 == 10


def test_inspect_ami_header(capsys):
    assert run("inspect", "ami", "--table") == 0
    header = capsys.readouterr().out.splitlines()[0].split()
    assert header == ["Node", "1", "2", "3", "4", "6", "9", "11", "16", "18", "20", "25"]


def test_inspect_dot(capsys):
    assert run("inspect", "fig1", "--dot") == 0
    out = capsys.readouterr().out
    assert out.startswith("digraph") and "Node" not in out


def test_bound(capsys):
    assert run("bound", "--exact") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "M = 1936"
    assert lines[1] == "C(M, 24) ~ 10^55.03"
    assert len(lines[2]) == 56  # a 56-digit integer, about 1.07e55


def test_every_flag_has_help():
    parser = build_parser()
    subparsers = next(a for a in parser._actions if a.dest == "command_name").choices
    assert set(subparsers) == {"search", "baseline", "apply", "mutate", "validate", "tune", "inspect", "bound"}
    for name, sub in subparsers.items():
        for action in sub._actions:
            if action.dest != "help":
                assert action.help, (name, action.dest)
        assert main([name, "--help"]) == 0

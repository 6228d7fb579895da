from __future__ import annotations

import dataclasses
import math
import sys
from pathlib import Path

import numpy as np
import pytest

from gaugment.augment_ops import FeatureBatch
from gaugment.fitness import (
    ExternalCommand,
    FitnessRequest,
    ProxyClassifier,
    SyntheticLandscape,
    make_evaluator,
    probe_batch,
)
from gaugment.policy_graph import IDENTITY, AugSpec, EnsembleNode, PolicyGraph, linear_policy, random_policy

MOCK = Path(__file__).resolve().parents[1] / "scripts" / "mock_trainer.py"
PY = sys.executable
IDENTITY_POLICY = linear_policy([IDENTITY])


@pytest.fixture(scope="module")
def landscape():
    return SyntheticLandscape(samples=32)


# -- synthetic landscape -- #


def test_identity_against_zero_target():
    ev = SyntheticLandscape(target=(0, 0, 0, 0), samples=8)
    assert ev(FitnessRequest(IDENTITY_POLICY, 1)).score == 0.0


def test_identity_against_default_target(landscape):
    expected = math.sqrt(sum(t * t for t in landscape.target))
    assert math.isclose(landscape(FitnessRequest(IDENTITY_POLICY, 1)).score, expected, rel_tol=1e-12)


def test_constructed_policy_hits_its_expected_statistics():
    # Gaussian noise at ratio 0.5 adds noise energy 0.25 in expectation; a
    # background blend drawn uniformly from [0, 0.6] has mean 0.3.
    policy = linear_policy([AugSpec("GN", 1.0, 5, 0), AugSpec("M-A", 1.0, 10, 0)])
    ev = SyntheticLandscape(target=(0.0, 0.25, 0.0, 0.3), samples=256)
    mean, stderr = ev.distortion(policy, 3)
    score = ev(FitnessRequest(policy, 3)).score
    assert score <= 3 * float(np.linalg.norm(stderr))
    assert math.isclose(score, float(np.linalg.norm(mean - np.array(ev.target))))


def test_landscape_deterministic_and_order_free(landscape):
    policy = random_policy(6, np.random.default_rng(0))
    a = landscape(FitnessRequest(policy, 99)).score
    assert landscape(FitnessRequest(policy, 99)).score == a
    shuffled = FeatureBatch(tuple(reversed(probe_batch().items)))
    other = SyntheticLandscape(samples=32, probe=shuffled)
    assert other(FitnessRequest(policy, 99)).score == a


def test_landscape_rejects_invalid_policy(landscape):
    bad = PolicyGraph(1, (EnsembleNode(1, 1, 0, 0.5, IDENTITY, IDENTITY),))
    assert landscape(FitnessRequest(bad, 0)).failed


def test_probe_batch_shape():
    batch = probe_batch()
    assert len(batch) == 16 and batch.freq_channels == 80
    assert all(100 <= m.valid_length <= 300 and m.time_frames == 300 for m in batch.items)


def test_compact_variant():
    ev = SyntheticLandscape.compact()
    assert ev.samples == 96 and ev.probe.freq_channels == 40


# -- proxy classifier -- #


@pytest.fixture(scope="module")
def proxy():
    return ProxyClassifier()


def test_proxy_rewards_augmentation_that_mimics_dev(proxy):
    oracle = linear_policy([AugSpec("TM-AS", 1.0, 10, 0), AugSpec("GN", 1.0, 3, 0)])
    wins = 0
    for seed in range(10):
        plain = proxy(FitnessRequest(IDENTITY_POLICY, seed)).score
        augmented = proxy(FitnessRequest(oracle, seed)).score
        assert 0.0 <= plain <= 1.0 and 0.0 <= augmented <= 1.0
        wins += plain > augmented
    assert wins >= 8


def test_proxy_without_training_is_chance(proxy):
    untrained = dataclasses.replace(proxy, steps=0)
    score = untrained(FitnessRequest(IDENTITY_POLICY, 0)).score
    half_width = 3 * math.sqrt(0.25 / proxy.n_dev)
    assert abs(score - 0.5) <= half_width


def test_proxy_deterministic(proxy):
    policy = random_policy(4, np.random.default_rng(2))
    assert proxy(FitnessRequest(policy, 5)).score == proxy(FitnessRequest(policy, 5)).score


# -- external command -- #


def test_echo_score():
    # the policy path lands in $0 of the shell, so only "1.25" is printed
    value = ExternalCommand("sh -c 'echo 1.25' {policy}")(FitnessRequest(IDENTITY_POLICY, 0))
    assert value.score == 1.25


def test_last_line_wins():
    cmd = f"{PY} -c 'print(\"loss 3\"); print(); print(0.5)' {{policy}}"
    assert ExternalCommand(cmd)(FitnessRequest(IDENTITY_POLICY, 0)).score == 0.5


def test_nonzero_exit_captures_stderr():
    cmd = f"{PY} -c 'import sys; sys.stderr.write(\"boom\"); sys.exit(4)' {{policy}}"
    value = ExternalCommand(cmd)(FitnessRequest(IDENTITY_POLICY, 0))
    assert value.failed
    assert value.metadata["stderr"] == "boom"
    assert "4" in value.metadata["reason"]


@pytest.mark.parametrize("output", ["nan", "hello", ""])
def test_unusable_output_fails(output):
    cmd = f"{PY} -c 'print(\"{output}\")' {{policy}}"
    assert ExternalCommand(cmd)(FitnessRequest(IDENTITY_POLICY, 0)).failed


def test_timeout():
    cmd = f"{PY} -c 'import time; time.sleep(5)' {{policy}}"
    value = ExternalCommand(cmd, timeout=0.5)(FitnessRequest(IDENTITY_POLICY, 0))
    assert value.failed and "timed out" in value.metadata["reason"]


def test_missing_program_fails():
    assert ExternalCommand("no-such-program-xyz {policy}")(FitnessRequest(IDENTITY_POLICY, 0)).failed


def test_environment_variables():
    cmd = f"{PY} -c 'import os; print(os.environ[\"GAUG_TRIAL_ID\"] + os.environ[\"GAUG_SEED\"])' {{policy}}"
    value = ExternalCommand(cmd)(FitnessRequest(IDENTITY_POLICY, seed=34, trial_id=12))
    assert value.score == 1234


def test_template_needs_policy_placeholder():
    with pytest.raises(ValueError):
        ExternalCommand("echo 1")


@pytest.mark.parametrize("n", [1, 7, 25])
def test_mock_trainer_round_trip(n):
    policy = random_policy(n, np.random.default_rng(n))
    value = ExternalCommand(f"{PY} {MOCK} {{policy}}")(FitnessRequest(policy, 0))
    assert value.score == n


def test_mock_trainer_result_file():
    ev = ExternalCommand(f"{PY} {MOCK} {{policy}} --result {{result}}", result_file=True)
    assert ev(FitnessRequest(random_policy(3, np.random.default_rng(0)), 0)).score == 3


def test_make_evaluator():
    assert isinstance(make_evaluator("synthetic", samples=4), SyntheticLandscape)
    with pytest.raises(ValueError):
        make_evaluator("wer")

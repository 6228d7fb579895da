"""Fitness evaluators: lower scores are better everywhere.

An evaluator is any callable taking a :class:`FitnessRequest` and returning
a :class:`FitnessValue`.  Two desk-scale evaluators ship with the package;
:class:`ExternalCommand` hands the policy to an arbitrary training job.
"""

from __future__ import annotations

import hashlib
import math
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment_ops import (
    AugmentConfig,
    DEFAULT_CONFIG,
    EffectLog,
    FeatureBatch,
    FeatureMatrix,
    apply_path,
    apply_policy,
)
from .policy_graph import PolicyGraph, path_sampler, validate

FAILURE = math.inf


@dataclass(frozen=True)
class FitnessRequest:
    policy: PolicyGraph
    seed: int
    trial_id: int = 0
    generation: int = 0


@dataclass(frozen=True)
class FitnessValue:
    score: float
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.score)


Evaluator = Callable[[FitnessRequest], FitnessValue]


def failure(reason: str, **extra: str) -> FitnessValue:
    return FitnessValue(FAILURE, {"status": "failed", "reason": reason, **extra})


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed % 2**64, spawn_key=key))


def probe_batch(
    n_utterances: int = 16,
    min_frames: int = 100,
    max_frames: int = 300,
    channels: int = 80,
    seed: int = 1234,
) -> FeatureBatch:
    """Fixed synthetic log-mel-like utterances, zero-padded to ``max_frames``."""
    rng = np.random.default_rng(seed)
    items = []
    for _ in range(n_utterances):
        frames = int(rng.integers(min_frames, max_frames + 1))
        envelope = 2.0 + np.cumsum(rng.normal(0, 0.3, channels))
        envelope -= envelope.min() - 1.0
        loudness = 1.0 + 0.5 * np.sin(np.linspace(0, rng.uniform(2, 12), frames))
        valid = envelope[None, :] * loudness[:, None] + rng.normal(0, 0.3, (frames, channels))
        items.append(FeatureMatrix.from_valid(valid.astype(np.float32), max_frames))
    return FeatureBatch(tuple(items))


def _content_key(item: FeatureMatrix) -> bytes:
    h = hashlib.sha256(item.valid.tobytes())
    h.update(str(item.data.shape).encode())
    return h.digest()


DISTORTION_NAMES = ("masked_fraction", "noise_energy", "length_change", "mix_blend")


@dataclass
class SyntheticLandscape:
    """Distance between the distortion a policy induces and a target profile.

    The policy is applied ``samples`` times, cycling over the probe
    utterances.  Each application records what its operators actually did
    (fraction of cells masked, added noise energy relative to signal power,
    relative change in utterance length, background blend ratio); the score
    is the Euclidean distance from the mean of those vectors to ``target``.
    The probe set is put in a content-defined order first, so shuffling it
    does not change the score.
    """

    target: Sequence[float] = (0.3, 0.2, 0.1, 0.2)
    samples: int = 64
    probe: FeatureBatch | None = None
    config: AugmentConfig = DEFAULT_CONFIG

    def __post_init__(self):
        batch = self.probe if self.probe is not None else probe_batch()
        self.probe = FeatureBatch(tuple(sorted(batch.items, key=_content_key)))
        self.target = tuple(float(t) for t in self.target)
        if len(self.target) != len(DISTORTION_NAMES):
            raise ValueError(f"target needs {len(DISTORTION_NAMES)} entries")

    @classmethod
    def compact(cls, **options) -> "SyntheticLandscape":
        """Cheaper variant: shorter, narrower probe utterances, more samples.

        About twice as fast per evaluation as the default with a lower
        Monte-Carlo noise floor; used for many-seed search comparisons.
        """
        options.setdefault("samples", 96)
        options.setdefault("probe", probe_batch(min_frames=60, max_frames=160, channels=40))
        return cls(**options)

    def distortion(self, policy: PolicyGraph, seed: int) -> tuple[np.ndarray, np.ndarray]:
        """Mean and standard error of the per-application distortion vectors."""
        items = self.probe.items
        rows = np.empty((self.samples, len(DISTORTION_NAMES)))
        rng = _stream(seed)
        draw = path_sampler(policy, check=False)
        for k in range(self.samples):
            j = k % len(items)
            log = EffectLog()
            apply_path(draw(rng), items[j], rng, config=self.config, sources=items, index=j, log=log)
            rows[k] = log.as_vector()
        if self.samples > 1:
            stderr = rows.std(axis=0, ddof=1) / math.sqrt(self.samples)
        else:
            stderr = np.zeros(len(DISTORTION_NAMES))
        return rows.mean(axis=0), stderr

    def __call__(self, request: FitnessRequest) -> FitnessValue:
        if not validate(request.policy).ok:
            return failure("invalid policy")
        mean, _ = self.distortion(request.policy, request.seed)
        score = float(np.linalg.norm(mean - np.asarray(self.target)))
        meta = {name: f"{v:.6g}" for name, v in zip(DISTORTION_NAMES, mean)}
        return FitnessValue(score, meta)


def _proxy_split(n: int, frames: tuple[int, int], channels: int, rng, corrupt: bool):
    labels = np.arange(n) % 2
    items = []
    for label in labels:
        length = int(rng.integers(frames[0], frames[1] + 1))
        x = rng.normal(0.0, 0.5, (length, channels))
        x[:, 0:8] += 1.0 + label  # class level in the low band
        x[:, 8:16] += 1.5  # reference band, identical across classes
        if corrupt:
            dropped = rng.random(length) < rng.uniform(0.3, 0.7)
            x[dropped] = 0.0
            x += rng.normal(0.0, 0.3, x.shape)
        items.append(FeatureMatrix.from_valid(x.astype(np.float32), frames[1]))
    return FeatureBatch(tuple(items)), labels


@dataclass
class ProxyClassifier:
    """Dev error of a logistic classifier trained on policy-augmented data.

    Two classes differ only in the level of a low frequency band; a second
    band carries the same level for both.  Training utterances are clean,
    dev utterances lose a random 30-70% of their frames and gain noise, so a
    classifier that only ever saw clean inputs mis-calibrates on dev.
    Features are per-channel means over valid frames.  Weights (not the
    bias) are L2-decayed, so without augmentation the decision threshold
    ends up in the bias, which does not scale with the dropped frames.
    """

    steps: int = 300
    weight_decay: float = 0.03
    batch_size: int = 16
    learning_rate: float = 0.5
    n_train: int = 128
    n_dev: int = 200
    frames: tuple[int, int] = (30, 50)
    channels: int = 32
    data_seed: int = 7
    config: AugmentConfig = DEFAULT_CONFIG

    def __post_init__(self):
        rng = np.random.default_rng(self.data_seed)
        self.train, self.train_labels = _proxy_split(self.n_train, self.frames, self.channels, rng, False)
        self.dev, self.dev_labels = _proxy_split(self.n_dev, self.frames, self.channels, rng, True)
        self._dev_x = _pool(self.dev)

    def __call__(self, request: FitnessRequest) -> FitnessValue:
        if not validate(request.policy).ok:
            return failure("invalid policy")
        rng = _stream(request.seed, 0)
        w = np.zeros(self.channels)
        b = 0.0
        for step in range(self.steps):
            pick = rng.choice(len(self.train), size=self.batch_size, replace=False)
            batch = FeatureBatch(tuple(self.train[int(i)] for i in pick))
            step_seed = int(rng.integers(2**63))
            augmented, _ = apply_policy(request.policy, batch, step_seed, self.config)
            x = _pool(augmented)
            y = self.train_labels[pick]
            p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
            w -= self.learning_rate * (x.T @ (p - y) / len(y) + self.weight_decay * w)
            b -= self.learning_rate * float(np.mean(p - y))
        predicted = (self._dev_x @ w + b) > 0
        error = float(np.mean(predicted != self.dev_labels.astype(bool)))
        return FitnessValue(error, {"dev_error": f"{error:.6g}", "steps": str(self.steps)})


def _pool(batch: FeatureBatch) -> np.ndarray:
    return np.stack([m.valid.astype(np.float64).mean(axis=0) for m in batch.items])


@dataclass
class ExternalCommand:
    """Score policies with an external program.

    ``{policy}`` in the command template is replaced by the path of a
    temporary file holding the policy JSON, and ``{result}`` (if present) by
    a path the program may write its score to.  The program sees
    ``GAUG_TRIAL_ID``, ``GAUG_SEED`` and ``GAUG_GENERATION`` in its
    environment.  The score is the last non-empty stdout line, or the
    contents of the result file when ``result_file`` is set.
    """

    command_template: str
    timeout: float | None = 3600.0
    result_file: bool = False
    env: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if "{policy}" not in self.command_template:
            raise ValueError("command template must contain a {policy} placeholder")

    def __call__(self, request: FitnessRequest) -> FitnessValue:
        from .io_formats import PolicyDocument, encode_policy

        with tempfile.TemporaryDirectory(prefix="gaug-") as tmp:
            policy_path = Path(tmp) / "trial.policy.json"
            result_path = Path(tmp) / "result.txt"
            policy_path.write_text(encode_policy(PolicyDocument(request.policy)))
            argv = [
                token.replace("{policy}", str(policy_path)).replace("{result}", str(result_path))
                for token in shlex.split(self.command_template)
            ]
            env = {
                **os.environ,
                **self.env,
                "GAUG_TRIAL_ID": str(request.trial_id),
                "GAUG_SEED": str(request.seed),
                "GAUG_GENERATION": str(request.generation),
                "GAUG_RESULT_FILE": str(result_path),
            }
            try:
                proc = subprocess.run(
                    argv, capture_output=True, text=True, timeout=self.timeout, env=env, cwd=tmp
                )
            except subprocess.TimeoutExpired:
                return failure(f"timed out after {self.timeout}s")
            except OSError as exc:
                return failure(f"could not start command: {exc}")
            stderr = proc.stderr[-2000:]
            if proc.returncode != 0:
                return failure(f"exit status {proc.returncode}", stderr=stderr)
            if self.result_file:
                if not result_path.exists():
                    return failure("result file not written", stderr=stderr)
                text = result_path.read_text()
            else:
                text = proc.stdout
            lines = [line.strip() for line in text.splitlines() if line.strip()]
            if not lines:
                return failure("no score produced", stderr=stderr)
            try:
                score = float(lines[-1])
            except ValueError:
                return failure(f"unparseable score {lines[-1]!r}", stderr=stderr)
            if not math.isfinite(score):
                return failure(f"non-finite score {lines[-1]!r}", stderr=stderr)
            return FitnessValue(score, {"status": "ok"})


def make_evaluator(name: str, **options) -> Evaluator:
    """Build an evaluator from a short name: synthetic, proxy or external."""
    if name == "synthetic":
        return SyntheticLandscape(**options)
    if name == "proxy":
        return ProxyClassifier(**options)
    if name == "external":
        return ExternalCommand(**options)
    raise ValueError(f"unknown fitness evaluator {name!r}")

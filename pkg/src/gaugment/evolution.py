"""Generational evolutionary search over policy graphs, plus baselines.

Each generation is evaluated as a whole before the next one is bred
(binary tournament, then mutation).  Trial seeds depend only on
``(master_seed, generation, slot)`` and all breeding randomness comes from a
single master stream that is checkpointed, so a run's trial log does not
depend on worker count, completion order, or interruptions.
"""

from __future__ import annotations

import hashlib
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import io_formats
from .fitness import Evaluator, FitnessRequest, FitnessValue, failure
from .policy_graph import (
    AUG_TYPES,
    IDENTITY,
    AugSpec,
    EnsembleNode,
    PolicyGraph,
    mutate,
    random_policy,
)

log = logging.getLogger(__name__)

SPECAUG_GRID_SIZE = 11**4


@dataclass(frozen=True)
class SearchConfig:
    population_size: int = 32
    mutation_rate: float = 0.8
    n_ensemble: int = 25
    trial_budget: int = 2000
    workers: int = 1
    master_seed: int = 0
    elitism: bool = False

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError(f"population_size must be >= 2, got {self.population_size}")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError(f"mutation_rate must lie in [0, 1], got {self.mutation_rate}")
        if self.n_ensemble < 1:
            raise ValueError(f"n_ensemble must be >= 1, got {self.n_ensemble}")
        if self.trial_budget < self.population_size:
            raise ValueError(
                f"trial_budget {self.trial_budget} is smaller than one generation "
                f"({self.population_size})"
            )
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    @property
    def generations(self) -> int:
        """Whole generations that fit in the budget; a remainder is skipped."""
        return self.trial_budget // self.population_size


@dataclass
class Trial:
    trial_id: int
    generation: int
    slot: int
    seed: int
    policy: PolicyGraph
    fitness: float = math.inf
    metadata: dict[str, str] = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.fitness)

    def rank_key(self) -> tuple[float, int]:
        fitness = self.fitness if not math.isnan(self.fitness) else math.inf
        return fitness, self.trial_id


@dataclass
class SearchResult:
    best: Trial
    trials: list[Trial]
    metadata: dict = field(default_factory=dict)
    summary: list[tuple[int, float, float, float]] = field(default_factory=list)

    def best_so_far(self) -> list[float]:
        """Running minimum of fitness in trial order."""
        return list(np.minimum.accumulate([t.fitness for t in self.trials]))


def trial_seed(master_seed: int, generation: int, slot: int) -> int:
    """64-bit seed that depends only on the trial's position in the search."""
    key = f"{master_seed}:{generation}:{slot}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def _evaluate_one(evaluator: Evaluator, request: FitnessRequest) -> tuple[FitnessValue, float]:
    start = time.perf_counter()
    try:
        value = evaluator(request)
    except Exception as exc:  # evaluator bugs must not abort a generation
        log.warning("trial %d raised %r", request.trial_id, exc)
        value = failure(f"evaluator raised {type(exc).__name__}: {exc}")
    if math.isnan(value.score):
        value = failure("evaluator returned NaN")
    return value, time.perf_counter() - start


def evaluate_trials(trials: Sequence[Trial], evaluator: Evaluator, workers: int = 1) -> None:
    """Fill in fitness for ``trials`` in place, at most ``workers`` at a time."""
    requests = [FitnessRequest(t.policy, t.seed, t.trial_id, t.generation) for t in trials]
    if workers == 1:
        results = [_evaluate_one(evaluator, r) for r in requests]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: _evaluate_one(evaluator, r), requests))
    for trial, (value, elapsed) in zip(trials, results):
        trial.fitness = float(value.score)
        trial.metadata = dict(value.metadata)
        trial.wall_time = elapsed


def tournament_select(
    population: Sequence[Trial], rng: np.random.Generator, n: int | None = None
) -> list[Trial]:
    """Binary tournament: draw ``n`` pairs with replacement, keep each pair's fitter member.

    Lower fitness wins; equal fitness goes to the lower trial id.
    """
    if not population:
        raise ValueError("cannot select from an empty population")
    n = len(population) if n is None else n
    pairs = rng.integers(len(population), size=(n, 2))
    return [min(population[a], population[b], key=Trial.rank_key) for a, b in pairs]


def _new_generation(
    policies: Sequence[PolicyGraph], generation: int, first_id: int, master_seed: int
) -> list[Trial]:
    return [
        Trial(first_id + slot, generation, slot, trial_seed(master_seed, generation, slot), p)
        for slot, p in enumerate(policies)
    ]


def evolve_generation(
    population: Sequence[Trial],
    config: SearchConfig,
    evaluator: Evaluator,
    rng: np.random.Generator,
    generation: int,
    first_trial_id: int,
) -> list[Trial]:
    """Breed and evaluate generation ``generation`` from the previous one."""
    survivors = tournament_select(population, rng, config.population_size)
    children = [mutate(s.policy, config.mutation_rate, rng) for s in survivors]
    if config.elitism:
        children[0] = min(population, key=Trial.rank_key).policy
    trials = _new_generation(children, generation, first_trial_id, config.master_seed)
    evaluate_trials(trials, evaluator, config.workers)
    return trials


def _summary_row(trials: Sequence[Trial], so_far: float) -> tuple[int, float, float, float]:
    fitness = [t.fitness for t in trials]
    best = min(fitness)
    return trials[0].generation, best, float(statistics.median(fitness)), min(so_far, best)


def _best(trials: Sequence[Trial]) -> Trial:
    return min(trials, key=Trial.rank_key)


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    bit_gen = getattr(np.random, state["bit_generator"])()
    bit_gen.state = state
    return np.random.Generator(bit_gen)


class _Outputs:
    """Artifacts written into a search output directory."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.trials = out_dir / "trials.jsonl"
        self.timings = out_dir / "timings.jsonl"
        self.checkpoint = out_dir / "checkpoint.json"
        self.summary = out_dir / "summary.csv"
        self.best = out_dir / "best.policy.json"

    def append(self, trials: Sequence[Trial]) -> None:
        io_formats.write_trials(self.trials, trials, append=True)
        with open(self.timings, "a", encoding="utf-8") as fh:
            for t in trials:
                fh.write(f'{{"trial_id":{t.trial_id},"wall_time":{t.wall_time:.6f}}}\n')

    def save_checkpoint(self, config, generation, trials_done, population, rng) -> None:
        state = {
            "config": config,
            "generation": generation,
            "trials_done": trials_done,
            "population": population,
            "rng_state": _rng_state(rng),
        }
        tmp = self.checkpoint.with_suffix(".json.tmp")
        tmp.write_text(io_formats.encode_checkpoint(state))
        tmp.replace(self.checkpoint)


def _load_resume(path: Path, outputs: _Outputs | None) -> tuple[dict, list[Trial]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise io_formats.CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    state = io_formats.decode_checkpoint(text)
    history: list[Trial] = []
    if outputs is not None:
        # lines past the checkpoint may be cut short by a kill; never parse them
        done = state["trials_done"]
        lines = outputs.trials.read_bytes().split(b"\n") if outputs.trials.exists() else []
        complete = lines[:-1]  # the last element follows the final newline
        if len(complete) < done:
            raise io_formats.CheckpointError(
                f"trial log has {len(complete)} trials but checkpoint records {done}"
            )
        try:
            history = [io_formats.decode_trial(line.decode("utf-8")) for line in complete[:done]]
        except (ValueError, KeyError, TypeError) as exc:
            raise io_formats.CheckpointError(f"trial log is corrupt: {exc}") from None
        if [t.trial_id for t in history] != list(range(len(history))):
            raise io_formats.CheckpointError("trial log does not match checkpoint")
        io_formats.write_trials(outputs.trials, history)
        if outputs.timings.exists():
            lines = outputs.timings.read_text().splitlines()[: len(history)]
            outputs.timings.write_text("".join(line + "\n" for line in lines))
    return state, history


def run_search(
    config: SearchConfig,
    evaluator: Evaluator,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    on_generation: Callable[[int, list[Trial]], None] | None = None,
) -> SearchResult:
    """Run the generational search until the budget's whole generations are spent.

    With ``out_dir`` the trial log, per-trial timings, a checkpoint (after
    every generation), the summary and the best policy are written there.
    ``resume_from`` continues from a checkpoint; the config stored in the
    checkpoint wins except for ``workers``.
    """
    outputs = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        outputs = _Outputs(Path(out_dir))

    if resume_from is not None:
        state, history = _load_resume(Path(resume_from), outputs)
        config = SearchConfig(**{**asdict(state["config"]), "workers": config.workers})
        rng = _restore_rng(state["rng_state"])
        population = state["population"]
        generation = state["generation"] + 1
        if not history:
            history = list(population)
    else:
        if outputs is not None:
            for path in (outputs.trials, outputs.timings):
                path.write_text("")
        rng = np.random.default_rng(np.random.SeedSequence(config.master_seed % 2**64))
        policies = [random_policy(config.n_ensemble, rng) for _ in range(config.population_size)]
        population = _new_generation(policies, 0, 0, config.master_seed)
        evaluate_trials(population, evaluator, config.workers)
        history = list(population)
        generation = 1
        if outputs is not None:
            outputs.append(population)
            outputs.save_checkpoint(config, 0, len(history), population, rng)
        if on_generation is not None:
            on_generation(0, population)

    while generation < config.generations:
        population = evolve_generation(
            population, config, evaluator, rng, generation, len(history)
        )
        history.extend(population)
        log.info("generation %d best %.6g", generation, _best(population).fitness)
        if outputs is not None:
            outputs.append(population)
            outputs.save_checkpoint(config, generation, len(history), population, rng)
        if on_generation is not None:
            on_generation(generation, population)
        generation += 1

    summary = []
    so_far = math.inf
    for g in range(config.generations):
        row = _summary_row(history[g * config.population_size : (g + 1) * config.population_size], so_far)
        so_far = row[3]
        summary.append(row)

    best = _best(history)
    result = SearchResult(
        best=best,
        trials=history,
        metadata={"config": asdict(config), "generations": config.generations, "trials": len(history)},
        summary=summary,
    )
    if outputs is not None:
        io_formats.write_summary(outputs.summary, summary)
        io_formats.write_policy(
            outputs.best,
            io_formats.PolicyDocument(
                best.policy,
                {"trial_id": best.trial_id, "fitness": best.fitness, "search": asdict(config)},
            ),
        )
    return result


# -- baselines -- #


@dataclass(frozen=True)
class SpecAugPoint:
    fm_x1: int
    fm_x2: int
    tm_x1: int
    tm_x2: int

    def to_policy(self) -> PolicyGraph:
        """Time mask (adaptive multiplicity) followed by frequency mask, always applied."""
        tm = AugSpec("TM-AM", 1.0, self.tm_x1, self.tm_x2)
        fm = AugSpec("FM", 1.0, self.fm_x1, self.fm_x2)
        return PolicyGraph(
            2, (EnsembleNode(1, 0, 0, 1.0, tm, IDENTITY), EnsembleNode(2, 1, 1, 1.0, fm, IDENTITY))
        )

    @classmethod
    def from_index(cls, index: int) -> "SpecAugPoint":
        if not 0 <= index < SPECAUG_GRID_SIZE:
            raise ValueError(f"grid index {index} outside [0, {SPECAUG_GRID_SIZE})")
        digits = []
        for _ in range(4):
            index, d = divmod(index, 11)
            digits.append(d)
        return cls(*digits)


def specaugment_grid() -> list[SpecAugPoint]:
    return [SpecAugPoint.from_index(i) for i in range(SPECAUG_GRID_SIZE)]


def nominal_coverage(budget: int, space: int = SPECAUG_GRID_SIZE) -> float:
    """Trials per grid point, ignoring repeats."""
    return budget / space


def _as_rng(rng: np.random.Generator | int) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(np.random.SeedSequence(int(rng) % 2**64))


def _one_shot_search(
    policies: Sequence[PolicyGraph], evaluator: Evaluator, seed: int, workers: int, kind: str
) -> SearchResult:
    trials = _new_generation(policies, 0, 0, seed)
    evaluate_trials(trials, evaluator, workers)
    best = _best(trials)
    row = _summary_row(trials, math.inf)
    return SearchResult(best, trials, {"baseline": kind, "trials": len(trials), "seed": seed}, [row])


def random_search_specaugment(
    budget: int, evaluator: Evaluator, rng: np.random.Generator | int = 0, workers: int = 1
) -> SearchResult:
    """Uniform draws (with replacement) from the 11^4 SpecAugment strength grid."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    seed = rng if isinstance(rng, int) else int(_as_rng(rng).integers(2**63))
    gen = _as_rng(rng)
    points = [SpecAugPoint.from_index(int(i)) for i in gen.integers(SPECAUG_GRID_SIZE, size=budget)]
    result = _one_shot_search([p.to_policy() for p in points], evaluator, seed, workers, "specaugment")
    result.metadata["points"] = [asdict(p) for p in points]
    return result


def random_policy_search(
    budget: int,
    evaluator: Evaluator,
    n_ensemble: int = 25,
    rng: np.random.Generator | int = 0,
    workers: int = 1,
) -> SearchResult:
    """Uniform sampling of full policy graphs at a fixed budget."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    seed = rng if isinstance(rng, int) else int(_as_rng(rng).integers(2**63))
    gen = _as_rng(rng)
    policies = [random_policy(n_ensemble, gen) for _ in range(budget)]
    return _one_shot_search(policies, evaluator, seed, workers, "random-policy")


# -- search space size -- #


@dataclass(frozen=True)
class SearchSpaceBound:
    triples: int
    chosen: int
    count: int
    log10: float


def search_space_lower_bound(
    n_ensemble: int, n_aug_types: int = len(AUG_TYPES), n_magnitudes: int = 11, n_q_levels: int = 11
) -> SearchSpaceBound:
    """Crude lower bound on the number of distinct policies.

    Counts linear graphs whose ``n_ensemble - 1`` left edges carry distinct
    (type, q, x1) triples with identity excluded: C(M, N - 1) where
    M = (types - 1) * q_levels * magnitudes.
    """
    for name, value in (
        ("n_ensemble", n_ensemble),
        ("n_aug_types", n_aug_types),
        ("n_magnitudes", n_magnitudes),
        ("n_q_levels", n_q_levels),
    ):
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")
    triples = (n_aug_types - 1) * n_q_levels * n_magnitudes
    count = math.comb(triples, n_ensemble - 1)
    return SearchSpaceBound(triples, n_ensemble - 1, count, math.log10(count) if count else -math.inf)

"""DAG-structured stochastic augmentation policies.

A policy has an implicit input node (index 0), ensemble nodes with indices
``1..n_ensemble`` and an implicit output attached to the last node.  Every
ensemble node owns two labelled incoming edges; the node's state is the
left-edge augmentation of its left input with probability ``p_left`` and the
right-edge augmentation of its right input otherwise.
"""

from __future__ import annotations

import math
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

AUG_TYPES: tuple[str, ...] = (
    "CO", "FM", "FS", "FN", "FW-L", "FW-LG", "GN", "Id", "RC",
    "TP", "TM-AM", "TM-AS", "TM-FA", "TW-A", "TW", "M-A", "M-B",
)

# Published policy tables write an unqualified "FW"; it resolves to the
# linear-scale frequency warp but keeps its spelling through codecs.
AUG_ALIASES: dict[str, str] = {"FW": "FW-L"}

P_GRID = tuple(i / 10 for i in range(11))
MAX_STRENGTH = 10
Q_DECIMALS = 6
DEFAULT_PATH_CAP = 10**6

LEFT = "left"
RIGHT = "right"


class InvalidPolicyError(ValueError):
    """Raised when an operation requires a valid policy and gets another."""


class PathCapacityError(RuntimeError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"policy has {count} paths, exceeding the path cap of {cap}")
        self.count = count
        self.cap = cap


def canonical_type(aug_type: str) -> str:
    """Resolve aliases to one of the 17 operator codes."""
    return AUG_ALIASES.get(aug_type, aug_type)


@dataclass(frozen=True)
class AugSpec:
    aug_type: str
    q: float
    x1: int
    x2: int

    def __str__(self) -> str:
        return f"{self.aug_type}(q={self.q:g}, x1={self.x1}, x2={self.x2})"


IDENTITY = AugSpec("Id", 1.0, 0, 0)


@dataclass(frozen=True)
class EnsembleNode:
    index: int
    left_input: int
    right_input: int
    p_left: float
    a_left: AugSpec
    a_right: AugSpec

    @property
    def p_right(self) -> float:
        return round(1.0 - self.p_left, 10)

    def input(self, side: str) -> int:
        return self.left_input if side == LEFT else self.right_input

    def aug(self, side: str) -> AugSpec:
        return self.a_left if side == LEFT else self.a_right

    def prob(self, side: str) -> float:
        return self.p_left if side == LEFT else self.p_right

    def tenths(self, side: str) -> int:
        """Selection probability in tenths, for exact path products."""
        left = round(self.p_left * 10)
        return left if side == LEFT else 10 - left


@dataclass(frozen=True)
class PolicyGraph:
    """Immutable policy DAG.

    ``nodes`` is ordered by index.  Graphs built by :func:`random_policy`
    hold every index ``1..n_ensemble``; decoded published policies may omit
    indices that are unreachable from the output.
    """

    n_ensemble: int
    nodes: tuple[EnsembleNode, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))

    def node(self, index: int) -> EnsembleNode:
        for n in self.nodes:
            if n.index == index:
                return n
        raise KeyError(f"policy has no node {index}")

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(n.index for n in self.nodes)

    def edges(self) -> Iterator[tuple[int, str]]:
        for n in self.nodes:
            yield n.index, LEFT
            yield n.index, RIGHT

    def reachable(self) -> list[int]:
        """Node indices on some input-to-output path, ascending."""
        seen: set[int] = set()
        stack = [self.n_ensemble]
        by_index = {n.index: n for n in self.nodes}
        while stack:
            i = stack.pop()
            if i == 0 or i in seen or i not in by_index:
                continue
            seen.add(i)
            stack.extend((by_index[i].left_input, by_index[i].right_input))
        return sorted(seen)

    def pruned(self) -> "PolicyGraph":
        keep = set(self.reachable())
        return PolicyGraph(self.n_ensemble, tuple(n for n in self.nodes if n.index in keep))

    def with_node(self, node: EnsembleNode) -> "PolicyGraph":
        return PolicyGraph(
            self.n_ensemble,
            tuple(node if n.index == node.index else n for n in self.nodes),
        )

    def map_augs(self, fn) -> "PolicyGraph":
        return PolicyGraph(
            self.n_ensemble,
            tuple(replace(n, a_left=fn(n.a_left), a_right=fn(n.a_right)) for n in self.nodes),
        )


@dataclass(frozen=True)
class AugPath:
    """One sampled input-to-output path.

    ``steps`` holds ``(node_index, side)`` pairs and ``edges`` the matching
    augmentations, both in input-to-output order.
    """

    steps: tuple[tuple[int, str], ...]
    edges: tuple[AugSpec, ...]
    probability: float

    @property
    def log_prob(self) -> float:
        return math.log(self.probability) if self.probability > 0 else -math.inf


@dataclass(frozen=True)
class Violation:
    node: int | None
    message: str

    def __str__(self) -> str:
        where = "policy" if self.node is None else f"node {self.node}"
        return f"{where}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(str(v) for v in self.violations)


def _on_p_grid(p: float) -> bool:
    return abs(p * 10 - round(p * 10)) < 1e-9


def _aug_violations(spec: AugSpec, where: str) -> list[str]:
    out = []
    if spec.aug_type not in AUG_TYPES and spec.aug_type not in AUG_ALIASES:
        out.append(f"{where} edge: unknown augmentation type {spec.aug_type!r}")
    if not isinstance(spec.q, (int, float)) or not 0.0 <= spec.q <= 1.0:
        out.append(f"{where} edge: q={spec.q!r} outside [0, 1]")
    for name in ("x1", "x2"):
        x = getattr(spec, name)
        if isinstance(x, bool) or not isinstance(x, (int, np.integer)) or not 0 <= x <= MAX_STRENGTH:
            out.append(f"{where} edge: {name}={x!r} must be an integer in [0, {MAX_STRENGTH}]")
    return out


def validate(policy: PolicyGraph) -> ValidationReport:
    """Check every structural and parameter invariant; never raises."""
    found: list[Violation] = []
    if not isinstance(policy.n_ensemble, int) or policy.n_ensemble < 1:
        found.append(Violation(None, f"n_ensemble={policy.n_ensemble!r} must be an integer >= 1"))
        return ValidationReport(tuple(found))

    present: set[int] = set()
    prev = 0
    for node in policy.nodes:
        i = node.index
        if not 1 <= i <= policy.n_ensemble:
            found.append(Violation(i, f"index outside [1, {policy.n_ensemble}]"))
        if i <= prev:
            found.append(Violation(i, "node indices must be strictly increasing"))
        prev = max(prev, i)
        for side in (LEFT, RIGHT):
            src = node.input(side)
            if src >= i:
                found.append(Violation(i, f"{side} input {src} must be < index {i}"))
            elif src < 0:
                found.append(Violation(i, f"{side} input {src} must be >= 0"))
            elif src != 0 and src not in present:
                found.append(Violation(i, f"{side} input {src} refers to a missing node"))
        if not 0.0 <= node.p_left <= 1.0 or not _on_p_grid(node.p_left):
            found.append(Violation(i, f"p_left={node.p_left!r} must lie on the 0.1 grid in [0, 1]"))
        for side in (LEFT, RIGHT):
            found.extend(Violation(i, m) for m in _aug_violations(node.aug(side), side))
        present.add(i)

    if policy.n_ensemble not in present:
        found.append(Violation(None, f"output node {policy.n_ensemble} is missing"))
    return ValidationReport(tuple(found))


def _require_valid(policy: PolicyGraph) -> None:
    report = validate(policy)
    if not report.ok:
        raise InvalidPolicyError(str(report))


def random_aug(rng: np.random.Generator) -> AugSpec:
    return AugSpec(
        aug_type=AUG_TYPES[int(rng.integers(len(AUG_TYPES)))],
        q=round(float(rng.random()), Q_DECIMALS),
        x1=int(rng.integers(MAX_STRENGTH + 1)),
        x2=int(rng.integers(MAX_STRENGTH + 1)),
    )


def random_policy(n_ensemble: int, rng: np.random.Generator) -> PolicyGraph:
    """Draw a policy uniformly from the search space.

    q is drawn continuously and stored at 6 decimals so that the canonical
    JSON encoding round-trips exactly.
    """
    if n_ensemble < 1:
        raise ValueError(f"n_ensemble must be >= 1, got {n_ensemble}")
    nodes = []
    for i in range(1, n_ensemble + 1):
        left = int(rng.integers(i))
        right = int(rng.integers(i))
        p_left = P_GRID[int(rng.integers(len(P_GRID)))]
        nodes.append(EnsembleNode(i, left, right, p_left, random_aug(rng), random_aug(rng)))
    return PolicyGraph(n_ensemble, tuple(nodes))


def linear_policy(augs: Sequence[AugSpec]) -> PolicyGraph:
    """Chain policy applying ``augs`` in order with certainty."""
    if not augs:
        raise ValueError("need at least one augmentation")
    nodes = tuple(
        EnsembleNode(i, i - 1, i - 1, 1.0, aug, IDENTITY) for i, aug in enumerate(augs, start=1)
    )
    return PolicyGraph(len(augs), nodes)


def path_sampler(policy: PolicyGraph, check: bool = True):
    """Return ``draw(rng) -> AugPath`` with the node lookup built once."""
    if check:
        _require_valid(policy)
    by_index = {n.index: n for n in policy.nodes}
    start = policy.n_ensemble

    def draw(rng: np.random.Generator) -> AugPath:
        steps: list[tuple[int, str]] = []
        edges: list[AugSpec] = []
        tenths = 1
        i = start
        while i != 0:
            node = by_index[i]
            side = LEFT if rng.random() < node.p_left else RIGHT
            steps.append((i, side))
            edges.append(node.aug(side))
            tenths *= node.tenths(side)
            i = node.input(side)
        steps.reverse()
        edges.reverse()
        return AugPath(tuple(steps), tuple(edges), float(Fraction(tenths, 10 ** len(steps))))

    return draw


def sample_path(policy: PolicyGraph, rng: np.random.Generator, *, check: bool = True) -> AugPath:
    """Walk back from the output choosing left with probability ``p_left``.

    The walk ends at the input node and the traversed augmentations are
    returned in the order they apply (input side first).
    """
    return path_sampler(policy, check)(rng)


def path_code(path: AugPath) -> int:
    """Integer key for a path: a leading 1 bit, then one bit per step
    (1 = right) from the output node back to the input."""
    code = 1
    for _, side in reversed(path.steps):
        code = 2 * code + (side == RIGHT)
    return code


def sample_path_codes(
    policy: PolicyGraph, rng: np.random.Generator, size: int, *, check: bool = True
) -> np.ndarray:
    """Draw ``size`` paths at once and return their ``path_code`` keys.

    Uses the same rule as ``sample_path`` (left iff u < p_left) but draws the
    uniforms column-wise, so the stream differs from repeated single draws.
    """
    if check:
        _require_valid(policy)
    if policy.n_ensemble > 62:
        raise ValueError("path codes need n_ensemble <= 62")
    top = policy.n_ensemble + 1
    p_left = np.zeros(top)
    inputs = np.zeros((top, 2), dtype=np.int64)
    for node in policy.nodes:
        p_left[node.index] = node.p_left
        inputs[node.index] = (node.left_input, node.right_input)
    current = np.full(size, policy.n_ensemble, dtype=np.int64)
    codes = np.ones(size, dtype=np.int64)
    active = np.arange(size)
    while active.size:
        at = current[active]
        right = (rng.random(active.size) >= p_left[at]).astype(np.int64)
        codes[active] = 2 * codes[active] + right
        current[active] = inputs[at, right]
        active = active[current[active] != 0]
    return codes


def count_paths(policy: PolicyGraph, include_zero: bool = False) -> int:
    """Number of distinct input-to-output paths, by dynamic programming."""
    counts = {0: 1}
    for node in policy.nodes:
        total = 0
        for side in (LEFT, RIGHT):
            if include_zero or node.tenths(side) > 0:
                total += counts.get(node.input(side), 0)
        counts[node.index] = total
    return counts.get(policy.n_ensemble, 0)


def enumerate_paths(
    policy: PolicyGraph, cap: int = DEFAULT_PATH_CAP, include_zero: bool = False
) -> list[tuple[AugPath, float]]:
    """Every path with its probability, computed exactly in tenths.

    Edges with zero selection probability are skipped unless
    ``include_zero`` is set, so the returned probabilities always sum to one.
    """
    _require_valid(policy)
    n = count_paths(policy, include_zero)
    if n > cap:
        raise PathCapacityError(n, cap)
    by_index = {node.index: node for node in policy.nodes}
    out: list[tuple[AugPath, float]] = []

    def walk(i: int, steps: list, edges: list, tenths: int) -> None:
        if i == 0:
            prob = float(Fraction(tenths, 10 ** len(steps)))
            out.append((AugPath(tuple(reversed(steps)), tuple(reversed(edges)), prob), prob))
            return
        node = by_index[i]
        for side in (LEFT, RIGHT):
            t = node.tenths(side)
            if t == 0 and not include_zero:
                continue
            steps.append((i, side))
            edges.append(node.aug(side))
            walk(node.input(side), steps, edges, tenths * t)
            steps.pop()
            edges.pop()

    walk(policy.n_ensemble, [], [], 1)
    return out


def perturb_q(q: float, delta: float) -> float:
    return round(min(1.0, max(0.0, q + delta)), Q_DECIMALS)


def perturb_strength(x: int, delta: int) -> int:
    return min(MAX_STRENGTH, max(0, x + delta))


def perturb_p(p: float, delta: float) -> float:
    return round(min(1.0, max(0.0, p + delta)), 1)


def _allowed_inputs(policy: PolicyGraph, index: int) -> list[int]:
    return [0] + [n.index for n in policy.nodes if n.index < index]


def mutate(policy: PolicyGraph, mu: float, rng: np.random.Generator) -> PolicyGraph:
    """One mutation step.

    A single uniformly chosen edge gets a new tail node and a fresh
    augmentation.  Every other edge is perturbed with probability ``mu``:
    its selection probability by +-0.1, x1 and x2 by +-1 and q by a uniform
    draw from [-0.2, 0.2], each clipped to its range.
    """
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mutation rate must lie in [0, 1], got {mu}")
    _require_valid(policy)
    edges = list(policy.edges())
    reset_node, reset_side = edges[int(rng.integers(len(edges)))]

    updated = {}
    for node in policy.nodes:
        fields = {
            "left_input": node.left_input,
            "right_input": node.right_input,
            "p_left": node.p_left,
            "a_left": node.a_left,
            "a_right": node.a_right,
        }
        for side in (LEFT, RIGHT):
            key_in, key_aug = f"{side}_input", f"a_{side}"
            if (node.index, reset_side) == (reset_node, side):
                allowed = _allowed_inputs(policy, node.index)
                fields[key_in] = allowed[int(rng.integers(len(allowed)))]
                fields[key_aug] = random_aug(rng)
                continue
            if rng.random() >= mu:
                continue
            step = 0.1 if rng.random() < 0.5 else -0.1
            fields["p_left"] = perturb_p(fields["p_left"], step if side == LEFT else -step)
            aug = fields[key_aug]
            dx1 = 1 if rng.random() < 0.5 else -1
            dx2 = 1 if rng.random() < 0.5 else -1
            dq = float(rng.uniform(-0.2, 0.2))
            fields[key_aug] = replace(
                aug,
                q=perturb_q(aug.q, dq),
                x1=perturb_strength(aug.x1, dx1),
                x2=perturb_strength(aug.x2, dx2),
            )
        updated[node.index] = EnsembleNode(node.index, **fields)
    return PolicyGraph(policy.n_ensemble, tuple(updated[n.index] for n in policy.nodes))


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def scale_magnitudes(policy: PolicyGraph, factor: float) -> PolicyGraph:
    """Multiply every strength by ``factor``, round and clip to [0, 10]."""
    if not 0.6 - 1e-12 <= factor <= 1.4 + 1e-12:
        raise ValueError(f"scaling factor must lie in [0.6, 1.4], got {factor}")

    exact = Decimal(str(factor))

    def scale(x: int) -> int:
        scaled = (exact * x).to_integral_value(rounding=ROUND_HALF_UP)
        return min(MAX_STRENGTH, max(0, int(scaled)))

    return policy.map_augs(lambda a: replace(a, x1=scale(a.x1), x2=scale(a.x2)))


def increment_magnitudes(policy: PolicyGraph, delta: int) -> PolicyGraph:
    if isinstance(delta, bool) or int(delta) != delta or not -4 <= delta <= 4:
        raise ValueError(f"magnitude increment must be an integer in [-4, 4], got {delta}")
    delta = int(delta)
    return policy.map_augs(
        lambda a: replace(a, x1=perturb_strength(a.x1, delta), x2=perturb_strength(a.x2, delta))
    )

"""Codecs for policies, trial logs, checkpoints, summaries and feature files.

File layouts are documented in ``docs/formats.md``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, Sequence

import numpy as np

from .augment_ops import FeatureBatch, FeatureMatrix
from .policy_graph import (
    AUG_ALIASES,
    AUG_TYPES,
    LEFT,
    RIGHT,
    AugSpec,
    EnsembleNode,
    PolicyGraph,
    validate,
)

if TYPE_CHECKING:
    from .evolution import SearchConfig, Trial

SCHEMA_VERSION = 1
ASSET_NAMES = ("chime6", "ami", "fig1")


class PolicyDecodeError(ValueError):
    """A policy document failed to parse or violates the policy rules."""


class CheckpointError(RuntimeError):
    """A checkpoint could not be loaded or does not match the log."""


@dataclass(frozen=True)
class PolicyDocument:
    policy: PolicyGraph
    provenance: dict[str, Any] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION


# -- policies -- #


def format_float(x: float) -> str:
    """Up to six significant digits, always recognisable as a float."""
    text = f"{float(x):.6g}"
    if "." not in text and "e" not in text and "n" not in text:
        text += ".0"
    return text


def aug_to_dict(a: AugSpec) -> dict:
    return {"type": a.aug_type, "q": float(a.q), "x1": int(a.x1), "x2": int(a.x2)}


def policy_to_dict(policy: PolicyGraph) -> dict:
    nodes = []
    for n in policy.nodes:
        nodes.append(
            {
                "index": n.index,
                "left": {"input": n.left_input, "p": float(n.p_left), "aug": aug_to_dict(n.a_left)},
                "right": {"input": n.right_input, "aug": aug_to_dict(n.a_right)},
            }
        )
    return {"n_ensemble": policy.n_ensemble, "nodes": nodes}


def _aug_text(a: AugSpec) -> str:
    return (
        f'{{"type": {json.dumps(a.aug_type)}, "q": {format_float(a.q)}, '
        f'"x1": {int(a.x1)}, "x2": {int(a.x2)}}}'
    )


def encode_policy(document: PolicyDocument | PolicyGraph) -> str:
    """Canonical JSON text: fixed key order, one node per line."""
    if isinstance(document, PolicyGraph):
        document = PolicyDocument(document)
    policy = document.policy
    node_lines = []
    for n in policy.nodes:
        node_lines.append(
            f'    {{"index": {n.index}, '
            f'"left": {{"input": {n.left_input}, "p": {format_float(n.p_left)}, "aug": {_aug_text(n.a_left)}}}, '
            f'"right": {{"input": {n.right_input}, "aug": {_aug_text(n.a_right)}}}}}'
        )
    provenance = json.dumps(document.provenance, sort_keys=True, ensure_ascii=False)
    return (
        "{\n"
        f'  "schema_version": {document.schema_version},\n'
        f'  "n_ensemble": {policy.n_ensemble},\n'
        '  "nodes": [\n' + ",\n".join(node_lines) + "\n  ],\n"
        f'  "provenance": {provenance}\n'
        "}\n"
    )


def _number(value: Any, what: str, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise PolicyDecodeError(f"{where}: {what} must be a finite number, got {value!r}")
    return float(value)


def _integer(value: Any, what: str, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise PolicyDecodeError(f"{where}: {what} must be an integer, got {value!r}")
    return value


def _field(obj: Any, key: str, where: str) -> Any:
    if not isinstance(obj, dict):
        raise PolicyDecodeError(f"{where}: expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise PolicyDecodeError(f"{where}: missing key {key!r}")
    return obj[key]


def _aug_from(obj: Any, where: str) -> AugSpec:
    code = _field(obj, "type", where)
    if code not in AUG_TYPES and code not in AUG_ALIASES:
        raise PolicyDecodeError(f"{where}: unknown augmentation type {code!r}")
    q = _number(_field(obj, "q", where), "q", where)
    if not 0.0 <= q <= 1.0:
        raise PolicyDecodeError(f"{where}: q={q} outside [0, 1]")
    xs = []
    for key in ("x1", "x2"):
        x = _integer(_field(obj, key, where), key, where)
        if not 0 <= x <= 10:
            raise PolicyDecodeError(f"{where}: {key}={x} outside [0, 10]")
        xs.append(x)
    return AugSpec(code, q, xs[0], xs[1])


def policy_from_dict(obj: Any) -> PolicyGraph:
    n_ensemble = _integer(_field(obj, "n_ensemble", "policy"), "n_ensemble", "policy")
    raw_nodes = _field(obj, "nodes", "policy")
    if not isinstance(raw_nodes, list):
        raise PolicyDecodeError("policy: 'nodes' must be a list")
    nodes = []
    for pos, raw in enumerate(raw_nodes):
        index = _integer(_field(raw, "index", f"nodes[{pos}]"), "index", f"nodes[{pos}]")
        where = f"node {index}"
        left = _field(raw, LEFT, where)
        right = _field(raw, RIGHT, where)
        p_left = _number(_field(left, "p", f"{where} left"), "p", f"{where} left")
        if not 0.0 <= p_left <= 1.0:
            raise PolicyDecodeError(f"{where} left: p={p_left} outside [0, 1]")
        if "p" in right:
            p_right = _number(right["p"], "p", f"{where} right")
            if abs(p_left + p_right - 1.0) > 1e-9:
                raise PolicyDecodeError(f"{where}: p values {p_left} and {p_right} do not sum to 1")
        inputs = []
        for side, edge in ((LEFT, left), (RIGHT, right)):
            src = _integer(_field(edge, "input", f"{where} {side}"), "input", f"{where} {side}")
            if not 0 <= src < index:
                raise PolicyDecodeError(f"{where} {side}: input {src} must lie in [0, {index - 1}]")
            inputs.append(src)
        nodes.append(
            EnsembleNode(
                index,
                inputs[0],
                inputs[1],
                p_left,
                _aug_from(_field(left, "aug", f"{where} left"), f"{where} left"),
                _aug_from(_field(right, "aug", f"{where} right"), f"{where} right"),
            )
        )
    policy = PolicyGraph(n_ensemble, tuple(nodes))
    report = validate(policy)
    if not report.ok:
        raise PolicyDecodeError(str(report))
    return policy


def decode_policy(text: str) -> PolicyDocument:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PolicyDecodeError(f"not valid JSON: {exc}") from None
    version = obj.get("schema_version", SCHEMA_VERSION) if isinstance(obj, dict) else None
    if version != SCHEMA_VERSION:
        raise PolicyDecodeError(f"unsupported schema_version {version!r}")
    provenance = obj.get("provenance", {})
    if not isinstance(provenance, dict):
        raise PolicyDecodeError("provenance must be an object")
    return PolicyDocument(policy_from_dict(obj), provenance, version)


def read_policy(path: str | Path) -> PolicyDocument:
    return decode_policy(Path(path).read_text())


def write_policy(path: str | Path, document: PolicyDocument | PolicyGraph) -> None:
    Path(path).write_text(encode_policy(document))


def load_asset(name: str) -> PolicyDocument:
    """Shipped policies: ``chime6`` and ``ami`` (published search results)
    and ``fig1`` (the three-augmentation illustration graph)."""
    if name not in ASSET_NAMES:
        raise ValueError(f"unknown asset {name!r}; choose from {ASSET_NAMES}")
    text = resources.files("gaugment.assets").joinpath(f"{name}.policy.json").read_text()
    return decode_policy(text)


def asset_path(name: str) -> Path:
    return Path(str(resources.files("gaugment.assets").joinpath(f"{name}.policy.json")))


# -- display -- #


TABLE_ROWS = (
    ("p_l", lambda n: n.p_left),
    ("t_l", lambda n: n.a_left.aug_type),
    ("q_l", lambda n: n.a_left.q),
    ("x1_l", lambda n: n.a_left.x1),
    ("x2_l", lambda n: n.a_left.x2),
    ("p_r", lambda n: n.p_right),
    ("t_r", lambda n: n.a_right.aug_type),
    ("q_r", lambda n: n.a_right.q),
    ("x1_r", lambda n: n.a_right.x1),
    ("x2_r", lambda n: n.a_right.x2),
)


def _cell(value: Any, decimals: int | None = None) -> str:
    if isinstance(value, float):
        if decimals is not None:
            return f"{value:.{decimals}f}"
        return f"{value:.6g}" if value not in (0.0, 1.0) else f"{value:.1f}"
    return str(value)


def policy_table(
    policy: PolicyGraph, prune: bool = True, inputs: bool = False, q_decimals: int | None = None
) -> str:
    """Node-by-parameter table, one column per (reachable) node.

    ``q_decimals`` fixes the printed precision of application probabilities;
    by default they print at up to six significant digits.
    """
    shown = policy.pruned() if prune else policy
    rows = [("Node", [str(n.index) for n in shown.nodes])]
    if inputs:
        rows.append(("in_l", [str(n.left_input) for n in shown.nodes]))
        rows.append(("in_r", [str(n.right_input) for n in shown.nodes]))
    for label, get in TABLE_ROWS:
        decimals = q_decimals if label.startswith("q") else None
        rows.append((label, [_cell(get(n), decimals) for n in shown.nodes]))
    width = max(len(c) for _, cells in rows for c in cells)
    head = max(len(label) for label, _ in rows)
    return "\n".join(
        label.ljust(head) + "  " + "  ".join(c.rjust(width) for c in cells) for label, cells in rows
    ) + "\n"


def parse_policy_table(text: str) -> dict[str, list[str]]:
    """Inverse of :func:`policy_table` at the cell level."""
    table = {}
    for line in text.strip().splitlines():
        label, *cells = line.split()
        table[label] = cells
    return table


def _edge_label(p: float, a: AugSpec) -> str:
    return f"p={format_float(p)} {a.aug_type} q={format_float(a.q)} x=({a.x1},{a.x2})"


def export_dot(policy: PolicyGraph, prune: bool = False) -> str:
    """Graphviz digraph; dotted edges are left inputs, solid ones right."""
    shown = policy.pruned() if prune else policy
    lines = ["digraph policy {", "  rankdir=LR;", '  In [shape=box, label="In"];']
    for n in shown.nodes:
        lines.append(f'  n{n.index} [shape=circle, label="{n.index}"];')
    lines.append('  Out [shape=box, label="Out"];')

    def name(i: int) -> str:
        return "In" if i == 0 else f"n{i}"

    for n in shown.nodes:
        lines.append(
            f'  {name(n.left_input)} -> n{n.index} [style=dotted, label="{_edge_label(n.p_left, n.a_left)}"];'
        )
        lines.append(
            f'  {name(n.right_input)} -> n{n.index} [style=solid, label="{_edge_label(n.p_right, n.a_right)}"];'
        )
    lines.append(f"  n{policy.n_ensemble} -> Out;")
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- trial logs, checkpoints, summaries -- #


def _dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def trial_to_dict(trial: "Trial") -> dict:
    finite = math.isfinite(trial.fitness)
    return {
        "trial_id": trial.trial_id,
        "generation": trial.generation,
        "slot": trial.slot,
        "seed": trial.seed,
        "status": "ok" if finite else "failed",
        "fitness": trial.fitness if finite else None,
        "metadata": dict(sorted(trial.metadata.items())),
        "policy": policy_to_dict(trial.policy),
    }


def trial_from_dict(obj: dict) -> "Trial":
    from .evolution import Trial

    fitness = obj["fitness"]
    return Trial(
        trial_id=obj["trial_id"],
        generation=obj["generation"],
        slot=obj["slot"],
        seed=obj["seed"],
        policy=policy_from_dict(obj["policy"]),
        fitness=math.inf if fitness is None else float(fitness),
        metadata=dict(obj.get("metadata", {})),
    )


def encode_trial(trial: "Trial") -> str:
    return _dumps(trial_to_dict(trial))


def decode_trial(line: str) -> "Trial":
    return trial_from_dict(json.loads(line))


def write_trials(path: str | Path, trials: Iterable["Trial"], append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(encode_trial(t) + "\n")


def read_trials(path: str | Path) -> list["Trial"]:
    with open(path, encoding="utf-8") as fh:
        return [decode_trial(line) for line in fh if line.strip()]


def config_to_dict(config: "SearchConfig") -> dict:
    from dataclasses import asdict

    return asdict(config)


def config_from_dict(obj: dict) -> "SearchConfig":
    from .evolution import SearchConfig

    return SearchConfig(**obj)


def encode_checkpoint(state: dict) -> str:
    """``state`` holds config, generation, trials_done, population, rng_state."""
    out = {
        "schema_version": SCHEMA_VERSION,
        "config": config_to_dict(state["config"]),
        "generation": state["generation"],
        "trials_done": state["trials_done"],
        "rng_state": state["rng_state"],
        "population": [trial_to_dict(t) for t in state["population"]],
    }
    return json.dumps(out, indent=1, allow_nan=False) + "\n"


def decode_checkpoint(text: str) -> dict:
    try:
        obj = json.loads(text)
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise CheckpointError(f"unsupported checkpoint schema_version {obj.get('schema_version')!r}")
        return {
            "config": config_from_dict(obj["config"]),
            "generation": int(obj["generation"]),
            "trials_done": int(obj["trials_done"]),
            "rng_state": obj["rng_state"],
            "population": [trial_from_dict(t) for t in obj["population"]],
        }
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None


def write_summary(path: str | Path, rows: Sequence[tuple[int, float, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "best", "median", "best_so_far"])
        for g, best, median, so_far in rows:
            writer.writerow([g, repr(best), repr(median), repr(so_far)])


# -- feature containers -- #

MAGIC = b"GAUG"
FEATURE_VERSION = 1


def encode_features(batch: FeatureBatch) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FEATURE_VERSION, len(batch)))
    for m in batch.items:
        buf.write(struct.pack("<III", m.time_frames, m.valid_length, m.freq_channels))
        buf.write(np.ascontiguousarray(m.data, dtype="<f4").tobytes())
    return buf.getvalue()


def decode_features(blob: bytes) -> FeatureBatch:
    if blob[:4] != MAGIC:
        raise ValueError("not a GAUG feature container (bad magic)")
    if len(blob) < 12:
        raise ValueError("truncated feature container header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FEATURE_VERSION:
        raise ValueError(f"unsupported feature container version {version}")
    offset = 12
    items = []
    for i in range(count):
        if offset + 12 > len(blob):
            raise ValueError(f"truncated feature container at item {i}")
        frames, valid, channels = struct.unpack_from("<III", blob, offset)
        offset += 12
        size = frames * channels * 4
        if offset + size > len(blob):
            raise ValueError(f"truncated feature container at item {i}")
        data = np.frombuffer(blob, dtype="<f4", count=frames * channels, offset=offset)
        items.append(FeatureMatrix(data.reshape(frames, channels).astype(np.float32), valid))
        offset += size
    if offset != len(blob):
        raise ValueError("trailing bytes after feature container")
    return FeatureBatch(tuple(items))


def read_features(path: str | Path) -> FeatureBatch:
    path = Path(path)
    if path.suffix == ".csv":
        data = np.loadtxt(path, delimiter=",", dtype=np.float32, ndmin=2)
        return FeatureBatch((FeatureMatrix(data, data.shape[0]),))
    return decode_features(path.read_bytes())


def write_features(path: str | Path, batch: FeatureBatch) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        if len(batch) != 1:
            raise ValueError("CSV holds exactly one feature matrix")
        np.savetxt(path, batch[0].valid, delimiter=",", fmt="%.9g")
        return
    path.write_bytes(encode_features(batch))

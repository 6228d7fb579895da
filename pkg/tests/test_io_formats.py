from __future__ import annotations

import json
import math
import struct

import numpy as np
import pydot
import pytest

from conftest import random_batch
from gaugment.evolution import SearchConfig, Trial
from gaugment.io_formats import (
    PolicyDecodeError,
    PolicyDocument,
    decode_checkpoint,
    decode_features,
    decode_policy,
    decode_trial,
    encode_checkpoint,
    encode_features,
    encode_policy,
    encode_trial,
    export_dot,
    load_asset,
    parse_policy_table,
    policy_table,
    read_features,
    write_features,
)
from gaugment.policy_graph import IDENTITY, AugSpec, EnsembleNode, PolicyGraph, random_policy


def policy_json(**node_overrides):
    node = {
        "index": 1,
        "left": {"input": 0, "p": 0.5, "aug": {"type": "GN", "q": 0.5, "x1": 1, "x2": 2}},
        "right": {"input": 0, "aug": {"type": "FM", "q": 0.5, "x1": 1, "x2": 2}},
    }
    node.update(node_overrides)
    return {"schema_version": 1, "n_ensemble": 1, "nodes": [node]}


# -- policies -- #


@pytest.mark.parametrize("seed", range(5))
def test_round_trip_random_policy(seed):
    doc = PolicyDocument(random_policy(25, np.random.default_rng(seed)), {"source": "test", "seed": seed})
    text = encode_policy(doc)
    assert decode_policy(text) == doc
    assert encode_policy(decode_policy(text)) == text


def test_round_trip_keeps_unreachable_nodes():
    nodes = (
        EnsembleNode(1, 0, 0, 0.5, AugSpec("GN", 0.5, 1, 1), IDENTITY),  # not on any path
        EnsembleNode(2, 0, 0, 0.5, IDENTITY, AugSpec("FM", 1.0, 2, 3)),
    )
    policy = PolicyGraph(2, nodes)
    assert policy.reachable() == [2]
    assert decode_policy(encode_policy(policy)).policy == policy


def test_key_order_and_float_format():
    text = encode_policy(PolicyGraph(1, (EnsembleNode(1, 0, 0, 0.3, AugSpec("GN", 1 / 3, 1, 2), IDENTITY),)))
    obj = json.loads(text)
    assert list(obj)[:3] == ["schema_version", "n_ensemble", "nodes"]
    node = obj["nodes"][0]
    assert list(node) == ["index", "left", "right"]
    assert list(node["left"]) == ["input", "p", "aug"]
    assert "p" not in node["right"]
    assert list(node["left"]["aug"]) == ["type", "q", "x1", "x2"]
    assert '"q": 0.333333' in text


def test_chime_and_ami_assets():
    chime = load_asset("chime6").policy
    n1 = chime.node(1)
    assert (n1.a_left.aug_type, n1.a_left.q, n1.a_right.aug_type, n1.a_right.q) == ("Id", 1.0, "M-A", 0.17)
    assert chime.n_ensemble == 25
    assert chime.node(2).a_right.q == 0.004
    ami = load_asset("ami").policy
    assert (ami.node(1).a_left.aug_type, ami.node(1).p_left) == ("TM-AM", 0.9)
    assert ami.indices == (1, 2, 3, 4, 6, 9, 11, 16, 18, 20, 25)
    # the published AMI table names the frequency warp without its scale suffix; kept as written
    assert ami.node(9).a_right.aug_type == "FW"


@pytest.mark.parametrize(
    "override,needle",
    [
        ({"left": {"input": 0, "p": 0.5, "aug": {"type": "ZZ", "q": 0.5, "x1": 1, "x2": 2}}}, "node 1 left"),
        ({"left": {"input": 0, "p": 0.5, "aug": {"type": "GN", "q": 1.5, "x1": 1, "x2": 2}}}, "node 1 left"),
        ({"left": {"input": 0, "p": 0.5, "aug": {"type": "GN", "q": 0.5, "x1": 12, "x2": 2}}}, "node 1 left"),
        ({"left": {"input": 0, "p": 1.5, "aug": {"type": "GN", "q": 0.5, "x1": 1, "x2": 2}}}, "node 1 left"),
        ({"left": {"input": 1, "p": 0.5, "aug": {"type": "GN", "q": 0.5, "x1": 1, "x2": 2}}}, "node 1 left"),
        ({"right": {"input": 0, "p": 0.7, "aug": {"type": "GN", "q": 0.5, "x1": 1, "x2": 2}}}, "node 1"),
    ],
)
def test_decode_errors_name_the_node(override, needle):
    with pytest.raises(PolicyDecodeError) as info:
        decode_policy(json.dumps(policy_json(**override)))
    assert needle in str(info.value)


def test_decode_rejects_unknown_schema_and_garbage():
    obj = policy_json()
    obj["schema_version"] = 2
    with pytest.raises(PolicyDecodeError, match="schema_version"):
        decode_policy(json.dumps(obj))
    with pytest.raises(PolicyDecodeError):
        decode_policy("{")
    with pytest.raises(PolicyDecodeError):
        decode_policy(json.dumps({"n_ensemble": 1}))


def test_decode_rejects_off_grid_p():
    with pytest.raises(PolicyDecodeError, match="node 1"):
        decode_policy(
            json.dumps(policy_json(left={"input": 0, "p": 0.55, "aug": {"type": "GN", "q": 0.5, "x1": 1, "x2": 2}}))
        )


# -- tables and DOT -- #


def test_table_round_trip_cells():
    policy = load_asset("chime6").policy
    table = parse_policy_table(policy_table(policy))
    assert table["Node"] == ["1", "2", "3", "5", "11", "13", "15", "20", "25"]
    assert table["t_l"][0] == "Id" and table["q_r"][1] == "0.004"


def test_dot_single_node():
    policy = PolicyGraph(1, (EnsembleNode(1, 0, 0, 0.5, IDENTITY, AugSpec("GN", 1, 2, 0)),))
    (graph,) = pydot.graph_from_dot_data(export_dot(policy))
    names = {n.get_name() for n in graph.get_nodes()} - {"node", "edge", "graph"}
    assert names == {"In", "n1", "Out"}
    pairs = {(e.get_source(), e.get_destination()) for e in graph.get_edges()}
    assert pairs == {("In", "n1"), ("n1", "Out")}
    styles = sorted(e.get_style() for e in graph.get_edges() if e.get_destination() == "n1")
    assert styles == ["dotted", "solid"]


def test_dot_prune_on_chime_asset():
    (graph,) = pydot.graph_from_dot_data(export_dot(load_asset("chime6").policy, prune=True))
    names = {n.get_name() for n in graph.get_nodes()} - {"node", "edge", "graph"}
    assert names == {"In", "Out"} | {f"n{i}" for i in (1, 2, 3, 5, 11, 13, 15, 20, 25)}


def test_dot_prune_drops_unreachable():
    nodes = (
        EnsembleNode(1, 0, 0, 0.5, IDENTITY, IDENTITY),
        EnsembleNode(2, 0, 0, 0.5, IDENTITY, IDENTITY),
    )
    policy = PolicyGraph(2, nodes)
    assert "n1" in export_dot(policy)
    assert "n1" not in export_dot(policy, prune=True)


@pytest.mark.parametrize("seed", range(3))
def test_dot_parses_for_random_policies(seed):
    policy = random_policy(25, np.random.default_rng(seed))
    (graph,) = pydot.graph_from_dot_data(export_dot(policy))
    assert len(graph.get_edges()) == 2 * 25 + 1


# -- trials and checkpoints -- #


def test_trial_round_trip():
    policy = random_policy(4, np.random.default_rng(0))
    trial = Trial(3, 1, 2, 2**63 + 5, policy, 0.125, {"status": "ok"})
    back = decode_trial(encode_trial(trial))
    assert (back.trial_id, back.generation, back.slot, back.seed, back.policy, back.fitness) == (
        3,
        1,
        2,
        2**63 + 5,
        policy,
        0.125,
    )
    failed = decode_trial(encode_trial(Trial(0, 0, 0, 1, policy)))
    assert failed.failed and json.loads(encode_trial(failed))["fitness"] is None


def test_checkpoint_round_trip():
    rng = np.random.default_rng(3)
    policy = random_policy(3, rng)
    state = {
        "config": SearchConfig(population_size=2, trial_budget=4),
        "generation": 1,
        "trials_done": 4,
        "rng_state": rng.bit_generator.state,
        "population": [Trial(2, 1, 0, 9, policy, 0.5), Trial(3, 1, 1, 10, policy, math.inf)],
    }
    text = encode_checkpoint(state)
    back = decode_checkpoint(text)
    assert back["config"] == state["config"]
    assert back["rng_state"] == state["rng_state"]
    assert encode_checkpoint(back) == text


# -- feature containers -- #


def test_feature_container_round_trip(rng):
    batch = random_batch(rng, size=3)
    blob = encode_features(batch)
    assert blob[:4] == b"GAUG"
    assert struct.unpack_from("<II", blob, 4) == (1, 3)
    back = decode_features(blob)
    assert encode_features(back) == blob
    assert [m.valid_length for m in back.items] == [m.valid_length for m in batch.items]


@pytest.mark.parametrize("cut", [3, 10, 20])
def test_feature_container_errors(rng, cut):
    blob = encode_features(random_batch(rng, size=2))
    with pytest.raises(ValueError):
        decode_features(blob[:cut])
    with pytest.raises(ValueError):
        decode_features(blob + b"x")
    with pytest.raises(ValueError):
        decode_features(b"NOPE" + blob[4:])


def test_csv_features(tmp_path, rng):
    batch = random_batch(rng, size=1)
    path = tmp_path / "one.csv"
    write_features(path, batch)
    back = read_features(path)
    np.testing.assert_allclose(back.items[0].valid, batch.items[0].valid, rtol=1e-7)
    with pytest.raises(ValueError):
        write_features(tmp_path / "two.csv", random_batch(rng, size=2))

import copy
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES, raw, spec, spec_from
from iegsopt.model import (
    NetworkParseError,
    NetworkSchemaError,
    load_network,
    network_to_dict,
    save_network,
    validate,
)
from iegsopt.synthetic import random_network


def test_two_node_fixture_loads():
    s = spec("two_node")
    assert len(s.gas_nodes) == 2
    assert len(s.wells) == 1
    assert len(s.pipelines) == 1
    assert s.power_nodes == () or len(s.power_nodes) == 0
    w = s.wells[0]
    assert (w.at_gas_node, w.cost, w.g_min, w.g_max) == ("n1", 1.0, 0.0, 10.0)
    assert s.gas_nodes[1].loads == (2.0,)
    assert s.pipelines[0].weymouth == 1.0 and s.pipelines[0].capacity == 5.0


@pytest.mark.parametrize("name", FIXTURES)
def test_round_trip(name, tmp_path):
    s = spec(name)
    out = tmp_path / f"{name}.json"
    save_network(s, out)
    again = load_network(out)
    assert again == s
    assert network_to_dict(again) == network_to_dict(s)


@pytest.mark.parametrize("name", FIXTURES)
def test_shipped_fixtures_are_valid(name):
    assert validate(spec(name)) == []


def test_empty_network_is_schema_error():
    doc = {k: [] for k in ("power_nodes", "gas_nodes", "units", "wells", "lines", "pipelines", "compressors")}
    with pytest.raises(NetworkSchemaError, match="no nodes"):
        spec_from(doc)


def test_duplicate_id_is_named(two_node_doc):
    two_node_doc["gas_nodes"][1]["id"] = "n1"
    with pytest.raises(NetworkSchemaError) as err:
        spec_from(two_node_doc)
    assert "'n1'" in str(err.value)
    assert "gas_nodes[1].id" in str(err.value)


def test_missing_field_names_its_path(two_node_doc):
    del two_node_doc["pipelines"][0]["weymouth"]
    with pytest.raises(NetworkSchemaError, match=r"pipelines\[0\]\.weymouth"):
        spec_from(two_node_doc)


def test_wrong_type_names_its_path(two_node_doc):
    two_node_doc["wells"][0]["cost"] = "cheap"
    with pytest.raises(NetworkSchemaError, match=r"wells\[0\]\.cost"):
        spec_from(two_node_doc)


def test_optional_fields_take_defaults(two_node_doc):
    del two_node_doc["wells"][0]["cost"]
    s = spec_from(two_node_doc)
    assert s.wells[0].cost == 0.0


def test_malformed_file_is_parse_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"gas_nodes": [')
    with pytest.raises(NetworkParseError):
        load_network(bad)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_network(tmp_path / "nope.json")


# single-field mutations of the 6-7 fixture, each breaking exactly one rule
MUTATIONS = [
    ("compressors", 0, "ratio", 0.5, "ratio ≥ 1"),
    ("lines", 0, "reactance", 0.0, "reactance > 0"),
    ("lines", 1, "capacity", -1.0, "capacity ≥ 0"),
    ("lines", 2, "to", "b2", "from ≠ to"),
    ("pipelines", 0, "weymouth", -1.0, "weymouth > 0"),
    ("pipelines", 1, "to", "zz", "unknown gas node"),
    ("gas_nodes", 0, "psq_min", -1.0, "psq_min ≥ 0"),
    ("gas_nodes", 1, "psq_max", 0.1, "psq_min ≤ psq_max"),
    ("gas_nodes", 2, "loads", [-0.1], "loads ≥ 0"),
    ("power_nodes", 1, "angle_min", 1.0, "angle_min ≤ angle_max"),
    ("power_nodes", 0, "is_reference", False, "missing reference node"),
    ("power_nodes", 1, "is_reference", True, "more than one reference node"),
    ("units", 0, "cost_quad", -1.0, "cost_quad ≥ 0"),
    ("units", 0, "p_min", 3.0, "p_min ≤ p_max"),
    ("units", 1, "conversion", 0.0, "conversion > 0"),
    ("units", 0, "gas_node", "m1", "coal-fired unit has no gas_node"),
    ("units", 2, "at_power_node", "zz", "unknown power node"),
    ("wells", 0, "g_min", -1.0, "g_min ≥ 0"),
    ("wells", 1, "cost", -2.0, "cost ≥ 0"),
    ("wells", 0, "at_gas_node", "zz", "unknown gas node"),
]


@pytest.mark.parametrize("key,i,field,value,rule", MUTATIONS)
def test_single_field_mutation_triggers_one_rule(key, i, field, value, rule):
    doc = raw("iegs_6_7")
    doc[key][i][field] = value
    s = spec_from(doc)
    before = copy.deepcopy(network_to_dict(s))
    report = validate(s)
    assert len(report) == 1, report
    assert rule in report[0].rule
    # validation is pure
    assert network_to_dict(s) == before


@settings(max_examples=30, deadline=None)
@given(ratio=st.floats(min_value=-10, max_value=10, allow_nan=False))
def test_compressor_ratio_rule(ratio):
    doc = raw("iegs_6_7")
    doc["compressors"][0]["ratio"] = ratio
    rules = [v.rule for v in validate(spec_from(doc))]
    assert ("ratio ≥ 1" in rules) == (ratio < 1)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_random_networks_round_trip_and_validate(seed, tmp_path_factory):
    s = random_network(20, 6, seed)
    assert validate(s) == []
    out = tmp_path_factory.mktemp("rn") / "net.json"
    save_network(s, out)
    assert load_network(out) == s
    json.loads(out.read_text())

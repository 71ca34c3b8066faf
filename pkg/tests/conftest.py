import json

import pytest

from iegsopt.model import load_network, network_from_dict
from iegsopt.networks import names, path

FIXTURES = names()
GAS_FIXTURES = ["two_node", "two_node_reversed", "iegs_6_7"]


def raw(name):
    with open(path(name)) as fh:
        return json.load(fh)


def spec(name):
    return load_network(path(name))


def spec_from(doc):
    return network_from_dict(doc)


@pytest.fixture
def two_node_doc():
    return raw("two_node")

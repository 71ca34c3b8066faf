"""Seeded random networks for scalability runs.

The generator builds the power side as a random spanning tree plus extra
chords and the gas side as a tree fed from its root, so every instance is
feasible by construction: line and pipe capacities are generous, gas flows
run away from the root (which keeps unidirectional mode valid) and Weymouth
constants are large enough that pressure drops stay inside the bounds.
"""

from __future__ import annotations

from typing import Any

import numpy as np

from .model import NetworkSpec, network_from_dict

__all__ = ["random_network_dict", "random_network"]


def _tree_parents(n: int, rng: np.random.Generator, max_children: int | None = None) -> list[int]:
    parents = [-1]
    children = [0] * n
    for k in range(1, n):
        cand = [j for j in range(k) if max_children is None or children[j] < max_children]
        j = int(rng.choice(cand))
        parents.append(j)
        children[j] += 1
    return parents


def random_network_dict(n_power: int = 118, n_gas: int = 20, seed: int = 0) -> dict[str, Any]:
    """Network document in the fixture format.

    Args:
        n_power: Number of power buses (at least 2).
        n_gas: Number of gas nodes (at least 3).
        seed: Seed for ``numpy.random.default_rng``.
    """
    if n_power < 2 or n_gas < 3:
        raise ValueError("need at least 2 power buses and 3 gas nodes")
    rng = np.random.default_rng(seed)

    # power side
    buses = [f"b{i + 1}" for i in range(n_power)]
    parents = _tree_parents(n_power, rng)
    edges = {(parents[k], k) for k in range(1, n_power)}
    n_extra = n_power // 2
    while n_extra:
        a, b = (int(v) for v in rng.choice(n_power, size=2, replace=False))
        if (a, b) not in edges and (b, a) not in edges:
            edges.add((a, b))
            n_extra -= 1
    lines = [
        {
            "id": f"l{k + 1}",
            "from": buses[a],
            "to": buses[b],
            "reactance": round(float(rng.uniform(0.05, 0.3)), 4),
            "capacity": 4.0,
        }
        for k, (a, b) in enumerate(sorted(edges))
    ]
    loads = np.where(rng.random(n_power) < 0.6, rng.uniform(0.1, 0.5, n_power).round(3), 0.0)
    power_nodes = [
        {
            "id": bid,
            "angle_min": -1.5,
            "angle_max": 1.5,
            "loads": [float(loads[i])] if loads[i] > 0 else [],
            **({"is_reference": True} if i == 0 else {}),
        }
        for i, bid in enumerate(buses)
    ]

    # gas side: node 0 is the root, children are kept shallow
    gnodes = [f"m{i + 1}" for i in range(n_gas)]
    gparents = _tree_parents(n_gas, rng, max_children=3)
    gas_loads = np.where(rng.random(n_gas) < 0.4, rng.uniform(0.05, 0.2, n_gas).round(3), 0.0)
    gas_loads[0] = 0.0
    gas_nodes = [
        {"id": gid, "psq_min": 0.4, "psq_max": 3.6, "loads": [float(gas_loads[i])] if gas_loads[i] > 0 else []}
        for i, gid in enumerate(gnodes)
    ]
    comp_child = 1 + int(rng.integers(n_gas - 1))
    pipelines, compressors = [], []
    for k in range(1, n_gas):
        rec = {"from": gnodes[gparents[k]], "to": gnodes[k]}
        if k == comp_child:
            compressors.append({"id": "c1", **rec, "ratio": 1.3, "capacity": 10.0})
        else:
            pipelines.append(
                {"id": f"p{len(pipelines) + 1}", **rec, "weymouth": round(float(rng.uniform(40.0, 80.0)), 3), "capacity": 10.0}
            )
    wells = [{"id": "w1", "at_gas_node": gnodes[0], "g_min": 0.0, "g_max": 10.0, "cost": 5.0}]

    # units: coal spread over the buses, a few gas-fired ones fed by gas nodes
    total = float(loads.sum())
    n_coal = max(1, n_power // 6)
    n_gfu = max(1, min(n_gas - 1, n_power // 20))
    sites = rng.choice(n_power, size=n_coal + n_gfu, replace=False)
    units = []
    for k in range(n_coal):
        units.append(
            {
                "id": f"G{k + 1}",
                "at_power_node": buses[int(sites[k])],
                "kind": "coal-fired",
                "p_min": 0.0,
                "p_max": round(1.5 * total / n_coal, 3),
                "cost_quad": round(float(rng.uniform(1.0, 5.0)), 3),
                "cost_lin": round(float(rng.uniform(10.0, 30.0)), 3),
                "cost_const": 0.0,
            }
        )
    feed = rng.choice(np.arange(1, n_gas), size=n_gfu, replace=False)
    for k in range(n_gfu):
        units.append(
            {
                "id": f"G{n_coal + k + 1}",
                "at_power_node": buses[int(sites[n_coal + k])],
                "kind": "gas-fired",
                "p_min": 0.0,
                "p_max": 0.5,
                "gas_node": gnodes[int(feed[k])],
                "conversion": 1.5,
            }
        )
    return {
        "units_meta": {"note": f"synthetic random network, {n_power} buses / {n_gas} gas nodes, seed {seed}"},
        "power_nodes": power_nodes,
        "gas_nodes": gas_nodes,
        "units": units,
        "wells": wells,
        "lines": lines,
        "pipelines": pipelines,
        "compressors": compressors,
    }


def random_network(n_power: int = 118, n_gas: int = 20, seed: int = 0) -> NetworkSpec:
    """Same as :func:`random_network_dict`, parsed into a :class:`NetworkSpec`."""
    return network_from_dict(random_network_dict(n_power, n_gas, seed))

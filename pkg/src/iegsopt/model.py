"""Network data model for integrated electricity-gas systems.

All quantities are plain floats in a consistent unit system chosen by the
author of the network file; the ``units_meta`` block is free text and has
no computational effect. Gas pressure is always carried as its square.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

__all__ = [
    "PowerNode",
    "GasNode",
    "Unit",
    "GasWell",
    "TransmissionLine",
    "Pipeline",
    "Compressor",
    "NetworkSpec",
    "Violation",
    "NetworkError",
    "NetworkParseError",
    "NetworkSchemaError",
    "load_network",
    "save_network",
    "network_from_dict",
    "network_to_dict",
    "validate",
]

COAL = "coal-fired"
GAS = "gas-fired"


class NetworkError(ValueError):
    """Base class for network file problems."""


class NetworkParseError(NetworkError):
    """The file is not valid JSON."""


class NetworkSchemaError(NetworkError):
    """The document does not match the network schema.

    Attributes:
        path: Location of the offending value, e.g. ``"gas_nodes[1].id"``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class PowerNode:
    id: str
    angle_min: float = -math.pi
    angle_max: float = math.pi
    loads: tuple[float, ...] = ()
    is_reference: bool = False

    @property
    def total_load(self) -> float:
        return float(sum(self.loads))


@dataclass(frozen=True)
class GasNode:
    id: str
    psq_min: float = 0.0
    psq_max: float = math.inf
    loads: tuple[float, ...] = ()

    @property
    def total_load(self) -> float:
        return float(sum(self.loads))


@dataclass(frozen=True)
class Unit:
    """Generating unit. Gas-fired units burn ``conversion`` gas per MW at ``gas_node``."""

    id: str
    at_power_node: str
    kind: str
    p_min: float
    p_max: float
    cost_quad: float = 0.0
    cost_lin: float = 0.0
    cost_const: float = 0.0
    gas_node: str | None = None
    conversion: float | None = None

    @property
    def is_gas_fired(self) -> bool:
        return self.kind == GAS


@dataclass(frozen=True)
class GasWell:
    id: str
    at_gas_node: str
    g_min: float
    g_max: float
    cost: float = 0.0


@dataclass(frozen=True)
class TransmissionLine:
    id: str
    from_: str
    to: str
    reactance: float
    capacity: float


@dataclass(frozen=True)
class Pipeline:
    """Passive pipeline; ``weymouth`` holds the squared Weymouth constant."""

    id: str
    from_: str
    to: str
    weymouth: float
    capacity: float


@dataclass(frozen=True)
class Compressor:
    id: str
    from_: str
    to: str
    ratio: float
    capacity: float


@dataclass(frozen=True)
class NetworkSpec:
    power_nodes: tuple[PowerNode, ...] = ()
    gas_nodes: tuple[GasNode, ...] = ()
    units: tuple[Unit, ...] = ()
    wells: tuple[GasWell, ...] = ()
    lines: tuple[TransmissionLine, ...] = ()
    pipelines: tuple[Pipeline, ...] = ()
    compressors: tuple[Compressor, ...] = ()
    units_meta: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)


@dataclass(frozen=True)
class Violation:
    """One broken invariant: where it is and which rule it breaks."""

    path: str
    rule: str

    def __str__(self) -> str:
        return f"{self.path}: {self.rule}"


# --------------------------------------------------------------------------
# (de)serialization

# (json key, attribute, kind, default); a default of _REQUIRED marks a required key
_REQUIRED = object()

_SCHEMA: dict[str, tuple[type, list[tuple[str, str, str, Any]]]] = {
    "power_nodes": (
        PowerNode,
        [
            ("id", "id", "str", _REQUIRED),
            ("angle_min", "angle_min", "num", -math.pi),
            ("angle_max", "angle_max", "num", math.pi),
            ("loads", "loads", "numlist", ()),
            ("is_reference", "is_reference", "bool", False),
        ],
    ),
    "gas_nodes": (
        GasNode,
        [
            ("id", "id", "str", _REQUIRED),
            ("psq_min", "psq_min", "num", 0.0),
            ("psq_max", "psq_max", "num", math.inf),
            ("loads", "loads", "numlist", ()),
        ],
    ),
    "units": (
        Unit,
        [
            ("id", "id", "str", _REQUIRED),
            ("at_power_node", "at_power_node", "str", _REQUIRED),
            ("kind", "kind", "str", _REQUIRED),
            ("p_min", "p_min", "num", _REQUIRED),
            ("p_max", "p_max", "num", _REQUIRED),
            ("cost_quad", "cost_quad", "num", 0.0),
            ("cost_lin", "cost_lin", "num", 0.0),
            ("cost_const", "cost_const", "num", 0.0),
            ("gas_node", "gas_node", "optstr", None),
            ("conversion", "conversion", "optnum", None),
        ],
    ),
    "wells": (
        GasWell,
        [
            ("id", "id", "str", _REQUIRED),
            ("at_gas_node", "at_gas_node", "str", _REQUIRED),
            ("g_min", "g_min", "num", _REQUIRED),
            ("g_max", "g_max", "num", _REQUIRED),
            ("cost", "cost", "num", 0.0),
        ],
    ),
    "lines": (
        TransmissionLine,
        [
            ("id", "id", "str", _REQUIRED),
            ("from", "from_", "str", _REQUIRED),
            ("to", "to", "str", _REQUIRED),
            ("reactance", "reactance", "num", _REQUIRED),
            ("capacity", "capacity", "num", _REQUIRED),
        ],
    ),
    "pipelines": (
        Pipeline,
        [
            ("id", "id", "str", _REQUIRED),
            ("from", "from_", "str", _REQUIRED),
            ("to", "to", "str", _REQUIRED),
            ("weymouth", "weymouth", "num", _REQUIRED),
            ("capacity", "capacity", "num", _REQUIRED),
        ],
    ),
    "compressors": (
        Compressor,
        [
            ("id", "id", "str", _REQUIRED),
            ("from", "from_", "str", _REQUIRED),
            ("to", "to", "str", _REQUIRED),
            ("ratio", "ratio", "num", _REQUIRED),
            ("capacity", "capacity", "num", _REQUIRED),
        ],
    ),
}


def _is_num(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _convert(value: Any, kind: str, path: str) -> Any:
    if kind == "str":
        if not isinstance(value, str):
            raise NetworkSchemaError(path, f"expected string, got {type(value).__name__}")
        return value
    if kind == "optstr":
        if value is not None and not isinstance(value, str):
            raise NetworkSchemaError(path, f"expected string or null, got {type(value).__name__}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise NetworkSchemaError(path, f"expected boolean, got {type(value).__name__}")
        return value
    if kind == "num":
        # JSON has no infinity literal; null stands for an absent bound
        if value is None:
            return math.inf if path.endswith("max") else -math.inf
        if not _is_num(value):
            raise NetworkSchemaError(path, f"expected number, got {type(value).__name__}")
        return float(value)
    if kind == "optnum":
        if value is None:
            return None
        if not _is_num(value):
            raise NetworkSchemaError(path, f"expected number or null, got {type(value).__name__}")
        return float(value)
    if kind == "numlist":
        if not isinstance(value, list):
            raise NetworkSchemaError(path, f"expected list, got {type(value).__name__}")
        for i, v in enumerate(value):
            if not _is_num(v):
                raise NetworkSchemaError(f"{path}[{i}]", f"expected number, got {type(v).__name__}")
        return tuple(float(v) for v in value)
    raise AssertionError(kind)


def network_from_dict(doc: Any) -> NetworkSpec:
    """Build a :class:`NetworkSpec` from a parsed JSON document.

    Raises:
        NetworkSchemaError: on missing keys, wrong types, an empty network or
            duplicated identifiers. The error names the offending path.
    """
    if not isinstance(doc, dict):
        raise NetworkSchemaError("", "top level must be an object")
    unknown = set(doc) - set(_SCHEMA) - {"units_meta"}
    if unknown:
        raise NetworkSchemaError(sorted(unknown)[0], "unknown top-level key")

    parts: dict[str, tuple] = {}
    for key, (cls, fields_) in _SCHEMA.items():
        raw = doc.get(key, [])
        if not isinstance(raw, list):
            raise NetworkSchemaError(key, f"expected list, got {type(raw).__name__}")
        items = []
        seen: set[str] = set()
        for i, entry in enumerate(raw):
            where = f"{key}[{i}]"
            if not isinstance(entry, dict):
                raise NetworkSchemaError(where, "expected object")
            known = {f[0] for f in fields_}
            extra = set(entry) - known
            if extra:
                raise NetworkSchemaError(f"{where}.{sorted(extra)[0]}", "unknown field")
            kwargs = {}
            for jkey, attr, kind, default in fields_:
                if jkey not in entry:
                    if default is _REQUIRED:
                        raise NetworkSchemaError(f"{where}.{jkey}", "missing required field")
                    kwargs[attr] = default
                else:
                    kwargs[attr] = _convert(entry[jkey], kind, f"{where}.{jkey}")
            if kwargs["id"] in seen:
                raise NetworkSchemaError(f"{where}.id", f"duplicate id {kwargs['id']!r}")
            seen.add(kwargs["id"])
            items.append(cls(**kwargs))
        parts[key] = tuple(items)

    if not parts["power_nodes"] and not parts["gas_nodes"]:
        raise NetworkSchemaError("", "no nodes")
    meta = doc.get("units_meta", {})
    if not isinstance(meta, dict):
        raise NetworkSchemaError("units_meta", "expected object")
    return NetworkSpec(**parts, units_meta=dict(meta))


def _jsonable(v: Any) -> Any:
    if isinstance(v, float) and math.isinf(v):
        return None
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def network_to_dict(spec: NetworkSpec) -> dict[str, Any]:
    doc: dict[str, Any] = {}
    for key, (_, fields_) in _SCHEMA.items():
        rows = []
        for item in getattr(spec, key):
            raw = asdict(item)
            rows.append({jkey: _jsonable(raw[attr]) for jkey, attr, _, _ in fields_})
        doc[key] = rows
    doc["units_meta"] = dict(spec.units_meta)
    return doc


def load_network(path: str | Path) -> NetworkSpec:
    """Read a network JSON file.

    Raises:
        FileNotFoundError: if ``path`` does not exist.
        NetworkParseError: if the file is not valid JSON.
        NetworkSchemaError: if the document does not follow the schema.
    """
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return network_from_dict(doc)


def save_network(spec: NetworkSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(spec), indent=2) + "\n")


# --------------------------------------------------------------------------
# validation


def _power_components(spec: NetworkSpec) -> list[set[str]]:
    adj: dict[str, set[str]] = {n.id: set() for n in spec.power_nodes}
    for ln in spec.lines:
        if ln.from_ in adj and ln.to in adj:
            adj[ln.from_].add(ln.to)
            adj[ln.to].add(ln.from_)
    comps, seen = [], set()
    for n in spec.power_nodes:
        if n.id in seen:
            continue
        stack, comp = [n.id], set()
        while stack:
            u = stack.pop()
            if u in comp:
                continue
            comp.add(u)
            stack.extend(adj[u] - comp)
        seen |= comp
        comps.append(comp)
    return comps


def validate(spec: NetworkSpec) -> list[Violation]:
    """Check every structural and physical invariant of ``spec``.

    Returns:
        All violations found; an empty list means the network is valid.
    """
    out: list[Violation] = []
    add = lambda path, rule: out.append(Violation(path, rule))  # noqa: E731

    if not spec.power_nodes and not spec.gas_nodes:
        add("", "no nodes")

    for key in _SCHEMA:
        seen: set[str] = set()
        for i, item in enumerate(getattr(spec, key)):
            if item.id in seen:
                add(f"{key}[{i}].id", f"duplicate id {item.id!r}")
            seen.add(item.id)

    power_ids = {n.id for n in spec.power_nodes}
    gas_ids = {n.id for n in spec.gas_nodes}

    for i, n in enumerate(spec.power_nodes):
        p = f"power_nodes[{i}]"
        if not n.angle_min <= n.angle_max:
            add(p, "angle_min ≤ angle_max")
        if any(d < 0 for d in n.loads):
            add(f"{p}.loads", "loads ≥ 0")

    for i, n in enumerate(spec.gas_nodes):
        p = f"gas_nodes[{i}]"
        if not 0 <= n.psq_min:
            add(f"{p}.psq_min", "psq_min ≥ 0")
        if not n.psq_min <= n.psq_max:
            add(p, "psq_min ≤ psq_max")
        if any(d < 0 for d in n.loads):
            add(f"{p}.loads", "loads ≥ 0")

    for i, u in enumerate(spec.units):
        p = f"units[{i}]"
        if u.at_power_node not in power_ids:
            add(f"{p}.at_power_node", f"unknown power node {u.at_power_node!r}")
        if not 0 <= u.p_min:
            add(f"{p}.p_min", "p_min ≥ 0")
        if not u.p_min <= u.p_max:
            add(p, "p_min ≤ p_max")
        if not u.cost_quad >= 0:
            add(f"{p}.cost_quad", "cost_quad ≥ 0")
        if u.kind == GAS:
            if u.gas_node is None:
                add(f"{p}.gas_node", "gas-fired unit needs gas_node")
            elif u.gas_node not in gas_ids:
                add(f"{p}.gas_node", f"unknown gas node {u.gas_node!r}")
            if u.conversion is None or not u.conversion > 0:
                add(f"{p}.conversion", "conversion > 0")
        elif u.kind == COAL:
            if u.gas_node is not None:
                add(f"{p}.gas_node", "coal-fired unit has no gas_node")
            if u.conversion is not None:
                add(f"{p}.conversion", "coal-fired unit has no conversion")
        else:
            add(f"{p}.kind", f"kind must be {COAL!r} or {GAS!r}")

    for i, w in enumerate(spec.wells):
        p = f"wells[{i}]"
        if w.at_gas_node not in gas_ids:
            add(f"{p}.at_gas_node", f"unknown gas node {w.at_gas_node!r}")
        if not 0 <= w.g_min:
            add(f"{p}.g_min", "g_min ≥ 0")
        if not w.g_min <= w.g_max:
            add(p, "g_min ≤ g_max")
        if not w.cost >= 0:
            add(f"{p}.cost", "cost ≥ 0")

    def _edge(key, item, i, ids, what):
        p = f"{key}[{i}]"
        for end in ("from_", "to"):
            nid = getattr(item, end)
            if nid not in ids:
                add(f"{p}.{end.rstrip('_')}", f"unknown {what} node {nid!r}")
        if item.from_ == item.to:
            add(p, "from ≠ to")
        if not item.capacity >= 0:
            add(f"{p}.capacity", "capacity ≥ 0")
        return p

    for i, ln in enumerate(spec.lines):
        p = _edge("lines", ln, i, power_ids, "power")
        if not ln.reactance > 0:
            add(f"{p}.reactance", "reactance > 0")
    for i, pl in enumerate(spec.pipelines):
        p = _edge("pipelines", pl, i, gas_ids, "gas")
        if not pl.weymouth > 0:
            add(f"{p}.weymouth", "weymouth > 0")
    for i, cp in enumerate(spec.compressors):
        p = _edge("compressors", cp, i, gas_ids, "gas")
        if not cp.ratio >= 1:
            add(f"{p}.ratio", "ratio ≥ 1")

    refs = {n.id for n in spec.power_nodes if n.is_reference}
    for comp in _power_components(spec):
        k = len(comp & refs)
        if k != 1:
            rule = "missing reference node" if k == 0 else "more than one reference node"
            add(f"power component {{{', '.join(sorted(comp))}}}", rule)
    return out

"""Application topology descriptors, container registries and snapshots.

Descriptor grammar (one item per line, no indentation, ``#`` comments)::

    [app]
    id = <app_id>

    [unit <unit_id>]
    image = <public|private>/<name>:<tag>
    require.<capability> = <pattern>        # literal or glob, '*' matches anything
    cpu_scale = <float>
    bandwidth_kbps = <float>
    latency_budget_ms = <float>
    location_independent = <true|false>
    slc.<dimension> = <float>

    [edge <producer> <consumer>]
    bandwidth_kbps = <float>
    latency_budget_ms = <float>
    slc.<dimension> = <float>

``<dimension>`` is one of ``bandwidth_kbps``, ``latency_budget_ms`` and
``cpu_scale``.
"""

from __future__ import annotations

import copy
import heapq
import re
from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from typing import TYPE_CHECKING, Mapping

from .errors import (
    CyclicDataflow,
    DuplicateUnitId,
    InactivePlan,
    ParseError,
    UnknownUnitInEdge,
)

if TYPE_CHECKING:
    from .hierarchy import Hierarchy
    from .placement import Inventory, PlacementPlan
    from .addressing import AllocationLedger

PINNING_KEYS = frozenset({"site", "region", "agent", "host"})
SLC_DIMENSIONS = ("bandwidth_kbps", "latency_budget_ms", "cpu_scale")
REGISTRIES = ("public", "private")


def predicate_matches(pattern: str, value: str | None) -> bool:
    if pattern == "*":
        return True
    return value is not None and fnmatchcase(value, pattern)


def is_pinning(key: str, pattern: str) -> bool:
    return key in PINNING_KEYS and pattern != "*"


@dataclass(frozen=True)
class RegistryRef:
    registry: str
    name: str
    tag: str

    def __post_init__(self):
        if self.registry not in REGISTRIES:
            raise ValueError(f"registry must be public or private, got {self.registry!r}")
        if not self.name or not self.tag:
            raise ValueError("image name and tag must be non-empty")

    @classmethod
    def parse(cls, text: str) -> "RegistryRef":
        registry, sep, rest = text.partition("/")
        name, colon, tag = rest.rpartition(":")
        if not sep or not colon:
            raise ValueError(f"image must look like registry/name:tag, got {text!r}")
        return cls(registry, name, tag)

    def __str__(self) -> str:
        return f"{self.registry}/{self.name}:{self.tag}"


@dataclass(frozen=True)
class ResourceRequest:
    cpu_scale: float = 0.0
    bandwidth_kbps: float = 0.0
    latency_budget_ms: float = 0.0

    def __post_init__(self):
        for name in SLC_DIMENSIONS:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class FunctionalUnit:
    unit_id: str
    image: RegistryRef
    predicates: dict[str, str] = field(default_factory=dict)
    request: ResourceRequest = field(default_factory=ResourceRequest)
    location_independent: bool = False

    def __post_init__(self):
        if self.location_independent:
            pinned = [k for k, v in self.predicates.items() if is_pinning(k, v)]
            if pinned:
                raise ValueError(f"location independent unit {self.unit_id!r} pins {', '.join(pinned)}")


@dataclass(frozen=True)
class Edge:
    producer: str
    consumer: str
    bandwidth_kbps: float = 0.0
    latency_budget_ms: float = 0.0

    @property
    def key(self) -> str:
        return f"{self.producer}->{self.consumer}"


@dataclass
class AppDescriptor:
    app_id: str
    units: list[FunctionalUnit] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    # unit_id or "producer->consumer" -> dimension -> target
    slc: dict[str, dict[str, float]] = field(default_factory=dict)

    def unit(self, unit_id: str) -> FunctionalUnit:
        for u in self.units:
            if u.unit_id == unit_id:
                return u
        raise KeyError(unit_id)

    def validate(self) -> "AppDescriptor":
        seen = set()
        for u in self.units:
            if u.unit_id in seen:
                raise DuplicateUnitId(f"unit {u.unit_id!r} declared twice")
            seen.add(u.unit_id)
        for e in self.edges:
            for end in (e.producer, e.consumer):
                if end not in seen:
                    raise UnknownUnitInEdge(f"edge {e.key} references undeclared unit {end!r}")
        topological_order(self)
        return self


def topological_order(d: AppDescriptor) -> list[FunctionalUnit]:
    """Producers before consumers; among ready units, declaration order wins."""
    index = {u.unit_id: i for i, u in enumerate(d.units)}
    indegree = {u.unit_id: 0 for u in d.units}
    out: dict[str, list[str]] = {u.unit_id: [] for u in d.units}
    for e in d.edges:
        out[e.producer].append(e.consumer)
        indegree[e.consumer] += 1
    ready = [index[u] for u, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        unit = d.units[heapq.heappop(ready)]
        order.append(unit)
        for nxt in out[unit.unit_id]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(ready, index[nxt])
    if len(order) != len(d.units):
        stuck = sorted(u for u, deg in indegree.items() if deg > 0)
        exc = CyclicDataflow(f"dataflow cycle through {', '.join(stuck)}")
        exc.units = stuck
        raise exc
    return order


# -- text format --------------------------------------------------------------

_SECTION = re.compile(r"^\[([^\]]*)\]\s*$")
_BOOL = {"true": True, "false": False, "yes": True, "no": False}
_UNIT_KEYS = {"image", "location_independent", *SLC_DIMENSIONS}
_EDGE_KEYS = {"bandwidth_kbps", "latency_budget_ms"}


def parse_descriptor(text: str, source: str = "") -> AppDescriptor:
    app_id = None
    units: list[dict] = []
    edges: list[dict] = []
    current: dict | None = None
    kind = None

    def fail(exc_type, msg, lineno, col=1):
        raise exc_type(msg, lineno, col, source)

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if raw[0].isspace():
            fail(ParseError, "indentation is not allowed", lineno)
        m = _SECTION.match(line)
        if m:
            words = m.group(1).split()
            if words == ["app"]:
                if app_id is not None:
                    fail(ParseError, "duplicate [app] section", lineno)
                kind, current = "app", {"kind": "app", "line": lineno, "keys": {}}
                app_id = ""
            elif len(words) == 2 and words[0] == "unit":
                kind, current = "unit", {"id": words[1], "line": lineno, "keys": {}}
                units.append(current)
            elif len(words) == 3 and words[0] == "edge":
                kind, current = "edge", {"src": words[1], "dst": words[2], "line": lineno, "keys": {}}
                edges.append(current)
            else:
                fail(ParseError, f"unknown section [{m.group(1)}]", lineno)
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq or not key:
            fail(ParseError, "expected 'key = value'", lineno)
        if current is None:
            fail(ParseError, "key outside of any section", lineno)
        if key in current["keys"]:
            fail(ParseError, f"duplicate key {key!r}", lineno)
        vcol = raw.index("=") + 2
        if kind == "app":
            if key != "id":
                fail(ParseError, f"unknown app key {key!r}", lineno)
            app_id = value
        elif kind == "unit":
            if not (key in _UNIT_KEYS or key.startswith("require.")
                    or (key.startswith("slc.") and key[4:] in SLC_DIMENSIONS)):
                fail(ParseError, f"unknown unit key {key!r}", lineno)
            if key.startswith("require.") and not key[len("require."):]:
                fail(ParseError, "empty capability name", lineno)
        else:
            if not (key in _EDGE_KEYS or (key.startswith("slc.") and key[4:] in SLC_DIMENSIONS)):
                fail(ParseError, f"unknown edge key {key!r}", lineno)
        current["keys"][key] = (value, lineno, vcol)

    if app_id is None:
        raise ParseError("missing [app] section", 0, 0, source)
    if not app_id:
        raise ParseError("[app] needs an id", 0, 0, source)

    def number(entry):
        value, lineno, col = entry
        try:
            x = float(value)
        except ValueError:
            fail(ParseError, f"expected a number, got {value!r}", lineno, col)
        if x < 0:
            fail(ParseError, f"value must be >= 0, got {value}", lineno, col)
        return x

    d = AppDescriptor(app_id)
    for u in units:
        keys = u["keys"]
        if "image" not in keys:
            fail(ParseError, f"unit {u['id']!r} has no image", u["line"])
        img, ln, col = keys["image"]
        try:
            image = RegistryRef.parse(img)
        except ValueError as exc:
            fail(ParseError, str(exc), ln, col)
        li = False
        if "location_independent" in keys:
            val, ln, col = keys["location_independent"]
            if val.lower() not in _BOOL:
                fail(ParseError, f"expected true/false, got {val!r}", ln, col)
            li = _BOOL[val.lower()]
        preds = {k[len("require."):]: v[0] for k, v in keys.items() if k.startswith("require.")}
        req = ResourceRequest(**{k: number(keys[k]) for k in SLC_DIMENSIONS if k in keys})
        try:
            unit = FunctionalUnit(u["id"], image, preds, req, li)
        except ValueError as exc:
            fail(ParseError, str(exc), u["line"])
        if any(x.unit_id == unit.unit_id for x in d.units):
            fail(DuplicateUnitId, f"unit {unit.unit_id!r} declared twice", u["line"])
        d.units.append(unit)
        slc = {k[4:]: number(v) for k, v in keys.items() if k.startswith("slc.")}
        if slc:
            d.slc[unit.unit_id] = slc
    declared = {u.unit_id for u in d.units}
    seen_edges = set()
    for e in edges:
        for end, col in ((e["src"], 7), (e["dst"], 8 + len(e["src"]))):
            if end not in declared:
                fail(UnknownUnitInEdge, f"edge references undeclared unit {end!r}", e["line"], col)
        if (e["src"], e["dst"]) in seen_edges:
            fail(ParseError, f"duplicate edge {e['src']}->{e['dst']}", e["line"])
        seen_edges.add((e["src"], e["dst"]))
        keys = e["keys"]
        edge = Edge(e["src"], e["dst"],
                    number(keys["bandwidth_kbps"]) if "bandwidth_kbps" in keys else 0.0,
                    number(keys["latency_budget_ms"]) if "latency_budget_ms" in keys else 0.0)
        d.edges.append(edge)
        slc = {k[4:]: number(v) for k, v in keys.items() if k.startswith("slc.")}
        if slc:
            d.slc[edge.key] = slc
    try:
        topological_order(d)
    except CyclicDataflow as exc:
        stuck = set(exc.units)
        line = next((e["line"] for e in edges if e["src"] in stuck and e["dst"] in stuck), 0)
        raise CyclicDataflow(exc.reason, line, 1, source) from None
    return d


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_descriptor(d: AppDescriptor) -> str:
    out = ["[app]", f"id = {d.app_id}"]
    for u in d.units:
        out += ["", f"[unit {u.unit_id}]", f"image = {u.image}"]
        out += [f"require.{k} = {v}" for k, v in sorted(u.predicates.items())]
        out += [f"{k} = {_fmt(getattr(u.request, k))}" for k in SLC_DIMENSIONS]
        out.append(f"location_independent = {'true' if u.location_independent else 'false'}")
        out += [f"slc.{k} = {_fmt(v)}" for k, v in sorted(d.slc.get(u.unit_id, {}).items())]
    for e in d.edges:
        out += ["", f"[edge {e.producer} {e.consumer}]",
                f"bandwidth_kbps = {_fmt(e.bandwidth_kbps)}",
                f"latency_budget_ms = {_fmt(e.latency_budget_ms)}"]
        out += [f"slc.{k} = {_fmt(v)}" for k, v in sorted(d.slc.get(e.key, {}).items())]
    return "\n".join(out) + "\n"


# -- registries and snapshots ----------------------------------------------

@dataclass(frozen=True)
class Snapshot:
    snapshot_id: str
    app_id: str
    plan: "PlacementPlan"
    unit_images: Mapping[str, RegistryRef]
    taken_at: int
    descriptor: AppDescriptor


class Registry:
    """Append-only image store standing in for public/private registries."""

    def __init__(self):
        self.images: list[RegistryRef] = []
        self.snapshots: dict[str, Snapshot] = {}

    def push(self, ref: RegistryRef) -> RegistryRef:
        self.images.append(ref)
        return ref

    def add_snapshot(self, snap: Snapshot) -> Snapshot:
        existing = self.snapshots.get(snap.snapshot_id)
        if existing is not None:
            return existing
        for ref in snap.unit_images.values():
            self.push(ref)
        self.snapshots[snap.snapshot_id] = snap
        return snap

    def latest(self, app_id: str) -> Snapshot | None:
        snaps = [s for s in self.snapshots.values() if s.app_id == app_id]
        return max(snaps, key=lambda s: s.taken_at) if snaps else None


def snapshot_id_for(app_id: str, tick: int) -> str:
    return f"{app_id}@{tick}"


def snapshot(plan: "PlacementPlan", registry: Registry, descriptor: AppDescriptor,
             tick: int = 0) -> Snapshot:
    from .placement import UnitState

    missing = [u.unit_id for u in descriptor.units if u.unit_id not in plan.assignments]
    bad = [uid for uid, st in sorted(plan.state.items()) if st != UnitState.PLACED]
    if missing or bad:
        raise InactivePlan(f"plan {plan.app_id} has inactive units: {', '.join(sorted(missing + bad))}")
    images = {
        uid: RegistryRef("private", f"snapshots/{plan.app_id}/{uid}", f"t{tick}")
        for uid in sorted(plan.assignments)
    }
    snap = Snapshot(snapshot_id_for(plan.app_id, tick), plan.app_id, copy.deepcopy(plan),
                    images, tick, copy.deepcopy(descriptor))
    return registry.add_snapshot(snap)


def restore(snap: Snapshot, h: "Hierarchy", inventory: "Inventory",
            addresses: "AllocationLedger") -> "PlacementPlan":
    """Redeploy a snapshot; see :func:`edgecps.placement.restore_plan`."""
    from .placement import restore_plan

    return restore_plan(snap, h, inventory, addresses)

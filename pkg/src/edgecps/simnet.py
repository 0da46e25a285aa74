"""Tick-driven model of sites, routers, hosts and links.

One tick is one millisecond.  Link latencies are kept as exact fractions of
a millisecond, so path sums never drift.  Noise is not random: a link may
name a table of multiplicative factors keyed by the nominal (configured)
magnitude, which lets recorded measurements be replayed verbatim.

Scenario format, one record per line, ``key=value`` fields::

    pool    prefix=2001:db8::/48
    global  id=global
    site    id=siteA
    host    id=R0  site=siteA role=router
    host    id=CH0 site=siteA role=compute cpu=4 score=44.17 bw_kbps=1000000
    link    id=L0.0 a=R0 b=R1 capacity_kbps=10000000 latency_ms=0.083 induced_ms=0 [limit_kbps=..] [noise=T]
    noise   id=T kind=latency|bandwidth nominal=10 factor=1.0033
    region  id=r1
    agent   id=a1 region=r1 host=CH0 [tag.<capability>=<value> ...]
    policy  level=agent|regional|global default=allow|deny [rules=<src>><dst>:<verdict>,...]
    event   at=5 kind=host_fail node=CH0
"""

from __future__ import annotations

import bisect
import heapq
import itertools
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from .errors import (
    DanglingEndpoint,
    DuplicateNodeId,
    ParseError,
    PastTick,
    UnknownLink,
    UnknownNode,
    Unreachable,
)
from .hierarchy import AgentConfig, CommPolicy, CommRule, HierarchyConfig, RegionConfig
from .qosmodel import (
    REFERENCE_CALIBRATION,
    CalibrationParams,
    CapacityLedger,
    MeasurementSample,
    predict_simulated_score,
)

ROLES = ("router", "compute", "storage", "device", "gateway")
EVENT_KINDS = ("host_fail", "host_recover", "link_fail", "link_recover", "traffic", "measure")


@dataclass(frozen=True)
class SiteSpec:
    site_id: str


@dataclass(frozen=True)
class HostSpec:
    host_id: str
    site_id: str
    role: str = "compute"
    cpu_capacity_cores: float = 0.0
    cpu_reference_score: float = REFERENCE_CALIBRATION.reference_score
    bandwidth_kbps: float | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown host role {self.role!r}")
        if self.role == "compute" and self.cpu_capacity_cores <= 0:
            raise ValueError(f"compute host {self.host_id} needs cpu > 0")


@dataclass(frozen=True)
class NoiseTable:
    """Multiplicative factors keyed by nominal magnitude.

    The factor for a nominal value is the one registered at the largest key
    not above it; below every key the factor is 1.
    """

    table_id: str
    latency: tuple[tuple[Fraction, Fraction], ...] = ()
    bandwidth: tuple[tuple[Fraction, Fraction], ...] = ()

    def factor(self, kind: str, nominal) -> Fraction:
        entries = self.latency if kind == "latency" else self.bandwidth
        keys = [k for k, _ in entries]
        i = bisect.bisect_right(keys, Fraction(nominal)) - 1
        return entries[i][1] if i >= 0 else Fraction(1)


@dataclass(frozen=True)
class LinkSpec:
    link_id: str
    endpoints: tuple[str, str]
    capacity_kbps: float
    base_latency_ms: Fraction = Fraction(0)
    induced_latency_ms: Fraction = Fraction(0)
    limit_kbps: float | None = None
    noise: str | None = None

    def __post_init__(self):
        if self.capacity_kbps <= 0:
            raise ValueError(f"link {self.link_id} capacity must be > 0")
        if self.base_latency_ms < 0 or self.induced_latency_ms < 0:
            raise ValueError(f"link {self.link_id} latencies must be >= 0")
        if self.limit_kbps is not None and self.limit_kbps <= 0:
            raise ValueError(f"link {self.link_id} limit must be > 0")

    @property
    def latency_ms(self) -> Fraction:
        return self.base_latency_ms + self.induced_latency_ms

    def other(self, node: str) -> str:
        a, b = self.endpoints
        return b if node == a else a


@dataclass(frozen=True)
class SimEvent:
    at_tick: int
    kind: str
    payload: tuple[tuple[str, str], ...] = ()

    def get(self, key: str, default: str | None = None) -> str | None:
        return dict(self.payload).get(key, default)

    def __str__(self) -> str:
        fields = " ".join(f"{k}={v}" for k, v in self.payload)
        return f"{self.at_tick}\t{self.kind}\t{fields}".rstrip()


@dataclass
class World:
    sites: list[SiteSpec] = field(default_factory=list)
    hosts: list[HostSpec] = field(default_factory=list)
    links: list[LinkSpec] = field(default_factory=list)
    noise_tables: dict[str, NoiseTable] = field(default_factory=dict)
    control: HierarchyConfig = field(default_factory=HierarchyConfig)
    pool: str = "2001:db8::/48"
    tick: int = 0
    rng_seed: int = 0
    dead_nodes: set[str] = field(default_factory=set)
    dead_links: set[str] = field(default_factory=set)
    trace: list[SimEvent] = field(default_factory=list)
    measurements: list[tuple[int, str, MeasurementSample]] = field(default_factory=list)

    def __post_init__(self):
        self._queue: list[tuple[int, int, SimEvent]] = []
        self._seq = itertools.count()
        self.rng = random.Random(self.rng_seed)
        self._index()

    def _index(self) -> None:
        self._hosts = {h.host_id: h for h in self.hosts}
        self._links = {l.link_id: l for l in self.links}
        self._adj: dict[str, list[LinkSpec]] = {h: [] for h in self._hosts}
        for link in self.links:
            for end in link.endpoints:
                self._adj.setdefault(end, []).append(link)

    def host(self, host_id: str) -> HostSpec:
        try:
            return self._hosts[host_id]
        except KeyError:
            raise UnknownNode(host_id) from None

    def link(self, link_id: str) -> LinkSpec:
        try:
            return self._links[link_id]
        except KeyError:
            raise UnknownLink(link_id) from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._hosts

    @property
    def pending(self) -> list[SimEvent]:
        return [e for _, _, e in sorted(self._queue)]

    def schedule(self, event: SimEvent) -> None:
        if event.at_tick < self.tick:
            raise PastTick(f"event at tick {event.at_tick} is before current tick {self.tick}")
        heapq.heappush(self._queue, (event.at_tick, next(self._seq), event))

    def is_up(self, link: LinkSpec) -> bool:
        return (link.link_id not in self.dead_links
                and not any(e in self.dead_nodes for e in link.endpoints))

    def live_links(self, node: str) -> list[LinkSpec]:
        if node in self.dead_nodes:
            return []
        return [l for l in self._adj.get(node, []) if self.is_up(l)]

    def host_sites(self) -> dict[str, str]:
        return {h.host_id: h.site_id for h in self.hosts}

    def host_bandwidth(self, host_id: str) -> float:
        """Bandwidth a host can commit: explicit ``bw_kbps``, else its access link, else its fastest link."""
        h = self.host(host_id)
        if h.bandwidth_kbps is not None:
            return h.bandwidth_kbps
        access = uplink(self, host_id)
        links = [access] if access is not None else self._adj.get(host_id, [])
        caps = [l.capacity_kbps if l.limit_kbps is None else min(l.capacity_kbps, l.limit_kbps)
                for l in links]
        return max(caps, default=0.0)

    def capacity_ledgers(self) -> dict[str, CapacityLedger]:
        return {
            h.host_id: CapacityLedger(h.host_id, self.host_bandwidth(h.host_id), h.cpu_capacity_cores)
            for h in self.hosts
            if h.role != "router" and h.cpu_capacity_cores > 0
        }

    def hierarchy_config(self) -> HierarchyConfig:
        cfg = self.control
        return HierarchyConfig(cfg.global_id, cfg.regions, cfg.policies, set(self._hosts))


# -- scenario parsing ----------------------------------------------------------

_RECORDS = ("pool", "global", "site", "host", "link", "noise", "region", "agent", "policy", "event")


def _fields(raw: str, lineno: int, source: str) -> tuple[str, dict[str, tuple[str, int]]]:
    words = raw.split()
    record = words[0]
    out: dict[str, tuple[str, int]] = {}
    pos = raw.index(record) + len(record)
    for w in words[1:]:
        col = raw.index(w, pos) + 1
        pos = col - 1 + len(w)
        key, eq, value = w.partition("=")
        if not eq or not key:
            raise ParseError(f"expected key=value, got {w!r}", lineno, col, source)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", lineno, col, source)
        out[key] = (value, col)
    return record, out


def load_scenario(text: str, source: str = "", seed: int = 0) -> World:
    sites: list[SiteSpec] = []
    hosts: list[HostSpec] = []
    links: list[tuple[LinkSpec, int, int]] = []
    noise: dict[str, dict[str, list]] = {}
    regions: dict[str, RegionConfig] = {}
    agents: list[tuple[dict, int]] = []
    policies: list[CommPolicy] = []
    events: list[tuple[dict, int]] = []
    pool = "2001:db8::/48"
    global_id = "global"
    node_ids: set[str] = set()

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        record, kv = _fields(line, lineno, source)

        def err(msg, key=None, exc=ParseError):
            col = kv[key][1] if key in kv else raw.index(record) + 1
            return exc(msg, lineno, col, source)

        def need(key):
            if key not in kv or not kv[key][0]:
                raise err(f"{record} record needs {key}=")
            return kv[key][0]

        def num(key, default=None, cast=float):
            if key not in kv:
                if default is None:
                    raise err(f"{record} record needs {key}=")
                return default
            try:
                return cast(kv[key][0])
            except (ValueError, ZeroDivisionError):
                raise err(f"bad number for {key}: {kv[key][0]!r}", key) from None

        def allowed(*keys, prefix=None):
            for k in kv:
                if k not in keys and not (prefix and k.startswith(prefix)):
                    raise err(f"unknown {record} key {k!r}", k)

        if record not in _RECORDS:
            raise err(f"unknown record type {record!r}")
        try:
            if record == "pool":
                allowed("prefix")
                pool = need("prefix")
            elif record == "global":
                allowed("id")
                global_id = need("id")
            elif record == "site":
                allowed("id")
                sid = need("id")
                if any(s.site_id == sid for s in sites):
                    raise err(f"duplicate site {sid!r}", "id", DuplicateNodeId)
                sites.append(SiteSpec(sid))
            elif record == "host":
                allowed("id", "site", "role", "cpu", "score", "bw_kbps")
                hid = need("id")
                if hid in node_ids:
                    raise err(f"duplicate node {hid!r}", "id", DuplicateNodeId)
                site = need("site")
                if not any(s.site_id == site for s in sites):
                    raise err(f"host {hid} names unknown site {site!r}", "site", DanglingEndpoint)
                bw = num("bw_kbps") if "bw_kbps" in kv else None
                hosts.append(HostSpec(hid, site, kv.get("role", ("compute",))[0], num("cpu", 0.0),
                                      num("score", REFERENCE_CALIBRATION.reference_score), bw))
                node_ids.add(hid)
            elif record == "link":
                allowed("id", "a", "b", "capacity_kbps", "latency_ms", "induced_ms", "limit_kbps", "noise")
                lid = need("id")
                if lid in node_ids or any(l.link_id == lid for l, _, _ in links):
                    raise err(f"duplicate link {lid!r}", "id", DuplicateNodeId)
                limit = num("limit_kbps") if "limit_kbps" in kv else None
                link = LinkSpec(lid, (need("a"), need("b")), num("capacity_kbps"),
                                num("latency_ms", Fraction(0), Fraction), num("induced_ms", Fraction(0), Fraction),
                                limit, kv["noise"][0] if "noise" in kv else None)
                links.append((link, lineno, kv["a"][1]))
            elif record == "noise":
                allowed("id", "kind", "nominal", "factor")
                kind = need("kind")
                if kind not in ("latency", "bandwidth"):
                    raise err(f"noise kind must be latency or bandwidth, got {kind!r}", "kind")
                noise.setdefault(need("id"), {"latency": [], "bandwidth": []})[kind].append(
                    (num("nominal", cast=Fraction), num("factor", cast=Fraction)))
            elif record == "region":
                allowed("id")
                rid = need("id")
                if rid in regions:
                    raise err(f"duplicate region {rid!r}", "id", DuplicateNodeId)
                regions[rid] = RegionConfig(rid)
            elif record == "agent":
                allowed("id", "region", "host", prefix="tag.")
                for key in ("id", "region", "host"):
                    need(key)
                agents.append((kv, lineno))
            elif record == "policy":
                allowed("level", "default", "rules")
                rules = []
                for spec in filter(None, kv.get("rules", ("", 0))[0].split(",")):
                    pair, colon, verdict = spec.rpartition(":")
                    src, gt, dst = pair.partition(">")
                    if not colon or not gt:
                        raise err(f"rule must be src>dst:verdict, got {spec!r}", "rules")
                    rules.append(CommRule(src, dst, verdict))
                policies.append(CommPolicy(need("level"), tuple(rules), kv.get("default", ("allow",))[0]))
            elif record == "event":
                allowed("at", "kind", "node", "link", "src", "dst", "offered_kbps", "label")
                if need("kind") not in EVENT_KINDS:
                    raise err(f"unknown event kind {kv['kind'][0]!r}", "kind")
                num("at", cast=int)
                events.append((kv, lineno))
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise err(str(exc)) from None

    for link, lineno, col in links:
        for end in link.endpoints:
            if end not in node_ids:
                raise DanglingEndpoint(f"link {link.link_id} endpoint {end!r} is not a declared node",
                                       lineno, col, source)
    for nid, tbl in noise.items():
        for kind in tbl:
            tbl[kind].sort()
    for link, lineno, col in links:
        if link.noise is not None and link.noise not in noise:
            raise ParseError(f"link {link.link_id} names unknown noise table {link.noise!r}", lineno, col, source)

    for kv, lineno in agents:
        rid, host = kv["region"][0], kv["host"][0]
        if rid not in regions:
            raise ParseError(f"agent names unknown region {rid!r}", lineno, kv["region"][1], source)
        if host not in node_ids:
            raise DanglingEndpoint(f"agent runs on unknown host {host!r}", lineno, kv["host"][1], source)
        caps = {k[len("tag."):]: v for k, (v, _) in kv.items() if k.startswith("tag.")}
        regions[rid].agents.append(AgentConfig(kv["id"][0], host, caps))

    world = World(
        sites=sites,
        hosts=hosts,
        links=[l for l, _, _ in links],
        noise_tables={k: NoiseTable(k, tuple(v["latency"]), tuple(v["bandwidth"])) for k, v in noise.items()},
        control=HierarchyConfig(global_id, list(regions.values()), policies, set(node_ids)),
        pool=pool,
        rng_seed=seed,
    )
    for kv, lineno in events:
        payload = tuple((k, v) for k, (v, _) in kv.items() if k not in ("at", "kind"))
        ev = SimEvent(int(kv["at"][0]), kv["kind"][0], payload)
        for key in ("node", "src", "dst"):
            if key in kv and kv[key][0] not in node_ids:
                raise DanglingEndpoint(f"event names unknown node {kv[key][0]!r}", lineno, kv[key][1], source)
        if "link" in kv and kv["link"][0] not in world._links:
            raise DanglingEndpoint(f"event names unknown link {kv['link'][0]!r}", lineno, kv["link"][1], source)
        world.schedule(ev)
    return world


# -- stepping and failures -------------------------------------------------------

def _apply(world: World, ev: SimEvent) -> list[SimEvent]:
    out = [ev]
    if ev.kind in ("host_fail", "host_recover"):
        node = ev.get("node")
        if ev.kind == "host_fail":
            world.dead_nodes.add(node)
        else:
            world.dead_nodes.discard(node)
        out.append(SimEvent(world.tick, "liveness",
                            (("node", node), ("alive", "false" if ev.kind == "host_fail" else "true"))))
    elif ev.kind in ("link_fail", "link_recover"):
        lid = ev.get("link")
        if ev.kind == "link_fail":
            world.dead_links.add(lid)
        else:
            world.dead_links.discard(lid)
    elif ev.kind == "traffic":
        sample = measure_throughput(world, ev.get("link"), float(ev.get("offered_kbps", "0")))
        world.measurements.append((world.tick, ev.get("label") or ev.get("link"), sample))
    elif ev.kind == "measure":
        try:
            sample = measure_path(world, ev.get("src"), ev.get("dst"))
        except Unreachable:
            out.append(SimEvent(world.tick, "unreachable", (("src", ev.get("src")), ("dst", ev.get("dst")))))
        else:
            world.measurements.append((world.tick, ev.get("label") or f"{ev.get('src')}->{ev.get('dst')}", sample))
    return out


def process_due(world: World) -> list[SimEvent]:
    """Fire queued events with ``at_tick <= tick`` without advancing the clock."""
    emitted: list[SimEvent] = []
    while world._queue and world._queue[0][0] <= world.tick:
        _, _, ev = heapq.heappop(world._queue)
        emitted.extend(_apply(world, ev))
    world.trace.extend(emitted)
    return emitted


def step(world: World) -> tuple[World, list[SimEvent]]:
    """Advance one tick and process every event now due, in scheduling order."""
    world.tick += 1
    return world, process_due(world)


def run_until(world: World, tick: int) -> list[SimEvent]:
    emitted = []
    while world.tick < tick:
        emitted.extend(step(world)[1])
    return emitted


def inject_failure(world: World, node_id: str, at_tick: int) -> World:
    """Queue a failure of a host/router, or of a link when ``node_id`` names one."""
    if at_tick < world.tick:
        raise PastTick(f"tick {at_tick} is before current tick {world.tick}")
    if world.has_node(node_id):
        world.schedule(SimEvent(at_tick, "host_fail", (("node", node_id),)))
    elif node_id in world._links:
        world.schedule(SimEvent(at_tick, "link_fail", (("link", node_id),)))
    else:
        raise UnknownNode(node_id)
    return world


def inject_recovery(world: World, node_id: str, at_tick: int) -> World:
    if at_tick < world.tick:
        raise PastTick(f"tick {at_tick} is before current tick {world.tick}")
    if world.has_node(node_id):
        world.schedule(SimEvent(at_tick, "host_recover", (("node", node_id),)))
    elif node_id in world._links:
        world.schedule(SimEvent(at_tick, "link_recover", (("link", node_id),)))
    else:
        raise UnknownNode(node_id)
    return world


def reachability(world: World) -> frozenset[frozenset[str]]:
    """Connected components of the live topology."""
    seen: set[str] = set()
    comps = []
    for start in sorted(world._hosts):
        if start in seen or start in world.dead_nodes:
            continue
        comp, stack = set(), [start]
        while stack:
            n = stack.pop()
            if n in comp:
                continue
            comp.add(n)
            stack.extend(l.other(n) for l in world.live_links(n))
        seen |= comp
        comps.append(frozenset(comp))
    return frozenset(comps)


def shortest_path(world: World, src: str, dst: str) -> list[LinkSpec]:
    """Lowest-latency live path; ties go to fewer hops, then smaller link ids."""
    world.host(src)
    world.host(dst)
    if src in world.dead_nodes or dst in world.dead_nodes:
        raise Unreachable(f"{src} -> {dst}: endpoint down")
    best: dict[str, tuple] = {src: (Fraction(0), 0, ())}
    heap = [(Fraction(0), 0, (), src)]
    while heap:
        dist, hops, ids, node = heapq.heappop(heap)
        if (dist, hops, ids) != best.get(node):
            continue
        if node == dst:
            return [world.link(i) for i in ids]
        for link in world.live_links(node):
            nxt = link.other(node)
            cand = (dist + link.latency_ms, hops + 1, ids + (link.link_id,))
            if nxt not in best or cand < best[nxt]:
                best[nxt] = cand
                heapq.heappush(heap, (*cand, nxt))
    raise Unreachable(f"{src} -> {dst}: no live path")


def _noise(world: World, link: LinkSpec, kind: str, nominal) -> Fraction:
    if link.noise is None:
        return Fraction(1)
    return world.noise_tables[link.noise].factor(kind, nominal)


def path_latency(world: World, src: str, dst: str) -> Fraction:
    total = Fraction(0)
    for link in shortest_path(world, src, dst):
        total += link.latency_ms * _noise(world, link, "latency", link.induced_latency_ms)
    return total


def measure_path(world: World, src_node: str, dst_node: str) -> MeasurementSample:
    links = shortest_path(world, src_node, dst_node)
    total = sum((l.latency_ms * _noise(world, l, "latency", l.induced_latency_ms) for l in links), Fraction(0))
    induced = sum((l.induced_latency_ms for l in links), Fraction(0))
    v = float(total)
    return MeasurementSample("latency", float(induced), (v, v, v), "ms")


def _link_throughput(world: World, link: LinkSpec, offered: Fraction) -> Fraction:
    if not world.is_up(link):
        return Fraction(0)
    cap = Fraction(repr(float(link.capacity_kbps)))
    shaped = offered if link.limit_kbps is None else min(offered, Fraction(repr(float(link.limit_kbps))))
    nominal = link.limit_kbps if link.limit_kbps is not None else link.capacity_kbps
    return min(cap, shaped * _noise(world, link, "bandwidth", Fraction(repr(float(nominal)))))


def measure_throughput(world: World, link_id: str, offered_kbps: float) -> MeasurementSample:
    link = world.link(link_id)
    got = float(_link_throughput(world, link, Fraction(repr(float(offered_kbps)))))
    nominal = link.limit_kbps if link.limit_kbps is not None else link.capacity_kbps
    return MeasurementSample("bandwidth", nominal, (got, got), "Kbits/sec")


def measure_path_throughput(world: World, src: str, dst: str, offered_kbps: float) -> MeasurementSample:
    offered = Fraction(repr(float(offered_kbps)))
    if src == dst:
        return MeasurementSample("bandwidth", float(offered), (float(offered),) * 2, "Kbits/sec")
    got = offered
    for link in shortest_path(world, src, dst):
        got = min(got, _link_throughput(world, link, offered))
    return MeasurementSample("bandwidth", float(offered), (float(got),) * 2, "Kbits/sec")


def uplink(world: World, host_id: str) -> LinkSpec | None:
    """The host's link to a router of its own site (an LX.1 style access link)."""
    site = world.host(host_id).site_id
    for link in sorted(world._adj.get(host_id, []), key=lambda l: l.link_id):
        peer = world._hosts.get(link.other(host_id))
        if peer is not None and peer.role == "router" and peer.site_id == site:
            return link
    return None


def measure_host_throughput(world: World, host_id: str, offered_kbps: float) -> MeasurementSample:
    """Throughput a host can push through its access link (or its NIC if it has none)."""
    link = uplink(world, host_id)
    if link is not None:
        return measure_throughput(world, link.link_id, offered_kbps)
    if host_id in world.dead_nodes:
        got = 0.0
    else:
        got = min(float(offered_kbps), world.host_bandwidth(host_id))
    return MeasurementSample("bandwidth", world.host_bandwidth(host_id) or float(offered_kbps),
                             (got, got), "Kbits/sec")


def measure_host_latency(world: World, host_id: str) -> MeasurementSample:
    link = uplink(world, host_id)
    if link is None:
        return MeasurementSample("latency", 0.0, (0.0, 0.0, 0.0), "ms")
    return measure_path(world, host_id, link.other(host_id))


def measure_cpu(world: World, host_id: str, scale: float,
                params: CalibrationParams = REFERENCE_CALIBRATION) -> MeasurementSample:
    """Benchmark score of a ``scale``-core slice of the host.

    ``nominal`` is the score the slice is meant to emulate (calibrated against
    the reference core); the observation uses the host's own per-core score.
    """
    host = world.host(host_id)
    target = predict_simulated_score(scale, params)
    if host_id in world.dead_nodes:
        return MeasurementSample("cpu", target, (0.0,), "score")
    host_params = CalibrationParams(host.cpu_reference_score, params.overhead)
    return MeasurementSample("cpu", target, (predict_simulated_score(scale, host_params),), "score")


def build_topology(sites: Iterable[str], hosts_per_site: int = 2, *,
                   core_capacity_kbps: float = 10_000_000, access_capacity_kbps: float = 1_000_000,
                   base_latency_ms: str = "0.083", cpu: float = 4.0) -> World:
    """Programmatic equivalent of the two-site figure: routers joined by L<i>.0, hosts by L<i>.1."""
    sites = list(sites)
    world_sites, hosts, links = [], [], []
    routers = []
    for i, site in enumerate(sites):
        world_sites.append(SiteSpec(site))
        router = f"R{i}"
        routers.append(router)
        hosts.append(HostSpec(router, site, "router"))
        for j in range(hosts_per_site):
            hid = f"CH{i}.{j}"
            hosts.append(HostSpec(hid, site, "compute", cpu))
            links.append(LinkSpec(f"L{i}.1.{j}", (router, hid), access_capacity_kbps, Fraction(base_latency_ms)))
    for i in range(len(routers) - 1):
        links.append(LinkSpec(f"L{i}.0", (routers[i], routers[i + 1]), core_capacity_kbps, Fraction(base_latency_ms)))
    return World(sites=world_sites, hosts=hosts, links=links)

from __future__ import annotations

import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgecps import simnet
from edgecps.errors import DanglingEndpoint, DuplicateNodeId, ParseError, PastTick, UnknownLink, UnknownNode, Unreachable
from edgecps.hierarchy import build_hierarchy
from edgecps.placement import Inventory
from edgecps.simnet import HostSpec, LinkSpec, SiteSpec, World, load_scenario

TWO_SITES = """\
site id=siteA
site id=siteB
host id=R0 site=siteA role=router
host id=R1 site=siteB role=router
host id=CH0.0 site=siteA cpu=4
host id=CH0.1 site=siteA cpu=4
host id=CH1.0 site=siteB cpu=4
host id=CH1.1 site=siteB cpu=4
link id=L0.0 a=R0 b=R1 capacity_kbps=10000000 latency_ms=0.083
link id=L0.1 a=R0 b=CH0.0 capacity_kbps=1000000 latency_ms=0.083
link id=L0.2 a=R0 b=CH0.1 capacity_kbps=1000000 latency_ms=0.083
link id=L1.1 a=R1 b=CH1.0 capacity_kbps=1000000 latency_ms=0.083
link id=L1.2 a=R1 b=CH1.1 capacity_kbps=1000000 latency_ms=0.083
region id=r1
agent id=a1 region=r1 host=CH0.0
agent id=a2 region=r1 host=CH0.1
"""


def single_link(induced="0", **kw):
    hosts = [HostSpec("A", "s", "compute", 1), HostSpec("B", "s", "compute", 1)]
    return World(sites=[SiteSpec("s")], hosts=hosts,
                 links=[LinkSpec("L", ("A", "B"), kw.get("capacity", 1e9), Fraction("0.083"), Fraction(induced),
                                 kw.get("limit"))])


def test_two_site_scenario():
    w = load_scenario(TWO_SITES)
    assert len(w.sites) == 2
    assert len(w.links) >= 5
    assert {h.host_id for h in w.hosts if h.role == "router"} == {"R0", "R1"}


def test_fig1_fixture(scenarios):
    w = load_scenario((scenarios / "fig1.scn").read_text(), "fig1.scn")
    assert len(w.sites) >= 2 and len(w.links) >= 5


def test_programmatic_topology_matches_shape():
    w = simnet.build_topology(["siteA", "siteB"])
    assert len(w.sites) == 2 and len(w.links) == 5


def test_dangling_link_endpoint():
    with pytest.raises(DanglingEndpoint) as info:
        load_scenario("site id=s\nhost id=a site=s cpu=1\nlink id=L a=a b=ghost capacity_kbps=1\n", "x.scn")
    assert info.value.line == 3


def test_duplicate_node():
    with pytest.raises(DuplicateNodeId):
        load_scenario("site id=s\nhost id=a site=s cpu=1\nhost id=a site=s cpu=1\n")


def test_syntax_error_has_line():
    with pytest.raises(ParseError) as info:
        load_scenario("site id=s\n\nhost id=a site=s cpu=lots\n")
    assert info.value.line == 3
    with pytest.raises(ParseError):
        load_scenario("gizmo id=1\n")


def test_empty_scenario():
    w = load_scenario("")
    assert w.sites == [] and w.links == [] and w.tick == 0


def test_step_without_events():
    w = load_scenario("")
    w, emitted = simnet.step(w)
    assert w.tick == 1 and emitted == []


def test_host_fail_fires_at_its_tick():
    w = load_scenario(TWO_SITES + "event at=5 kind=host_fail node=CH0.0\n")
    assert simnet.run_until(w, 4) == []
    _, emitted = simnet.step(w)
    assert w.tick == 5
    assert "CH0.0" in w.dead_nodes
    assert [e.kind for e in emitted] == ["host_fail", "liveness"]
    assert emitted[1].get("alive") == "false"


def test_same_tick_events_keep_insertion_order():
    for order in itertools.permutations(["CH0.0", "CH1.0", "CH0.1"]):
        w = load_scenario(TWO_SITES)
        for node in order:
            simnet.inject_failure(w, node, 2)
        emitted = simnet.run_until(w, 2)
        assert [e.get("node") for e in emitted if e.kind == "host_fail"] == list(order)


def test_failure_on_compute_host_kills_its_agents():
    w = load_scenario(TWO_SITES)
    h = build_hierarchy(w.hierarchy_config())
    inv = Inventory(h, w.capacity_ledgers(), w.host_sites())
    simnet.inject_failure(w, "CH0.0", 1)
    for ev in simnet.run_until(w, 1):
        if ev.kind == "liveness":
            inv.mark_dead(ev.get("node"))
    alive = {str(r.address): inv.is_alive(r) for r in h.iter_agents()}
    assert alive == {"r1/a1": False, "r1/a2": True}


def components_oracle(world: World) -> set[frozenset[str]]:
    """Union-find over links whose endpoints and id are all alive."""
    parent = {h.host_id: h.host_id for h in world.hosts if h.host_id not in world.dead_nodes}

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for l in world.links:
        a, b = l.endpoints
        if l.link_id in world.dead_links or a not in parent or b not in parent:
            continue
        parent[find(a)] = find(b)
    groups: dict[str, set[str]] = {}
    for n in parent:
        groups.setdefault(find(n), set()).add(n)
    return {frozenset(g) for g in groups.values()}


def test_router_failure_cuts_the_site_off():
    w = load_scenario(TWO_SITES)
    simnet.inject_failure(w, "R0", 0)
    simnet.process_due(w)
    comps = simnet.reachability(w)
    assert comps == components_oracle(w)
    assert frozenset({"CH0.0"}) in comps
    with pytest.raises(Unreachable):
        simnet.measure_path(w, "CH0.0", "CH1.0")


def test_inject_errors():
    w = load_scenario(TWO_SITES)
    simnet.run_until(w, 3)
    with pytest.raises(PastTick):
        simnet.inject_failure(w, "CH0.0", 2)
    with pytest.raises(UnknownNode):
        simnet.inject_failure(w, "nope", 5)


def test_link_failure_and_recovery():
    w = load_scenario(TWO_SITES)
    before = simnet.reachability(w)
    simnet.inject_failure(w, "L0.0", 1)
    simnet.inject_recovery(w, "L0.0", 2)
    simnet.run_until(w, 1)
    assert simnet.reachability(w) != before
    simnet.run_until(w, 2)
    assert simnet.reachability(w) == before


def test_path_latency_base_only():
    s = simnet.measure_path(single_link(), "A", "B")
    assert s.observed == (0.083, 0.083, 0.083)


def test_path_latency_with_induced_delay():
    w = single_link("10")
    assert simnet.path_latency(w, "A", "B") == Fraction("10.083")
    assert simnet.measure_path(w, "A", "B").observed[1] == 10.083


def test_disconnected_pair():
    w = World(sites=[SiteSpec("s")], hosts=[HostSpec("A", "s", "compute", 1), HostSpec("B", "s", "compute", 1)])
    with pytest.raises(Unreachable):
        simnet.measure_path(w, "A", "B")


def test_noise_table_scales_latency():
    text = ("site id=s\nhost id=A site=s cpu=1\nhost id=B site=s cpu=1\n"
            "noise id=T kind=latency nominal=10 factor=1.0033\n"
            "link id=L a=A b=B capacity_kbps=1 latency_ms=0.083 induced_ms=10 noise=T\n")
    w = load_scenario(text)
    assert simnet.path_latency(w, "A", "B") == Fraction("10.083") * Fraction("1.0033")


def test_throughput_clamped_to_limit():
    w = single_link(limit=10_000)
    assert simnet.measure_throughput(w, "L", 20_000).observed == (10_000.0, 10_000.0)


def test_throughput_clamped_to_capacity():
    w = single_link(capacity=38.8e6, limit=100e6)
    assert simnet.measure_throughput(w, "L", 100e6).observed[0] == 38.8e6


def test_throughput_passes_offered_below_limit():
    w = single_link(limit=10_000)
    assert simnet.measure_throughput(w, "L", 5_000).observed[0] == 5_000
    with pytest.raises(UnknownLink):
        simnet.measure_throughput(w, "nope", 1)


def test_traces_are_deterministic():
    text = TWO_SITES + ("event at=1 kind=measure src=CH0.0 dst=CH1.1\n"
                        "event at=2 kind=host_fail node=R1\n"
                        "event at=2 kind=measure src=CH0.0 dst=CH1.1\n"
                        "event at=3 kind=traffic link=L0.0 offered_kbps=5\n")
    runs = []
    for _ in range(2):
        w = load_scenario(text, seed=42)
        simnet.run_until(w, 5)
        runs.append([str(e) for e in w.trace])
    assert runs[0] == runs[1]
    assert "unreachable" in runs[0][-2]


@st.composite
def random_topologies(draw):
    n = draw(st.integers(2, 6))
    nodes = [f"n{i}" for i in range(n)]
    pairs = list(itertools.combinations(range(n), 2))
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, min_size=1, max_size=len(pairs)))
    links = [LinkSpec(f"L{a}{b}", (nodes[a], nodes[b]), draw(st.integers(1, 10_000)),
                      Fraction(draw(st.integers(0, 500)), 1000), Fraction(draw(st.integers(0, 20))))
             for a, b in chosen]
    hosts = [HostSpec(x, "s", "compute", 1) for x in nodes]
    return World(sites=[SiteSpec("s")], hosts=hosts, links=links)


def floyd_warshall(world: World) -> dict[tuple[str, str], Fraction]:
    nodes = [h.host_id for h in world.hosts]
    inf = None
    dist = {(a, b): (Fraction(0) if a == b else inf) for a in nodes for b in nodes}
    for l in world.links:
        a, b = l.endpoints
        for x, y in ((a, b), (b, a)):
            if dist[x, y] is None or l.latency_ms < dist[x, y]:
                dist[x, y] = l.latency_ms
    for k in nodes:
        for i in nodes:
            for j in nodes:
                if dist[i, k] is not None and dist[k, j] is not None:
                    via = dist[i, k] + dist[k, j]
                    if dist[i, j] is None or via < dist[i, j]:
                        dist[i, j] = via
    return dist


@settings(max_examples=60, deadline=None)
@given(random_topologies())
def test_path_latency_is_additive_and_shortest(world):
    oracle = floyd_warshall(world)
    for (a, b), expected in oracle.items():
        if expected is None:
            with pytest.raises(Unreachable):
                simnet.path_latency(world, a, b)
            continue
        path = simnet.shortest_path(world, a, b)
        assert simnet.path_latency(world, a, b) == expected == sum((l.latency_ms for l in path), Fraction(0))
        offered = 1e6
        got = simnet.measure_path_throughput(world, a, b, offered).observed[0]
        if path:
            assert got <= min(l.capacity_kbps for l in path)


@settings(max_examples=40, deadline=None)
@given(random_topologies(), st.data())
def test_failure_recovery_round_trip(world, data):
    before = simnet.reachability(world)
    node = data.draw(st.sampled_from([h.host_id for h in world.hosts]))
    simnet.inject_failure(world, node, 0)
    simnet.process_due(world)
    assert simnet.reachability(world) == components_oracle(world)
    simnet.inject_recovery(world, node, 0)
    simnet.process_due(world)
    assert simnet.reachability(world) == before

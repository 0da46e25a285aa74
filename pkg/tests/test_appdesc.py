from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgecps.appdesc import (
    AppDescriptor,
    Edge,
    FunctionalUnit,
    Registry,
    RegistryRef,
    ResourceRequest,
    emit_descriptor,
    parse_descriptor,
    predicate_matches,
    restore,
    snapshot,
    topological_order,
)
from edgecps.errors import (
    CyclicDataflow,
    DuplicateUnitId,
    InactivePlan,
    ParseError,
    PlacementFailed,
    UnknownUnitInEdge,
)
from edgecps.placement import UnitState, place_application, reassign_on_failure

from support import HostDef, app, make_bed, unit

PIPELINE = """\
# sensor feeds analytics
[app]
id = pipeline

[unit sensor]
image = public/cps/sensor:1.0
require.site = edgeA
cpu_scale = 0.0802
bandwidth_kbps = 1000

[unit analytics]
image = private/cps/analytics:2
location_independent = true
cpu_scale = 0.4976
slc.latency_budget_ms = 15

[edge sensor analytics]
bandwidth_kbps = 500
latency_budget_ms = 20
"""


def test_two_unit_pipeline():
    d = parse_descriptor(PIPELINE)
    assert d.app_id == "pipeline"
    assert [u.unit_id for u in d.units] == ["sensor", "analytics"]
    assert d.edges == [Edge("sensor", "analytics", 500.0, 20.0)]
    assert d.unit("sensor").predicates == {"site": "edgeA"}
    assert d.unit("sensor").request == ResourceRequest(0.0802, 1000.0, 0.0)
    assert d.unit("analytics").location_independent
    assert d.unit("analytics").image == RegistryRef("private", "cps/analytics", "2")
    assert d.slc == {"analytics": {"latency_budget_ms": 15.0}}


def test_edge_to_undeclared_unit():
    text = PIPELINE + "\n[edge sensor x]\n"
    with pytest.raises(UnknownUnitInEdge) as info:
        parse_descriptor(text, "app.txt")
    assert info.value.line == text.splitlines().index("[edge sensor x]") + 1


def test_two_cycle():
    text = PIPELINE + "\n[edge analytics sensor]\n"
    with pytest.raises(CyclicDataflow):
        parse_descriptor(text)


def test_duplicate_unit():
    text = PIPELINE + "\n[unit sensor]\nimage = public/a:b\n"
    with pytest.raises(DuplicateUnitId):
        parse_descriptor(text)


@pytest.mark.parametrize("text, line", [
    ("[app]\nid = a\n[unit u]\nimage = public/x:1\ncpu_scale = lots\n", 5),
    ("[app]\nid = a\nbogus line\n", 3),
    ("[app]\nid = a\n[unit u]\nimage = nowhere/x:1\n", 4),
    ("[app]\nid = a\n[widget w]\n", 3),
    ("[unit u]\nimage = public/x:1\n", 0),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as info:
        parse_descriptor(text, "d.app")
    assert info.value.line == line


def test_location_independent_unit_cannot_pin():
    text = "[app]\nid = a\n[unit u]\nimage = public/x:1\nlocation_independent = true\nrequire.site = s1\n"
    with pytest.raises(ParseError):
        parse_descriptor(text)


def test_wildcard_pin_is_not_pinning():
    text = "[app]\nid = a\n[unit u]\nimage = public/x:1\nlocation_independent = true\nrequire.site = *\n"
    assert parse_descriptor(text).unit("u").location_independent


def test_predicate_matching():
    assert predicate_matches("edge*", "edgeA")
    assert predicate_matches("*", None)
    assert not predicate_matches("edgeA", None)
    assert not predicate_matches("edgeA", "edgeB")


def test_topological_order_prefers_declaration_order():
    d = app("x", unit("c"), unit("a"), unit("b"), edges=(("b", "c"),))
    assert [u.unit_id for u in topological_order(d)] == ["a", "b", "c"]


def has_cycle_oracle(n: int, edges: set[tuple[int, int]]) -> bool:
    reach = [[(i, j) in edges for j in range(n)] for i in range(n)]
    for k, i, j in itertools.product(range(n), repeat=3):
        if reach[i][k] and reach[k][j]:
            reach[i][j] = True
    return any(reach[i][i] for i in range(n))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 8).flatmap(
    lambda n: st.tuples(st.just(n), st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=16))))
def test_acyclicity_matches_reachability_oracle(case):
    n, edges = case
    d = AppDescriptor("g", [unit(f"u{i}") for i in range(n)], [Edge(f"u{a}", f"u{b}") for a, b in sorted(edges)])
    try:
        order = topological_order(d)
        cyclic = False
    except CyclicDataflow:
        cyclic = True
    assert cyclic == has_cycle_oracle(n, edges)
    if not cyclic:
        pos = {u.unit_id: i for i, u in enumerate(order)}
        assert all(pos[e.producer] < pos[e.consumer] for e in d.edges)


words = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789-_", min_size=1, max_size=8)
amounts = st.one_of(st.just(0.0), st.floats(min_value=0, max_value=1e7, allow_nan=False, allow_infinity=False))


@st.composite
def descriptors(draw):
    n = draw(st.integers(1, 5))
    ids = draw(st.lists(words, min_size=n, max_size=n, unique=True))
    units, slc = [], {}
    for uid in ids:
        independent = draw(st.booleans())
        keys = ["device", "tier", "os"] if independent else ["device", "tier", "site", "agent"]
        preds = draw(st.dictionaries(st.sampled_from(keys), st.one_of(words, st.just("*"), words.map(lambda w: w + "*")),
                                     max_size=3))
        req = ResourceRequest(draw(amounts), draw(amounts), draw(amounts))
        img = RegistryRef(draw(st.sampled_from(["public", "private"])), draw(words) + "/" + draw(words), draw(words))
        units.append(FunctionalUnit(uid, img, preds, req, independent))
        if draw(st.booleans()):
            slc[uid] = {"latency_budget_ms": draw(amounts)}
    pairs = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=4)) if pairs else []
    edges = [Edge(a, b, draw(amounts), draw(amounts)) for a, b in chosen]
    return AppDescriptor(draw(words), units, edges, slc).validate()


@settings(max_examples=80, deadline=None)
@given(descriptors())
def test_emit_parse_round_trip(d):
    assert parse_descriptor(emit_descriptor(d)) == d


# -- snapshot and restore -------------------------------------------------------

def three_unit_bed():
    bed = make_bed(
        [HostDef("h1", "edgeA", 2, 1000), HostDef("h2", "edgeA", 2, 1000), HostDef("h3", "edgeB", 1, 1000)],
        [("r1", "a1", "h1", {}), ("r1", "a2", "h2", {}), ("r2", "b1", "h3", {})],
    )
    d = app("tri", unit("s", 0.5, 10, agent="a1"), unit("m", 1.0, 10, True), unit("t", 0.2, 10, True),
            edges=(("s", "m"), ("m", "t")))
    plan = place_application(d, bed.hierarchy, bed.inventory, bed.addresses)
    return bed, d, plan


def test_snapshot_has_private_image_per_unit():
    bed, d, plan = three_unit_bed()
    reg = Registry()
    snap = snapshot(plan, reg, d, tick=3)
    assert snap.snapshot_id == "tri@3"
    assert sorted(snap.unit_images) == ["m", "s", "t"]
    assert all(ref.registry == "private" for ref in snap.unit_images.values())
    assert snapshot(plan, reg, d, tick=4).snapshot_id != snap.snapshot_id
    assert reg.latest("tri").taken_at == 4


def test_snapshot_of_plan_with_failed_unit():
    bed, d, plan = three_unit_bed()
    reassign_on_failure(plan, "h1", d, bed.inventory, bed.addresses)
    assert plan.state["s"] == UnitState.FAILED
    with pytest.raises(InactivePlan):
        snapshot(plan, Registry(), d)


def test_restore_with_all_agents_alive_is_identical():
    bed, d, plan = three_unit_bed()
    snap = snapshot(plan, Registry(), d)
    before = plan.dump()
    again = restore(snap, bed.hierarchy, bed.inventory, bed.addresses)
    assert again.dump() == before
    assert again.assignments == plan.assignments


def test_restore_moves_only_the_unit_on_the_dead_agent():
    bed, d, plan = three_unit_bed()
    snap = snapshot(plan, Registry(), d)
    victim_host = plan.assignments["m"].host_ref
    assert victim_host != plan.assignments["s"].host_ref
    bed.inventory.mark_dead(victim_host)
    restored = restore(snap, bed.hierarchy, bed.inventory, bed.addresses)
    # brute force: every alive agent with room for "m" after "s" and "t" are back in place
    alive = [r for r in bed.hierarchy.iter_agents() if r.host_ref != victim_host]
    assert restored.assignments["m"].agent.agent in {r.address for r in alive}
    assert restored.assignments["m"].host_ref != victim_host
    for uid in ("s", "t"):
        if plan.assignments[uid].host_ref != victim_host:
            assert restored.assignments[uid] == plan.assignments[uid]


def test_restore_pinned_unit_with_dead_agent_fails():
    bed, d, plan = three_unit_bed()
    snap = snapshot(plan, Registry(), d)
    bed.inventory.mark_dead("h1")
    with pytest.raises(PlacementFailed) as info:
        restore(snap, bed.hierarchy, bed.inventory, bed.addresses)
    assert info.value.unit_id == "s"

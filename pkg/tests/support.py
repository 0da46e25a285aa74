"""Small builders shared by the placement, appdesc and acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

from edgecps.addressing import AllocationLedger
from edgecps.appdesc import AppDescriptor, Edge, FunctionalUnit, RegistryRef, ResourceRequest
from edgecps.hierarchy import AgentConfig, Hierarchy, HierarchyConfig, RegionConfig, build_hierarchy
from edgecps.placement import Inventory
from edgecps.qosmodel import CapacityLedger

IMAGE = RegistryRef("public", "test/unit", "1")

# (criterion, passed, detail) lines printed at the end of the session
ACCEPTANCE: list[tuple[str, bool, str]] = []


@dataclass
class HostDef:
    host_id: str
    site: str
    cpu: float
    bw: float


@dataclass
class Bed:
    hierarchy: Hierarchy
    inventory: Inventory
    addresses: AllocationLedger


def make_bed(hosts: list[HostDef], agents: list[tuple[str, str, str, dict]]) -> Bed:
    """``agents`` holds ``(region, agent, host, capabilities)`` tuples."""
    regions: dict[str, RegionConfig] = {}
    for region, agent, host, caps in agents:
        regions.setdefault(region, RegionConfig(region)).agents.append(AgentConfig(agent, host, dict(caps)))
    h = build_hierarchy(HierarchyConfig("global", list(regions.values()), [], {x.host_id for x in hosts}))
    ledgers = {x.host_id: CapacityLedger(x.host_id, x.bw, x.cpu) for x in hosts}
    inv = Inventory(h, ledgers, {x.host_id: x.site for x in hosts})
    addrs = AllocationLedger()
    for site in dict.fromkeys(x.site for x in hosts):
        addrs.allocate_site(site)
    for x in hosts:
        addrs.allocate_host_prefix(x.site, x.host_id)
    return Bed(h, inv, addrs)


def unit(uid: str, cpu: float = 0.0, bw: float = 0.0, independent: bool = False, **predicates) -> FunctionalUnit:
    return FunctionalUnit(uid, IMAGE, dict(predicates), ResourceRequest(cpu, bw), independent)


def app(app_id: str, *units: FunctionalUnit, edges: tuple[tuple[str, str], ...] = ()) -> AppDescriptor:
    return AppDescriptor(app_id, list(units), [Edge(a, b) for a, b in edges]).validate()


def state_of(bed: Bed) -> tuple:
    """Everything a placement call may mutate, in comparable form."""
    return (
        bed.addresses.dump(),
        {k: (dict(v.children), v.bandwidth_used, v.cpu_used) for k, v in bed.inventory.ledgers.items()},
        {str(r.address): sorted(r.units) for r in bed.hierarchy.iter_agents()},
        sorted(bed.inventory.dead_hosts),
    )

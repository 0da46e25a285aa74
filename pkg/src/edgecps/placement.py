"""Predicate filtering and best-fit placement of functional units onto agents.

The global controller narrows the set of regions by predicate, each region
picks its best local candidate, and the global controller keeps the region
whose candidate leaves the smallest normalized residual.  Scores are exact
rationals so ties are real ties.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping

from .addressing import AllocationLedger, Ipv6Prefix
from .appdesc import AppDescriptor, FunctionalUnit, Snapshot, predicate_matches, topological_order
from .errors import (
    AddressExhausted,
    AdmissionRejected,
    InsufficientBandwidth,
    InsufficientCpu,
    NoCandidates,
    OffloadImpossible,
    PlacementFailed,
    UnknownHost,
)
from .hierarchy import AgentAddress, AgentRecord, Hierarchy
from .qosmodel import CapacityLedger, CirReservation


class UnitState(str, Enum):
    PLACED = "placed"
    FAILED = "failed"
    MIGRATING = "migrating"


@dataclass(frozen=True)
class Assignment:
    agent: AgentAddress
    host_ref: str
    address: Ipv6Prefix
    reservation_ids: tuple[str, ...]
    cpu_scale: float = 0.0
    bandwidth_kbps: float = 0.0


@dataclass
class PlacementPlan:
    app_id: str
    assignments: dict[str, Assignment] = field(default_factory=dict)
    state: dict[str, UnitState] = field(default_factory=dict)

    @property
    def active(self) -> bool:
        return all(s == UnitState.PLACED for s in self.state.values())

    def placed_units(self) -> list[str]:
        return sorted(u for u, s in self.state.items() if s == UnitState.PLACED)

    def failed_units(self) -> list[str]:
        return sorted(u for u, s in self.state.items() if s == UnitState.FAILED)

    def dump(self) -> str:
        """``unit agent address cpu bw state`` per line, tab separated, sorted by unit."""
        lines = []
        for uid in sorted(self.assignments):
            a = self.assignments[uid]
            lines.append("\t".join([uid, str(a.agent.agent), str(a.address), repr(float(a.cpu_scale)),
                                    repr(float(a.bandwidth_kbps)), self.state[uid].value]))
        return "".join(line + "\n" for line in lines)


def instance_id(app_id: str, unit_id: str) -> str:
    return f"{app_id}/{unit_id}"


def _frac(d) -> Fraction:
    return Fraction(d)


class Inventory:
    """Live view of agents, their hosts' free capacity and liveness.

    Free capacity is read straight from the per-host :class:`CapacityLedger`,
    so several agents on one host compete for the same headroom.
    """

    def __init__(self, hierarchy: Hierarchy, ledgers: Mapping[str, CapacityLedger],
                 host_sites: Mapping[str, str] | None = None, dead_hosts: Iterable[str] = ()):
        self.hierarchy = hierarchy
        self.ledgers: dict[str, CapacityLedger] = dict(ledgers)
        self.host_sites: dict[str, str] = dict(host_sites or {})
        self.dead_hosts: set[str] = set(dead_hosts)

    def is_alive(self, agent: AgentAddress | AgentRecord) -> bool:
        rec = agent if isinstance(agent, AgentRecord) else self.hierarchy.agent(agent)
        return rec.host_ref not in self.dead_hosts

    def mark_dead(self, host_ref: str) -> None:
        self.dead_hosts.add(host_ref)

    def mark_alive(self, host_ref: str) -> None:
        self.dead_hosts.discard(host_ref)

    def ledger(self, host_ref: str) -> CapacityLedger | None:
        return self.ledgers.get(host_ref)

    def capabilities(self, rec: AgentRecord) -> dict[str, str]:
        caps = {"region": rec.address.region_id, "agent": rec.address.agent_id, "host": rec.host_ref}
        site = self.host_sites.get(rec.host_ref)
        if site is not None:
            caps["site"] = site
        caps.update(rec.capabilities)
        return caps

    def site_of(self, rec: AgentRecord) -> str | None:
        return self.capabilities(rec).get("site")

    def free(self, rec: AgentRecord) -> tuple[Fraction, Fraction]:
        led = self.ledgers.get(rec.host_ref)
        if led is None:
            return Fraction(0), Fraction(0)
        return _frac(led.cpu_headroom), _frac(led.bandwidth_headroom)

    def host_capacity(self, rec: AgentRecord) -> tuple[Fraction, Fraction]:
        led = self.ledgers.get(rec.host_ref)
        if led is None:
            return Fraction(0), Fraction(0)
        return Fraction(repr(float(led.cpu_capacity_cores))), Fraction(repr(float(led.bandwidth_capacity_kbps)))

    def checkpoint(self) -> dict:
        return {
            "ledgers": {k: v.checkpoint() for k, v in self.ledgers.items()},
            "dead": set(self.dead_hosts),
            "units": {(r.address.region_id, r.address.agent_id): set(r.units)
                      for r in self.hierarchy.iter_agents()},
        }

    def rollback(self, state: dict) -> None:
        for k, st in state["ledgers"].items():
            self.ledgers[k].rollback(st)
        self.dead_hosts = set(state["dead"])
        for rec in self.hierarchy.iter_agents():
            rec.units = set(state["units"].get((rec.address.region_id, rec.address.agent_id), ()))


def _req(unit: FunctionalUnit) -> tuple[Fraction, Fraction]:
    return Fraction(repr(float(unit.request.cpu_scale))), Fraction(repr(float(unit.request.bandwidth_kbps)))


def _satisfies(unit: FunctionalUnit, rec: AgentRecord, inv: Inventory) -> bool:
    caps = inv.capabilities(rec)
    return all(predicate_matches(pat, caps.get(key)) for key, pat in unit.predicates.items())


def _fits(unit: FunctionalUnit, rec: AgentRecord, inv: Inventory) -> bool:
    if not inv.is_alive(rec):
        return False
    free_cpu, free_bw = inv.free(rec)
    req_cpu, req_bw = _req(unit)
    return free_cpu >= req_cpu and free_bw >= req_bw


def _agent_pool(unit: FunctionalUnit, inv: Inventory, region: str | None) -> Iterable[AgentRecord]:
    h = inv.hierarchy
    regions = [region] if region is not None else sorted(h.regions)
    pin = unit.predicates.get("agent")
    for rid in regions:
        node = h.regions.get(rid)
        if node is None:
            continue
        if pin is not None and "*" not in pin and "?" not in pin and "[" not in pin:
            rec = node.agents.get(pin)
            if rec is not None:
                yield rec
            continue
        for aid in sorted(node.agents):
            yield node.agents[aid]


def filter_candidates(unit: FunctionalUnit, inv: Inventory, region: str | None = None) -> list[AgentAddress]:
    """Alive agents matching every predicate with room for the request, in address order."""
    out = [rec.address for rec in _agent_pool(unit, inv, region)
           if _satisfies(unit, rec, inv) and _fits(unit, rec, inv)]
    out.sort()
    return out


def residual_score(unit: FunctionalUnit, agent: AgentAddress, inv: Inventory) -> Fraction:
    """Normalized capacity left on the agent's host after placing ``unit``."""
    rec = inv.hierarchy.agent(agent)
    free_cpu, free_bw = inv.free(rec)
    cap_cpu, cap_bw = inv.host_capacity(rec)
    req_cpu, req_bw = _req(unit)
    score = Fraction(0)
    if cap_cpu > 0:
        score += (free_cpu - req_cpu) / cap_cpu
    if cap_bw > 0:
        score += (free_bw - req_bw) / cap_bw
    return score


def best_fit(unit: FunctionalUnit, candidates: Iterable[AgentAddress], inv: Inventory) -> AgentAddress:
    scored = [(residual_score(unit, c, inv), c) for c in candidates]
    if not scored:
        raise NoCandidates(f"no candidate agents for unit {unit.unit_id!r}")
    return min(scored)[1]


def choose_agent(unit: FunctionalUnit, inv: Inventory,
                 exclude_site: str | None = None, prefer: Mapping[str, str] | None = None) -> AgentAddress:
    """Hierarchical selection: regions filtered at the top, best fit inside each.

    ``exclude_site`` drops agents in that site; ``prefer`` restricts to
    agents carrying those capabilities when any such agent qualifies.
    """
    h = inv.hierarchy
    region_pat = unit.predicates.get("region")
    per_region: list[tuple[str, list[AgentAddress]]] = []
    for rid in sorted(h.regions):
        if region_pat is not None and not predicate_matches(region_pat, rid):
            continue
        cands = filter_candidates(unit, inv, region=rid)
        if exclude_site is not None:
            cands = [c for c in cands if inv.site_of(h.agent(c)) != exclude_site]
        if cands:
            per_region.append((rid, cands))
    if prefer:
        preferred = [
            (rid, [c for c in cands
                   if all(inv.capabilities(h.agent(c)).get(k) == v for k, v in prefer.items())])
            for rid, cands in per_region
        ]
        preferred = [(rid, cands) for rid, cands in preferred if cands]
        if preferred:
            per_region = preferred
    best = None
    for rid, cands in per_region:
        local = best_fit(unit, cands, inv)
        key = (residual_score(unit, local, inv), local)
        if best is None or key < best:
            best = key
    if best is None:
        raise NoCandidates(f"no candidate agents for unit {unit.unit_id!r}")
    return best[1]


# -- binding ------------------------------------------------------------------

def _bind(plan: PlacementPlan, unit: FunctionalUnit, agent: AgentAddress, inv: Inventory,
          addresses: AllocationLedger, want_addresses: Iterable[Ipv6Prefix] = ()) -> Assignment:
    """Admit the unit's reservation and give it a /128 on the agent's host.

    Candidate addresses in ``want_addresses`` are claimed first when free.
    """
    rec = inv.hierarchy.agent(agent)
    iid = instance_id(plan.app_id, unit.unit_id)
    res = CirReservation(iid, unit.request.bandwidth_kbps, unit.request.latency_budget_ms,
                         unit.request.cpu_scale, holder=iid)
    led = inv.ledger(rec.host_ref)
    try:
        if led is None:
            if unit.request.cpu_scale or unit.request.bandwidth_kbps:
                raise InsufficientCpu(f"host {rec.host_ref} has no capacity ledger", headroom=0.0)
            res_ids: tuple[str, ...] = ()
        else:
            led.admit(res)
            res_ids = (iid,)
    except AdmissionRejected as exc:
        raise PlacementFailed(unit.unit_id, type(exc).__name__, str(exc)) from exc
    try:
        address = None
        for want in want_addresses:
            if addresses.claim_unit_address(rec.host_ref, iid, want):
                address = want
                break
        if address is None:
            address = addresses.allocate_unit_address(rec.host_ref, iid)
    except (AddressExhausted, UnknownHost) as exc:
        if res_ids:
            led.release(iid)
        raise PlacementFailed(unit.unit_id, "AddressExhausted", str(exc)) from exc
    rec.units.add(iid)
    a = Assignment(agent.with_unit(unit.unit_id), rec.host_ref, address, res_ids,
                   unit.request.cpu_scale, unit.request.bandwidth_kbps)
    plan.assignments[unit.unit_id] = a
    plan.state[unit.unit_id] = UnitState.PLACED
    return a


def _unbind(plan: PlacementPlan, unit_id: str, inv: Inventory, addresses: AllocationLedger) -> None:
    """Release whatever the unit currently holds; the assignment record stays."""
    iid = instance_id(plan.app_id, unit_id)
    hosts = set()
    for host, led in inv.ledgers.items():
        if iid in led.children:
            led.release(iid)
            hosts.add(host)
    if addresses.has_unit(iid):
        hosts.add(addresses.unit_host(iid))
        addresses.release(iid, "unit")
    a = plan.assignments.get(unit_id)
    if a is not None:
        hosts.add(a.host_ref)
    for rec in inv.hierarchy.iter_agents():
        if rec.host_ref in hosts:
            rec.units.discard(iid)


def _place_one(plan: PlacementPlan, unit: FunctionalUnit, inv: Inventory,
               addresses: AllocationLedger, want_addresses: Iterable[Ipv6Prefix] = ()) -> Assignment:
    try:
        agent = choose_agent(unit, inv)
    except NoCandidates as exc:
        raise PlacementFailed(unit.unit_id, "NoCandidates", str(exc)) from exc
    return _bind(plan, unit, agent, inv, addresses, want_addresses)


def place_application(d: AppDescriptor, h: Hierarchy, inv: Inventory,
                      addresses: AllocationLedger) -> PlacementPlan:
    """Place every unit of ``d`` in dataflow order, all or nothing."""
    if inv.hierarchy is not h:
        raise ValueError("inventory was built for a different hierarchy")
    order = topological_order(d)
    inv_state, addr_state = inv.checkpoint(), addresses.checkpoint()
    plan = PlacementPlan(d.app_id)
    try:
        for unit in order:
            _place_one(plan, unit, inv, addresses)
    except PlacementFailed:
        inv.rollback(inv_state)
        addresses.rollback(addr_state)
        raise
    return plan


# -- failure handling -----------------------------------------------------------

def reassign_on_failure(plan: PlacementPlan, failed_host: str, d: AppDescriptor,
                        inv: Inventory, addresses: AllocationLedger) -> tuple[PlacementPlan, list[str]]:
    """Move units off a dead host; units with nowhere to go are marked failed.

    The plan is updated in place and returned together with the ids of the
    units that could not be re-placed.
    """
    inv.mark_dead(failed_host)
    affected = {uid for uid, a in plan.assignments.items()
                if a.host_ref == failed_host and plan.state[uid] != UnitState.FAILED}
    failed = []
    for unit in topological_order(d):
        if unit.unit_id not in affected:
            continue
        old = plan.assignments[unit.unit_id]
        _unbind(plan, unit.unit_id, inv, addresses)
        try:
            _place_one(plan, unit, inv, addresses)
        except PlacementFailed:
            plan.assignments[unit.unit_id] = Assignment(old.agent, old.host_ref, old.address, (),
                                                        old.cpu_scale, old.bandwidth_kbps)
            plan.state[unit.unit_id] = UnitState.FAILED
            failed.append(unit.unit_id)
    return plan, failed


@dataclass(frozen=True)
class Migration:
    unit_id: str
    source: AgentAddress
    target: AgentAddress
    address: Ipv6Prefix


def site_cpu_utilization(site_id: str, inv: Inventory) -> Fraction:
    used = cap = Fraction(0)
    for host, site in inv.host_sites.items():
        led = inv.ledger(host)
        if site != site_id or led is None or host in inv.dead_hosts:
            continue
        used += _frac(led.cpu_used)
        cap += Fraction(repr(float(led.cpu_capacity_cores)))
    return used / cap if cap else Fraction(0)


def offload(site_id: str, pressure_threshold: float, plan: PlacementPlan, d: AppDescriptor,
            inv: Inventory, addresses: AllocationLedger) -> list[Migration]:
    """Push location-independent units out of an overloaded site, largest cpu first.

    Targets outside the site tagged ``tier=cloud`` are preferred.  Either the
    site ends at or below the threshold or nothing moves and
    :class:`OffloadImpossible` is raised.
    """
    threshold = Fraction(repr(float(pressure_threshold)))
    inv_state, addr_state = inv.checkpoint(), addresses.checkpoint()
    plan_state = copy.deepcopy((plan.assignments, plan.state))
    units = {u.unit_id: u for u in d.units}
    moved: list[Migration] = []
    moved_ids: set[str] = set()
    try:
        while site_cpu_utilization(site_id, inv) > threshold:
            movable = sorted(
                (uid for uid in plan.placed_units()
                 if uid not in moved_ids and units[uid].location_independent
                 and units[uid].request.cpu_scale > 0
                 and inv.host_sites.get(plan.assignments[uid].host_ref) == site_id),
                key=lambda uid: (-units[uid].request.cpu_scale, uid))
            for uid in movable:
                unit = units[uid]
                try:
                    target = choose_agent(unit, inv, exclude_site=site_id, prefer={"tier": "cloud"})
                except NoCandidates:
                    continue
                source = plan.assignments[uid].agent
                plan.state[uid] = UnitState.MIGRATING
                _unbind(plan, uid, inv, addresses)
                a = _bind(plan, unit, target, inv, addresses)
                moved.append(Migration(uid, source, a.agent, a.address))
                moved_ids.add(uid)
                break
            else:
                raise OffloadImpossible(
                    f"site {site_id} stays above {pressure_threshold:.0%} cpu: no movable unit fits elsewhere")
    except (OffloadImpossible, PlacementFailed):
        inv.rollback(inv_state)
        addresses.rollback(addr_state)
        plan.assignments, plan.state = plan_state
        raise
    return moved


# -- snapshot restore -----------------------------------------------------------

def restore_plan(snap: Snapshot, h: Hierarchy, inv: Inventory,
                 addresses: AllocationLedger, current: PlacementPlan | None = None) -> PlacementPlan:
    """Redeploy a snapshot, keeping units on their original agents where alive.

    Anything the app still holds is released first.  Units whose original
    agent is alive (and still has room) go back there with their old address
    when it is free; the rest are placed by best fit in dataflow order.
    ``current`` is the plan presently deployed, used so a unit that lands on
    the same host it currently occupies keeps that address.
    """
    if inv.hierarchy is not h:
        raise ValueError("inventory was built for a different hierarchy")
    d, orig = snap.descriptor, snap.plan
    order = topological_order(d)
    inv_state, addr_state = inv.checkpoint(), addresses.checkpoint()

    held: dict[str, tuple[str, Ipv6Prefix]] = {}
    for unit in order:
        iid = instance_id(d.app_id, unit.unit_id)
        if addresses.has_unit(iid):
            held[unit.unit_id] = (addresses.unit_host(iid), addresses.unit_address(iid))
    scratch = current if current is not None else copy.deepcopy(orig)
    for unit in order:
        _unbind(scratch, unit.unit_id, inv, addresses)

    def wanted(uid: str, host: str) -> list[Ipv6Prefix]:
        out = []
        a = orig.assignments.get(uid)
        if a is not None and a.host_ref == host:
            out.append(a.address)
        if uid in held and held[uid][0] == host:
            out.append(held[uid][1])
        return out

    plan = PlacementPlan(d.app_id)
    try:
        deferred = []
        for unit in order:
            a = orig.assignments.get(unit.unit_id)
            rec = None
            if a is not None:
                try:
                    rec = h.agent(a.agent.agent)
                except LookupError:
                    rec = None
            if rec is None or not inv.is_alive(rec) or not _satisfies(unit, rec, inv) \
                    or not _fits(unit, rec, inv):
                deferred.append(unit)
                continue
            _bind(plan, unit, rec.address, inv, addresses, wanted(unit.unit_id, rec.host_ref))
        for unit in deferred:
            try:
                agent = choose_agent(unit, inv)
            except NoCandidates as exc:
                raise PlacementFailed(unit.unit_id, "NoCandidates", str(exc)) from exc
            host = h.agent(agent).host_ref
            _bind(plan, unit, agent, inv, addresses, wanted(unit.unit_id, host))
    except PlacementFailed:
        inv.rollback(inv_state)
        addresses.rollback(addr_state)
        raise
    plan.assignments = dict(sorted(plan.assignments.items()))
    plan.state = dict(sorted(plan.state.items()))
    return plan

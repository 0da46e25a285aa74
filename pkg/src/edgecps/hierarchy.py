"""Three-tier control plane: one global controller, regions, agents.

Routing is modelled as a list of hop labels through the tree; traffic between
regions always transits the global controller.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import total_ordering
from typing import Collection, Iterable, Iterator, Sequence

from .errors import (
    DanglingHostRef,
    DuplicateId,
    InvalidPattern,
    PolicyDenied,
    UnknownAddress,
    UnknownRegion,
)
from .qosmodel import CapacityLedger

WILDCARD = "*"


@total_ordering
@dataclass(frozen=True, eq=True)
class AgentAddress:
    """Path-style identity ``region/agent[/unit]``.

    ``region_id`` may be empty only for an agent that has not attached yet
    (see :func:`discover`).
    """

    region_id: str
    agent_id: str
    unit_id: str | None = None

    def __post_init__(self):
        if not self.agent_id:
            raise ValueError("agent_id must be non-empty")
        if self.unit_id is not None and not self.unit_id:
            raise ValueError("unit_id, when given, must be non-empty")
        for part in (self.region_id, self.agent_id, self.unit_id or ""):
            if "/" in part:
                raise ValueError(f"'/' not allowed in address component {part!r}")

    @property
    def sort_key(self) -> tuple:
        return (self.region_id, self.agent_id, self.unit_id is not None, self.unit_id or "")

    def __lt__(self, other):
        if not isinstance(other, AgentAddress):
            return NotImplemented
        return self.sort_key < other.sort_key

    @property
    def agent(self) -> "AgentAddress":
        """This address with the unit component dropped."""
        return AgentAddress(self.region_id, self.agent_id) if self.unit_id else self

    def with_unit(self, unit_id: str) -> "AgentAddress":
        return AgentAddress(self.region_id, self.agent_id, unit_id)

    def __str__(self) -> str:
        parts = [self.region_id, self.agent_id] + ([self.unit_id] if self.unit_id else [])
        return "/".join(parts)

    @classmethod
    def parse(cls, text: str) -> "AgentAddress":
        parts = text.split("/")
        if len(parts) not in (2, 3):
            raise ValueError(f"expected region/agent[/unit], got {text!r}")
        return cls(*parts)


@dataclass
class AgentRecord:
    address: AgentAddress
    host_ref: str
    capabilities: dict[str, str] = field(default_factory=dict)
    units: set[str] = field(default_factory=set)


@dataclass
class RegionNode:
    region_id: str
    agents: dict[str, AgentRecord] = field(default_factory=dict)
    capacity_ledger: CapacityLedger | None = None


class Level(str, Enum):
    AGENT = "agent"
    REGIONAL = "regional"
    GLOBAL = "global"


class Verdict(str, Enum):
    ALLOW = "allow"
    DENY = "deny"


def _check_pattern(pattern: str) -> tuple[str, str]:
    parts = pattern.split("/")
    if len(parts) == 1:
        parts.append(WILDCARD)
    if len(parts) != 2 or any(not p for p in parts):
        raise InvalidPattern(f"pattern must be 'region[/agent]', got {pattern!r}")
    for p in parts:
        if WILDCARD in p and p != WILDCARD:
            raise InvalidPattern(f"partial wildcards are not supported: {pattern!r}")
    return parts[0], parts[1]


def _field_match(pat: str, value: str) -> bool:
    return pat == WILDCARD or pat == value


@dataclass(frozen=True)
class CommRule:
    """``src -> dst`` match with a verdict; patterns are ``region/agent``, ``*`` per field."""

    src: str
    dst: str
    verdict: Verdict

    def __post_init__(self):
        _check_pattern(self.src)
        _check_pattern(self.dst)
        object.__setattr__(self, "verdict", Verdict(self.verdict))

    def matches(self, src: AgentAddress, dst: AgentAddress) -> bool:
        sr, sa = _check_pattern(self.src)
        dr, da = _check_pattern(self.dst)
        return (_field_match(sr, src.region_id) and _field_match(sa, src.agent_id)
                and _field_match(dr, dst.region_id) and _field_match(da, dst.agent_id))


@dataclass(frozen=True)
class CommPolicy:
    level: Level
    rules: tuple[CommRule, ...] = ()
    default_verdict: Verdict = Verdict.ALLOW

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        object.__setattr__(self, "default_verdict", Verdict(self.default_verdict))
        object.__setattr__(self, "rules", tuple(self.rules))


def traversed_levels(src: AgentAddress, dst: AgentAddress) -> tuple[Level, ...]:
    if src.region_id != dst.region_id:
        return (Level.AGENT, Level.REGIONAL, Level.GLOBAL)
    if src.agent_id != dst.agent_id:
        return (Level.AGENT, Level.REGIONAL)
    return (Level.AGENT,)


def check_comm_policy(src: AgentAddress, dst: AgentAddress,
                      policies: Sequence[CommPolicy]) -> Verdict:
    """Allow only if every level on the route allows.

    Within a level, rules of that level's policies are tried in list order
    and the first match decides.  Without a match the level falls back to its
    default, which is deny if any policy at that level defaults to deny.
    """
    for level in traversed_levels(src, dst):
        at_level = [p for p in policies if p.level == level]
        decided = None
        for policy in at_level:
            for rule in policy.rules:
                if rule.matches(src, dst):
                    decided = rule.verdict
                    break
            if decided is not None:
                break
        if decided is None:
            decided = (Verdict.DENY if any(p.default_verdict == Verdict.DENY for p in at_level)
                       else Verdict.ALLOW)
        if decided == Verdict.DENY:
            return Verdict.DENY
    return Verdict.ALLOW


# -- configuration and construction -----------------------------------------

@dataclass
class AgentConfig:
    agent_id: str
    host_ref: str
    capabilities: dict[str, str] = field(default_factory=dict)


@dataclass
class RegionConfig:
    region_id: str
    agents: list[AgentConfig] = field(default_factory=list)


@dataclass
class HierarchyConfig:
    """Input to :func:`build_hierarchy`.

    ``hosts`` lists the simulated hosts agents may run on; ``None`` skips the
    host reference check.
    """

    global_id: str = "global"
    regions: list[RegionConfig] = field(default_factory=list)
    policies: list[CommPolicy] = field(default_factory=list)
    hosts: Collection[str] | None = None


@dataclass
class Hierarchy:
    global_id: str
    regions: dict[str, RegionNode] = field(default_factory=dict)
    policies: list[CommPolicy] = field(default_factory=list)
    hosts: frozenset[str] | None = None

    def agent(self, address: AgentAddress) -> AgentRecord:
        region = self.regions.get(address.region_id)
        rec = region.agents.get(address.agent_id) if region else None
        if rec is None:
            raise UnknownAddress(str(address))
        return rec

    def iter_agents(self) -> Iterator[AgentRecord]:
        for rid in sorted(self.regions):
            region = self.regions[rid]
            for aid in sorted(region.agents):
                yield region.agents[aid]

    def agent_count(self) -> int:
        return sum(len(r.agents) for r in self.regions.values())

    def to_dict(self) -> dict:
        return {
            "global": self.global_id,
            "regions": {
                rid: {
                    aid: {
                        "host": rec.host_ref,
                        "capabilities": dict(sorted(rec.capabilities.items())),
                        "units": sorted(rec.units),
                    }
                    for aid, rec in sorted(region.agents.items())
                }
                for rid, region in sorted(self.regions.items())
            },
            "policies": [
                {
                    "level": p.level.value,
                    "default": p.default_verdict.value,
                    "rules": [[r.src, r.dst, r.verdict.value] for r in p.rules],
                }
                for p in self.policies
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def _attach(h: Hierarchy, region_id: str, agent_id: str, host_ref: str,
            capabilities: dict[str, str]) -> AgentRecord:
    region = h.regions[region_id]
    if agent_id in region.agents:
        raise DuplicateId(f"agent {agent_id!r} already in region {region_id!r}")
    if h.hosts is not None and host_ref not in h.hosts:
        raise DanglingHostRef(f"agent {region_id}/{agent_id} references unknown host {host_ref!r}")
    rec = AgentRecord(AgentAddress(region_id, agent_id), host_ref, dict(capabilities))
    region.agents[agent_id] = rec
    return rec


def build_hierarchy(config: HierarchyConfig) -> Hierarchy:
    hosts = frozenset(config.hosts) if config.hosts is not None else None
    h = Hierarchy(config.global_id, {}, list(config.policies), hosts)
    for rc in config.regions:
        if not rc.region_id:
            raise ValueError("region_id must be non-empty")
        if rc.region_id in h.regions or rc.region_id == config.global_id:
            raise DuplicateId(f"region {rc.region_id!r} declared twice")
        h.regions[rc.region_id] = RegionNode(rc.region_id)
        for ac in rc.agents:
            _attach(h, rc.region_id, ac.agent_id, ac.host_ref, ac.capabilities)
    return h


@dataclass(frozen=True)
class AttachmentResult:
    address: AgentAddress
    chose_region: bool


def discover(agent: AgentRecord, h: Hierarchy) -> AttachmentResult:
    """Attach a newly discovered agent.

    An agent without a region joins the least-loaded region; ties go to the
    lexicographically smallest region id.
    """
    rid = agent.address.region_id
    chose = not rid
    if chose:
        if not h.regions:
            raise UnknownRegion("no regions to attach to")
        rid = min(h.regions, key=lambda r: (len(h.regions[r].agents), r))
    elif rid not in h.regions:
        raise UnknownRegion(rid)
    rec = _attach(h, rid, agent.address.agent_id, agent.host_ref, agent.capabilities)
    rec.units = set(agent.units)
    return AttachmentResult(rec.address, chose)


def route(src: AgentAddress, dst: AgentAddress, h: Hierarchy) -> list[str]:
    """Hop labels from ``src`` up to the lowest common controller and down to ``dst``."""
    src, dst = src.agent, dst.agent
    h.agent(src)
    h.agent(dst)
    if check_comm_policy(src, dst, h.policies) == Verdict.DENY:
        raise PolicyDenied(f"{src} -> {dst}")
    if src == dst:
        return [src.agent_id]
    if src.region_id == dst.region_id:
        return [src.agent_id, src.region_id, dst.agent_id]
    return [src.agent_id, src.region_id, h.global_id, dst.region_id, dst.agent_id]


def hierarchy_config_from_agents(agents: Iterable[tuple[str, str, str, dict[str, str]]],
                                 global_id: str = "global",
                                 hosts: Collection[str] | None = None) -> HierarchyConfig:
    """Group flat ``(region, agent, host, capabilities)`` tuples into a config."""
    regions: dict[str, RegionConfig] = {}
    for region_id, agent_id, host_ref, caps in agents:
        regions.setdefault(region_id, RegionConfig(region_id)).agents.append(
            AgentConfig(agent_id, host_ref, dict(caps)))
    return HierarchyConfig(global_id, list(regions.values()), [], hosts)

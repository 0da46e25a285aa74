"""Hierarchical IPv6 allocation: one /56 per site, /64 per host, /128 per unit.

Children are handed out sequentially from a per-parent counter.  Released
slots are remembered but only handed out again once the counter has run off
the end of the parent prefix; the lowest released slot goes first.
"""

from __future__ import annotations

import copy
import heapq
import ipaddress
from dataclasses import dataclass
from typing import Iterator

from .errors import (
    AddressExhausted,
    DuplicateHost,
    DuplicateSite,
    DuplicateUnit,
    PoolExhausted,
    SiteExhausted,
    UnknownHost,
    UnknownId,
    UnknownSite,
)

SITE_LENGTH = 56
HOST_LENGTH = 64
UNIT_LENGTH = 128
DEFAULT_ROOT = "2001:db8::/48"

_ALL_ONES = (1 << 128) - 1


@dataclass(frozen=True, order=True)
class Ipv6Prefix:
    """An IPv6 network prefix held as a 128-bit integer plus a length."""

    bits: int
    length: int

    def __post_init__(self):
        if not 0 <= self.length <= 128:
            raise ValueError(f"prefix length out of range: {self.length}")
        if not 0 <= self.bits <= _ALL_ONES:
            raise ValueError("prefix bits must fit in 128 bits")
        if self.bits & ~self.mask & _ALL_ONES:
            raise ValueError(f"host bits set beyond /{self.length}")

    @property
    def mask(self) -> int:
        return (_ALL_ONES << (128 - self.length)) & _ALL_ONES

    @classmethod
    def parse(cls, text: str) -> "Ipv6Prefix":
        """Parse ``addr/len``; a bare address is taken as a /128."""
        try:
            net = ipaddress.IPv6Network(text.strip(), strict=True)
        except ValueError as exc:
            raise ValueError(f"invalid IPv6 prefix {text!r}: {exc}") from None
        return cls(int(net.network_address), net.prefixlen)

    def __str__(self) -> str:
        return str(ipaddress.IPv6Network((self.bits, self.length)))

    def contains(self, other: "Ipv6Prefix") -> bool:
        return other.length >= self.length and (other.bits & self.mask) == self.bits

    def child(self, index: int, length: int) -> "Ipv6Prefix":
        """The ``index``-th sub-prefix of size ``/length``."""
        if length < self.length:
            raise ValueError("child prefix cannot be shorter than its parent")
        if not 0 <= index < self.child_count(length):
            raise ValueError(f"child index {index} out of range for /{length}")
        return Ipv6Prefix(self.bits | (index << (128 - length)), length)

    def child_count(self, length: int) -> int:
        return 1 << (length - self.length)


def _level_capacity(parent: Ipv6Prefix, length: int) -> int:
    return parent.child_count(length)


class AllocationLedger:
    """Site, host and unit allocations carved out of one root pool."""

    def __init__(self, root: Ipv6Prefix | str = DEFAULT_ROOT):
        if isinstance(root, str):
            root = Ipv6Prefix.parse(root)
        if root.length > SITE_LENGTH:
            raise ValueError(f"root pool /{root.length} is smaller than a site /56")
        self.root = root
        # id -> (parent id, prefix, slot index)
        self._sites: dict[str, tuple[None, Ipv6Prefix, int]] = {}
        self._hosts: dict[str, tuple[str, Ipv6Prefix, int]] = {}
        self._units: dict[str, tuple[str, Ipv6Prefix, int]] = {}
        self._host_tags: dict[str, str] = {}
        self._next: dict[tuple, int] = {}
        self._released: dict[tuple, list[int]] = {}
        self._in_use: dict[tuple, set[int]] = {}

    # -- views ---------------------------------------------------------------

    @property
    def site_allocations(self) -> dict[str, Ipv6Prefix]:
        return {k: v[1] for k, v in self._sites.items()}

    @property
    def host_allocations(self) -> dict[str, Ipv6Prefix]:
        return {k: v[1] for k, v in self._hosts.items()}

    @property
    def unit_allocations(self) -> dict[str, Ipv6Prefix]:
        return {k: v[1] for k, v in self._units.items()}

    def site_prefix(self, site_id: str) -> Ipv6Prefix:
        try:
            return self._sites[site_id][1]
        except KeyError:
            raise UnknownSite(site_id) from None

    def host_prefix(self, host_id: str) -> Ipv6Prefix:
        try:
            return self._hosts[host_id][1]
        except KeyError:
            raise UnknownHost(host_id) from None

    def host_address(self, host_id: str) -> Ipv6Prefix:
        """The reserved ::0 identity of a host inside its own /64."""
        return self.host_prefix(host_id).child(0, UNIT_LENGTH)

    def host_site(self, host_id: str) -> str:
        try:
            return self._hosts[host_id][0]
        except KeyError:
            raise UnknownHost(host_id) from None

    def host_tag(self, host_id: str) -> str:
        self.host_prefix(host_id)
        return self._host_tags.get(host_id, "compute")

    def unit_address(self, unit_instance_id: str) -> Ipv6Prefix:
        try:
            return self._units[unit_instance_id][1]
        except KeyError:
            raise UnknownId(unit_instance_id) from None

    def unit_host(self, unit_instance_id: str) -> str:
        try:
            return self._units[unit_instance_id][0]
        except KeyError:
            raise UnknownId(unit_instance_id) from None

    def has_unit(self, unit_instance_id: str) -> bool:
        return unit_instance_id in self._units

    # -- slot bookkeeping ----------------------------------------------------

    def _take_slot(self, key: tuple, capacity: int, first: int) -> int | None:
        nxt = self._next.get(key, first)
        if nxt < capacity:
            self._next[key] = nxt + 1
            slot = nxt
        else:
            heap = self._released.get(key)
            if not heap:
                return None
            slot = heapq.heappop(heap)
        self._in_use.setdefault(key, set()).add(slot)
        return slot

    def _free_slot(self, key: tuple, slot: int) -> None:
        self._in_use[key].discard(slot)
        heapq.heappush(self._released.setdefault(key, []), slot)

    def _claim_slot(self, key: tuple, slot: int, first: int) -> bool:
        used = self._in_use.setdefault(key, set())
        if slot in used:
            return False
        nxt = self._next.get(key, first)
        if slot >= nxt:
            # claiming ahead of the counter: skipped slots become reusable later
            heap = self._released.setdefault(key, [])
            for skipped in range(nxt, slot):
                heapq.heappush(heap, skipped)
            self._next[key] = slot + 1
        else:
            heap = self._released.get(key, [])
            if slot in heap:
                heap.remove(slot)
                heapq.heapify(heap)
        used.add(slot)
        return True

    # -- allocation ----------------------------------------------------------

    def allocate_site(self, site_id: str) -> Ipv6Prefix:
        if site_id in self._sites:
            raise DuplicateSite(site_id)
        slot = self._take_slot(("root",), _level_capacity(self.root, SITE_LENGTH), 0)
        if slot is None:
            raise PoolExhausted(f"no free /56 left in {self.root}")
        prefix = self.root.child(slot, SITE_LENGTH)
        self._sites[site_id] = (None, prefix, slot)
        return prefix

    def allocate_host_prefix(self, site_id: str, host_id: str, tag: str = "compute") -> Ipv6Prefix:
        """Assign the next /64 of ``site_id`` to ``host_id``.

        ``tag`` records what sits behind the /64 (compute host, IoT gateway,
        directly addressed device); every kind is drawn from the same pool.
        """
        site = self.site_prefix(site_id)
        if host_id in self._hosts:
            raise DuplicateHost(host_id)
        slot = self._take_slot(("site", site_id), _level_capacity(site, HOST_LENGTH), 0)
        if slot is None:
            raise SiteExhausted(f"site {site_id} ({site}) has no free /64")
        prefix = site.child(slot, HOST_LENGTH)
        self._hosts[host_id] = (site_id, prefix, slot)
        self._host_tags[host_id] = tag
        return prefix

    def allocate_unit_address(self, host_id: str, unit_instance_id: str) -> Ipv6Prefix:
        host = self.host_prefix(host_id)
        if unit_instance_id in self._units:
            raise DuplicateUnit(unit_instance_id)
        slot = self._take_slot(("host", host_id), _level_capacity(host, UNIT_LENGTH), 1)
        if slot is None:
            raise AddressExhausted(f"host {host_id} ({host}) has no free /128")
        prefix = host.child(slot, UNIT_LENGTH)
        self._units[unit_instance_id] = (host_id, prefix, slot)
        return prefix

    def claim_unit_address(self, host_id: str, unit_instance_id: str, address: Ipv6Prefix) -> bool:
        """Try to bind a specific /128 (used when restoring a snapshot).

        Returns False, leaving the ledger untouched, when the address lies
        outside the host, is the reserved ::0 slot, or is held by someone else.
        """
        host = self.host_prefix(host_id)
        if unit_instance_id in self._units:
            raise DuplicateUnit(unit_instance_id)
        if address.length != UNIT_LENGTH or not host.contains(address):
            return False
        slot = address.bits & ~host.mask & _ALL_ONES
        if slot == 0 or not self._claim_slot(("host", host_id), slot, 1):
            return False
        self._units[unit_instance_id] = (host_id, address, slot)
        return True

    # -- release -------------------------------------------------------------

    def release(self, id: str, level: str | None = None) -> "AllocationLedger":
        """Drop an allocation; releasing a site or host also drops its children."""
        found = [
            lvl
            for lvl, table in (("unit", self._units), ("host", self._hosts), ("site", self._sites))
            if id in table and (level is None or level == lvl)
        ]
        if not found:
            raise UnknownId(id)
        if len(found) > 1:
            raise UnknownId(f"{id!r} is allocated at several levels ({', '.join(found)}); pass level=")
        lvl = found[0]
        if lvl == "unit":
            host_id, _, slot = self._units.pop(id)
            self._free_slot(("host", host_id), slot)
        elif lvl == "host":
            for uid in [u for u, rec in self._units.items() if rec[0] == id]:
                self.release(uid, "unit")
            site_id, _, slot = self._hosts.pop(id)
            self._host_tags.pop(id, None)
            self._free_slot(("site", site_id), slot)
            for table in (self._next, self._released, self._in_use):
                table.pop(("host", id), None)
        else:
            for hid in [h for h, rec in self._hosts.items() if rec[0] == id]:
                self.release(hid, "host")
            _, _, slot = self._sites.pop(id)
            self._free_slot(("root",), slot)
            for table in (self._next, self._released, self._in_use):
                table.pop(("site", id), None)
        return self

    # -- checkpoint / serialization -----------------------------------------

    def checkpoint(self) -> dict:
        return copy.deepcopy(self.__dict__)

    def rollback(self, state: dict) -> None:
        self.__dict__.clear()
        self.__dict__.update(copy.deepcopy(state))

    def entries(self) -> Iterator[tuple[str, str, Ipv6Prefix]]:
        rows = [("site", k, v[1]) for k, v in self._sites.items()]
        rows += [("host", k, v[1]) for k, v in self._hosts.items()]
        rows += [("unit", k, v[1]) for k, v in self._units.items()]
        rows.sort(key=lambda r: (r[2].bits, r[2].length, r[1]))
        return iter(rows)

    def dump(self) -> str:
        """Line-oriented ``<level> <id> <prefix>`` listing sorted by prefix."""
        return "".join(f"{lvl} {ident} {prefix}\n" for lvl, ident, prefix in self.entries())


def allocate_site(ledger: AllocationLedger, site_id: str) -> Ipv6Prefix:
    return ledger.allocate_site(site_id)


def allocate_host_prefix(ledger: AllocationLedger, site_id: str, host_id: str) -> Ipv6Prefix:
    return ledger.allocate_host_prefix(site_id, host_id)


def allocate_unit_address(ledger: AllocationLedger, host_id: str, unit_instance_id: str) -> Ipv6Prefix:
    return ledger.allocate_unit_address(host_id, unit_instance_id)


def release(ledger: AllocationLedger, id: str) -> AllocationLedger:
    return ledger.release(id)

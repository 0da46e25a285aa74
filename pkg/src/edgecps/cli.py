"""Command line entry point: ``run``, ``tables`` and ``scale-test``.

Exit codes: 0 success, 1 bad input, 2 placement infeasible.
"""

from __future__ import annotations

import argparse
import resource
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import simnet
from .addressing import AllocationLedger
from .appdesc import AppDescriptor, FunctionalUnit, RegistryRef, Registry, ResourceRequest, parse_descriptor, snapshot
from .errors import OffloadImpossible, ParseError, PlacementFailed, TestbedError
from .hierarchy import AgentConfig, Hierarchy, HierarchyConfig, RegionConfig, build_hierarchy
from .monitor import (
    DEFAULT_TOLERANCE_PERCENT,
    Observation,
    Scope,
    aggregate,
    format_rollups,
    format_slc_reports,
    merge_rollups,
    observations_from,
    verify_slc,
)
from .placement import (
    Inventory,
    PlacementPlan,
    UnitState,
    instance_id,
    offload,
    place_application,
    reassign_on_failure,
    restore_plan,
)
from .qosmodel import CapacityLedger, CirReservation, parse_samples, render_tables
from .simnet import SimEvent, World

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2
VERBS = ("place", "fail", "recover", "measure", "offload", "snapshot", "restore")


@dataclass(frozen=True)
class Command:
    tick: int
    verb: str
    args: tuple[str, ...]
    line: int


def parse_script(text: str, source: str = "") -> list[Command]:
    """``at <tick> <verb> <args...>`` per line; ticks must not go backwards."""
    cmds = []
    last = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        if len(words) < 3 or words[0] != "at":
            raise ParseError("expected 'at <tick> <verb> [args]'", lineno, 1, source)
        try:
            tick = int(words[1])
        except ValueError:
            raise ParseError(f"bad tick {words[1]!r}", lineno, raw.index(words[1]) + 1, source) from None
        verb, args = words[2], tuple(words[3:])
        col = raw.index(verb, raw.index(words[1]) + len(words[1])) + 1
        if verb not in VERBS:
            raise ParseError(f"unknown verb {verb!r}", lineno, col, source)
        arity = {"place": (0, 0), "fail": (1, 1), "recover": (1, 1), "measure": (0, 0),
                 "offload": (2, 2), "snapshot": (0, 0), "restore": (0, 1)}[verb]
        if not arity[0] <= len(args) <= arity[1]:
            raise ParseError(f"{verb} takes {arity[0]}..{arity[1]} arguments", lineno, col, source)
        if verb == "offload":
            try:
                float(args[1])
            except ValueError:
                raise ParseError(f"bad threshold {args[1]!r}", lineno, col, source) from None
        if tick < last:
            raise ParseError(f"tick {tick} goes backwards (previous {last})", lineno, 1, source)
        last = tick
        cmds.append(Command(tick, verb, args, lineno))
    return cmds


@dataclass
class Testbed:
    """Everything one scenario run mutates, wired together."""

    world: World
    hierarchy: Hierarchy
    inventory: Inventory
    addresses: AllocationLedger
    descriptor: AppDescriptor
    registry: Registry = field(default_factory=Registry)
    plan: PlacementPlan | None = None
    observations: list[tuple[str, str, Observation]] = field(default_factory=list)

    __test__ = False

    @classmethod
    def from_world(cls, world: World, descriptor: AppDescriptor) -> "Testbed":
        h = build_hierarchy(world.hierarchy_config())
        inv = Inventory(h, world.capacity_ledgers(), world.host_sites())
        addrs = AllocationLedger(world.pool)
        for site in world.sites:
            addrs.allocate_site(site.site_id)
        for host in world.hosts:
            if host.role != "router":
                addrs.allocate_host_prefix(host.site_id, host.host_id, tag=host.role)
        return cls(world, h, inv, addrs, descriptor)

    def log(self, kind: str, **payload) -> None:
        self.world.trace.append(SimEvent(self.world.tick, kind, tuple((k, str(v)) for k, v in payload.items())))

    # -- verbs -------------------------------------------------------------

    def place(self) -> PlacementPlan:
        self.plan = place_application(self.descriptor, self.hierarchy, self.inventory, self.addresses)
        for uid in sorted(self.plan.assignments):
            a = self.plan.assignments[uid]
            self.log("place", unit=uid, agent=a.agent.agent, address=a.address)
        return self.plan

    def _liveness(self, events: Sequence[SimEvent]) -> None:
        for ev in events:
            if ev.kind != "liveness":
                continue
            node = ev.get("node")
            if ev.get("alive") == "true":
                self.inventory.mark_alive(node)
                continue
            self.inventory.mark_dead(node)
            if self.plan is None:
                continue
            before = {u: a.agent for u, a in self.plan.assignments.items()}
            _, failed = reassign_on_failure(self.plan, node, self.descriptor, self.inventory, self.addresses)
            for uid in sorted(self.plan.assignments):
                a = self.plan.assignments[uid]
                if uid in failed:
                    self.log("unit_failed", unit=uid, host=node)
                elif a.agent != before[uid]:
                    self.log("reassign", unit=uid, agent=a.agent.agent, address=a.address)

    def advance(self, tick: int) -> None:
        while self.world.tick < tick:
            _, emitted = simnet.step(self.world)
            self._liveness(emitted)

    def fail(self, node: str) -> None:
        simnet.inject_failure(self.world, node, self.world.tick)
        self._liveness(simnet.process_due(self.world))

    def recover(self, node: str) -> None:
        simnet.inject_recovery(self.world, node, self.world.tick)
        self._liveness(simnet.process_due(self.world))

    def measure(self) -> None:
        """Sample every placed unit's host and every dataflow edge."""
        if self.plan is None:
            return
        w, tick = self.world, self.world.tick
        for uid in self.plan.placed_units():
            a = self.plan.assignments[uid]
            unit = self.descriptor.unit(uid)
            samples = []
            if unit.request.cpu_scale > 0:
                samples.append(simnet.measure_cpu(w, a.host_ref, unit.request.cpu_scale))
            if unit.request.bandwidth_kbps > 0:
                samples.append(simnet.measure_host_throughput(w, a.host_ref, unit.request.bandwidth_kbps))
            if unit.request.latency_budget_ms > 0:
                samples.append(simnet.measure_host_latency(w, a.host_ref))
            for s in samples:
                for obs in observations_from(s, tick, uid):
                    self.observations.append((uid, str(a.agent.agent), obs))
        for e in self.descriptor.edges:
            if not all(self.plan.state.get(u) == UnitState.PLACED for u in (e.producer, e.consumer)):
                continue
            src = self.plan.assignments[e.producer]
            dst = self.plan.assignments[e.consumer]
            samples = []
            try:
                if e.latency_budget_ms > 0:
                    samples.append(simnet.measure_path(w, src.host_ref, dst.host_ref))
                if e.bandwidth_kbps > 0:
                    samples.append(simnet.measure_path_throughput(w, src.host_ref, dst.host_ref, e.bandwidth_kbps))
            except TestbedError as exc:
                self.log("unreachable", edge=e.key, reason=type(exc).__name__)
                continue
            for s in samples:
                for obs in observations_from(s, tick, e.key):
                    self.observations.append((e.key, str(src.agent.agent), obs))
        self.log("measure", samples=len(self.observations))

    def do_offload(self, site: str, threshold: float) -> None:
        if self.plan is None:
            return
        try:
            moves = offload(site, threshold, self.plan, self.descriptor, self.inventory, self.addresses)
        except OffloadImpossible as exc:
            self.log("offload_impossible", site=site, reason=str(exc).replace(" ", "_"))
            return
        self.log("offload", site=site, migrations=len(moves))
        for m in moves:
            self.log("migrate", unit=m.unit_id, source=m.source.agent, target=m.target.agent, address=m.address)

    def do_snapshot(self) -> None:
        if self.plan is None:
            return
        try:
            snap = snapshot(self.plan, self.registry, self.descriptor, self.world.tick)
        except TestbedError as exc:
            self.log("snapshot_refused", reason=type(exc).__name__)
            return
        self.log("snapshot", id=snap.snapshot_id, units=len(snap.unit_images))

    def do_restore(self, snapshot_id: str | None = None) -> None:
        snap = (self.registry.snapshots.get(snapshot_id) if snapshot_id
                else self.registry.latest(self.descriptor.app_id))
        if snap is None:
            self.log("restore_skipped", reason="no_snapshot")
            return
        self.plan = restore_plan(snap, self.hierarchy, self.inventory, self.addresses, current=self.plan)
        self.log("restore", id=snap.snapshot_id, units=len(self.plan.assignments))

    def execute(self, cmd: Command) -> None:
        self.advance(cmd.tick)
        if cmd.verb == "place":
            self.place()
        elif cmd.verb == "fail":
            self.fail(cmd.args[0])
        elif cmd.verb == "recover":
            self.recover(cmd.args[0])
        elif cmd.verb == "measure":
            self.measure()
        elif cmd.verb == "offload":
            self.do_offload(cmd.args[0], float(cmd.args[1]))
        elif cmd.verb == "snapshot":
            self.do_snapshot()
        elif cmd.verb == "restore":
            self.do_restore(cmd.args[0] if cmd.args else None)

    # -- reports -----------------------------------------------------------

    def rollups(self):
        if not self.observations:
            return []
        window = (0, self.world.tick)
        per_agent = {}
        for _, agent, obs in self.observations:
            per_agent.setdefault(agent, []).append(obs)
        agent_rollups = [aggregate(obs, Scope.AGENT, agent, window) for agent, obs in sorted(per_agent.items())]
        region_rollups = []
        for region in sorted({a.split("/")[0] for a in per_agent}):
            mine = [r for r in agent_rollups if r.scope_id.split("/")[0] == region]
            region_rollups.append(merge_rollups(mine, Scope.REGION, region))
        top = merge_rollups(region_rollups, Scope.GLOBAL, self.hierarchy.global_id)
        return agent_rollups + region_rollups + [top]

    def slc_reports(self, tolerance: float):
        if self.plan is None or not self.observations:
            return []
        window = (0, self.world.tick)
        by_source = {}
        for source, _, obs in self.observations:
            by_source.setdefault(source, []).append(obs)
        reports = []
        app = self.descriptor.app_id
        for uid in self.plan.placed_units():
            unit = self.descriptor.unit(uid)
            targets = {**unit.request.__dict__, **self.descriptor.slc.get(uid, {})}
            obs = by_source.get(uid)
            if not obs:
                continue
            res = CirReservation(instance_id(app, uid), targets["bandwidth_kbps"], targets["latency_budget_ms"],
                                 targets["cpu_scale"], holder=instance_id(app, uid))
            if not (res.bandwidth_kbps or res.latency_budget_ms or res.cpu_scale):
                continue
            reports.append(verify_slc(res, aggregate(obs, Scope.AGENT, uid, window), tolerance))
        for e in self.descriptor.edges:
            obs = by_source.get(e.key)
            if not obs:
                continue
            targets = {"bandwidth_kbps": e.bandwidth_kbps, "latency_budget_ms": e.latency_budget_ms,
                       **self.descriptor.slc.get(e.key, {})}
            res = CirReservation(f"{app}/{e.key}", targets["bandwidth_kbps"], targets["latency_budget_ms"], 0.0)
            if not (res.bandwidth_kbps or res.latency_budget_ms):
                continue
            reports.append(verify_slc(res, aggregate(obs, Scope.AGENT, e.key, window), tolerance))
        return reports

    def write_outputs(self, out_dir: Path, tolerance: float) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        files = {
            "plan.tsv": self.plan.dump() if self.plan is not None else "",
            "addresses.txt": self.addresses.dump(),
            "hierarchy.json": self.hierarchy.dumps(),
            "trace.log": f"# seed {self.world.rng_seed}\n" + "".join(f"{ev}\n" for ev in self.world.trace),
            "rollups.tsv": format_rollups(self.rollups()),
            "slc.tsv": format_slc_reports(self.slc_reports(tolerance)),
        }
        for name, text in files.items():
            with open(out_dir / name, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def cmd_run(scenario_path: str, app_path: str, script_path: str | None, seed: int, out_dir: str,
            tolerance: float = DEFAULT_TOLERANCE_PERCENT) -> int:
    try:
        world = simnet.load_scenario(_read(scenario_path), scenario_path, seed)
        desc = parse_descriptor(_read(app_path), app_path)
        cmds = parse_script(_read(script_path), script_path) if script_path else []
        bed = Testbed.from_world(world, desc)
    except (OSError, TestbedError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    code = EXIT_OK
    try:
        if not any(c.verb == "place" for c in cmds):
            bed.place()
        for cmd in cmds:
            try:
                bed.execute(cmd)
            except PlacementFailed:
                raise
            except TestbedError as exc:
                print(f"error: {script_path}:{cmd.line}: {exc}", file=sys.stderr)
                return EXIT_INPUT
    except PlacementFailed as exc:
        print(f"placement failed: {exc}", file=sys.stderr)
        code = EXIT_INFEASIBLE
    bed.write_outputs(Path(out_dir), tolerance)
    return code


def cmd_tables(samples_path: str, out=None) -> int:
    out = out or sys.stdout
    try:
        samples = parse_samples(_read(samples_path), samples_path)
    except (OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out.write(render_tables(samples))
    return EXIT_OK


@dataclass
class ScaleResult:
    hierarchy: Hierarchy
    plan: PlacementPlan
    addresses: AllocationLedger
    seconds: float
    peak_rss_mb: float

    @property
    def assignments(self) -> int:
        return len(self.plan.assignments)


def scale_test(n_agents: int, n_units: int) -> ScaleResult:
    """One region, ``n_agents`` agents on a single host, ``n_units`` pinned to the first agent."""
    if n_agents < 1 or n_units < 1:
        raise ValueError("need at least one agent and one unit")
    started = time.perf_counter()
    host = "regional-host"
    width = len(str(n_agents - 1))
    agents = [AgentConfig(f"a{i:0{width}d}", host) for i in range(n_agents)]
    h = build_hierarchy(HierarchyConfig("global", [RegionConfig("r0", agents)], [], {host}))
    addrs = AllocationLedger()
    addrs.allocate_site("site0")
    addrs.allocate_host_prefix("site0", host)
    inv = Inventory(h, {host: CapacityLedger(host, 0.0, 0.0)}, {host: "site0"})
    image = RegistryRef("public", "scale/unit", "latest")
    uwidth = len(str(n_units - 1))
    pin = {"agent": agents[0].agent_id}
    desc = AppDescriptor("scale", [FunctionalUnit(f"u{i:0{uwidth}d}", image, dict(pin), ResourceRequest())
                                   for i in range(n_units)])
    plan = place_application(desc, h, inv, addrs)
    seconds = time.perf_counter() - started
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    return ScaleResult(h, plan, addrs, seconds, peak)


def cmd_scale_test(n_agents: int, n_units: int, out=None) -> int:
    out = out or sys.stdout
    try:
        result = scale_test(n_agents, n_units)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PlacementFailed as exc:
        print(f"placement failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    last = result.plan.assignments[max(result.plan.assignments)]
    out.write(f"agents\t{result.hierarchy.agent_count()}\n")
    out.write(f"units\t{result.assignments}\n")
    out.write(f"addresses\t{len(result.addresses.unit_allocations)}\n")
    out.write(f"last_address\t{last.address}\n")
    out.write(f"wall_seconds\t{result.seconds:.3f}\n")
    out.write(f"peak_rss_mb\t{result.peak_rss_mb:.1f}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgecps", description="Edge CPS testbed simulator")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario with an application and event script")
    run.add_argument("--scenario", required=True)
    run.add_argument("--app", required=True)
    run.add_argument("--script")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True)
    run.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE_PERCENT,
                     help="SLC tolerance in percent (default %(default)s)")
    tables = sub.add_parser("tables", help="rebuild the shaping/calibration tables from samples")
    tables.add_argument("--samples", required=True)
    scale = sub.add_parser("scale-test", help="time agent/unit scaling")
    scale.add_argument("--agents", type=int, required=True)
    scale.add_argument("--units", type=int, required=True)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.scenario, args.app, args.script, args.seed, args.out, args.tolerance)
    if args.command == "tables":
        return cmd_tables(args.samples)
    return cmd_scale_test(args.agents, args.units)


if __name__ == "__main__":
    sys.exit(main())

"""Rollups of observations up the hierarchy, SLC verdicts and KPI correlation."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .errors import EmptyWindow, KindMismatch, MixedUnits, NoOverlap
from .qosmodel import (
    BANDWIDTH_UNITS,
    LATENCY_UNITS,
    REFERENCE_CALIBRATION,
    CalibrationParams,
    CirReservation,
    MeasurementSample,
    exact,
    predict_simulated_score,
    round_half_away,
)

DEFAULT_TOLERANCE_PERCENT = 2.0


class Scope(str, Enum):
    AGENT = "agent"
    REGION = "region"
    GLOBAL = "global"


@dataclass(frozen=True)
class Observation:
    tick: int
    kind: str
    value: Fraction
    units: str
    source: str = ""


def observations_from(sample: MeasurementSample, tick: int, source: str = "") -> list[Observation]:
    """Flatten a table-style sample into the single value each kind is judged on.

    Bandwidth contributes the mean of send/receive, latency its average, cpu
    every score it carries.
    """
    if sample.kind == "bandwidth":
        vals = [(exact(sample.observed[0]) + exact(sample.observed[-1])) / 2]
    elif sample.kind == "latency":
        vals = [exact(sample.observed[1] if len(sample.observed) >= 3 else sample.observed[0])]
    else:
        vals = [exact(v) for v in sample.observed]
    return [Observation(tick, sample.kind, v, sample.units, source) for v in vals]


@dataclass(frozen=True)
class Aggregate:
    min: Fraction
    max: Fraction
    total: Fraction
    count: int
    units: str

    @property
    def mean(self) -> Fraction:
        return self.total / self.count

    @property
    def avg(self) -> float:
        return round_half_away(self.mean, 3)

    def merge(self, other: "Aggregate") -> "Aggregate":
        if other.units != self.units:
            raise MixedUnits(f"{self.units} vs {other.units}")
        return Aggregate(min(self.min, other.min), max(self.max, other.max),
                         self.total + other.total, self.count + other.count, self.units)


@dataclass(frozen=True)
class MetricRollup:
    scope: Scope
    scope_id: str
    window: tuple[int, int]
    aggregates: Mapping[str, Aggregate] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "scope", Scope(self.scope))


def aggregate(samples: Iterable[Observation], scope: Scope | str, scope_id: str,
              window: tuple[int, int]) -> MetricRollup:
    """Exact min/avg/max/count per kind over the ticks ``window[0]..window[1]``."""
    start, end = window
    if end < start:
        raise EmptyWindow(f"window {window} is empty")
    per_kind: dict[str, Aggregate] = {}
    for s in samples:
        if not start <= s.tick <= end:
            continue
        v = exact(s.value)
        agg = per_kind.get(s.kind)
        if agg is None:
            per_kind[s.kind] = Aggregate(v, v, v, 1, s.units)
        elif agg.units != s.units:
            raise MixedUnits(f"{s.kind}: {agg.units} vs {s.units}")
        else:
            per_kind[s.kind] = Aggregate(min(agg.min, v), max(agg.max, v), agg.total + v, agg.count + 1, agg.units)
    if not per_kind:
        raise EmptyWindow(f"no samples in window {window}")
    return MetricRollup(scope, scope_id, window, dict(sorted(per_kind.items())))


def merge_rollups(rollups: Sequence[MetricRollup], scope: Scope | str, scope_id: str) -> MetricRollup:
    """Combine lower-level rollups; the window is the span of all inputs."""
    if not rollups:
        raise EmptyWindow("nothing to merge")
    merged: dict[str, Aggregate] = {}
    for r in rollups:
        for kind, agg in r.aggregates.items():
            merged[kind] = merged[kind].merge(agg) if kind in merged else agg
    window = (min(r.window[0] for r in rollups), max(r.window[1] for r in rollups))
    return MetricRollup(scope, scope_id, window, dict(sorted(merged.items())))


# -- SLC verification ----------------------------------------------------------

class Verdict(str, Enum):
    MET = "met"
    VIOLATED = "violated"


@dataclass(frozen=True)
class DimensionResult:
    dimension: str
    committed: float
    observed: float
    error_percent: float
    verdict: Verdict
    overdelivery: bool = False

    @property
    def label(self) -> str:
        return self.verdict.value + (",overdelivery" if self.overdelivery else "")


@dataclass(frozen=True)
class SlcReport:
    reservation_id: str
    committed: CirReservation
    observed: Mapping[str, Aggregate]
    results: tuple[DimensionResult, ...]
    tolerance_percent: float

    @property
    def met(self) -> bool:
        return all(r.verdict == Verdict.MET for r in self.results)

    def verdict(self, dimension: str) -> Verdict:
        for r in self.results:
            if r.dimension == dimension:
                return r.verdict
        raise KeyError(dimension)


def _in_units(agg: Aggregate, table: Mapping[str, float]) -> Fraction:
    return agg.mean * Fraction(repr(table[agg.units.lower()]))


def _error(observed: Fraction, committed: Fraction) -> float:
    return round_half_away(100 * (observed - committed) / committed, 2) if committed else 0.0


def verify_slc(r: CirReservation, rollup: MetricRollup,
               tolerance_percent: float = DEFAULT_TOLERANCE_PERCENT,
               params: CalibrationParams = REFERENCE_CALIBRATION) -> SlcReport:
    """Judge each committed dimension present in the rollup.

    Bandwidth must reach the committed rate (less tolerance), latency must
    stay within budget (plus tolerance) and cpu must reach the score the
    calibrated slice is supposed to emulate.  Comparisons use exact means.
    """
    tol = exact(tolerance_percent) / 100
    aggs = rollup.aggregates
    results = []
    if r.bandwidth_kbps > 0 and "bandwidth" in aggs:
        committed = exact(r.bandwidth_kbps)
        seen = _in_units(aggs["bandwidth"], BANDWIDTH_UNITS)
        results.append(DimensionResult(
            "bandwidth", float(committed), float(seen), _error(seen, committed),
            Verdict.MET if seen >= committed * (1 - tol) else Verdict.VIOLATED,
            overdelivery=seen > committed * (1 + tol)))
    if r.latency_budget_ms > 0 and "latency" in aggs:
        budget = exact(r.latency_budget_ms)
        seen = _in_units(aggs["latency"], LATENCY_UNITS)
        results.append(DimensionResult(
            "latency", float(budget), float(seen), _error(seen, budget),
            Verdict.MET if seen <= budget * (1 + tol) else Verdict.VIOLATED))
    if r.cpu_scale > 0 and "cpu" in aggs:
        target = exact(predict_simulated_score(r.cpu_scale, params))
        seen = aggs["cpu"].mean
        results.append(DimensionResult(
            "cpu", float(target), float(seen), _error(seen, target),
            Verdict.MET if seen >= target * (1 - tol) else Verdict.VIOLATED))
    if not results:
        raise KindMismatch(f"rollup {rollup.scope_id} has no kind committed by {r.reservation_id}")
    return SlcReport(r.reservation_id, r, dict(aggs), tuple(results), tolerance_percent)


SLC_COLUMNS = ("reservation", "dimension", "committed", "observed", "error%", "verdict")


def format_slc_reports(reports: Iterable[SlcReport]) -> str:
    lines = ["\t".join(SLC_COLUMNS)]
    for rep in sorted(reports, key=lambda r: r.reservation_id):
        for res in rep.results:
            lines.append("\t".join([rep.reservation_id, res.dimension, repr(res.committed),
                                    repr(res.observed), f"{res.error_percent:.2f}", res.label]))
    return "\n".join(lines) + "\n"


ROLLUP_COLUMNS = ("scope", "scope_id", "kind", "units", "start", "end", "count", "min", "avg", "max")


def format_rollups(rollups: Iterable[MetricRollup]) -> str:
    order = {Scope.AGENT: 0, Scope.REGION: 1, Scope.GLOBAL: 2}
    lines = ["\t".join(ROLLUP_COLUMNS)]
    for r in sorted(rollups, key=lambda r: (order[r.scope], r.scope_id)):
        for kind, a in r.aggregates.items():
            lines.append("\t".join([r.scope.value, r.scope_id, kind, a.units, str(r.window[0]), str(r.window[1]),
                                    str(a.count), repr(float(a.min)), f"{a.avg:.3f}", repr(float(a.max))]))
    return "\n".join(lines) + "\n"


# -- correlation -------------------------------------------------------------------

@dataclass(frozen=True)
class Correlation:
    unit_id: str
    kpi: str
    metric: str
    points: int
    coefficient: float | None

    def __str__(self) -> str:
        coef = "n/a" if self.coefficient is None else f"{self.coefficient:.6f}"
        return f"{self.unit_id}\t{self.kpi}\t{self.metric}\t{self.points}\t{coef}"


Series = Mapping[int, float]


def correlate(app_kpis: Mapping[str, Mapping[str, Series]],
              infra_series: Mapping[str, Mapping[str, Series]],
              window: tuple[int, int]) -> list[Correlation]:
    """Pearson coefficient for every (unit, kpi, infrastructure metric) pair.

    Series are aligned on the ticks they share inside ``window``.  Fewer than
    two shared points, or a constant series, yields ``None`` (printed n/a).
    """
    start, end = window
    out = []
    any_overlap = False
    for unit in sorted(app_kpis):
        metrics = infra_series.get(unit, {})
        for kpi in sorted(app_kpis[unit]):
            ks = app_kpis[unit][kpi]
            for metric in sorted(metrics):
                ms = metrics[metric]
                ticks = sorted(t for t in ks if t in ms and start <= t <= end)
                if ticks:
                    any_overlap = True
                coef = None
                if len(ticks) >= 2:
                    try:
                        coef = statistics.correlation([float(ks[t]) for t in ticks], [float(ms[t]) for t in ticks])
                    except statistics.StatisticsError:
                        coef = None
                out.append(Correlation(unit, kpi, metric, len(ticks), coef))
    if not any_overlap:
        raise NoOverlap(f"no KPI and infrastructure samples share a tick in {window}")
    return out

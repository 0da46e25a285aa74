"""QoS arithmetic: CPU scale calibration, shaping error figures, CIR admission.

Quantities that must add up exactly (reservation totals, rounding of
reported percentages) are carried as :class:`~decimal.Decimal` built from the
shortest decimal repr of the input, so ``0.1 + 0.2 + 0.7`` fits in ``1.0``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import (
    DuplicateReservation,
    InsufficientBandwidth,
    InsufficientCpu,
    NonPositiveLimit,
    NonPositiveNominal,
    NonPositiveScale,
    NonPositiveScore,
    ParseError,
    UnknownReservation,
)


def dec(x) -> Decimal:
    """Exact decimal of a number as a human would have written it."""
    if isinstance(x, Decimal):
        return x
    if isinstance(x, Fraction):
        return Decimal(x.numerator) / Decimal(x.denominator)
    return Decimal(repr(x)) if isinstance(x, float) else Decimal(x)


def exact(x) -> Fraction:
    """Rational twin of :func:`dec` for comparisons that must not drift."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def round_half_away(x, places: int) -> float:
    """Round half away from zero (the convention of the measurement tables)."""
    q = Decimal(1).scaleb(-places)
    d = dec(x)
    r = abs(d).quantize(q, rounding=ROUND_HALF_UP)
    if d < 0:
        r = -r
    return float(r) + 0.0  # + 0.0 folds -0.0 into 0.0


# -- CPU calibration ---------------------------------------------------------

@dataclass(frozen=True)
class CalibrationParams:
    reference_score: float
    overhead: float = 0.0

    def __post_init__(self):
        if self.reference_score <= 0:
            raise NonPositiveScore(f"reference score must be > 0, got {self.reference_score}")
        if self.overhead < 0:
            raise ValueError(f"overhead must be >= 0, got {self.overhead}")


# Intel E7-4820 v4 reference core with the container overhead factor.
REFERENCE_CALIBRATION = CalibrationParams(reference_score=44.17, overhead=0.1140)


@dataclass(frozen=True)
class CpuProfile:
    cpu_name: str
    native_score: float
    scale: float
    simulated_score: float | None = None

    def __post_init__(self):
        if self.native_score <= 0:
            raise NonPositiveScore(self.cpu_name)
        if self.scale <= 0:
            raise NonPositiveScale(self.cpu_name)

    @classmethod
    def calibrate(cls, cpu_name: str, native_score: float,
                  params: CalibrationParams = REFERENCE_CALIBRATION,
                  simulated_score: float | None = None) -> "CpuProfile":
        return cls(cpu_name, native_score, derive_cpu_scale(native_score, params), simulated_score)


def derive_cpu_scale(native_score: float, params: CalibrationParams = REFERENCE_CALIBRATION) -> float:
    """Fraction of one reference core that reproduces ``native_score``.

    The overhead is applied multiplicatively on top of the plain score ratio.
    """
    if native_score <= 0:
        raise NonPositiveScore(f"native score must be > 0, got {native_score}")
    return native_score / params.reference_score * (1.0 + params.overhead)


def predict_simulated_score(scale: float, params: CalibrationParams = REFERENCE_CALIBRATION) -> float:
    """Score a perfectly shaped reference core yields at ``scale``; inverse of derive."""
    if scale <= 0:
        raise NonPositiveScale(f"scale must be > 0, got {scale}")
    return scale * params.reference_score / (1.0 + params.overhead)


def cpu_error_percent(simulated_score: float, native_score: float) -> float:
    if native_score <= 0:
        raise NonPositiveScore(f"native score must be > 0, got {native_score}")
    return 100.0 * (simulated_score - native_score) / native_score


# -- shaping error figures ---------------------------------------------------

def bandwidth_error_percent(limit, send, receive) -> float:
    """Deviation of the mean of send/receive rates from the configured limit."""
    if limit <= 0:
        raise NonPositiveLimit(f"bandwidth limit must be > 0, got {limit}")
    mean = (dec(send) + dec(receive)) / 2
    return round_half_away(100 * (mean - dec(limit)) / dec(limit), 1)


def latency_error_percent(nominal_added_ms, observed_avg_ms, baseline_avg_ms) -> float:
    """Shortfall of the measured added delay relative to the requested delay."""
    if nominal_added_ms <= 0:
        raise NonPositiveNominal(f"added latency must be > 0, got {nominal_added_ms}")
    nominal = dec(nominal_added_ms)
    added = dec(observed_avg_ms) - dec(baseline_avg_ms)
    return round_half_away(100 * (nominal - added) / nominal, 2)


# -- reservations and admission ----------------------------------------------

@dataclass(frozen=True)
class CirReservation:
    reservation_id: str
    bandwidth_kbps: float = 0.0
    latency_budget_ms: float = 0.0
    cpu_scale: float = 0.0
    holder: str = ""

    def __post_init__(self):
        for name in ("bandwidth_kbps", "latency_budget_ms", "cpu_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class CapacityLedger:
    """Committed-rate bookkeeping for one node (host, link or region)."""

    node_id: str
    bandwidth_capacity_kbps: float
    cpu_capacity_cores: float
    children: dict[str, CirReservation] = field(default_factory=dict)

    def __post_init__(self):
        self._bw_used = Decimal(0)
        self._cpu_used = Decimal(0)
        for r in self.children.values():
            self._bw_used += dec(r.bandwidth_kbps)
            self._cpu_used += dec(r.cpu_scale)

    @property
    def bandwidth_used(self) -> Decimal:
        return self._bw_used

    @property
    def cpu_used(self) -> Decimal:
        return self._cpu_used

    @property
    def bandwidth_headroom(self) -> Decimal:
        return dec(self.bandwidth_capacity_kbps) - self._bw_used

    @property
    def cpu_headroom(self) -> Decimal:
        return dec(self.cpu_capacity_cores) - self._cpu_used

    def admit(self, r: CirReservation) -> "CapacityLedger":
        if r.reservation_id in self.children:
            raise DuplicateReservation(r.reservation_id)
        bw, cpu = dec(r.bandwidth_kbps), dec(r.cpu_scale)
        if bw > self.bandwidth_headroom:
            raise InsufficientBandwidth(
                f"{self.node_id}: {r.reservation_id} needs {bw} kbps, {self.bandwidth_headroom} free",
                headroom=float(self.bandwidth_headroom))
        if cpu > self.cpu_headroom:
            raise InsufficientCpu(
                f"{self.node_id}: {r.reservation_id} needs {cpu} cores, {self.cpu_headroom} free",
                headroom=float(self.cpu_headroom))
        self.children[r.reservation_id] = r
        self._bw_used += bw
        self._cpu_used += cpu
        return self

    def release(self, reservation_id: str) -> "CapacityLedger":
        try:
            r = self.children.pop(reservation_id)
        except KeyError:
            raise UnknownReservation(reservation_id) from None
        self._bw_used -= dec(r.bandwidth_kbps)
        self._cpu_used -= dec(r.cpu_scale)
        return self

    def checkpoint(self) -> dict:
        return copy.deepcopy(self.__dict__)

    def rollback(self, state: dict) -> None:
        self.__dict__.clear()
        self.__dict__.update(copy.deepcopy(state))

    def __eq__(self, other):
        if not isinstance(other, CapacityLedger):
            return NotImplemented
        return (self.node_id, self.bandwidth_capacity_kbps, self.cpu_capacity_cores, self.children) == (
            other.node_id, other.bandwidth_capacity_kbps, other.cpu_capacity_cores, other.children)


def admit(ledger: CapacityLedger, r: CirReservation) -> CapacityLedger:
    return ledger.admit(r)


def release_reservation(ledger: CapacityLedger, reservation_id: str) -> CapacityLedger:
    return ledger.release(reservation_id)


# -- measurement samples -----------------------------------------------------

KINDS = ("bandwidth", "latency", "cpu")

# kbit/s per unit
BANDWIDTH_UNITS = {
    "bits/sec": 1e-3, "bps": 1e-3,
    "kbits/sec": 1.0, "kbps": 1.0,
    "mbits/sec": 1e3, "mbps": 1e3,
    "gbits/sec": 1e6, "gbps": 1e6,
}
LATENCY_UNITS = {"ms": 1.0, "us": 1e-3, "s": 1e3}
CPU_UNITS = {"score": 1.0}
_UNITS_BY_KIND = {"bandwidth": BANDWIDTH_UNITS, "latency": LATENCY_UNITS, "cpu": CPU_UNITS}


def to_kbps(value: float, units: str) -> float:
    return value * BANDWIDTH_UNITS[units.lower()]


@dataclass(frozen=True)
class MeasurementSample:
    """One table row worth of observations.

    ``observed`` holds send/receive for bandwidth, min/avg/max for latency and
    the simulated score(s) for cpu.  For cpu rows ``nominal`` is the native
    score being emulated; ``label`` carries the processor name.
    """

    kind: str
    nominal: float
    observed: tuple[float, ...]
    units: str
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sample kind {self.kind!r}")
        if not self.observed:
            raise ValueError("a sample needs at least one observed value")
        if self.units.lower() not in _UNITS_BY_KIND[self.kind]:
            raise ValueError(f"unit {self.units!r} does not fit kind {self.kind!r}")


_ARITY = {"bandwidth": 2, "latency": 3, "cpu": 1}


def parse_samples(text: str, source: str = "") -> list[MeasurementSample]:
    """Read the tab-separated ``kind nominal unit v1 v2 ...`` format.

    Blank lines and ``#`` comments are skipped.  A trailing ``label=...``
    field names the row.
    """
    samples = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = [f.strip() for f in line.split("\t")]
        label = ""
        if fields and fields[-1].startswith("label="):
            label = fields.pop()[len("label="):]
        if len(fields) < 4:
            raise ParseError("expected: kind, nominal, unit, values...", lineno, 1, source)
        kind, nominal_txt, units, *values_txt = fields
        col = raw.find(kind) + 1
        if kind not in KINDS:
            raise ParseError(f"unknown kind {kind!r}", lineno, col, source)
        if len(values_txt) < _ARITY[kind]:
            raise ParseError(f"{kind} rows need {_ARITY[kind]} observed values", lineno, col, source)
        try:
            nominal = float(nominal_txt)
            values = tuple(float(v) for v in values_txt)
        except ValueError as exc:
            raise ParseError(f"bad number: {exc}", lineno, col, source) from None
        try:
            samples.append(MeasurementSample(kind, nominal, values, units, label))
        except ValueError as exc:
            raise ParseError(str(exc), lineno, col, source) from None
    return samples


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _pct(x: float, places: int) -> str:
    return f"{x:.{places}f}%"


BANDWIDTH_COLUMNS = ("Bandwidth Limit", "Send", "Receive", "Error", "Unit")
LATENCY_COLUMNS = ("+Latency ms", "Min", "Avg", "Max", "Avg Error")
CPU_COLUMNS = ("CPU Type", "Native", "Scale", "Simulated", "Error")


def bandwidth_rows(samples: Iterable[MeasurementSample]) -> list[tuple[str, ...]]:
    rows = []
    for s in samples:
        if s.kind != "bandwidth":
            continue
        send, receive = s.observed[:2]
        err = bandwidth_error_percent(s.nominal, send, receive)
        rows.append((_num(s.nominal), _num(send), _num(receive), _pct(err, 1), s.units))
    return rows


def latency_rows(samples: Iterable[MeasurementSample]) -> list[tuple[str, ...]]:
    """Rows for the induced-latency table; the +0 row provides the baseline."""
    lat = [s for s in samples if s.kind == "latency"]
    baseline = next((s.observed[1] for s in lat if s.nominal == 0), 0.0)
    rows = []
    for s in lat:
        lo, avg, hi = s.observed[:3]
        err = 0.0 if s.nominal == 0 else latency_error_percent(s.nominal, avg, baseline)
        rows.append((_num(s.nominal), _num(lo), _num(avg), _num(hi), _pct(err, 2)))
    return rows


def cpu_rows(samples: Iterable[MeasurementSample],
             params: CalibrationParams = REFERENCE_CALIBRATION) -> list[tuple[str, ...]]:
    rows = []
    for s in samples:
        if s.kind != "cpu":
            continue
        simulated = s.observed[0]
        scale = round_half_away(derive_cpu_scale(s.nominal, params), 4)
        err = round_half_away(cpu_error_percent(simulated, s.nominal), 1)
        rows.append((s.label, f"{s.nominal:.2f}", f"{scale:.4f}", f"{simulated:.2f}", _pct(err, 1)))
    return rows


def format_table(title: str, columns: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    out = [f"# {title}", "\t".join(columns)]
    out.extend("\t".join(r) for r in rows)
    return "\n".join(out) + "\n"


def render_tables(samples: Sequence[MeasurementSample],
                  params: CalibrationParams = REFERENCE_CALIBRATION) -> str:
    """All three reports, separated by a blank line, in fixed column order."""
    return "\n".join([
        format_table("bandwidth", BANDWIDTH_COLUMNS, bandwidth_rows(samples)),
        format_table("latency", LATENCY_COLUMNS, latency_rows(samples)),
        format_table("cpu", CPU_COLUMNS, cpu_rows(samples, params)),
    ])

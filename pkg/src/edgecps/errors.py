"""Exception hierarchy shared by every edgecps module."""

from __future__ import annotations


class TestbedError(Exception):
    """Root of all errors raised by edgecps."""

    __test__ = False  # keep pytest from collecting this as a test class


# -- hierarchy ---------------------------------------------------------------

class DuplicateId(TestbedError):
    pass


class DanglingHostRef(TestbedError):
    pass


class UnknownRegion(TestbedError, LookupError):
    pass


class UnknownAddress(TestbedError, LookupError):
    pass


class PolicyDenied(TestbedError):
    pass


class InvalidPattern(TestbedError, ValueError):
    pass


# -- addressing --------------------------------------------------------------

class PoolExhausted(TestbedError):
    pass


class SiteExhausted(TestbedError):
    pass


class AddressExhausted(TestbedError):
    pass


class DuplicateSite(TestbedError):
    pass


class DuplicateHost(TestbedError):
    pass


class DuplicateUnit(TestbedError):
    pass


class UnknownSite(TestbedError, LookupError):
    pass


class UnknownHost(TestbedError, LookupError):
    pass


class UnknownId(TestbedError, LookupError):
    pass


# -- qosmodel ----------------------------------------------------------------

class NonPositiveScore(TestbedError, ValueError):
    pass


class NonPositiveScale(TestbedError, ValueError):
    pass


class NonPositiveLimit(TestbedError, ValueError):
    pass


class NonPositiveNominal(TestbedError, ValueError):
    pass


class AdmissionRejected(TestbedError):
    """A reservation did not fit; ``headroom`` is what was left."""

    dimension = ""

    def __init__(self, message: str, headroom: float):
        super().__init__(message)
        self.headroom = headroom


class InsufficientBandwidth(AdmissionRejected):
    dimension = "bandwidth"


class InsufficientCpu(AdmissionRejected):
    dimension = "cpu"


class DuplicateReservation(TestbedError):
    pass


class UnknownReservation(TestbedError, LookupError):
    pass


# -- parsing (descriptor, scenario, samples, script) -------------------------

class ParseError(TestbedError, ValueError):
    """Input text could not be parsed; carries 1-based line/column."""

    def __init__(self, message: str, line: int = 0, column: int = 0, source: str = ""):
        self.reason = message
        self.line = line
        self.column = column
        self.source = source
        where = source or "<input>"
        if line:
            where += f":{line}"
            if column:
                where += f":{column}"
        super().__init__(f"{where}: {message}")


class UnknownUnitInEdge(ParseError):
    pass


class CyclicDataflow(ParseError):
    pass


class DuplicateUnitId(ParseError):
    pass


class DanglingEndpoint(ParseError):
    pass


class DuplicateNodeId(ParseError):
    pass


# -- appdesc / placement -----------------------------------------------------

class InactivePlan(TestbedError):
    pass


class NoCandidates(TestbedError):
    pass


class PlacementFailed(TestbedError):
    def __init__(self, unit_id: str, reason: str, detail: str = ""):
        msg = f"cannot place unit {unit_id!r}: {reason}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.unit_id = unit_id
        self.reason = reason


class OffloadImpossible(TestbedError):
    pass


# -- simnet ------------------------------------------------------------------

class UnknownNode(TestbedError, LookupError):
    pass


class UnknownLink(TestbedError, LookupError):
    pass


class PastTick(TestbedError, ValueError):
    pass


class Unreachable(TestbedError):
    pass


# -- monitor -----------------------------------------------------------------

class EmptyWindow(TestbedError):
    pass


class MixedUnits(TestbedError, ValueError):
    pass


class KindMismatch(TestbedError, ValueError):
    pass


class NoOverlap(TestbedError):
    pass

from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgecps import qosmodel
from edgecps.errors import (
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
from edgecps.qosmodel import (
    REFERENCE_CALIBRATION,
    CalibrationParams,
    CapacityLedger,
    CirReservation,
    CpuProfile,
    bandwidth_error_percent,
    cpu_error_percent,
    derive_cpu_scale,
    latency_error_percent,
    parse_samples,
    predict_simulated_score,
    render_tables,
)


def test_reference_core_scale():
    assert derive_cpu_scale(44.17) == pytest.approx(1.1140, abs=1e-12)
    assert derive_cpu_scale(44.17, CalibrationParams(44.17, 0)) == 1.0


def test_cortex_a57_scale():
    assert abs(derive_cpu_scale(19.73) - 0.4976) <= 0.0005


def test_scale_rejects_non_positive():
    with pytest.raises(NonPositiveScore):
        derive_cpu_scale(0)
    with pytest.raises(NonPositiveScale):
        predict_simulated_score(-1)


def test_predict_inverts_derive():
    assert predict_simulated_score(1.1140) == pytest.approx(44.17, abs=1e-9)
    assert abs(predict_simulated_score(0.4976) - 19.73) <= 0.01
    assert abs(predict_simulated_score(0.0802) - 3.18) <= 0.01


@given(st.floats(min_value=1e-3, max_value=1e4, allow_nan=False))
def test_derive_predict_round_trip(native):
    back = predict_simulated_score(derive_cpu_scale(native))
    assert abs(back - native) <= 1e-9 * native


def test_cpu_error_examples():
    assert round(cpu_error_percent(42.70, 44.17), 1) == -3.3
    assert round(cpu_error_percent(20.34, 19.73), 1) == 3.1
    assert cpu_error_percent(5.0, 5.0) == 0
    with pytest.raises(NonPositiveScore):
        cpu_error_percent(1.0, 0)


def test_cpu_profile_calibrate():
    p = CpuProfile.calibrate("ARM Cortex-A53", 3.18)
    assert abs(p.scale - 0.0802) <= 0.0005


def test_bandwidth_error_examples():
    assert bandwidth_error_percent(10, 84.7, 14.3) == 395.0
    assert bandwidth_error_percent(100, 99.6, 99.3) == -0.6
    assert bandwidth_error_percent(7, 7, 7) == 0.0
    with pytest.raises(NonPositiveLimit):
        bandwidth_error_percent(0, 1, 1)


def test_bandwidth_error_rounds_half_away_from_zero():
    # mean 10.005 over limit 10 is exactly 0.05 %
    assert bandwidth_error_percent(10, 10.01, 10.0) == 0.1
    assert bandwidth_error_percent(10, 9.99, 10.0) == -0.1


def test_latency_error_examples():
    assert latency_error_percent(1, 1.117, 0.083) == -3.40
    assert latency_error_percent(10, 10.116, 0.083) == -0.33
    assert latency_error_percent(5, 5.25, 0.25) == 0.0
    with pytest.raises(NonPositiveNominal):
        latency_error_percent(0, 0.083, 0.083)


def test_admit_exact_fit():
    led = CapacityLedger("h", 1000, 1)
    qosmodel.admit(led, CirReservation("r", bandwidth_kbps=1000))
    assert led.bandwidth_headroom == 0


def test_admit_rejects_with_bandwidth_headroom():
    led = CapacityLedger("h", 1000, 1)
    led.admit(CirReservation("a", bandwidth_kbps=900))
    with pytest.raises(InsufficientBandwidth) as info:
        led.admit(CirReservation("b", bandwidth_kbps=200))
    assert info.value.headroom == 100
    assert info.value.dimension == "bandwidth"
    assert "b" not in led.children


def test_admit_rejects_third_cpu_slice():
    led = CapacityLedger("h", 0, 1.0)
    led.admit(CirReservation("a57", cpu_scale=0.4976))
    led.admit(CirReservation("xgene", cpu_scale=0.4548))
    with pytest.raises(InsufficientCpu) as info:
        led.admit(CirReservation("a53", cpu_scale=0.0802))
    assert info.value.headroom == pytest.approx(0.0476, abs=1e-12)


def test_duplicate_reservation():
    led = CapacityLedger("h", 10, 1)
    led.admit(CirReservation("a", 1))
    with pytest.raises(DuplicateReservation):
        led.admit(CirReservation("a", 1))


def test_admit_release_round_trip():
    led = CapacityLedger("h", 1000, 2)
    original = CapacityLedger("h", 1000, 2)
    led.admit(CirReservation("a", 300, 5, 0.5))
    qosmodel.release_reservation(led, "a")
    assert led == original
    assert led.bandwidth_headroom == 1000 and led.cpu_headroom == 2


def test_release_unknown():
    with pytest.raises(UnknownReservation):
        CapacityLedger("h", 1, 1).release("nope")


def test_readmit_after_release():
    led = CapacityLedger("h", 1000, 1)
    a = CirReservation("A", 600, cpu_scale=0.6)
    led.admit(a)
    led.admit(CirReservation("B", 400, cpu_scale=0.4))
    led.release("A")
    led.admit(a)
    assert led.bandwidth_headroom == 0 and led.cpu_headroom == 0


def test_reservation_rejects_negative():
    with pytest.raises(ValueError):
        CirReservation("x", bandwidth_kbps=-1)


class ReplayLedger:
    """Independent oracle: recompute sums from the full reservation list each time."""

    def __init__(self, bw_cap, cpu_cap):
        self.bw_cap, self.cpu_cap = Fraction(str(bw_cap)), Fraction(str(cpu_cap))
        self.held: dict[str, tuple[Fraction, Fraction]] = {}

    def would_admit(self, rid, bw, cpu):
        if rid in self.held:
            return False
        bw_sum = sum((b for b, _ in self.held.values()), Fraction(0)) + Fraction(str(bw))
        cpu_sum = sum((c for _, c in self.held.values()), Fraction(0)) + Fraction(str(cpu))
        return bw_sum <= self.bw_cap and cpu_sum <= self.cpu_cap


ops = st.lists(
    st.tuples(st.sampled_from(["admit", "release"]), st.integers(0, 9),
              st.sampled_from([0, 0.1, 0.25, 0.4976, 1, 100, 333.3]),
              st.sampled_from([0, 0.0802, 0.1, 0.4548, 0.5])),
    max_size=80)


@settings(max_examples=60, deadline=None)
@given(ops)
def test_conservation_against_replay_oracle(sequence):
    led = CapacityLedger("n", 1000, 2)
    oracle = ReplayLedger(1000, 2)
    for op, k, bw, cpu in sequence:
        rid = f"r{k}"
        if op == "admit":
            expected = oracle.would_admit(rid, bw, cpu)
            try:
                led.admit(CirReservation(rid, bw, cpu_scale=cpu))
                got = True
            except (InsufficientBandwidth, InsufficientCpu, DuplicateReservation):
                got = False
            assert got == expected
            if got:
                oracle.held[rid] = (Fraction(str(bw)), Fraction(str(cpu)))
        elif rid in oracle.held:
            led.release(rid)
            del oracle.held[rid]
        assert led.bandwidth_used <= 1000 and led.cpu_used <= 2
        assert set(led.children) == set(oracle.held)


def test_parse_samples_reports_line():
    bad = "bandwidth\t10\tKbits/sec\t1\t2\nlatency\t1\tms\t1.0\n"
    with pytest.raises(ParseError) as info:
        parse_samples(bad, "s.tsv")
    assert info.value.line == 2
    assert str(info.value).startswith("s.tsv:2:")


def test_parse_samples_rejects_unknown_units():
    with pytest.raises(ParseError):
        parse_samples("bandwidth\t10\tfurlongs\t1\t2\n")


def test_empty_fixture_gives_three_empty_tables():
    out = render_tables(parse_samples(""))
    sections = out.strip().split("\n\n")
    assert [s.splitlines()[0] for s in sections] == ["# bandwidth", "# latency", "# cpu"]
    assert all(len(s.splitlines()) == 2 for s in sections)


def test_reference_calibration_constants():
    assert REFERENCE_CALIBRATION.reference_score == 44.17
    assert REFERENCE_CALIBRATION.overhead == 0.1140

import itertools
import json
from math import sqrt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvtelecom.tomography import (
    CorrelationTable,
    DetectionEvent,
    Estimate,
    EventLog,
    InsufficientSignalError,
    Proportion,
    TomographyCalibration,
    TomographyResult,
    contrast,
    correct_dark_counts,
    correct_readout,
    estimate,
    fidelity,
    readout_sensitivity,
    table_from_events,
)

from .synthetic import basis_events, dataset

REFERENCE_CONTRASTS = {"X": 0.52, "Y": 0.69, "Z": 0.86}
REFERENCE_COUNTS = {"Z": 1301, "X": 1595, "Y": 1595}


# -- events -----------------------------------------------------------------------


def test_event_validation():
    DetectionEvent(0, "D3", "middle", "signal", 0.0, 1, "X", "+")
    for bad in (dict(detector="D5"), dict(window="side"), dict(origin="pump"), dict(detector="D2", window="middle")):
        kw = dict(trial_id=0, detector="D2", window="early", origin="signal", timestamp=0.0)
        kw.update(bad)
        with pytest.raises(ValueError):
            DetectionEvent(**kw)


def test_event_csv_roundtrip(tmp_path):
    log = dataset(REFERENCE_CONTRASTS, {"Z": 20, "X": 20, "Y": 20}, np.random.default_rng(0))
    path = tmp_path / "events.csv"
    log.write_csv(path)
    back = EventLog.read_csv(path)
    assert back.to_csv() == log.to_csv()
    assert path.read_text().splitlines()[0].startswith("trial_id,detector,window,origin,timestamp,spin_outcome")


def test_event_iteration_and_counts():
    events = [DetectionEvent(1, "D2", "early", "signal", 0.1, 0), DetectionEvent(2, "D4", "middle", "dark", 0.2, 1, "X")]
    log = EventLog.from_events(events)
    assert list(log) == events
    assert log.counts() == {"D2/early/signal": 1, "D4/middle/dark": 1}


def test_d4_and_side_windows_not_analysed():
    events = [
        DetectionEvent(0, "D4", "middle", "signal", 0.0, 0, "X", "+"),
        DetectionEvent(1, "D3", "early", "signal", 0.0, 0, "X", "+"),
        DetectionEvent(2, "D3", "middle", "signal", 0.0, 0, "X", "+"),
    ]
    t = table_from_events(EventLog.from_events(events), "X")
    assert t.total == 1


# -- readout correction ------------------------------------------------------------


def test_perfect_readout_is_identity():
    p = correct_readout((70, 30), 1.0, 1.0)
    assert p.value == pytest.approx(0.7) and p.std == pytest.approx(sqrt(0.21 / 100))


def test_readout_inversion_by_hand():
    p = correct_readout(Proportion(0.9, 0.01, 100), 0.95, 0.95)
    assert p.value == pytest.approx(0.85 / 0.9, abs=1e-12)
    assert p.value == pytest.approx(0.9444, abs=1e-4)
    assert p.std == pytest.approx(0.01 / 0.9)


@pytest.mark.parametrize("f", [0.6, 0.8, 0.99])
def test_symmetric_readout_fixed_point(f):
    assert correct_readout(Proportion(0.5, 0.05, 100), f, f).value == pytest.approx(0.5)


def test_singular_readout_rejected():
    with pytest.raises(ValueError):
        correct_readout((5, 5), 0.5, 0.5)


def test_readout_clamping_flagged():
    p = correct_readout((100, 0), 0.9, 0.9)
    assert p.value == 1.0 and p.clamped


# -- dark-count correction -----------------------------------------------------------


def test_zero_dark_fraction_identity():
    t = CorrelationTable("Z", {("E", 0): 10, ("E", 1): 90, ("L", 0): 80, ("L", 1): 20})
    rows = correct_dark_counts(t, 0.0)
    assert rows["E"].value == pytest.approx(0.1) and rows["L"].value == pytest.approx(0.8)


def test_dark_counts_dilute_then_restore_contrast():
    # 900 perfectly correlated clicks plus 100 dark clicks split evenly per row
    t = CorrelationTable("Z", {("E", 0): 50, ("E", 1): 950, ("L", 0): 950, ("L", 1): 50})
    assert contrast(t).value == pytest.approx(0.9)
    rows = correct_dark_counts(t, 0.1)
    assert abs(rows["E"].value - rows["L"].value) == pytest.approx(1.0)


def test_pure_dark_counts_insufficient():
    t = CorrelationTable("X", {("+X", 0): 500, ("+X", 1): 500, ("-X", 0): 500, ("-X", 1): 500})
    with pytest.raises(InsufficientSignalError):
        correct_dark_counts(t, 0.9999)


def test_bad_dark_fraction_rejected():
    t = CorrelationTable("Z", {("E", 0): 1, ("E", 1): 1, ("L", 0): 1, ("L", 1): 1})
    with pytest.raises(ValueError):
        correct_dark_counts(t, 1.0)


# -- contrast ---------------------------------------------------------------------------


def test_contrast_reference_rows():
    t = CorrelationTable.from_probabilities("Z", (0.09, 0.95), (659, 642))
    assert contrast(t).value == pytest.approx(0.86, abs=2e-3)
    exact = CorrelationTable("Z", {("E", 0): 9, ("E", 1): 91, ("L", 0): 95, ("L", 1): 5})
    assert contrast(exact).value == pytest.approx(0.86)
    assert contrast(exact).std == pytest.approx(sqrt(0.09 * 0.91 / 100 + 0.95 * 0.05 / 100))


def test_contrast_extremes():
    perfect = CorrelationTable("Z", {("E", 0): 0, ("E", 1): 50, ("L", 0): 50, ("L", 1): 0})
    uniform = CorrelationTable("Z", {("E", 0): 25, ("E", 1): 25, ("L", 0): 25, ("L", 1): 25})
    assert contrast(perfect).value == 1.0
    assert contrast(uniform).value == 0.0


def test_contrast_empty_row_rejected():
    t = CorrelationTable("Z", {("E", 0): 3, ("E", 1): 1})
    with pytest.raises(InsufficientSignalError, match="row 'L'"):
        contrast(t)


# -- fidelity -----------------------------------------------------------------------------


def test_fidelity_reference_contrasts():
    assert fidelity(0.52, 0.69, 0.86).fidelity.value == pytest.approx(0.7675, abs=1e-12)


def test_fidelity_extremes():
    assert fidelity(1, 1, 1).fidelity.value == 1.0
    assert fidelity(0, 0, 0).fidelity.value == 0.25


def test_fidelity_error_propagation():
    r = fidelity(Estimate(0.5, 0.03), Estimate(0.6, 0.04), Estimate(0.7, 0.12))
    assert r.fidelity.std == pytest.approx(0.13 / 4)
    assert r.sigma_above_classical == pytest.approx((r.fidelity.value - 0.5) / r.fidelity.std)


def test_fidelity_rejects_out_of_range():
    with pytest.raises(ValueError):
        fidelity(1.2, 0.5, 0.5)


def test_result_json_roundtrip():
    r = fidelity(Estimate(0.5, 0.03), Estimate(0.6, 0.04), Estimate(0.7, 0.05))
    d = json.loads(r.to_json())
    assert set(d) == {"E_X", "E_Y", "E_Z", "fidelity", "sigma_above_classical", "flags"}
    assert TomographyResult.from_dict(d) == r


unit = st.floats(0, 1)


@settings(max_examples=60, deadline=None)
@given(unit, unit, unit, st.floats(0, 0.3))
def test_fidelity_monotone_and_symmetric(x, y, z, dx):
    f = fidelity(x, y, z).fidelity.value
    for p in itertools.permutations((x, y, z)):
        assert fidelity(*p).fidelity.value == pytest.approx(f, abs=1e-15)
    assert fidelity(min(x + dx, 1.0), y, z).fidelity.value >= f
    assert f == pytest.approx((1 + x + y + z) / 4, abs=1e-15)


# -- full estimator ---------------------------------------------------------------------


def test_missing_basis_gives_partial_result():
    log = basis_events("Z", (0.05, 0.95), (100, 100), np.random.default_rng(1))
    r = estimate(log, cal=TomographyCalibration(1.0, 1.0, 0.0))
    assert r.e_z is not None and r.e_x is None and r.e_y is None
    assert r.fidelity is None and "X: absent" in r.flags


def test_spin_outcome_override():
    log = basis_events("Z", (0.0, 1.0), (50, 50), np.random.default_rng(2))
    flipped = 1 - log.spin_outcome
    a = estimate(log, cal=TomographyCalibration(1.0, 1.0, 0.0)).e_z.value
    b = estimate(log, spin_outcomes=flipped, cal=TomographyCalibration(1.0, 1.0, 0.0)).e_z.value
    assert a == b == 1.0
    with pytest.raises(ValueError):
        estimate(log, spin_outcomes=flipped[:-1])


def test_reference_scale_synthetic_dataset():
    rng = np.random.default_rng(3)
    log = dataset(REFERENCE_CONTRASTS, REFERENCE_COUNTS, rng, f0=0.95, f1=0.995, dark=0.02)
    r = estimate(log, cal=TomographyCalibration(0.95, 0.995, 0.02))
    assert abs(r.fidelity.value - 0.77) < 0.03
    # statistical error only, so below the quoted uncertainty
    assert r.fidelity.std < 0.03
    assert r.sigma_above_classical > 8


def test_ideal_pipeline_fidelity_one():
    rng = np.random.default_rng(4)
    log = dataset({"X": 1.0, "Y": 1.0, "Z": 1.0}, {"Z": 10_000, "X": 10_000, "Y": 10_000}, rng, f0=0.95, f1=0.995)
    r = estimate(log, cal=TomographyCalibration(0.95, 0.995, 0.0))
    assert abs(r.fidelity.value - 1.0) < 3 * r.fidelity.std


def test_noise_only_events_give_quarter():
    rng = np.random.default_rng(5)
    log = dataset({"X": 0.0, "Y": 0.0, "Z": 0.0}, {"Z": 20_000, "X": 20_000, "Y": 20_000}, rng)
    log.origin[:] = "noise"
    r = estimate(log, cal=TomographyCalibration(1.0, 1.0, 0.0))
    assert abs(r.fidelity.value - 0.25) < 4 * r.fidelity.std


def test_estimate_deterministic():
    log = dataset(REFERENCE_CONTRASTS, REFERENCE_COUNTS, np.random.default_rng(6))
    cal = TomographyCalibration(0.95, 0.995, {"Z": 0.01, "X": 0.02, "Y": 0.02})
    assert estimate(log, cal=cal).to_json() == estimate(log, cal=cal).to_json()


def test_readout_sensitivity_grid():
    log = dataset(REFERENCE_CONTRASTS, REFERENCE_COUNTS, np.random.default_rng(7), f0=0.95, f1=0.995)
    rows = readout_sensitivity(log, TomographyCalibration(), [0.9, 0.95, 1.0], [0.99, 1.0])
    assert len(rows) == 6
    f = {(r["f0"], r["f1"]): r["fidelity"]["value"] for r in rows}
    # assuming a worse readout inflates the corrected contrasts
    assert f[(0.9, 0.99)] > f[(0.95, 0.99)] > f[(1.0, 0.99)]


@pytest.mark.parametrize("f0, f1, dark", [(0.95, 0.995, 0.0), (0.9, 0.97, 0.05), (0.99, 0.92, 0.15)])
def test_corrections_are_calibration_faithful(f0, f1, dark):
    rng = np.random.default_rng(8)
    truth = (0.2, 0.85)
    log = basis_events("Z", truth, (20_000, 20_000), rng, f0=f0, f1=f1, dark=dark)
    table = table_from_events(log, "Z")
    rows = correct_dark_counts(table, dark)
    for label, p in zip(("E", "L"), truth):
        c = correct_readout(rows[label], f0, f1)
        assert abs(c.value - p) < 3 * c.std

from dataclasses import replace
from math import pi, sqrt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvtelecom import hilbert as hb
from nvtelecom import interferometer as itf
from nvtelecom import protocol as pr
from nvtelecom.hilbert import EARLY, LATE, VAC, StateVector

from .test_hilbert import random_density

TARGET = pr.target_state()
PLUS_X = np.array([1, 1]) / sqrt(2)
PLUS_Y = np.array([1, 1j]) / sqrt(2)


def plant(delta_phi=0.0, drift=0.0, visibility=1.0, offset=0.0):
    return itf.PhasePlant(delta_phi=delta_phi, drift_rate=drift, visibility=visibility, fringe_offset=offset)


def xcfg(**kw):
    return itf.InterferometerConfig(**kw).for_basis("X")


# -- config ---------------------------------------------------------------------


def test_basis_defaults():
    assert xcfg().setpoint == pi / 4 and xcfg().drift_rate == 0.05
    y = itf.InterferometerConfig().for_basis("Y")
    assert y.setpoint == 3 * pi / 4 and y.drift_rate == 0.01
    assert itf.InterferometerConfig().measurement_time == pytest.approx(0.9)


@pytest.mark.parametrize("kw", [{"lock_duration": 1.0}, {"setpoint": 7.0}, {"visibility": 1.5}])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        itf.InterferometerConfig(**kw)


# -- phase evolution ------------------------------------------------------------


def test_zero_dt_leaves_phase():
    p = itf.evolve_phase(plant(0.3, drift=0.05), 0.0, np.random.default_rng(0))
    assert p.delta_phi == 0.3


def test_zero_drift_constant():
    p = plant(0.3, drift=0.0)
    rng = np.random.default_rng(0)
    for _ in range(10):
        itf.evolve_phase(p, 0.9, rng)
    assert p.delta_phi == 0.3


def test_drift_spread_over_free_running_interval():
    rng = np.random.default_rng(1)
    steps = []
    for _ in range(10_000):
        p = plant(0.0, drift=0.05)
        itf.evolve_phase(p, 0.9, rng)
        steps.append(p.delta_phi)
    assert np.std(steps) == pytest.approx(0.045, rel=0.05)


def test_negative_dt_rejected():
    with pytest.raises(ValueError):
        itf.evolve_phase(plant(), -1.0, np.random.default_rng(0))


# -- fringe calibration -----------------------------------------------------------


def test_noiseless_calibration_exact():
    cal = itf.calibrate_fringe(plant(visibility=1.0, offset=0.7), np.random.default_rng(0), xcfg(intensity_noise=0.0))
    assert cal.visibility == pytest.approx(1.0, abs=1e-12)
    assert cal.offset == pytest.approx(0.7, abs=1e-12)


def test_noisy_calibration_visibility():
    rng = np.random.default_rng(2)
    for _ in range(20):
        cal = itf.calibrate_fringe(plant(visibility=0.9), rng, xcfg(intensity_noise=0.01))
        assert abs(cal.visibility - 0.9) < 0.02


def test_calibration_offset_recovered():
    rng = np.random.default_rng(3)
    for _ in range(20):
        cal = itf.calibrate_fringe(plant(visibility=0.98, offset=1.234), rng, xcfg())
        assert abs(itf.wrap(cal.offset - 1.234)) < 0.02


# -- stabilization ------------------------------------------------------------------


def lock_once(pre, rng, cfg=None, visibility=0.98):
    cfg = cfg or xcfg()
    p = plant(pre, drift=cfg.drift_rate, visibility=visibility)
    ctl = itf.Controller(cfg)
    return itf.stabilize(p, ctl, rng)


def test_lock_at_setpoint():
    rng = np.random.default_rng(4)
    errs, corr = [], []
    for _ in range(2000):
        _, rep = lock_once(pi / 4, rng)
        errs.append(rep.post_phase - pi / 4)
        corr.append(rep.correction)
    # only fringe-fit and photodiode noise remain, well below the lock residual
    assert np.max(np.abs(corr)) < 0.03
    assert np.std(corr) < 0.2 * 0.05
    assert np.std(errs) == pytest.approx(0.05, rel=0.05)
    assert abs(np.mean(errs)) < 3 * 0.05 / sqrt(2000)


def test_lock_reduces_offset():
    rng = np.random.default_rng(5)
    better = 0
    n = 2000
    for _ in range(n):
        _, rep = lock_once(pi / 4 + 0.3, rng)
        better += abs(itf.wrap(rep.post_phase - pi / 4)) < abs(itf.wrap(rep.pre_phase - pi / 4))
        assert rep.verified_phase is not None
    assert better / n > 0.99


def test_lock_fails_without_fringe():
    p, rep = lock_once(1.0, np.random.default_rng(6), visibility=0.0)
    assert not rep.locked
    assert p.delta_phi == 1.0


def test_stale_calibration_triggers_recalibration():
    cfg = xcfg()
    n = sum(r.lock.recalibrated for r in itf.run_cycles(cfg, 250, np.random.default_rng(7)))
    assert n == 3  # at 0 s, 100 s and 200 s


def test_lock_advances_time_and_redraws_velocity():
    p, _ = lock_once(0.0, np.random.default_rng(8))
    assert p.time == pytest.approx(0.1)
    assert p.velocity is not None


# -- optics -----------------------------------------------------------------------


def middle_d3_spin(state, dphi):
    c = itf.outcome_amplitudes(dphi)[itf.MIDDLE_D3]
    m = state.to_density().matrix.reshape(2, 3, 2, 3)
    s = np.einsum("b,sbtc,c->st", c, m, c.conj())
    return s / np.trace(s)


def test_x_setpoint_projects_onto_plus_x():
    s = middle_d3_spin(TARGET, pi / 4)
    assert np.vdot(PLUS_X, s @ PLUS_X).real == pytest.approx(1.0, abs=1e-10)


def test_y_setpoint_projects_onto_plus_y():
    s = middle_d3_spin(TARGET, 3 * pi / 4)
    assert np.vdot(PLUS_Y, s @ PLUS_Y).real == pytest.approx(1.0, abs=1e-10)


def test_route_photon_projection_sampled():
    rng = np.random.default_rng(9)
    seen = 0
    for _ in range(200):
        r = itf.route_photon(TARGET, pi / 4, rng)
        if (r.window, r.port) == ("middle", "D3"):
            seen += 1
            assert np.vdot(PLUS_X, r.spin.matrix @ PLUS_X).real == pytest.approx(1.0, abs=1e-10)
    assert seen > 0


def test_balanced_input_middle_probability_half():
    p = itf.outcome_probabilities(TARGET, 0.4)
    assert p[2] + p[3] == pytest.approx(0.5, abs=1e-10)
    rng = np.random.default_rng(10)
    n = 40_000
    amps = np.broadcast_to(TARGET.amplitudes.reshape(2, 3), (n, 2, 3))
    k, _ = itf.route_batch(amps, np.full(n, 0.4), rng)
    frac = np.isin(k, [2, 3]).mean()
    assert abs(frac - 0.5) < 3 * sqrt(0.25 / n)


def test_vacuum_rejected():
    with pytest.raises(ValueError):
        itf.route_photon(hb.basis_state((2, 3), (0, VAC)), 0.0, np.random.default_rng(0))


def test_side_windows_reproduce_z_correlations():
    rng = np.random.default_rng(11)
    n = 5000
    amps = np.broadcast_to(TARGET.amplitudes.reshape(2, 3), (n, 2, 3))
    k, spin = itf.route_batch(amps, np.full(n, pi / 4), rng)
    early = np.isin(k, [0, 1])
    late = np.isin(k, [4, 5])
    assert np.allclose(np.abs(spin[early, 1]), 1)
    assert np.allclose(np.abs(spin[late, 0]), 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10))
def test_outcome_probabilities_sum_to_one(seed, dphi):
    rho = random_density(seed)
    total = itf.outcome_probabilities(rho, dphi).sum()
    assert total == pytest.approx(pr.photon_population(rho), abs=1e-10)
    occ = pr.photon_present_projectors()[1].matrix
    clicked = hb.DensityMatrix(rho.dims, occ @ rho.matrix @ occ)
    if clicked.trace > 1e-6:
        assert itf.outcome_probabilities(clicked.normalize(), dphi).sum() == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2 * pi), st.floats(0, 2 * pi))
def test_middle_d3_fringe_has_unit_visibility(theta, dphi):
    amps = np.zeros(6, dtype=complex)
    amps[EARLY] = 1 / sqrt(2)
    amps[LATE] = np.exp(1j * theta) / sqrt(2)
    p = itf.outcome_probabilities(StateVector((2, 3), amps), dphi)[itf.MIDDLE_D3]
    assert p == pytest.approx(0.25 * (1 + np.cos(dphi - pi / 4 - theta)), abs=1e-12)


@pytest.mark.parametrize("sigma", [0.0, 0.2, 0.4])
def test_phase_error_contrast_law(sigma):
    rng = np.random.default_rng(12)
    n = 200_000
    amps = np.broadcast_to(TARGET.amplitudes.reshape(2, 3), (n, 2, 3))
    k, spin = itf.route_batch(amps, pi / 4 + rng.normal(0, sigma, n), rng)
    s = spin[k == itf.MIDDLE_D3]
    x = 2 * np.real(s[:, 0].conj() * s[:, 1])
    assert abs(x.mean() - np.exp(-sigma**2 / 2)) < 3 * x.std() / sqrt(len(x)) + 1e-12


# -- phase trace ----------------------------------------------------------------------


def test_trace_times_strictly_increase():
    tr = itf.PhaseTrace()
    tr.add(0.0, 0.1, "pre-lock")
    with pytest.raises(ValueError):
        tr.add(0.0, 0.2, "post-lock")


def test_trace_csv_roundtrip(tmp_path):
    tr = itf.simulate_phase_trace(xcfg(), 20, np.random.default_rng(13))
    path = tmp_path / "trace.csv"
    tr.write_csv(path)
    back = itf.PhaseTrace.read_csv(path)
    assert back.times == tr.times and back.delta_phi == tr.delta_phi
    assert back.phase_of_cycle == tr.phase_of_cycle
    assert path.read_text().splitlines()[0] == "time,delta_phi,phase_of_cycle"


def test_cycle_accounting():
    cfg = xcfg()
    recs = list(itf.run_cycles(cfg, 5, np.random.default_rng(14), t0=10.0))
    assert [r.start for r in recs] == [10.0, 11.0, 12.0, 13.0, 14.0]
    assert cfg.cycle_period - cfg.lock_duration == cfg.measurement_time


def test_plant_replicas_independent_of_history():
    cfg = xcfg()
    a = [r.phase_after_lock for r in itf.run_cycles(cfg, 3, np.random.default_rng(15), t0=0.0)]
    b = [r.phase_after_lock for r in itf.run_cycles(cfg, 3, np.random.default_rng(15), t0=500.0)]
    assert a == b
    assert replace(cfg, setpoint_error=0.1).target == pytest.approx(pi / 4 + 0.1)

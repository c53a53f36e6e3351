"""Imbalanced interferometer readout of the time-bin qubit and its phase lock.

Optical model: the first beam splitter sends each time bin into the short or
long arm (amplitude 1/sqrt(2) each, long arm delayed by the bin separation
and phase shifted by ``delta_phi``). At the second beam splitter the long
arm picks up a fixed convention phase -pi/4 towards D3 (and its negative
towards D4). Early-via-long and late-via-short meet in the middle window, so
a middle-window D3 click projects the spin of (|1,E> + |0,L>)/sqrt(2) onto
(|0> + exp(i(delta_phi - pi/4))|1>)/sqrt(2).

Phase plant: during each free-running interval the phase drifts linearly at
a rate drawn once per cycle from N(0, drift_rate), so the spread after a
free-running time ``t`` is ``drift_rate * t``. Each cycle starts with a lock
window in which the controller reads two photodiodes on metrology light,
steers the piezo to the setpoint and leaves a residual error of std
``residual_lock_sigma``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from math import pi
from pathlib import Path
from typing import Iterator

import numpy as np

from . import hilbert as hb
from .hilbert import EARLY, LATE, DensityMatrix, StateVector

SETPOINTS = {"X": pi / 4, "Y": 3 * pi / 4}
DRIFT_RATES = {"X": 0.05, "Y": 0.01}
CONVENTION_PHASE = -pi / 4

WINDOWS = ("early", "middle", "late")
PORTS = ("D3", "D4")
OUTCOMES = tuple((w, p) for w in WINDOWS for p in PORTS)
MIDDLE_D3 = OUTCOMES.index(("middle", "D3"))


def wrap(phi):
    """Map angles to [-pi, pi)."""
    return (np.asarray(phi) + pi) % (2 * pi) - pi


@dataclass(frozen=True)
class InterferometerConfig:
    delay: float = 190e-9
    setpoint: float | None = None  # None -> basis default
    drift_rate: float | None = None  # rad/s; None -> basis default
    residual_lock_sigma: float = 0.05
    setpoint_error: float = 0.0  # static bias of the lock target, rad
    cycle_period: float = 1.0
    lock_duration: float = 0.1
    fringe_calibration_interval: float = 100.0
    visibility: float = 0.98
    fringe_offset: float = 0.0  # metrology fringe phase relative to delta_phi
    intensity_noise: float = 0.01  # per photodiode sample, fraction of full scale
    scan_points: int = 64
    lock_samples: int = 1000  # photodiode samples averaged per lock reading
    lock_iterations: int = 3
    controller_gain: float = 1.0
    min_visibility: float = 0.05

    def __post_init__(self):
        if not 0 < self.lock_duration < self.cycle_period:
            raise ValueError("need 0 < lock_duration < cycle_period")
        if self.setpoint is not None and not 0 <= self.setpoint < 2 * pi:
            raise ValueError("setpoint must lie in [0, 2*pi)")
        if not 0 <= self.visibility <= 1:
            raise ValueError("visibility must lie in [0, 1]")
        if self.drift_rate is not None and self.drift_rate < 0:
            raise ValueError("drift_rate must be >= 0")
        if self.residual_lock_sigma < 0 or self.intensity_noise < 0:
            raise ValueError("noise scales must be >= 0")
        if self.scan_points < 3 or self.lock_samples < 1 or self.lock_iterations < 1:
            raise ValueError("scan_points >= 3, lock_samples >= 1, lock_iterations >= 1")

    def for_basis(self, basis: str) -> InterferometerConfig:
        """Fill setpoint and drift rate from the basis defaults."""
        return replace(
            self,
            setpoint=SETPOINTS[basis] if self.setpoint is None else self.setpoint,
            drift_rate=DRIFT_RATES[basis] if self.drift_rate is None else self.drift_rate,
        )

    @property
    def measurement_time(self) -> float:
        return self.cycle_period - self.lock_duration

    @property
    def target(self) -> float:
        if self.setpoint is None:
            raise ValueError("setpoint unresolved; call for_basis first")
        return self.setpoint + self.setpoint_error


# -- optics ------------------------------------------------------------------


def outcome_amplitudes(delta_phi) -> np.ndarray:
    """Amplitude from each photonic level to each (window, port) outcome.

    Shape ``(..., 6, 3)`` following :data:`OUTCOMES` and (vac, E, L).
    """
    dphi = np.asarray(delta_phi, dtype=float)
    c = np.zeros(dphi.shape + (6, 3), dtype=complex)
    long_d3 = 0.5 * np.exp(1j * (dphi + CONVENTION_PHASE))
    for port, sign in ((0, 1.0), (1, -1.0)):
        c[..., 0 + port, EARLY] = 0.5  # early via short
        c[..., 2 + port, EARLY] = sign * long_d3  # early via long
        c[..., 2 + port, LATE] = 0.5  # late via short
        c[..., 4 + port, LATE] = sign * long_d3  # late via long
    return c


def outcome_probabilities(state, delta_phi: float) -> np.ndarray:
    """Probabilities of the six (window, port) outcomes for a joint state."""
    rho = state.to_density() if isinstance(state, StateVector) else state
    c = outcome_amplitudes(delta_phi)
    m = rho.matrix.reshape(2, 3, 2, 3)
    # p_o = sum_s sum_{b,b'} c_ob rho[s b, s b'] conj(c_ob')
    p = np.einsum("ob,sbsc,oc->o", c, m, c.conj()).real
    return np.clip(p, 0.0, None)


@dataclass(frozen=True)
class RoutedPhoton:
    window: str
    port: str
    spin: DensityMatrix
    probability: float


def route_photon(state, delta_phi: float, rng: np.random.Generator) -> RoutedPhoton:
    """Send the photonic part of a spin-photon state through the interferometer.

    The photon is absorbed at the detector; the returned spin state is
    conditioned on the sampled outcome.
    """
    rho = state.to_density() if isinstance(state, StateVector) else state
    if rho.dims != (hb.SPIN_DIM, hb.PHOTON_DIM):
        raise hb.DimensionError(f"expected spin x photon dims, got {rho.dims}")
    # Outcome amplitudes vanish on vacuum, so the total is the photon population.
    probs = outcome_probabilities(rho, delta_phi)
    total = probs.sum()
    if total < 1e-12:
        raise ValueError("photonic mode is in vacuum; nothing to route")
    k = int(rng.choice(6, p=probs / total))
    c = outcome_amplitudes(delta_phi)[k]
    m = rho.matrix.reshape(2, 3, 2, 3)
    spin = np.einsum("b,sbtc,c->st", c, m, c.conj())
    w, p = OUTCOMES[k]
    return RoutedPhoton(w, p, DensityMatrix((2,), spin).normalize(), float(probs[k] / total))


def route_batch(amplitudes: np.ndarray, delta_phi: np.ndarray, rng: np.random.Generator):
    """Vectorised :func:`route_photon` for pure trajectories ``(n, 2, 3)``.

    Returns ``(outcome_index, spin_amplitudes)`` with normalized ``(n, 2)``
    spin vectors.
    """
    n = amplitudes.shape[0]
    c = outcome_amplitudes(np.broadcast_to(delta_phi, (n,)))
    post = np.einsum("nob,nsb->nos", c, amplitudes)
    probs = (np.abs(post) ** 2).sum(axis=2)
    k = hb.sample_categorical(probs, rng)
    spin = post[np.arange(n), k]
    spin = spin / np.linalg.norm(spin, axis=1, keepdims=True)
    return k, spin


# -- phase plant and controller ---------------------------------------------


@dataclass
class PhasePlant:
    """Interferometer phase state; mutated in time order by one run."""

    delta_phi: float
    drift_rate: float
    time: float = 0.0
    velocity: float | None = None  # rad/s for the current free-running interval
    visibility: float = 1.0
    fringe_offset: float = 0.0

    def phase_at(self, t):
        """Phase at time(s) ``t >= self.time`` under the current drift."""
        v = 0.0 if self.velocity is None else self.velocity
        return self.delta_phi + v * (np.asarray(t) - self.time)


@dataclass(frozen=True)
class Calibration:
    visibility: float
    offset: float
    time: float


@dataclass
class Controller:
    cfg: InterferometerConfig
    calibration: Calibration | None = None
    calibrations: int = 0

    def stale(self, now: float) -> bool:
        c = self.calibration
        return c is None or now - c.time >= self.cfg.fringe_calibration_interval


@dataclass(frozen=True)
class LockReport:
    time: float
    pre_phase: float
    post_phase: float
    verified_phase: float | None
    correction: float
    recalibrated: bool
    locked: bool


def evolve_phase(plant: PhasePlant, dt: float, rng: np.random.Generator) -> PhasePlant:
    """Free-running evolution for ``dt`` seconds."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if plant.velocity is None:
        plant.velocity = float(rng.normal(0.0, plant.drift_rate)) if plant.drift_rate > 0 else 0.0
    plant.delta_phi += plant.velocity * dt
    plant.time += dt
    return plant


def photodiode_signals(plant: PhasePlant, rng: np.random.Generator, noise: float,
                       samples: int = 1, delta_phi=None):
    """Averaged PD2 and PD3 intensities, (1 +/- V cos(delta_phi - offset))/2."""
    phi = plant.delta_phi if delta_phi is None else np.asarray(delta_phi)
    fringe = plant.visibility * np.cos(phi - plant.fringe_offset)
    shape = np.shape(fringe)
    scale = noise / np.sqrt(samples)
    i2 = 0.5 * (1 + fringe) + (rng.normal(0.0, scale, shape) if noise > 0 else 0.0)
    i3 = 0.5 * (1 - fringe) + (rng.normal(0.0, scale, shape) if noise > 0 else 0.0)
    return i2, i3


def calibrate_fringe(plant: PhasePlant, rng: np.random.Generator, cfg: InterferometerConfig) -> Calibration:
    """Scan the piezo over one full fringe and fit visibility and offset.

    Scan positions are absolute phases; the plant returns to its phase
    after the scan.
    """
    theta = np.linspace(0.0, 2 * pi, cfg.scan_points, endpoint=False)
    i2, i3 = photodiode_signals(plant, rng, cfg.intensity_noise, delta_phi=theta)
    d = (i2 - i3) / (i2 + i3)
    a = np.column_stack([np.ones_like(theta), np.cos(theta), np.sin(theta)])
    (_, b, s), *_ = np.linalg.lstsq(a, d, rcond=None)
    return Calibration(float(np.hypot(b, s)), float(np.arctan2(s, b) % (2 * pi)), plant.time)


def estimate_phase(i2, i3, cal: Calibration, near: float) -> float:
    """Invert the fringe, taking the branch closest to ``near``."""
    x = np.clip((i2 - i3) / ((i2 + i3) * cal.visibility), -1.0, 1.0)
    a = np.arccos(x)
    cands = np.array([cal.offset + a, cal.offset - a])
    best = cands[np.argmin(np.abs(wrap(cands - near)))]
    return float(near + wrap(best - near))


def stabilize(plant: PhasePlant, controller: Controller, rng: np.random.Generator) -> tuple[PhasePlant, LockReport]:
    """Lock window: (re)calibrate if stale, steer to the target, verify.

    Advances the plant by ``lock_duration`` and draws the drift rate of the
    following free-running interval.
    """
    cfg = controller.cfg
    recal = controller.stale(plant.time)
    if recal:
        controller.calibration = calibrate_fringe(plant, rng, cfg)
        controller.calibrations += 1
    cal = controller.calibration
    t0, pre = plant.time, plant.delta_phi
    target = cfg.target

    if cal.visibility < cfg.min_visibility:
        report = LockReport(t0, pre, pre, None, 0.0, recal, False)
    else:
        applied = 0.0
        for _ in range(cfg.lock_iterations):
            i2, i3 = photodiode_signals(plant, rng, cfg.intensity_noise, cfg.lock_samples)
            err = float(wrap(target - estimate_phase(i2, i3, cal, target)))
            step = cfg.controller_gain * err
            plant.delta_phi += step
            applied += step
        if cfg.residual_lock_sigma > 0:
            plant.delta_phi += float(rng.normal(0.0, cfg.residual_lock_sigma))
        i2, i3 = photodiode_signals(plant, rng, cfg.intensity_noise, cfg.lock_samples)
        verified = estimate_phase(i2, i3, cal, target)
        report = LockReport(t0, pre, plant.delta_phi, verified, applied, recal, True)

    plant.time += cfg.lock_duration
    plant.velocity = float(rng.normal(0.0, plant.drift_rate)) if plant.drift_rate > 0 else 0.0
    return plant, report


def new_plant(cfg: InterferometerConfig, rng: np.random.Generator, t0: float = 0.0) -> PhasePlant:
    """Plant replica positioned just before a lock at ``t0``, as if it had
    been locked one cycle earlier."""
    plant = PhasePlant(
        delta_phi=cfg.target + float(rng.normal(0.0, cfg.residual_lock_sigma)),
        drift_rate=float(cfg.drift_rate),
        time=t0 - cfg.measurement_time,
        visibility=cfg.visibility,
        fringe_offset=cfg.fringe_offset,
    )
    return evolve_phase(plant, cfg.measurement_time, rng)


# -- cycle scheduler and phase trace ------------------------------------------


@dataclass(frozen=True)
class CycleRecord:
    index: int
    start: float  # cycle start; the lock occupies [start, start + lock_duration]
    lock: LockReport
    phase_after_lock: float
    velocity: float


@dataclass
class PhaseTrace:
    times: list = field(default_factory=list)
    delta_phi: list = field(default_factory=list)
    phase_of_cycle: list = field(default_factory=list)

    def add(self, t: float, phi: float, label: str) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError("phase trace times must be strictly increasing")
        self.times.append(t)
        self.delta_phi.append(phi)
        self.phase_of_cycle.append(label)

    def errors(self, label: str, target: float) -> np.ndarray:
        phi = np.array(self.delta_phi)
        sel = np.array(self.phase_of_cycle) == label
        return wrap(phi[sel] - target)

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "delta_phi", "phase_of_cycle"])
        for row in zip(self.times, self.delta_phi, self.phase_of_cycle):
            w.writerow([repr(float(row[0])), repr(float(row[1])), row[2]])
        return buf.getvalue()

    @classmethod
    def read_csv(cls, path) -> PhaseTrace:
        trace = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                trace.add(float(row["time"]), float(row["delta_phi"]), row["phase_of_cycle"])
        return trace


def run_cycles(cfg: InterferometerConfig, n_cycles: int, rng: np.random.Generator,
               t0: float = 0.0, trace: PhaseTrace | None = None) -> Iterator[CycleRecord]:
    """Drive a fresh plant through ``n_cycles`` lock/measure cycles.

    Each record is yielded after the lock and before the free-running
    interval, so callers can evaluate the phase at click times with
    ``phase_after_lock + velocity * (t - start - lock_duration)``.
    """
    plant = new_plant(cfg, rng, t0)
    controller = Controller(cfg)
    for k in range(n_cycles):
        start = t0 + k * cfg.cycle_period
        plant.time = start  # absorbs float accumulation
        if trace is not None:
            trace.add(start, plant.delta_phi, "pre-lock")
        plant, report = stabilize(plant, controller, rng)
        if trace is not None:
            trace.add(plant.time, plant.delta_phi, "post-lock")
        yield CycleRecord(k, start, report, plant.delta_phi, float(plant.velocity))
        evolve_phase(plant, cfg.measurement_time, rng)


def simulate_phase_trace(cfg: InterferometerConfig, n_cycles: int, rng: np.random.Generator) -> PhaseTrace:
    trace = PhaseTrace()
    for _ in run_cycles(cfg, n_cycles, rng, trace=trace):
        pass
    return trace

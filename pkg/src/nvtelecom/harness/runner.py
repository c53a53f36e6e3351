"""Scenario execution: trial generation, cycle scheduling and reporting.

Time is split into blocks of ``block_cycles`` cycles. Each block owns its
random streams, derived from ``SeedSequence([seed, scenario, basis, block])``,
and (for X/Y) its own phase-plant replica, so blocks can run on any worker
and still produce identical results. Blocks are stitched together in order
and the event stream is cut at the ``trials``-th analysed click per basis.

Per attempt exactly one of four things happens: a signal click, a noise
click, a dark click, or nothing. Attempts are independent, so the number of
attempts up to the first click is geometric and is drawn directly; clicked
signal states come from :func:`protocol.sample_clicked_amplitudes`.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import sqrt
from pathlib import Path

import numpy as np

from .. import interferometer as itf
from .. import protocol
from ..analytic import predict_experiment
from ..conversion import convert
from ..tomography import (
    BASES,
    EventLog,
    InsufficientSignalError,
    TomographyCalibration,
    TomographyResult,
    estimate,
)
from .config import SCENARIOS, ConfigError, ExperimentConfig, apply_values, config_items, numeric_path

MAX_BLOCKS = 10_000

# Spin vectors read out as "0" for each readout setting.
_S = 1 / sqrt(2)
READOUT_ZERO = {
    ("Z", "+"): np.array([1, 0], dtype=complex),
    ("X", "+"): np.array([_S, _S], dtype=complex),
    ("X", "-"): np.array([_S, -_S], dtype=complex),
    ("Y", "+"): np.array([_S, 1j * _S], dtype=complex),
    ("Y", "-"): np.array([_S, -1j * _S], dtype=complex),
}


# -- click model ---------------------------------------------------------------


@dataclass(frozen=True)
class ClickModel:
    """Per-attempt probabilities of the exclusive click categories."""

    p_signal: float
    p_noise: float
    p_dark: float
    cells: int  # detector x window cells open to dark counts

    @property
    def p_any(self) -> float:
        return self.p_signal + self.p_noise + self.p_dark


def click_model(cfg: ExperimentConfig, basis: str) -> ClickModel:
    rho = protocol.ensemble_state(cfg.protocol)
    cells = 2 if basis == "Z" else len(itf.OUTCOMES)
    if not cfg.converted:
        # Unconverted photons go straight to their own detector; no pump noise
        # and the telecom detector parameters do not apply.
        return ClickModel(protocol.photon_population(rho), 0.0, 0.0, cells)
    conv = cfg.conversion
    p_sig = protocol.photon_population(convert(rho, conv))
    p_noise = p_sig / conv.snr
    p_dark = conv.dark_count_rate * conv.window * cells
    if p_sig + p_noise + p_dark > 1:
        raise ConfigError("click probabilities per attempt exceed 1; lower eta_c, p_emit_collect or raise snr")
    return ClickModel(p_sig, p_noise, p_dark, cells)


def analysed_fraction(cfg: ExperimentConfig, basis: str) -> tuple[float, float]:
    """Expected (analysed clicks per attempt, dark share of analysed clicks).

    Z analyses every click. X/Y analyse middle-window D3 clicks: a quarter
    of signal and noise photons land there, and one of six dark cells.
    """
    m = click_model(cfg, basis)
    if basis == "Z":
        rate = m.p_any
        dark = m.p_dark
    else:
        icfg = cfg.interferometer.for_basis(basis)
        clicked = protocol.clicked_ensemble_state(cfg.protocol)
        mid = float(itf.outcome_probabilities(clicked, icfg.target)[itf.MIDDLE_D3])
        dark = m.p_dark / m.cells
        rate = m.p_signal * mid + m.p_noise / 4 + dark
    return rate, (dark / rate if rate > 0 else 0.0)


def side_window_fraction(cfg: ExperimentConfig, basis: str) -> tuple[float, float]:
    """Expected (D3 side-window clicks per attempt, dark share of them) in an
    X/Y run. Each side window receives an eighth of the photons."""
    m = click_model(cfg, basis)
    dark = 2 * m.p_dark / m.cells
    rate = (m.p_signal + m.p_noise) / 4 + dark
    return rate, (dark / rate if rate > 0 else 0.0)


def expected_dark_fractions(cfg: ExperimentConfig) -> dict[str, float]:
    """Dark share of the analysed clicks in each basis table."""
    out = {}
    z_parts = []  # (expected analysed clicks, dark share)
    for b in cfg.bases:
        rate, dark = analysed_fraction(cfg, b)
        if b == "Z":
            z_parts.append((cfg.trials, dark))
        else:
            out[b] = dark
            if cfg.analysis.side_windows_as_z:
                side_rate, side_dark = side_window_fraction(cfg, b)
                z_parts.append((cfg.trials * side_rate / rate, side_dark))
    if z_parts:
        w = sum(n for n, _ in z_parts)
        out["Z"] = sum(n * d for n, d in z_parts) / w
    return out


def tomography_calibration(cfg: ExperimentConfig) -> TomographyCalibration:
    a = cfg.analysis
    dark = a.dark_fraction if a.dark_fraction is not None else expected_dark_fractions(cfg)
    return TomographyCalibration(a.f0, a.f1, dark)


# -- one block -----------------------------------------------------------------


@dataclass
class BlockResult:
    basis: str
    block: int
    n_trials: int
    columns: dict  # EventLog columns, trial_id local to the block
    trial_of_event: np.ndarray
    exhausted_before: np.ndarray  # exhausted trials up to each event's trial
    n_exhausted: int
    analysed: np.ndarray  # bool mask over events
    trace: itf.PhaseTrace | None = None
    locks: int = 0
    calibrations: int = 0
    lock_failures: int = 0


def block_streams(cfg: ExperimentConfig, basis: str, block: int):
    ss = np.random.SeedSequence([cfg.seed, SCENARIOS.index(cfg.scenario), BASES.index(basis), block])
    trial_ss, plant_ss = ss.spawn(2)
    return np.random.default_rng(trial_ss), np.random.default_rng(plant_ss)


def block_duration(cfg: ExperimentConfig) -> float:
    return cfg.block_cycles * cfg.interferometer.cycle_period


def _draw_trials(cfg: ExperimentConfig, model: ClickModel, rng: np.random.Generator, budget: float):
    """Trials filling ``budget`` seconds of measurement time."""
    pc = cfg.protocol
    M = int(pc.max_attempts)
    mean_attempts = min(1 / model.p_any, M)
    mean_dur = pc.cr_check_duration / pc.p_cr_pass + mean_attempts * pc.attempt_duration
    chunk = int(1.1 * budget / mean_dur) + 64
    parts, total = [], 0.0
    while total < budget:
        n_cr = rng.geometric(pc.p_cr_pass, chunk)
        k = rng.geometric(model.p_any, chunk)
        u = rng.random(chunk)
        clicked = k <= M
        k = np.minimum(k, M)
        dur = n_cr * pc.cr_check_duration + k * pc.attempt_duration
        parts.append((n_cr, k, clicked, u, dur))
        total += float(dur.sum())
    n_cr, k, clicked, u, dur = (np.concatenate(c) for c in zip(*parts))
    start = np.concatenate([[0.0], np.cumsum(dur)[:-1]])
    keep = start < budget
    n_cr, k, clicked, u, start = n_cr[keep], k[keep], clicked[keep], u[keep], start[keep]
    # category of the click: 0 signal, 1 noise, 2 dark
    cut = np.cumsum([model.p_signal, model.p_noise]) / model.p_any
    cat = np.where(clicked, np.searchsorted(cut, u, side="right"), -1)
    emit = start + n_cr * pc.cr_check_duration + (k - 1) * pc.attempt_duration
    return start, emit, cat


def _sample_spins(rho_spin: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Pure spin vectors whose ensemble is ``rho_spin``."""
    w, v = np.linalg.eigh(rho_spin)
    w = np.clip(w, 0, None)
    idx = rng.choice(2, size=n, p=w / w.sum())
    return v[:, idx].T


def _read_spins(spin: np.ndarray, basis: np.ndarray, setting: np.ndarray, cfg: ExperimentConfig,
                rng: np.random.Generator) -> np.ndarray:
    """Projective spin readout followed by the readout confusion matrix."""
    ref = np.empty_like(spin)
    for (b, s), vec in READOUT_ZERO.items():
        ref[(basis == b) & (setting == s)] = vec
    p0 = np.abs(np.einsum("ns,ns->n", ref.conj(), spin)) ** 2
    true = (rng.random(len(spin)) >= p0).astype(np.int8)
    u = rng.random(len(spin))
    a = cfg.analysis
    flip = np.where(true == 0, u >= a.f0, u >= a.f1)
    return np.where(flip, 1 - true, true).astype(np.int8)


def simulate_block(cfg: ExperimentConfig, basis: str, block: int) -> BlockResult:
    """Simulate one block of a basis segment; time is relative to the
    segment start."""
    rng, plant_rng = block_streams(cfg, basis, block)
    model = click_model(cfg, basis)
    icfg = cfg.interferometer.for_basis(basis) if basis != "Z" else cfg.interferometer
    t0 = block * block_duration(cfg)
    T = icfg.cycle_period
    measure = icfg.measurement_time if basis != "Z" else T
    budget = cfg.block_cycles * measure
    start, emit, cat = _draw_trials(cfg, model, rng, budget)
    n_trials = len(start)
    exhausted = np.cumsum(cat < 0)

    ev = np.flatnonzero(cat >= 0)
    cat = cat[ev]
    n = len(ev)
    pc = cfg.protocol

    # Map measurement time onto the wall clock.
    if basis == "Z":
        wall = t0 + emit[ev]
    else:
        c = np.minimum((emit[ev] // measure).astype(int), cfg.block_cycles - 1)
        wall = t0 + c * T + icfg.lock_duration + (emit[ev] - c * measure)

    spin = np.zeros((n, 2), dtype=complex)
    outcome = np.zeros(n, dtype=int)  # index into itf.OUTCOMES, or 0/1 = early/late for Z
    rho_spin = protocol.spin_reduced_state(pc).matrix
    sig, noi, drk = cat == 0, cat == 1, cat == 2
    amps = protocol.sample_clicked_amplitudes(pc, int(sig.sum()), rng)
    nspin = _sample_spins(rho_spin, int((noi | drk).sum()), rng)
    noise_spin, dark_spin = nspin[noi[noi | drk]], nspin[drk[noi | drk]]
    trace, locks = None, []

    if basis == "Z":
        pop = np.abs(amps) ** 2
        p_early = pop[:, :, itf.EARLY].sum(1) / pop[:, :, [itf.EARLY, itf.LATE]].sum((1, 2))
        late = (rng.random(len(amps)) >= p_early).astype(int)
        chosen = amps[np.arange(len(amps)), :, np.where(late, itf.LATE, itf.EARLY)]
        spin[sig] = chosen / np.linalg.norm(chosen, axis=1, keepdims=True)
        outcome[sig] = late
        outcome[noi] = rng.integers(0, 2, int(noi.sum()))
        outcome[drk] = rng.integers(0, 2, int(drk.sum()))
        spin[noi], spin[drk] = noise_spin, dark_spin
        window = np.where(outcome == 0, "early", "late")
        detector = np.full(n, "D2")
        offset = outcome * pc.bin_separation
    else:
        trace = itf.PhaseTrace()
        locks = list(itf.run_cycles(icfg, cfg.block_cycles, plant_rng, t0=t0, trace=trace))
        post = np.array([r.phase_after_lock for r in locks])
        vel = np.array([r.velocity for r in locks])
        lock_end = np.array([r.start for r in locks]) + icfg.lock_duration
        ci = np.minimum(((wall - t0) // T).astype(int), cfg.block_cycles - 1)
        phase = post[ci] + vel[ci] * (wall - lock_end[ci])
        if sig.any():
            outcome[sig], spin[sig] = itf.route_batch(amps, phase[sig], rng)
        if noi.any():
            bins = np.where(rng.random(int(noi.sum())) < 0.5, itf.EARLY, itf.LATE)
            photon = np.zeros((len(bins), 3))
            photon[np.arange(len(bins)), bins] = 1.0
            outcome[noi], spin[noi] = itf.route_batch(noise_spin[:, :, None] * photon[:, None, :], phase[noi], rng)
        outcome[drk] = rng.integers(0, len(itf.OUTCOMES), int(drk.sum()))
        spin[drk] = dark_spin
        window = np.array([itf.OUTCOMES[k][0] for k in outcome], dtype="<U6")
        detector = np.array([itf.OUTCOMES[k][1] for k in outcome], dtype="<U2")
        offset = (outcome // 2) * icfg.delay

    jitter = np.where(drk, rng.uniform(0, cfg.conversion.window, n), rng.exponential(pc.lifetime, n))
    timestamp = wall + offset + jitter
    setting = np.full(n, "+") if basis == "Z" else np.where(rng.random(n) < 0.5, "+", "-")
    basis_col = np.full(n, basis)
    if basis != "Z" and cfg.analysis.side_windows_as_z:
        side = (detector == "D3") & (window != "middle")
        basis_col[side], setting[side] = "Z", "+"
    spin_out = _read_spins(spin, basis_col, setting, cfg, rng)

    if basis == "Z":
        analysed = np.ones(n, dtype=bool)
    else:
        analysed = (detector == "D3") & (window == "middle")
    origin = np.array(("signal", "noise", "dark"))[cat]
    columns = {
        "trial_id": ev.astype(np.int64),
        "detector": detector.astype("<U2"),
        "window": window.astype("<U6"),
        "origin": origin.astype("<U6"),
        "timestamp": timestamp,
        "spin_outcome": spin_out,
        "basis": basis_col.astype("<U1"),
        "readout": setting.astype("<U1"),
    }
    return BlockResult(
        basis, block, n_trials, columns, ev, exhausted[ev] if n else np.zeros(0, int),
        int(exhausted[-1]) if n_trials else 0, analysed, trace,
        locks=len(locks),
        calibrations=sum(r.lock.recalibrated for r in locks),
        lock_failures=sum(not r.lock.locked for r in locks),
    )


def _simulate_block_args(args):
    return simulate_block(*args)


# -- assembling a run ------------------------------------------------------------


@dataclass
class BasisRun:
    basis: str
    events: EventLog
    trials: int
    exhausted: int
    analysed: int
    duration: float
    trace: itf.PhaseTrace | None
    locks: int = 0
    calibrations: int = 0
    lock_failures: int = 0


def _expected_blocks(cfg: ExperimentConfig, basis: str) -> float:
    rate, _ = analysed_fraction(cfg, basis)
    model = click_model(cfg, basis)
    pc = cfg.protocol
    M = int(pc.max_attempts)
    p_click = 1 - (1 - model.p_any) ** M
    attempts = protocol.mean_attempts_given_success(model.p_any, M) * p_click + M * (1 - p_click)
    trial_time = pc.cr_check_duration / pc.p_cr_pass + attempts * pc.attempt_duration
    per_trial = rate / model.p_any * p_click
    icfg = cfg.interferometer
    measure = icfg.measurement_time if basis != "Z" else icfg.cycle_period
    per_block = per_trial * cfg.block_cycles * measure / trial_time
    return cfg.trials / per_block if per_block > 0 else math.inf


def run_basis(cfg: ExperimentConfig, basis: str, executor=None) -> BasisRun:
    if click_model(cfg, basis).p_signal <= 0:
        raise InsufficientSignalError(f"{basis}: no signal photons reach the detectors")
    need = _expected_blocks(cfg, basis)
    if need > MAX_BLOCKS:
        raise InsufficientSignalError(
            f"{basis}: {cfg.trials} analysed clicks would need about {need:.0f} blocks (limit {MAX_BLOCKS})"
        )
    results: list[BlockResult] = []
    have = 0
    batch = max(cfg.workers, 1)
    while have < cfg.trials:
        if len(results) >= MAX_BLOCKS:
            raise InsufficientSignalError(f"{basis}: only {have} analysed clicks after {MAX_BLOCKS} blocks")
        ids = range(len(results), len(results) + batch)
        args = [(cfg, basis, b) for b in ids]
        out = list(executor.map(_simulate_block_args, args)) if executor else [simulate_block(*a) for a in args]
        for r in out:
            if have >= cfg.trials:
                break
            results.append(r)
            have += int(r.analysed.sum())
    return _stitch(cfg, basis, results)


def _stitch(cfg: ExperimentConfig, basis: str, results: list[BlockResult]) -> BasisRun:
    need = cfg.trials
    logs, trial_offset, exhausted, got = [], 0, 0, 0
    traces = itf.PhaseTrace()
    locks = cals = fails = 0
    for r in results:
        cols = dict(r.columns)
        n_take = len(r.analysed)
        n_trials = r.n_trials
        n_exh = r.n_exhausted
        if got + int(r.analysed.sum()) >= need:
            idx = np.flatnonzero(r.analysed)[need - got - 1]
            n_take = idx + 1
            n_trials = int(r.trial_of_event[idx]) + 1
            n_exh = int(r.exhausted_before[idx])
        cols = {k: v[:n_take] for k, v in cols.items()}
        cols["trial_id"] = cols["trial_id"] + trial_offset
        logs.append(EventLog(**cols))
        got += int(r.analysed[:n_take].sum())
        trial_offset += n_trials
        exhausted += n_exh
        if r.trace is not None:
            for t, p, lab in zip(r.trace.times, r.trace.delta_phi, r.trace.phase_of_cycle):
                traces.add(t, p, lab)
        locks += r.locks
        cals += r.calibrations
        fails += r.lock_failures
    return BasisRun(
        basis, EventLog.concat(logs), trial_offset, exhausted, got,
        len(results) * block_duration(cfg), traces if basis != "Z" else None, locks, cals, fails,
    )


# -- report ---------------------------------------------------------------------


@dataclass
class RunReport:
    config: dict
    result: TomographyResult
    prediction: dict
    bases: dict  # per-basis counts and summaries
    events: EventLog
    dark_fractions: dict = field(default_factory=dict)  # applied per basis table
    phase_traces: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def to_dict(self, include_wall_time: bool = True) -> dict:
        d = {
            "config": self.config,
            "result": self.result.to_dict(),
            "prediction": self.prediction,
            "bases": self.bases,
            "dark_fractions": self.dark_fractions,
        }
        if include_wall_time:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, include_wall_time: bool = True) -> str:
        return json.dumps(self.to_dict(include_wall_time), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir, include_wall_time: bool = True) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json", out / "events.csv"]
        paths[0].write_text(self.to_json(include_wall_time))
        self.events.write_csv(paths[1])
        for b, tr in self.phase_traces.items():
            p = out / f"phase_trace_{b}.csv"
            tr.write_csv(p)
            paths.append(p)
        return paths


def phase_summary(run: BasisRun, cfg: ExperimentConfig) -> dict | None:
    if run.trace is None:
        return None
    icfg = cfg.interferometer.for_basis(run.basis)
    pre = run.trace.errors("pre-lock", icfg.target)
    post = run.trace.errors("post-lock", icfg.target)
    return {
        "cycles": run.locks,
        "calibrations": run.calibrations,
        "lock_failures": run.lock_failures,
        "pre_lock_std": float(np.std(pre)),
        "post_lock_std": float(np.std(post)),
        "post_lock_mean": float(np.mean(post)),
        "measurement_time_per_cycle": icfg.measurement_time,
    }


def run_scenario(cfg: ExperimentConfig) -> RunReport:
    """Simulate every basis of the scenario and estimate the contrasts."""
    t_start = time.perf_counter()
    runs = []
    executor = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for b in cfg.bases:
            runs.append(run_basis(cfg, b, executor))
    finally:
        if executor is not None:
            executor.shutdown()

    # Bases are measured one after the other.
    logs, t_off, id_off = [], 0.0, 0
    for r in runs:
        ev = r.events
        logs.append(EventLog(ev.trial_id + id_off, ev.detector, ev.window, ev.origin, ev.timestamp + t_off,
                             ev.spin_outcome, ev.basis, ev.readout))
        t_off += r.duration
        id_off += r.trials
    events = EventLog.concat(logs)
    cal = tomography_calibration(cfg)
    result = estimate(events, cal=cal)
    pred = predict_experiment(cfg)

    bases = {}
    for r in runs:
        bases[r.basis] = {
            "trials": r.trials,
            "exhausted_trials": r.exhausted,
            "analysed_clicks": r.analysed,
            "events": len(r.events),
            "counts": r.events.counts(),
            "phase": phase_summary(r, cfg),
        }
    traces = {}
    for r in runs:
        if r.trace is not None:
            tr = itf.PhaseTrace()
            off = sum(x.duration for x in runs[: runs.index(r)])
            for t, p, lab in zip(r.trace.times, r.trace.delta_phi, r.trace.phase_of_cycle):
                tr.add(t + off, p, lab)
            traces[r.basis] = tr
    return RunReport(
        config=config_items(cfg, include_execution=False),
        result=result,
        prediction={k: float(getattr(pred, a)) for k, a in
                    (("E_X", "e_x"), ("E_Y", "e_y"), ("E_Z", "e_z"), ("fidelity", "fidelity"),
                     ("state_fidelity", "state_fidelity"))},
        bases=bases,
        events=events,
        dark_fractions={b: cal.dark_for(b) for b in BASES if any(events.basis == b)},
        phase_traces=traces,
        wall_time=time.perf_counter() - t_start,
    )


# -- sweeps ---------------------------------------------------------------------


def derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def sweep(cfg: ExperimentConfig, path: str, values) -> list[RunReport]:
    """Independent runs with ``path`` set to each value and derived seeds."""
    numeric_path(cfg, path)
    reports = []
    for i, v in enumerate(values):
        run_cfg = apply_values(cfg, {path: v, "seed": derived_seed(cfg.seed, i)})
        reports.append(run_scenario(run_cfg))
    return reports


SWEEP_COLUMNS = ("value", "seed", "E_X", "E_X_std", "E_Y", "E_Y_std", "E_Z", "E_Z_std",
                 "fidelity", "fidelity_std", "sigma_above_classical")


def sweep_table(path: str, values, reports: list[RunReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((path,) + SWEEP_COLUMNS[1:])
    for v, rep in zip(values, reports):
        d = rep.result.to_dict()
        row = [v, rep.config["seed"]]
        for k in ("E_X", "E_Y", "E_Z", "fidelity"):
            row += ["", ""] if d[k] is None else [repr(d[k]["value"]), repr(d[k]["std"])]
        s = d["sigma_above_classical"]
        row.append("" if s is None else repr(s))
        w.writerow(row)
    return buf.getvalue()

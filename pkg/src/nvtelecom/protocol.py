"""Spin-photon entanglement generation attempts.

One attempt: spin prepared in |0>, a microwave pi/2 pulse, a spin-selective
optical pi pulse (|0> emits into the early bin), a microwave pi flip, and a
second optical pi pulse (|0> emits into the late bin). With perfect
parameters the photon-present branch is (|1,E> + |0,L>)/sqrt(2).

Imperfections:

* ``p_emit_collect`` -- an emitted photon that is not collected goes to the
  environment, so it carries which-branch information and dephases the spin.
* ``p_reexc`` -- per optical pulse, the emitting branch is fully dephased.
  This stands in for emission and re-excitation during the pulse; a second
  photon is not modelled.
* spectral diffusion and laser-lock jitter -- one Gaussian frequency offset
  with std ``sqrt(sd^2 + lock^2)``, giving the late term a phase
  ``2*pi*dnu*bin_separation``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import pi, sqrt
from typing import Callable

import numpy as np

from . import hilbert as hb
from .hilbert import EARLY, LATE, VAC, DensityMatrix, Operator, StateVector

JOINT_DIMS = (hb.SPIN_DIM, hb.PHOTON_DIM)


@dataclass(frozen=True)
class ProtocolConfig:
    p_cr_pass: float = 1.0
    p_emit_collect: float = 1.0
    p_reexc: float = 0.0
    spectral_diffusion_sigma: float = 0.0  # Hz
    laser_lock_sigma: float = 200e3  # Hz
    bin_separation: float = 190e-9  # s
    lifetime: float = 12e-9  # s
    max_attempts: int = 250
    # Schedule durations; only used for event timestamps.
    attempt_duration: float = 5e-6
    cr_check_duration: float = 50e-6

    def __post_init__(self):
        for name in ("p_cr_pass", "p_emit_collect", "p_reexc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        for name in ("spectral_diffusion_sigma", "laser_lock_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("bin_separation", "lifetime", "attempt_duration", "cr_check_duration"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if int(self.max_attempts) != self.max_attempts or self.max_attempts < 1:
            raise ValueError("max_attempts must be an integer >= 1")

    @property
    def frequency_sigma(self) -> float:
        return sqrt(self.spectral_diffusion_sigma**2 + self.laser_lock_sigma**2)

    @property
    def phase_sigma(self) -> float:
        """Std (rad) of the relative phase between the two time-bin terms."""
        return 2 * pi * self.frequency_sigma * self.bin_separation


@dataclass(frozen=True)
class AttemptOutcome:
    clicked: bool
    state: DensityMatrix
    attempt_index: int = 1
    trial_id: int = 0


class Exhausted:
    """Marker returned when every attempt of a loop failed."""

    def __init__(self, attempts: int, trial_id: int = 0):
        self.attempts = attempts
        self.trial_id = trial_id

    def __repr__(self):
        return f"Exhausted(attempts={self.attempts})"


# -- building blocks ---------------------------------------------------------


def _emission_kraus(p_collect: float, bin_index: int) -> list[Operator]:
    """Optical pi pulse on spin |0>: photon into ``bin_index`` (collected)
    or into the environment (lost). Spin |1> is dark.

    Only |0,vac> emits. |0,bin> never occurs in the sequence; it gets its
    own passive Kraus operator so the map stays trace preserving.
    """
    d = hb.SPIN_DIM * hb.PHOTON_DIM
    src = 0 * hb.PHOTON_DIM + VAC
    dst = 0 * hb.PHOTON_DIM + bin_index

    kept = np.eye(d, dtype=complex)
    kept[:, [src, dst]] = 0.0
    kept[dst, src] = sqrt(p_collect)
    lost = np.zeros((d, d), dtype=complex)
    lost[src, src] = sqrt(1.0 - p_collect)
    passive = np.zeros((d, d), dtype=complex)
    passive[dst, dst] = 1.0
    return [Operator(JOINT_DIMS, m) for m in (kept, lost, passive)]


def _branch_dephasing(p: float) -> list[Operator]:
    """Zero, with probability ``p``, the coherence between the spin-|0>
    branch (the one driven by the optical pulse) and the rest."""
    p0 = hb.embed(Operator((2,), np.diag([1, 0])), JOINT_DIMS, [0])
    p1 = hb.embed(Operator((2,), np.diag([0, 1])), JOINT_DIMS, [0])
    ops = [Operator(JOINT_DIMS, sqrt(1 - p) * np.eye(6))]
    if p > 0:
        ops += [Operator(JOINT_DIMS, sqrt(p) * p0.matrix), Operator(JOINT_DIMS, sqrt(p) * p1.matrix)]
    return ops


def late_phase_operator(phi: float) -> Operator:
    """Phase ``exp(i*phi)`` on the late time bin."""
    return Operator((hb.PHOTON_DIM,), np.diag([1.0, 1.0, np.exp(1j * phi)]))


def initial_state() -> DensityMatrix:
    return hb.basis_state(JOINT_DIMS, (0, VAC)).to_density()


def target_state() -> StateVector:
    """(|1,E> + |0,L>)/sqrt(2)."""
    amps = np.zeros(6, dtype=complex)
    amps[1 * 3 + EARLY] = 1 / sqrt(2)
    amps[0 * 3 + LATE] = 1 / sqrt(2)
    return StateVector(JOINT_DIMS, amps)


def _sequence(cfg: ProtocolConfig, phi: float, reexc: tuple[bool, bool] | tuple[float, float]):
    """Run the pulse sequence on |0,vac>.

    ``reexc`` entries are either sampled flags or, for the ensemble oracle,
    probabilities.
    """
    rho = initial_state()
    rho = hb.apply_unitary(rho, hb.ry(pi / 2), [0])
    rho = hb.apply_channel(rho, _branch_dephasing(float(reexc[0])))
    rho = hb.apply_channel(rho, _emission_kraus(cfg.p_emit_collect, EARLY))
    rho = hb.apply_unitary(rho, hb.rx(pi), [0])
    rho = hb.apply_channel(rho, _branch_dephasing(float(reexc[1])))
    rho = hb.apply_channel(rho, _emission_kraus(cfg.p_emit_collect, LATE))
    return hb.apply_unitary(rho, late_phase_operator(phi), [1])


def photon_present_projectors() -> list[Operator]:
    vac = hb.projector(hb.basis_state((3,), (VAC,)))
    occ = Operator((3,), np.diag([0, 1, 1]))
    return [hb.embed(vac, JOINT_DIMS, [1]), hb.embed(occ, JOINT_DIMS, [1])]


def photon_population(rho: DensityMatrix) -> float:
    """Population outside the photonic vacuum."""
    red = hb.partial_trace(rho, [1]).matrix
    return float(np.real(red[EARLY, EARLY] + red[LATE, LATE]))


# -- operations --------------------------------------------------------------


def charge_resonance_check(cfg: ProtocolConfig, rng: np.random.Generator) -> bool:
    return bool(rng.random() < cfg.p_cr_pass)


def generate_attempt(cfg: ProtocolConfig, rng: np.random.Generator, trial_id: int = 0) -> AttemptOutcome:
    """One entanglement attempt with sampled phase noise and re-excitation.

    ``clicked`` records whether a photon entered the collection path; the
    state is conditioned on that outcome.
    """
    dnu = rng.normal(0.0, cfg.frequency_sigma) if cfg.frequency_sigma > 0 else 0.0
    phi = 2 * pi * dnu * cfg.bin_separation
    reexc = (bool(rng.random() < cfg.p_reexc), bool(rng.random() < cfg.p_reexc))
    rho = _sequence(cfg, phi, reexc)
    k, post, _ = hb.measure_projective(rho, photon_present_projectors(), rng)
    return AttemptOutcome(clicked=k == 1, state=post, trial_id=trial_id)


def run_attempt_loop(
    cfg: ProtocolConfig,
    rng: np.random.Generator,
    detected: Callable[[AttemptOutcome, np.random.Generator], bool] | None = None,
    trial_id: int = 0,
):
    """Repeat attempts until ``detected`` accepts one or ``max_attempts`` fail.

    ``detected`` models everything downstream of emission (conversion,
    detection); by default an attempt counts when a photon was collected.
    """
    for i in range(1, int(cfg.max_attempts) + 1):
        out = generate_attempt(cfg, rng, trial_id=trial_id)
        ok = detected(out, rng) if detected is not None else out.clicked
        if ok:
            return AttemptOutcome(out.clicked, out.state, attempt_index=i, trial_id=trial_id)
    return Exhausted(int(cfg.max_attempts), trial_id)


def mean_attempts_given_success(p: float, max_attempts: int) -> float:
    """E[K | K <= M] for K ~ Geometric(p)."""
    q = 1.0 - p
    qm = q**max_attempts
    return 1.0 / p - max_attempts * qm / (1.0 - qm)


# -- ensemble descriptions ---------------------------------------------------


def coherence_visibility(cfg: ProtocolConfig) -> float:
    """Ensemble factor on the |1,E><0,L| coherence of the clicked state."""
    return (1.0 - cfg.p_reexc) ** 2 * float(np.exp(-0.5 * cfg.phase_sigma**2))


def ensemble_state(cfg: ProtocolConfig) -> DensityMatrix:
    """Unconditioned post-emission state averaged over phase noise and
    re-excitation, built from the same channels with exact averages."""
    rho = _sequence(cfg, 0.0, (cfg.p_reexc, cfg.p_reexc))
    # Averaging exp(i*phi) over N(0, s) multiplies coherences by exp(-s^2/2).
    g = np.exp(-0.5 * cfg.phase_sigma**2)
    late = np.zeros(6, dtype=bool)
    late[[LATE, 3 + LATE]] = True
    m = rho.matrix.copy()
    mask = np.logical_xor.outer(late, late)
    m[mask] *= g
    return DensityMatrix(JOINT_DIMS, m)


def clicked_ensemble_state(cfg: ProtocolConfig) -> DensityMatrix:
    """Ensemble state conditioned on a photon in the collection path."""
    rho = ensemble_state(cfg)
    occ = photon_present_projectors()[1].matrix
    return DensityMatrix(JOINT_DIMS, occ @ rho.matrix @ occ).normalize()


def spin_reduced_state(cfg: ProtocolConfig) -> DensityMatrix:
    return hb.partial_trace(ensemble_state(cfg), [0])


def sample_clicked_amplitudes(cfg: ProtocolConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """Photon-present trajectories, shape ``(n, 2, 3)``.

    Pure-state unravelling of :func:`generate_attempt`'s clicked branch:
    re-excitation dephasing becomes a uniformly random phase on the driven
    branch, which averages to the same density matrix.
    """
    if cfg.p_emit_collect <= 0:
        raise ValueError("no photon-present branch when p_emit_collect = 0")
    rho = _sequence(cfg, 0.0, (False, False))
    occ = photon_present_projectors()[1].matrix
    rho = occ @ rho.matrix @ occ
    # Without sampled noise the photon-present branch is pure.
    psi0 = np.linalg.eigh(rho)[1][:, -1]
    psi0 = psi0 * np.exp(-1j * np.angle(psi0[np.argmax(np.abs(psi0))]))

    phase = np.zeros((n, 6))
    if cfg.frequency_sigma > 0:
        phase[:, [LATE, 3 + LATE]] += rng.normal(0.0, cfg.phase_sigma, size=(n, 1))
    if cfg.p_reexc > 0:
        # Pulse 1 drives the branch that ends as |1,E>, pulse 2 the |0,L> branch.
        hit1 = rng.random(n) < cfg.p_reexc
        hit2 = rng.random(n) < cfg.p_reexc
        phase[:, 3 + EARLY] += np.where(hit1, rng.uniform(0, 2 * pi, n), 0.0)
        phase[:, LATE] += np.where(hit2, rng.uniform(0, 2 * pi, n), 0.0)
    amps = psi0[None, :] * np.exp(1j * phase)
    return amps.reshape(n, hb.SPIN_DIM, hb.PHOTON_DIM)

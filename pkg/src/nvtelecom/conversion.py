"""Frequency conversion: coherent photon survival plus pump-induced noise.

Surviving amplitude keeps its time-bin coherence; lost amplitude goes to
the photonic vacuum. Noise clicks (SPDC and Raman) are uncorrelated with
the spin and uniform over the two time bins, so their rate is set directly
by the signal-to-noise ratio.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import inf, isinf, sqrt

import numpy as np

from . import hilbert as hb
from .hilbert import EARLY, LATE, VAC, DensityMatrix, Operator


@dataclass(frozen=True)
class ConversionConfig:
    eta_c: float = 0.17
    snr: float = 6.25
    dark_count_rate: float = 10.0  # clicks/s per detector
    window: float = 40e-9  # s per time bin

    def __post_init__(self):
        if not 0.0 <= self.eta_c <= 1.0:
            raise ValueError(f"eta_c must be a probability, got {self.eta_c}")
        if not self.snr > 0:
            raise ValueError(f"snr must be > 0, got {self.snr}")
        if self.dark_count_rate < 0 or self.window <= 0:
            raise ValueError("dark_count_rate must be >= 0 and window > 0")


@dataclass(frozen=True)
class NoiseClick:
    window: str  # "early" | "late"
    origin: str = "noise"


def loss_kraus(eta: float) -> list[Operator]:
    """Photon-mode Kraus operators for survival probability ``eta``."""
    keep = np.diag([1.0, sqrt(eta), sqrt(eta)]).astype(complex)
    ops = [Operator((3,), keep)]
    # One loss operator per bin: a lost photon's arrival time is recorded by
    # the environment, so the two bins decay incoherently.
    for b in (EARLY, LATE):
        lose = np.zeros((3, 3), dtype=complex)
        lose[VAC, b] = sqrt(1.0 - eta)
        ops.append(Operator((3,), lose))
    return ops


def convert(state: DensityMatrix, cfg: ConversionConfig, rng: np.random.Generator | None = None,
            photon: int = 1) -> DensityMatrix:
    """Apply the conversion loss channel to the photonic subsystem.

    The channel is deterministic at the density-matrix level; ``rng`` is
    accepted for interface symmetry with the sampled stages.
    """
    if isinstance(state, hb.StateVector):
        state = state.to_density()
    if state.dims[photon] != hb.PHOTON_DIM:
        raise hb.DimensionError("state has no three-level photonic mode at that index")
    return hb.apply_channel(state, loss_kraus(cfg.eta_c), [photon])


def sample_survival(state: DensityMatrix, cfg: ConversionConfig, rng: np.random.Generator,
                    photon: int = 1):
    """Convert, then sample whether a photon left the converter.

    Returns ``(survived, post_state)``.
    """
    rho = convert(state, cfg, photon=photon)
    vac = hb.embed(hb.projector(hb.basis_state((3,), (VAC,))), rho.dims, [photon])
    occ = hb.embed(Operator((3,), np.diag([0, 1, 1])), rho.dims, [photon])
    k, post, _ = hb.measure_projective(rho, [vac, occ], rng)
    return k == 1, post


def noise_probability(p_signal: float, snr: float) -> float:
    """Noise-click probability for an attempt in which no signal photon
    survived, chosen so that signal:noise clicks equal ``snr``."""
    if isinf(snr):
        return 0.0
    if p_signal >= 1.0:
        raise ValueError("signal probability 1 leaves no room for noise clicks")
    return p_signal / (snr * (1.0 - p_signal))


def sample_noise_click(cfg: ConversionConfig, rng: np.random.Generator,
                       p_signal: float | None = None) -> NoiseClick | None:
    """A pump-noise click for one attempt, or None.

    ``p_signal`` is the per-attempt signal-click probability; the draw is for
    an attempt without a signal photon. Without it a click is returned
    unconditionally. The bin is uniform either way.
    """
    if p_signal is not None and rng.random() >= noise_probability(p_signal, cfg.snr):
        return None
    return NoiseClick("early" if rng.random() < 0.5 else "late")


def noise_conditioned_spin(state: DensityMatrix) -> DensityMatrix:
    """Spin state given a noise click: the unconditioned reduced state."""
    return hb.partial_trace(state, [0])


def max_contrast_from_snr(snr: float) -> float:
    """Contrast of perfectly correlated clicks diluted by uncorrelated noise."""
    if not snr > 0:
        raise ValueError(f"snr must be > 0, got {snr}")
    if snr == inf:
        return 1.0
    return snr / (snr + 1.0)

"""Closed-form expectations for the simulated experiment.

Everything here works on ensemble density matrices. The photon measurement
for X and Y is written directly as the projection onto
(|L> + exp(-i(delta_phi - pi/4))|E>)/sqrt(2), i.e. the state a middle-window
D3 click selects, and lock phase errors are averaged by Gauss-Hermite
quadrature. None of it calls the interferometer's port model or any sampler.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import pi, sqrt

import numpy as np

from . import hilbert as hb
from . import protocol
from .conversion import max_contrast_from_snr
from .hilbert import EARLY, LATE, DensityMatrix

_QUAD_NODES, _QUAD_WEIGHTS = np.polynomial.hermite_e.hermegauss(48)
_QUAD_WEIGHTS = _QUAD_WEIGHTS / _QUAD_WEIGHTS.sum()


@dataclass(frozen=True)
class Prediction:
    e_x: float
    e_y: float
    e_z: float
    fidelity: float  # three-contrast bound
    state_fidelity: float  # <target|rho|target> of the click-conditioned state
    signal_fraction: float


def signal_fraction(snr: float | None) -> float:
    """Fraction of analysed clicks that carry the photon, after dark-count
    correction. ``None`` means no conversion noise."""
    return 1.0 if snr is None else max_contrast_from_snr(snr)


def effective_state(pcfg: protocol.ProtocolConfig, snr: float | None) -> DensityMatrix:
    """Click-conditioned spin-photon state: signal mixed with noise photons
    that are uniform over E/L and uncorrelated with the spin."""
    w = signal_fraction(snr)
    rho = protocol.clicked_ensemble_state(pcfg)
    spin = protocol.spin_reduced_state(pcfg)
    bins = np.diag([0.0, 0.5, 0.5]).astype(complex)
    noise = hb.tensor(spin, DensityMatrix((3,), bins))
    return DensityMatrix(rho.dims, w * rho.matrix + (1 - w) * noise.matrix)


def _p0_given_bin(rho: DensityMatrix, b: int) -> float:
    m = rho.matrix
    p0 = m[0 * 3 + b, 0 * 3 + b].real
    p1 = m[1 * 3 + b, 1 * 3 + b].real
    return float(p0 / (p0 + p1))


def z_contrast(rho: DensityMatrix) -> float:
    return abs(_p0_given_bin(rho, EARLY) - _p0_given_bin(rho, LATE))


def d3_projected_spin(rho: DensityMatrix, delta_phi: float) -> np.ndarray:
    """Unnormalized spin matrix after a middle-window D3 click."""
    m = np.zeros(3, dtype=complex)
    m[LATE] = 1 / sqrt(2)
    m[EARLY] = np.exp(-1j * (delta_phi - pi / 4)) / sqrt(2)
    bra = np.kron(np.eye(2), m.conj()[None, :])  # (2, 6): I (x) <m|
    return bra @ rho.matrix @ bra.conj().T


def superposition_contrasts(rho: DensityMatrix, delta_phi: float, sigma: float = 0.0) -> tuple[float, float]:
    """(|<X>|, |<Y>|) of the spin after a D3 click with phase drawn from
    N(delta_phi, sigma^2)."""
    phis = delta_phi + sigma * _QUAD_NODES if sigma > 0 else np.array([delta_phi])
    wts = _QUAD_WEIGHTS if sigma > 0 else np.array([1.0])
    s = sum(w * d3_projected_spin(rho, p) for w, p in zip(wts, phis))
    s = DensityMatrix((2,), s / np.trace(s).real)
    return abs(hb.expectation(s, hb.PAULI_X)), abs(hb.expectation(s, hb.PAULI_Y))


def lock_phase_variance(rho: DensityMatrix, basis: str, target: float, sigma: float) -> float:
    """Variance over lock phase errors N(target, sigma^2) of the signed
    contrast a single lock cycle would show. Clicks within one cycle share
    the phase, so this adds sum(w_c^2) * variance to the contrast variance
    of a run whose cycles carry click weights w_c."""
    if sigma == 0:
        return 0.0
    op = hb.PAULI_X if basis == "X" else hb.PAULI_Y
    g = []
    for x in _QUAD_NODES:
        s = d3_projected_spin(rho, target + sigma * x)
        g.append(np.trace(s @ op).real / np.trace(s).real)
    g = np.array(g)
    mean = _QUAD_WEIGHTS @ g
    return float(_QUAD_WEIGHTS @ (g - mean) ** 2)


def predict(pcfg: protocol.ProtocolConfig, snr: float | None = None, *,
            setpoints=(pi / 4, 3 * pi / 4), lock_sigma: float = 0.0, setpoint_error: float = 0.0) -> Prediction:
    """Expected contrasts and fidelities.

    ``lock_sigma`` and ``setpoint_error`` describe the interferometer phase
    at click time as N(setpoint + setpoint_error, lock_sigma^2).
    """
    rho = effective_state(pcfg, snr)
    ez = z_contrast(rho)
    ex, _ = superposition_contrasts(rho, setpoints[0] + setpoint_error, lock_sigma)
    _, ey = superposition_contrasts(rho, setpoints[1] + setpoint_error, lock_sigma)
    return Prediction(
        e_x=ex,
        e_y=ey,
        e_z=ez,
        fidelity=(1 + ex + ey + ez) / 4,
        state_fidelity=hb.fidelity_to_pure(rho, protocol.target_state()),
        signal_fraction=signal_fraction(snr),
    )


def predict_experiment(cfg) -> Prediction:
    """:func:`predict` for an :class:`~nvtelecom.harness.ExperimentConfig`,
    ignoring drift between locks."""
    icfg = cfg.interferometer
    return predict(
        cfg.protocol,
        cfg.conversion.snr if cfg.converted else None,
        setpoints=(
            icfg.setpoint if icfg.setpoint is not None else pi / 4,
            icfg.setpoint if icfg.setpoint is not None else 3 * pi / 4,
        ),
        lock_sigma=icfg.residual_lock_sigma,
        setpoint_error=icfg.setpoint_error,
    )

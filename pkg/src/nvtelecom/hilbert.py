"""Dense linear algebra for one spin qubit and one three-level photonic mode.

Subsystems are addressed by index into ``dims``. The photonic mode uses the
ordering ``(VAC, EARLY, LATE)`` so loss and no-click branches are ordinary
basis states. States are compared up to a global phase.

Microwave rotation convention: ``ry(pi/2)`` prepares (|0> + |1>)/sqrt(2) from
|0>, and the spin flip is ``rx(pi)``, which equals -iX.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Sequence

import numpy as np

VAC, EARLY, LATE = 0, 1, 2
SPIN_DIM = 2
PHOTON_DIM = 3

_ATOL = 1e-10


class DimensionError(ValueError):
    pass


def _as_dims(dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if not dims or any(d < 1 for d in dims):
        raise DimensionError(f"invalid dims {dims}")
    return dims


@dataclass(frozen=True, eq=False)
class StateVector:
    dims: tuple[int, ...]
    amplitudes: np.ndarray

    def __post_init__(self):
        dims = _as_dims(self.dims)
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != prod(dims):
            raise DimensionError(f"{amps.size} amplitudes for dims {dims}")
        amps.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalize(self) -> StateVector:
        n = self.norm
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.dims, self.amplitudes / n)

    def to_density(self) -> DensityMatrix:
        a = self.amplitudes
        return DensityMatrix(self.dims, np.outer(a, a.conj()))

    def overlap(self, other: StateVector) -> complex:
        _check_same_dims(self.dims, other.dims)
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    dims: tuple[int, ...]
    matrix: np.ndarray

    def __post_init__(self):
        dims = _as_dims(self.dims)
        d = prod(dims)
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (d, d):
            raise DimensionError(f"matrix shape {m.shape} for dims {dims}")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "matrix", m)

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def normalize(self) -> DensityMatrix:
        t = self.trace
        if t <= 0:
            raise ValueError("cannot normalize a state with zero trace")
        return DensityMatrix(self.dims, self.matrix / t)

    def is_valid(self, atol: float = 1e-10) -> bool:
        m = self.matrix
        if not np.allclose(m, m.conj().T, atol=atol):
            return False
        if abs(np.trace(m) - 1) > atol:
            return False
        return bool(np.linalg.eigvalsh(m).min() >= -atol)


@dataclass(frozen=True, eq=False)
class Operator:
    dims: tuple[int, ...]
    matrix: np.ndarray

    def __post_init__(self):
        dims = _as_dims(self.dims)
        d = prod(dims)
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (d, d):
            raise DimensionError(f"matrix shape {m.shape} for dims {dims}")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "matrix", m)

    @property
    def dag(self) -> Operator:
        return Operator(self.dims, self.matrix.conj().T)

    def __matmul__(self, other: Operator) -> Operator:
        _check_same_dims(self.dims, other.dims)
        return Operator(self.dims, self.matrix @ other.matrix)

    def is_unitary(self, atol: float = 1e-12) -> bool:
        m = self.matrix
        return bool(np.allclose(m.conj().T @ m, np.eye(m.shape[0]), atol=atol))


def _check_same_dims(a: Sequence[int], b: Sequence[int]) -> None:
    if tuple(a) != tuple(b):
        raise DimensionError(f"dimension mismatch: {tuple(a)} vs {tuple(b)}")


# -- constructors ------------------------------------------------------------


def basis_state(dims: Sequence[int], indices: Sequence[int]) -> StateVector:
    """Computational basis ket, e.g. ``basis_state((2, 3), (0, EARLY))``."""
    dims = _as_dims(dims)
    if len(indices) != len(dims):
        raise DimensionError("one index per subsystem required")
    amps = np.zeros(prod(dims), dtype=complex)
    amps[np.ravel_multi_index(tuple(indices), dims)] = 1.0
    return StateVector(dims, amps)


def identity(dims: Sequence[int]) -> Operator:
    dims = _as_dims(dims)
    return Operator(dims, np.eye(prod(dims)))


def projector(vec: StateVector) -> Operator:
    a = vec.normalize().amplitudes
    return Operator(vec.dims, np.outer(a, a.conj()))


def maximally_mixed(dims: Sequence[int]) -> DensityMatrix:
    dims = _as_dims(dims)
    d = prod(dims)
    return DensityMatrix(dims, np.eye(d) / d)


PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def rx(theta: float) -> Operator:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return Operator((2,), [[c, -1j * s], [-1j * s, c]])


def ry(theta: float) -> Operator:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return Operator((2,), [[c, -s], [s, c]])


def rz(theta: float) -> Operator:
    return Operator((2,), np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)]))


# -- operations --------------------------------------------------------------


def tensor(a, b):
    """Kronecker product of two states or two operators; dims concatenate."""
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(a.dims + b.dims, np.kron(a.amplitudes, b.amplitudes))
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        return DensityMatrix(a.dims + b.dims, np.kron(a.matrix, b.matrix))
    if isinstance(a, Operator) and isinstance(b, Operator):
        return Operator(a.dims + b.dims, np.kron(a.matrix, b.matrix))
    raise TypeError(f"cannot tensor {type(a).__name__} with {type(b).__name__}")


def embed(op: Operator, dims: Sequence[int], targets: Sequence[int]) -> Operator:
    """Lift ``op`` acting on ``targets`` to the full space ``dims``."""
    dims = _as_dims(dims)
    targets = tuple(int(t) for t in targets)
    if len(set(targets)) != len(targets) or any(not 0 <= t < len(dims) for t in targets):
        raise DimensionError(f"invalid targets {targets} for dims {dims}")
    if tuple(dims[t] for t in targets) != op.dims:
        raise DimensionError(
            f"operator dims {op.dims} do not match targeted subsystems "
            f"{tuple(dims[t] for t in targets)}"
        )
    n = len(dims)
    rest = [i for i in range(n) if i not in targets]
    # Operator indices laid out as (targets..., rest...) then permuted back.
    full = np.kron(op.matrix, np.eye(prod(dims[i] for i in rest)))
    order = list(targets) + rest
    shape = [dims[i] for i in order] * 2
    full = full.reshape(shape)
    inv = np.argsort(order)
    perm = list(inv) + [n + i for i in inv]
    d = prod(dims)
    return Operator(dims, full.transpose(perm).reshape(d, d))


def apply_unitary(state, u: Operator, targets: Sequence[int] | None = None):
    """Apply ``u`` to the subsystems ``targets`` (all subsystems if None)."""
    if targets is None:
        _check_same_dims(u.dims, state.dims)
        full = u
    else:
        full = embed(u, state.dims, targets)
    m = full.matrix
    if isinstance(state, StateVector):
        return StateVector(state.dims, m @ state.amplitudes)
    if isinstance(state, DensityMatrix):
        return DensityMatrix(state.dims, m @ state.matrix @ m.conj().T)
    raise TypeError(f"unsupported state type {type(state).__name__}")


def apply_channel(
    rho: DensityMatrix, kraus: Sequence[Operator], targets: Sequence[int] | None = None
) -> DensityMatrix:
    """Apply a CPTP map given by Kraus operators (checked for completeness)."""
    ops = [k if targets is None else embed(k, rho.dims, targets) for k in kraus]
    for k in ops:
        _check_same_dims(k.dims, rho.dims)
    d = rho.matrix.shape[0]
    total = sum(k.matrix.conj().T @ k.matrix for k in ops)
    if not np.allclose(total, np.eye(d), atol=_ATOL):
        raise ValueError("Kraus operators are not trace preserving")
    out = sum(k.matrix @ rho.matrix @ k.matrix.conj().T for k in ops)
    return DensityMatrix(rho.dims, out)


def partial_trace(rho, keep: Sequence[int]) -> DensityMatrix:
    """Reduced state on the subsystems listed in ``keep`` (in that order)."""
    if isinstance(rho, StateVector):
        rho = rho.to_density()
    dims = rho.dims
    n = len(dims)
    keep = tuple(int(k) for k in keep)
    if len(set(keep)) != len(keep) or any(not 0 <= k < n for k in keep):
        raise DimensionError(f"invalid subsystem indices {keep}")
    if not keep:
        raise DimensionError("must keep at least one subsystem")
    drop = [i for i in range(n) if i not in keep]
    t = rho.matrix.reshape(list(dims) * 2)
    row = list(range(n))
    col = list(range(n, 2 * n))
    for i in drop:
        col[i] = row[i]
    out_idx = [row[i] for i in keep] + [col[i] for i in keep]
    reduced = np.einsum(t, row + col, out_idx)
    kd = tuple(dims[i] for i in keep)
    d = prod(kd)
    return DensityMatrix(kd, reduced.reshape(d, d))


def check_complete(projectors: Sequence[Operator], atol: float = _ATOL) -> None:
    d = projectors[0].matrix.shape[0]
    total = sum(p.matrix for p in projectors)
    if not np.allclose(total, np.eye(d), atol=atol):
        raise ValueError("projector set is not complete")


def born_probabilities(state, projectors: Sequence[Operator]) -> np.ndarray:
    if isinstance(state, StateVector):
        a = state.amplitudes
        probs = [np.real(np.vdot(a, p.matrix @ a)) for p in projectors]
    else:
        probs = [np.real(np.trace(p.matrix @ state.matrix)) for p in projectors]
    return np.clip(np.array(probs), 0.0, None)


def measure_projective(state, projectors: Sequence[Operator], rng: np.random.Generator):
    """Sample a projective measurement.

    ``projectors`` act on the whole space of ``state``; embed them first for
    single-subsystem measurements.

    Returns:
        (outcome index, renormalized post-measurement state, probability)
    """
    for p in projectors:
        _check_same_dims(p.dims, state.dims)
    check_complete(projectors)
    probs = born_probabilities(state, projectors)
    probs = probs / probs.sum()
    k = int(rng.choice(len(probs), p=probs))
    p = projectors[k].matrix
    if isinstance(state, StateVector):
        post = StateVector(state.dims, p @ state.amplitudes).normalize()
    else:
        post = DensityMatrix(state.dims, p @ state.matrix @ p).normalize()
    return k, post, float(probs[k])


def fidelity_to_pure(rho, target: StateVector) -> float:
    """Overlap <target|rho|target> with a normalized pure target."""
    if isinstance(rho, StateVector):
        rho = rho.to_density()
    _check_same_dims(rho.dims, target.dims)
    t = target.normalize().amplitudes
    f = np.vdot(t, rho.matrix @ t)
    if abs(f.imag) > _ATOL:
        raise ValueError(f"non-Hermitian input, imaginary overlap {f.imag:g}")
    return float(f.real)


def expectation(rho: DensityMatrix, op: np.ndarray) -> float:
    return float(np.real(np.trace(np.asarray(op) @ rho.matrix)))


# -- batched helpers (leading axis indexes independent trajectories) ---------


def batch_probabilities(amplitudes: np.ndarray) -> np.ndarray:
    """|a|^2 summed over every axis but the first."""
    p = np.abs(amplitudes) ** 2
    return p.reshape(p.shape[0], -1).sum(axis=1)


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of ``probs`` (rows need not be normalized)."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)

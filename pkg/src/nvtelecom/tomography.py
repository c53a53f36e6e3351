"""Correlation tables, corrections and the three-basis fidelity bound.

A correlation table has two rows and counts spin readout outcomes (0 or 1)
per row. For ZZ the rows are the photon time bins E and L; for XX and YY the
photon outcome is fixed (middle-window D3 click) and the rows are the two
spin readout settings, +X (or +Y) mapped to |0> and -X (or -Y) mapped to
|0>. The contrast is the absolute difference of P(0) between the rows.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

BASES = ("Z", "X", "Y")
ROWS = {"Z": ("E", "L"), "X": ("+X", "-X"), "Y": ("+Y", "-Y")}
DETECTORS = ("D1", "D2", "D3", "D4")
WINDOW_NAMES = ("early", "middle", "late")
ORIGINS = ("signal", "noise", "dark")

CSV_COLUMNS = ("trial_id", "detector", "window", "origin", "timestamp", "spin_outcome", "basis", "readout")


class InsufficientSignalError(RuntimeError):
    pass


class Estimate(NamedTuple):
    value: float
    std: float


@dataclass(frozen=True)
class Proportion:
    value: float
    std: float
    n: float
    clamped: bool = False


# -- events ------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionEvent:
    trial_id: int
    detector: str
    window: str
    origin: str  # ground truth; estimators never read it
    timestamp: float
    spin_outcome: int = -1
    basis: str = "Z"
    readout: str = "+"  # spin readout setting, "+" or "-"

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}")
        if self.window not in WINDOW_NAMES:
            raise ValueError(f"unknown window {self.window!r}")
        if self.detector == "D2" and self.window == "middle":
            raise ValueError("D2 resolves only early and late bins")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")


@dataclass
class EventLog:
    """Column store of detection events, in time order."""

    trial_id: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    detector: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype="<U2"))
    window: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype="<U6"))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype="<U6"))
    timestamp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    spin_outcome: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    basis: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype="<U1"))
    readout: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype="<U1"))

    def __len__(self) -> int:
        return len(self.trial_id)

    def __iter__(self):
        for i in range(len(self)):
            yield DetectionEvent(
                int(self.trial_id[i]), str(self.detector[i]), str(self.window[i]),
                str(self.origin[i]), float(self.timestamp[i]), int(self.spin_outcome[i]),
                str(self.basis[i]), str(self.readout[i]),
            )

    @classmethod
    def from_events(cls, events: Iterable[DetectionEvent]) -> EventLog:
        events = list(events)
        return cls(
            np.array([e.trial_id for e in events], dtype=np.int64),
            np.array([e.detector for e in events], dtype="<U2"),
            np.array([e.window for e in events], dtype="<U6"),
            np.array([e.origin for e in events], dtype="<U6"),
            np.array([e.timestamp for e in events], dtype=float),
            np.array([e.spin_outcome for e in events], dtype=np.int8),
            np.array([e.basis for e in events], dtype="<U1"),
            np.array([e.readout for e in events], dtype="<U1"),
        )

    @classmethod
    def concat(cls, logs: Sequence[EventLog]) -> EventLog:
        if not logs:
            return cls()
        return cls(*(np.concatenate([getattr(l, c) for l in logs]) for c in CSV_COLUMNS))

    def select(self, mask) -> EventLog:
        return EventLog(*(getattr(self, c)[mask] for c in CSV_COLUMNS))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in zip(self.trial_id.tolist(), self.detector.tolist(), self.window.tolist(),
                       self.origin.tolist(), self.timestamp.tolist(), self.spin_outcome.tolist(),
                       self.basis.tolist(), self.readout.tolist()):
            w.writerow([row[0], row[1], row[2], row[3], repr(row[4]), *row[5:]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> EventLog:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        missing = set(CSV_COLUMNS) - set(rows[0].keys() if rows else CSV_COLUMNS)
        if missing:
            raise ValueError(f"event CSV lacks columns {sorted(missing)}")
        return cls.from_events(
            DetectionEvent(int(r["trial_id"]), r["detector"], r["window"], r["origin"],
                           float(r["timestamp"]), int(r["spin_outcome"]), r["basis"], r["readout"])
            for r in rows
        )

    def counts(self) -> dict:
        """Event counts keyed ``detector/window/origin``."""
        keys = np.char.add(np.char.add(np.char.add(self.detector, "/"), np.char.add(self.window, "/")), self.origin)
        uniq, n = np.unique(keys, return_counts=True)
        return {str(k): int(c) for k, c in zip(uniq, n)}


# -- correlation tables --------------------------------------------------------


@dataclass(frozen=True)
class CorrelationTable:
    basis: str
    counts: Mapping[tuple[str, int], float]

    @property
    def rows(self) -> tuple[str, str]:
        return ROWS[self.basis]

    def row(self, label: str) -> tuple[float, float]:
        return self.counts.get((label, 0), 0), self.counts.get((label, 1), 0)

    @property
    def total(self) -> float:
        return sum(self.counts.values())

    @classmethod
    def from_probabilities(cls, basis: str, p0: Sequence[float], n: Sequence[int]) -> CorrelationTable:
        """Table whose rows hold ``round(p0 * n)`` zeros out of ``n``."""
        counts = {}
        for label, p, m in zip(ROWS[basis], p0, n):
            k = int(round(p * m))
            counts[(label, 0)], counts[(label, 1)] = k, m - k
        return cls(basis, counts)


def table_from_events(events: EventLog, basis: str) -> CorrelationTable:
    """Tally the events that carry information about ``basis``.

    Z rows come from time-resolved clicks tagged with basis Z (D2, or D3 side
    windows when a run repurposes them). X and Y use middle-window D3 clicks
    only; D4 is never analysed.
    """
    out = events.spin_outcome
    tagged = events.basis == basis
    if basis == "Z":
        e = tagged & ((events.detector == "D2") | (events.detector == "D3")) & (events.window != "middle")
        row = np.where(events.window == "early", "E", "L")
    else:
        e = tagged & (events.detector == "D3") & (events.window == "middle")
        row = np.char.add(events.readout, basis)
    e = e & (out >= 0)
    counts = {}
    for label in ROWS[basis]:
        sel = e & (row == label)
        counts[(label, 0)] = int(np.count_nonzero(sel & (out == 0)))
        counts[(label, 1)] = int(np.count_nonzero(sel & (out == 1)))
    return CorrelationTable(basis, counts)


# -- corrections ---------------------------------------------------------------


def _binomial(n0: float, n1: float) -> Proportion:
    n = n0 + n1
    if n <= 0:
        raise InsufficientSignalError("empty photon-outcome row")
    p = n0 / n
    return Proportion(p, math.sqrt(p * (1 - p) / n), n)


def correct_readout(raw, f0: float, f1: float) -> Proportion:
    """Invert the spin readout confusion matrix [[f0, 1-f1], [1-f0, f1]].

    ``raw`` is a :class:`Proportion` or a pair of counts ``(n0, n1)``.
    Results outside [0, 1] are clamped and flagged.
    """
    if f0 + f1 <= 1:
        raise ValueError(f"singular readout correction: f0 + f1 = {f0 + f1:g} <= 1")
    if not isinstance(raw, Proportion):
        raw = _binomial(*raw)
    scale = f0 + f1 - 1
    p = (raw.value - (1 - f1)) / scale
    clamped = raw.clamped or not 0 <= p <= 1
    return Proportion(min(max(p, 0.0), 1.0), raw.std / scale, raw.n, clamped)


def correct_dark_counts(table: CorrelationTable, dark_fraction: float) -> dict[str, Proportion]:
    """Remove the expected spin-uncorrelated dark clicks from every row.

    Dark clicks make up ``dark_fraction`` of each row; their spin outcomes
    follow the outcome distribution pooled over the table.
    """
    if not 0 <= dark_fraction < 1:
        raise ValueError(f"dark fraction must lie in [0, 1), got {dark_fraction}")
    rows = [table.row(r) for r in table.rows]
    total = sum(n0 + n1 for n0, n1 in rows)
    if total <= 0:
        raise InsufficientSignalError(f"no events in {table.basis} table")
    q0 = sum(n0 for n0, _ in rows) / total
    out = {}
    for label, (n0, n1) in zip(table.rows, rows):
        n = n0 + n1
        if n <= 0:
            raise InsufficientSignalError(f"row {label!r} of the {table.basis} table is empty")
        dark = dark_fraction * n
        c0, c1 = n0 - dark * q0, n1 - dark * (1 - q0)
        clamped = c0 < 0 or c1 < 0
        c0, c1 = max(c0, 0.0), max(c1, 0.0)
        if c0 + c1 < 1:
            raise InsufficientSignalError(
                f"row {label!r}: {n:g} events, {dark:g} expected dark; nothing left after correction"
            )
        p_raw = n0 / n
        std = math.sqrt(p_raw * (1 - p_raw) / n) / (1 - dark_fraction)
        out[label] = Proportion(c0 / (c0 + c1), std, c0 + c1, clamped)
    return out


def contrast_of(a: Proportion, b: Proportion) -> Estimate:
    return Estimate(abs(a.value - b.value), math.hypot(a.std, b.std))


def contrast(table: CorrelationTable) -> Estimate:
    """Uncorrected |P_a(0) - P_b(0)| with binomial errors in quadrature."""
    a, b = (_row_proportion(table, r) for r in table.rows)
    return contrast_of(a, b)


def _row_proportion(table: CorrelationTable, label: str) -> Proportion:
    n0, n1 = table.row(label)
    if n0 + n1 <= 0:
        raise InsufficientSignalError(
            f"{table.basis} table has no events in row {label!r}; counts {dict(table.counts)}"
        )
    return _binomial(n0, n1)


# -- fidelity ------------------------------------------------------------------


@dataclass(frozen=True)
class TomographyResult:
    e_x: Estimate | None
    e_y: Estimate | None
    e_z: Estimate | None
    fidelity: Estimate | None
    sigma_above_classical: float | None
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        def est(e):
            return None if e is None else {"value": e.value, "std": e.std}

        sig = self.sigma_above_classical
        return {
            "E_X": est(self.e_x),
            "E_Y": est(self.e_y),
            "E_Z": est(self.e_z),
            "fidelity": est(self.fidelity),
            "sigma_above_classical": sig if sig is None or math.isfinite(sig) else None,
            "flags": list(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> TomographyResult:
        def est(v):
            return None if v is None else Estimate(float(v["value"]), float(v["std"]))

        return cls(est(d["E_X"]), est(d["E_Y"]), est(d["E_Z"]), est(d["fidelity"]),
                   d.get("sigma_above_classical"), tuple(d.get("flags", ())))


def _as_estimate(e) -> Estimate:
    return e if isinstance(e, Estimate) else Estimate(float(e), 0.0)


def fidelity(e_x, e_y, e_z) -> TomographyResult:
    """Fidelity lower bound (1 + E_X + E_Y + E_Z) / 4 to the target Bell state."""
    ex, ey, ez = (_as_estimate(e) for e in (e_x, e_y, e_z))
    for name, e in zip(("E_X", "E_Y", "E_Z"), (ex, ey, ez)):
        if not -1e-12 <= e.value <= 1 + 1e-12:
            raise ValueError(f"{name} = {e.value} outside [0, 1]")
    f = (1 + ex.value + ey.value + ez.value) / 4
    std = math.sqrt(ex.std**2 + ey.std**2 + ez.std**2) / 4
    sigma = (f - 0.5) / std if std > 0 else math.copysign(math.inf, f - 0.5)
    return TomographyResult(ex, ey, ez, Estimate(f, std), sigma)


# -- full estimator ------------------------------------------------------------


@dataclass(frozen=True)
class TomographyCalibration:
    f0: float = 0.95
    f1: float = 0.995
    dark_fraction: float | Mapping[str, float] = 0.0

    def dark_for(self, basis: str) -> float:
        d = self.dark_fraction
        return float(d.get(basis, 0.0)) if isinstance(d, Mapping) else float(d)


def basis_contrast(table: CorrelationTable, cal: TomographyCalibration) -> tuple[Estimate, list[str]]:
    rows = correct_dark_counts(table, cal.dark_for(table.basis))
    flags = []
    corrected = []
    for label in table.rows:
        p = correct_readout(rows[label], cal.f0, cal.f1)
        if p.clamped:
            flags.append(f"{table.basis}:{label} clamped")
        corrected.append(p)
    return contrast_of(*corrected), flags


def estimate(events, spin_outcomes=None, cal: TomographyCalibration | None = None) -> TomographyResult:
    """Contrasts and fidelity from detection events.

    ``events`` is an :class:`EventLog` or a sequence of
    :class:`DetectionEvent`; ``spin_outcomes`` overrides the events' own
    outcome column. Bases without events come back as None, and so does the
    fidelity unless all three are present.
    """
    cal = cal or TomographyCalibration()
    log = events if isinstance(events, EventLog) else EventLog.from_events(events)
    if spin_outcomes is not None:
        spin = np.asarray(spin_outcomes, dtype=np.int8)
        if spin.shape != log.spin_outcome.shape:
            raise ValueError("one spin outcome per event required")
        log = EventLog(log.trial_id, log.detector, log.window, log.origin, log.timestamp,
                       spin, log.basis, log.readout)
    contrasts: dict[str, Estimate | None] = {}
    flags: list[str] = []
    for b in BASES:
        table = table_from_events(log, b)
        if table.total == 0:
            contrasts[b] = None
            flags.append(f"{b}: absent")
            continue
        contrasts[b], f = basis_contrast(table, cal)
        flags.extend(f)
    if all(contrasts[b] is not None for b in BASES):
        r = fidelity(contrasts["X"], contrasts["Y"], contrasts["Z"])
        return TomographyResult(r.e_x, r.e_y, r.e_z, r.fidelity, r.sigma_above_classical, tuple(flags))
    return TomographyResult(contrasts["X"], contrasts["Y"], contrasts["Z"], None, None, tuple(flags))


def readout_sensitivity(events: EventLog, cal: TomographyCalibration,
                        f0_values: Sequence[float], f1_values: Sequence[float]) -> list[dict]:
    """Re-estimate over a grid of readout fidelities."""
    rows = []
    for f0 in f0_values:
        for f1 in f1_values:
            c = TomographyCalibration(f0, f1, cal.dark_fraction)
            r = estimate(events, cal=c)
            rows.append({"f0": f0, "f1": f1, **{k: v for k, v in r.to_dict().items() if k != "flags"}})
    return rows


"""Williams-Beer partial information decomposition for two discrete sources and one target.

All quantities are in bits. The joint table is indexed ``probs[s1, s2, t]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

MAX_ALPHABET = 64
MASS_TOLERANCE = 1e-12


class PMFValidationError(ValueError):
    pass


@dataclass(frozen=True)
class JointPMF:
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 3:
            raise PMFValidationError(f"joint table must be 3-D (s1, s2, t), got {probs.ndim}-D")
        if any(not 1 <= n <= MAX_ALPHABET for n in probs.shape):
            raise PMFValidationError(f"alphabet sizes must lie in [1, {MAX_ALPHABET}], got {probs.shape}")
        if not np.all(np.isfinite(probs)):
            raise PMFValidationError("probabilities must be finite")
        if np.any(probs < 0):
            raise PMFValidationError("probabilities must be non-negative")
        total = probs.sum()
        if abs(total - 1.0) > MASS_TOLERANCE:
            raise PMFValidationError(f"probabilities sum to {total!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def alphabet_sizes(self) -> tuple[int, int, int]:
        return tuple(self.probs.shape)

    @classmethod
    def from_samples(cls, s1, s2, t, alphabet_sizes: tuple[int, int, int] | None = None) -> JointPMF:
        """Empirical pmf of aligned integer symbol sequences."""
        cols = [np.asarray(c, dtype=np.int64).ravel() for c in (s1, s2, t)]
        n = len(cols[0])
        if n == 0 or any(len(c) != n for c in cols):
            raise PMFValidationError("sample sequences must be non-empty and of equal length")
        if any(c.min() < 0 for c in cols):
            raise PMFValidationError("symbols must be non-negative integers")
        if alphabet_sizes is None:
            alphabet_sizes = tuple(int(c.max()) + 1 for c in cols)
        if any(c.max() >= size for c, size in zip(cols, alphabet_sizes)):
            raise PMFValidationError("symbol outside the declared alphabet")
        counts = np.zeros(alphabet_sizes)
        np.add.at(counts, tuple(cols), 1.0)
        return cls(counts / n)


@dataclass(frozen=True)
class PIDResult:
    joint_mi: float
    redundancy: float
    unique1: float
    unique2: float
    synergy: float

    def as_dict(self) -> dict[str, float]:
        return {
            "joint_mi": self.joint_mi,
            "redundancy": self.redundancy,
            "unique1": self.unique1,
            "unique2": self.unique2,
            "synergy": self.synergy,
        }


def _source_target_table(pmf: JointPMF, sources: Iterable[int]) -> np.ndarray:
    """Collapse the joint table to p(s, t) with s the (possibly joint) source symbol."""
    chosen = sorted(set(sources))
    if not chosen or any(s not in (1, 2) for s in chosen):
        raise ValueError(f"sources must be a non-empty subset of {{1, 2}}, got {sources!r}")
    p = pmf.probs
    if chosen == [1]:
        return p.sum(axis=1)
    if chosen == [2]:
        return p.sum(axis=0)
    return p.reshape(-1, p.shape[2])


def mutual_information(pmf: JointPMF, sources: Iterable[int] = (1, 2)) -> float:
    """I(S; T) in bits, where S is source 1, source 2, or the pair."""
    pst = _source_target_table(pmf, sources)
    ps = pst.sum(axis=1, keepdims=True)
    pt = pst.sum(axis=0, keepdims=True)
    mask = pst > 0
    ratio = pst[mask] / (ps * pt)[np.nonzero(mask)]
    return max(float(np.sum(pst[mask] * np.log2(ratio))), 0.0)


def specific_information(pmf: JointPMF, sources: Iterable[int], t: int) -> float:
    """Information the sources carry about the single outcome T = t.

    ``sum_s p(s|t) * log2(p(t|s) / p(t))``; can be negative for individual
    outcomes but averages to I(S; T).
    """
    pst = _source_target_table(pmf, sources)
    if not 0 <= t < pst.shape[1]:
        raise ValueError(f"target symbol {t} outside alphabet of size {pst.shape[1]}")
    pt = pst[:, t].sum()
    if pt <= 0:
        raise ValueError(f"p(T={t}) is zero; specific information undefined")
    joint = pst[:, t]
    ps = pst.sum(axis=1)
    mask = joint > 0
    s_given_t = joint[mask] / pt
    t_given_s = joint[mask] / ps[mask]
    return float(np.sum(s_given_t * (np.log2(t_given_s) - np.log2(pt))))


def i_min_redundancy(pmf: JointPMF) -> float:
    pt = pmf.probs.sum(axis=(0, 1))
    total = 0.0
    for t in np.flatnonzero(pt > 0):
        total += pt[t] * min(specific_information(pmf, (1,), t), specific_information(pmf, (2,), t))
    return max(float(total), 0.0)


def decompose(pmf: JointPMF) -> PIDResult:
    joint = mutual_information(pmf, (1, 2))
    mi1 = mutual_information(pmf, (1,))
    mi2 = mutual_information(pmf, (2,))
    redundancy = i_min_redundancy(pmf)
    unique1 = mi1 - redundancy
    unique2 = mi2 - redundancy
    synergy = joint - redundancy - unique1 - unique2
    return PIDResult(joint, redundancy, unique1, unique2, synergy)


def discretize(columns, bins: int) -> np.ndarray:
    """Equal-width binning between each column's min and max.

    Bins are half-open ``[lo, hi)`` except the last, which is closed. A
    constant column maps to bin 0. A 2-D input is binned column-wise and the
    per-column bins are combined into one mixed-radix symbol per row.
    """
    if not 1 <= bins <= MAX_ALPHABET:
        raise ValueError(f"bins must lie in [1, {MAX_ALPHABET}]")
    x = np.asarray(columns, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot discretize non-finite values")
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    idx = np.floor((x - lo) * bins / safe).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    idx[:, span == 0] = 0
    if squeeze:
        return idx[:, 0]
    symbols = np.zeros(x.shape[0], dtype=np.int64)
    for j in range(x.shape[1]):
        symbols = symbols * bins + idx[:, j]
    return symbols


def load_pmf_csv(path: str | Path) -> JointPMF:
    """Read a ``s1,s2,t,p`` CSV; unlisted cells have probability zero."""
    cells: dict[tuple[int, int, int], float] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["s1", "s2", "t", "p"]:
            raise PMFValidationError("pmf CSV header must be exactly s1,s2,t,p")
        for lineno, row in enumerate(reader, start=2):
            try:
                key = (int(row["s1"]), int(row["s2"]), int(row["t"]))
                value = float(row["p"])
            except (TypeError, ValueError) as exc:
                raise PMFValidationError(f"line {lineno}: malformed row") from exc
            if min(key) < 0:
                raise PMFValidationError(f"line {lineno}: negative symbol")
            if key in cells:
                raise PMFValidationError(f"line {lineno}: duplicate cell {key}")
            cells[key] = value
    if not cells:
        raise PMFValidationError("pmf CSV has no rows")
    shape = tuple(max(k[i] for k in cells) + 1 for i in range(3))
    if any(n > MAX_ALPHABET for n in shape):
        raise PMFValidationError(f"alphabet sizes {shape} exceed {MAX_ALPHABET}")
    probs = np.zeros(shape)
    for key, value in cells.items():
        probs[key] = value
    return JointPMF(probs)


def save_pmf_csv(pmf: JointPMF, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s1", "s2", "t", "p"])
        for key in zip(*np.nonzero(pmf.probs)):
            writer.writerow([*map(int, key), repr(float(pmf.probs[key]))])

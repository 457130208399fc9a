"""Multi-center cohorts: built-in center profiles, synthetic non-IID data,
CSV ingestion and per-center stratified k-fold splitting."""

from __future__ import annotations

import csv
import io
import os
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from fedsim.errors import EmptyInputError, FormatError, LabelError, ParameterError
from fedsim.numkit import RngStream

RISK_LEVELS = ("no", "low", "high")
_TOKENS_3 = {tok: i for i, tok in enumerate(RISK_LEVELS)}
_TOKENS_2 = {"0": 0, "1": 1}


@dataclass(frozen=True)
class CenterProfile:
    name: str
    no_risk: int
    low_risk: int
    high_risk: int
    modality: str = "T1"

    def __post_init__(self):
        if min(self.no_risk, self.low_risk, self.high_risk) < 0:
            raise ParameterError(f"{self.name}: class counts must be non-negative")

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.no_risk, self.low_risk, self.high_risk)

    @property
    def total(self) -> int:
        return self.no_risk + self.low_risk + self.high_risk

    def class_counts(self, num_classes: int) -> tuple[int, ...]:
        if num_classes == 3:
            return self.counts
        return (self.no_risk + self.low_risk, self.high_risk)


# (name, T1 no/low/high, T2 no/low/high)
_TABLE = (
    ("NYU", (48, 79, 23), (48, 79, 24)),
    ("MCF", (29, 42, 63), (25, 42, 63)),
    ("NU", (43, 126, 17), (44, 127, 16)),
    ("AHN", (1, 11, 4), (1, 13, 4)),
    ("MCA", (0, 10, 14), (0, 7, 16)),
    ("IU", (3, 48, 13), (3, 46, 14)),
    ("EMC", (40, 23, 15), (38, 30, 15)),
)

CENTER_FULL_NAMES = {
    "NYU": "New York University Langone Health",
    "MCF": "Mayo Clinic Florida",
    "NU": "Northwestern University",
    "AHN": "Allegheny Health Network",
    "MCA": "Mayo Clinic Arizona",
    "IU": "Istanbul University Faculty of Medicine",
    "EMC": "Erasmus Medical Center",
}


def builtin_profiles(modality: str = "T1") -> list[CenterProfile]:
    """The seven pancreas MRI centers in their canonical order."""
    modality = modality.upper()
    if modality not in ("T1", "T2"):
        raise ParameterError(f"modality must be T1 or T2, got {modality!r}")
    col = 1 if modality == "T1" else 2
    return [CenterProfile(row[0], *row[col], modality=modality) for row in _TABLE]


def binarize(label3) -> int:
    """High risk vs. everything else. Accepts a token or a class index."""
    if isinstance(label3, str):
        try:
            label3 = _TOKENS_3[label3.strip().lower()]
        except KeyError:
            raise LabelError(f"unknown risk label {label3!r}") from None
    if label3 not in (0, 1, 2):
        raise LabelError(f"risk level must be 0, 1 or 2, got {label3!r}")
    return int(label3 == 2)


@dataclass
class Center:
    """One institution's examples. ``risk`` keeps the no/low/high level
    (0/1/2) when it is known, even after labels have been binarized."""

    name: str
    X: np.ndarray
    y: np.ndarray
    profile: CenterProfile | None = None
    risk: np.ndarray | None = None

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    def subset(self, mask) -> "Center":
        risk = None if self.risk is None else self.risk[mask]
        return Center(self.name, self.X[mask], self.y[mask], self.profile, risk)

    def risk_counts(self) -> tuple[int, int, int] | None:
        if self.risk is None:
            return None
        return tuple(int(np.sum(self.risk == k)) for k in range(3))


@dataclass
class Cohort:
    centers: list[Center]
    num_classes: int

    @property
    def feature_dim(self) -> int:
        return int(self.centers[0].X.shape[1])

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.centers]

    def class_counts(self) -> list[tuple[int, ...]]:
        return [tuple(int(np.sum(c.y == k)) for k in range(self.num_classes))
                for c in self.centers]

    def binarized(self) -> "Cohort":
        if self.num_classes == 2:
            return self
        return Cohort([Center(c.name, c.X, (c.y == 2).astype(np.int64), c.profile, c.y)
                       for c in self.centers], 2)

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.concatenate([c.X for c in self.centers]),
                np.concatenate([c.y for c in self.centers]))

    def equals(self, other: "Cohort") -> bool:
        if self.num_classes != other.num_classes or self.names != other.names:
            return False
        return all(np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
                   for a, b in zip(self.centers, other.centers))


def synth_generate(
    profiles: Sequence[CenterProfile],
    feature_dim: int,
    center_shift: float,
    class_separation: float,
    seed: int,
    num_classes: int = 2,
) -> Cohort:
    """Gaussian cohort with exact per-(center, class) counts.

    Center ``k`` gets an offset ``c_k ~ N(0, center_shift^2 I)``; an example of
    class ``y`` is drawn from ``N(c_k + y * class_separation * e_0, I)``.
    Examples are produced risk cell by risk cell (no, low, high); with
    ``num_classes=2`` the class is the binarized risk.
    """
    if feature_dim < 1:
        raise ParameterError("feature_dim must be >= 1")
    if center_shift < 0 or class_separation < 0:
        raise ParameterError("center_shift and class_separation must be >= 0")
    if num_classes not in (2, 3):
        raise ParameterError("num_classes must be 2 or 3")

    centers = []
    for k, prof in enumerate(profiles):
        offset = center_shift * RngStream(seed, "synth.offset", k).generator().standard_normal(feature_dim)
        gen = RngStream(seed, "synth.examples", k).generator()
        xs, risks = [], []
        for risk, count in enumerate(prof.counts):
            label = risk if num_classes == 3 else binarize(risk)
            mean = offset.copy()
            mean[0] += label * class_separation
            xs.append(mean + gen.standard_normal((count, feature_dim)))
            risks.append(np.full(count, risk, dtype=np.int64))
        risk = np.concatenate(risks)
        y = risk.copy() if num_classes == 3 else (risk == 2).astype(np.int64)
        centers.append(Center(prof.name, np.concatenate(xs), y, prof, risk))
    return Cohort(centers, num_classes)


def load_csv(path: str | os.PathLike) -> Cohort:
    """Read ``center,label,f0,...`` rows, grouping by first appearance of center."""
    with open(path, newline="") as fh:
        text = fh.read()
    return parse_csv(text)


def parse_csv(text: str) -> Cohort:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise EmptyInputError("empty cohort file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[0] != "center" or header[1] != "label":
        raise FormatError("header must be 'center,label,f0,...,f{d-1}'", line=1)
    d = len(header) - 2
    if header[2:] != [f"f{i}" for i in range(d)]:
        raise FormatError("feature columns must be named f0..f{d-1} in order", line=1)

    tokens = None
    groups: dict[str, tuple[list, list]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 2:
            raise FormatError(f"expected {d + 2} fields, got {len(row)}", line=lineno)
        tok = row[1].strip().lower()
        if tokens is None:
            tokens = _TOKENS_3 if tok in _TOKENS_3 else _TOKENS_2
        if tok not in tokens:
            raise LabelError(f"unknown or mixed label token {row[1]!r}", line=lineno)
        try:
            feats = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise FormatError(f"bad feature value ({exc})", line=lineno) from None
        if not np.all(np.isfinite(feats)):
            raise FormatError("non-finite feature value", line=lineno)
        xs, ys = groups.setdefault(row[0], ([], []))
        xs.append(feats)
        ys.append(tokens[tok])
    if not groups:
        raise EmptyInputError("cohort file has a header but no rows")

    three = tokens is _TOKENS_3
    centers = []
    for name, (xs, ys) in groups.items():
        y = np.array(ys, dtype=np.int64)
        centers.append(Center(name, np.array(xs, dtype=np.float64).reshape(-1, d), y,
                              risk=y.copy() if three else None))
    return Cohort(centers, 3 if three else 2)


def format_csv(cohort: Cohort) -> str:
    d = cohort.feature_dim
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["center", "label"] + [f"f{i}" for i in range(d)])
    for c in cohort.centers:
        # risk tokens whenever the level is known, so binarized cohorts keep it
        if c.risk is not None:
            tokens = [RISK_LEVELS[r] for r in c.risk]
        elif cohort.num_classes == 3:
            tokens = [RISK_LEVELS[y] for y in c.y]
        else:
            tokens = [str(int(y)) for y in c.y]
        for x, tok in zip(c.X, tokens):
            writer.writerow([c.name, tok] + [format(float(v), ".17g") for v in x])
    return out.getvalue()


def write_csv(cohort: Cohort, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_csv(cohort))


@dataclass
class FoldAssignment:
    """``folds[c][i]`` is the fold index of example ``i`` in center ``c``."""

    k: int
    folds: list[np.ndarray]

    def split(self, cohort: Cohort, fold: int) -> tuple[Cohort, Cohort]:
        if not 0 <= fold < self.k:
            raise ParameterError(f"fold {fold} outside [0, {self.k})")
        train, test = [], []
        for c, f in zip(cohort.centers, self.folds):
            train.append(c.subset(f != fold))
            test.append(c.subset(f == fold))
        return Cohort(train, cohort.num_classes), Cohort(test, cohort.num_classes)


def _deal(cohort: Cohort, k: int, seed: int, purpose: str) -> list[np.ndarray]:
    folds = []
    for ci, c in enumerate(cohort.centers):
        assign = np.empty(c.n, dtype=np.int64)
        dealer = 0
        for label in range(cohort.num_classes):
            idx = np.flatnonzero(c.y == label)
            idx = idx[RngStream(seed, purpose, ci, label).generator().permutation(idx.size)]
            # the dealer position carries over between cells to even out fold totals
            assign[idx] = (dealer + np.arange(idx.size)) % k
            dealer = (dealer + idx.size) % k
        folds.append(assign)
    return folds


def stratified_kfold(cohort: Cohort, k: int, seed: int) -> FoldAssignment:
    """Shuffle each (center, class) cell and deal it round-robin into ``k`` folds."""
    if k < 2:
        raise ParameterError(f"k must be >= 2, got {k}")
    return FoldAssignment(k, _deal(cohort, k, seed, "kfold"))


def stratified_holdout(cohort: Cohort, fraction: float, seed: int) -> tuple[Cohort, Cohort]:
    """Split off roughly ``fraction`` of every (center, class) cell.

    Used to carve a checkpoint-selection split out of a training fold.
    """
    if not 0 < fraction < 1:
        raise ParameterError("holdout fraction must lie in (0, 1)")
    k = max(2, round(1.0 / fraction))
    folds = _deal(cohort, k, seed, "holdout")
    keep = [c.subset(f != 0) for c, f in zip(cohort.centers, folds)]
    held = [c.subset(f == 0) for c, f in zip(cohort.centers, folds)]
    return Cohort(keep, cohort.num_classes), Cohort(held, cohort.num_classes)

"""Counterfactual search over protected attributes.

A k-nearest-neighbor classifier (taxicab distance over a fixed 7-coordinate
encoding) labels observations High or Low custody.  For a base observation,
the search enumerates every combination of the protected coordinates (sex,
age band, race) with the quantitative coordinates held fixed, and keeps the
nearby candidates whose classification flips.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import product

import numpy as np

from .dataset import Cohort, Record, ValidationError, race_label

CLASS_LOW = "Low"
CLASS_HIGH = "High"

FIELDS = ("gender_female", "age_cat", "race",
          "off_1_prs_max", "off_1_gs_max", "prior_commits", "ic_institut_adj")
PROTECTED_FIELDS = ("gender_female", "age_cat", "race")

# coordinate encodings: sex 0 male / 1 female; age band 0 young (<25),
# 1 middle (25..45), 2 older (>45); race 0 Black, 1 Hispanic, 2 White
AGE_YOUNG, AGE_MIDDLE, AGE_OLDER = 0, 1, 2
RACE_CODES = {"Black": 0, "Hispanic": 1, "White": 2}

GENDER_VALUES = (0, 1)
AGE_VALUES = (AGE_YOUNG, AGE_MIDDLE, AGE_OLDER)
RACE_VALUES = tuple(sorted(RACE_CODES.values()))


@dataclass(frozen=True)
class CfPoint:
    gender_female: float
    age_cat: float
    race: float
    off_1_prs_max: float
    off_1_gs_max: float
    prior_commits: float
    ic_institut_adj: float

    def astuple(self) -> tuple:
        return (self.gender_female, self.age_cat, self.race, self.off_1_prs_max,
                self.off_1_gs_max, self.prior_commits, self.ic_institut_adj)

    def replace_protected(self, gender, age_cat, race) -> "CfPoint":
        return CfPoint(gender, age_cat, race, self.off_1_prs_max,
                       self.off_1_gs_max, self.prior_commits, self.ic_institut_adj)


def cf_point_from_record(record: Record, schema) -> CfPoint | None:
    """Encode a record; None when its race falls outside Black/Hispanic/White
    (the analysis subsets the data to those three categories)."""
    race = race_label(record, schema)
    if race not in RACE_CODES:
        return None
    if record.values["age_lt_25"] == 1:
        age_cat = AGE_YOUNG
    elif record.values["age_gt_45"] == 1:
        age_cat = AGE_OLDER
    else:
        age_cat = AGE_MIDDLE
    return CfPoint(
        gender_female=float(record.values["gender_female"]),
        age_cat=float(age_cat),
        race=float(RACE_CODES[race]),
        off_1_prs_max=float(record.values["off_1_prs_max"]),
        off_1_gs_max=float(record.values["off_1_gs_max"]),
        prior_commits=float(record.values["prior_commits"]),
        ic_institut_adj=float(record.values["ic_institut_adj"]),
    )


def cf_label_from_record(record: Record) -> str:
    return CLASS_HIGH if record.custody_level > 3 else CLASS_LOW


def taxicab(p: CfPoint, q: CfPoint) -> float:
    """L1 distance over all seven coordinates."""
    return float(sum(abs(a - b) for a, b in zip(p.astuple(), q.astuple())))


@dataclass(frozen=True)
class KnnClassifier:
    points: np.ndarray  # (n, 7) float
    labels: tuple
    k: int

    def __post_init__(self):
        if self.k % 2 == 0 or self.k < 1:
            raise ValidationError("k must be an odd positive count")
        if self.k > len(self.labels):
            raise ValidationError("k exceeds the training-set size")
        if self.points.shape != (len(self.labels), len(FIELDS)):
            raise ValidationError("training matrix shape does not match labels")

    @classmethod
    def from_pairs(cls, pairs, k: int) -> "KnnClassifier":
        points = np.asarray([p.astuple() for p, _ in pairs], dtype=np.float64)
        labels = tuple(lbl for _, lbl in pairs)
        return cls(points=points, labels=labels, k=k)

    @classmethod
    def from_cohort(cls, cohort: Cohort, k: int = 5) -> "KnnClassifier":
        pairs = []
        for rec in cohort.records:
            point = cf_point_from_record(rec, cohort.schema)
            if point is not None:
                pairs.append((point, cf_label_from_record(rec)))
        if not pairs:
            raise ValidationError("no Black/Hispanic/White records to train on")
        return cls.from_pairs(pairs, k)


def knn_classify(knn: KnnClassifier, point: CfPoint) -> str:
    """Majority class of the k nearest training points; distance ties resolve
    by training-set order, class ties default Low."""
    distances = np.abs(knn.points - np.asarray(point.astuple())).sum(axis=1)
    nearest = np.argsort(distances, kind="stable")[: knn.k]
    high = sum(1 for i in nearest if knn.labels[i] == CLASS_HIGH)
    low = knn.k - high
    return CLASS_HIGH if high > low else CLASS_LOW


@dataclass(frozen=True)
class Counterfactual:
    base: CfPoint
    changes: tuple  # of (field, old, new), in coordinate order
    new_class: str
    distance: float


def find_counterfactuals(knn: KnnClassifier, base: CfPoint,
                         max_distance: float = 3.0) -> list:
    """All protected-coordinate combinations (holding the four quantitative
    coordinates fixed) whose class flips within the distance budget, sorted
    by distance then lexicographically."""
    base_class = knn_classify(knn, base)
    base_protected = (base.gender_female, base.age_cat, base.race)
    found = []
    for combo in product(GENDER_VALUES, AGE_VALUES, RACE_VALUES):
        candidate_protected = tuple(float(v) for v in combo)
        if candidate_protected == base_protected:
            continue
        candidate = base.replace_protected(*candidate_protected)
        distance = sum(abs(a - b) for a, b in zip(candidate_protected, base_protected))
        if distance > max_distance:
            continue
        new_class = knn_classify(knn, candidate)
        if new_class == base_class:
            continue
        changes = tuple(
            (name, old, new)
            for name, old, new in zip(PROTECTED_FIELDS, base_protected, candidate_protected)
            if old != new
        )
        cf = Counterfactual(base=base, changes=changes,
                            new_class=new_class, distance=float(distance))
        found.append((float(distance), candidate.astuple(), cf))
    found.sort(key=lambda item: item[:2])
    return [cf for _, _, cf in found]


def counterfactual_rate(knn: KnnClassifier, sample, max_distance: float = 3.0):
    """(hits, fraction): how many sample points admit a counterfactual."""
    points = list(sample)
    if not points:
        raise ValidationError("empty sample")
    hits = sum(1 for p in points if find_counterfactuals(knn, p, max_distance))
    return hits, hits / len(points)


def format_changes(cf: Counterfactual) -> str:
    return ", ".join(f"{name}: {old:g} -> {new:g}" for name, old, new in cf.changes)


def write_counterfactual_csv(rows, path) -> None:
    """rows: iterable of (base point, base class, counterfactual)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["base", "base_class", "changes", "new_class", "distance"])
        for base, base_class, cf in rows:
            writer.writerow([
                "(" + ", ".join(f"{v:g}" for v in base.astuple()) + ")",
                base_class, format_changes(cf), cf.new_class, repr(cf.distance),
            ])

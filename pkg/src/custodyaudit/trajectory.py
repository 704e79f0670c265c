"""Repeated-reclassification simulation.

Each simulated year the previous predicted custody level is written into the
previous-level feature, age is incremented, every other variable is held
fixed, and the reclassification model is applied again.  This isolates the
feedback of the model's own output (plus the passage of time) on a person's
custody-level trajectory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import Cohort, Record, ValidationError, race_label
from .forest import RandomForest, predict_matrix, record_vector
from .rng import substream

FEEDBACK_VARIABLE = "ic_custdy_level"
AGE_VARIABLE = "age"


@dataclass(frozen=True)
class Trajectory:
    person_id: int
    start_level: int
    levels: tuple
    ages: tuple


@dataclass(frozen=True)
class TrajectoryEnsemble:
    trajectories: tuple
    grouping: tuple  # (start_level, race label or None)
    horizon: int
    with_replacement: bool = False


@dataclass(frozen=True)
class VolatilityStat:
    group: tuple
    mean_change_per_person_year: float


def _check_forest(forest: RandomForest) -> dict:
    index = {n: i for i, n in enumerate(forest.feature_order)}
    for required in (FEEDBACK_VARIABLE, AGE_VARIABLE):
        if required not in index:
            raise ValidationError(
                f"forest lacks the '{required}' feature; train it on the reclassification view"
            )
    return index


def _simulate_matrix(forest, X0, start_levels, ages0, years):
    """Run the feedback loop on a batch; returns an int matrix of shape
    (n_people, years + 1) whose first column is the start level."""
    index = _check_forest(forest)
    n = X0.shape[0]
    series = np.empty((n, years + 1), dtype=np.int64)
    series[:, 0] = start_levels
    X = X0.copy()
    current = np.asarray(start_levels, dtype=np.float64)
    for t in range(1, years + 1):
        X[:, index[FEEDBACK_VARIABLE]] = current
        X[:, index[AGE_VARIABLE]] = ages0 + t
        preds = predict_matrix(forest, X)
        series[:, t] = preds
        current = preds.astype(np.float64)
    return series


def simulate_individual(reclass_forest: RandomForest, base: Record, years: int) -> Trajectory:
    """One person's trajectory over `years` reclassifications (deterministic)."""
    if years < 0:
        raise ValidationError("years must be >= 0")
    x = record_vector(reclass_forest, base)[np.newaxis, :]
    age0 = base.values[AGE_VARIABLE]
    if years == 0:
        series = np.asarray([[base.custody_level]])
    else:
        series = _simulate_matrix(reclass_forest, x, [base.custody_level], np.asarray([age0]), years)
    ages = tuple(int(age0) + t for t in range(years + 1))
    return Trajectory(person_id=0, start_level=base.custody_level,
                      levels=tuple(int(v) for v in series[0]), ages=ages)


def simulate_ensemble(reclass_forest: RandomForest, cohort: Cohort, per_group: int,
                      groups, years: int, seed: int) -> list:
    """Simulate sampled people per group; groups are start levels or
    (start level, race label) pairs.

    Sampling is uniform without replacement; groups smaller than requested
    fall back to sampling with replacement and are flagged.
    """
    if per_group < 1:
        raise ValidationError("per-group sample size must be >= 1")
    if years < 1:
        raise ValidationError("horizon must be >= 1")
    schema = cohort.schema
    by_group: dict = {}
    for i, rec in enumerate(cohort.records):
        by_group.setdefault(rec.custody_level, []).append(i)
        by_group.setdefault((rec.custody_level, race_label(rec, schema)), []).append(i)

    ensembles = []
    for group in groups:
        rows = by_group.get(group, [])
        if not rows:
            raise ValidationError(f"no records in group {group!r}")
        rng = substream(seed, "trajectory", group if isinstance(group, tuple) else (group,))
        if len(rows) >= per_group:
            chosen = [rows[j] for j in rng.permutation(len(rows))[:per_group]]
            replacement = False
        else:
            chosen = [rows[int(j)] for j in rng.integers(0, len(rows), size=per_group)]
            replacement = True
        records = [cohort.records[i] for i in chosen]
        X0 = np.stack([record_vector(reclass_forest, r) for r in records])
        starts = [r.custody_level for r in records]
        ages0 = np.asarray([r.values[AGE_VARIABLE] for r in records], dtype=np.float64)
        series = _simulate_matrix(reclass_forest, X0, starts, ages0, years)
        trajectories = tuple(
            Trajectory(
                person_id=chosen[i],
                start_level=starts[i],
                levels=tuple(int(v) for v in series[i]),
                ages=tuple(int(ages0[i]) + t for t in range(years + 1)),
            )
            for i in range(len(records))
        )
        grouping = group if isinstance(group, tuple) else (group, None)
        ensembles.append(TrajectoryEnsemble(
            trajectories=trajectories, grouping=grouping, horizon=years,
            with_replacement=replacement,
        ))
    return ensembles


def average_trajectory(ensemble: TrajectoryEnsemble) -> list:
    """Pointwise mean custody level at each step."""
    if not ensemble.trajectories:
        raise ValidationError("empty ensemble")
    arr = np.asarray([t.levels for t in ensemble.trajectories], dtype=np.float64)
    return [float(v) for v in arr.mean(axis=0)]


def volatility(trajectory: Trajectory) -> float:
    """Average absolute year-to-year custody-level change: sum |delta| / years."""
    steps = len(trajectory.levels) - 1
    if steps < 1:
        raise ValidationError("volatility needs at least one step")
    total = sum(abs(trajectory.levels[t] - trajectory.levels[t - 1])
                for t in range(1, len(trajectory.levels)))
    return total / steps


def volatility_table(ensembles) -> list:
    """Mean per-person volatility for each ensemble's group."""
    stats = []
    for ens in ensembles:
        if not ens.trajectories:
            raise ValidationError(f"empty ensemble for group {ens.grouping!r}")
        vols = [volatility(t) for t in ens.trajectories]
        stats.append(VolatilityStat(
            group=ens.grouping,
            mean_change_per_person_year=float(np.mean(vols)),
        ))
    return stats


def default_groups(cohort: Cohort, races=None) -> list:
    """The classic four start levels 2..5 (those present in the cohort),
    optionally crossed with race labels."""
    present = {r.custody_level for r in cohort.records}
    levels = [l for l in (2, 3, 4, 5) if l in present]
    if races is None:
        return levels
    return [(l, race) for l in levels for race in races]


def write_trajectories_csv(ensembles, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["person_id", "start_level", "race", "step", "age", "level"])
        for ens in ensembles:
            level, race = ens.grouping
            for traj in ens.trajectories:
                for step, (age, lvl) in enumerate(zip(traj.ages, traj.levels)):
                    writer.writerow([traj.person_id, level, race or "", step, age, lvl])


def write_averages_csv(ensembles, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_level", "race", "step", "mean_level"])
        for ens in ensembles:
            level, race = ens.grouping
            for step, mean in enumerate(average_trajectory(ens)):
                writer.writerow([level, race or "", step, repr(mean)])


def write_volatility_csv(stats, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_level", "race", "mean_change_per_person_year"])
        for s in stats:
            level, race = s.group
            writer.writerow([level, race or "", repr(s.mean_change_per_person_year)])

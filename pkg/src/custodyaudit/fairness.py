"""Conditional decision-rate tables over protected groups.

All probabilities are exact ratios of integer tallies: P(D=1 | A=a) and
P(D=1 | A=a') where a' is the negation of a within the (optionally
B-conditioned) cohort.  Records whose override decision was never recorded
are excluded from override denominators and counted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .dataset import Cohort, ValidationError
from .forest import RandomForest, predict_cohort

HIGH_CUSTODY_THRESHOLD = 3   # "high custody level" means level > 3
HIGH_ADJUSTMENT_THRESHOLD = 2  # "high institutional adjustment" means score > 2

DECISION_HIGH_CUSTODY = "initial custody level > 3"
DECISION_HIGH_ADJUSTMENT = "institutional adjustment > 2"
DECISION_OVERRIDE = "override to higher custody level"
DECISION_MODEL_HIGH = "model prediction > 3"

GROUP_BLACK = "Black"
GROUP_HISPANIC = "Hispanic"
GROUP_OLDER = "age > 45"
GROUP_FEMALE = "female"

GROUPS = (GROUP_BLACK, GROUP_HISPANIC, GROUP_OLDER, GROUP_FEMALE)

_GROUP_PREDICATES = {
    GROUP_BLACK: lambda r: r.values["race_B"] == 1,
    GROUP_HISPANIC: lambda r: r.values["race_H"] == 1,
    GROUP_OLDER: lambda r: r.values["age_gt_45"] == 1,
    GROUP_FEMALE: lambda r: r.values["gender_female"] == 1,
}


def _decide(record, decision: str):
    """Decision value for one record; None when undefined (unrecorded)."""
    if decision == DECISION_HIGH_CUSTODY:
        return record.custody_level > HIGH_CUSTODY_THRESHOLD
    if decision == DECISION_HIGH_ADJUSTMENT:
        return record.values["ic_institut_adj"] > HIGH_ADJUSTMENT_THRESHOLD
    if decision == DECISION_OVERRIDE:
        return record.override_to_higher
    raise ValidationError(f"unknown decision {decision!r}")


@dataclass(frozen=True)
class FairnessQuery:
    decision: str
    group: str
    condition: str | None = None  # extra B=1 filter, e.g. high adjustment

    def label(self) -> str:
        if self.condition:
            return f"{self.decision} | {self.condition}"
        return self.decision


@dataclass(frozen=True)
class RatePair:
    """P(D=1|A=a) and P(D=1|A=a') with their exact integer tallies."""

    p_a: float | None
    p_not_a: float | None
    k_a: int
    n_a: int
    k_not_a: int
    n_not_a: int
    excluded: int = 0

    @property
    def undefined(self) -> bool:
        return self.p_a is None or self.p_not_a is None


def _rate_pair(decisions, in_group, excluded: int) -> RatePair:
    k_a = n_a = k_not_a = n_not_a = 0
    for d, g in zip(decisions, in_group):
        if g:
            n_a += 1
            k_a += int(d)
        else:
            n_not_a += 1
            k_not_a += int(d)
    return RatePair(
        p_a=(k_a / n_a) if n_a else None,
        p_not_a=(k_not_a / n_not_a) if n_not_a else None,
        k_a=k_a, n_a=n_a, k_not_a=k_not_a, n_not_a=n_not_a,
        excluded=excluded,
    )


def conditional_rate(cohort: Cohort, query: FairnessQuery) -> RatePair:
    """Exact empirical conditional decision rates for one query.

    Empty denominators yield an undefined (None) cell rather than an error so
    whole tables can be emitted for sparse cohorts.
    """
    group_pred = _GROUP_PREDICATES.get(query.group)
    if group_pred is None:
        raise ValidationError(f"unknown group {query.group!r}")
    decisions, in_group = [], []
    excluded = 0
    for rec in cohort.records:
        if query.condition is not None and not _decide(rec, query.condition):
            continue
        d = _decide(rec, query.decision)
        if d is None:
            excluded += 1
            continue
        decisions.append(bool(d))
        in_group.append(bool(group_pred(rec)))
    return _rate_pair(decisions, in_group, excluded)


def decision_table(cohort: Cohort) -> list:
    """All decision-rate rows: three decisions crossed with four protected
    groups, plus the override decision conditioned on high adjustment."""
    if len(cohort) == 0:
        raise ValidationError("cannot tabulate an empty cohort")
    rows = []
    for decision in (DECISION_HIGH_CUSTODY, DECISION_HIGH_ADJUSTMENT, DECISION_OVERRIDE):
        for group in GROUPS:
            query = FairnessQuery(decision=decision, group=group)
            rows.append((query, conditional_rate(cohort, query)))
    for group in GROUPS:
        query = FairnessQuery(decision=DECISION_OVERRIDE, group=group,
                              condition=DECISION_HIGH_ADJUSTMENT)
        rows.append((query, conditional_rate(cohort, query)))
    return rows


def predictive_parity(forest: RandomForest, cohort: Cohort, group: str) -> RatePair:
    """Decision rates with D replaced by the model's high-custody prediction."""
    group_pred = _GROUP_PREDICATES.get(group)
    if group_pred is None:
        raise ValidationError(f"unknown group {group!r}")
    if len(cohort) == 0:
        raise ValidationError("cannot evaluate parity on an empty cohort")
    preds = predict_cohort(forest, cohort)
    decisions = [int(p) > HIGH_CUSTODY_THRESHOLD for p in preds]
    in_group = [bool(group_pred(r)) for r in cohort.records]
    return _rate_pair(decisions, in_group, excluded=0)


def parity_gap(model_pair: RatePair, data_pair: RatePair):
    """Componentwise |model - data|; undefined cells propagate as None."""
    gap_a = (None if model_pair.p_a is None or data_pair.p_a is None
             else abs(model_pair.p_a - data_pair.p_a))
    gap_not_a = (None if model_pair.p_not_a is None or data_pair.p_not_a is None
                 else abs(model_pair.p_not_a - data_pair.p_not_a))
    return gap_a, gap_not_a


def write_fairness_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["decision", "group", "p_a", "p_not_a", "n_a", "n_not_a", "undefined"])
        for query, pair in rows:
            writer.writerow([
                query.label(), query.group,
                "" if pair.p_a is None else repr(pair.p_a),
                "" if pair.p_not_a is None else repr(pair.p_not_a),
                pair.n_a, pair.n_not_a, int(pair.undefined),
            ])

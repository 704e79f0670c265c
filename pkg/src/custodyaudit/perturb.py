"""Perturbation experiments over custody-level strata.

Five experiment families generate synthetic observations near the records of
a stratum and tabulate how the classifier's output moves:

  E1  every variable redrawn from the stratum's per-variable multisets
  E2  exactly one variable redrawn from its stratum multiset
  E3  E1 run inside custody-level-by-race strata
  E4  E2 run inside custody-level-by-race strata
  E5  categorical variables fixed; each quantitative variable redrawn
      uniformly from a margin-of-error interval around its observed value

One-hot families (and the pair of age-band indicators) are sampled
atomically, so every synthetic observation is a valid record.  Each
observation draws from its own rng stream keyed by (seed, experiment,
stratum, index), making results independent of worker scheduling.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .dataset import (
    Cohort,
    KEY_LEVEL,
    KEY_LEVEL_RACE,
    Record,
    SamplingUnit,
    ValidationError,
    stratify,
    stratum_values,
    unit_value,
    validate_record,
)
from .forest import RandomForest, predict_matrix, record_vector
from .rng import substream

EXPERIMENTS = ("E1", "E2", "E3", "E4", "E5")
DELTA_RANGE = tuple(range(-4, 5))


@dataclass(frozen=True)
class PerturbPlan:
    experiment: str
    n_per_stratum: int = 100
    races: tuple = ("Black", "White")
    confidence: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.experiment!r}")
        if self.n_per_stratum < 1:
            raise ValidationError("per-stratum sample size must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise ValidationError("confidence must lie in (0, 1)")

    @property
    def by_race(self) -> bool:
        return self.experiment in ("E3", "E4")

    @property
    def style(self) -> str:
        """Sampling style: E3 repeats E1 per race stratum, E4 repeats E2."""
        return {"E1": "E1", "E3": "E1", "E2": "E2", "E4": "E2", "E5": "E5"}[self.experiment]


@dataclass
class DeltaDistribution:
    """Histogram of custody-level changes for one stratum."""

    stratum: object
    counts: dict
    n: int


@dataclass
class ExperimentResult:
    plan: PerturbPlan
    distributions: list
    skipped: list = field(default_factory=list)
    coincidences: dict = field(default_factory=dict)
    changed_variable_deltas: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)


def _draw(values: list, rng) -> object:
    return values[int(rng.integers(len(values)))]


def sample_e1(columns: dict, schema, level: int, rng) -> Record:
    """One synthetic observation: every unit drawn uniformly from its stratum
    multiset, one-hot groups atomically."""
    values: dict = {}
    for unit in schema.units:
        pool = columns[unit.name]
        if not pool:
            raise ValidationError(f"empty stratum multiset for '{unit.name}'")
        drawn = _draw(pool, rng)
        if unit.is_group:
            schema.group_by_name[unit.name].assign(values, drawn)
        else:
            values[unit.name] = drawn
    rec = Record(values=values, custody_level=level)
    validate_record(rec, schema)
    return rec


def sample_e2(base: Record, columns: dict, schema, rng):
    """Copy of base with exactly one unit redrawn from its stratum multiset.

    The redraw may coincide with the original value; the changed unit is
    reported either way.  Returns (record, changed unit name).
    """
    units = schema.units
    unit = units[int(rng.integers(len(units)))]
    pool = columns[unit.name]
    if not pool:
        raise ValidationError(f"empty stratum multiset for '{unit.name}'")
    drawn = _draw(pool, rng)
    values = dict(base.values)
    if unit.is_group:
        schema.group_by_name[unit.name].assign(values, drawn)
    else:
        values[unit.name] = drawn
    rec = Record(values=values, custody_level=base.custody_level)
    validate_record(rec, schema)
    return rec, unit.name


def margin_of_error(values, confidence: float) -> float:
    """z * s / sqrt(n) with the sample standard deviation and normal quantile."""
    n = len(values)
    if n < 2:
        raise ValidationError("margin of error needs a stratum of size >= 2")
    z = NormalDist().inv_cdf((1.0 + confidence) / 2.0)
    s = float(np.std(np.asarray(values, dtype=np.float64), ddof=1))
    return z * s / np.sqrt(n)


def stratum_margins(stratum: Cohort, confidence: float) -> dict:
    """Per-quantitative-variable margin of error over one stratum."""
    margins = {}
    for v in stratum.schema.variables:
        if v.is_quantitative:
            column = [r.values[v.name] for r in stratum.records]
            margins[v.name] = margin_of_error(column, confidence)
    return margins


def _sample_e5_with(base: Record, margins: dict, schema, rng) -> Record:
    values = dict(base.values)
    for v in schema.variables:
        if not v.is_quantitative:
            continue
        x = float(base.values[v.name])
        moe = margins[v.name]
        lo = v.clamp(x - moe)
        hi = v.clamp(x + moe)
        drawn = float(rng.uniform(lo, hi))
        if v.kind != "quantitative-real":
            drawn = round(drawn)  # round-half-to-even, fixed for reproducibility
        values[v.name] = drawn
    rec = Record(values=values, custody_level=base.custody_level)
    validate_record(rec, schema)
    return rec


def sample_e5(base: Record, stratum: Cohort, confidence: float, rng) -> Record:
    """Copy of base with each quantitative variable redrawn uniformly from
    [x - MOE, x + MOE] clamped to its domain; categorical variables fixed."""
    margins = stratum_margins(stratum, confidence)
    return _sample_e5_with(base, margins, stratum.schema, rng)


def _stratum_key_parts(key) -> tuple:
    return key if isinstance(key, tuple) else (key,)


def stratum_label(key) -> str:
    if isinstance(key, tuple):
        return "|".join(str(p) for p in key)
    return str(key)


def _run_stratum(plan: PerturbPlan, forest: RandomForest, schema, key, stratum):
    """Generate and classify one stratum's synthetic observations."""
    if stratum is None or len(stratum) == 0:
        return key, None
    level = key[0] if isinstance(key, tuple) else key
    style = plan.style
    if style in ("E1", "E2"):
        columns = {u.name: stratum_values(stratum, u) for u in schema.units}
    else:
        margins = stratum_margins(stratum, plan.confidence)
    records, changed, coincidences = [], [], 0
    for j in range(plan.n_per_stratum):
        rng = substream(plan.seed, plan.experiment, _stratum_key_parts(key), j)
        if style == "E1":
            records.append(sample_e1(columns, schema, level, rng))
        elif style == "E2":
            base = stratum.records[int(rng.integers(len(stratum.records)))]
            rec, unit_name = sample_e2(base, columns, schema, rng)
            unit = SamplingUnit(unit_name, unit_name in schema.group_by_name)
            if unit_value(rec, schema, unit) == unit_value(base, schema, unit):
                coincidences += 1
            records.append(rec)
            changed.append(unit_name)
        else:
            base = stratum.records[int(rng.integers(len(stratum.records)))]
            records.append(_sample_e5_with(base, margins, schema, rng))
    X = np.stack([record_vector(forest, r) for r in records])
    preds = predict_matrix(forest, X)
    deltas = (preds - level).tolist()
    return key, (records, changed, coincidences, deltas)


def _run_strata_chunk(args) -> list:
    plan, forest, schema, keyed_strata = args
    return [_run_stratum(plan, forest, schema, key, stratum)
            for key, stratum in keyed_strata]


def run_experiment(plan: PerturbPlan, forest: RandomForest, cohort: Cohort,
                   keep_records: bool = False, jobs: int = 1) -> ExperimentResult:
    """Generate plan.n_per_stratum observations per stratum, classify them,
    and histogram predicted-minus-original custody level deltas.

    Strata with no records are skipped and flagged.  E2/E4 additionally
    report redraw coincidence counts and per-changed-variable deltas.
    Observations draw from streams keyed by (seed, experiment, stratum,
    index), so any worker count yields the same result.
    """
    schema = cohort.schema
    if plan.by_race:
        strata = stratify(cohort, KEY_LEVEL_RACE)
        grid = [(lvl, race) for lvl in range(1, 6) for race in plan.races]
    else:
        strata = stratify(cohort, KEY_LEVEL)
        grid = list(range(1, 6))

    result = ExperimentResult(plan=plan, distributions=[])

    workers = max(1, min(jobs, len(grid)))
    if workers > 1:
        bounds = np.linspace(0, len(grid), workers + 1).astype(int)
        chunks = [(plan, forest, schema,
                   [(key, strata.get(key)) for key in grid[lo:hi]])
                  for lo, hi in zip(bounds, bounds[1:]) if hi > lo]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = [item for part in pool.map(_run_strata_chunk, chunks)
                       for item in part]
    else:
        outputs = [_run_stratum(plan, forest, schema, key, strata.get(key))
                   for key in grid]

    for key, out in outputs:
        if out is None:
            result.skipped.append(key)
            continue
        records, changed, coincidences, deltas = out
        counts = {d: 0 for d in DELTA_RANGE}
        for d in deltas:
            counts[d] += 1
        result.distributions.append(
            DeltaDistribution(stratum=key, counts=counts, n=len(deltas))
        )
        if plan.style == "E2":
            result.coincidences[key] = coincidences
            for unit_name, d in zip(changed, deltas):
                result.changed_variable_deltas.setdefault(unit_name, []).append(d)
        if keep_records:
            result.samples[key] = records
    return result


def five_number_summary(values) -> dict:
    """Box-plot quantiles (type-7 linear interpolation)."""
    arr = np.asarray(sorted(values), dtype=np.float64)
    q = np.quantile(arr, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {"min": q[0], "q1": q[1], "median": q[2], "q3": q[3], "max": q[4]}


def write_experiment_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stratum", "delta", "count", "n"])
        for dist in result.distributions:
            for delta in DELTA_RANGE:
                writer.writerow([stratum_label(dist.stratum), delta,
                                 dist.counts.get(delta, 0), dist.n])


def experiment_summary(result: ExperimentResult) -> dict:
    plan = result.plan
    summary = {
        "experiment": plan.experiment,
        "n_per_stratum": plan.n_per_stratum,
        "races": list(plan.races) if plan.by_race else None,
        "confidence": plan.confidence if plan.experiment == "E5" else None,
        "seed": plan.seed,
        "strata": [stratum_label(d.stratum) for d in result.distributions],
        "skipped_strata": [stratum_label(k) for k in result.skipped],
        "coincidences": {stratum_label(k): v for k, v in result.coincidences.items()},
        "changed_variable_delta_quantiles": {
            name: five_number_summary(vals)
            for name, vals in sorted(result.changed_variable_deltas.items())
        },
    }
    return summary


def write_experiment_summary(result: ExperimentResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(experiment_summary(result), fh, sort_keys=True, indent=2)
        fh.write("\n")

"""Variable schema, cohort container, CSV interchange, stratification and
synthetic cohort generation.

The default schema describes the inputs of an opaque custody-classification
tool: binary demographic indicators, three one-hot indicator families (race,
marital status, escape history), and quantitative scores.  The outcome is a
custody level from 1 (community corrections) to 5 (maximum security).  Two
overlapping variable subsets exist: one for the initial classification model
and one for the annual reclassification model.

Because the real administrative data is confidential, the module also ships a
seeded synthetic generator that plants a controllable dependency between the
custody level and a chosen set of quantitative variables.
"""

from __future__ import annotations

import csv
import hashlib
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .rng import substream


class ValidationError(ValueError):
    """Data violates the schema or an operation's input contract."""


KIND_BINARY = "binary"
KIND_GROUP_MEMBER = "categorical-group-member"
KIND_INT = "quantitative-integer"
KIND_REAL = "quantitative-real"

ROLE_PROTECTED = "protected"
ROLE_FEATURE = "feature"
ROLE_OUTCOME_ADJACENT = "outcome-adjacent"

MODEL_INITIAL = "initial-classification"
MODEL_RECLASS = "reclassification"

CUSTODY_LEVELS = (1, 2, 3, 4, 5)

_QUANT_KINDS = (KIND_INT, KIND_REAL)


@dataclass(frozen=True)
class VariableSpec:
    """One input variable: kind, closed domain, role and model membership.

    domain is (lo, hi); hi may be None for counts with no upper bound.
    """

    name: str
    kind: str
    domain: tuple
    role: str
    models: frozenset
    group: str | None = None

    def contains(self, value) -> bool:
        lo, hi = self.domain
        if value < lo or (hi is not None and value > hi):
            return False
        if self.kind != KIND_REAL and value != int(value):
            return False
        return True

    def clamp(self, value: float) -> float:
        lo, hi = self.domain
        if value < lo:
            return float(lo)
        if hi is not None and value > hi:
            return float(hi)
        return float(value)

    @property
    def is_quantitative(self) -> bool:
        return self.kind in _QUANT_KINDS


@dataclass(frozen=True)
class OneHotGroup:
    """A family of mutually exclusive indicators plus an all-zero reference.

    members maps indicator variable name -> category label; at most one
    member of a valid record is 1, and all zeros encode the reference label.
    """

    name: str
    members: tuple  # of (variable name, category label)
    reference: str

    @cached_property
    def member_names(self) -> tuple:
        return tuple(n for n, _ in self.members)

    @cached_property
    def labels(self) -> tuple:
        return (self.reference,) + tuple(lbl for _, lbl in self.members)

    def label_of(self, values: Mapping[str, float]) -> str:
        hot = [lbl for n, lbl in self.members if values[n] == 1]
        if len(hot) > 1:
            raise ValidationError(
                f"one-hot violation in group '{self.name}': {len(hot)} indicators set"
            )
        return hot[0] if hot else self.reference

    def assign(self, values: dict, label: str) -> None:
        if label not in self.labels:
            raise ValidationError(f"unknown category '{label}' for group '{self.name}'")
        for n, lbl in self.members:
            values[n] = 1 if lbl == label else 0


@dataclass(frozen=True)
class SamplingUnit:
    """An atomic unit for sampling/perturbation: a plain variable or a group."""

    name: str
    is_group: bool


@dataclass(frozen=True)
class CohortSchema:
    """Ordered variable specs plus group definitions and the outcome range."""

    variables: tuple
    groups: tuple
    outcome: tuple = (1, 5)

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(names) != len(set(names)):
            raise ValidationError("duplicate variable names in schema")
        grouped = {}
        for g in self.groups:
            for member in g.member_names:
                if member not in names:
                    raise ValidationError(f"group '{g.name}' member '{member}' not in schema")
                grouped[member] = g.name
        for v in self.variables:
            if v.group != grouped.get(v.name):
                raise ValidationError(f"variable '{v.name}' group tag does not match group definitions")
            if not v.models:
                raise ValidationError(f"variable '{v.name}' belongs to no model")
        for g in self.groups:
            kinds = {self.by_name[m].kind for m in g.member_names}
            domains = {self.by_name[m].domain for m in g.member_names}
            if len(kinds) > 1 or len(domains) > 1:
                raise ValidationError(f"group '{g.name}' members differ in kind or domain")

    @cached_property
    def by_name(self) -> dict:
        return {v.name: v for v in self.variables}

    @cached_property
    def group_by_name(self) -> dict:
        return {g.name: g for g in self.groups}

    @cached_property
    def names(self) -> tuple:
        return tuple(v.name for v in self.variables)

    @cached_property
    def units(self) -> tuple:
        """Sampling units in schema order; a group appears once, at its first member."""
        out, seen = [], set()
        for v in self.variables:
            if v.group is None:
                out.append(SamplingUnit(v.name, False))
            elif v.group not in seen:
                seen.add(v.group)
                out.append(SamplingUnit(v.group, True))
        return tuple(out)

    def model_variables(self, model: str) -> tuple:
        return tuple(v for v in self.variables if model in v.models)

    def fingerprint(self) -> str:
        h = hashlib.blake2s(digest_size=16)
        for v in self.variables:
            h.update(
                f"{v.name}|{v.kind}|{v.domain}|{v.role}|{sorted(v.models)}|{v.group}\n".encode()
            )
        for g in self.groups:
            h.update(f"group:{g.name}|{g.members}|{g.reference}\n".encode())
        h.update(f"outcome:{self.outcome}".encode())
        return h.hexdigest()

    def restrict(self, model: str) -> "CohortSchema":
        keep = self.model_variables(model)
        keep_names = {v.name for v in keep}
        groups = tuple(
            g for g in self.groups if all(m in keep_names for m in g.member_names)
        )
        group_names = {g.name for g in groups}
        keep = tuple(
            v if (v.group is None or v.group in group_names)
            else VariableSpec(v.name, v.kind, v.domain, v.role, v.models, None)
            for v in keep
        )
        return CohortSchema(variables=keep, groups=groups, outcome=self.outcome)


def _var(name, kind, domain, role, models, group=None):
    return VariableSpec(name, kind, domain, role, frozenset(models), group)


_BOTH = (MODEL_INITIAL, MODEL_RECLASS)
_IC = (MODEL_INITIAL,)
_RE = (MODEL_RECLASS,)

RACE_GROUP = OneHotGroup(
    "race",
    (
        ("race_B", "Black"),
        ("race_A", "Asian"),
        ("race_H", "Hispanic"),
        ("race_I", "AmericanIndian"),
        ("race_O", "Other"),
    ),
    reference="White",
)
# The two age indicators are handled as one atomic unit so sampling can never
# produce a record that is both under 25 and over 45.
AGE_GROUP = OneHotGroup(
    "age_cat", (("age_gt_45", "Older"), ("age_lt_25", "Young")), reference="Middle"
)
ESCAPE_GROUP = OneHotGroup(
    "escape_hist",
    tuple((f"escape_hist_{k}", str(k)) for k in range(1, 6)),
    reference="0",
)
MARITAL_GROUP = OneHotGroup(
    "mrt_stat",
    (
        ("mrt_stat_DIV", "Divorced"),
        ("mrt_stat_SEP", "Separated"),
        ("mrt_stat_MAR", "Married"),
        ("mrt_stat_WID", "Widowed"),
    ),
    reference="Single",
)

_DEFAULT_VARIABLES = (
    _var("gender_female", KIND_BINARY, (0, 1), ROLE_PROTECTED, _BOTH),
    _var("age_gt_45", KIND_BINARY, (0, 1), ROLE_PROTECTED, _IC, "age_cat"),
    _var("age_lt_25", KIND_BINARY, (0, 1), ROLE_PROTECTED, _IC, "age_cat"),
    _var("age", KIND_INT, (16, 100), ROLE_PROTECTED, _RE),
    _var("race_B", KIND_GROUP_MEMBER, (0, 1), ROLE_PROTECTED, _BOTH, "race"),
    _var("race_A", KIND_GROUP_MEMBER, (0, 1), ROLE_PROTECTED, _BOTH, "race"),
    _var("race_H", KIND_GROUP_MEMBER, (0, 1), ROLE_PROTECTED, _BOTH, "race"),
    _var("race_I", KIND_GROUP_MEMBER, (0, 1), ROLE_PROTECTED, _BOTH, "race"),
    _var("race_O", KIND_GROUP_MEMBER, (0, 1), ROLE_PROTECTED, _BOTH, "race"),
    _var("off_1_prs_max", KIND_INT, (1, 4), ROLE_FEATURE, _BOTH),
    _var("off_1_gs_max", KIND_INT, (1, 15), ROLE_FEATURE, _BOTH),
    _var("ic_custdy_level", KIND_INT, (1, 5), ROLE_OUTCOME_ADJACENT, _RE),
    _var("prior_commits", KIND_INT, (0, None), ROLE_FEATURE, _BOTH),
    _var("ic_institut_adj", KIND_INT, (0, 10), ROLE_FEATURE, _IC),
    _var("re_discip_reports", KIND_INT, (0, None), ROLE_FEATURE, _RE),
    _var("escape_hist_1", KIND_GROUP_MEMBER, (0, 1), ROLE_FEATURE, _BOTH, "escape_hist"),
    _var("escape_hist_2", KIND_GROUP_MEMBER, (0, 1), ROLE_FEATURE, _BOTH, "escape_hist"),
    _var("escape_hist_3", KIND_GROUP_MEMBER, (0, 1), ROLE_FEATURE, _BOTH, "escape_hist"),
    _var("escape_hist_4", KIND_GROUP_MEMBER, (0, 1), ROLE_FEATURE, _BOTH, "escape_hist"),
    _var("escape_hist_5", KIND_GROUP_MEMBER, (0, 1), ROLE_FEATURE, _BOTH, "escape_hist"),
    _var("mrt_stat_DIV", KIND_GROUP_MEMBER, (0, 1), ROLE_FEATURE, _IC, "mrt_stat"),
    _var("mrt_stat_SEP", KIND_GROUP_MEMBER, (0, 1), ROLE_FEATURE, _IC, "mrt_stat"),
    _var("mrt_stat_MAR", KIND_GROUP_MEMBER, (0, 1), ROLE_FEATURE, _IC, "mrt_stat"),
    _var("mrt_stat_WID", KIND_GROUP_MEMBER, (0, 1), ROLE_FEATURE, _IC, "mrt_stat"),
    _var("employed", KIND_BINARY, (0, 1), ROLE_FEATURE, _IC),
)

_DEFAULT_SCHEMA = None


def default_schema() -> CohortSchema:
    global _DEFAULT_SCHEMA
    if _DEFAULT_SCHEMA is None:
        _DEFAULT_SCHEMA = CohortSchema(
            variables=_DEFAULT_VARIABLES,
            groups=(RACE_GROUP, AGE_GROUP, ESCAPE_GROUP, MARITAL_GROUP),
        )
    return _DEFAULT_SCHEMA


@dataclass(frozen=True)
class Record:
    """One person-observation: variable values, custody level and, when the
    decision was recorded, whether the level was overridden upward."""

    values: Mapping[str, float]
    custody_level: int
    override_to_higher: bool | None = None


@dataclass(frozen=True)
class Cohort:
    schema: CohortSchema
    records: tuple

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def validate_record(record: Record, schema: CohortSchema, context: str = "") -> None:
    where = f" ({context})" if context else ""
    for v in schema.variables:
        if v.name not in record.values:
            raise ValidationError(f"missing value for '{v.name}'{where}")
        value = record.values[v.name]
        if not v.contains(value):
            raise ValidationError(
                f"value {value!r} outside domain {v.domain} for column '{v.name}'{where}"
            )
    extra = set(record.values) - set(schema.names)
    if extra:
        raise ValidationError(f"unknown columns {sorted(extra)}{where}")
    for g in schema.groups:
        hot = [n for n in g.member_names if record.values[n] == 1]
        if len(hot) > 1:
            raise ValidationError(
                f"one-hot violation in group '{g.name}': {hot} all set{where}"
            )
    lo, hi = schema.outcome
    if not (lo <= record.custody_level <= hi) or record.custody_level != int(record.custody_level):
        raise ValidationError(
            f"custody_level {record.custody_level!r} outside {lo}..{hi}{where}"
        )


def validate_cohort(cohort: Cohort) -> None:
    for i, rec in enumerate(cohort.records):
        validate_record(rec, cohort.schema, context=f"row {i + 1}")


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

OVERRIDE_COLUMN = "override_to_higher"
OUTCOME_COLUMN = "custody_level"


def _format_value(x) -> str:
    if x == int(x):
        return str(int(x))
    return repr(float(x))


def write_cohort(cohort: Cohort, path) -> None:
    """Write one column per schema variable plus custody_level and the
    override flag (empty cell when the decision was not recorded)."""
    names = list(cohort.schema.names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + [OUTCOME_COLUMN, OVERRIDE_COLUMN])
        for rec in cohort.records:
            row = [_format_value(rec.values[n]) for n in names]
            row.append(str(rec.custody_level))
            row.append("" if rec.override_to_higher is None else str(int(rec.override_to_higher)))
            writer.writerow(row)


def load_cohort(path, schema: CohortSchema | None = None) -> Cohort:
    """Load and validate a cohort CSV; row order is preserved.

    Raises ValidationError naming the row and column for any missing column,
    out-of-domain value or one-hot violation.
    """
    schema = schema or default_schema()
    path = Path(path)
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [n for n in schema.names if n not in header] + (
            [OUTCOME_COLUMN] if OUTCOME_COLUMN not in header else []
        )
        if missing:
            raise ValidationError(f"{path.name}: missing columns {missing}")
        has_override = OVERRIDE_COLUMN in header
        records = []
        for i, row in enumerate(reader):
            context = f"{path.name} row {i + 1}"
            values = {}
            for v in schema.variables:
                raw = row[v.name]
                try:
                    values[v.name] = int(raw) if v.kind != KIND_REAL else float(raw)
                except (TypeError, ValueError):
                    raise ValidationError(
                        f"unparseable value {raw!r} in column '{v.name}' ({context})"
                    ) from None
            try:
                level = int(row[OUTCOME_COLUMN])
            except (TypeError, ValueError):
                raise ValidationError(
                    f"unparseable custody_level {row[OUTCOME_COLUMN]!r} ({context})"
                ) from None
            override = None
            if has_override and row[OVERRIDE_COLUMN] not in (None, ""):
                override = bool(int(row[OVERRIDE_COLUMN]))
            rec = Record(values=values, custody_level=level, override_to_higher=override)
            validate_record(rec, schema, context=context)
            records.append(rec)
    return Cohort(schema=schema, records=tuple(records))


# ---------------------------------------------------------------------------
# Stratification, multisets and model views
# ---------------------------------------------------------------------------

KEY_LEVEL = "custody_level"
KEY_RACE = "race"
KEY_LEVEL_RACE = "custody_level×race"


def race_label(record: Record, schema: CohortSchema) -> str:
    return schema.group_by_name["race"].label_of(record.values)


def stratify(cohort: Cohort, key: str) -> dict:
    """Partition a cohort; only observed (nonempty) strata are returned."""
    if len(cohort) == 0:
        raise ValidationError("cannot stratify an empty cohort")
    if key == KEY_LEVEL:
        keyfn = lambda r: r.custody_level
    elif key == KEY_RACE:
        keyfn = lambda r: race_label(r, cohort.schema)
    elif key == KEY_LEVEL_RACE:
        keyfn = lambda r: (r.custody_level, race_label(r, cohort.schema))
    else:
        raise ValidationError(f"unknown stratification key {key!r}")
    buckets: dict = {}
    for rec in cohort.records:
        buckets.setdefault(keyfn(rec), []).append(rec)
    return {
        k: Cohort(schema=cohort.schema, records=tuple(v))
        for k, v in sorted(buckets.items())
    }


def unit_value(record: Record, schema: CohortSchema, unit: SamplingUnit):
    if unit.is_group:
        return schema.group_by_name[unit.name].label_of(record.values)
    return record.values[unit.name]


def stratum_values(stratum: Cohort, unit: SamplingUnit) -> list:
    """Observed values of one unit across a stratum, in record order."""
    return [unit_value(r, stratum.schema, unit) for r in stratum.records]


def multiset(stratum: Cohort, variable: str) -> Counter:
    """Value multiset of one variable (or, by group label, one one-hot family).

    One-hot families must be requested by group label; the multiset then
    contains category labels, which is the atomic sampling unit.
    """
    schema = stratum.schema
    if variable in schema.group_by_name:
        unit = SamplingUnit(variable, True)
    elif variable in schema.by_name:
        spec = schema.by_name[variable]
        if spec.group is not None:
            raise ValidationError(
                f"'{variable}' is part of group '{spec.group}'; request the group label"
            )
        unit = SamplingUnit(variable, False)
    else:
        raise ValidationError(f"unknown variable {variable!r}")
    return Counter(stratum_values(stratum, unit))


def model_view(cohort: Cohort, model: str) -> Cohort:
    """Restrict a cohort to the variables of one model."""
    if model not in (MODEL_INITIAL, MODEL_RECLASS):
        raise ValidationError(f"unknown model {model!r}")
    schema = cohort.schema.restrict(model)
    records = []
    for i, rec in enumerate(cohort.records):
        try:
            values = {n: rec.values[n] for n in schema.names}
        except KeyError as exc:
            raise ValidationError(
                f"record {i + 1} lacks required value {exc.args[0]!r}"
            ) from None
        records.append(
            Record(values=values, custody_level=rec.custody_level,
                   override_to_higher=rec.override_to_higher)
        )
    return Cohort(schema=schema, records=tuple(records))


def initial_view(cohort: Cohort) -> Cohort:
    return model_view(cohort, MODEL_INITIAL)


def reclass_view(cohort: Cohort) -> Cohort:
    """The reclassification variable set: numeric age in, age/marital/
    employment binaries out, previous level and disciplinary reports in."""
    return model_view(cohort, MODEL_RECLASS)


def feature_matrix(cohort: Cohort, feature_order: Iterable[str] | None = None) -> np.ndarray:
    names = tuple(feature_order) if feature_order is not None else cohort.schema.names
    X = np.empty((len(cohort), len(names)), dtype=np.float64)
    for i, rec in enumerate(cohort.records):
        row = rec.values
        for j, n in enumerate(names):
            X[i, j] = row[n]
    return X


def level_vector(cohort: Cohort) -> np.ndarray:
    return np.asarray([r.custody_level for r in cohort.records], dtype=np.int64)


# ---------------------------------------------------------------------------
# Synthetic cohorts
# ---------------------------------------------------------------------------

DEPENDENCY_VARIABLES = ("ic_institut_adj", "off_1_gs_max", "prior_commits", "off_1_prs_max")

DEFAULT_COEFFICIENTS = {
    "ic_institut_adj": 0.40,
    "off_1_gs_max": 0.30,
    "prior_commits": 0.20,
    "off_1_prs_max": 0.10,
}

DEFAULT_WEIGHTS = {
    "female": 0.10,
    "Black": 0.45,
    "Asian": 0.01,
    "Hispanic": 0.10,
    "AmericanIndian": 0.005,
    "Other": 0.01,
    "Divorced": 0.10,
    "Separated": 0.06,
    "Married": 0.17,
    "Widowed": 0.02,
    "escape_1": 0.05,
    "escape_2": 0.02,
    "escape_3": 0.01,
    "escape_4": 0.005,
    "escape_5": 0.002,
    "employed": 0.55,
}

# Ranges used to put the dependency variables on a common 0..1 scale before
# weighting (unbounded counts are capped at the generator's draw range).
_SCALE = {
    "ic_institut_adj": (0.0, 10.0),
    "off_1_gs_max": (1.0, 15.0),
    "prior_commits": (0.0, 20.0),
    "off_1_prs_max": (1.0, 4.0),
}

# Affine stretch applied to the latent score before quantization; centers the
# default-coefficient score so all five levels are well populated.
_LATENT_CENTER = 0.42
_LATENT_SPREAD = 1.8

_WEIGHT_GROUPS = {
    "gender": ("female",),
    "race": ("Black", "Asian", "Hispanic", "AmericanIndian", "Other"),
    "mrt_stat": ("Divorced", "Separated", "Married", "Widowed"),
    "escape_hist": ("escape_1", "escape_2", "escape_3", "escape_4", "escape_5"),
    "employment": ("employed",),
}

# Override decisions are generated with fixed rates: recorded for ~70% of
# records, and biased upward when the adjustment score is high, so the
# fairness tables have data to work with.
_OVERRIDE_RECORDED = 0.70
_OVERRIDE_P_HIGH_ADJ = 0.55
_OVERRIDE_P_LOW_ADJ = 0.30


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic cohort generator."""

    n: int
    seed: int
    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    coefficients: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_COEFFICIENTS))
    noise: float = 0.05

    def __post_init__(self):
        if self.n < 0:
            raise ValidationError("n must be >= 0")
        if self.noise < 0:
            raise ValidationError("noise scale must be >= 0")
        unknown = set(self.weights) - set(DEFAULT_WEIGHTS)
        if unknown:
            raise ValidationError(f"unknown demographic weight keys {sorted(unknown)}")
        for group, cats in _WEIGHT_GROUPS.items():
            total = sum(self.weights.get(c, 0.0) for c in cats)
            if total > 1.0 + 1e-12:
                raise ValidationError(f"weights for group '{group}' sum to {total} > 1")
            if any(self.weights.get(c, 0.0) < 0 for c in cats):
                raise ValidationError(f"negative weight in group '{group}'")
        unknown = set(self.coefficients) - set(DEPENDENCY_VARIABLES)
        if unknown:
            raise ValidationError(f"unknown dependency coefficients {sorted(unknown)}")
        if any(c < 0 for c in self.coefficients.values()):
            raise ValidationError("dependency coefficients must be >= 0")
        if sum(self.coefficients.values()) <= 0:
            raise ValidationError("dependency coefficients must not all be zero")

    def weight(self, key: str) -> float:
        return float(self.weights.get(key, 0.0))


def _categorical(rng, n, labels, probs):
    p = np.asarray(probs, dtype=float)
    return rng.choice(len(labels), size=n, p=p / p.sum())


def generate_synthetic_cohort(config: SynthConfig) -> Cohort:
    """Deterministically generate a validated cohort for a fixed config.

    The custody level is a noisy monotone function of the coefficient-weighted
    latent score over the dependency variables, quantized to 1..5, so the
    planted importance ordering is controllable.
    """
    schema = default_schema()
    n = config.n
    rng = substream(config.seed, "synth")

    gender = (rng.random(n) < config.weight("female")).astype(np.int64)
    age = rng.integers(18, 76, size=n)

    race_labels = RACE_GROUP.labels  # reference first
    race_probs = [1.0 - sum(config.weight(l) for l in race_labels[1:])] + [
        config.weight(l) for l in race_labels[1:]
    ]
    race_code = _categorical(rng, n, race_labels, race_probs)

    mrt_labels = MARITAL_GROUP.labels
    mrt_probs = [1.0 - sum(config.weight(l) for l in mrt_labels[1:])] + [
        config.weight(l) for l in mrt_labels[1:]
    ]
    mrt_code = _categorical(rng, n, mrt_labels, mrt_probs)

    esc_weights = [config.weight(f"escape_{k}") for k in range(1, 6)]
    esc_probs = [1.0 - sum(esc_weights)] + esc_weights
    esc_code = _categorical(rng, n, ESCAPE_GROUP.labels, esc_probs)

    employed = (rng.random(n) < config.weight("employed")).astype(np.int64)

    prs = rng.integers(1, 5, size=n)
    gs = rng.integers(1, 16, size=n)
    prior = np.minimum(rng.geometric(0.4, size=n) - 1, 20)
    adj = rng.integers(0, 11, size=n)
    discip = np.minimum(rng.geometric(0.5, size=n) - 1, 15)

    columns = {
        "ic_institut_adj": adj,
        "off_1_gs_max": gs,
        "prior_commits": prior,
        "off_1_prs_max": prs,
    }
    total_coef = sum(config.coefficients.values())
    latent = np.zeros(n, dtype=np.float64)
    for name in DEPENDENCY_VARIABLES:
        coef = config.coefficients.get(name, 0.0)
        if coef == 0.0:
            continue
        lo, hi = _SCALE[name]
        latent += (coef / total_coef) * (columns[name] - lo) / (hi - lo)
    score = 0.5 + (latent - _LATENT_CENTER) * _LATENT_SPREAD
    score = score + rng.normal(0.0, config.noise, size=n)
    level = np.clip(np.floor(score * 5).astype(np.int64) + 1, 1, 5)

    jitter_u = rng.random(n)
    jitter = np.where(jitter_u < 0.15, -1, np.where(jitter_u > 0.85, 1, 0))
    ic_level = np.clip(level + jitter, 1, 5)

    recorded = rng.random(n) < _OVERRIDE_RECORDED
    p_override = np.where(adj > 2, _OVERRIDE_P_HIGH_ADJ, _OVERRIDE_P_LOW_ADJ)
    override = rng.random(n) < p_override

    records = []
    for i in range(n):
        values = {
            "gender_female": int(gender[i]),
            "age_gt_45": int(age[i] > 45),
            "age_lt_25": int(age[i] < 25),
            "age": int(age[i]),
            "off_1_prs_max": int(prs[i]),
            "off_1_gs_max": int(gs[i]),
            "ic_custdy_level": int(ic_level[i]),
            "prior_commits": int(prior[i]),
            "ic_institut_adj": int(adj[i]),
            "re_discip_reports": int(discip[i]),
            "employed": int(employed[i]),
        }
        RACE_GROUP.assign(values, race_labels[race_code[i]])
        MARITAL_GROUP.assign(values, mrt_labels[mrt_code[i]])
        ESCAPE_GROUP.assign(values, ESCAPE_GROUP.labels[esc_code[i]])
        records.append(
            Record(
                values=values,
                custody_level=int(level[i]),
                override_to_higher=bool(override[i]) if recorded[i] else None,
            )
        )
    cohort = Cohort(schema=schema, records=tuple(records))
    validate_cohort(cohort)
    return cohort


# ---------------------------------------------------------------------------
# Key-value configuration files
# ---------------------------------------------------------------------------


def read_config_file(path) -> dict:
    """Parse a `key = value` text file; '#' starts a comment."""
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}: line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ValidationError(f"{path}: line {lineno}: empty key")
            out[key] = value
    return out


def synth_config_from_mapping(mapping: Mapping[str, str], **overrides) -> SynthConfig:
    """Build a SynthConfig from string key-values (documented keys: n, seed,
    noise, weights.<category>, coef.<variable>).  Keyword overrides win."""
    weights = dict(DEFAULT_WEIGHTS)
    coefficients = dict(DEFAULT_COEFFICIENTS)
    known = {"n": int, "seed": int, "noise": float}
    kwargs: dict = {}
    for key, raw in mapping.items():
        try:
            if key in known:
                kwargs[key] = known[key](raw)
            elif key.startswith("weights."):
                weights[key.split(".", 1)[1]] = float(raw)
            elif key.startswith("coef."):
                coefficients[key.split(".", 1)[1]] = float(raw)
            else:
                raise ValidationError(f"unknown configuration key {key!r}")
        except ValueError:
            raise ValidationError(f"unparseable value {raw!r} for key {key!r}") from None
    kwargs["weights"] = weights
    kwargs["coefficients"] = coefficients
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    if "n" not in kwargs or "seed" not in kwargs:
        raise ValidationError("synthetic configuration requires n and seed")
    return SynthConfig(**kwargs)

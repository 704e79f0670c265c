import numpy as np
import pytest

from custodyaudit import dataset
from custodyaudit.forest import DecisionTree, RandomForest, ForestParams, _leaf


BASE_VALUES = {
    "gender_female": 0,
    "age_gt_45": 0,
    "age_lt_25": 0,
    "age": 30,
    "race_B": 0,
    "race_A": 0,
    "race_H": 0,
    "race_I": 0,
    "race_O": 0,
    "off_1_prs_max": 1,
    "off_1_gs_max": 1,
    "ic_custdy_level": 2,
    "prior_commits": 0,
    "ic_institut_adj": 0,
    "re_discip_reports": 0,
    "escape_hist_1": 0,
    "escape_hist_2": 0,
    "escape_hist_3": 0,
    "escape_hist_4": 0,
    "escape_hist_5": 0,
    "mrt_stat_DIV": 0,
    "mrt_stat_SEP": 0,
    "mrt_stat_MAR": 0,
    "mrt_stat_WID": 0,
    "employed": 0,
}


def make_record(level=2, override=None, **overrides) -> dataset.Record:
    values = dict(BASE_VALUES)
    values.update(overrides)
    return dataset.Record(values=values, custody_level=level,
                          override_to_higher=override)


def make_cohort(records) -> dataset.Cohort:
    cohort = dataset.Cohort(schema=dataset.default_schema(), records=tuple(records))
    dataset.validate_cohort(cohort)
    return cohort


def constant_tree(level: int, feature_order=None) -> DecisionTree:
    counts = np.zeros(5, dtype=np.int64)
    counts[level - 1] = 1
    order = tuple(feature_order) if feature_order else dataset.default_schema().names
    return DecisionTree(root=_leaf(counts), feature_order=order)


def forest_from_trees(trees, fingerprint="") -> RandomForest:
    trees = tuple(trees)
    return RandomForest(trees=trees,
                        params=ForestParams(n_trees=len(trees), seed=0),
                        feature_order=trees[0].feature_order,
                        schema_fingerprint=fingerprint)


def constant_forest(level: int, feature_order=None, fingerprint="") -> RandomForest:
    """A one-leaf forest that predicts the same level for every record."""
    return forest_from_trees([constant_tree(level, feature_order)], fingerprint)


@pytest.fixture(scope="session")
def schema():
    return dataset.default_schema()


@pytest.fixture(scope="session")
def small_cohort():
    """A deterministic synthetic cohort shared by read-only tests."""
    return dataset.generate_synthetic_cohort(dataset.SynthConfig(n=400, seed=20))

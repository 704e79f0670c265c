import numpy as np
import pytest

from custodyaudit import dataset
from custodyaudit.dataset import SynthConfig, ValidationError, generate_synthetic_cohort
from custodyaudit.forest import ForestParams, train_forest, train_tree
from custodyaudit.sensitivity import (
    DEFAULT_SCAN_VARIABLES,
    SensitivityCell,
    format_table,
    report_negligible,
    sensitivity_scan,
    write_sensitivity_csv,
)

from conftest import constant_forest, forest_from_trees, make_cohort, make_record


def _cell(rc, variable="off_1_gs_max", direction="increase", level=3):
    return SensitivityCell(variable=variable, direction=direction, factor=0.10,
                           start_level=level, baseline_mean=3.0,
                           perturbed_mean=3.0 * (1 + rc / 100), relative_change=rc)


def test_zero_factor_identity():
    cohort = generate_synthetic_cohort(SynthConfig(n=200, seed=40))
    f = train_forest(dataset.initial_view(cohort), ForestParams(n_trees=5, seed=1))
    cells = sensitivity_scan(f, cohort, factor=0.0)
    assert cells
    for cell in cells:
        assert cell.relative_change == 0.0
        assert cell.perturbed_mean == cell.baseline_mean


def test_constant_forest_no_change():
    cohort = generate_synthetic_cohort(SynthConfig(n=150, seed=41))
    cells = sensitivity_scan(constant_forest(4), cohort)
    for cell in cells:
        assert cell.baseline_mean == 4.0
        assert cell.relative_change == 0.0


def test_planted_step_rule_arithmetic():
    # level 5 iff ic_institut_adj > 6 (split at 6.5); records at level 5 have
    # adj = 7, so a 10% decrease gives 6.3 and the prediction drops to 2:
    # relative change = 100 * (2 - 5) / 5 = -60%
    train_records = [make_record(5 if adj > 6 else 2, ic_institut_adj=adj)
                     for adj in (2, 4, 6, 7, 8, 9)]
    tree = train_tree(make_cohort(train_records),
                      ForestParams(n_trees=1, features_per_split=25, bootstrap=False, seed=0))
    f = forest_from_trees([tree])
    cohort = make_cohort([make_record(5, ic_institut_adj=7)] * 4)
    cells = sensitivity_scan(f, cohort, variables=("ic_institut_adj",), factor=0.10)
    by_dir = {c.direction: c for c in cells}
    assert by_dir["decrease"].baseline_mean == 5.0
    assert by_dir["decrease"].perturbed_mean == 2.0
    assert by_dir["decrease"].relative_change == pytest.approx(-60.0)
    assert by_dir["increase"].relative_change == 0.0


def test_scaled_values_stay_fractional():
    # 10% of adj=7 crosses the 6.5 threshold only because no rounding occurs
    train_records = [make_record(5 if adj > 6 else 2, ic_institut_adj=adj)
                     for adj in (2, 4, 6, 7, 8, 9)]
    tree = train_tree(make_cohort(train_records),
                      ForestParams(n_trees=1, features_per_split=25, bootstrap=False, seed=0))
    f = forest_from_trees([tree])
    cohort = make_cohort([make_record(5, ic_institut_adj=7)])
    cells = sensitivity_scan(f, cohort, variables=("ic_institut_adj",), factor=0.05)
    by_dir = {c.direction: c for c in cells}
    # 7 * 0.95 = 6.65 stays above 6.5: no change in either direction
    assert by_dir["decrease"].relative_change == 0.0


def test_clamp_keeps_values_in_domain():
    # gravity 15 increased by 10% clamps back to 15: no change
    records = [make_record(3, off_1_gs_max=15)] * 3
    cohort = make_cohort(records)
    tree_records = [make_record(5 if gs > 14 else 2, off_1_gs_max=gs) for gs in (10, 14, 15, 15)]
    tree = train_tree(make_cohort(tree_records),
                      ForestParams(n_trees=1, features_per_split=25, bootstrap=False, seed=0))
    f = forest_from_trees([tree])
    cells = sensitivity_scan(f, cohort, variables=("off_1_gs_max",), factor=0.10)
    by_dir = {c.direction: c for c in cells}
    assert by_dir["increase"].relative_change == 0.0


def test_unknown_and_non_quantitative_variables_rejected():
    cohort = generate_synthetic_cohort(SynthConfig(n=50, seed=42))
    f = constant_forest(3)
    with pytest.raises(ValidationError, match="unknown"):
        sensitivity_scan(f, cohort, variables=("nope",))
    with pytest.raises(ValidationError, match="quantitative"):
        sensitivity_scan(f, cohort, variables=("gender_female",))


def test_scan_is_deterministic():
    cohort = generate_synthetic_cohort(SynthConfig(n=200, seed=43))
    f = train_forest(dataset.initial_view(cohort), ForestParams(n_trees=5, seed=2))
    assert sensitivity_scan(f, cohort) == sensitivity_scan(f, cohort)


def test_default_variables_are_the_influential_four():
    assert DEFAULT_SCAN_VARIABLES == (
        "off_1_prs_max", "off_1_gs_max", "prior_commits", "ic_institut_adj")


def test_report_negligible_threshold():
    assert report_negligible(_cell(0.04)) == "<0.1%"
    assert report_negligible(_cell(-13.24)) == "-13.2%"
    assert report_negligible(_cell(0.1)) == "0.1%"
    assert report_negligible(_cell(-0.04)) == "<0.1%"
    assert report_negligible(_cell(22.06)) == "22.1%"


def test_format_table_layout():
    cells = [
        SensitivityCell("off_1_gs_max", direction, 0.10, level, 3.0, 3.0, rc)
        for direction, level, rc in (
            ("decrease", 2, 3.9), ("decrease", 3, -0.05),
            ("increase", 2, 22.1), ("increase", 3, 10.3),
        )
    ]
    table = format_table(cells)
    lines = table.splitlines()
    assert "CL" in lines[0]
    assert any("10% dec. off_1_gs_max" in line and "<0.1%" in line for line in lines)
    assert any("10% inc. off_1_gs_max" in line and "22.1%" in line for line in lines)


def test_sensitivity_csv(tmp_path):
    cohort = generate_synthetic_cohort(SynthConfig(n=100, seed=44))
    cells = sensitivity_scan(constant_forest(3), cohort)
    path = tmp_path / "cells.csv"
    write_sensitivity_csv(cells, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ("variable,direction,start_level,baseline_mean,"
                        "perturbed_mean,relative_change_pct")
    assert len(lines) == 1 + len(cells)

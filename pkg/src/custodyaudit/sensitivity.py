"""Scaling sensitivity scans: percent change in mean predicted custody level
when one influential quantitative variable is scaled up or down.

For every record at each starting custody level the variable is multiplied by
(1 +/- factor) and clamped to its domain; scaled values stay fractional (the
trees threshold on reals, and rounding would erase sub-unit changes to small
counts).  The baseline is the model's mean prediction on unmodified records
at the same level, so both quantities are commensurable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import Cohort, ValidationError, feature_matrix, level_vector
from .forest import RandomForest, predict_matrix

DEFAULT_SCAN_VARIABLES = (
    "off_1_prs_max",
    "off_1_gs_max",
    "prior_commits",
    "ic_institut_adj",
)

DIRECTIONS = ("decrease", "increase")


@dataclass(frozen=True)
class SensitivityCell:
    variable: str
    direction: str
    factor: float
    start_level: int
    baseline_mean: float
    perturbed_mean: float
    relative_change: float  # percent


def sensitivity_scan(forest: RandomForest, cohort: Cohort,
                     variables=DEFAULT_SCAN_VARIABLES,
                     factor: float = 0.10) -> list:
    """Scan each variable in both directions; deterministic, no randomness."""
    if len(cohort) == 0:
        raise ValidationError("cannot scan an empty cohort")
    schema = cohort.schema
    for name in variables:
        spec = schema.by_name.get(name)
        if spec is None:
            raise ValidationError(f"unknown variable {name!r}")
        if not spec.is_quantitative:
            raise ValidationError(f"variable {name!r} is not quantitative")

    X = feature_matrix(cohort, forest.feature_order)
    col_index = {n: i for i, n in enumerate(forest.feature_order)}
    levels = level_vector(cohort)
    start_levels = sorted(set(levels.tolist()))

    base_preds = predict_matrix(forest, X)
    baseline = {}
    for lvl in start_levels:
        mean = float(np.mean(base_preds[levels == lvl]))
        if mean == 0.0:
            raise ValidationError(f"baseline mean is zero at level {lvl}")
        baseline[lvl] = mean

    cells = []
    for name in variables:
        spec = schema.by_name[name]
        lo, hi = spec.domain
        for direction in DIRECTIONS:
            scale = 1.0 - factor if direction == "decrease" else 1.0 + factor
            Xmod = X.copy()
            col = Xmod[:, col_index[name]] * scale
            col = np.maximum(col, lo)
            if hi is not None:
                col = np.minimum(col, hi)
            Xmod[:, col_index[name]] = col
            preds = predict_matrix(forest, Xmod)
            for lvl in start_levels:
                perturbed = float(np.mean(preds[levels == lvl]))
                change = 100.0 * (perturbed - baseline[lvl]) / baseline[lvl]
                cells.append(SensitivityCell(
                    variable=name, direction=direction, factor=factor,
                    start_level=lvl, baseline_mean=baseline[lvl],
                    perturbed_mean=perturbed, relative_change=change,
                ))
    return cells


def report_negligible(cell: SensitivityCell, threshold: float = 0.1) -> str:
    """Render a cell: "<0.1%" when the change is negligible, else one decimal."""
    if abs(cell.relative_change) < threshold:
        return f"<{threshold:g}%"
    return f"{cell.relative_change:.1f}%"


def format_table(cells, threshold: float = 0.1) -> str:
    """Text grid: one row per (direction, variable), one column per level."""
    levels = sorted({c.start_level for c in cells})
    by_key = {(c.variable, c.direction, c.start_level): c for c in cells}
    variables, seen = [], set()
    for c in cells:
        if c.variable not in seen:
            seen.add(c.variable)
            variables.append(c.variable)
    factor = cells[0].factor if cells else 0.0
    label = f"{factor * 100:g}%"
    width = max([len(f"{label} dec. {v}") for v in variables] + [14])
    lines = [" | ".join([f"{'Variable change':<{width}}"] + [f"CL {l:>4}" for l in levels])]
    for v in variables:
        for direction, tag in (("decrease", "dec."), ("increase", "inc.")):
            row = [f"{label} {tag} {v}".ljust(width)]
            for l in levels:
                cell = by_key.get((v, direction, l))
                row.append(f"{report_negligible(cell, threshold) if cell else '-':>7}")
            lines.append(" | ".join(row))
    return "\n".join(lines) + "\n"


def write_sensitivity_csv(cells, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "direction", "start_level",
                         "baseline_mean", "perturbed_mean", "relative_change_pct"])
        for c in cells:
            writer.writerow([c.variable, c.direction, c.start_level,
                             repr(c.baseline_mean), repr(c.perturbed_mean),
                             repr(c.relative_change)])

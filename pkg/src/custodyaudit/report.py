"""Audit-report assembly and plot-ready data extraction.

The master report is a single JSON document; every section records the seed
and parameters that produced it, so the whole pipeline can be reproduced from
the report alone.  Plot extracts are plain columnar CSVs sufficient to redraw
each figure in any tool.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .dataset import ValidationError
from .perturb import experiment_summary, stratum_label

REPORT_FORMAT = "custody-audit-report"
REPORT_VERSION = 1

SECTION_NAMES = ("forest", "perturbation", "sensitivity", "trajectory",
                 "fairness", "counterfactual")

PLOT_KINDS = ("deltas", "quantiles", "sensitivity", "trajectory-individuals",
              "trajectory-means", "volatility")


# ---------------------------------------------------------------------------
# Section builders
# ---------------------------------------------------------------------------


def _params_dict(params) -> dict:
    return {
        "n_trees": params.n_trees,
        "max_depth": params.max_depth,
        "min_samples_split": params.min_samples_split,
        "features_per_split": params.features_per_split,
        "bootstrap": params.bootstrap,
        "seed": params.seed,
    }


def section_forest(fingerprint: str, models: dict) -> dict:
    """models: name -> dict(params, accuracy, importance, split)."""
    out = {"schema_fingerprint": fingerprint, "models": {}}
    for name, info in models.items():
        out["models"][name] = {
            "params": _params_dict(info["params"]),
            "split": info.get("split"),
            "accuracy": info["accuracy"],
            "importance": info["importance"],
        }
    return out


def section_perturbation(fingerprint: str, results) -> dict:
    experiments = {}
    for result in results:
        summary = experiment_summary(result)
        summary["distributions"] = [
            {
                "stratum": stratum_label(d.stratum),
                "counts": {str(k): v for k, v in sorted(d.counts.items())},
                "n": d.n,
            }
            for d in result.distributions
        ]
        experiments[result.plan.experiment] = summary
    return {"schema_fingerprint": fingerprint, "experiments": experiments}


def section_sensitivity(fingerprint: str, cells, factor: float, variables) -> dict:
    return {
        "schema_fingerprint": fingerprint,
        "factor": factor,
        "variables": list(variables),
        "cells": [
            {
                "variable": c.variable,
                "direction": c.direction,
                "start_level": c.start_level,
                "baseline_mean": c.baseline_mean,
                "perturbed_mean": c.perturbed_mean,
                "relative_change_pct": c.relative_change,
            }
            for c in cells
        ],
    }


def _ensemble_dict(ensemble, means, include_trajectories: bool) -> dict:
    level, race = ensemble.grouping
    out = {
        "start_level": level,
        "race": race,
        "horizon": ensemble.horizon,
        "with_replacement": ensemble.with_replacement,
        "mean_levels": means,
    }
    if include_trajectories:
        out["trajectories"] = [
            {"person_id": t.person_id, "levels": list(t.levels), "ages": list(t.ages)}
            for t in ensemble.trajectories
        ]
    return out


def section_trajectory(fingerprint: str, seed: int, runs: dict, volatility_stats) -> dict:
    """runs: run name -> dict(per_group, years, ensembles, means per ensemble,
    include_trajectories flag)."""
    from .trajectory import average_trajectory

    out_runs = {}
    for run_name, info in runs.items():
        out_runs[run_name] = {
            "per_group": info["per_group"],
            "years": info["years"],
            "ensembles": [
                _ensemble_dict(e, average_trajectory(e), info.get("include_trajectories", False))
                for e in info["ensembles"]
            ],
        }
    return {
        "schema_fingerprint": fingerprint,
        "seed": seed,
        "runs": out_runs,
        "volatility": [
            {
                "start_level": s.group[0],
                "race": s.group[1],
                "mean_change_per_person_year": s.mean_change_per_person_year,
            }
            for s in volatility_stats
        ],
    }


def section_fairness(fingerprint: str, rows, parity_rows=None) -> dict:
    return {
        "schema_fingerprint": fingerprint,
        "rows": [
            {
                "decision": q.label(),
                "group": q.group,
                "p_a": p.p_a,
                "p_not_a": p.p_not_a,
                "k_a": p.k_a,
                "n_a": p.n_a,
                "k_not_a": p.k_not_a,
                "n_not_a": p.n_not_a,
                "excluded": p.excluded,
                "undefined": p.undefined,
            }
            for q, p in rows
        ],
        "predictive_parity": parity_rows or [],
    }


def section_counterfactual(fingerprint: str, *, k: int, max_distance: float,
                           seed: int, sample_size: int, hits: int, fraction: float,
                           excluded_records: int, examples) -> dict:
    return {
        "schema_fingerprint": fingerprint,
        "k": k,
        "max_distance": max_distance,
        "seed": seed,
        "sample_size": sample_size,
        "hits": hits,
        "fraction": fraction,
        "excluded_records": excluded_records,
        "examples": examples,
    }


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def assemble(metadata: dict, sections: dict) -> dict:
    """Build the master report; absent sections are marked skipped, and all
    present sections must agree on the schema fingerprint."""
    unknown = set(sections) - set(SECTION_NAMES)
    if unknown:
        raise ValidationError(f"unknown report sections {sorted(unknown)}")
    fingerprints = {
        s["schema_fingerprint"]
        for s in sections.values()
        if s is not None and "schema_fingerprint" in s
    }
    if "schema_fingerprint" in metadata:
        fingerprints.add(metadata["schema_fingerprint"])
    if len(fingerprints) > 1:
        raise ValidationError(
            f"conflicting schema fingerprints across sections: {sorted(fingerprints)}"
        )
    report = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "metadata": dict(metadata),
        "sections": {},
    }
    for name in SECTION_NAMES:
        section = sections.get(name)
        report["sections"][name] = section if section is not None else {"status": "skipped"}
    return report


def report_bytes(report: dict) -> bytes:
    return (json.dumps(report, sort_keys=True, indent=2) + "\n").encode("utf-8")


def save_report(report: dict, path) -> None:
    Path(path).write_bytes(report_bytes(report))


def load_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != REPORT_FORMAT:
        raise ValidationError("not an audit report document")
    return doc


def _section(report: dict, name: str) -> dict:
    section = report.get("sections", {}).get(name)
    if section is None or section.get("status") == "skipped":
        raise ValidationError(f"report section '{name}' is missing or skipped")
    return section


# ---------------------------------------------------------------------------
# Plot extracts
# ---------------------------------------------------------------------------

_EXPERIMENT_FIGS = {"E1": "fig1", "E2": "fig2", "E3": "fig3", "E4": "fig4", "E5": "fig5"}


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return Path(path)


def emit_plot_data(report: dict, kind: str, outdir) -> list:
    """Write the columnar extract(s) for one figure kind; returns paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if kind == "deltas":
        section = _section(report, "perturbation")
        paths = []
        for exp, summary in sorted(section["experiments"].items()):
            rows = []
            for dist in summary["distributions"]:
                n = dist["n"]
                for delta, count in sorted(dist["counts"].items(), key=lambda kv: int(kv[0])):
                    rows.append([dist["stratum"], delta, count,
                                 repr(count / n) if n else ""])
            paths.append(_write_csv(
                outdir / f"{_EXPERIMENT_FIGS[exp]}_deltas_{exp.lower()}.csv",
                ["stratum", "delta", "count", "frequency"], rows))
        return paths
    if kind == "quantiles":
        section = _section(report, "perturbation")
        rows = []
        for exp, summary in sorted(section["experiments"].items()):
            for name, q in sorted(summary.get("changed_variable_delta_quantiles", {}).items()):
                rows.append([exp, name, q["min"], q["q1"], q["median"], q["q3"], q["max"]])
        if not rows:
            raise ValidationError("no changed-variable quantiles in the report")
        return [_write_csv(outdir / "fig6_changed_variable_quantiles.csv",
                           ["experiment", "variable", "min", "q1", "median", "q3", "max"], rows)]
    if kind == "sensitivity":
        section = _section(report, "sensitivity")
        rows = [[c["variable"], c["direction"], c["start_level"],
                 repr(c["baseline_mean"]), repr(c["perturbed_mean"]),
                 repr(c["relative_change_pct"])] for c in section["cells"]]
        return [_write_csv(outdir / "fig7_sensitivity.csv",
                           ["variable", "direction", "start_level", "baseline_mean",
                            "perturbed_mean", "relative_change_pct"], rows)]
    if kind == "trajectory-individuals":
        section = _section(report, "trajectory")
        rows = []
        for run_name, run in sorted(section["runs"].items()):
            for ens in run["ensembles"]:
                for traj in ens.get("trajectories", []):
                    for step, (age, level) in enumerate(zip(traj["ages"], traj["levels"])):
                        rows.append([run_name, ens["start_level"], ens["race"] or "",
                                     traj["person_id"], step, age, level])
        if not rows:
            raise ValidationError("no individual trajectories in the report")
        return [_write_csv(outdir / "fig8_trajectory_individuals.csv",
                           ["run", "start_level", "race", "person_id", "step", "age", "level"],
                           rows)]
    if kind == "trajectory-means":
        section = _section(report, "trajectory")
        rows = []
        for run_name, run in sorted(section["runs"].items()):
            for ens in run["ensembles"]:
                for step, mean in enumerate(ens["mean_levels"]):
                    rows.append([run_name, ens["start_level"], ens["race"] or "",
                                 step, repr(mean)])
        return [_write_csv(outdir / "fig9_trajectory_means.csv",
                           ["run", "start_level", "race", "step", "mean_level"], rows)]
    if kind == "volatility":
        section = _section(report, "trajectory")
        rows = [[v["start_level"], v["race"] or "", repr(v["mean_change_per_person_year"])]
                for v in section["volatility"]]
        return [_write_csv(outdir / "fig10_volatility.csv",
                           ["start_level", "race", "mean_change_per_person_year"], rows)]
    raise ValidationError(f"unknown figure kind {kind!r}")


def emit_all_plot_data(report: dict, outdir) -> list:
    """Emit every extract whose section is present; returns written paths."""
    paths = []
    for kind in PLOT_KINDS:
        try:
            paths.extend(emit_plot_data(report, kind, outdir))
        except ValidationError:
            continue
    return paths

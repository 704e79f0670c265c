"""Matplotlib renderings of the audit report's figure extracts.

Each render_* function takes the parsed report document and writes one PNG
per figure next to the corresponding CSV extract.  The CSVs remain the
canonical interface; these images are a convenience for eyeballing a run.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .dataset import ValidationError
from .report import _section

_EXPERIMENT_FIGS = {"E1": "fig1", "E2": "fig2", "E3": "fig3", "E4": "fig4", "E5": "fig5"}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_delta_histograms(report: dict, outdir) -> list:
    section = _section(report, "perturbation")
    outdir = Path(outdir)
    paths = []
    for exp, summary in sorted(section["experiments"].items()):
        dists = summary["distributions"]
        if not dists:
            continue
        ncols = min(len(dists), 4)
        nrows = (len(dists) + ncols - 1) // ncols
        fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.6 * nrows),
                                 squeeze=False, sharey=True)
        for ax in axes.flat:
            ax.set_visible(False)
        for ax, dist in zip(axes.flat, dists):
            ax.set_visible(True)
            deltas = sorted(dist["counts"], key=int)
            freqs = [dist["counts"][d] / dist["n"] for d in deltas]
            ax.bar([int(d) for d in deltas], freqs, color="#4878a8")
            ax.set_title(f"stratum {dist['stratum']}", fontsize=9)
            ax.set_xlabel("custody-level change")
        axes[0][0].set_ylabel("frequency")
        fig.suptitle(f"{exp}: classification change per stratum")
        fig.tight_layout()
        paths.append(_save(fig, outdir / f"{_EXPERIMENT_FIGS[exp]}_deltas_{exp.lower()}.png"))
    return paths


def render_quantiles(report: dict, outdir) -> list:
    section = _section(report, "perturbation")
    boxes, labels = [], []
    for exp, summary in sorted(section["experiments"].items()):
        for name, q in sorted(summary.get("changed_variable_delta_quantiles", {}).items()):
            boxes.append({
                "whislo": q["min"], "q1": q["q1"], "med": q["median"],
                "q3": q["q3"], "whishi": q["max"], "fliers": [],
            })
            labels.append(f"{exp}:{name}")
    if not boxes:
        raise ValidationError("no changed-variable quantiles in the report")
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(boxes)), 4.0))
    ax.bxp(boxes, showfliers=False)
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_ylabel("custody-level change")
    ax.set_title("delta quantiles by changed variable")
    fig.tight_layout()
    return [_save(fig, Path(outdir) / "fig6_changed_variable_quantiles.png")]


def render_sensitivity(report: dict, outdir) -> list:
    section = _section(report, "sensitivity")
    variables = section["variables"]
    fig, axes = plt.subplots(1, len(variables), figsize=(3.0 * len(variables), 3.2),
                             squeeze=False, sharey=True)
    for ax, variable in zip(axes[0], variables):
        cells = [c for c in section["cells"] if c["variable"] == variable]
        levels = sorted({c["start_level"] for c in cells})
        base = [next(c["baseline_mean"] for c in cells if c["start_level"] == l)
                for l in levels]
        ax.plot(levels, base, color="green", label="baseline")
        for direction, marker, color in (("increase", "o", "red"), ("decrease", "D", "blue")):
            ys = [next(c["perturbed_mean"] for c in cells
                       if c["start_level"] == l and c["direction"] == direction)
                  for l in levels]
            ax.plot(levels, ys, marker, color=color, label=direction)
        ax.set_title(variable, fontsize=9)
        ax.set_xlabel("start level")
        ax.set_xticks(levels)
    axes[0][0].set_ylabel("mean predicted level")
    axes[0][0].legend(fontsize=7)
    fig.suptitle(f"mean prediction under ±{section['factor'] * 100:g}% scaling")
    fig.tight_layout()
    return [_save(fig, Path(outdir) / "fig7_sensitivity.png")]


def render_trajectory_individuals(report: dict, outdir) -> list:
    section = _section(report, "trajectory")
    panels = []
    for run_name, run in sorted(section["runs"].items()):
        for ens in run["ensembles"]:
            if ens.get("trajectories"):
                panels.append((run_name, ens))
    if not panels:
        raise ValidationError("no individual trajectories in the report")
    ncols = min(len(panels), 4)
    nrows = (len(panels) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.6 * nrows),
                             squeeze=False, sharey=True)
    for ax in axes.flat:
        ax.set_visible(False)
    for ax, (run_name, ens) in zip(axes.flat, panels):
        ax.set_visible(True)
        for traj in ens["trajectories"]:
            ax.plot(range(len(traj["levels"])), traj["levels"], alpha=0.6, linewidth=1)
        race = f" {ens['race']}" if ens["race"] else ""
        ax.set_title(f"start {ens['start_level']}{race}", fontsize=9)
        ax.set_xlabel("year")
        ax.set_ylim(0.5, 5.5)
    axes[0][0].set_ylabel("custody level")
    fig.suptitle("individual reclassification trajectories")
    fig.tight_layout()
    return [_save(fig, Path(outdir) / "fig8_trajectory_individuals.png")]


def render_trajectory_means(report: dict, outdir) -> list:
    section = _section(report, "trajectory")
    runs = sorted(section["runs"].items())
    fig, axes = plt.subplots(1, len(runs), figsize=(3.6 * len(runs), 3.2),
                             squeeze=False, sharey=True)
    for ax, (run_name, run) in zip(axes[0], runs):
        for ens in run["ensembles"]:
            label = f"CL{ens['start_level']}" + (f" {ens['race']}" if ens["race"] else "")
            ax.plot(range(len(ens["mean_levels"])), ens["mean_levels"], label=label)
        ax.set_title(run_name, fontsize=9)
        ax.set_xlabel("year")
        ax.legend(fontsize=6)
        ax.set_ylim(0.5, 5.5)
    axes[0][0].set_ylabel("mean custody level")
    fig.suptitle("average reclassification trajectories")
    fig.tight_layout()
    return [_save(fig, Path(outdir) / "fig9_trajectory_means.png")]


def render_volatility(report: dict, outdir) -> list:
    section = _section(report, "trajectory")
    stats = section["volatility"]
    if not stats:
        raise ValidationError("no volatility statistics in the report")
    races = sorted({v["race"] or "all" for v in stats})
    levels = sorted({v["start_level"] for v in stats})
    width = 0.8 / len(races)
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    for i, race in enumerate(races):
        xs, ys = [], []
        for j, level in enumerate(levels):
            for v in stats:
                if (v["race"] or "all") == race and v["start_level"] == level:
                    xs.append(j + i * width)
                    ys.append(v["mean_change_per_person_year"])
        ax.bar(xs, ys, width=width, label=race)
    ax.set_xticks([j + width * (len(races) - 1) / 2 for j in range(len(levels))])
    ax.set_xticklabels([f"CL{l}" for l in levels])
    ax.set_ylabel("mean |level change| per person-year")
    ax.set_title("trajectory volatility by start level")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return [_save(fig, Path(outdir) / "fig10_volatility.png")]


_RENDERERS = (
    render_delta_histograms,
    render_quantiles,
    render_sensitivity,
    render_trajectory_individuals,
    render_trajectory_means,
    render_volatility,
)


def render_all(report: dict, outdir) -> list:
    """Render every figure whose section is present; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for renderer in _RENDERERS:
        try:
            paths.extend(renderer(report, outdir))
        except ValidationError:
            continue
    return paths

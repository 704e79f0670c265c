"""Command-line front door.

Subcommands mirror the library modules; `audit` composes the whole pipeline
(train both models, run the perturbation experiments, the sensitivity scan,
the reclassification simulations, the fairness tables and the counterfactual
search) into one reproducible batch keyed by a single master seed.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from . import counterfactual as cf
from . import fairness as fair
from . import figures
from . import report as rep
from . import trajectory as traj
from .dataset import (
    Cohort,
    MODEL_INITIAL,
    MODEL_RECLASS,
    SynthConfig,
    ValidationError,
    default_schema,
    generate_synthetic_cohort,
    initial_view,
    load_cohort,
    model_view,
    race_label,
    read_config_file,
    reclass_view,
    synth_config_from_mapping,
    write_cohort,
)
from .forest import (
    ForestParams,
    accuracy,
    load_forest,
    mdi_importance,
    save_forest,
    stratified_split,
    train_forest,
)
from .perturb import (
    PerturbPlan,
    run_experiment,
    write_experiment_csv,
    write_experiment_summary,
)
from .rng import derive_seed, substream
from .sensitivity import (
    DEFAULT_SCAN_VARIABLES,
    format_table,
    sensitivity_scan,
    write_sensitivity_csv,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _say(line: str) -> None:
    print(line)


def _load_full_cohort(path) -> Cohort:
    return load_cohort(path, default_schema())


def _forest_params(args, seed: int) -> ForestParams:
    features = args.features
    if features != "sqrt":
        features = int(features)
    return ForestParams(
        n_trees=args.trees,
        max_depth=args.max_depth,
        min_samples_split=args.min_samples_split,
        features_per_split=features,
        bootstrap=not args.no_bootstrap,
        seed=seed,
    )


def _add_forest_flags(p) -> None:
    p.add_argument("--trees", type=int, default=100, help="number of trees (default 100)")
    p.add_argument("--max-depth", type=int, default=None, help="depth bound (default unlimited)")
    p.add_argument("--min-samples-split", type=int, default=2)
    p.add_argument("--features", default="sqrt",
                   help="features considered per split: a count or 'sqrt' (default)")
    p.add_argument("--no-bootstrap", action="store_true",
                   help="train every tree on the full cohort")


def _synth_config(args) -> SynthConfig:
    mapping = read_config_file(args.config) if args.config else {}
    return synth_config_from_mapping(
        mapping, n=args.n, seed=args.seed, noise=args.noise
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = _synth_config(args)
    cohort = generate_synthetic_cohort(config)
    write_cohort(cohort, args.out)
    _say(f"synth: wrote {len(cohort)} records to {args.out}")
    return 0


def cmd_train(args) -> int:
    cohort = _load_full_cohort(args.cohort)
    view = model_view(cohort, MODEL_INITIAL if args.model == "ic" else MODEL_RECLASS)
    params = _forest_params(args, args.seed)
    forest = train_forest(view, params, jobs=args.jobs)
    save_forest(forest, args.out)
    _say(f"train[{args.model}]: {params.n_trees} trees on {len(view)} records -> {args.out}")
    return 0


def _check_forest_schema(forest, cohort) -> None:
    candidates = {
        cohort.schema.fingerprint(),
        initial_view(cohort).schema.fingerprint(),
        reclass_view(cohort).schema.fingerprint(),
    }
    if forest.schema_fingerprint not in candidates:
        raise ValidationError(
            "forest schema fingerprint matches neither the cohort nor its model views"
        )


def cmd_evaluate(args) -> int:
    cohort = _load_full_cohort(args.cohort)
    forest = load_forest(args.forest)
    _check_forest_schema(forest, cohort)
    acc = accuracy(forest, cohort)
    _say(f"evaluate: accuracy={acc:.4f} on {len(cohort)} records")
    return 0


def cmd_importance(args) -> int:
    forest = load_forest(args.forest)
    importance = mdi_importance(forest)
    ranked = sorted(importance.items(), key=lambda kv: (-kv[1], kv[0]))
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variable", "importance"])
            for name, weight in ranked:
                writer.writerow([name, repr(weight)])
    top = ", ".join(f"{n}={w:.3f}" for n, w in ranked[:4])
    _say(f"importance: {top}" + (f" -> {args.out}" if args.out else ""))
    return 0


def cmd_perturb(args) -> int:
    cohort = _load_full_cohort(args.cohort)
    forest = load_forest(args.forest)
    _check_forest_schema(forest, cohort)
    plan = PerturbPlan(
        experiment=f"E{args.experiment}",
        n_per_stratum=args.n,
        races=tuple(args.races.split(",")),
        confidence=args.confidence,
        seed=args.seed,
    )
    result = run_experiment(plan, forest, cohort, jobs=args.jobs)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / f"experiment_{plan.experiment.lower()}.csv"
    json_path = outdir / f"experiment_{plan.experiment.lower()}.json"
    write_experiment_csv(result, csv_path)
    write_experiment_summary(result, json_path)
    _say(f"perturb[{plan.experiment}]: {len(result.distributions)} strata, "
         f"{len(result.skipped)} skipped -> {csv_path}")
    return 0


def cmd_sensitivity(args) -> int:
    cohort = _load_full_cohort(args.cohort)
    forest = load_forest(args.forest)
    _check_forest_schema(forest, cohort)
    variables = tuple(args.variables.split(",")) if args.variables else DEFAULT_SCAN_VARIABLES
    cells = sensitivity_scan(forest, cohort, variables=variables, factor=args.factor)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "sensitivity.csv"
    write_sensitivity_csv(cells, csv_path)
    table = format_table(cells)
    (outdir / "sensitivity.txt").write_text(table, encoding="utf-8")
    _say(f"sensitivity: {len(cells)} cells -> {csv_path}")
    print(table, end="")
    return 0


def cmd_trajectory(args) -> int:
    cohort = _load_full_cohort(args.cohort)
    forest = load_forest(args.forest)
    _check_forest_schema(forest, cohort)
    races = tuple(args.races.split(",")) if args.races else None
    groups = traj.default_groups(cohort, races)
    if not groups:
        raise ValidationError("no populated start levels in the cohort")
    ensembles = traj.simulate_ensemble(forest, cohort, args.per_group, groups,
                                       args.years, args.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    traj.write_trajectories_csv(ensembles, outdir / "trajectories.csv")
    traj.write_averages_csv(ensembles, outdir / "trajectory_averages.csv")
    stats = traj.volatility_table(ensembles)
    traj.write_volatility_csv(stats, outdir / "volatility.csv")
    _say(f"trajectory: {sum(len(e.trajectories) for e in ensembles)} people over "
         f"{args.years} years -> {outdir}")
    return 0


def cmd_fairness(args) -> int:
    cohort = _load_full_cohort(args.cohort)
    rows = fair.decision_table(cohort)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    fair.write_fairness_csv(rows, outdir / "fairness.csv")
    lines = [f"fairness: {len(rows)} rows -> {outdir / 'fairness.csv'}"]
    if args.forest:
        forest = load_forest(args.forest)
        _check_forest_schema(forest, cohort)
        parity_rows = _parity_rows(forest, cohort, rows)
        with open(outdir / "fairness_parity.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["group", "model_p_a", "model_p_not_a",
                             "data_p_a", "data_p_not_a", "gap_a", "gap_not_a"])
            for row in parity_rows:
                writer.writerow([row["group"],
                                 row["model_p_a"], row["model_p_not_a"],
                                 row["data_p_a"], row["data_p_not_a"],
                                 row["gap_a"], row["gap_not_a"]])
        lines.append(f"fairness: parity for {len(parity_rows)} groups -> "
                     f"{outdir / 'fairness_parity.csv'}")
    for line in lines:
        _say(line)
    return 0


def _parity_rows(forest, cohort, table_rows) -> list:
    data_rates = {
        q.group: p for q, p in table_rows
        if q.decision == fair.DECISION_HIGH_CUSTODY and q.condition is None
    }
    out = []
    for group in fair.GROUPS:
        model_pair = fair.predictive_parity(forest, cohort, group)
        data_pair = data_rates[group]
        gap_a, gap_not_a = fair.parity_gap(model_pair, data_pair)
        out.append({
            "group": group,
            "model_p_a": model_pair.p_a,
            "model_p_not_a": model_pair.p_not_a,
            "data_p_a": data_pair.p_a,
            "data_p_not_a": data_pair.p_not_a,
            "gap_a": gap_a,
            "gap_not_a": gap_not_a,
        })
    return out


def _counterfactual_run(cohort, k, sample_size, max_distance, seed, example_cap=20):
    schema = cohort.schema
    pairs, excluded = [], 0
    for rec in cohort.records:
        point = cf.cf_point_from_record(rec, schema)
        if point is None:
            excluded += 1
        else:
            pairs.append((point, cf.cf_label_from_record(rec)))
    if not pairs:
        raise ValidationError("no Black/Hispanic/White records for counterfactual search")
    k = min(k, len(pairs) if len(pairs) % 2 else len(pairs) - 1)
    knn = cf.KnnClassifier.from_pairs(pairs, k)
    rng = substream(seed, "counterfactual")
    size = min(sample_size, len(pairs))
    chosen = [pairs[i][0] for i in rng.permutation(len(pairs))[:size]]
    hits = 0
    examples = []
    example_rows = []
    for point in chosen:
        results = cf.find_counterfactuals(knn, point, max_distance)
        if results:
            hits += 1
            if len(example_rows) < example_cap:
                base_class = cf.knn_classify(knn, point)
                for item in results:
                    example_rows.append((point, base_class, item))
                    examples.append({
                        "base": list(point.astuple()),
                        "base_class": base_class,
                        "changes": [[n, o, v] for n, o, v in item.changes],
                        "new_class": item.new_class,
                        "distance": item.distance,
                    })
    return {
        "knn": knn,
        "k": k,
        "sample_size": size,
        "hits": hits,
        "fraction": hits / size if size else 0.0,
        "excluded_records": excluded,
        "examples": examples,
        "example_rows": example_rows,
    }


def cmd_counterfactual(args) -> int:
    cohort = _load_full_cohort(args.cohort)
    run = _counterfactual_run(cohort, args.k, args.sample, args.max_distance, args.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cf.write_counterfactual_csv(run["example_rows"], outdir / "counterfactuals.csv")
    summary = {key: run[key] for key in
               ("k", "sample_size", "hits", "fraction", "excluded_records")}
    summary["max_distance"] = args.max_distance
    summary["seed"] = args.seed
    with open(outdir / "counterfactuals.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _say(f"counterfactual: {run['hits']}/{run['sample_size']} "
         f"({100 * run['fraction']:.1f}%) points admit a counterfactual -> {outdir}")
    return 0


def cmd_report(args) -> int:
    report = rep.load_report(args.report)
    outdir = Path(args.out)
    paths = rep.emit_all_plot_data(report, outdir)
    _say(f"report: wrote {len(paths)} plot extracts to {outdir}")
    if not args.no_figures:
        rendered = figures.render_all(report, outdir)
        _say(f"report: rendered {len(rendered)} figures to {outdir}")
    return 0


# ---------------------------------------------------------------------------
# The full audit pipeline
# ---------------------------------------------------------------------------


def cmd_audit(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    master = args.seed
    schema = default_schema()

    if args.cohort:
        cohort = _load_full_cohort(args.cohort)
        source = Path(args.cohort).name
    else:
        config = _synth_config(args)
        cohort = generate_synthetic_cohort(config)
        source = "synthetic"
        write_cohort(cohort, outdir / "cohort.csv")
    _say(f"audit: cohort of {len(cohort)} records ({source})")

    fingerprint = schema.fingerprint()
    train_cohort, test_cohort = stratified_split(cohort, args.test_fraction, seed=master)

    models = {}
    forests = {}
    for tag, model in (("ic", MODEL_INITIAL), ("re", MODEL_RECLASS)):
        params = _forest_params(args, derive_seed(master, "forest", tag))
        view = model_view(train_cohort, model)
        forest = train_forest(view, params, jobs=args.jobs)
        acc = accuracy(forest, model_view(test_cohort, model))
        importance = mdi_importance(forest)
        forests[tag] = forest
        models[model] = {
            "params": params,
            "split": {"test_fraction": args.test_fraction, "seed": master},
            "accuracy": acc,
            "importance": importance,
        }
        save_forest(forest, outdir / f"forest_{tag}.json")
        top = sorted(importance.items(), key=lambda kv: (-kv[1], kv[0]))[:2]
        _say(f"audit: {model} accuracy={acc:.3f}, top importance "
             + ", ".join(f"{n}={w:.3f}" for n, w in top))
    # section fingerprints refer to the full interchange schema
    forest_section = rep.section_forest(fingerprint, models)

    results = []
    for number in range(1, 6):
        plan = PerturbPlan(
            experiment=f"E{number}",
            n_per_stratum=args.perturb_n,
            races=tuple(args.races.split(",")),
            confidence=0.95,
            seed=derive_seed(master, "perturb"),
        )
        result = run_experiment(plan, forests["ic"], cohort, jobs=args.jobs)
        results.append(result)
        _say(f"audit: {plan.experiment} over {len(result.distributions)} strata"
             + (f", {len(result.skipped)} skipped" if result.skipped else ""))
    perturb_section = rep.section_perturbation(fingerprint, results)

    cells = sensitivity_scan(forests["ic"], cohort, factor=args.factor)
    sensitivity_section = rep.section_sensitivity(
        fingerprint, cells, args.factor, DEFAULT_SCAN_VARIABLES)
    (outdir / "sensitivity.txt").write_text(format_table(cells), encoding="utf-8")
    _say(f"audit: sensitivity scan of {len(DEFAULT_SCAN_VARIABLES)} variables")

    races = tuple(args.races.split(","))
    level_groups = traj.default_groups(cohort)
    populated = {(rec.custody_level, race_label(rec, schema)) for rec in cohort.records}
    race_groups = [g for g in traj.default_groups(cohort, races) if g in populated]
    runs = {}
    if level_groups:
        runs["individuals"] = {
            "per_group": 10, "years": args.years, "include_trajectories": True,
            "ensembles": traj.simulate_ensemble(
                forests["re"], cohort, 10, level_groups, args.years,
                derive_seed(master, "traj", "individuals")),
        }
        runs["averages_short"] = {
            "per_group": 50, "years": 20,
            "ensembles": traj.simulate_ensemble(
                forests["re"], cohort, 50, level_groups, 20,
                derive_seed(master, "traj", "short")),
        }
        runs["averages_long"] = {
            "per_group": 50, "years": 100,
            "ensembles": traj.simulate_ensemble(
                forests["re"], cohort, 50, level_groups, 100,
                derive_seed(master, "traj", "long")),
        }
    volatility_stats = []
    if race_groups:
        race_ensembles = traj.simulate_ensemble(
            forests["re"], cohort, 100, race_groups, args.years,
            derive_seed(master, "traj", "race"))
        runs["by_race"] = {"per_group": 100, "years": args.years,
                           "ensembles": race_ensembles}
        volatility_stats = traj.volatility_table(race_ensembles)
    trajectory_section = rep.section_trajectory(
        fingerprint, master, runs, volatility_stats)
    _say(f"audit: {len(runs)} trajectory runs, "
         f"{len(volatility_stats)} volatility groups")

    table_rows = fair.decision_table(cohort)
    parity_rows = _parity_rows(forests["ic"], cohort, table_rows)
    fairness_section = rep.section_fairness(fingerprint, table_rows, parity_rows)
    _say(f"audit: fairness table of {len(table_rows)} rows")

    cf_run = _counterfactual_run(cohort, args.k, args.cf_sample,
                                 args.max_distance, derive_seed(master, "cf"))
    counterfactual_section = rep.section_counterfactual(
        fingerprint,
        k=cf_run["k"],
        max_distance=args.max_distance,
        seed=derive_seed(master, "cf"),
        sample_size=cf_run["sample_size"],
        hits=cf_run["hits"],
        fraction=cf_run["fraction"],
        excluded_records=cf_run["excluded_records"],
        examples=cf_run["examples"],
    )
    _say(f"audit: counterfactuals for {cf_run['hits']}/{cf_run['sample_size']} sampled points")

    metadata = {
        "package": "custodyaudit",
        "version": __version__,
        "master_seed": master,
        "cohort_source": source,
        "n_records": len(cohort),
        "schema_fingerprint": fingerprint,
        "generated_at": (datetime.now(timezone.utc).isoformat() if args.stamp else None),
    }
    report = rep.assemble(metadata, {
        "forest": forest_section,
        "perturbation": perturb_section,
        "sensitivity": sensitivity_section,
        "trajectory": trajectory_section,
        "fairness": fairness_section,
        "counterfactual": counterfactual_section,
    })
    report_path = outdir / "audit-report.json"
    rep.save_report(report, report_path)
    _say(f"audit: report -> {report_path}")

    extracts = rep.emit_all_plot_data(report, outdir)
    _say(f"audit: wrote {len(extracts)} plot extracts")
    if not args.no_figures:
        rendered = figures.render_all(report, outdir)
        _say(f"audit: rendered {len(rendered)} figures")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="custodyaudit",
                     description="Reconstruct and audit an opaque custody-classification tool.")
    parser.add_argument("--version", action="version", version=f"custodyaudit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic cohort CSV")
    p.add_argument("--n", type=int, default=None, help="number of records")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--config", default=None, help="key=value configuration file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a surrogate forest")
    p.add_argument("--cohort", required=True)
    p.add_argument("--model", choices=("ic", "re"), default="ic")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_forest_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="accuracy of a forest on a cohort")
    p.add_argument("--cohort", required=True)
    p.add_argument("--forest", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("importance", help="mean-decrease-in-impurity importances")
    p.add_argument("--forest", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("perturb", help="run one perturbation experiment")
    p.add_argument("--cohort", required=True)
    p.add_argument("--forest", required=True)
    p.add_argument("--experiment", type=int, choices=(1, 2, 3, 4, 5), required=True)
    p.add_argument("--n", type=int, default=100, help="observations per stratum")
    p.add_argument("--races", default="Black,White")
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("sensitivity", help="±factor scaling scan")
    p.add_argument("--cohort", required=True)
    p.add_argument("--forest", required=True)
    p.add_argument("--factor", type=float, default=0.10)
    p.add_argument("--variables", default=None, help="comma-separated variable names")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("trajectory", help="repeated-reclassification simulation")
    p.add_argument("--cohort", required=True)
    p.add_argument("--forest", required=True, help="reclassification forest")
    p.add_argument("--per-group", type=int, default=100)
    p.add_argument("--years", type=int, default=8)
    p.add_argument("--races", default=None, help="comma-separated race labels")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("fairness", help="conditional decision-rate tables")
    p.add_argument("--cohort", required=True)
    p.add_argument("--forest", default=None, help="also compute predictive parity")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_fairness)

    p = sub.add_parser("counterfactual", help="protected-attribute counterfactual search")
    p.add_argument("--cohort", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--sample", type=int, default=500)
    p.add_argument("--max-distance", type=float, default=3.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_counterfactual)

    p = sub.add_parser("audit", help="run the complete audit pipeline")
    p.add_argument("--cohort", default=None, help="cohort CSV (default: synthesize)")
    p.add_argument("--n", type=int, default=10000, help="synthetic cohort size")
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, required=True, help="master seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--test-fraction", type=float, default=0.2)
    _add_forest_flags(p)
    p.add_argument("--perturb-n", type=int, default=100)
    p.add_argument("--races", default="Black,White")
    p.add_argument("--factor", type=float, default=0.10)
    p.add_argument("--years", type=int, default=8)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--cf-sample", type=int, default=500)
    p.add_argument("--max-distance", type=float, default=3.0)
    p.add_argument("--stamp", action="store_true",
                   help="record wall-clock time in the report (breaks rerun byte-identity)")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("report", help="plot extracts and figures from a report")
    p.add_argument("--report", required=True, help="audit-report.json path")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

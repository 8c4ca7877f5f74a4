"""Command-line front end.

Subcommands cover the full pipeline: ``preprocess`` cleans and caches a
dataset, ``n0`` calibrates the initial batch size, ``sweep`` produces the
threshold grid and the accuracy/social-cost trade-off table, ``simulate``
runs paired biased/oracle simulations, and ``report`` aggregates run
outputs. Every artifact directory carries a manifest that reproduces its
CSVs byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import replace

import click
import numpy as np

from . import __version__, calibration, data, dynamics, evaluation
from .config import (OUT_ROOT_ENV, ConfigError, DatasetSpec, ExperimentConfig,
                     config_from_dict, config_to_dict, load_config,
                     parse_threshold_spec)
from .evaluation import ORIGIN_ACCURACY, ORIGIN_SOCIAL_COST, ThresholdPolicy
from .seeding import derive_seed


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage} failed: {message}")
        self.stage = stage


def _write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_manifest(dir_path: str, payload: dict) -> str:
    payload = dict(payload)
    payload["loansim_version"] = __version__
    path = os.path.join(dir_path, "manifest.json")
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _cache_path(spec: DatasetSpec, name: str, out_root: str) -> str:
    if spec.cache:
        return spec.cache
    return os.path.join(out_root, "preprocess", name, "dataset.csv")


def _load_cache(spec: DatasetSpec, name: str, out_root: str, stage: str) -> tuple[data.Dataset, str]:
    path = _cache_path(spec, name, out_root)
    if not os.path.exists(path):
        raise StageError(stage, f"dataset cache {path} not found; "
                         f"run 'loansim preprocess' first")
    return data.load_dataset(path), path


# ---------------------------------------------------------------- stages


def run_preprocess(cfg: ExperimentConfig, name: str, spec: DatasetSpec,
                   out_root: str) -> dict:
    """Raw CSV -> cleaned, encoded, optionally down-sampled dataset cache."""
    pre = spec.preprocess
    if spec.path is None:
        raise StageError("preprocess", f"dataset {name!r} has no raw path")
    step = "load_csv"
    try:
        table = data.load_csv(spec.path, spec.label_column,
                              spec.positive_means_default)
        if pre.drop_top_null_columns:
            step = "drop_high_null_columns"
            table = data.drop_high_null_columns(table, pre.drop_top_null_columns)
        if pre.drop_null_rows:
            step = "drop_null_rows"
            table = data.drop_null_rows(table)
        step = "to_dataset"
        ds = data.to_dataset(table)
        if pre.correlation_top_m is not None:
            step = "correlation_feature_select"
            ds = data.correlation_feature_select(ds, pre.correlation_top_m,
                                                 pre.correlation_pair_threshold)
        if pre.target_majority_share is not None:
            step = "downsample_to_ratio"
            ds = data.downsample_to_ratio(
                ds, data.ImbalanceRatio(pre.target_majority_share),
                derive_seed(cfg.seed, "preprocess", name))
    except (data.DataError, OSError) as exc:
        raise StageError(f"preprocess step {step}", str(exc)) from exc

    cache = _cache_path(spec, name, out_root)
    os.makedirs(os.path.dirname(cache) or ".", exist_ok=True)
    data.save_dataset(ds, cache, label_column=spec.label_column or "y",
                      positive_means_default=spec.positive_means_default)
    summary = {"name": name, "n_rows": ds.n_rows, "n_features": ds.n_features,
               "majority_share": round(ds.majority_share(), 6)}
    out_dir = os.path.join(out_root, "preprocess", name)
    _write_text(os.path.join(out_dir, "summary.csv"),
                "name,n_rows,n_features,majority_share\n"
                f"{name},{ds.n_rows},{ds.n_features},"
                f"{evaluation.format_number(ds.majority_share())}\n")
    _write_manifest(out_dir, {
        "command": "preprocess", "dataset": name, "seed": cfg.seed,
        "spec": config_to_dict(cfg)["datasets" if name in cfg.datasets else "dataset"],
        "cache": cache, "cache_sha256": _sha256(cache),
    })
    return summary


def run_n0(cfg: ExperimentConfig, name: str, spec: DatasetSpec,
           kind: str, out_root: str) -> dict:
    """Learning curve plus detected initial batch size."""
    ds, cache = _load_cache(spec, name, out_root, "n0")
    cal = cfg.calibration
    seed = derive_seed(cfg.seed, "n0", name, kind)
    learner = cfg.learner.to_params(seed=0)
    try:
        curve = calibration.learning_curve(ds, learner, cal.k,
                                           eval_fraction=cal.eval_fraction,
                                           seed=seed, repeats=cal.repeats)
        result = calibration.detect_n0(curve, window=cal.window,
                                       slope_eps=cal.slope_eps)
    except (calibration.CalibrationError, ValueError) as exc:
        raise StageError("n0", str(exc)) from exc
    out_dir = os.path.join(out_root, "n0", f"{name}_{kind}")
    _write_text(os.path.join(out_dir, "curve.csv"),
                calibration.curve_to_csv(curve, window=cal.window))
    payload = {"n0": result.n0, "stabilized": result.stabilized,
               "slope_per_1000": result.slope, "window": cal.window,
               "slope_eps": cal.slope_eps, "k": cal.k}
    _write_text(os.path.join(out_dir, "n0.json"),
                json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write_manifest(out_dir, {
        "command": "n0", "dataset": name, "model": kind, "seed": cfg.seed,
        "calibration": config_to_dict(cfg)["calibration"],
        "learner": config_to_dict(cfg)["learner"],
        "cache": cache, "cache_sha256": _sha256(cache),
    })
    return payload


def run_sweep(cfg: ExperimentConfig, name: str, spec: DatasetSpec,
              kind: str, out_root: str) -> dict:
    """Train on the 80/20 split, sweep the grid, emit the threshold table."""
    ds, cache = _load_cache(spec, name, out_root, "sweep")
    sw = cfg.sweep
    costs = [float(c) for c in sw.costs]
    try:
        train, holdout = data.split(ds, sw.train_fraction,
                                    derive_seed(cfg.seed, "sweep", name, kind,
                                                "split"))
        learner = cfg.learner.to_params(
            seed=derive_seed(cfg.seed, "sweep", name, kind, "fit"))
        from .learners import fit, predict_proba
        model = fit(learner, train)
        scores = predict_proba(model, holdout.X)
        rows = evaluation.sweep(scores, holdout.y, sw.grid_step, costs)
    except ValueError as exc:
        raise StageError("sweep", str(exc)) from exc

    acc_policy = evaluation.argmax_accuracy(rows)
    by_index = {round(r.tau / sw.grid_step): r for r in rows}
    acc_row = by_index[round(acc_policy.tau / sw.grid_step)]
    lines = ["instance,c,tau,accuracy,relative_accuracy_loss_pct"]
    lines.append(f"accuracy_optimal,,{evaluation.format_number(acc_policy.tau)},"
                 f"{evaluation.format_number(acc_row.accuracy)},0")
    table = {"tau_acc": acc_policy.tau}
    for c in costs:
        policy = evaluation.argmin_social_cost(rows, c)
        row = by_index[round(policy.tau / sw.grid_step)]
        loss = evaluation.relative_accuracy_loss(acc_row.accuracy, row.accuracy)
        lines.append(f"social_cost_optimal,{c:g},"
                     f"{evaluation.format_number(policy.tau)},"
                     f"{evaluation.format_number(row.accuracy)},"
                     f"{evaluation.format_number(loss)}")
        table[f"tau_sc_c{c:g}"] = policy.tau

    out_dir = os.path.join(out_root, "sweep", f"{name}_{kind}")
    _write_text(os.path.join(out_dir, "sweep.csv"),
                evaluation.sweep_to_csv(rows, costs))
    _write_text(os.path.join(out_dir, "thresholds.csv"), "\n".join(lines) + "\n")
    _write_manifest(out_dir, {
        "command": "sweep", "dataset": name, "model": kind, "seed": cfg.seed,
        "sweep": config_to_dict(cfg)["sweep"],
        "learner": config_to_dict(cfg)["learner"],
        "cache": cache, "cache_sha256": _sha256(cache),
    })
    return table


def _auto_n0(cfg: ExperimentConfig, name: str, spec: DatasetSpec, kind: str,
             out_root: str) -> int:
    payload = run_n0(cfg, name, spec, kind, out_root)
    return int(payload["n0"])


def run_simulate(cfg: ExperimentConfig, name: str, spec: DatasetSpec,
                 kind: str, out_root: str) -> list[dict]:
    """One paired biased/oracle run per requested threshold policy."""
    ds, cache = _load_cache(spec, name, out_root, "simulate")
    sim = cfg.simulate
    n0 = _auto_n0(cfg, name, spec, kind, out_root) if sim.n0 == "auto" else int(sim.n0)
    n_prime = sim.n_prime if sim.n_prime is not None else dynamics.default_n_prime(n0)
    run_seed = derive_seed(cfg.seed, "simulate", name, kind)
    learner = cfg.learner.to_params(seed=0)

    results = []
    for spec_item in sim.thresholds:
        policy = parse_threshold_spec(spec_item)
        c0 = dynamics.draw_initial(ds, n0, derive_seed(run_seed, "sample", 0))
        try:
            resolved = dynamics.resolve_threshold(
                ds, c0, policy, learner, run_seed,
                grid_step=cfg.sweep.grid_step,
                train_fraction=cfg.sweep.train_fraction)
            sim_cfg = dynamics.SimulationConfig(
                n0=n0, n_prime=n_prime, iterations=sim.iterations,
                threshold=resolved, learner=learner, seed=run_seed,
                refit_each_iteration=sim.refit_each_iteration)
            result = dynamics.run_paired(ds, sim_cfg)
        except ValueError as exc:
            raise StageError("simulate", str(exc)) from exc

        run_dir = os.path.join(out_root, "simulate", f"{name}_{kind}",
                               policy.label())
        _write_text(os.path.join(run_dir, "series.csv"),
                    dynamics.series_to_csv(result))
        _write_manifest(run_dir, _simulate_manifest(
            cfg, name, kind, cache, n0, n_prime, spec_item, resolved, result))
        results.append({
            "policy": policy.label(), "tau": result.resolved_tau,
            "truncated": result.truncated,
            "completed_iterations": result.completed_iterations,
            "run_dir": run_dir,
        })
    return results


def _simulate_manifest(cfg, name, kind, cache, n0, n_prime, spec_item,
                       resolved: ThresholdPolicy, result) -> dict:
    grid_step = cfg.sweep.grid_step
    return {
        "command": "simulate", "dataset": name, "model": kind,
        "seed": cfg.seed, "cache": cache, "cache_sha256": _sha256(cache),
        "learner": config_to_dict(cfg)["learner"],
        "simulate": {"n0": n0, "n_prime": n_prime,
                     "iterations": cfg.simulate.iterations,
                     "refit_each_iteration": cfg.simulate.refit_each_iteration},
        "threshold": {"spec": spec_item, "origin": resolved.origin,
                      "cost": resolved.cost, "tau": resolved.tau,
                      "grid_index": int(round(resolved.tau / grid_step)),
                      "grid_step": grid_step},
        "sweep": config_to_dict(cfg)["sweep"],
        "run": {"truncated": result.truncated,
                "completed_iterations": result.completed_iterations,
                "metadata": result.metadata},
    }


def rerun_simulate_manifest(manifest_path: str, out_dir: str | None = None) -> str:
    """Re-execute a simulate run from its manifest; returns the series path."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("command") != "simulate":
        raise StageError("simulate", f"{manifest_path} is not a simulate manifest")
    cache = manifest["cache"]
    if not os.path.exists(cache):
        raise StageError("simulate", f"dataset cache {cache} not found")
    if _sha256(cache) != manifest["cache_sha256"]:
        raise StageError("simulate", f"dataset cache {cache} changed since the "
                         "manifest was written")
    ds = data.load_dataset(cache)
    cfg = config_from_dict({"seed": manifest["seed"],
                            "learner": manifest["learner"]})
    learner = cfg.learner.to_params(seed=0)
    thr = manifest["threshold"]
    run_seed = derive_seed(manifest["seed"], "simulate", manifest["dataset"],
                           manifest["model"])
    policy = parse_threshold_spec(thr["spec"])
    if not policy.resolved:
        c0 = dynamics.draw_initial(ds, manifest["simulate"]["n0"],
                                   derive_seed(run_seed, "sample", 0))
        policy = dynamics.resolve_threshold(
            ds, c0, policy, learner, run_seed, grid_step=thr["grid_step"],
            train_fraction=manifest["sweep"]["train_fraction"])
        if policy.tau != thr["tau"]:
            raise StageError("simulate", "threshold resolution diverged from "
                             "the manifest; inputs are not identical")
    sim_cfg = dynamics.SimulationConfig(
        n0=manifest["simulate"]["n0"], n_prime=manifest["simulate"]["n_prime"],
        iterations=manifest["simulate"]["iterations"], threshold=policy,
        learner=learner, seed=run_seed,
        refit_each_iteration=manifest["simulate"]["refit_each_iteration"])
    result = dynamics.run_paired(ds, sim_cfg)
    target = out_dir or os.path.dirname(manifest_path)
    series_path = os.path.join(target, "series.csv")
    _write_text(series_path, dynamics.series_to_csv(result))
    return series_path


def run_report(out_root: str) -> str:
    """Aggregate final-iteration metrics of every simulate run found."""
    sim_root = os.path.join(out_root, "simulate")
    rows = []
    if os.path.isdir(sim_root):
        for combo in sorted(os.listdir(sim_root)):
            combo_dir = os.path.join(sim_root, combo)
            for policy in sorted(os.listdir(combo_dir)):
                series_path = os.path.join(combo_dir, policy, "series.csv")
                if not os.path.exists(series_path):
                    continue
                with open(series_path, "r", encoding="utf-8") as fh:
                    series = dynamics.parse_series_csv(fh.read())
                for run, points in sorted(series.items()):
                    last = points[-1]
                    rows.append(",".join([
                        combo, policy, run, str(last.iteration),
                        evaluation.format_number(last.accuracy),
                        evaluation.format_number(last.precision),
                        evaluation.format_number(last.recall),
                        evaluation.format_number(last.pct_fn),
                        evaluation.format_number(last.pct_fp),
                        str(last.population)]))
    if not rows:
        raise StageError("report", f"no simulation series found under {sim_root}")
    header = ("experiment,policy,run,final_iteration,accuracy,precision,"
              "recall,pct_fn,pct_fp,population")
    text = header + "\n" + "\n".join(rows) + "\n"
    _write_text(os.path.join(out_root, "report", "summary.csv"), text)
    return text


# ------------------------------------------------------------------ CLI


def _load_cli_config(config_path: str | None, seed: int | None,
                     out: str | None, model: str | None) -> tuple[ExperimentConfig, str]:
    cfg = load_config(config_path) if config_path else ExperimentConfig()
    if seed is not None:
        cfg.seed = seed
    if model is not None:
        cfg.learner.kind = model
    out_root = out if out is not None else cfg.resolved_out_dir()
    return cfg, out_root


_shared_options = [
    click.option("--config", "config_path", type=click.Path(exists=True),
                 default=None, help="Experiment config file (YAML)."),
    click.option("--seed", type=int, default=None, help="Override the root seed."),
    click.option("--out", type=click.Path(), default=None,
                 help=f"Output root (overrides config and ${OUT_ROOT_ENV})."),
    click.option("--dataset", "dataset_name", default=None,
                 help="Dataset name when the config defines several."),
    click.option("--model", type=click.Choice(["rf", "gbdt"]), default=None,
                 help="Override the configured model kind."),
]


def _with_shared(fn):
    for opt in reversed(_shared_options):
        fn = opt(fn)
    return fn


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Survival-bias simulation for retrained loan-default classifiers."""


def _dispatch(stage: str, fn) -> None:
    try:
        fn()
    except (StageError, ConfigError, data.DataError, ValueError) as exc:
        prefix = "" if isinstance(exc, StageError) else f"{stage} failed: "
        click.echo(f"{prefix}{exc}", err=True)
        sys.exit(1)


@main.command()
@_with_shared
def preprocess(config_path, seed, out, dataset_name, model) -> None:
    """Clean a raw dataset and write its cache plus a summary."""
    def go():
        cfg, out_root = _load_cli_config(config_path, seed, out, model)
        name, spec = cfg.select_dataset(dataset_name)
        summary = run_preprocess(cfg, name, spec, out_root)
        click.echo(f"{summary['name']}: {summary['n_rows']} rows, "
                   f"{summary['n_features']} features, majority share "
                   f"{summary['majority_share']:.4f}")
    _dispatch("preprocess", go)


@main.command(name="n0")
@_with_shared
def n0_cmd(config_path, seed, out, dataset_name, model) -> None:
    """Emit the learning curve and the detected initial batch size."""
    def go():
        cfg, out_root = _load_cli_config(config_path, seed, out, model)
        name, spec = cfg.select_dataset(dataset_name)
        kind = cfg.learner.kind
        payload = run_n0(cfg, name, spec, kind, out_root)
        flag = "" if payload["stabilized"] else " (not stabilized)"
        click.echo(f"n0 = {payload['n0']}{flag}")
    _dispatch("n0", go)


@main.command()
@_with_shared
def sweep(config_path, seed, out, dataset_name, model) -> None:
    """Sweep decision thresholds and write the trade-off tables."""
    def go():
        cfg, out_root = _load_cli_config(config_path, seed, out, model)
        name, spec = cfg.select_dataset(dataset_name)
        table = run_sweep(cfg, name, spec, cfg.learner.kind, out_root)
        for label, tau in table.items():
            click.echo(f"{label} = {tau:.4f}")
    _dispatch("sweep", go)


@main.command()
@_with_shared
@click.option("--manifest", "manifest_path", type=click.Path(exists=True),
              default=None, help="Re-run one simulation from its manifest.")
def simulate(config_path, seed, out, dataset_name, model, manifest_path) -> None:
    """Run paired biased/oracle simulations for each threshold policy."""
    def go():
        if manifest_path is not None:
            path = rerun_simulate_manifest(manifest_path, out)
            click.echo(f"rewrote {path}")
            return
        cfg, out_root = _load_cli_config(config_path, seed, out, model)
        name, spec = cfg.select_dataset(dataset_name)
        for res in run_simulate(cfg, name, spec, cfg.learner.kind, out_root):
            note = " TRUNCATED" if res["truncated"] else ""
            click.echo(f"{res['policy']}: tau={res['tau']:.4f}, "
                       f"{res['completed_iterations']} iterations{note} "
                       f"-> {res['run_dir']}")
    _dispatch("simulate", go)


@main.command()
@click.option("--out", type=click.Path(), default=None,
              help=f"Output root (overrides ${OUT_ROOT_ENV}).")
def report(out) -> None:
    """Summarize the final iteration of every simulation run."""
    def go():
        out_root = out if out is not None else os.environ.get(OUT_ROOT_ENV, "runs")
        text = run_report(out_root)
        click.echo(text, nl=False)
    _dispatch("report", go)


if __name__ == "__main__":
    main()

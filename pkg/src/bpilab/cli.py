"""Command-line front end.

Every subcommand accepts ``--seed``, ``--out``, and ``--config`` and is a
pure function of those inputs: same flags, same bytes out. ``--config``
points at an experiment-config JSON whose fields supply defaults; explicit
flags win. Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from .cluster import hotspot_centroids
from .factorize import STRATEGY_TAGS, NmfConfig
from .harness import (
    ExperimentConfig,
    build_trial,
    load_config,
    read_sweep_csv,
    render_heatmap_svg,
    resolve_out_dir,
    run_task1,
    run_task2,
    sweep_title,
    write_table4_csv,
)
from .identify import avg_abs_error, estimate_power, fit_offline
from .io import (
    ParseError,
    _fmt,
    load_model,
    load_power_csv,
    load_steady_csv,
    load_thermal_csv,
    save_model,
    save_power_csv,
    save_steady_csv,
    save_thermal_csv,
)
from .models import PowerTrace, ValidationError
from .sentinel import DEFAULT_XI, GoldenReference, RuntimeData, detect
from .simkit import AttackScenario, attack_dataset, builtin_floorplans, inject_attack, synth_model


def common_options(f):
    f = click.option("--config", "config_path", default=None, metavar="PATH",
                     help="Experiment-config JSON supplying defaults.")(f)
    f = click.option("--out", "out_path", default=None, metavar="PATH",
                     help="Output file or directory (see command help).")(f)
    f = click.option("--seed", type=int, default=None,
                     help="Root seed; overrides the config seed.")(f)
    return f


def resolved_config(config_path, **overrides) -> ExperimentConfig:
    """Config file -> dataclass, with non-None flag values overriding."""
    try:
        cfg = load_config(config_path) if config_path else ExperimentConfig()
        fields = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(cfg, **fields) if fields else cfg
    except (ValidationError, OSError) as exc:
        raise click.UsageError(str(exc)) from None


def out_dir(cfg: ExperimentConfig, out_path) -> Path:
    if out_path is None:
        return resolve_out_dir(cfg)
    p = Path(out_path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def out_file(cfg: ExperimentConfig, out_path, default_name: str) -> Path:
    if out_path is None:
        return resolve_out_dir(cfg) / default_name
    p = Path(out_path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def parse_grid(text: str | None, flag: str) -> tuple[float, ...] | None:
    if text is None:
        return None
    items = [s.strip() for s in text.split(",") if s.strip()]
    try:
        return tuple(float(s) for s in items)
    except ValueError as exc:
        raise click.UsageError(f"{flag}: {exc}") from None


def strategy_choice(strategy, cfg) -> str:
    return strategy if strategy is not None else cfg.strategies[-1]


@click.group()
def cli():
    """Blind per-core power identification and sensor-attack detection."""


@cli.command("gen-model")
@click.option("--floorplan", default=None, metavar="NAME",
              help="One of: " + ", ".join(builtin_floorplans()) + ".")
@common_options
def gen_model_cmd(floorplan, seed, out_path, config_path):
    """Synthesize a ground-truth thermal model; --out is the JSON file."""
    cfg = resolved_config(config_path, floorplan=floorplan, seed=seed)
    fp = builtin_floorplans()[cfg.floorplan]
    model = synth_model(fp, seed=cfg.seed)
    path = out_file(cfg, out_path, "model.json")
    save_model(model, path)
    click.echo(str(path))


@cli.command("gen-traces")
@click.option("--floorplan", default=None, metavar="NAME")
@click.option("--model", "model_path", default=None, metavar="PATH",
              help="Reuse a saved model instead of synthesizing one.")
@common_options
def gen_traces_cmd(floorplan, model_path, seed, out_path, config_path):
    """Generate the workload suite; --out is a directory.

    Writes model.json, cooling.csv, steady.csv (after corruption),
    steady_clean.csv, and per random walk walk<i>_temps.csv plus
    walk<i>_power.csv (ground truth, for scoring only).
    """
    cfg = resolved_config(config_path, floorplan=floorplan, seed=seed)
    model = load_model(model_path) if model_path is not None else None
    trial = build_trial(cfg.floorplan, cfg.suite, cfg.seed, model=model)
    out = out_dir(cfg, out_path)
    save_model(trial.model, out / "model.json")
    save_thermal_csv(trial.calibration.cooling, out / "cooling.csv")
    save_steady_csv(trial.calibration.steady, out / "steady.csv")
    save_steady_csv(trial.clean_steady, out / "steady_clean.csv")
    for i, (p, trace) in enumerate(trial.walks):
        save_power_csv(p, out / f"walk{i}_power.csv")
        save_thermal_csv(trace, out / f"walk{i}_temps.csv")
    click.echo(str(out))


@cli.command("inject")
@click.argument("input_path", metavar="INPUT")
@click.option("--sensor", type=int, required=True, help="Attacked sensor index.")
@click.option("--dt-error", type=float, required=True, help="Injected offset (K).")
@common_options
def inject_cmd(input_path, sensor, dt_error, seed, out_path, config_path):
    """Bias one sensor column of a thermal or steady-state CSV; --out is a file."""
    cfg = resolved_config(config_path, seed=seed)
    scenario = AttackScenario(sensor=sensor, dt_error=dt_error)
    header = _peek_header(input_path)
    if header.startswith("exp,"):
        ds = load_steady_csv(input_path, validate=False)
        path = out_file(cfg, out_path, "attacked_steady.csv")
        save_steady_csv(attack_dataset(ds, scenario), path)
    else:
        trace = load_thermal_csv(input_path, validate=False)
        path = out_file(cfg, out_path, "attacked_temps.csv")
        save_thermal_csv(inject_attack(trace, scenario), path)
    click.echo(str(path))


def _peek_header(path) -> str:
    with open(path) as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                return line
    raise ParseError(f"{path}: no header row found")


@cli.command("cluster")
@click.argument("input_path", metavar="STEADY_CSV")
@common_options
def cluster_cmd(input_path, seed, out_path, config_path):
    """Cluster steady-state rows; --out is a directory.

    Writes labels.csv (row label and core flag per experiment) and
    kdist.csv (the sorted k-distance curve with the chosen radius).
    """
    cfg = resolved_config(config_path, seed=seed)
    ds = load_steady_csv(input_path)
    res = hotspot_centroids(ds)
    out = out_dir(cfg, out_path)

    lines = [f"# eps={_fmt(res.eps)}", f"# min_pts={ds.n + 1}", "exp,label,core"]
    for j, (label, core) in enumerate(zip(res.clusters.labels, res.clusters.core_flags)):
        lines.append(f"{j},{label},{int(core)}")
    (out / "labels.csv").write_text("\n".join(lines) + "\n")

    lines = [f"# eps={_fmt(res.eps)}", "rank,distance"]
    for rank, d in enumerate(res.curve):
        lines.append(f"{rank},{_fmt(d)}")
    (out / "kdist.csv").write_text("\n".join(lines) + "\n")
    for w in res.warnings:
        click.echo(f"warning: {w}", err=True)
    click.echo(str(out))


@cli.command("fit")
@click.option("--cooling", "cooling_path", required=True, metavar="PATH")
@click.option("--steady", "steady_path", required=True, metavar="PATH")
@click.option("--strategy", default=None, type=click.Choice(STRATEGY_TAGS))
@common_options
def fit_cmd(cooling_path, steady_path, strategy, seed, out_path, config_path):
    """Identify the thermal model; --out is a directory.

    Writes model.json (the estimated system) and diagnostics.json
    (objective curve, residuals, warnings).
    """
    cfg = resolved_config(config_path, seed=seed)
    tag = strategy_choice(strategy, cfg)
    cooling = load_thermal_csv(cooling_path)
    ds = load_steady_csv(steady_path)
    res = fit_offline(cooling, ds, tag, cfg.nmf)
    out = out_dir(cfg, out_path)
    save_model(res.model, out / "model.json")
    diag = {
        "strategy": res.strategy_tag,
        "a_residual": res.a_residual,
        "objective_curve": [float(v) for v in res.nmf.objective_curve],
        "iterations_used": res.nmf.iterations_used,
        "rows_kept": int(np.count_nonzero(res.nmf.col_mask)),
        "rows_total": int(res.nmf.col_mask.size),
        "warnings": list(res.warnings),
    }
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=1, sort_keys=True) + "\n")
    for w in res.warnings:
        click.echo(f"warning: {w}", err=True)
    click.echo(str(out))


@cli.command("estimate")
@click.option("--model", "model_path", required=True, metavar="PATH")
@click.option("--temps", "temps_path", required=True, metavar="PATH")
@click.option("--power", "power_path", required=True, metavar="PATH",
              help="Power CSV supplying the measured totals (one per transition).")
@click.option("--truth", "truth_path", default=None, metavar="PATH",
              help="Optional per-unit truth; prints the average error percent.")
@common_options
def estimate_cmd(model_path, temps_path, power_path, truth_path, seed, out_path,
                 config_path):
    """Estimate per-unit power from temperatures; --out is the estimate CSV."""
    cfg = resolved_config(config_path, seed=seed)
    model = load_model(model_path)
    trace = load_thermal_csv(temps_path)
    totals = load_power_csv(power_path).totals
    est = estimate_power(model, trace, totals)
    path = out_file(cfg, out_path, "estimate.csv")
    save_power_csv(PowerTrace.from_samples(est.samples), path)
    if truth_path is not None:
        truth = load_power_csv(truth_path)
        stats = avg_abs_error(est, truth)
        click.echo(f"error_pct={_fmt(stats.percent)}")
    click.echo(str(path))


@cli.command("detect")
@click.option("--golden", "golden_path", required=True, metavar="PATH",
              help="Golden model JSON from a trusted calibration fit.")
@click.option("--cooling", "cooling_path", required=True, metavar="PATH")
@click.option("--steady", "steady_path", required=True, metavar="PATH")
@click.option("--trace", "trace_path", default=None, metavar="PATH",
              help="Optional online temperature trace for compensation.")
@click.option("--totals", "totals_path", default=None, metavar="PATH",
              help="Measured total power for the online trace.")
@click.option("--strategy", default=None, type=click.Choice(STRATEGY_TAGS))
@click.option("--xi", type=float, default=None, help=f"Deviation tolerance (default {DEFAULT_XI}).")
@common_options
def detect_cmd(golden_path, cooling_path, steady_path, trace_path, totals_path,
               strategy, xi, seed, out_path, config_path):
    """Run the countermeasure once; --out is the report JSON."""
    cfg = resolved_config(config_path, seed=seed)
    tag = strategy_choice(strategy, cfg)
    golden = GoldenReference(model=load_model(golden_path), strategy_tag=tag,
                             cfg=cfg.nmf, a_residual=0.0)
    if (trace_path is None) != (totals_path is None):
        raise click.UsageError("--trace and --totals must be given together")
    trace = totals = None
    if trace_path is not None:
        trace = load_thermal_csv(trace_path)
        totals = load_power_csv(totals_path).totals
    data = RuntimeData(cooling=load_thermal_csv(cooling_path),
                       steady=load_steady_csv(steady_path),
                       trace=trace, totals=totals)
    report = detect(golden, data, DEFAULT_XI if xi is None else xi)
    doc = {
        "attacked": report.attacked,
        "deviation": report.deviation,
        "suspect": report.suspect,
        "per_unit_scores": None if report.per_unit_scores is None
        else [float(v) for v in report.per_unit_scores],
        "t_hat": None if report.t_hat is None else [float(v) for v in report.t_hat],
    }
    path = out_file(cfg, out_path, "detection.json")
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    click.echo(str(path))


@cli.command("sweep")
@click.option("--floorplan", default=None, metavar="NAME")
@click.option("--strategy", "strategies", multiple=True, type=click.Choice(STRATEGY_TAGS),
              help="Repeatable; defaults to the config strategy list.")
@click.option("--xi-grid", default=None, metavar="X1,X2,...")
@click.option("--dt-grid", default=None, metavar="D1,D2,...")
@common_options
def sweep_cmd(floorplan, strategies, xi_grid, dt_grid, seed, out_path, config_path):
    """Grid the countermeasure (evaluation task 2); --out is a directory.

    Per strategy: sweep_<strategy>.csv and heatmap_<strategy>.svg; plus
    table4.csv aggregating failure rates per offset across thresholds.
    """
    cfg = resolved_config(
        config_path,
        floorplan=floorplan,
        seed=seed,
        strategies=tuple(strategies) if strategies else None,
        xi_grid=parse_grid(xi_grid, "--xi-grid"),
        dt_grid=parse_grid(dt_grid, "--dt-grid"),
        out_dir=out_path,
    )
    result = run_task2(cfg)
    click.echo(str(result.table_path.parent))


@cli.command("compare-inits")
@click.option("--floorplan", "floorplans", multiple=True, metavar="NAME",
              help="Repeatable; defaults to the config floorplan.")
@click.option("--strategy", "strategies", multiple=True, type=click.Choice(STRATEGY_TAGS))
@click.option("--trials", type=int, default=None, help="Seeds per table cell.")
@common_options
def compare_inits_cmd(floorplans, strategies, trials, seed, out_path, config_path):
    """Per-strategy power-error table (evaluation task 1); --out is a directory.

    Writes table2.csv, task1_runs.csv (per-seed detail), and per-floorplan
    actual/estimated overlay traces for walk 0 of the first seed.
    """
    cfg = resolved_config(
        config_path,
        seed=seed,
        trials=trials,
        strategies=tuple(strategies) if strategies else None,
        out_dir=out_path,
    )
    result = run_task1(cfg, floorplans=list(floorplans) if floorplans else None)
    click.echo(str(result.table_path))


@cli.command("report")
@click.option("--sweep", "sweep_paths", multiple=True, required=True, metavar="PATH",
              help="Repeatable; sweep CSVs to render.")
@common_options
def report_cmd(sweep_paths, seed, out_path, config_path):
    """Re-render heatmaps and the offset summary from sweep CSVs; --out is a directory."""
    cfg = resolved_config(config_path, seed=seed)
    out = out_dir(cfg, out_path)
    cells_by_tag = {}
    for p in sweep_paths:
        cells, meta = read_sweep_csv(p)
        stem = Path(p).stem
        tag = meta.get("strategy") or (
            stem[len("sweep_"):] if stem.startswith("sweep_") else stem)
        cells_by_tag[tag] = cells
        render_heatmap_svg(cells, out / f"heatmap_{tag}.svg", sweep_title(meta, tag))
    write_table4_csv(cells_by_tag, out / "table4.csv")
    click.echo(str(out))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="bpilab", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except FileNotFoundError as exc:
        name = exc.filename if exc.filename else exc
        click.echo(f"error: missing input file: {name}", err=True)
        return 2
    except (ParseError, ValidationError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

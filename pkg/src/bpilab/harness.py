"""Experiment harness: reproducible workload suites and both evaluation tasks.

Task 1 benchmarks the three initialization strategies on the power-estimation
error of blind identification across floorplans. Task 2 grids the sensor-attack
countermeasure over detection thresholds and injected offsets. Every run is a
pure function of the experiment config; reruns write byte-identical files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .factorize import STRATEGY_TAGS, NmfConfig
from .identify import avg_abs_error, estimate_power, fit_offline
from .io import FORMAT_VERSION, ParseError, _fmt, _read_csv, save_power_csv
from .models import (
    Floorplan,
    PowerTrace,
    SteadyStateDataset,
    SystemModel,
    ThermalTrace,
    ValidationError,
)
from .sentinel import RuntimeData, SweepCell, build_golden, sweep
from .simkit import (
    DEFAULT_AMBIENT,
    WorkloadSpec,
    builtin_floorplans,
    corrupt_dataset,
    forward_sim,
    gen_power,
    gen_steady_dataset,
    synth_model,
)

OUT_DIR_ENV = "BPILAB_OUT"

# Grids wider than these have no physical reading on the simulated platforms:
# tolerances are relative deviations, offsets are kelvin on ~10-60 K rises.
XI_RANGE = (0.0, 1.0)
DT_RANGE = (-50.0, 50.0)

DEFAULT_XI_GRID = (0.01, 0.02, 0.05, 0.1)
DEFAULT_DT_GRID = (-15.0, -10.0, -6.0, -3.0, -2.0, -1.0, 0.0,
                   1.0, 2.0, 3.0, 6.0, 10.0, 15.0)

# Iteration budget for batch runs. The library default (5000 iterations at
# 1e-9) converges to the same factors; past ~600 iterations the error tables
# move in the fourth decimal while the runtime triples, so the harness trades
# the tail of the curve for fitting the full ensemble in the time budget.
TASK_NMF = NmfConfig(max_iters=600, tol=1e-8)

TABLE2_NAME = "table2.csv"
TASK1_RUNS_NAME = "task1_runs.csv"
TABLE4_NAME = "table4.csv"


@dataclass(frozen=True)
class WorkloadSuite:
    """The fixed per-floorplan measurement campaign.

    One cooling segment identifies the natural response; repeated
    single-core-stress steady states feed the factorization (each unit is
    stressed `steady_rounds` times so density clustering can see every
    hotspot as a cluster, not a stray point); mixed random walks score the
    online power estimates. Corruption models sensor noise plus glitch rows.
    """

    cooling_k: int = 200
    steady_rounds: int | None = None  # None: units + 2 rounds per unit
    random_walk_runs: int = 4
    random_walk_k: int = 300
    noise_rel: float = 0.005
    outlier_rows: int = 3
    outlier_scale: tuple[float, float] = (8.0, 12.0)

    def __post_init__(self):
        if self.cooling_k < 2:
            raise ValidationError(f"cooling_k must be >= 2, got {self.cooling_k}")
        if self.steady_rounds is not None and self.steady_rounds < 1:
            raise ValidationError(f"steady_rounds must be >= 1, got {self.steady_rounds}")
        if self.random_walk_runs < 1:
            raise ValidationError(f"random_walk_runs must be >= 1, got {self.random_walk_runs}")
        if self.random_walk_k < 2:
            raise ValidationError(f"random_walk_k must be >= 2, got {self.random_walk_k}")
        if not 0 <= self.noise_rel < 0.5:
            raise ValidationError(f"noise_rel must be in [0, 0.5), got {self.noise_rel}")
        if self.outlier_rows < 0:
            raise ValidationError(f"outlier_rows must be >= 0, got {self.outlier_rows}")
        scale = tuple(float(s) for s in self.outlier_scale)
        if len(scale) != 2 or not 0 < scale[0] <= scale[1]:
            raise ValidationError(f"outlier_scale must be (lo, hi) with 0 < lo <= hi, got {self.outlier_scale}")
        object.__setattr__(self, "outlier_scale", scale)

    def rounds_for(self, n: int) -> int:
        return self.steady_rounds if self.steady_rounds is not None else n + 2

    def to_dict(self) -> dict:
        return {
            "cooling_k": self.cooling_k,
            "steady_rounds": self.steady_rounds,
            "random_walk_runs": self.random_walk_runs,
            "random_walk_k": self.random_walk_k,
            "noise_rel": self.noise_rel,
            "outlier_rows": self.outlier_rows,
            "outlier_scale": list(self.outlier_scale),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "WorkloadSuite":
        kwargs = dict(obj)
        if "outlier_scale" in kwargs:
            kwargs["outlier_scale"] = tuple(kwargs["outlier_scale"])
        return cls(**kwargs)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a task run depends on; the seed is the only entropy source."""

    floorplan: str = "mesh2x2"
    seed: int = 0
    trials: int = 10
    strategies: tuple[str, ...] = STRATEGY_TAGS
    xi_grid: tuple[float, ...] = DEFAULT_XI_GRID
    dt_grid: tuple[float, ...] = DEFAULT_DT_GRID
    suite: WorkloadSuite = field(default_factory=WorkloadSuite)
    nmf: NmfConfig = TASK_NMF
    out_dir: str | None = None

    def __post_init__(self):
        known = builtin_floorplans()
        if self.floorplan not in known:
            raise ValidationError(
                f"unknown floorplan {self.floorplan!r} (expected one of: {', '.join(known)})"
            )
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")
        if self.trials < 1:
            raise ValidationError(f"trials must be >= 1, got {self.trials}")
        strategies = tuple(self.strategies)
        if not strategies:
            raise ValidationError("strategy list must be nonempty")
        for tag in strategies:
            if tag not in STRATEGY_TAGS:
                raise ValidationError(
                    f"unknown strategy {tag!r} (expected one of: {', '.join(STRATEGY_TAGS)})"
                )
        if len(set(strategies)) != len(strategies):
            raise ValidationError("strategy list has duplicates")
        object.__setattr__(self, "strategies", strategies)

        xi_grid = tuple(float(x) for x in self.xi_grid)
        dt_grid = tuple(float(d) for d in self.dt_grid)
        if not xi_grid:
            raise ValidationError("xi grid must be nonempty")
        if not dt_grid:
            raise ValidationError("dt grid must be nonempty")
        for x in xi_grid:
            if not XI_RANGE[0] <= x <= XI_RANGE[1]:
                raise ValidationError(f"xi = {x} outside documented range {XI_RANGE}")
        for d in dt_grid:
            if not DT_RANGE[0] <= d <= DT_RANGE[1]:
                raise ValidationError(f"dt = {d} outside documented range {DT_RANGE}")
        object.__setattr__(self, "xi_grid", xi_grid)
        object.__setattr__(self, "dt_grid", dt_grid)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "floorplan": self.floorplan,
            "seed": self.seed,
            "trials": self.trials,
            "strategies": list(self.strategies),
            "xi_grid": list(self.xi_grid),
            "dt_grid": list(self.dt_grid),
            "suite": self.suite.to_dict(),
            "nmf": {"max_iters": self.nmf.max_iters, "tol": self.nmf.tol,
                    "epsilon_floor": self.nmf.epsilon_floor},
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ValidationError("config must be a JSON object")
        kwargs = {k: v for k, v in obj.items() if k != "format_version"}
        version = obj.get("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise ValidationError(
                f"unknown config format_version {version!r} (supported: {FORMAT_VERSION})"
            )
        if "strategies" in kwargs:
            kwargs["strategies"] = tuple(kwargs["strategies"])
        if "xi_grid" in kwargs:
            kwargs["xi_grid"] = tuple(kwargs["xi_grid"])
        if "dt_grid" in kwargs:
            kwargs["dt_grid"] = tuple(kwargs["dt_grid"])
        if "suite" in kwargs:
            kwargs["suite"] = WorkloadSuite.from_dict(kwargs["suite"])
        if "nmf" in kwargs:
            kwargs["nmf"] = NmfConfig(**kwargs["nmf"])
        unknown = set(kwargs) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValidationError(f"unknown config fields: {', '.join(sorted(unknown))}")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ValidationError(f"bad config: {exc}") from None


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    return path


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from None
    return ExperimentConfig.from_dict(obj)


def resolve_out_dir(cfg: ExperimentConfig) -> Path:
    """Config field, else the BPILAB_OUT environment variable, else cwd."""
    out = Path(cfg.out_dir if cfg.out_dir is not None else os.environ.get(OUT_DIR_ENV, "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def trial_seeds(cfg: ExperimentConfig) -> list[int]:
    # Strided so the per-stage offsets inside build_trial never collide
    # across trials; everything still derives from the one config seed.
    return [cfg.seed + 1009 * t for t in range(cfg.trials)]


@dataclass(frozen=True)
class TrialData:
    """One seed's worth of the workload suite on one floorplan."""

    floorplan: Floorplan
    model: SystemModel
    calibration: RuntimeData
    clean_steady: SteadyStateDataset
    walks: tuple[tuple[PowerTrace, ThermalTrace], ...]


def build_trial(floorplan: str, suite: WorkloadSuite, seed: int,
                model: SystemModel | None = None) -> TrialData:
    """Draw the model and the full measurement campaign for one seed.

    Passing ``model`` skips the draw and simulates the campaign on a system
    the caller already has (e.g. one loaded from disk).
    """
    known = builtin_floorplans()
    if floorplan not in known:
        raise ValidationError(
            f"unknown floorplan {floorplan!r} (expected one of: {', '.join(known)})"
        )
    fp = known[floorplan]
    if model is None:
        model = synth_model(fp, seed=seed)
    elif model.n != fp.n:
        raise ValidationError(
            f"model has {model.n} units, floorplan {floorplan} has {fp.n}"
        )

    idle = gen_power(fp, WorkloadSpec(kind="cooling", duration=suite.cooling_k - 1,
                                      budget=fp.power_budget, seed=seed + 1))
    rng = np.random.default_rng(seed + 2)
    p_hot = rng.uniform(0.3, 1.0, fp.n)
    p_hot *= fp.power_budget / p_hot.sum()
    cooling = forward_sim(model, idle, t0=DEFAULT_AMBIENT + model.r @ p_hot)

    clean, _ = gen_steady_dataset(model, fp, experiments=fp.n * suite.rounds_for(fp.n),
                                  seed=seed + 3)
    if suite.noise_rel > 0 or suite.outlier_rows > 0:
        steady, _, _ = corrupt_dataset(clean, seed=seed + 4, noise_rel=suite.noise_rel,
                                       outlier_rows=suite.outlier_rows,
                                       outlier_scale=suite.outlier_scale)
    else:
        steady = clean

    walks = []
    for i in range(suite.random_walk_runs):
        p = gen_power(fp, WorkloadSpec(kind="random-walk", duration=suite.random_walk_k - 1,
                                       budget=fp.power_budget, seed=seed + 5 + i))
        walks.append((p, forward_sim(model, p)))

    return TrialData(
        floorplan=fp,
        model=model,
        calibration=RuntimeData(cooling=cooling, steady=steady),
        clean_steady=clean,
        walks=tuple(walks),
    )


# ---------------------------------------------------------------------------
# Task 1: per-strategy power-estimation error table.
# ---------------------------------------------------------------------------

FAIL_MARK = "FAIL"


@dataclass(frozen=True)
class Task1Result:
    table: dict[str, dict[str, float]]  # floorplan -> strategy -> mean error %
    table_path: Path
    runs_path: Path
    overlay_paths: tuple[Path, ...]


def _write_table2(path: Path, floorplans: list[str], strategies: tuple[str, ...],
                  table: dict[str, dict]) -> None:
    lines = ["floorplan," + ",".join(strategies)]
    for name in floorplans:
        cells = []
        for tag in strategies:
            val = table.get(name, {}).get(tag)
            cells.append("" if val is None else (val if isinstance(val, str) else _fmt(val)))
        lines.append(f"{name}," + ",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def _trial_error(trial: TrialData, tag: str, cfg: ExperimentConfig) -> tuple[float, np.ndarray]:
    """Mean percent error over the trial's walks, plus walk 0's estimate."""
    res = fit_offline(trial.calibration.cooling, trial.calibration.steady, tag, cfg.nmf)
    errs = []
    first = None
    for p, trace in trial.walks:
        est = estimate_power(res.model, trace, p.totals)
        if first is None:
            first = est.samples
        errs.append(avg_abs_error(est, p).percent)
    return float(np.mean(errs)), first


def run_task1(cfg: ExperimentConfig, floorplans=None) -> Task1Result:
    """Comparison table over floorplans x strategies, plus overlay traces.

    Each cell is the mean over `cfg.trials` seeds of the per-walk average
    absolute power error (percent). Walk 0 of the first trial is also dumped
    as actual/estimated power traces for per-core overlay plots. The table is
    rewritten after every cell; if a cell dies its slot is marked FAIL, the
    partial table is flushed, and the error propagates.
    """
    names = [cfg.floorplan] if floorplans is None else list(floorplans)
    known = builtin_floorplans()
    for name in names:
        if name not in known:
            raise ValidationError(
                f"unknown floorplan {name!r} (expected one of: {', '.join(known)})"
            )
    out = resolve_out_dir(cfg)
    table_path = out / TABLE2_NAME
    runs_path = out / TASK1_RUNS_NAME

    table: dict[str, dict] = {name: {} for name in names}
    run_lines = ["floorplan,strategy,seed,error_pct"]
    overlay_paths: list[Path] = []
    runs_path.write_text("\n".join(run_lines) + "\n")
    _write_table2(table_path, names, cfg.strategies, table)

    for name in names:
        trials = [build_trial(name, cfg.suite, s) for s in trial_seeds(cfg)]
        p0, _ = trials[0].walks[0]
        overlay_paths.append(save_power_csv(p0, out / f"fig5_{name}_actual.csv"))
        for tag in cfg.strategies:
            errors = []
            for seed, trial in zip(trial_seeds(cfg), trials):
                try:
                    err, est0 = _trial_error(trial, tag, cfg)
                except Exception:
                    table[name][tag] = FAIL_MARK
                    _write_table2(table_path, names, cfg.strategies, table)
                    raise
                errors.append(err)
                run_lines.append(f"{name},{tag},{seed},{_fmt(err)}")
                runs_path.write_text("\n".join(run_lines) + "\n")
                if trial is trials[0]:
                    est_trace = PowerTrace.from_samples(est0)
                    overlay_paths.append(
                        save_power_csv(est_trace, out / f"fig5_{name}_{tag}_est.csv")
                    )
            table[name][tag] = float(np.mean(errors))
            _write_table2(table_path, names, cfg.strategies, table)

    return Task1Result(
        table={n: dict(cells) for n, cells in table.items()},
        table_path=table_path,
        runs_path=runs_path,
        overlay_paths=tuple(overlay_paths),
    )


# ---------------------------------------------------------------------------
# Task 2: countermeasure sweep reports.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Task2Result:
    cells: dict[str, list[SweepCell]]  # strategy -> sweep cells
    sweep_paths: dict[str, Path]
    heatmap_paths: dict[str, Path]
    table_path: Path


def write_sweep_csv(cells, path, meta: dict | None = None) -> Path:
    path = Path(path)
    lines = [f"# {k}={meta[k]}" for k in sorted(meta)] if meta else []
    lines.append("xi,dt,sensor_trials,detect_fail,ident_fail")
    for c in cells:
        lines.append(
            f"{_fmt(c.xi)},{_fmt(c.dt_error)},{c.trials},"
            f"{c.detection_failures},{c.identification_failures}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def read_sweep_csv(path) -> tuple[list[SweepCell], dict[str, str]]:
    path = Path(path)
    meta, header, rows = _read_csv(path)
    expected = ["xi", "dt", "sensor_trials", "detect_fail", "ident_fail"]
    if header != expected:
        raise ParseError(f"{path}: expected sweep header {','.join(expected)}, got {header}")
    cells = []
    for i, row in enumerate(rows):
        try:
            xi, dt = float(row[0]), float(row[1])
            trials, det, ident = int(row[2]), int(row[3]), int(row[4])
        except ValueError as exc:
            raise ParseError(f"{path}: bad sweep row {i}: {exc}") from None
        cells.append(SweepCell(xi=xi, dt_error=dt, detection_failures=det,
                               identification_failures=ident, trials=trials,
                               benign=(dt == 0)))
    if not cells:
        raise ParseError(f"{path}: sweep report has no rows")
    return cells, meta


def sweep_title(meta: dict, tag: str) -> str:
    fp = meta.get("floorplan")
    return f"{fp} attack sweep, {tag}" if fp else f"attack sweep, {tag}"


def _heat_color(rate: float) -> str:
    # White at 0 through crimson at 1.
    r = 220 + round(35 * rate)
    g = round(255 * (1.0 - rate) * 0.9) if rate > 0 else 255
    b = round(255 * (1.0 - rate) * 0.9) if rate > 0 else 255
    return f"rgb({min(r, 255)},{g},{b})"


def render_heatmap_svg(cells, path, title: str) -> Path:
    """Static failure-count heatmap: offsets across, thresholds down.

    Cell fill encodes the detection-failure rate; the label shows detection
    and identification failure counts. Benign (dt = 0) control columns are
    drawn in gray since "nothing detected" is the correct outcome there.
    """
    path = Path(path)
    xis = sorted({c.xi for c in cells})
    dts = sorted({c.dt_error for c in cells})
    by_key = {(c.xi, c.dt_error): c for c in cells}
    cw, ch, left, top = 64, 26, 72, 44
    width = left + cw * len(dts) + 16
    height = top + ch * len(xis) + 40

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="11">',
        f'<text x="{left}" y="18" font-size="13">{title}</text>',
        f'<text x="{left}" y="{height - 8}">dt_error (K); cell label: '
        f'detect_fail/ident_fail of sensor trials</text>',
    ]
    for col, dt in enumerate(dts):
        x = left + col * cw
        parts.append(f'<text x="{x + cw / 2:.1f}" y="{top - 6}" text-anchor="middle">'
                     f'{dt:g}</text>')
    for row, xi in enumerate(xis):
        y = top + row * ch
        parts.append(f'<text x="{left - 6}" y="{y + ch / 2 + 4:.1f}" text-anchor="end">'
                     f'xi={xi:g}</text>')
        for col, dt in enumerate(dts):
            c = by_key.get((xi, dt))
            if c is None:
                continue
            x = left + col * cw
            fill = "rgb(226,226,226)" if c.benign else _heat_color(
                c.detection_failures / c.trials if c.trials else 0.0)
            parts.append(f'<rect x="{x}" y="{y}" width="{cw}" height="{ch}" '
                         f'fill="{fill}" stroke="rgb(120,120,120)"/>')
            parts.append(f'<text x="{x + cw / 2:.1f}" y="{y + ch / 2 + 4:.1f}" '
                         f'text-anchor="middle">{c.detection_failures}/'
                         f'{c.identification_failures}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
    return path


def write_table4_csv(cells_by_strategy: dict[str, list], path) -> Path:
    """Failure rates per offset, aggregated over the threshold grid.

    One row per nonzero dt; per strategy, the detection and identification
    failure percentages over (thresholds x sensors). The benign dt = 0 column
    is a control, not an attack, so it is excluded here and reported only in
    the per-strategy sweep files.
    """
    path = Path(path)
    strategies = list(cells_by_strategy)
    if not strategies:
        raise ValidationError("need at least one strategy's sweep cells")
    dts = sorted({c.dt_error for cells in cells_by_strategy.values() for c in cells
                  if not c.benign})
    header = ["dt"]
    for tag in strategies:
        header += [f"{tag}_detect_pct", f"{tag}_ident_pct"]
    lines = [",".join(header)]
    for dt in dts:
        row = [f"{dt:g}"]
        for tag in strategies:
            hits = [c for c in cells_by_strategy[tag] if c.dt_error == dt and not c.benign]
            total = sum(c.trials for c in hits)
            det = sum(c.detection_failures for c in hits)
            ident = sum(c.identification_failures for c in hits)
            row += [f"{100 * det / total:.2f}" if total else "",
                    f"{100 * ident / total:.2f}" if total else ""]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    return path


def run_task2(cfg: ExperimentConfig) -> Task2Result:
    """Sweep the countermeasure per strategy; emit CSV + heatmap + summary.

    The calibration bundle doubles as the runtime baseline: each sweep cell
    re-injects a sensor offset into that bundle and refits, so the deviation
    a cell sees is purely attack-driven. One trial seed (the config seed)
    generates the platform and data; the grids come from the config.
    """
    trial = build_trial(cfg.floorplan, cfg.suite, cfg.seed)
    out = resolve_out_dir(cfg)

    cells_by_strategy: dict[str, list[SweepCell]] = {}
    sweep_paths: dict[str, Path] = {}
    heatmap_paths: dict[str, Path] = {}
    for tag in cfg.strategies:
        golden = build_golden(trial.calibration, tag, cfg.nmf)
        cells = sweep(golden, trial.calibration, cfg.xi_grid, cfg.dt_grid)
        cells_by_strategy[tag] = cells
        meta = {"floorplan": cfg.floorplan, "seed": cfg.seed, "strategy": tag}
        sweep_paths[tag] = write_sweep_csv(cells, out / f"sweep_{tag}.csv", meta)
        heatmap_paths[tag] = render_heatmap_svg(
            cells, out / f"heatmap_{tag}.svg", sweep_title(meta, tag),
        )

    table_path = write_table4_csv(cells_by_strategy, out / TABLE4_NAME)
    return Task2Result(
        cells=cells_by_strategy,
        sweep_paths=sweep_paths,
        heatmap_paths=heatmap_paths,
        table_path=table_path,
    )

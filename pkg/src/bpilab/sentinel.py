"""Malicious-sensor detection and localization on top of the blind fit.

Four phases: a golden resistance matrix is fitted from trusted calibration
data; at runtime the same fit is recomputed and its relative Frobenius
deviation from the golden matrix is thresholded (detection); leave-one-out
submatrix residuals point at the compromised sensor (identification); and the
suspect's true temperature is re-estimated from the remaining sensors through
the golden model (recovery). A grid sweep over (threshold, attack offset,
sensor) drives the failure-rate evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factorize import NmfConfig, simplex_ls
from .identify import fit_offline
from .models import (
    SteadyStateDataset,
    SystemModel,
    ThermalTrace,
    ValidationError,
    as_matrix,
    as_vector,
)
from .simkit import AttackScenario, attack_dataset, inject_attack

DEFAULT_XI = 0.05

__all__ = [
    "DEFAULT_XI",
    "RuntimeData",
    "GoldenReference",
    "DetectionReport",
    "SweepCell",
    "build_golden",
    "detect",
    "identify_suspect",
    "estimate_true_temp",
    "sweep",
]


@dataclass(frozen=True)
class RuntimeData:
    """One measurement bundle: calibration inputs plus an optional online trace."""

    cooling: ThermalTrace
    steady: SteadyStateDataset
    trace: ThermalTrace | None = None
    totals: np.ndarray | None = None

    def __post_init__(self):
        if self.cooling.n != self.steady.n:
            raise ValidationError(
                f"cooling trace has {self.cooling.n} units, dataset has {self.steady.n}"
            )
        if self.totals is not None:
            object.__setattr__(
                self, "totals", as_vector(self.totals, "totals")
            )
        if (self.trace is None) != (self.totals is None):
            raise ValidationError("trace and totals must be provided together")

    @property
    def n(self) -> int:
        return self.steady.n


@dataclass(frozen=True)
class GoldenReference:
    """Trusted fit result: the reference resistance matrix plus fit settings."""

    model: SystemModel
    strategy_tag: str
    cfg: NmfConfig
    a_residual: float
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        r = self.model.r
        if np.any(r < 0) or np.any(np.diag(r) <= 0):
            raise ValidationError(
                "golden resistance matrix must be nonnegative with positive diagonal"
            )

    @property
    def r_golden(self) -> np.ndarray:
        return self.model.r

    @property
    def n(self) -> int:
        return self.model.n


@dataclass(frozen=True)
class DetectionReport:
    attacked: bool
    deviation: float
    suspect: int | None
    t_hat: np.ndarray | None = None
    per_unit_scores: np.ndarray | None = None

    def __post_init__(self):
        if (self.suspect is None) != (not self.attacked):
            raise ValidationError("suspect must be set exactly when attacked")


@dataclass(frozen=True)
class SweepCell:
    xi: float
    dt_error: float
    detection_failures: int
    identification_failures: int
    trials: int
    benign: bool = False

    def __post_init__(self):
        if not 0 <= self.detection_failures <= self.trials:
            raise ValidationError("detection failures must lie in [0, trials]")
        if not 0 <= self.identification_failures <= self.trials:
            raise ValidationError("identification failures must lie in [0, trials]")


def _rel_deviation(r_runtime: np.ndarray, r_golden: np.ndarray) -> float:
    return float(np.linalg.norm(r_runtime - r_golden) / np.linalg.norm(r_golden))


def build_golden(data: RuntimeData, strategy: str = "dbscan-icbpi",
                 cfg: NmfConfig = NmfConfig(),
                 prior: GoldenReference | None = None) -> GoldenReference:
    """Phase one: fit the reference model from trusted calibration data.

    The caller is responsible for the data being attack-free; when a prior
    golden reference is supplied, a deviation beyond the default threshold is
    surfaced as a warning since it suggests the calibration data itself is
    compromised.
    """
    res = fit_offline(data.cooling, data.steady, strategy, cfg)
    warnings = res.warnings
    if prior is not None:
        dev = _rel_deviation(res.model.r, prior.r_golden)
        if dev > DEFAULT_XI:
            warnings = warnings + (
                f"calibration-deviation: new reference deviates {dev:.4f} "
                f"(> {DEFAULT_XI}) from the prior golden; calibration data "
                f"may not be attack-free",
            )
    return GoldenReference(
        model=res.model,
        strategy_tag=res.strategy_tag,
        cfg=cfg,
        a_residual=res.a_residual,
        warnings=warnings,
    )


def identify_suspect(golden: GoldenReference, r_runtime) -> tuple[int, np.ndarray]:
    """Phase three: score each sensor by the leave-one-out submatrix residual.

    Deleting the compromised sensor's row and column removes the corrupted
    entries, so the score of the true suspect collapses toward zero. Ties
    resolve to the lowest index.
    """
    r_rt = as_matrix(r_runtime, "r_runtime")
    n = golden.n
    if r_rt.shape != (n, n):
        raise ValidationError(f"runtime matrix is {r_rt.shape}, expected {(n, n)}")
    if n < 2:
        raise ValidationError("need at least 2 units to exclude one")
    scores = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        sub_rt = r_rt[np.ix_(keep, keep)]
        sub_g = golden.r_golden[np.ix_(keep, keep)]
        scores[i] = np.linalg.norm(sub_rt - sub_g) / np.linalg.norm(sub_g)
    return int(np.argmin(scores)), scores


def estimate_true_temp(golden: GoldenReference, trace: ThermalTrace,
                       totals, suspect: int) -> np.ndarray:
    """Phase four: reconstruct the suspect sensor's true temperature series.

    Each step re-estimates per-unit power from the non-suspect innovation rows
    under the measured total, then advances the suspect through the golden
    model. The corrected state (measured rises with the suspect entry
    replaced) feeds the next step. Entry 0 is the measured reading, since no
    earlier state exists to correct it from. Returns kelvin.
    """
    model = golden.model
    n = model.n
    if n < 2:
        raise ValidationError("cannot exclude the only sensor")
    if trace.n != n:
        raise ValidationError(f"trace has {trace.n} units, model has {n}")
    if not 0 <= suspect < n:
        raise ValidationError(f"suspect {suspect} out of range for {n} units")
    totals = as_vector(totals, "totals")
    if totals.shape[0] != trace.k - 1:
        raise ValidationError(
            f"need one total per transition: trace has {trace.k - 1} transitions, "
            f"got {totals.shape[0]} totals"
        )
    if np.any(totals < 0):
        k = int(np.argmax(totals < 0))
        raise ValidationError(f"totals[{k}] = {totals[k]:.6g} is negative")

    keep = np.arange(n) != suspect
    a, b = model.a, model.b
    rises = trace.rises()
    out = np.empty(trace.k)
    out[0] = trace.samples[0, suspect]
    state = rises[0].copy()
    for k in range(1, trace.k):
        y = rises[k] - a @ state
        p_hat = simplex_ls(b[keep], y[keep], totals[k - 1])
        t_s = float(a[suspect] @ state + b[suspect] @ p_hat)
        state = rises[k].copy()
        state[suspect] = t_s
        out[k] = t_s + trace.ambient
    return out


def detect(golden: GoldenReference, data: RuntimeData, xi: float) -> DetectionReport:
    """Phase two: threshold the runtime fit's deviation from the golden matrix.

    On detection the suspect sensor is localized, and when the bundle carries
    an online trace the suspect's true temperature series is estimated too.
    """
    if not xi >= 0:
        raise ValidationError(f"tolerance must be >= 0, got {xi}")
    if data.n != golden.n:
        raise ValidationError(f"data has {data.n} units, golden has {golden.n}")
    res = fit_offline(data.cooling, data.steady, golden.strategy_tag, golden.cfg)
    deviation = _rel_deviation(res.model.r, golden.r_golden)
    attacked = deviation > xi
    if not attacked:
        return DetectionReport(attacked=False, deviation=deviation, suspect=None)
    suspect, scores = identify_suspect(golden, res.model.r)
    t_hat = None
    if data.trace is not None:
        t_hat = estimate_true_temp(golden, data.trace, data.totals, suspect)
    return DetectionReport(
        attacked=True,
        deviation=deviation,
        suspect=suspect,
        t_hat=t_hat,
        per_unit_scores=scores,
    )


def sweep(golden: GoldenReference, data: RuntimeData, xi_grid, dt_grid) -> list[SweepCell]:
    """Grid the detection protocol over thresholds, offsets, and sensors.

    For every offset and sensor the attack is injected into the calibration
    inputs and the runtime fit recomputed once; thresholds reuse the fits. A
    detection failure is an attack that goes unnoticed; an identification
    failure is a detected attack pinned on the wrong sensor. Offset-zero cells
    are benign controls: nothing is injected, so every trial necessarily
    counts as a detection "failure" and the cell is flagged for exclusion
    from failure-rate aggregates. Cells are ordered threshold-major, offsets
    inner, matching the emitted report layout.
    """
    xi_grid = [float(x) for x in np.atleast_1d(np.asarray(xi_grid, dtype=float))]
    dt_grid = [float(d) for d in np.atleast_1d(np.asarray(dt_grid, dtype=float))]
    if not xi_grid or not dt_grid:
        raise ValidationError("xi and dt grids must be nonempty")
    if any(x < 0 for x in xi_grid):
        raise ValidationError("tolerances must be >= 0")
    n = golden.n

    fits: dict[tuple[float, int], tuple[float, int]] = {}
    for dt in dt_grid:
        for sensor in range(n):
            if dt == 0 and (0.0, 0) in fits:
                # Injection is a no-op for every sensor; one fit covers all.
                fits[(dt, sensor)] = fits[(0.0, 0)]
                continue
            scenario = AttackScenario(sensor=sensor, dt_error=dt)
            cooling = inject_attack(data.cooling, scenario)
            steady = attack_dataset(data.steady, scenario)
            res = fit_offline(cooling, steady, golden.strategy_tag, golden.cfg)
            deviation = _rel_deviation(res.model.r, golden.r_golden)
            suspect, _ = identify_suspect(golden, res.model.r)
            fits[(dt, sensor)] = (deviation, suspect)

    cells = []
    for xi in xi_grid:
        for dt in dt_grid:
            det_fail = 0
            ident_fail = 0
            for sensor in range(n):
                deviation, suspect = fits[(dt, sensor)]
                if deviation <= xi:
                    det_fail += 1
                elif suspect != sensor:
                    ident_fail += 1
            cells.append(SweepCell(
                xi=xi,
                dt_error=dt,
                detection_failures=det_fail,
                identification_failures=ident_fail,
                trials=n,
                benign=(dt == 0),
            ))
    return cells

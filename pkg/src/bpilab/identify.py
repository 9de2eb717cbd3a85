"""Blind identification pipeline: offline (A, B, R) fit and online power split.

Offline, the natural response A comes from a cooling trace via row-wise
nonnegative least squares and R from the constrained factorization of the
steady-state dataset; B is forced to (I - A) R so the model's fixed point
reproduces the steady-state relation. Online, each sample's per-unit power is
the simplex-constrained least-squares split of the one-step temperature
innovation under the measured total.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factorize import InitStrategy, NmfConfig, NmfResult, make_strategy, nmf, nnls, simplex_ls
from .models import (
    PowerTrace,
    SteadyStateDataset,
    SystemModel,
    ThermalTrace,
    ValidationError,
    as_vector,
)

__all__ = [
    "AEstimate",
    "OfflineResult",
    "PowerEstimate",
    "ErrorStats",
    "estimate_A",
    "fit_offline",
    "estimate_power",
    "avg_abs_error",
]


@dataclass(frozen=True)
class AEstimate:
    matrix: np.ndarray
    residual: float  # ||T2 - A T1||_F / ||T2||_F
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class OfflineResult:
    model: SystemModel
    nmf: NmfResult
    a_residual: float
    strategy_tag: str
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class PowerEstimate:
    """Estimated per-unit powers, one row per trace transition evaluated.

    Row j estimates the power applied between trace samples j and j+1, the
    same alignment the forward simulator uses. ``per_sample_residual`` holds
    the squared innovation-fit objective of each solve.
    """

    samples: np.ndarray
    per_sample_residual: np.ndarray

    @property
    def k(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class ErrorStats:
    """Average absolute per-unit power error, as a percentage."""

    percent: float
    excluded: int  # entries skipped because actual power was zero


def estimate_A(cooling: ThermalTrace) -> AEstimate:
    """Fit the natural response: rows of A regress each unit's next rise.

    Row i solves nonnegative least squares of T2[:, i] against T1, where T1
    stacks rises 0..K-2 and T2 rises 1..K-1. A constant (e.g. all-ambient)
    trace has rank-deficient T1; the zero-gradient NNLS answer (zero rows) is
    returned with a rank-deficiency warning.
    """
    n = cooling.n
    rises = cooling.rises()
    if rises.shape[0] < n + 1:
        raise ValidationError(
            f"cooling trace needs K >= N+1 = {n + 1} samples, got {rises.shape[0]}"
        )
    t1, t2 = rises[:-1], rises[1:]
    warnings: list[str] = []
    rank = int(np.linalg.matrix_rank(t1))
    if rank < n:
        warnings.append(
            f"rank-deficiency: cooling trace excites {rank} of {n} modes; "
            f"rows of A are underdetermined"
        )
    a = np.empty((n, n))
    for i in range(n):
        a[i] = nnls(t1, t2[:, i])
    denom = np.linalg.norm(t2)
    residual = float(np.linalg.norm(t2 - t1 @ a.T) / denom) if denom > 0 else 0.0
    return AEstimate(matrix=a, residual=residual, warnings=tuple(warnings))


def fit_offline(cooling: ThermalTrace, ds: SteadyStateDataset,
                strategy: InitStrategy | str,
                cfg: NmfConfig = NmfConfig()) -> OfflineResult:
    """Full offline identification: A from cooling, R from factorization."""
    if cooling.n != ds.n:
        raise ValidationError(
            f"cooling trace has {cooling.n} units, dataset has {ds.n}"
        )
    if isinstance(strategy, str):
        strategy = make_strategy(strategy, ds)
    a_est = estimate_A(cooling)
    nmf_res = nmf(ds, strategy, cfg)
    a = a_est.matrix
    r = nmf_res.r_hat
    b = (np.eye(ds.n) - a) @ r
    model = SystemModel(n=ds.n, a=a, b=b, r=r)
    return OfflineResult(
        model=model,
        nmf=nmf_res,
        a_residual=a_est.residual,
        strategy_tag=strategy.tag,
        warnings=a_est.warnings + nmf_res.warnings,
    )


def estimate_power(model: SystemModel, t: ThermalTrace, totals) -> PowerEstimate:
    """Split measured totals into per-unit powers from temperature innovations.

    For every transition j -> j+1 solves the sum-constrained nonnegative fit
    of B p against the innovation rises(j+1) - A rises(j). ``totals`` has one
    entry per transition (trace sample count minus one).
    """
    totals = as_vector(totals, "totals")
    if t.n != model.n:
        raise ValidationError(f"trace has {t.n} units, model has {model.n}")
    if totals.shape[0] != t.k - 1:
        raise ValidationError(
            f"need one total per transition: trace has {t.k - 1} transitions, "
            f"got {totals.shape[0]} totals"
        )
    if np.any(totals < 0):
        k = int(np.argmax(totals < 0))
        raise ValidationError(f"totals[{k}] = {totals[k]:.6g} is negative")
    rises = t.rises()
    hat = np.empty((t.k - 1, model.n))
    resid = np.empty(t.k - 1)
    for j in range(t.k - 1):
        y = rises[j + 1] - model.a @ rises[j]
        hat[j] = simplex_ls(model.b, y, totals[j])
        resid[j] = float(np.sum((model.b @ hat[j] - y) ** 2))
    return PowerEstimate(samples=hat, per_sample_residual=resid)


def avg_abs_error(est: PowerEstimate, truth: PowerTrace) -> ErrorStats:
    """Mean absolute relative error per unit, averaged over units, percent.

    Entries where the actual power is zero cannot be scored relatively; they
    are dropped and counted. Units with no scorable entries are skipped.
    """
    if truth.blind:
        raise ValidationError("truth trace must carry per-unit samples")
    if est.samples.shape != truth.samples.shape:
        raise ValidationError(
            f"shape mismatch: estimate {est.samples.shape}, truth {truth.samples.shape}"
        )
    actual = truth.samples
    valid = actual > 0
    excluded = int(actual.size - valid.sum())
    unit_means = []
    for i in range(truth.n):
        mask = valid[:, i]
        if not mask.any():
            continue
        rel = np.abs(est.samples[mask, i] - actual[mask, i]) / actual[mask, i]
        unit_means.append(rel.mean())
    if not unit_means:
        raise ValidationError("no scorable entries: actual power is zero everywhere")
    return ErrorStats(percent=float(np.mean(unit_means) * 100.0), excluded=excluded)

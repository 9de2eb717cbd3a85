"""scikit-learn style facades over the functional pipeline.

Each estimator is a thin stateful wrapper: constructor parameters are flat
primitives (so ``get_params``/``set_params``/``clone`` work), ``fit`` runs
the corresponding pipeline stage, and fitted state lands in trailing-
underscore attributes. The functional modules stay the source of truth;
nothing here adds behavior beyond parameter plumbing.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cluster import hotspot_centroids
from .factorize import NmfConfig
from .identify import avg_abs_error, estimate_power, fit_offline
from .models import PowerTrace, SteadyStateDataset, ThermalTrace
from .sentinel import DEFAULT_XI, DetectionReport, RuntimeData, build_golden, detect


class HotspotClusterer(BaseEstimator):
    """Density clustering of steady-state rows into per-unit hotspot centroids."""

    def fit(self, ds: SteadyStateDataset) -> "HotspotClusterer":
        res = hotspot_centroids(ds)
        self.matrix_ = res.matrix
        self.labels_ = res.clusters.labels
        self.core_flags_ = res.clusters.core_flags
        self.eps_ = res.eps
        self.curve_ = res.curve
        self.row_mask_ = res.row_mask
        self.fallback_units_ = res.fallback_units
        self.warnings_ = res.warnings
        return self

    def fit_predict(self, ds: SteadyStateDataset) -> np.ndarray:
        return self.fit(ds).labels_


class BlindPowerIdentifier(BaseEstimator):
    """Offline model identification plus online per-unit power estimation."""

    def __init__(self, strategy: str = "dbscan-icbpi", max_iters: int = 5000,
                 tol: float = 1e-9, epsilon_floor: float = 1e-12):
        self.strategy = strategy
        self.max_iters = max_iters
        self.tol = tol
        self.epsilon_floor = epsilon_floor

    def _config(self) -> NmfConfig:
        return NmfConfig(max_iters=self.max_iters, tol=self.tol,
                         epsilon_floor=self.epsilon_floor)

    def fit(self, cooling: ThermalTrace, steady: SteadyStateDataset) -> "BlindPowerIdentifier":
        res = fit_offline(cooling, steady, self.strategy, self._config())
        self.model_ = res.model
        self.a_residual_ = res.a_residual
        self.nmf_ = res.nmf
        self.warnings_ = res.warnings
        return self

    def predict(self, trace: ThermalTrace, totals) -> np.ndarray:
        """Per-unit power samples, one row per trace transition."""
        check_is_fitted(self, "model_")
        return estimate_power(self.model_, trace, totals).samples

    def score(self, trace: ThermalTrace, truth: PowerTrace) -> float:
        """Negated average absolute error percent (greater is better)."""
        check_is_fitted(self, "model_")
        est = estimate_power(self.model_, trace, truth.totals)
        return -avg_abs_error(est, truth).percent


class AttackDetector(BaseEstimator):
    """Golden-reference calibration plus runtime attack detection."""

    def __init__(self, strategy: str = "dbscan-icbpi", xi: float = DEFAULT_XI,
                 max_iters: int = 5000, tol: float = 1e-9,
                 epsilon_floor: float = 1e-12):
        self.strategy = strategy
        self.xi = xi
        self.max_iters = max_iters
        self.tol = tol
        self.epsilon_floor = epsilon_floor

    def _config(self) -> NmfConfig:
        return NmfConfig(max_iters=self.max_iters, tol=self.tol,
                         epsilon_floor=self.epsilon_floor)

    def fit(self, data: RuntimeData) -> "AttackDetector":
        self.golden_ = build_golden(data, self.strategy, self._config())
        return self

    def report(self, data: RuntimeData) -> DetectionReport:
        check_is_fitted(self, "golden_")
        return detect(self.golden_, data, self.xi)

    def predict(self, data: RuntimeData) -> bool:
        return self.report(data).attacked

"""Domain types shared across the toolkit.

All types are frozen dataclasses holding read-only numpy arrays, so instances
are safe to share across threads. Validation that reports rather than raises
lives in :func:`validate_model`; constructors only enforce structural facts
(shapes, dtypes) plus the invariants that would make an instance unusable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NOISE = -1  # cluster label for points that belong to no cluster

__all__ = [
    "NOISE",
    "ValidationError",
    "SystemModel",
    "ThermalTrace",
    "PowerTrace",
    "SteadyStateDataset",
    "Floorplan",
    "spectral_radius",
    "validate_model",
]


class ValidationError(ValueError):
    """Raised when input data violates a structural contract."""


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.flags.writeable = False
    return out


def as_matrix(x, name: str, *, square: bool = False, n: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a read-only float matrix, checking shape expectations."""
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise ValidationError(f"{name} must be a 2-d matrix, got ndim={a.ndim}")
    if square and a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {a.shape}")
    if n is not None and a.shape != (n, n) and square:
        raise ValidationError(f"{name} must have shape ({n}, {n}), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite entries")
    return _freeze(a)


def as_vector(x, name: str, *, length: int | None = None) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 1:
        raise ValidationError(f"{name} must be a 1-d vector, got ndim={a.ndim}")
    if length is not None and a.shape[0] != length:
        raise ValidationError(f"{name} must have length {length}, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite entries")
    return _freeze(a)


def spectral_radius(a: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(a, dtype=float)))))


@dataclass(frozen=True)
class SystemModel:
    """State-space thermal model: the matrix triple (A, B, R).

    ``a`` is the natural response (cooling), ``b`` the forced response mapping
    power to per-step temperature rise, ``r`` the steady-state thermal
    resistance matrix (K/W). Both ground-truth and estimated instances use
    this type; estimated instances may violate the physical invariants, which
    is why :func:`validate_model` reports violations instead of raising.
    """

    n: int
    a: np.ndarray
    b: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"unit count must be >= 1, got {self.n}")
        for name in ("a", "b", "r"):
            m = as_matrix(getattr(self, name), name, square=True)
            if m.shape[0] != self.n:
                raise ValidationError(
                    f"{name} must have shape ({self.n}, {self.n}), got {m.shape}"
                )
            object.__setattr__(self, name, m)


def validate_model(m: SystemModel) -> list[str]:
    """Check SystemModel invariants, returning one descriptor per violation.

    Violations are data, not errors: estimated models routinely carry small
    negative entries in ``b`` and callers decide what to do about them.
    """
    violations: list[str] = []
    for name in ("a", "b", "r"):
        mat = getattr(m, name)
        if np.any(mat < 0):
            idx = np.argwhere(mat < 0)[0]
            violations.append(
                f"nonnegative: {name}[{idx[0]},{idx[1]}] = {mat[idx[0], idx[1]]:.6g} < 0"
            )
    rho = spectral_radius(m.a)
    if rho >= 1.0:
        violations.append(f"spectral-radius: rho(a) = {rho:.6g} >= 1")
    diag = np.diag(m.r)
    if np.any(diag <= 0):
        i = int(np.argmin(diag))
        violations.append(f"positive-diagonal: r[{i},{i}] = {diag[i]:.6g} <= 0")
    return violations


@dataclass(frozen=True)
class ThermalTrace:
    """Time series of absolute per-unit temperatures (kelvin), row k = sample k.

    ``validate=False`` skips the below-ambient floor check; attack injection
    legitimately pushes a compromised sensor's readings far below ambient.
    """

    n: int
    dt: float
    ambient: float
    samples: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[1] != self.n:
            raise ValidationError(
                f"samples must be K x {self.n}, got shape {s.shape}"
            )
        if s.shape[0] < 2:
            raise ValidationError(f"a trace needs K >= 2 samples, got {s.shape[0]}")
        if not np.all(np.isfinite(s)):
            raise ValidationError("samples contain non-finite entries")
        if self.dt <= 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.validate and np.any(s < self.ambient - 0.5):
            k, i = np.argwhere(s < self.ambient - 0.5)[0]
            raise ValidationError(
                f"temperature samples[{k},{i}] = {s[k, i]:.6g} K is below "
                f"ambient - 0.5 K = {self.ambient - 0.5:.6g} K"
            )
        object.__setattr__(self, "samples", _freeze(s))

    @property
    def k(self) -> int:
        return self.samples.shape[0]

    def rises(self) -> np.ndarray:
        """Temperature rises above ambient (the quantity the state recurrence acts on)."""
        return self.samples - self.ambient


@dataclass(frozen=True)
class PowerTrace:
    """Per-unit power series plus per-sample totals (watts).

    Blind inputs carry only the totals; ``samples`` is then a K x 0 matrix.
    """

    n: int
    samples: np.ndarray
    totals: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        t = as_vector(self.totals, "totals")
        if s.ndim != 2:
            raise ValidationError(f"samples must be 2-d, got ndim={s.ndim}")
        if s.shape[1] not in (0, self.n):
            raise ValidationError(
                f"samples must be K x {self.n} (or K x 0 for blind traces), got {s.shape}"
            )
        if s.shape[0] != t.shape[0]:
            raise ValidationError(
                f"samples has {s.shape[0]} rows but totals has {t.shape[0]}"
            )
        if np.any(s < 0) or np.any(t < 0):
            raise ValidationError("power entries must be nonnegative")
        if s.shape[1] != 0:
            rowsum = s.sum(axis=1)
            scale = np.maximum(np.abs(t), 1.0)
            if np.any(np.abs(rowsum - t) > 1e-9 * scale):
                k = int(np.argmax(np.abs(rowsum - t) / scale))
                raise ValidationError(
                    f"totals[{k}] = {t[k]:.12g} disagrees with row sum {rowsum[k]:.12g}"
                )
        object.__setattr__(self, "samples", _freeze(s))
        object.__setattr__(self, "totals", t)

    @property
    def blind(self) -> bool:
        return self.samples.shape[1] == 0

    @property
    def k(self) -> int:
        return self.totals.shape[0]

    @classmethod
    def from_samples(cls, samples) -> "PowerTrace":
        s = np.asarray(samples, dtype=float)
        return cls(n=s.shape[1], samples=s, totals=s.sum(axis=1))

    @classmethod
    def blind_totals(cls, n: int, totals) -> "PowerTrace":
        t = np.asarray(totals, dtype=float)
        return cls(n=n, samples=np.empty((t.shape[0], 0)), totals=t)


@dataclass(frozen=True)
class SteadyStateDataset:
    """Steady-state temperature rises, one row per experiment.

    ``t_s`` holds rises above ambient (kelvin), ``p_total`` the measured total
    power of each experiment. ``validate=False`` admits negative rises, which
    occur when a sensor attack is injected into the dataset.
    """

    t_s: np.ndarray
    p_total: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        ts = np.asarray(self.t_s, dtype=float)
        if ts.ndim != 2:
            raise ValidationError(f"t_s must be 2-d, got ndim={ts.ndim}")
        pt = as_vector(self.p_total, "p_total", length=ts.shape[0])
        if ts.shape[0] < ts.shape[1]:
            raise ValidationError(
                f"need at least as many experiments as units: M={ts.shape[0]} < N={ts.shape[1]}"
            )
        if not np.all(np.isfinite(ts)):
            raise ValidationError("t_s contains non-finite entries")
        if np.any(pt <= 0):
            raise ValidationError("every experiment needs positive total power")
        if self.validate and np.any(ts < 0):
            j, i = np.argwhere(ts < 0)[0]
            raise ValidationError(
                f"t_s[{j},{i}] = {ts[j, i]:.6g} is negative (rises must be >= 0)"
            )
        object.__setattr__(self, "t_s", _freeze(ts))
        object.__setattr__(self, "p_total", pt)

    @property
    def m(self) -> int:
        return self.t_s.shape[0]

    @property
    def n(self) -> int:
        return self.t_s.shape[1]

    def normalized_rows(self) -> np.ndarray:
        """Rows divided by experiment total power: K/W coordinates."""
        return self.t_s / self.p_total[:, None]


@dataclass(frozen=True)
class Floorplan:
    """Named unit layout with adjacency, power budget, and per-unit classes."""

    name: str
    n: int
    adjacency: tuple[tuple[int, int], ...]
    power_budget: float
    unit_classes: tuple[str, ...]
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"floorplan needs n >= 1, got {self.n}")
        if self.power_budget <= 0:
            raise ValidationError("power budget must be positive")
        if len(self.unit_classes) != self.n:
            raise ValidationError(
                f"unit_classes has {len(self.unit_classes)} entries for n={self.n}"
            )
        if self.grid is not None and self.grid[0] * self.grid[1] != self.n:
            raise ValidationError(
                f"grid {self.grid} does not cover n={self.n} units"
            )
        pairs = set()
        for i, j in self.adjacency:
            if i == j:
                raise ValidationError(f"adjacency must be irreflexive, got ({i},{j})")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValidationError(f"adjacency pair ({i},{j}) out of range")
            pairs.add((i, j))
        for i, j in pairs:
            if (j, i) not in pairs:
                raise ValidationError(f"adjacency must be symmetric, missing ({j},{i})")
        object.__setattr__(self, "adjacency", tuple(sorted(pairs)))

    def neighbors(self, i: int) -> list[int]:
        return sorted(j for a, j in self.adjacency if a == i)

    def hop_distances(self) -> np.ndarray:
        """All-pairs hop distance over the adjacency graph (BFS per unit)."""
        dist = np.full((self.n, self.n), np.inf)
        adj = [self.neighbors(i) for i in range(self.n)]
        for src in range(self.n):
            dist[src, src] = 0
            frontier = [src]
            d = 0
            while frontier:
                d += 1
                nxt = []
                for u in frontier:
                    for v in adj[u]:
                        if not math.isfinite(dist[src, v]):
                            dist[src, v] = d
                            nxt.append(v)
                frontier = nxt
        return dist

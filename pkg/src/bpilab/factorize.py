"""Constrained least squares and the NMF engine with competing inits.

Three initialization strategies feed the same multiplicative-update NMF:

* ``identity-bpi``: R starts at the identity, power split equally. Zeros in
  the identity are fixed points of multiplicative updates, so off-diagonal
  couplings can never be learned; this is the weakest baseline by design.
* ``steady-state-bpiss``: R starts at averaged normalized rises from the
  stressed-core experiments; every row participates, so glitch rows bias it.
* ``dbscan-icbpi``: R starts at the hotspot cluster centroids and the
  factorization is restricted to inlier rows, insulating it from glitches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .models import SteadyStateDataset, ValidationError
from .cluster import hotspot_centroids

STRATEGY_TAGS = ("identity-bpi", "steady-state-bpiss", "dbscan-icbpi")

__all__ = [
    "STRATEGY_TAGS",
    "InitStrategy",
    "NmfConfig",
    "NmfResult",
    "nnls",
    "simplex_ls",
    "init_bpi",
    "init_bpiss",
    "init_icbpi",
    "make_strategy",
    "nmf",
]


@dataclass(frozen=True)
class InitStrategy:
    """A named (R0, P0) pair, optionally restricted to a subset of rows."""

    tag: str
    r0: np.ndarray
    p0: np.ndarray
    row_mask: np.ndarray | None = None
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.tag not in STRATEGY_TAGS:
            raise ValidationError(
                f"unknown strategy tag {self.tag!r}, expected one of {STRATEGY_TAGS}"
            )
        r0 = np.asarray(self.r0, dtype=float)
        p0 = np.asarray(self.p0, dtype=float)
        if r0.ndim != 2 or r0.shape[0] != r0.shape[1]:
            raise ValidationError(f"r0 must be square, got shape {r0.shape}")
        if p0.ndim != 2 or p0.shape[0] != r0.shape[0]:
            raise ValidationError(
                f"p0 must have one row per unit ({r0.shape[0]}), got shape {p0.shape}"
            )
        if self.row_mask is not None:
            mask = np.asarray(self.row_mask, dtype=bool)
            if mask.shape != (p0.shape[1],):
                raise ValidationError(
                    f"row_mask must have one flag per experiment ({p0.shape[1]})"
                )
            object.__setattr__(self, "row_mask", mask)
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "p0", p0)

    @property
    def n(self) -> int:
        return self.r0.shape[0]


@dataclass(frozen=True)
class NmfConfig:
    max_iters: int = 5000
    tol: float = 1e-9
    epsilon_floor: float = 1e-12

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValidationError("tol must be positive")
        if not 0 < self.epsilon_floor <= 1e-6:
            raise ValidationError("epsilon_floor must be in (0, 1e-6]")


@dataclass(frozen=True)
class NmfResult:
    """Factorization output: T_s^T ~ r_hat @ p_hat with constrained columns."""

    r_hat: np.ndarray
    p_hat: np.ndarray
    objective_curve: np.ndarray
    iterations_used: int
    col_mask: np.ndarray
    warnings: tuple[str, ...] = ()


def nnls(m, y) -> np.ndarray:
    """Nonnegative least squares: argmin_{x >= 0} of the squared residual."""
    m = np.asarray(m, dtype=float)
    y = np.asarray(y, dtype=float)
    if m.ndim != 2 or y.ndim != 1 or m.shape[0] != y.shape[0]:
        raise ValidationError(
            f"dimension mismatch: m is {m.shape}, y has length {y.shape}"
        )
    if not m.any():
        return np.zeros(m.shape[1])
    x, _ = scipy.optimize.nnls(m, y)
    return x


def simplex_ls(m, y, s, tol: float = 1e-10) -> np.ndarray:
    """Least squares over the scaled simplex: x >= 0, sum(x) = s.

    Primal active-set method: solve the equality-constrained problem on the
    free variables, walk toward that solution until a variable hits zero,
    and release a pinned variable whenever its multiplier goes negative.
    """
    m = np.asarray(m, dtype=float)
    y = np.asarray(y, dtype=float)
    if m.ndim != 2 or y.ndim != 1 or m.shape[0] != y.shape[0]:
        raise ValidationError(
            f"dimension mismatch: m is {m.shape}, y has length {y.shape}"
        )
    if not np.isfinite(s):
        raise ValidationError(f"total must be finite, got {s}")
    if s < 0:
        raise ValidationError(f"total power must be >= 0, got {s}")
    n = m.shape[1]
    if n == 1:
        return np.array([float(s)])
    if s == 0:
        return np.zeros(n)

    gram = 2.0 * m.T @ m
    lin = 2.0 * m.T @ y
    free = np.ones(n, dtype=bool)
    x = np.full(n, s / n)
    scale = max(1.0, float(np.abs(lin).max()))

    for _ in range(50 * n):
        f = np.flatnonzero(free)
        k = f.size
        kkt = np.empty((k + 1, k + 1))
        kkt[:k, :k] = gram[np.ix_(f, f)]
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        kkt[k, k] = 0.0
        rhs = np.append(lin[f], s)
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        xf, lam = sol[:k], sol[k]

        if np.all(xf >= -tol):
            x = np.zeros(n)
            x[f] = np.maximum(xf, 0.0)
            grad = gram @ x - lin
            pinned = np.flatnonzero(~free)
            if pinned.size == 0:
                break
            mu = grad[pinned] + lam
            worst = int(np.argmin(mu))
            if mu[worst] >= -tol * scale:
                break
            free[pinned[worst]] = True
            continue

        # Step from the current iterate toward xf until a variable hits zero.
        cur = x[f]
        delta = xf - cur
        blocking = xf < -tol
        with np.errstate(divide="ignore", invalid="ignore"):
            steps = np.where(blocking & (delta < 0), cur / -delta, np.inf)
        j = int(np.argmin(steps))
        alpha = min(1.0, float(steps[j]))
        stepped = cur + alpha * delta
        stepped[j] = 0.0
        x[f] = np.maximum(stepped, 0.0)
        free[f[j]] = False

    x = np.maximum(x, 0.0)
    total = x.sum()
    if total <= 0:
        return np.full(n, s / n)
    return x * (s / total)


def _p_step(r: np.ndarray, t: np.ndarray, totals: np.ndarray,
            free_state: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Exact sum-constrained nonnegative fit of every column of t against r.

    Columns are grouped by their support pattern from the previous call
    (``free_state``, updated in place) and each group is solved with one
    batched KKT factorization. A group solution is accepted only when it
    passes the same primal and dual checks the cold active-set solver uses,
    so accepted columns are exact constrained optima; the rest fall back to
    ``simplex_ls``. Support patterns stabilize quickly across iterations,
    which makes the batched path the common case.
    """
    n, m_cols = r.shape[1], t.shape[1]
    gram = 2.0 * r.T @ r
    lin = 2.0 * r.T @ t
    scale = np.maximum(1.0, np.abs(lin).max(axis=0))
    p = np.empty((n, m_cols))
    cold_mask = np.zeros(m_cols, dtype=bool)

    _, first, inverse = np.unique(
        np.packbits(free_state, axis=0), axis=1, return_index=True, return_inverse=True
    )
    for g in range(first.size):
        cols = np.flatnonzero(inverse == g)
        f = np.flatnonzero(free_state[:, first[g]])
        k = f.size
        if k == 0:
            cold_mask[cols] = True
            continue
        kkt = np.empty((k + 1, k + 1))
        kkt[:k, :k] = gram[np.ix_(f, f)]
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        kkt[k, k] = 0.0
        rhs = np.empty((k + 1, cols.size))
        rhs[:k] = lin[np.ix_(f, cols)]
        rhs[k] = totals[cols]
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            cold_mask[cols] = True
            continue
        xf, lam = sol[:k], sol[k]
        ok = (xf >= -tol).all(axis=0)
        x_full = np.zeros((n, cols.size))
        x_full[f] = np.maximum(xf, 0.0)
        if ok.any() and k < n:
            grad = gram @ x_full - lin[:, cols]
            pinned = np.setdiff1d(np.arange(n), f)
            mu = grad[pinned] + lam
            ok &= (mu >= -tol * scale[cols]).all(axis=0)
        good = cols[ok]
        if good.size:
            xg = x_full[:, ok]
            p[:, good] = xg * (totals[good] / xg.sum(axis=0))
        cold_mask[cols[~ok]] = True

    for j in np.flatnonzero(cold_mask):
        p[:, j] = simplex_ls(r, t[:, j], totals[j])
    free_state[:] = p > 0
    return p


def _stressed_rows(ds: SteadyStateDataset) -> np.ndarray:
    """Index of the dominating (stressed) unit for each experiment row."""
    return np.argmax(ds.normalized_rows(), axis=1)


def _p0_from_rows(ds: SteadyStateDataset) -> np.ndarray:
    """P0 column j = T_s row j rescaled so the column sums to p_total[j]."""
    t = ds.t_s.T.copy()
    colsums = t.sum(axis=0)
    safe = np.where(np.abs(colsums) > 0, colsums, 1.0)
    return t * (ds.p_total / safe)


def init_bpi(n: int, ds: SteadyStateDataset) -> InitStrategy:
    """Identity resistance, total power split equally across units."""
    if ds.n != n:
        raise ValidationError(f"dataset has {ds.n} units, expected {n}")
    p0 = np.tile(ds.p_total / n, (n, 1))
    return InitStrategy(tag="identity-bpi", r0=np.eye(n), p0=p0)


def init_bpiss(n: int, ds: SteadyStateDataset) -> InitStrategy:
    """Averaged normalized rises of stressed-core experiments."""
    if ds.n != n:
        raise ValidationError(f"dataset has {ds.n} units, expected {n}")
    stressed = _stressed_rows(ds)
    normalized = ds.normalized_rows()
    r0 = np.empty((n, n))
    for j in range(n):
        rows = normalized[stressed == j]
        if rows.shape[0] == 0:
            raise ValidationError(
                f"dataset has no single-core-stress experiment for unit {j}"
            )
        r0[:, j] = rows.mean(axis=0)
    return InitStrategy(tag="steady-state-bpiss", r0=r0, p0=_p0_from_rows(ds))


def init_icbpi(n: int, ds: SteadyStateDataset) -> InitStrategy:
    """Hotspot-centroid resistance; factorization restricted to inlier rows.

    P0 is derived from T_s by solving each experiment's power split against
    R0 under the measured total, so the pair (R0, P0) is self-consistent:
    when the centroids are near the true resistance matrix the init is near
    a fixed point and the factorization refines instead of drifting.
    """
    if ds.n != n:
        raise ValidationError(f"dataset has {ds.n} units, expected {n}")
    hotspots = hotspot_centroids(ds, n)
    r0 = hotspots.matrix
    p0 = np.empty((n, ds.m))
    for j in range(ds.m):
        p0[:, j] = simplex_ls(r0, ds.t_s[j], ds.p_total[j])
    return InitStrategy(
        tag="dbscan-icbpi",
        r0=r0,
        p0=p0,
        row_mask=hotspots.row_mask,
        notes=hotspots.warnings,
    )


def make_strategy(tag: str, ds: SteadyStateDataset, n: int | None = None) -> InitStrategy:
    n = ds.n if n is None else n
    if tag == "identity-bpi":
        return init_bpi(n, ds)
    if tag == "steady-state-bpiss":
        return init_bpiss(n, ds)
    if tag == "dbscan-icbpi":
        return init_icbpi(n, ds)
    raise ValidationError(f"unknown strategy tag {tag!r}, expected one of {STRATEGY_TAGS}")


def nmf(ds: SteadyStateDataset, init: InitStrategy, cfg: NmfConfig = NmfConfig()) -> NmfResult:
    """Constrained factorization of T_s^T into R @ P, alternating two steps.

    The P step solves each experiment column exactly over its power simplex
    (sum pinned to the measured total), so the column-sum constraint holds
    after every iteration and the step can only lower the objective. The R
    step is the classical multiplicative update, also non-increasing. The
    constraint pins the factorization scale, so no extra rescaling is needed.
    A snapshot guard reverts and stops if an iteration ever increases the
    objective, making the monotone objective curve a construction invariant.
    """
    if init.n != ds.n:
        raise ValidationError(f"init is for {init.n} units, dataset has {ds.n}")
    if init.p0.shape[1] != ds.m:
        raise ValidationError(
            f"init p0 has {init.p0.shape[1]} columns, dataset has {ds.m} experiments"
        )
    warnings: list[str] = list(init.notes)
    eps = cfg.epsilon_floor

    col_mask = (np.ones(ds.m, dtype=bool) if init.row_mask is None
                else init.row_mask.copy())
    if not col_mask.any():
        raise ValidationError("row mask excludes every experiment")

    t_full = ds.t_s.T
    if np.any(t_full <= 0):
        count = int(np.sum(t_full <= 0))
        warnings.append(
            f"clamped {count} non-positive temperature entries to {eps:g}"
        )
        t_full = np.maximum(t_full, eps)

    t = t_full[:, col_mask]
    totals = ds.p_total[col_mask]
    r = np.array(init.r0, dtype=float)
    p = np.array(init.p0, dtype=float)[:, col_mask]
    bad_init = int(np.sum(r <= 0) + np.sum(p <= 0))
    if np.any(r <= 0):
        r = np.maximum(r, eps)
    if np.any(p <= 0):
        p = np.maximum(p, eps)
    if bad_init and init.tag != "identity-bpi":
        # The identity init's zeros are its defining feature, not corruption.
        warnings.append(f"floored {bad_init} non-positive init entries to {eps:g}")
    if init.tag == "identity-bpi":
        r = np.where(init.r0 > 0, r, 0.0)

    p *= totals / np.maximum(p.sum(axis=0), eps)

    def objective(r_, p_):
        return float(np.linalg.norm(t - r_ @ p_))

    curve = [objective(r, p)]
    iterations = 0
    free_state = np.ones_like(p, dtype=bool)
    for _ in range(cfg.max_iters):
        if curve[-1] <= 1e-15:
            break
        r_prev, p_prev = r, p

        p = _p_step(r, t, totals, free_state)
        r = r * (t @ p.T) / (r @ p @ p.T + eps)

        obj = objective(r, p)
        if obj > curve[-1] + 1e-10:
            r, p = r_prev, p_prev
            break
        iterations += 1
        prev = curve[-1]
        curve.append(obj)
        if prev - obj < cfg.tol * max(prev, 1e-30):
            break

    p_hat = np.array(init.p0, dtype=float)
    p_hat = np.maximum(p_hat, 0.0)
    excl = ~col_mask
    if excl.any():
        # Excluded glitch columns keep their init estimate (correct totals,
        # direction taken from the measured row) and are flagged by col_mask.
        sums = np.maximum(p_hat[:, excl].sum(axis=0), eps)
        p_hat[:, excl] *= ds.p_total[excl] / sums
    p_hat[:, col_mask] = p
    return NmfResult(
        r_hat=r,
        p_hat=p_hat,
        objective_curve=np.array(curve),
        iterations_used=iterations,
        col_mask=col_mask,
        warnings=tuple(warnings),
    )

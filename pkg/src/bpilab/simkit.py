"""Synthetic ground truth: systems, workloads, thermal traces, sensor attacks.

Replaces a grid-level thermal solver with a lumped-RC forward model whose
matrices are known exactly, so estimation error can be scored against truth.
The construction is physical rather than ad hoc: R is the inverse of a
conductance M-matrix built on the floorplan graph, A is the matrix exponential
of the RC generator (elementwise nonnegative by construction), and
B = (I - A) R is the exact zero-order-hold forced response. All SystemModel
invariants then hold without any clipping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .models import (
    Floorplan,
    PowerTrace,
    SteadyStateDataset,
    SystemModel,
    ThermalTrace,
    ValidationError,
    spectral_radius,
)

DEFAULT_DT = 0.1  # seconds per sample
DEFAULT_AMBIENT = 298.15  # kelvin

# Per-class scaling of thermal resistance diagonals (small units run hotter
# per watt) and of heat capacity (big units integrate heat more slowly).
CLASS_R_SCALE = {"core": 1.0, "little": 1.5, "big": 0.9, "gpu": 0.6}
CLASS_C_SCALE = {"core": 1.0, "little": 0.6, "big": 1.4, "gpu": 2.2}

WORKLOAD_KINDS = ("step-stress", "random-walk", "single-core-stress", "cooling")

__all__ = [
    "DEFAULT_DT",
    "DEFAULT_AMBIENT",
    "WorkloadSpec",
    "AttackScenario",
    "builtin_floorplans",
    "synth_model",
    "gen_power",
    "forward_sim",
    "gen_steady_dataset",
    "corrupt_dataset",
    "inject_attack",
    "attack_dataset",
]


@dataclass(frozen=True)
class WorkloadSpec:
    """Parameters of one generated power workload."""

    kind: str
    duration: int
    budget: float
    seed: int
    unit: int | None = None  # target of single-core-stress

    def __post_init__(self):
        if self.kind not in WORKLOAD_KINDS:
            raise ValidationError(
                f"unknown workload kind {self.kind!r}, expected one of {WORKLOAD_KINDS}"
            )
        if self.duration < 1:
            raise ValidationError("duration must be >= 1 sample")
        if self.budget <= 0:
            raise ValidationError("budget must be positive")
        if self.kind == "single-core-stress" and self.unit is None:
            raise ValidationError("single-core-stress needs a target unit index")


@dataclass(frozen=True)
class AttackScenario:
    """A compromised sensor: constant additive offset on one unit's readings."""

    sensor: int
    dt_error: float
    xi: float = 0.05

    def __post_init__(self):
        if self.sensor < 0:
            raise ValidationError("sensor index must be >= 0")
        if self.xi < 0:
            raise ValidationError("detection tolerance xi must be >= 0")

    @property
    def benign(self) -> bool:
        return self.dt_error == 0


def _mesh(name: str, rows: int, cols: int, budget: float) -> Floorplan:
    n = rows * cols
    adj = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                adj += [(i, i + 1), (i + 1, i)]
            if r + 1 < rows:
                adj += [(i, i + cols), (i + cols, i)]
    return Floorplan(
        name=name,
        n=n,
        adjacency=tuple(adj),
        power_budget=budget,
        unit_classes=("core",) * n,
        grid=(rows, cols),
    )


def builtin_floorplans() -> dict[str, Floorplan]:
    """The four benchmark floorplans, keyed by name."""
    hetero = Floorplan(
        name="hetero6",
        n=6,
        adjacency=tuple(
            p
            for i, j in [(0, 1), (1, 2), (0, 3), (1, 4), (2, 5), (3, 4), (4, 5)]
            for p in [(i, j), (j, i)]
        ),
        power_budget=15.0,
        unit_classes=("little", "little", "little", "little", "big", "gpu"),
        grid=(2, 3),
    )
    return {
        "mesh2x2": _mesh("mesh2x2", 2, 2, 80.0),
        "mesh2x4": _mesh("mesh2x4", 2, 4, 80.0),
        "mesh4x4": _mesh("mesh4x4", 4, 4, 80.0),
        "hetero6": hetero,
    }


def synth_model(fp: Floorplan, seed: int, dt: float = DEFAULT_DT) -> SystemModel:
    """Draw a ground-truth SystemModel on the floorplan graph.

    Diagonal resistances land exactly on class-scaled draws from
    [0.8, 1.2] K/W; neighbor couplings are calibrated to drawn targets in
    [0.1, 0.3] of the smaller diagonal; farther pairs decay with hop count
    because coupling only flows through the conductance graph. The spectral
    radius of A is placed exactly on a draw from [0.86, 0.985].
    """
    if fp.n == 0:
        raise ValidationError("degenerate floorplan: n = 0")
    rng = np.random.default_rng(seed)
    n = fp.n
    diag_target = rng.uniform(0.8, 1.2, n) * np.array(
        [CLASS_R_SCALE[c] for c in fp.unit_classes]
    )
    if n == 1:
        r = np.array([[diag_target[0]]])
        rho_t = rng.uniform(0.86, 0.985)
        a = np.array([[rho_t]])
        b = (np.eye(1) - a) @ r
        return SystemModel(n=1, a=a, b=b, r=r)

    pairs = [(i, j) for i, j in fp.adjacency if i < j]
    ratio_target = {p: rng.uniform(0.10, 0.30) for p in pairs}

    g_leg = 1.0 / diag_target  # ambient conductance legs
    w = {p: ratio_target[p] * 1.8 * min(g_leg[p[0]], g_leg[p[1]]) for p in pairs}

    def assemble(w_map):
        s = np.diag(g_leg.copy())
        for (i, j), wij in w_map.items():
            s[i, i] += wij
            s[j, j] += wij
            s[i, j] -= wij
            s[j, i] -= wij
        r_raw = np.linalg.inv(s)
        scale = np.sqrt(diag_target / np.diag(r_raw))
        return scale[:, None] * r_raw * scale[None, :]

    # Fixed-point calibration of the coupling weights so the *final* ratios
    # r_ij / min(r_ii, r_jj) hit their drawn targets despite the nonlinear
    # inverse. Converges in a handful of rounds for these graph sizes.
    r = assemble(w)
    for _ in range(12):
        worst = 0.0
        for p in pairs:
            i, j = p
            achieved = r[i, j] / min(r[i, i], r[j, j])
            factor = np.clip(ratio_target[p] / achieved, 0.5, 2.0)
            worst = max(worst, abs(factor - 1.0))
            w[p] *= factor
        r = assemble(w)
        if worst < 1e-10:
            break

    g = np.linalg.inv(r)  # conductance matrix of the calibrated network
    c_heat = np.array([CLASS_C_SCALE[c] for c in fp.unit_classes]) * rng.uniform(
        0.9, 1.1, n
    )
    gen = g / c_heat[:, None]
    mu = np.linalg.eigvals(gen).real
    rho_t = rng.uniform(0.86, 0.985)
    sigma = dt * mu.min() / (-np.log(rho_t))
    a = expm(-dt * gen / sigma)
    if a.min() < 0:
        if a.min() < -1e-12:
            raise AssertionError("matrix exponential produced a negative entry")
        a = np.where(a < 0, 0.0, a)
    b = (np.eye(n) - a) @ r
    m = SystemModel(n=n, a=a, b=b, r=r)
    if b.min() < 0:
        raise AssertionError("forced-response matrix picked up a negative entry")
    return m


def _idle_floor(rng: np.random.Generator, n: int, budget: float,
                idle_range: tuple[float, float]) -> np.ndarray:
    return rng.uniform(idle_range[0], idle_range[1], n) * budget


def gen_power(fp: Floorplan, spec: WorkloadSpec,
              share_range: tuple[float, float] = (0.55, 0.85),
              idle_range: tuple[float, float] = (0.01, 0.02)) -> PowerTrace:
    """Generate a per-unit power trace for one workload; deterministic in seed."""
    rng = np.random.default_rng(spec.seed)
    n, k, budget = fp.n, spec.duration, spec.budget

    if spec.kind == "cooling":
        return PowerTrace(n=n, samples=np.zeros((k, n)), totals=np.zeros(k))

    if spec.kind == "single-core-stress":
        if not 0 <= spec.unit < n:
            raise ValidationError(f"stress unit {spec.unit} out of range for n={n}")
        row = _idle_floor(rng, n, budget, idle_range)
        headroom = budget - (row.sum() - row[spec.unit])
        row[spec.unit] = rng.uniform(*share_range) * headroom
        samples = np.tile(row, (k, 1))
        return PowerTrace.from_samples(samples)

    if spec.kind == "step-stress":
        seg = max(k // 6, 1)
        samples = np.empty((k, n))
        pos = 0
        while pos < k:
            weights = rng.uniform(0.05, 1.0, n)
            total = rng.uniform(0.35, 0.9) * budget
            row = weights / weights.sum() * total
            samples[pos : pos + seg] = row
            pos += seg
        return PowerTrace.from_samples(samples)

    # random-walk: a reflected walk on the total power plus a slowly drifting
    # per-unit mix, so every sample has strictly positive per-unit power.
    total = np.empty(k)
    total[0] = rng.uniform(0.4, 0.8)
    for i in range(1, k):
        step = total[i - 1] + rng.normal(0, 0.04)
        total[i] = np.clip(step, 0.25, 0.92)
    mix = np.empty((k, n))
    mix[0] = rng.uniform(0.2, 1.0, n)
    for i in range(1, k):
        mix[i] = np.clip(mix[i - 1] + rng.normal(0, 0.03, n), 0.05, 1.0)
    samples = mix / mix.sum(axis=1, keepdims=True) * (total * budget)[:, None]
    return PowerTrace.from_samples(samples)


def forward_sim(m: SystemModel, p: PowerTrace, t0=None,
                ambient: float = DEFAULT_AMBIENT, dt: float = DEFAULT_DT) -> ThermalTrace:
    """Iterate the state recurrence: rise(k) = A rise(k-1) + B P(k).

    Row 0 of the output is the initial condition; row k >= 1 pairs with power
    sample k-1 (power applied during the step that produces the reading).
    """
    if p.blind:
        raise ValidationError("forward_sim needs per-unit power samples")
    if p.n != m.n:
        raise ValidationError(f"power trace has n={p.n}, model has n={m.n}")
    rho = spectral_radius(m.a)
    if rho >= 1.0:
        raise ValidationError(f"unstable model: rho(a) = {rho:.6g} >= 1")
    if t0 is None:
        t0 = np.full(m.n, ambient)
    t0 = np.asarray(t0, dtype=float)
    if t0.shape != (m.n,):
        raise ValidationError(f"t0 must have shape ({m.n},), got {t0.shape}")
    if np.any(t0 < ambient):
        raise ValidationError("initial temperatures must be >= ambient")

    out = np.empty((p.k + 1, m.n))
    rise = t0 - ambient
    out[0] = rise
    for k in range(p.k):
        rise = m.a @ rise + m.b @ p.samples[k]
        out[k + 1] = rise
    return ThermalTrace(n=m.n, dt=dt, ambient=ambient, samples=out + ambient)


def gen_steady_dataset(m: SystemModel, fp: Floorplan, experiments: int, seed: int,
                       share_range: tuple[float, float] = (0.55, 0.85),
                       idle_range: tuple[float, float] = (0.01, 0.02),
                       ) -> tuple[SteadyStateDataset, np.ndarray]:
    """Steady-state experiments: T_s row = R @ P exactly.

    Experiment j stresses unit j mod N with a randomized budget share, so any
    M >= N includes at least one single-core-stress experiment per unit.
    Returns the dataset plus the hidden ground-truth per-unit powers (M x N),
    which exist for scoring only and never reach the estimators.
    """
    if experiments < fp.n:
        raise ValidationError(
            f"need at least as many experiments as units: M={experiments} < N={fp.n}"
        )
    if m.n != fp.n:
        raise ValidationError("model and floorplan disagree on unit count")
    rng = np.random.default_rng(seed)
    p_s = np.empty((experiments, m.n))
    for j in range(experiments):
        unit = j % m.n
        row = _idle_floor(rng, m.n, fp.power_budget, idle_range)
        headroom = fp.power_budget - (row.sum() - row[unit])
        row[unit] = rng.uniform(*share_range) * headroom
        p_s[j] = row
    t_s = p_s @ m.r.T  # row_j = R @ p_j
    ds = SteadyStateDataset(t_s=t_s, p_total=p_s.sum(axis=1))
    return ds, p_s


def corrupt_dataset(ds: SteadyStateDataset, seed: int, noise_rel: float = 0.005,
                    outlier_rows: int = 3,
                    outlier_scale: tuple[float, float] = (8.0, 12.0),
                    truth: np.ndarray | None = None,
                    ) -> tuple[SteadyStateDataset, np.ndarray | None, np.ndarray]:
    """Measurement artifacts: multiplicative sensor noise plus appended glitch rows.

    Glitch rows duplicate randomly chosen experiments with temperatures scaled
    by roughly an order of magnitude while the (trusted) power totals stay
    unchanged. Returns (corrupted dataset, matching truth rows or None,
    indices of the appended outlier rows in the new dataset).
    """
    rng = np.random.default_rng(seed)
    t_s = ds.t_s * (1.0 + noise_rel * rng.standard_normal(ds.t_s.shape))
    t_s = np.maximum(t_s, 0.0)
    p_total = np.array(ds.p_total)
    truth_rows = None if truth is None else np.array(truth)
    if outlier_rows > 0:
        src = rng.choice(ds.m, size=min(outlier_rows, ds.m), replace=False)
        scales = rng.uniform(*outlier_scale, size=src.shape[0])
        t_s = np.vstack([t_s, t_s[src] * scales[:, None]])
        p_total = np.concatenate([p_total, p_total[src]])
        if truth_rows is not None:
            truth_rows = np.vstack([truth_rows, truth_rows[src]])
    out_idx = np.arange(ds.m, t_s.shape[0])
    return SteadyStateDataset(t_s=t_s, p_total=p_total), truth_rows, out_idx


def inject_attack(t: ThermalTrace, s: AttackScenario) -> ThermalTrace:
    """Shift one sensor's column by dt_error; all other entries bit-identical."""
    if not 0 <= s.sensor < t.n:
        raise ValidationError(f"sensor {s.sensor} out of range for n={t.n}")
    samples = np.array(t.samples)
    samples[:, s.sensor] += s.dt_error
    return ThermalTrace(n=t.n, dt=t.dt, ambient=t.ambient, samples=samples,
                        validate=False)


def attack_dataset(ds: SteadyStateDataset, s: AttackScenario) -> SteadyStateDataset:
    """Apply the same constant sensor offset to a steady-state dataset."""
    if not 0 <= s.sensor < ds.n:
        raise ValidationError(f"sensor {s.sensor} out of range for n={ds.n}")
    t_s = np.array(ds.t_s)
    t_s[:, s.sensor] += s.dt_error
    return SteadyStateDataset(t_s=t_s, p_total=ds.p_total, validate=False)

import numpy as np
import pytest

from bpilab import simkit
from bpilab.factorize import NmfConfig
from bpilab.models import SystemModel, ThermalTrace, ValidationError
from bpilab.sentinel import (
    DEFAULT_XI,
    DetectionReport,
    GoldenReference,
    RuntimeData,
    SweepCell,
    build_golden,
    detect,
    estimate_true_temp,
    identify_suspect,
    sweep,
)
from bpilab.simkit import AttackScenario, WorkloadSpec, attack_dataset, forward_sim, gen_power, inject_attack

AMBIENT = 298.15
FAST = NmfConfig(max_iters=800, tol=1e-8)


def make_bundle(fp, model, seed, with_trace=False):
    n = fp.n
    ds, _ = simkit.gen_steady_dataset(model, fp, experiments=n * (n + 2), seed=seed)
    idle = gen_power(fp, WorkloadSpec(kind="cooling", duration=159,
                                      budget=fp.power_budget, seed=seed + 1))
    rng = np.random.default_rng(seed + 2)
    p_hot = rng.uniform(0.3, 1.0, n)
    p_hot *= fp.power_budget / p_hot.sum()
    cooling = forward_sim(model, idle, t0=AMBIENT + model.r @ p_hot)
    trace = totals = None
    if with_trace:
        p = gen_power(fp, WorkloadSpec(kind="random-walk", duration=80,
                                       budget=fp.power_budget, seed=seed + 3))
        trace = forward_sim(model, p)
        totals = p.totals
    return RuntimeData(cooling=cooling, steady=ds, trace=trace, totals=totals)


def attacked_bundle(data, sensor, dt_error):
    scenario = AttackScenario(sensor=sensor, dt_error=dt_error)
    trace = totals = None
    if data.trace is not None:
        trace = inject_attack(data.trace, scenario)
        totals = data.totals
    return RuntimeData(
        cooling=inject_attack(data.cooling, scenario),
        steady=attack_dataset(data.steady, scenario),
        trace=trace,
        totals=totals,
    )


@pytest.fixture(scope="module")
def mesh_env():
    fp = simkit.builtin_floorplans()["mesh2x2"]
    model = simkit.synth_model(fp, seed=0)
    data = make_bundle(fp, model, seed=5, with_trace=True)
    golden = build_golden(data, "dbscan-icbpi", FAST)
    return fp, model, data, golden


@pytest.fixture(scope="module")
def hetero_env():
    fp = simkit.builtin_floorplans()["hetero6"]
    model = simkit.synth_model(fp, seed=0)
    data = make_bundle(fp, model, seed=7)
    golden = build_golden(data, "dbscan-icbpi", FAST)
    return fp, model, data, golden


def truth_golden(model):
    return GoldenReference(model=model, strategy_tag="dbscan-icbpi",
                           cfg=NmfConfig(), a_residual=0.0)


class TestRuntimeData:
    def test_unit_mismatch(self, mesh_env):
        fp, model, data, _ = mesh_env
        other_fp = simkit.builtin_floorplans()["hetero6"]
        other = simkit.synth_model(other_fp, seed=0)
        other_data = make_bundle(other_fp, other, seed=1)
        with pytest.raises(ValidationError, match="units"):
            RuntimeData(cooling=data.cooling, steady=other_data.steady)

    def test_trace_requires_totals(self, mesh_env):
        _, _, data, _ = mesh_env
        with pytest.raises(ValidationError, match="together"):
            RuntimeData(cooling=data.cooling, steady=data.steady, trace=data.trace)


class TestBuildGolden:
    def test_close_to_truth(self, mesh_env):
        _, model, _, golden = mesh_env
        rel = np.linalg.norm(golden.r_golden - model.r) / np.linalg.norm(model.r)
        assert rel <= 0.05
        assert golden.strategy_tag == "dbscan-icbpi"

    def test_deterministic(self, mesh_env):
        _, _, data, golden = mesh_env
        again = build_golden(data, "dbscan-icbpi", FAST)
        assert np.array_equal(again.r_golden, golden.r_golden)

    def test_attacked_calibration_data_warns_against_prior(self, mesh_env):
        _, _, data, golden = mesh_env
        bad = attacked_bundle(data, sensor=0, dt_error=10.0)
        redone = build_golden(bad, "dbscan-icbpi", FAST, prior=golden)
        assert any("calibration-deviation" in w for w in redone.warnings)

    def test_clean_recalibration_does_not_warn(self, mesh_env):
        _, _, data, golden = mesh_env
        redone = build_golden(data, "dbscan-icbpi", FAST, prior=golden)
        assert not any("calibration-deviation" in w for w in redone.warnings)

    def test_invalid_golden_matrix_rejected(self):
        n = 2
        r = np.array([[1.0, 0.2], [0.2, 0.0]])  # zero diagonal entry
        a = np.diag([0.5, 0.5])
        model = SystemModel(n=n, a=a, b=(np.eye(n) - a) @ r, r=r)
        with pytest.raises(ValidationError, match="positive diagonal"):
            GoldenReference(model=model, strategy_tag="identity-bpi",
                            cfg=NmfConfig(), a_residual=0.0)


class TestDetect:
    def test_identical_data_not_attacked(self, mesh_env):
        _, _, data, golden = mesh_env
        report = detect(golden, data, xi=DEFAULT_XI)
        assert report.attacked is False
        assert report.deviation == 0.0
        assert report.suspect is None
        assert report.t_hat is None

    def test_large_offset_detected_and_localized(self, mesh_env):
        _, _, data, golden = mesh_env
        report = detect(golden, attacked_bundle(data, sensor=0, dt_error=10.0), xi=0.05)
        assert report.attacked is True
        assert report.deviation > 0.05
        assert report.suspect == 0
        assert report.per_unit_scores is not None
        assert int(np.argmin(report.per_unit_scores)) == 0
        assert report.t_hat is not None and report.t_hat.shape == (data.trace.k,)

    def test_lax_tolerance_masks_attack(self, mesh_env):
        _, _, data, golden = mesh_env
        report = detect(golden, attacked_bundle(data, sensor=0, dt_error=10.0), xi=10.0)
        assert report.attacked is False
        assert report.suspect is None

    def test_infinite_tolerance_never_triggers(self, mesh_env):
        _, _, data, golden = mesh_env
        report = detect(golden, attacked_bundle(data, sensor=2, dt_error=15.0), xi=np.inf)
        assert report.attacked is False

    def test_zero_tolerance_triggers_on_any_perturbation(self, mesh_env):
        _, _, data, golden = mesh_env
        report = detect(golden, attacked_bundle(data, sensor=1, dt_error=0.5), xi=0.0)
        assert report.attacked is True
        assert report.deviation > 0.0

    def test_negative_tolerance_rejected(self, mesh_env):
        _, _, data, golden = mesh_env
        with pytest.raises(ValidationError, match=">= 0"):
            detect(golden, data, xi=-0.1)

    def test_report_consistency_enforced(self):
        with pytest.raises(ValidationError, match="suspect"):
            DetectionReport(attacked=True, deviation=1.0, suspect=None)
        with pytest.raises(ValidationError, match="suspect"):
            DetectionReport(attacked=False, deviation=0.0, suspect=3)


class TestIdentifySuspect:
    def test_single_row_column_corruption(self, mesh_env):
        _, _, _, golden = mesh_env
        r_rt = golden.r_golden.copy()
        r_rt[2, :] += 0.3
        r_rt[:, 2] += 0.3
        suspect, scores = identify_suspect(golden, r_rt)
        assert suspect == 2
        assert scores[2] <= 1e-12
        assert np.all(scores[np.arange(4) != 2] > scores[2])

    def test_symmetric_tie_resolves_to_lowest(self):
        n = 4
        r = np.eye(n)
        a = np.diag(np.full(n, 0.5))
        model = SystemModel(n=n, a=a, b=(np.eye(n) - a) @ r, r=r)
        golden = GoldenReference(model=model, strategy_tag="identity-bpi",
                                 cfg=NmfConfig(), a_residual=0.0)
        r_rt = r.copy()
        r_rt[1, 1] += 0.2
        r_rt[3, 3] += 0.2
        suspect, scores = identify_suspect(golden, r_rt)
        assert scores[1] == scores[3]
        assert suspect == 1

    def test_shape_mismatch(self, mesh_env):
        _, _, _, golden = mesh_env
        with pytest.raises(ValidationError, match="expected"):
            identify_suspect(golden, np.eye(3))

    def test_single_unit_rejected(self):
        model = SystemModel(n=1, a=np.array([[0.5]]), b=np.array([[0.1]]),
                            r=np.array([[0.2]]))
        golden = GoldenReference(model=model, strategy_tag="identity-bpi",
                                 cfg=NmfConfig(), a_residual=0.0)
        with pytest.raises(ValidationError, match="at least 2"):
            identify_suspect(golden, np.array([[0.3]]))


class TestEstimateTrueTemp:
    def test_clean_trace_matches_measured(self, mesh_env):
        _, model, data, _ = mesh_env
        golden = truth_golden(model)
        t_hat = estimate_true_temp(golden, data.trace, data.totals, suspect=1)
        assert np.allclose(t_hat, data.trace.samples[:, 1], atol=1e-6)

    def test_estimation_beats_corrupted_reading(self, mesh_env):
        _, model, data, _ = mesh_env
        golden = truth_golden(model)
        sensor = 2
        attacked = inject_attack(data.trace, AttackScenario(sensor=sensor, dt_error=5.0))
        t_hat = estimate_true_temp(golden, attacked, data.totals, suspect=sensor)
        true_col = data.trace.samples[:, sensor]
        err_est = np.abs(t_hat - true_col).mean()
        err_meas = np.abs(attacked.samples[:, sensor] - true_col).mean()
        assert err_meas == pytest.approx(5.0, abs=1e-9)
        assert err_est < err_meas

    def test_fitted_golden_still_beats_reading(self, mesh_env):
        _, _, data, golden = mesh_env
        sensor = 3
        attacked = inject_attack(data.trace, AttackScenario(sensor=sensor, dt_error=5.0))
        t_hat = estimate_true_temp(golden, attacked, data.totals, suspect=sensor)
        true_col = data.trace.samples[:, sensor]
        assert np.abs(t_hat - true_col).mean() < 5.0

    def test_first_sample_is_measured(self, mesh_env):
        _, model, data, _ = mesh_env
        golden = truth_golden(model)
        attacked = inject_attack(data.trace, AttackScenario(sensor=0, dt_error=7.0))
        t_hat = estimate_true_temp(golden, attacked, data.totals, suspect=0)
        assert t_hat[0] == attacked.samples[0, 0]

    def test_single_unit_rejected(self):
        model = SystemModel(n=1, a=np.array([[0.5]]), b=np.array([[0.1]]),
                            r=np.array([[0.2]]))
        golden = GoldenReference(model=model, strategy_tag="identity-bpi",
                                 cfg=NmfConfig(), a_residual=0.0)
        trace = ThermalTrace(n=1, dt=0.1, ambient=AMBIENT,
                             samples=np.full((3, 1), AMBIENT + 1.0))
        with pytest.raises(ValidationError, match="only sensor"):
            estimate_true_temp(golden, trace, np.ones(2), suspect=0)

    def test_suspect_range_checked(self, mesh_env):
        _, model, data, _ = mesh_env
        golden = truth_golden(model)
        with pytest.raises(ValidationError, match="out of range"):
            estimate_true_temp(golden, data.trace, data.totals, suspect=4)

    def test_totals_length_checked(self, mesh_env):
        _, model, data, _ = mesh_env
        golden = truth_golden(model)
        with pytest.raises(ValidationError, match="transition"):
            estimate_true_temp(golden, data.trace, data.totals[:-1], suspect=0)


class TestSweep:
    def test_benign_control_row(self, hetero_env):
        fp, _, data, golden = hetero_env
        cells = sweep(golden, data, xi_grid=[0.05], dt_grid=[0.0])
        assert len(cells) == 1
        cell = cells[0]
        assert cell.benign is True
        assert cell.detection_failures == fp.n
        assert cell.identification_failures == 0
        assert cell.trials == fp.n

    def test_zero_failures_for_large_offsets(self, hetero_env):
        _, _, data, golden = hetero_env
        cells = sweep(golden, data, xi_grid=[0.01, 0.05, 0.1], dt_grid=[10.0, -10.0])
        for cell in cells:
            assert cell.detection_failures == 0
            assert cell.identification_failures == 0

    def test_small_offsets_fail_at_lax_threshold(self, hetero_env):
        _, _, data, golden = hetero_env
        cells = sweep(golden, data, xi_grid=[0.1], dt_grid=[1.0, 6.0])
        by_dt = {c.dt_error: c for c in cells}
        assert by_dt[1.0].detection_failures > 0
        assert by_dt[6.0].detection_failures == 0

    def test_cell_order_and_invariants(self, hetero_env):
        fp, _, data, golden = hetero_env
        xi_grid = [0.02, 0.08]
        dt_grid = [3.0, -3.0]
        cells = sweep(golden, data, xi_grid, dt_grid)
        assert [(c.xi, c.dt_error) for c in cells] == [
            (x, d) for x in xi_grid for d in dt_grid
        ]
        for cell in cells:
            assert 0 <= cell.detection_failures <= cell.trials
            assert 0 <= cell.identification_failures <= cell.trials
            assert cell.trials == fp.n
            assert cell.benign is False

    def test_deterministic(self, hetero_env):
        _, _, data, golden = hetero_env
        a = sweep(golden, data, xi_grid=[0.05], dt_grid=[2.0])
        b = sweep(golden, data, xi_grid=[0.05], dt_grid=[2.0])
        assert a == b

    def test_empty_grids_rejected(self, hetero_env):
        _, _, data, golden = hetero_env
        with pytest.raises(ValidationError, match="nonempty"):
            sweep(golden, data, xi_grid=[], dt_grid=[1.0])
        with pytest.raises(ValidationError, match="nonempty"):
            sweep(golden, data, xi_grid=[0.05], dt_grid=[])

    def test_negative_tolerance_rejected(self, hetero_env):
        _, _, data, golden = hetero_env
        with pytest.raises(ValidationError, match=">= 0"):
            sweep(golden, data, xi_grid=[-0.01], dt_grid=[1.0])


class TestSweepCell:
    def test_failure_bounds_enforced(self):
        with pytest.raises(ValidationError):
            SweepCell(xi=0.05, dt_error=1.0, detection_failures=7,
                      identification_failures=0, trials=6)
        with pytest.raises(ValidationError):
            SweepCell(xi=0.05, dt_error=1.0, detection_failures=0,
                      identification_failures=-1, trials=6)

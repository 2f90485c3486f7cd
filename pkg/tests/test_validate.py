import csv
import json

import numpy as np
import pytest

from robust_oed.dynamics import ModelSpec, NoisePolicy, PiecewiseConstantInput, integrate
from robust_oed.models import (
    PARAMETER,
    STAT5_Y2_MIN,
    Distribution,
    UncertaintySet,
    stat5_model,
    stat5_theta_nominal,
    stat5_y2_weights,
)
from robust_oed.oed import ChanceConstraint
from robust_oed.validate import (
    GAUSS_NEWTON,
    NELDER_MEAD,
    McConfig,
    compare_designs,
    run_mc,
    run_rng,
    wls_estimate,
)


def decay(noise=None):
    return ModelSpec(
        n_x=1, n_y=1, n_theta=1,
        f=lambda x, u, th: -th[:, :1] * x + u,
        h=lambda x: x[..., :1],
        df_dx=lambda x, u, th: -th[:, :, None],
        df_dtheta=lambda x, u, th: -x[:, :, None],
        dh_dx=lambda x: np.ones((x.shape[0], 1, 1)),
        x0=np.array([1.0]), noise=noise or NoisePolicy("absolute", 0.01),
    )


INP = PiecewiseConstantInput([0.0, 0.5], 10.0)
T = np.arange(1.0, 10.5, 1.0)


def data(theta, model=None):
    model = model or decay()
    tr = integrate(model, INP, [theta], grid=np.concatenate([[0.0], T]), sensitivities=False)
    return tr.y[1:, 0]


@pytest.mark.parametrize("method", [GAUSS_NEWTON, NELDER_MEAD])
def test_noise_free_data_recovers_theta(method):
    y = data(0.7)
    r = wls_estimate(decay(), INP, T, y, [0.4], bounds=([0.1], [2.0]), method=method)
    assert r.theta[0] == pytest.approx(0.7, rel=1e-6)


def test_start_at_truth_is_fixed_point():
    y = data(0.7)
    r = wls_estimate(decay(), INP, T, y, [0.7], bounds=([0.1], [2.0]))
    assert r.theta[0] == pytest.approx(0.7, rel=1e-8)
    assert r.converged


def test_noisy_scalar_estimate_from_support_midpoint():
    rng = np.random.default_rng(4)
    y = data(0.7) + 0.01 * rng.standard_normal((len(T), 1))
    r = wls_estimate(decay(), INP, T, y, [1.05], bounds=([0.1], [2.0]))
    assert r.theta[0] == pytest.approx(0.7, rel=0.05)


def test_duplicate_data_same_estimate():
    rng = np.random.default_rng(5)
    y = data(0.7) + 0.01 * rng.standard_normal((len(T), 1))
    a = wls_estimate(decay(), INP, T, y, [0.4], bounds=([0.1], [2.0]))
    b = wls_estimate(decay(), INP, np.concatenate([T, T]), np.concatenate([y, y]), [0.4],
                     bounds=([0.1], [2.0]))
    assert b.theta[0] == pytest.approx(a.theta[0], rel=1e-8)


def test_estimate_respects_bounds():
    y = data(0.7)
    r = wls_estimate(decay(), INP, T, y, [0.2], bounds=([0.1], [0.5]))
    assert 0.1 <= r.theta[0] <= 0.5
    assert r.theta[0] == pytest.approx(0.5, abs=1e-9)


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(n_runs=0)
    with pytest.raises(ValueError):
        McConfig(init="median")
    with pytest.raises(ValueError):
        McConfig(noise_scale=-1.0)
    with pytest.raises(ValueError):
        McConfig(meas_grid=[1.0, 50.0]).grids(40.0)


def scalar_set(lo=0.5, hi=0.9):
    return UncertaintySet((((PARAMETER, 0), Distribution.uniform(lo, hi)),))


def test_zero_noise_true_init_exact():
    cfg = McConfig(n_runs=5, meas_grid=T, init="true", seed=1, noise_scale=0.0)
    rep = run_mc(decay(), scalar_set(), [0.7], INP, cfg)
    assert np.all(rep.rel_err <= 1e-8)


def test_single_dirac_run():
    uset = UncertaintySet((((PARAMETER, 0), Distribution.dirac(0.6)),))
    rep = run_mc(decay(), uset, [0.7], INP, McConfig(n_runs=1, meas_grid=T))
    assert rep.n_runs == 1
    assert rep.theta_true[0, 0] == 0.6


def test_run_seeds_are_independent_of_chunking():
    a = run_mc(decay(), scalar_set(), [0.7], INP, McConfig(n_runs=12, meas_grid=T, seed=3))
    b = run_mc(decay(), scalar_set(), [0.7], INP, McConfig(n_runs=12, meas_grid=T, seed=3,
                                                            threads=3))
    np.testing.assert_array_equal(a.theta_true, b.theta_true)
    np.testing.assert_array_equal(a.theta_hat, b.theta_hat)
    assert run_rng(3, 0).random() != run_rng(3, 1).random()


def test_report_invariants_and_files(tmp_path):
    rep = run_mc(decay(), scalar_set(), [0.7], INP, McConfig(n_runs=20, meas_grid=T, seed=2))
    assert np.all(rep.avg_rel_err <= rep.max_rel_err)
    assert 0.0 <= rep.satisfaction <= 1.0
    rep.write(tmp_path)
    with open(tmp_path / "runs.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 21
    assert rows[0][:3] == ["run", "theta1_true", "theta1_hat"] or rows[0][0] == "run"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["n_runs"] == 20
    with open(tmp_path / "histogram.csv") as fh:
        hist = list(csv.reader(fh))
    assert sum(int(r[2]) for r in hist[1:]) == 20


def test_consistency_as_noise_vanishes():
    errs = []
    for level in (1e-2, 1e-3, 1e-4):
        rep = run_mc(decay(NoisePolicy("absolute", level)), scalar_set(), [0.7], INP,
                     McConfig(n_runs=30, meas_grid=T, seed=8))
        errs.append(rep.avg_rel_err[0])
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3


def test_compare_identical_designs():
    cfg = McConfig(n_runs=10, meas_grid=T, seed=5)
    a = run_mc(decay(), scalar_set(), [0.7], INP, cfg)
    b = run_mc(decay(), scalar_set(), [0.7], INP, cfg)
    rows = compare_designs(a, b)
    assert all(r["ratio"] == 1.0 for r in rows)


def test_compare_rejects_mismatched_reports():
    a = run_mc(decay(), scalar_set(), [0.7], INP, McConfig(n_runs=4, meas_grid=T, seed=5))
    b = run_mc(decay(), scalar_set(), [0.7], INP, McConfig(n_runs=5, meas_grid=T, seed=5))
    c = run_mc(decay(), scalar_set(), [0.7], INP, McConfig(n_runs=4, meas_grid=T, seed=6))
    with pytest.raises(ValueError):
        compare_designs(a, b)
    with pytest.raises(ValueError):
        compare_designs(a, c)


def test_paired_realizations_across_inputs():
    """Different inputs, same seed: bitwise identical true parameters."""
    cfg = McConfig(n_runs=8, meas_grid=T, seed=11)
    a = run_mc(decay(), scalar_set(), [0.7], INP, cfg)
    b = run_mc(decay(), scalar_set(), [0.7], PiecewiseConstantInput([1.0, 0.0], 10.0), cfg)
    np.testing.assert_array_equal(a.theta_true, b.theta_true)


def test_stat5_constraint_indicator():
    model, uset = stat5_model(n_stages=8, x0=(0.2, 0.0, 0.0, 0.0))
    con = ChanceConstraint(stat5_y2_weights(model), -1.0, -STAT5_Y2_MIN, 0.05,
                           np.arange(0.0, 41.0, 1.0))
    inp = PiecewiseConstantInput([1.0, 1.0, 1.0, 1.0, 1.0], 40.0)
    rep = run_mc(model, uset, stat5_theta_nominal(), inp,
                 McConfig(n_runs=6, seed=0, step=0.1, max_iter=20), constraint=con)
    grid = np.arange(0.0, 40.001, 0.25)
    tr = integrate(model, inp, rep.theta_true, model.initial_state(np.tile(model.x0[:4], (6, 1))),
                   grid, step=0.1, sensitivities=False)
    y2 = tr.x @ stat5_y2_weights(model)
    np.testing.assert_array_equal(rep.satisfied, y2.min(axis=0) > STAT5_Y2_MIN)
    np.testing.assert_allclose(rep.probe_values, y2[-1])
    assert rep.n_diverged == 0
    lo = [d.support()[0] for _, d in uset.entries]
    hi = [d.support()[1] for _, d in uset.entries]
    assert np.all((rep.theta_hat >= lo) & (rep.theta_hat <= hi))

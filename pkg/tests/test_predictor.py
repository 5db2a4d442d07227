import math

import numpy as np
import pytest

from moedge.errors import CheckpointError
from moedge.predictor.gradcheck import gradient_check
from moedge.predictor.io import load_point, load_variational, save_point, save_variational
from moedge.predictor.network import LstmArch, forward, init_params
from moedge.predictor.training import (
    TrainConfig,
    VariationalParams,
    build_windows,
    forecast,
    forecast_cells,
    point_forecast_cells,
    predict_point,
    train_point,
    train_variational,
)
from moedge.trace import DemandTrace, fit_normalizer


def _line_trace(n=100):
    return DemandTrace((0,), np.arange(n, dtype=float)[:, None])


def test_window_counts():
    tr = DemandTrace((0,), np.arange(10.0)[:, None])
    ds = build_windows(tr, 4, 2)
    assert len(ds) == 5
    assert ds.inputs[1].tolist() == [1, 2, 3, 4] and ds.labels[1].tolist() == [5, 6]
    assert len(build_windows(tr, 8, 2)) == 1
    with pytest.raises(ValueError):
        build_windows(tr, 9, 2)


def test_window_count_reference_shape():
    tr = DemandTrace(tuple(range(10)), np.zeros((2160, 10)))
    assert len(build_windows(tr, 144, 12)) == 20050


def test_windows_pool_cells_in_order():
    v = np.column_stack([np.arange(6.0), 100 + np.arange(6.0)])
    ds = build_windows(DemandTrace((0, 1), v), 2, 1)
    assert ds.inputs[:, 0].tolist() == [0, 1, 2, 3, 100, 101, 102, 103]


def test_arch_validation_and_param_count():
    arch = LstmArch(1, 50, 12)
    assert arch.num_params() == 4 * 50 * (1 + 50 + 1) + 50 * 12 + 12
    with pytest.raises(ValueError):
        LstmArch(1, 0, 1)
    with pytest.raises(ValueError):
        LstmArch(1, 4, 1, layers=2)


def test_forward_rejects_empty_sequence():
    arch = LstmArch(1, 4, 2)
    params = init_params(arch, np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward(params, np.zeros((3, 0, 1)))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)


def test_gradcheck_point_lstm():
    rep = gradient_check(LstmArch(1, 8, 3), "mse", tolerance=1e-6)
    assert rep.passed, rep


def test_gradcheck_variational_lstm():
    rep = gradient_check(LstmArch(1, 8, 3), "variational", tolerance=1e-4)
    assert rep.passed, rep


def test_gradcheck_linear_single_step():
    # exact polynomial case; a wider step keeps roundoff below the bound
    rep = gradient_check(LstmArch(1, 4, 2, activation="linear"), "mse", tolerance=1e-8, seq_len=1, step=1e-3)
    assert rep.passed, rep


def test_gradcheck_validation():
    with pytest.raises(ValueError):
        gradient_check(LstmArch(1, 4, 1), seq_len=0)
    with pytest.raises(ValueError):
        gradient_check(LstmArch(1, 32, 1))


@pytest.fixture(scope="module")
def line_setup():
    tr = _line_trace()
    norm = fit_normalizer(tr)
    ds = build_windows(tr, 4, 1, norm)
    rng = np.random.default_rng(0)
    perm = rng.permutation(len(ds))
    return norm, ds.take(perm[20:]), ds.take(perm[:20])


def _cfg(**kw):
    return TrainConfig(**{"epochs": 200, "batch_size": 16, "learning_rate": 1e-2, "seed": 0, **kw})


def test_point_fits_line(line_setup):
    norm, train, val = line_setup
    arch = LstmArch(1, 8, 1)
    p = train_point(train, arch, _cfg(), norm)
    rmse = math.sqrt(np.mean((predict_point(p.weights, val.inputs) - val.labels) ** 2))
    assert rmse < 0.05
    curve = np.array(p.loss_curve)
    assert np.all(np.isfinite(curve))
    assert curve[-1] < curve[0]
    again = train_point(train, arch, _cfg(), norm)
    assert all(np.array_equal(p.weights[k], again.weights[k]) for k in p.weights)


def test_variational_fits_line(line_setup):
    norm, train, val = line_setup
    arch = LstmArch(1, 8, 1)
    vp = train_variational(train, arch, _cfg(), norm)
    rmse = math.sqrt(np.mean((predict_point(vp.mean, val.inputs) - val.labels) ** 2))
    assert rmse < 0.1
    assert all(np.all(sd > 0) for sd in vp.weight_sd().values())
    again = train_variational(train, arch, _cfg(), norm)
    assert all(np.array_equal(vp.mean[k], again.mean[k]) for k in vp.mean)


def test_empty_dataset_rejected(line_setup):
    _, train, _ = line_setup
    with pytest.raises(ValueError):
        train_point(train.take(np.array([], dtype=int)), LstmArch(1, 4, 1), _cfg(epochs=1))


def _toy_variational(rho=-3.0, lv=math.log(1e-2)):
    arch = LstmArch(1, 4, 3)
    mean = init_params(arch, np.random.default_rng(1))
    return VariationalParams(arch, mean, {k: np.full_like(v, rho) for k, v in mean.items()}, lv)


def test_forecast_statistics_consistent():
    vp = _toy_variational()
    fc = forecast(vp, [0.2, 0.4, 0.1, 0.3], S=30, seed=5)
    assert fc.samples.shape == (1, 30, 3)
    np.testing.assert_allclose(fc.mu, fc.samples.mean(axis=1), atol=1e-9)
    np.testing.assert_allclose(fc.sigma, fc.samples.std(axis=1, ddof=1), atol=1e-9)
    assert np.all(fc.samples >= 0)
    again = forecast(vp, [0.2, 0.4, 0.1, 0.3], S=30, seed=5)
    assert np.array_equal(fc.samples, again.samples)


def test_forecast_degenerate_posterior():
    vp = _toy_variational(rho=-800.0, lv=-800.0)
    fc = forecast(vp, [0.2, 0.4, 0.1, 0.3], S=5, seed=0)
    assert np.all(fc.sigma == 0)


def test_forecast_two_sample_sd_convention():
    # two samples 4 and 6 give mean 5 and n-1 sd sqrt(2)
    s = np.array([4.0, 6.0])
    assert s.mean() == 5.0 and s.std(ddof=1) == pytest.approx(math.sqrt(2))


def test_forecast_rejects_small_s():
    with pytest.raises(ValueError):
        forecast(_toy_variational(), [0.1, 0.2], S=1)


def test_forecast_denormalizes_per_cell():
    tr = DemandTrace((3, 8), np.array([[0.0, 100.0], [1.0, 300.0]]))
    norm = fit_normalizer(tr)
    vp = _toy_variational(rho=-800.0, lv=-800.0)
    vp.normalizer = norm
    h = np.array([[0.5, 0.5, 0.5, 0.5], [200.0, 200.0, 200.0, 200.0]])
    fc = forecast_cells(vp, h, (3, 8), S=3, seed=0)
    raw = np.clip(predict_point(vp.mean, np.full((2, 4), 0.5)), 0, None)
    np.testing.assert_allclose(fc.mu[0], np.clip(raw[0], 0, None) * 1.0, atol=1e-9)
    np.testing.assert_allclose(fc.mu[1], np.clip(predict_point(vp.mean, np.full((1, 4), 0.5))[0] * 200 + 100, 0, None), atol=1e-9)


def test_checkpoint_roundtrip_and_mismatch(tmp_path, line_setup):
    norm, train, _ = line_setup
    arch = LstmArch(1, 4, 1)
    vp = train_variational(train, arch, _cfg(epochs=3), norm)
    save_variational(vp, tmp_path / "v.json")
    back = load_variational(tmp_path / "v.json", arch)
    assert back.arch == arch and back.normalizer.cells == norm.cells
    assert all(np.array_equal(vp.mean[k], back.mean[k]) for k in vp.mean)
    assert back.log_noise_var == vp.log_noise_var
    with pytest.raises(CheckpointError, match="architecture"):
        load_variational(tmp_path / "v.json", LstmArch(1, 5, 1))
    with pytest.raises(CheckpointError, match="expected"):
        load_point(tmp_path / "v.json")
    p = train_point(train, arch, _cfg(epochs=3), norm)
    save_point(p, tmp_path / "p.json")
    save_point(p, tmp_path / "p2.json")
    assert (tmp_path / "p.json").read_bytes() == (tmp_path / "p2.json").read_bytes()
    fc = point_forecast_cells(load_point(tmp_path / "p.json"), train.inputs[:1] * 99, (0,))
    assert fc.sigma.tolist() == [[0.0]]

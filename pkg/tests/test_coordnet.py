import numpy as np
import pytest

from pelt.coordnet import (CoordinateNetConfig, SolverError, _forward, evaluate_uv,
                           fourier_encode, init_params,
                           network_forward_with_jacobian, pretrain,
                           solve_uv_network)
from pelt.geometry import MetricField
from pelt.uvfield import identity_uv

from conftest import metric_of


def flat_metric(shape, valid=None):
    if valid is None:
        valid = np.ones(shape, bool)
    nanfill = np.full(shape, np.nan)
    return MetricField(np.where(valid, 1.0, nanfill), np.where(valid, 0.0, nanfill),
                       np.where(valid, 1.0, nanfill), valid)


def test_fourier_encode_shape_and_zero_point():
    cfg = CoordinateNetConfig(fourier_bands=6, seed=3)
    e = fourier_encode(np.zeros(2), cfg)
    assert e.shape == (26,)  # 2 + 4*6
    assert np.all(e[:2] == 0)
    assert np.all(e[2:14] == 0.0)       # sin block
    assert np.all(e[14:] == 1.0)        # cos block


def test_fourier_encode_deterministic():
    cfg = CoordinateNetConfig(seed=11)
    x = np.array([[0.3, -0.7], [0.1, 0.9]])
    assert np.array_equal(fourier_encode(x, cfg), fourier_encode(x, cfg))
    other = fourier_encode(x, CoordinateNetConfig(seed=12))
    assert not np.array_equal(fourier_encode(x, cfg), other)


def test_fourier_encode_rejects_zero_bands():
    with pytest.raises(SolverError):
        fourier_encode(np.zeros(2), CoordinateNetConfig(fourier_bands=0))


def test_constant_network_has_zero_jacobian():
    cfg = CoordinateNetConfig(seed=5)
    params = init_params(cfg, 32, 32)
    params.w_out[:] = 0.0
    params.b_out[:] = (4.5, -1.25)
    pts = np.random.default_rng(0).uniform(0, 31, (20, 2))
    y, J = network_forward_with_jacobian(params, pts, cfg)
    assert np.allclose(y, [4.5, -1.25])
    assert np.all(J == 0.0)


def test_jacobian_scales_inversely_with_normalization():
    cfg = CoordinateNetConfig(seed=5)
    small = init_params(cfg, 64, 64)     # scale 31.5
    large = init_params(cfg, 127, 127)   # scale 63
    assert large.scale == pytest.approx(2 * small.scale)
    for p in (small, large):  # identity skip only: y = x_n exactly
        p.w_out[:, :cfg.hidden_width] = 0.0
    _, j_small = network_forward_with_jacobian(small, small.center + 5.0, cfg)
    _, j_large = network_forward_with_jacobian(large, large.center + 5.0, cfg)
    assert np.allclose(j_small[0], np.eye(2) / small.scale, atol=1e-15)
    assert np.allclose(j_large[0], j_small[0] / 2.0, atol=1e-15)


def activation_patterns(params, pts):
    xn = (pts - params.center) / params.scale
    cache = _forward(params, xn, want_jacobian=False)
    return np.concatenate([d for d in cache["ds"]], axis=1)


def test_jacobian_matches_finite_differences_away_from_kinks():
    cfg = CoordinateNetConfig(seed=3)
    params = init_params(cfg, 64, 64)
    rng = np.random.default_rng(5)
    params.w_out[:, :cfg.hidden_width] = rng.normal(0, 0.05, (2, cfg.hidden_width))
    pts = rng.uniform(5, 58, (300, 2))
    _, J = network_forward_with_jacobian(params, pts, cfg)
    h = 1e-3
    checked = 0
    for n, p in enumerate(pts):
        stencil = np.stack([p, p + (h, 0), p - (h, 0), p + (0, h), p - (0, h)])
        pats = activation_patterns(params, stencil)
        if (pats != pats[0]).any():
            continue  # a ReLU kink sits inside the stencil
        Jfd = np.zeros((2, 2))
        for i in range(2):
            dp = np.zeros(2)
            dp[i] = h
            yp, _ = network_forward_with_jacobian(params, p + dp, cfg)
            ym, _ = network_forward_with_jacobian(params, p - dp, cfg)
            Jfd[:, i] = (yp[0] - ym[0]) / (2 * h)
        rel = np.linalg.norm(Jfd - J[n]) / max(np.linalg.norm(J[n]), 1e-8)
        assert rel <= 1e-4
        checked += 1
    assert checked >= 100


def test_pretrain_fits_identity_on_64():
    m = flat_metric((64, 64))
    params = pretrain(m, CoordinateNetConfig(seed=7))
    uv = evaluate_uv(params, m)
    ident = identity_uv(m.valid)
    err = np.linalg.norm(uv.uv[m.valid] - ident.uv[m.valid], axis=1)
    assert err.mean() <= 1.0


def test_pretrain_deterministic_and_tolerates_one_pixel():
    valid = np.zeros((1, 1), bool)
    valid[0, 0] = True
    m1 = flat_metric((1, 1), valid)
    cfg = CoordinateNetConfig(seed=2, pretrain_epochs=5)
    p = pretrain(m1, cfg)
    assert np.isfinite(evaluate_uv(p, m1).uv[0, 0]).all()

    m = flat_metric((12, 12))
    cfg2 = CoordinateNetConfig(seed=4, pretrain_epochs=6, train_epochs=4)
    uva, repa = solve_uv_network(m, cfg2)
    uvb, repb = solve_uv_network(m, cfg2)
    assert repa.loss_trace == repb.loss_trace  # bitwise-identical floats
    assert np.array_equal(uva.uv, uvb.uv, equal_nan=True)


def test_solve_propagates_checkerboard_mask():
    valid = np.indices((12, 12)).sum(axis=0) % 2 == 0
    m = flat_metric((12, 12), valid)
    cfg = CoordinateNetConfig(seed=1, pretrain_epochs=2, train_epochs=2)
    uv, report = solve_uv_network(m, cfg)
    assert np.array_equal(uv.valid, valid)
    assert np.isfinite(uv.uv[valid]).all()
    assert np.isnan(report.final_residual)  # no finite-difference stencil exists


def test_solve_rejects_empty_mask():
    m = flat_metric((6, 6), np.zeros((6, 6), bool))
    with pytest.raises(SolverError, match="no valid pixels"):
        solve_uv_network(m, CoordinateNetConfig(seed=1))


def test_small_solve_report_consistency(cylinder32):
    from pelt.uvfield import isometry_residual
    m = metric_of(cylinder32)
    cfg = CoordinateNetConfig(seed=6, pretrain_epochs=10, train_epochs=60)
    uv, report = solve_uv_network(m, cfg)
    assert np.array_equal(uv.valid, m.valid)
    assert report.final_residual == isometry_residual(uv, m)
    assert report.epochs == {"pretrain": 10, "train": 60}
    assert len(report.loss_trace) == 70
    train_trace = report.loss_trace[10:]
    assert np.mean(train_trace[-50:]) <= train_trace[0]
    mins = uv.uv[uv.valid].min(axis=0)
    assert np.allclose(mins, 0.0, atol=1e-9)

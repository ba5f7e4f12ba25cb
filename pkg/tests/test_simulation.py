import numpy as np
import pytest
from scipy.stats import kstest

from src.data.preprocessing import second_difference_energy
from src.data.simulation import (
    SimConfig,
    beta_cdf_warp,
    bspline_basis,
    correlated_uniform,
    electrode_layout,
    gen_setting1,
    gen_setting2,
    matern_cov,
    simulate,
    site_correlation,
)
from src.model.spatial import SpatialLayout
from src.model.warping import TimeGrid, is_valid_warp
from src.utils.errors import InvalidParameterError


def test_setting_defaults():
    one = SimConfig(setting=1)
    assert (one.n, one.K, one.sigma_a, one.B) == (20, 20, 1.0, 0.25)
    two = SimConfig.for_setting(2)
    assert (two.n, two.K, two.sigma_a, two.B) == (20, 16, 2.0, 0.0)
    assert not two.low_snr
    assert SimConfig(setting=2, sigma_e=1.0).low_snr


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(setting=3),
        dict(setting=2, K=17),
        dict(n=1),
        dict(sigma_e=0.0),
        dict(Z=-0.1),
        dict(nu=0.0),
        dict(m=2),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(InvalidParameterError):
        SimConfig(**kwargs)


def test_simulation_is_deterministic():
    cfg = SimConfig(setting=1, n=3, K=4, m=31, seed=7)
    a, b = simulate(cfg), simulate(cfg)
    assert np.array_equal(a.sample.values, b.sample.values)
    assert np.array_equal(a.sample.layout.sites, b.sample.layout.sites)
    c = simulate(SimConfig(setting=1, n=3, K=4, m=31, seed=8))
    assert not np.array_equal(a.sample.values, c.sample.values)


def test_shapes_and_warps():
    truth = simulate(SimConfig(setting=1, n=3, K=4, m=31, seed=1))
    assert truth.sample.values.shape == (3, 4, 31)
    assert truth.templates.shape == (4, 31)
    assert truth.alpha.shape == (3, 31) and truth.xi.shape == (3, 4, 31)
    grid = truth.sample.grid
    for i in range(3):
        assert is_valid_warp(truth.alpha[i], grid)
        for j in range(4):
            assert is_valid_warp(truth.gamma[i, j], grid)
    assert np.all(np.abs(truth.z) <= 0.5)
    assert np.all(np.abs(truth.b) <= 0.25)
    assert np.all(np.abs(truth.sample.layout.sites) <= 2.0)


def test_no_cross_component_phase():
    truth = simulate(SimConfig(setting=1, n=2, K=3, m=21, B=0.0, seed=4))
    assert np.all(truth.xi == truth.sample.grid.points)
    assert np.all(truth.b == 0.0)


def test_without_phase_the_data_is_template_plus_noise():
    truth = simulate(SimConfig(setting=1, n=2, K=3, m=21, Z=0.0, B=0.0, seed=4))
    assert np.array_equal(truth.sample.values, truth.templates[None] + truth.noise)


def test_setting2_uses_electrodes():
    truth = gen_setting2(SimConfig(setting=2, n=2, K=8, m=21, seed=3))
    layout = truth.sample.layout
    assert layout.K == 8 and layout.dim == 3
    assert truth.sample.labels[0] == "Fp1"
    assert np.all(truth.xi == truth.sample.grid.points)
    with pytest.raises(InvalidParameterError):
        gen_setting1(SimConfig(setting=2, n=2, K=8, m=21))


def test_electrode_montage():
    layout = electrode_layout()
    assert layout.K == 16
    assert np.allclose(np.linalg.norm(layout.sites, axis=1), 1.0, atol=1e-5)
    assert len(set(layout.labels)) == 16


def test_presmoothed_copy():
    cfg = SimConfig(setting=2, n=2, K=4, m=41, sigma_e=1.0, seed=5)
    truth = simulate(cfg, presmooth=1e-5)
    assert truth.smoothed is not None and truth.presmooth_strength == 1e-5
    assert second_difference_energy(truth.smoothed.values) < second_difference_energy(truth.sample.values)


def test_low_snr_without_smoothing_warns(caplog):
    truth = simulate(SimConfig(setting=2, n=2, K=4, m=21, sigma_e=1.0, seed=5))
    assert truth.smoothed is None
    assert "pre-smoothing" in caplog.text


def test_beta_cdf_warp():
    grid = TimeGrid.uniform(51)
    assert beta_cdf_warp(0.0, grid).is_identity()
    up = beta_cdf_warp(0.4, grid)
    down = beta_cdf_warp(-0.4, grid)
    assert np.all(up.values >= grid.points - 1e-15)
    assert np.all(down.values <= grid.points + 1e-15)
    with pytest.raises(InvalidParameterError):
        beta_cdf_warp(np.nan, grid)


def test_matern_covariance():
    d = np.linspace(0.0, 3.0, 13)
    assert np.allclose(matern_cov(d, 2.0, 0.5, 1.5), 2.0 * np.exp(-d / 1.5))
    # nu = 3/2 has the closed form (1 + sqrt(3) d / l) exp(-sqrt(3) d / l)
    u = np.sqrt(3.0) * d / 0.8
    assert np.allclose(matern_cov(d, 1.0, 1.5, 0.8), (1.0 + u) * np.exp(-u))
    assert matern_cov(0.0, 3.0, 2.5, 1.0) == pytest.approx(3.0)
    with pytest.raises(InvalidParameterError):
        matern_cov(d, 1.0, 0.5, 0.0)


def test_correlated_uniform_stays_in_bounds():
    rng = np.random.default_rng(2)
    layout = SpatialLayout(rng.uniform(-2, 2, size=(6, 2)))
    draws = np.stack([correlated_uniform(6, 0.3, layout, 1.0, rng) for _ in range(200)])
    assert np.all(np.abs(draws) <= 0.3)
    # marginally uniform on [-B, B]: variance B^2 / 3
    assert draws.var() == pytest.approx(0.03, rel=0.25)
    assert np.all(correlated_uniform(6, 0.0, layout, 1.0, rng) == 0.0)


def test_correlated_uniform_marginals_and_decay():
    layout = SpatialLayout(np.array([[0.0], [1.0], [3.0]]))
    chol = site_correlation(layout, 1.0)
    rng = np.random.default_rng(31)
    draws = np.stack([correlated_uniform(3, 0.5, layout, 1.0, rng, chol=chol) for _ in range(10000)])
    for j in range(3):
        assert kstest(draws[:, j], "uniform", args=(-0.5, 1.0)).pvalue > 0.01
    corr = np.corrcoef(draws.T)
    # sites 1 and 3 units away from site 0
    assert corr[0, 1] > corr[0, 2] + 0.1
    assert corr[0, 2] > -0.05


def test_bspline_basis_is_a_partition_of_unity():
    grid = TimeGrid.uniform(41)
    basis = bspline_basis(grid)
    assert basis.shape == (10, 41)
    assert np.allclose(basis.sum(axis=0), 1.0)
    assert np.all(basis >= -1e-12)

"""
Seeded generators of spatially indexed multivariate functional data.

    f_ij(t) = (mu_j + e_ij) o (xi_ij o alpha_i)(t)

alpha_i and xi_ij are Beta(1, exp(.)) CDFs; the xi's of one observation are
driven by a correlated uniform field over the sites, the templates mu_j and the
pointwise noise e_ij by Matern correlated Gaussian fields.
"""
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline
from scipy.linalg import LinAlgError, cholesky
from scipy.special import gamma as gamma_fn, kv
from scipy.stats import norm

from settings import grid_size, range_factor as default_range_factor, seed as default_seed
from src.data.preprocessing import presmooth_values
from src.model.registration import MvSample
from src.model.spatial import SpatialLayout
from src.model.warping import TimeGrid, Warp, compose_warps
from src.utils.errors import InvalidInputError, InvalidParameterError

logger = logging.getLogger(__name__)

ELECTRODES_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "electrodes.csv")
CHOLESKY_JITTER = 1e-10
N_SPLINES = 10
SPLINE_ORDER = 4

# per-setting defaults: n, K, sigma_a, B
SETTING_DEFAULTS = {
    1: dict(n=20, K=20, sigma_a=1.0, B=0.25),
    2: dict(n=20, K=16, sigma_a=2.0, B=0.0),
}


@dataclass(frozen=True)
class SimConfig:
    """
    Params:
        setting: 1 (bimodal templates, planar sites) or 2 (B-spline templates, electrodes)
        n / K: observations and components (None -> setting default)
        Z: scale of the cross-observation phase, z_i ~ Unif[-Z, Z]
        B: scale of the cross-component phase, b_ij correlated uniform on [-B, B]
        sigma_a: template field scale (None -> setting default)
        sigma_e: noise scale
        nu: Matern smoothness of all fields
        range_factor: Matern range l = range_factor * d_max
        m: grid size
        seed: master seed, every random draw derives from it
    """

    setting: int = 1
    n: Optional[int] = None
    K: Optional[int] = None
    Z: float = 0.5
    B: Optional[float] = None
    sigma_a: Optional[float] = None
    sigma_e: float = 0.5
    nu: float = 0.5
    range_factor: float = default_range_factor
    m: int = grid_size
    seed: int = default_seed

    def __post_init__(self):
        if self.setting not in SETTING_DEFAULTS:
            raise InvalidParameterError("setting must be 1 or 2")
        for key, value in SETTING_DEFAULTS[self.setting].items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        if self.n < 2 or self.K < 2:
            raise InvalidParameterError("need n >= 2 and K >= 2")
        if self.setting == 2 and self.K > 16:
            raise InvalidParameterError("setting 2 has 16 electrode sites")
        if self.Z < 0 or self.B < 0:
            raise InvalidParameterError("phase scales Z and B must be >= 0")
        if self.sigma_a <= 0 or self.sigma_e <= 0:
            raise InvalidParameterError("sigma_a and sigma_e must be positive")
        if self.nu <= 0 or self.range_factor <= 0:
            raise InvalidParameterError("nu and range_factor must be positive")
        if self.m < 3:
            raise InvalidParameterError("grid size must be >= 3")

    @classmethod
    def for_setting(cls, setting, **overrides):
        return cls(setting=setting, **overrides)

    @property
    def low_snr(self):
        return self.setting == 2 and self.sigma_e >= 1.0


@dataclass(frozen=True, eq=False)
class SimTruth:
    """
    A simulated panel with everything that generated it
    Params:
        config: SimConfig
        sample: MvSample of the observed functions
        templates: (K, m) true templates mu_j
        noise: (n, K, m) noise e_ij before warping
        alpha: (n, m) cross-observation warps
        xi: (n, K, m) cross-component warps
        gamma: (n, K, m) composed warps xi_ij o alpha_i
        z / b: the latent Beta parameters
        smoothed: presmoothed copy of sample when requested
    """

    config: SimConfig
    sample: MvSample
    templates: np.ndarray
    noise: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray
    gamma: np.ndarray
    z: np.ndarray
    b: np.ndarray
    smoothed: Optional[MvSample] = None
    presmooth_strength: Optional[float] = None

    @property
    def low_snr(self):
        return self.config.low_snr


def matern_cov(d, sigma2=1.0, nu=0.5, length=1.0):
    """
    Matern covariance sigma2 2^(1-nu)/Gamma(nu) u^nu K_nu(u), u = sqrt(2 nu) d / length;
    nu = 0.5 is evaluated in its closed form sigma2 exp(-d / length)
    """
    if length <= 0:
        raise InvalidParameterError("Matern range must be positive")
    if nu <= 0:
        raise InvalidParameterError("Matern smoothness must be positive")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise InvalidInputError("distances must be nonnegative")
    if nu == 0.5:
        return sigma2 * np.exp(-d / length)
    u = np.sqrt(2.0 * nu) * d / length
    with np.errstate(invalid="ignore"):
        cov = sigma2 * 2.0 ** (1.0 - nu) / gamma_fn(nu) * u ** nu * kv(nu, u)
    return np.where(u == 0, sigma2, cov)


def _cholesky(cov):
    try:
        return cholesky(cov, lower=True)
    except LinAlgError:
        logger.debug("covariance not numerically positive definite, adding jitter")
    try:
        return cholesky(cov + CHOLESKY_JITTER * np.eye(cov.shape[0]), lower=True)
    except LinAlgError as err:
        raise InvalidInputError("covariance matrix is not positive semi-definite") from err


def site_correlation(layout, length, nu=0.5):
    """Lower Cholesky factor of the unit-scale Matern correlation between sites"""
    return _cholesky(matern_cov(layout.distances, 1.0, nu, length))


def beta_cdf_warp(b, grid):
    """CDF of Beta(1, exp(b)) on the grid: gamma(t) = 1 - (1 - t)^exp(b)"""
    if not np.isfinite(b):
        raise InvalidParameterError("Beta parameter must be finite")
    if b == 0:
        return Warp.identity(grid)
    values = 1.0 - (1.0 - grid.points) ** np.exp(b)
    return Warp.from_values(grid, values, repair=False)


def correlated_uniform(K, bound, layout, length, rng, nu=0.5, chol=None):
    """
    Correlated uniform vector on [-bound, bound]^K: Matern correlated normal
    draw pushed through the standard normal CDF
    Params:
        K: number of sites
        bound: B >= 0
        layout: SpatialLayout of K sites
        length: Matern range
        rng: numpy Generator (or an int seed)
        chol: precomputed site_correlation factor
    Returns:
        vector of K values
    """
    if bound < 0:
        raise InvalidParameterError("bound must be >= 0")
    if layout.K != K:
        raise InvalidInputError("layout has {} sites, asked for {}".format(layout.K, K))
    rng = np.random.default_rng(rng)
    chol = site_correlation(layout, length, nu) if chol is None else chol
    draw = chol @ rng.standard_normal(K)
    if bound == 0:
        return np.zeros(K)
    return bound * (2.0 * norm.cdf(draw) - 1.0)


def bspline_basis(grid, n_basis=N_SPLINES, order=SPLINE_ORDER):
    """(n_basis, m) B-spline basis of the given order on clamped uniform knots over [0, 1]"""
    degree = order - 1
    inner = np.linspace(0.0, 1.0, n_basis - degree + 1)
    knots = np.concatenate([np.zeros(degree), inner, np.ones(degree)])
    return BSpline(knots, np.eye(n_basis), degree)(grid.points).T


def electrode_layout(K=16):
    """First K sites of the bundled 10-20 montage"""
    table = pd.read_csv(ELECTRODES_FILE, comment="#")
    table = table.iloc[:K]
    return SpatialLayout(table[["x", "y", "z"]].to_numpy(), tuple(table["label"]))


def _streams(seed, count):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _generate(cfg, layout, templates, rng_phase, rng_noise):
    grid = TimeGrid.uniform(cfg.m)
    n, K, m = cfg.n, cfg.K, cfg.m
    length = cfg.range_factor * layout.d_max
    chol = site_correlation(layout, length, cfg.nu)

    z = rng_phase.uniform(-cfg.Z, cfg.Z, size=n) if cfg.Z > 0 else np.zeros(n)
    b = np.stack([correlated_uniform(K, cfg.B, layout, length, rng_phase, cfg.nu, chol) for _ in range(n)])

    # pointwise noise: independent over i and t, Matern correlated over sites
    noise = cfg.sigma_e * np.einsum("kl,nlm->nkm", chol, rng_noise.standard_normal((n, K, m)))

    alpha = np.empty((n, m))
    xi = np.empty((n, K, m))
    gamma = np.empty((n, K, m))
    values = np.empty((n, K, m))
    for i in range(n):
        alpha_i = beta_cdf_warp(z[i], grid)
        alpha[i] = alpha_i.values
        for j in range(K):
            xi_ij = beta_cdf_warp(b[i, j], grid)
            gamma_ij = compose_warps(xi_ij, alpha_i)
            xi[i, j] = xi_ij.values
            gamma[i, j] = gamma_ij.values
            values[i, j] = np.interp(gamma_ij.values, grid.points, templates[j] + noise[i, j])

    sample = MvSample(grid, values, layout, layout.labels)
    return SimTruth(cfg, sample, templates, noise, alpha, xi, gamma, z, b)


def gen_setting1(cfg):
    """
    Bimodal templates a_1j exp(-100 (t - 1/3)^2) + a_2j exp(-100 (t - 2/3)^2) on
    sites uniform in [-2, 2]^2, amplitudes Matern correlated around 3
    """
    if cfg.setting != 1:
        raise InvalidParameterError("gen_setting1 needs setting=1")
    rng_sites, rng_amp, rng_phase, rng_noise = _streams(cfg.seed, 4)
    layout = SpatialLayout(rng_sites.uniform(-2.0, 2.0, size=(cfg.K, 2)))
    grid = TimeGrid.uniform(cfg.m)
    length = cfg.range_factor * layout.d_max
    chol = site_correlation(layout, length, cfg.nu)
    amplitudes = 3.0 + cfg.sigma_a * (chol @ rng_amp.standard_normal((cfg.K, 2)))
    t = grid.points
    templates = (
        amplitudes[:, :1] * np.exp(-100.0 * (t - 1.0 / 3.0) ** 2)
        + amplitudes[:, 1:] * np.exp(-100.0 * (t - 2.0 / 3.0) ** 2)
    )
    return _generate(cfg, layout, templates, rng_phase, rng_noise)


def gen_setting2(cfg):
    """Cubic B-spline templates with Matern correlated coefficients at electrode sites"""
    if cfg.setting != 2:
        raise InvalidParameterError("gen_setting2 needs setting=2")
    _, rng_amp, rng_phase, rng_noise = _streams(cfg.seed, 4)
    layout = electrode_layout(cfg.K)
    grid = TimeGrid.uniform(cfg.m)
    length = cfg.range_factor * layout.d_max
    chol = site_correlation(layout, length, cfg.nu)
    coefs = cfg.sigma_a * (chol @ rng_amp.standard_normal((cfg.K, N_SPLINES)))
    templates = coefs @ bspline_basis(grid)
    return _generate(cfg, layout, templates, rng_phase, rng_noise)


def simulate(cfg, presmooth=None):
    """
    Runs the generator of cfg.setting
    Params:
        cfg: SimConfig
        presmooth: strength of the smoothed copy (None -> none; low-SNR runs
            warn when left unsmoothed)
    Returns:
        SimTruth
    """
    truth = gen_setting1(cfg) if cfg.setting == 1 else gen_setting2(cfg)
    if presmooth is None:
        if cfg.low_snr:
            logger.warning("low signal-to-noise run without pre-smoothing")
        return truth
    smoothed = MvSample(
        truth.sample.grid,
        presmooth_values(truth.sample.values, truth.sample.grid, presmooth),
        truth.sample.layout,
        truth.sample.labels,
    )
    return SimTruth(
        truth.config, truth.sample, truth.templates, truth.noise, truth.alpha, truth.xi,
        truth.gamma, truth.z, truth.b, smoothed, float(presmooth),
    )

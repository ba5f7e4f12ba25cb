"""
Grid-sampled functions and warping functions on [0, 1].

Everything in a panel lives on one shared uniform TimeGrid. Functions are
piecewise linear between grid points. Function derivatives use central
differences (second order one-sided stencils at the endpoints), warp roots
sqrt(gamma') use the cellwise slopes of the piecewise linear warp, and
integrals use the composite trapezoid rule.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid, cumulative_trapezoid
from sklearn.isotonic import IsotonicRegression

from src.utils.errors import InvalidInputError, InvalidWarpError

logger = logging.getLogger(__name__)

PSI_NORM_TOL = 1e-6
PSI_DRIFT_WARN = 5e-2


def _frozen_array(values, dtype=float):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing sample points of [0, 1] with exact endpoints"""

    points: np.ndarray

    def __post_init__(self):
        points = _frozen_array(self.points)
        if points.ndim != 1 or points.size < 3:
            raise InvalidInputError("a time grid needs at least 3 points")
        if not np.all(np.isfinite(points)):
            raise InvalidInputError("time grid contains non-finite points")
        if points[0] != 0.0 or points[-1] != 1.0:
            raise InvalidInputError("time grid must start at 0 and end at 1")
        if np.any(np.diff(points) <= 0):
            raise InvalidInputError("time grid must be strictly increasing")
        object.__setattr__(self, "points", points)

    @classmethod
    def uniform(cls, m):
        if int(m) < 3:
            raise InvalidInputError("grid size m must be >= 3, got {}".format(m))
        points = np.linspace(0.0, 1.0, int(m))
        points[0], points[-1] = 0.0, 1.0
        return cls(points)

    @property
    def m(self):
        return self.points.size

    @property
    def spacing(self):
        return 1.0 / (self.m - 1)

    @property
    def is_uniform(self):
        steps = np.diff(self.points)
        return bool(np.allclose(steps, self.spacing, rtol=1e-9, atol=1e-12))

    def same_as(self, other):
        return self is other or np.array_equal(self.points, other.points)


def check_same_grid(*objs):
    """Raises InvalidInputError unless all objects share one grid"""
    first = objs[0].grid
    for obj in objs[1:]:
        if not first.same_as(obj.grid):
            raise InvalidInputError("objects live on different time grids")
    return first


@dataclass(frozen=True, eq=False)
class SampledFunction:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.shape[0] != self.grid.m:
            raise InvalidInputError(
                "function has {} samples but the grid has {}".format(values.shape[0], self.grid.m)
            )
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("function values must be finite")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class Srsf:
    """
    Square-root slope function q = f' / sqrt(|f'|). values is (m,) for a
    univariate function or (m, K) for a curve in R^K; anchor is f(0).
    """

    grid: TimeGrid
    values: np.ndarray
    anchor: object = 0.0

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.shape[0] != self.grid.m:
            raise InvalidInputError("SRSF length does not match its grid")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("SRSF values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "anchor", _frozen_array(self.anchor) if np.ndim(self.anchor) else float(self.anchor))

    @property
    def dim(self):
        return 1 if self.values.ndim == 1 else self.values.shape[1]


@dataclass(frozen=True, eq=False)
class Warp:
    """
    Warping function gamma: gamma(0) = 0, gamma(1) = 1, non-decreasing on the grid.
    Steep warps can saturate to equal neighbouring samples at float resolution,
    so ties are accepted; strict decreases are not. repaired flags warps that went
    through the monotone projection.
    """

    grid: TimeGrid
    values: np.ndarray
    repaired: bool = False

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.shape != (self.grid.m,):
            raise InvalidWarpError("warp must be a vector matching its grid")
        if not np.all(np.isfinite(values)):
            raise InvalidWarpError("warp values must be finite")
        if values[0] != 0.0 or values[-1] != 1.0:
            raise InvalidWarpError("warp must satisfy gamma(0)=0 and gamma(1)=1")
        if np.any(np.diff(values) < 0):
            raise InvalidWarpError("warp must be monotone increasing")
        object.__setattr__(self, "values", values)

    @classmethod
    def identity(cls, grid):
        return cls(grid, grid.points)

    @classmethod
    def from_values(cls, grid, values, repair=True):
        """
        Builds a warp from numerically computed values: endpoints are snapped,
        range clipped to [0, 1] and, if needed and allowed, monotonicity restored
        by pool-adjacent-violators followed by endpoint renormalisation.
        """
        values = np.clip(np.array(values, dtype=float), 0.0, 1.0)
        values[0], values[-1] = 0.0, 1.0
        repaired = False
        if np.any(np.diff(values) < 0):
            if not repair:
                raise InvalidWarpError("warp must be monotone increasing")
            values = _isotonic_repair(grid, values)
            repaired = True
        return cls(grid, values, repaired=repaired)

    def is_identity(self):
        return np.array_equal(self.values, self.grid.points)


@dataclass(frozen=True, eq=False)
class WarpSrsf:
    """psi = sqrt(gamma'), a point on the positive orthant of the unit L2 sphere"""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.shape != (self.grid.m,):
            raise InvalidInputError("psi must be a vector matching its grid")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InvalidInputError("psi must be finite and nonnegative")
        norm = l2_norm(values, self.grid)
        if abs(norm - 1.0) > PSI_NORM_TOL:
            raise InvalidInputError("psi must have unit L2 norm, got {:.3g}".format(norm))
        object.__setattr__(self, "values", values)

    @classmethod
    def one(cls, grid):
        """SRSF of the identity warp"""
        return cls(grid, np.ones(grid.m))


def _isotonic_repair(grid, values):
    fitted = IsotonicRegression(increasing=True).fit_transform(grid.points, values)
    span = fitted[-1] - fitted[0]
    if span <= 0:
        raise InvalidWarpError("warp collapsed to a constant during repair")
    fitted = (fitted - fitted[0]) / span
    fitted[0], fitted[-1] = 0.0, 1.0
    logger.warning("warp lost monotonicity numerically; repaired by isotonic projection")
    return fitted


def _as_columns(values):
    values = np.asarray(values, dtype=float)
    return values[:, None] if values.ndim == 1 else values


def interp_columns(x, points, values):
    """Linear interpolation of each column of values (m,) or (m, d) at x"""
    if np.ndim(values) == 1:
        return np.interp(x, points, values)
    return np.stack([np.interp(x, points, values[:, d]) for d in range(values.shape[1])], axis=1)


def l2_norm(values, grid):
    """Trapezoidal L2 norm; for (m, d) values the pointwise Euclidean norm is integrated"""
    sq = _as_columns(values) ** 2
    return float(np.sqrt(max(trapezoid(sq.sum(axis=1), grid.points), 0.0)))


def l2_distance(a, b):
    """L2 distance between two objects with .grid and .values on one grid"""
    grid = check_same_grid(a, b)
    return l2_norm(np.asarray(a.values) - np.asarray(b.values), grid)


def derivative(values, grid):
    """Central differences in the interior, second order one-sided at the endpoints"""
    return np.gradient(np.asarray(values, dtype=float), grid.points, axis=0, edge_order=2)


def srsf_values(values, grid):
    """
    SRSF of (m,) or (m, K) samples: q = f' / sqrt(|f'|) with |.| the Euclidean
    norm across components. Univariate input runs through the same arithmetic
    as a one-column curve.
    """
    df = derivative(values, grid)
    if not np.all(np.isfinite(df)):
        raise InvalidInputError("derivative is not finite")
    cols = _as_columns(df)
    speed = np.sqrt(np.sum(cols * cols, axis=1))
    scale = np.zeros_like(speed)
    moving = speed > 0
    scale[moving] = 1.0 / np.sqrt(speed[moving])
    q = cols * scale[:, None]
    return q[:, 0] if np.ndim(values) == 1 else q


def srsf_transform(f):
    """
    SRSF of a sampled function
    Params:
        f: SampledFunction
    Returns:
        Srsf with anchor f(0)
    """
    q = srsf_values(f.values, f.grid)
    anchor = f.values[0] if f.values.ndim == 1 else f.values[0].copy()
    return Srsf(f.grid, q, anchor)


def srsf_inverse(q):
    """
    Inverse SRSF: f(t) = f(0) + int_0^t q |q| du, cumulative trapezoid
    Params:
        q: Srsf carrying its anchor
    Returns:
        SampledFunction
    """
    cols = _as_columns(q.values)
    speed = np.sqrt(np.sum(cols * cols, axis=1))
    integrand = cols * speed[:, None]
    f = np.asarray(q.anchor) + cumulative_trapezoid(integrand, q.grid.points, axis=0, initial=0.0)
    return SampledFunction(q.grid, f[:, 0] if q.values.ndim == 1 else f)


def cellwise_root_slope(warp):
    """
    sqrt(gamma') at the grid nodes for a warp read as piecewise linear: each
    interior node averages the square roots of its two cell slopes, endpoints
    take their single cell. This is the discretisation the DP objective uses.
    """
    slopes = np.clip(np.diff(warp.values) / np.diff(warp.grid.points), 0.0, None)
    roots = np.sqrt(slopes)
    node = np.empty(warp.grid.m)
    node[0] = roots[0]
    node[-1] = roots[-1]
    node[1:-1] = 0.5 * (roots[:-1] + roots[1:])
    return node


def warp_action(q, warp, scheme="central"):
    """
    Group action (q o gamma) * sqrt(gamma')
    Params:
        q: Srsf (univariate or R^K valued)
        warp: Warp on the same grid
        scheme: "central" differentiates gamma with central differences,
            "cellwise" uses the piecewise linear slopes (matches the DP objective)
    Returns:
        Srsf
    """
    check_same_grid(q, warp)
    composed = interp_columns(warp.values, q.grid.points, q.values)
    if scheme == "central":
        root = np.sqrt(np.clip(derivative(warp.values, warp.grid), 0.0, None))
    elif scheme == "cellwise":
        root = cellwise_root_slope(warp)
    else:
        raise InvalidInputError("unknown warp action scheme {!r}".format(scheme))
    values = composed * (root if composed.ndim == 1 else root[:, None])
    return Srsf(q.grid, values, q.anchor)


def compose_function(f, warp):
    """f o gamma for a SampledFunction, by linear interpolation"""
    check_same_grid(f, warp)
    return SampledFunction(f.grid, interp_columns(warp.values, f.grid.points, f.values))


def compose_warps(gamma1, gamma2):
    """
    gamma1 o gamma2 by monotone linear interpolation; the identity is neutral exactly
    Returns:
        Warp, flagged repaired if the projection was needed
    """
    grid = check_same_grid(gamma1, gamma2)
    if gamma1.is_identity():
        return gamma2
    if gamma2.is_identity():
        return gamma1
    values = np.interp(gamma2.values, grid.points, gamma1.values)
    return Warp.from_values(grid, values)


def invert_warp(gamma):
    """gamma^{-1} by swapping the roles of abscissa and ordinate in the interpolation"""
    if gamma.is_identity():
        return gamma
    grid = gamma.grid
    values = np.interp(grid.points, gamma.values, grid.points)
    return Warp.from_values(grid, values)


def warp_to_psi(gamma):
    """
    psi = sqrt(gamma'), renormalised to unit L2 norm

    The warp is read as piecewise linear, so psi takes the cellwise root
    slopes of the DP objective. Jagged lattice paths drift by a few percent
    before renormalisation; only larger drifts are reported.
    Params:
        gamma: Warp
    Returns:
        WarpSrsf
    """
    psi = cellwise_root_slope(gamma)
    norm = l2_norm(psi, gamma.grid)
    if norm <= 0:
        raise InvalidWarpError("warp has zero derivative everywhere")
    drift = abs(norm - 1.0)
    if drift > PSI_DRIFT_WARN:
        logger.warning("psi norm drifted to %.6f before renormalisation", norm)
    elif drift > PSI_NORM_TOL:
        logger.debug("psi norm %.6f renormalised", norm)
    return WarpSrsf(gamma.grid, psi / norm)


def psi_to_warp(psi):
    """
    gamma(t) = int_0^t psi^2, rescaled so gamma(1) = 1 exactly
    Params:
        psi: WarpSrsf
    Returns:
        Warp
    """
    gamma = cumulative_trapezoid(psi.values ** 2, psi.grid.points, initial=0.0)
    if gamma[-1] <= 0:
        raise InvalidWarpError("psi integrates to zero")
    return Warp.from_values(psi.grid, gamma / gamma[-1])


def extrinsic_phase_distance(gamma1, gamma2):
    """d(gamma1, gamma2) = ||psi1 - psi2||, the extrinsic distance on the sphere of psis"""
    return l2_distance(warp_to_psi(gamma1), warp_to_psi(gamma2))


def is_valid_warp(values, grid):
    """True when values would be accepted as a Warp on grid"""
    values = np.asarray(values, dtype=float)
    return bool(
        values.shape == (grid.m,)
        and np.all(np.isfinite(values))
        and values[0] == 0.0
        and values[-1] == 1.0
        and np.all(np.diff(values) >= 0)
        and values.min() >= 0.0
        and values.max() <= 1.0
    )

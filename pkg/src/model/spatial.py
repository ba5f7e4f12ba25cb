"""
Phase trace-variograms over spatial sites and simplex-constrained kriging of
warp SRSFs.

The empirical trace-variogram bins half squared L2 distances between the
functions attached to pairs of sites. An exponential model is fitted to the
bins by weighted least squares and the kriging coefficients of every site are
the minimiser of the kriging variance on the probability simplex.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import least_squares
from scipy.spatial.distance import pdist, squareform

from settings import variogram_cutoff, kriging_tol, kriging_max_iter
from src.model.warping import WarpSrsf, check_same_grid, l2_norm
from src.utils.errors import InvalidInputError, InvalidParameterError

logger = logging.getLogger(__name__)

FLAT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SpatialLayout:
    """K sites in R^p with their Euclidean distance matrix"""

    sites: np.ndarray
    labels: Optional[Tuple[str, ...]] = None
    distances: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sites = np.array(self.sites, dtype=float)
        if sites.ndim == 1:
            sites = sites[:, None]
        if sites.ndim != 2 or sites.shape[0] < 1:
            raise InvalidInputError("sites must be a (K, p) array")
        if not np.all(np.isfinite(sites)):
            raise InvalidInputError("site coordinates must be finite")
        if self.labels is not None and len(self.labels) != sites.shape[0]:
            raise InvalidInputError("one label per site expected")
        sites.setflags(write=False)
        distances = squareform(pdist(sites)) if sites.shape[0] > 1 else np.zeros((1, 1))
        distances.setflags(write=False)
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "distances", distances)
        if self.K > 1 and self.d_max <= 0:
            raise InvalidInputError("all sites coincide")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    @property
    def K(self):
        return self.sites.shape[0]

    @property
    def dim(self):
        return self.sites.shape[1]

    @property
    def d_max(self):
        return float(self.distances.max())

    def scaled(self, factor):
        return SpatialLayout(self.sites * factor, self.labels)

    def subset(self, idx):
        idx = list(idx)
        labels = None if self.labels is None else tuple(self.labels[j] for j in idx)
        return SpatialLayout(self.sites[idx], labels)


@dataclass(frozen=True, eq=False)
class VariogramBins:
    """Distance bins (edges[b], edges[b+1]]; centers and half-width derived"""

    edges: np.ndarray

    def __post_init__(self):
        edges = np.array(self.edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or edges[0] < 0 or np.any(np.diff(edges) <= 0):
            raise InvalidParameterError("bin edges must be increasing and nonnegative")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def default(cls, layout, cutoff=variogram_cutoff):
        """
        ceil(sqrt(K(K-1)/2)) equal bins up to cutoff * d_max; with K <= 3 the
        cutoff would drop most pairs, so the bins then reach d_max.
        """
        if layout.K < 2:
            raise InvalidInputError("a variogram needs at least two sites")
        n_pairs = layout.K * (layout.K - 1) // 2
        n_bins = int(np.ceil(np.sqrt(n_pairs)))
        reach = layout.d_max if layout.K <= 3 else cutoff * layout.d_max
        edges = np.linspace(0.0, reach, n_bins + 1)
        edges[-1] = reach
        return cls(edges)

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def half_width(self):
        return 0.5 * float(np.diff(self.edges).max())

    def assign(self, distances):
        """Bin index of each distance, -1 outside (0, edges[-1]]"""
        idx = np.searchsorted(self.edges, distances, side="left") - 1
        idx[(distances <= self.edges[0]) | (distances > self.edges[-1])] = -1
        return idx


@dataclass(frozen=True, eq=False)
class EmpiricalVariogram:
    """Populated bins only: centers, pair counts and half mean squared distances"""

    centers: np.ndarray
    half_width: float
    counts: np.ndarray
    estimates: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.estimates) < 0):
            raise InvalidInputError("variogram estimates must be nonnegative")
        if np.any(np.asarray(self.counts) < 1):
            raise InvalidInputError("reported bins must hold at least one pair")

    @property
    def n_bins(self):
        return len(self.centers)


@dataclass(frozen=True)
class VariogramModel:
    """V(h) = nugget + sill (1 - exp(-h / range)); degenerate marks a field without spatial structure"""

    nugget: float
    sill: float
    range: float
    family: str = "exponential"
    degenerate: bool = False

    def __post_init__(self):
        if self.family != "exponential":
            raise InvalidParameterError("only the exponential variogram family is available")
        if not (self.nugget >= 0 and self.range > 0):
            raise InvalidParameterError("variogram needs nugget >= 0 and range > 0")
        if self.sill < 0 or (self.sill == 0 and not self.degenerate):
            raise InvalidParameterError("variogram sill must be positive")

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        return self.nugget + self.sill * (1.0 - np.exp(-h / self.range))


def pairwise_sq_distances(values, grid):
    """(K, K) matrix of trapezoidal squared L2 distances between rows of values (K, m)"""
    values = np.asarray(values, dtype=float)
    diffs = values[:, None, :] - values[None, :, :]
    return trapezoid(diffs ** 2, grid.points, axis=-1)


def binned_variogram(sq_distances, layout, bins=None):
    """
    Half mean of the squared distances of all site pairs falling in each bin
    Params:
        sq_distances: (K, K) squared L2 distances between the sites' functions
        layout: SpatialLayout
        bins: VariogramBins (None -> VariogramBins.default)
    Returns:
        EmpiricalVariogram with empty bins omitted
    """
    bins = bins or VariogramBins.default(layout)
    a, b = np.triu_indices(layout.K, k=1)
    idx = bins.assign(layout.distances[a, b])
    pair_values = 0.5 * np.asarray(sq_distances)[a, b]
    n_bins = len(bins.centers)
    keep = idx >= 0
    counts = np.bincount(idx[keep], minlength=n_bins)
    sums = np.bincount(idx[keep], weights=pair_values[keep], minlength=n_bins)
    populated = counts > 0
    return EmpiricalVariogram(
        centers=bins.centers[populated],
        half_width=bins.half_width,
        counts=counts[populated],
        estimates=np.clip(sums[populated] / counts[populated], 0.0, None),
    )


def empirical_phase_variogram(psis, layout, bins=None):
    """
    Phase trace-variogram of one observation
    Params:
        psis: K WarpSrsf, one per site
        layout: SpatialLayout with K sites
        bins: VariogramBins (None -> default binning)
    Returns:
        EmpiricalVariogram
    """
    if len(psis) != layout.K:
        raise InvalidInputError("{} psis for {} sites".format(len(psis), layout.K))
    grid = check_same_grid(*psis)
    values = np.stack([p.values for p in psis])
    return binned_variogram(pairwise_sq_distances(values, grid), layout, bins)


def _weighted_sse(model, emp):
    return float(np.sum(emp.counts * (model(emp.centers) - emp.estimates) ** 2))


def _degenerate_model(emp):
    level = float(np.mean(emp.estimates)) if emp.n_bins else 0.0
    reach = float(emp.centers.max()) if emp.n_bins else 1.0
    return VariogramModel(nugget=level, sill=0.0, range=max(reach, 1e-12), degenerate=True)


def fit_variogram(emp):
    """
    Weighted least squares fit of the exponential model, weights = pair counts
    Params:
        emp: EmpiricalVariogram with at least 3 bins
    Returns:
        VariogramModel (degenerate when the empirical variogram is flat)
    """
    if emp.n_bins and np.ptp(emp.estimates) <= FLAT_TOL:
        logger.debug("flat phase variogram, falling back to a nugget-only model")
        return _degenerate_model(emp)
    if emp.n_bins < 3:
        raise InvalidInputError("fitting a variogram needs at least 3 populated bins")

    h = emp.centers
    v = emp.estimates
    w = np.sqrt(emp.counts)
    lag = float(h.max())
    low_range = 1e-6 * lag
    lower = [0.0, 1e-12, low_range]
    upper = [np.inf, np.inf, 100.0 * lag]

    def residuals(x):
        return w * (x[0] + x[1] * (1.0 - np.exp(-h / x[2])) - v)

    spread = max(float(v.max() - v.min()), 1e-12)
    best = None
    for start_range in (0.25 * lag, 0.1 * lag, 0.5 * lag, lag):
        x0 = [float(v.min()), spread, start_range]
        sol = least_squares(
            residuals, x0, bounds=(lower, upper), x_scale="jac", ftol=1e-14, xtol=1e-14, gtol=1e-14,
            max_nfev=2000,
        )
        if best is None or sol.cost < best.cost:
            best = sol
    model = VariogramModel(nugget=float(best.x[0]), sill=float(best.x[1]), range=float(best.x[2]))

    # the best constant is the limit of a vanishing range; keep it if the fit is worse
    level = float(np.sum(emp.counts * v) / np.sum(emp.counts))
    constant = VariogramModel(nugget=0.0, sill=max(level, 1e-12), range=low_range)
    if _weighted_sse(constant, emp) < _weighted_sse(model, emp):
        model = constant
    return model


def fit_or_degenerate(emp):
    """fit_variogram, with too few populated bins treated as a field without structure"""
    if emp.n_bins < 3 and (emp.n_bins == 0 or np.ptp(emp.estimates) > FLAT_TOL):
        logger.warning(
            "only %d populated variogram bins; using uniform kriging weights", emp.n_bins
        )
        return _degenerate_model(emp)
    return fit_variogram(emp)


def project_simplex(v):
    """Euclidean projection onto {x : x >= 0, sum x = 1} (sort based)"""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    theta = css[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


def kriging_objective(weights, model, layout, target):
    """2 sum_l z_l V(d_jl) - sum_a sum_b z_a z_b V(d_ab) over the neighbours of target"""
    neighbors = [l for l in range(layout.K) if l != target]
    v, gamma = _kriging_system(model, layout, target, neighbors)
    weights = np.asarray(weights, dtype=float)
    return float(2.0 * weights @ v - weights @ gamma @ weights)


def _kriging_system(model, layout, target, neighbors):
    d = layout.distances
    v = model(d[target, neighbors])
    v[d[target, neighbors] == 0] = 0.0
    gamma = model(d[np.ix_(neighbors, neighbors)])
    gamma[d[np.ix_(neighbors, neighbors)] == 0] = 0.0
    return v, gamma


@dataclass(frozen=True, eq=False)
class KrigingRow:
    target: int
    neighbors: Tuple[int, ...]
    weights: np.ndarray
    iterations: int = 0
    converged: bool = True


@dataclass(frozen=True, eq=False)
class KrigingWeights:
    """Row j holds the coefficients predicting site j from all l != j; diagonal is zero"""

    matrix: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise InvalidInputError("kriging weights must be a square matrix")
        if np.any(matrix < 0) or np.any(np.abs(matrix.sum(axis=1) - 1.0) > 1e-8):
            raise InvalidInputError("kriging weight rows must lie on the simplex")
        if np.any(np.diag(matrix) != 0):
            raise InvalidInputError("a site cannot predict itself")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def K(self):
        return self.matrix.shape[0]

    def row(self, j):
        neighbors = tuple(l for l in range(self.K) if l != j)
        return KrigingRow(j, neighbors, self.matrix[j, list(neighbors)])


def solve_kriging_weights(model, layout, target, tol=kriging_tol, max_iter=kriging_max_iter):
    """
    Kriging coefficients of one site by projected gradient descent on the simplex
    Params:
        model: VariogramModel
        layout: SpatialLayout
        target: index j of the predicted site
        tol: stop once no coefficient moves by more than tol
        max_iter: iteration cap
    Returns:
        KrigingRow over the neighbours l != j
    """
    if layout.K < 2:
        raise InvalidInputError("kriging needs at least two sites")
    if not 0 <= target < layout.K:
        raise InvalidInputError("target site {} out of range".format(target))
    neighbors = tuple(l for l in range(layout.K) if l != target)
    n = len(neighbors)
    zeta = np.full(n, 1.0 / n)
    if n == 1 or model.degenerate:
        return KrigingRow(target, neighbors, zeta)

    v, gamma = _kriging_system(model, layout, target, neighbors)
    lipschitz = 2.0 * np.linalg.norm(gamma, 2)
    if lipschitz <= 0:
        return KrigingRow(target, neighbors, zeta)
    step = 1.0 / lipschitz
    for it in range(1, max_iter + 1):
        grad = 2.0 * v - 2.0 * gamma @ zeta
        new = project_simplex(zeta - step * grad)
        moved = np.max(np.abs(new - zeta))
        zeta = new
        if moved < tol:
            return KrigingRow(target, neighbors, zeta, it, True)
    logger.warning("kriging weights for site %d did not settle in %d iterations", target, max_iter)
    return KrigingRow(target, neighbors, zeta, max_iter, False)


def kriging_weights(model, layout):
    """All K rows of kriging coefficients for one fitted model"""
    matrix = np.zeros((layout.K, layout.K))
    for j in range(layout.K):
        row = solve_kriging_weights(model, layout, j)
        matrix[j, list(row.neighbors)] = row.weights
    return KrigingWeights(matrix, degenerate=model.degenerate)


def krige_psi(weights, psis):
    """
    Convex combination of neighbouring warp SRSFs, renormalised to unit norm
    Params:
        weights: coefficient vector, one entry per psi (renormalised to sum 1)
        psis: list of WarpSrsf of the neighbouring sites
    Returns:
        WarpSrsf
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(psis),):
        raise InvalidInputError("one kriging weight per psi expected")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise InvalidInputError("kriging weights must be nonnegative with a positive sum")
    grid = check_same_grid(*psis)
    weights = weights / weights.sum()
    combined = weights @ np.stack([p.values for p in psis])
    norm = l2_norm(combined, grid)
    if norm <= 0:
        raise InvalidInputError("kriged psi vanished")
    return WarpSrsf(grid, combined / norm)

"""
Multiple registration with template estimation, and the componentwise and
universal baselines for multivariate functional data.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from settings import multiple_tol, multiple_max_iter
from src.model.alignment import DpConfig, align_pairwise_penalized
from src.model.losses import registration_cost
from src.model.spatial import SpatialLayout
from src.model.warping import (
    SampledFunction,
    Srsf,
    TimeGrid,
    Warp,
    WarpSrsf,
    check_same_grid,
    compose_function,
    compose_warps,
    extrinsic_phase_distance,
    invert_warp,
    l2_norm,
    psi_to_warp,
    srsf_values,
    warp_action,
    warp_to_psi,
)
from src.utils.errors import InvalidInputError
from src.utils.utils import parallel_map

logger = logging.getLogger(__name__)

CENTERING_ROUNDS = 5
CENTERING_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class MvSample:
    """
    n observations of K component functions on one grid.
    values has shape (n, K, m); layout carries the K sites (optional for the
    non-spatial methods); labels name the components.
    """

    grid: TimeGrid
    values: np.ndarray
    layout: Optional[SpatialLayout] = None
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 3:
            raise InvalidInputError("panel values must have shape (n, K, m)")
        if values.shape[2] != self.grid.m:
            raise InvalidInputError("panel has {} time points, grid has {}".format(values.shape[2], self.grid.m))
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("panel contains non-finite values")
        if self.layout is not None and self.layout.K != values.shape[1]:
            raise InvalidInputError("layout has {} sites for {} components".format(self.layout.K, values.shape[1]))
        if self.labels is not None:
            if len(self.labels) != values.shape[1]:
                raise InvalidInputError("one label per component expected")
            object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def K(self):
        return self.values.shape[1]

    def function(self, i, j):
        return SampledFunction(self.grid, self.values[i, j])

    def srsf(self, i, j):
        return Srsf(self.grid, srsf_values(self.values[i, j], self.grid), self.values[i, j, 0])

    def component_srsfs(self, j):
        return [self.srsf(i, j) for i in range(self.n)]

    def observation_srsf(self, i):
        """R^K valued SRSF of observation i, |.| the Euclidean norm across components"""
        curve = self.values[i].T
        return Srsf(self.grid, srsf_values(curve, self.grid), curve[0].copy())

    def subset(self, idx):
        """Observations idx (in that order), same components"""
        return MvSample(self.grid, self.values[list(idx)], self.layout, self.labels)

    def components(self, idx):
        """Components idx (in that order), sites and labels follow"""
        idx = list(idx)
        layout = None if self.layout is None else self.layout.subset(idx)
        labels = None if self.labels is None else tuple(self.labels[j] for j in idx)
        return MvSample(self.grid, self.values[:, idx], layout, labels)


@dataclass(frozen=True, eq=False)
class MultipleRegResult:
    """Template, warps and aligned SRSFs of one multiple registration"""

    template: Srsf
    warps: Tuple[Warp, ...]
    aligned: Tuple[Srsf, ...]
    iterations: int
    cost_trace: Tuple[float, ...]
    converged: bool
    lam: float = 0.0
    initial_cost: float = float("nan")


@dataclass(frozen=True, eq=False)
class PanelFit:
    """
    Any registration method's output, arranged per (i, j)
    Params:
        method: none | componentwise | universal | spatial
        lam: penalty weight used
        warps: (n, K, m) warp values; universal repeats one warp over j
        aligned_srsfs: (n, K, m) q_ij (.) gamma_ij
        aligned_functions: (n, K, m) f_ij o gamma_ij
        templates: (K, m) SRSF templates
        function_templates: (K, m) cross-sectional means of the aligned functions
        diagnostics: JSON serialisable run summary
    """

    method: str
    lam: float
    grid: TimeGrid
    warps: np.ndarray
    aligned_srsfs: np.ndarray
    aligned_functions: np.ndarray
    templates: np.ndarray
    function_templates: np.ndarray
    diagnostics: dict


def mean_srsf(srsfs):
    grid = check_same_grid(*srsfs)
    anchor = np.mean([np.asarray(q.anchor) for q in srsfs], axis=0)
    return Srsf(grid, np.mean(np.stack([q.values for q in srsfs]), axis=0), anchor)


def _relative_change(new, old):
    scale = l2_norm(old.values, old.grid)
    change = l2_norm(np.asarray(new.values) - np.asarray(old.values), old.grid)
    return change / scale if scale > 0 else change


def mean_warp(warps):
    """
    Extrinsic mean of warps: average their psis, renormalise, map back
    Params:
        warps: list of Warp on one grid
    Returns:
        Warp
    """
    if len(warps) == 0:
        raise InvalidInputError("mean of an empty set of warps")
    grid = check_same_grid(*warps)
    if all(np.array_equal(w.values, warps[0].values) for w in warps[1:]):
        return warps[0]
    psi = np.mean(np.stack([warp_to_psi(w).values for w in warps]), axis=0)
    psi = psi / l2_norm(psi, grid)
    return psi_to_warp(WarpSrsf(grid, psi))


def center_warps(qs, warps):
    """
    Re-expresses warps so that their extrinsic mean is the identity
    Returns:
        (centred warps, aligned SRSFs, template)
    """
    grid = warps[0].grid
    identity = Warp.identity(grid)
    for _ in range(CENTERING_ROUNDS):
        if all(w.is_identity() for w in warps):
            break
        gamma_bar = mean_warp(warps)
        if extrinsic_phase_distance(gamma_bar, identity) <= CENTERING_TOL:
            break
        inverse = invert_warp(gamma_bar)
        warps = [compose_warps(w, inverse) for w in warps]
    aligned = [warp_action(q, w, scheme="cellwise") for q, w in zip(qs, warps)]
    return warps, aligned, mean_srsf(aligned)


def register_multiple(
    qs,
    lam=0.0,
    cfg=None,
    max_iter=multiple_max_iter,
    tol=multiple_tol,
    n_threads=None,
    init_template=None,
    center=True,
):
    """
    Template estimation by alternating pairwise alignment and template update
    Params:
        qs: list of Srsf (univariate or R^K valued) on one grid
        lam: penalty weight pulling every warp towards the identity
        cfg: DpConfig
        max_iter: cap on template updates
        tol: stop when the relative template change drops below tol
        n_threads: workers for the per-function alignments
        init_template: starting template (None -> cross-sectional mean)
        center: re-express the result so the warps average to the identity
    Returns:
        MultipleRegResult of the lowest-cost iterate (template, warps and
        aligned SRSFs from the same iteration), centred afterwards
    """
    if len(qs) < 2:
        raise InvalidInputError("multiple registration needs at least 2 functions")
    check_same_grid(*qs)
    cfg = cfg or DpConfig()
    template = init_template if init_template is not None else mean_srsf(qs)
    identity = Warp.identity(qs[0].grid)
    initial_cost = registration_cost(template, qs, [identity] * len(qs), lam)

    cost_trace = []
    converged = False
    warps = [identity] * len(qs)
    aligned = list(qs)
    best = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        results = parallel_map(
            lambda q: align_pairwise_penalized(template, q, lam, None, cfg), qs, n_threads
        )
        warps = [r.warp for r in results]
        aligned = [warp_action(q, w, scheme="cellwise") for q, w in zip(qs, warps)]
        new_template = mean_srsf(aligned)
        cost_trace.append(registration_cost(new_template, qs, warps, lam))
        if best is None or cost_trace[-1] < best[0]:
            best = (cost_trace[-1], new_template, warps, aligned)
        change = _relative_change(new_template, template)
        template = new_template
        logger.debug("template update %d: cost %.6g, relative change %.3g", iterations, cost_trace[-1], change)
        if change < tol:
            converged = True
            break
    if not converged:
        logger.warning("multiple registration stopped after %d iterations without converging", max_iter)
    if best is not None:
        _, template, warps, aligned = best

    if center:
        warps, aligned, template = center_warps(qs, warps)
    return MultipleRegResult(
        template=template,
        warps=tuple(warps),
        aligned=tuple(aligned),
        iterations=iterations,
        cost_trace=tuple(cost_trace),
        converged=converged,
        lam=float(lam),
        initial_cost=initial_cost,
    )


def register_componentwise(sample, lam=0.0, cfg=None, n_threads=None, **kwargs):
    """Independent multiple registration of every component; one result per j"""
    return tuple(
        register_multiple(sample.component_srsfs(j), lam, cfg, n_threads=n_threads, **kwargs)
        for j in range(sample.K)
    )


def register_universal(sample, lam=0.0, cfg=None, n_threads=None, **kwargs):
    """
    One common warp per observation: multiple registration of the R^K valued
    SRSFs with the Euclidean norm across components
    Returns:
        MultipleRegResult whose warps[i] applies to all components of observation i
    """
    qs = [sample.observation_srsf(i) for i in range(sample.n)]
    return register_multiple(qs, lam, cfg, n_threads=n_threads, **kwargs)


def aligned_functions(sample, warps):
    """f_ij o gamma_ij for a (n, K) nested sequence of warps"""
    out = np.empty_like(sample.values)
    for i in range(sample.n):
        for j in range(sample.K):
            out[i, j] = compose_function(sample.function(i, j), warps[i][j]).values
    return out


def panel_fit(method, lam, sample, warps, aligned_srsfs, templates, diagnostics):
    """Assembles a PanelFit from (n, K) warps and SRSFs plus K SRSF templates"""
    functions = aligned_functions(sample, warps)
    return PanelFit(
        method=method,
        lam=float(lam),
        grid=sample.grid,
        warps=np.array([[w.values for w in row] for row in warps]),
        aligned_srsfs=np.array([[q.values for q in row] for row in aligned_srsfs]),
        aligned_functions=functions,
        templates=np.array([np.asarray(t.values) for t in templates]),
        function_templates=functions.mean(axis=0),
        diagnostics=diagnostics,
    )


def fit_none(sample):
    """No registration: identity warps, templates are cross-sectional means"""
    identity = Warp.identity(sample.grid)
    srsfs = [[sample.srsf(i, j) for j in range(sample.K)] for i in range(sample.n)]
    templates = [mean_srsf([srsfs[i][j] for i in range(sample.n)]) for j in range(sample.K)]
    warps = [[identity] * sample.K for _ in range(sample.n)]
    return panel_fit("none", 0.0, sample, warps, srsfs, templates, {"method": "none"})


def fit_componentwise(sample, lam=0.0, cfg=None, n_threads=None):
    results = register_componentwise(sample, lam, cfg, n_threads=n_threads)
    warps = [[results[j].warps[i] for j in range(sample.K)] for i in range(sample.n)]
    aligned = [[results[j].aligned[i] for j in range(sample.K)] for i in range(sample.n)]
    diagnostics = {
        "method": "componentwise",
        "lambda": float(lam),
        "iterations": [r.iterations for r in results],
        "converged": [bool(r.converged) for r in results],
        "cost_trace": [list(r.cost_trace) for r in results],
    }
    return panel_fit("componentwise", lam, sample, warps, aligned, [r.template for r in results], diagnostics)


def fit_universal(sample, lam=0.0, cfg=None, n_threads=None):
    result = register_universal(sample, lam, cfg, n_threads=n_threads)
    warps = [[result.warps[i]] * sample.K for i in range(sample.n)]
    aligned = [
        [warp_action(sample.srsf(i, j), result.warps[i], scheme="cellwise") for j in range(sample.K)]
        for i in range(sample.n)
    ]
    templates = [mean_srsf([aligned[i][j] for i in range(sample.n)]) for j in range(sample.K)]
    diagnostics = {
        "method": "universal",
        "lambda": float(lam),
        "iterations": result.iterations,
        "converged": bool(result.converged),
        "cost_trace": list(result.cost_trace),
    }
    return panel_fit("universal", lam, sample, warps, aligned, templates, diagnostics)

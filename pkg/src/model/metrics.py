from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid

from src.model.spatial import binned_variogram, pairwise_sq_distances
from src.model.warping import srsf_values
from src.utils.errors import InvalidInputError, MissingTruthError


@dataclass(frozen=True, eq=False)
class MetricReport:
    """MSE / QMSE of one registration against the true templates"""

    method: str
    lam: float
    mse: float
    qmse: float
    mse_per_component: np.ndarray = field(repr=False)
    qmse_per_component: np.ndarray = field(repr=False)
    replicate: Optional[int] = None

    def to_dict(self):
        return {
            "method": self.method,
            "lambda": self.lam,
            "mse": self.mse,
            "qmse": self.qmse,
            "mse_per_component": np.asarray(self.mse_per_component).tolist(),
            "qmse_per_component": np.asarray(self.qmse_per_component).tolist(),
            "replicate": self.replicate,
        }


def _check(aligned, truth, grid):
    if truth is None or np.size(truth) == 0:
        raise MissingTruthError("true templates are required for MSE and QMSE")
    aligned = np.asarray(aligned, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if aligned.ndim != 3 or truth.ndim != 2:
        raise InvalidInputError("expected aligned (n, K, m) and templates (K, m)")
    if aligned.shape[1:] != truth.shape:
        raise InvalidInputError(
            "aligned panel {} does not match templates {}".format(aligned.shape[1:], truth.shape)
        )
    if aligned.shape[2] != grid.m:
        raise InvalidInputError("functions and grid disagree on the number of time points")
    return aligned, truth


def _per_component(aligned, truth, grid):
    sq = trapezoid((aligned - truth[None]) ** 2, grid.points, axis=-1)
    return sq.mean(axis=0)


def mse(aligned, truth, grid, per_component=False):
    """
    1/(Kn) sum_j sum_i ||f~_ij - mu_j||^2
    Params:
        aligned: (n, K, m) aligned functions
        truth: (K, m) true templates
        grid: TimeGrid
        per_component: also return the K component means
    """
    aligned, truth = _check(aligned, truth, grid)
    comp = _per_component(aligned, truth, grid)
    return (float(comp.mean()), comp) if per_component else float(comp.mean())


def qmse(aligned_srsfs, truth, grid, per_component=False):
    """1/(Kn) sum_j sum_i ||q~_ij - Q(mu_j)||^2, truth given as functions"""
    aligned_srsfs, truth = _check(aligned_srsfs, truth, grid)
    truth_q = np.stack([srsf_values(mu, grid) for mu in truth])
    comp = _per_component(aligned_srsfs, truth_q, grid)
    return (float(comp.mean()), comp) if per_component else float(comp.mean())


def evaluate_fit(fit, truth, replicate=None):
    """
    Params:
        fit: PanelFit
        truth: (K, m) true templates (None raises MissingTruthError)
    Returns:
        MetricReport
    """
    if truth is None:
        raise MissingTruthError("true templates are required for MSE and QMSE")
    value, per = mse(fit.aligned_functions, truth, fit.grid, per_component=True)
    qvalue, qper = qmse(fit.aligned_srsfs, truth, fit.grid, per_component=True)
    return MetricReport(fit.method, fit.lam, value, qvalue, per, qper, replicate)


def template_trace_variogram(templates, layout, grid, bins=None):
    """
    Empirical trace-variogram of estimated template functions
    Params:
        templates: (K, m) function-space templates
        layout: SpatialLayout of the K sites
        grid: TimeGrid
        bins: VariogramBins (None -> default)
    Returns:
        EmpiricalVariogram
    """
    templates = np.asarray(templates, dtype=float)
    if templates.ndim != 2 or templates.shape[0] != layout.K or templates.shape[1] != grid.m:
        raise InvalidInputError("templates must be (K, m) matching the layout and grid")
    return binned_variogram(pairwise_sq_distances(templates, grid), layout, bins)

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from settings import presmooth_strength
from src.model.registration import MvSample
from src.model.warping import SampledFunction
from src.utils.errors import InvalidInputError, InvalidParameterError


def resample_to_grid(t, values, grid):
    """
    Linear resampling of samples taken at arbitrary increasing times onto grid
    Params:
        t: sample times, strictly increasing; mapped affinely onto [0, 1]
        values: samples at t, shape (len(t),) or (..., len(t))
        grid: TimeGrid
    Returns:
        values on the grid (last axis has length grid.m)
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
        raise InvalidInputError("sample times must be strictly increasing")
    if values.shape[-1] != t.size:
        raise InvalidInputError("values do not match their sample times")
    u = (t - t[0]) / (t[-1] - t[0])
    u[0], u[-1] = 0.0, 1.0
    flat = values.reshape(-1, t.size)
    out = np.stack([np.interp(grid.points, u, row) for row in flat])
    return out.reshape(values.shape[:-1] + (grid.m,))


def _smoother(m, spacing, strength):
    second_diff = sparse.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(m - 2, m))
    penalty = (strength / spacing ** 4) * (second_diff.T @ second_diff)
    return (sparse.identity(m) + penalty).tocsc()


def presmooth_values(values, grid, strength=presmooth_strength):
    """
    Discrete smoothing spline: solves (I + s / h^4 D'D) y = x along the last axis,
    D the second difference operator on the grid
    Params:
        values: array (..., m)
        grid: uniform TimeGrid
        strength: smoothing parameter s >= 0, 0 returns the input
    Returns:
        smoothed array of the same shape
    """
    if strength is None or not np.isfinite(strength) or strength < 0:
        raise InvalidParameterError("smoothing strength must be >= 0")
    values = np.asarray(values, dtype=float)
    if strength == 0:
        return values.copy()
    m = values.shape[-1]
    if m != grid.m:
        raise InvalidInputError("values do not match the grid")
    flat = values.reshape(-1, m).T
    smoothed = spsolve(_smoother(m, grid.spacing, strength), flat)
    smoothed = np.asarray(smoothed).reshape(m, -1).T
    return smoothed.reshape(values.shape)


def presmooth(f, strength=presmooth_strength):
    """Smoothed copy of a SampledFunction"""
    return SampledFunction(f.grid, presmooth_values(f.values, f.grid, strength))


def presmooth_sample(sample, strength=presmooth_strength):
    """Smoothed copy of every function of an MvSample"""
    return MvSample(sample.grid, presmooth_values(sample.values, sample.grid, strength), sample.layout, sample.labels)


def second_difference_energy(values):
    """Total squared second difference, the quantity the smoother penalises"""
    return float(np.sum(np.diff(np.asarray(values, dtype=float), n=2, axis=-1) ** 2))

"""
Pairwise elastic alignment by dynamic programming on the grid lattice.

Nodes are pairs (i, j) meaning gamma(t_i) = t_j. An edge from (k, l) to (i, j)
uses a step (p, r) = (i - k, j - l) from the configured slope set and makes
gamma linear with slope r / p on [t_k, t_i]. The edge cost is the trapezoid of
the local integrand at the grid points t_k..t_i, with q2 interpolated linearly,
so summing edge costs along a path reproduces losses.lattice_objective.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from math import gcd, log
from typing import Optional, Tuple

import numpy as np
from numba import njit

from settings import grid_size as default_grid_size, max_slope, max_slope_cap, slope_span
from src.model.losses import lattice_objective_parts
from src.model.warping import Warp, check_same_grid, psi_to_warp
from src.utils.errors import InvalidInputError, InvalidParameterError

logger = logging.getLogger(__name__)

TIE_BREAK_RULES = ("nearest-unit-slope",)


@njit(nogil=True, cache=True)
def _edge_cost(q1, q2, psi, lam, h, k, l, i, j):
    p = i - k
    r = j - l
    root = np.sqrt(r / p)
    m = q2.shape[0]
    dim = q1.shape[1]
    total = 0.0
    for a in range(k, i + 1):
        pos = l + ((a - k) * r) / p
        idx = int(np.floor(pos))
        if idx >= m - 1:
            idx = m - 2
        frac = pos - idx
        g = 0.0
        for d in range(dim):
            warped = (q2[idx, d] * (1.0 - frac) + q2[idx + 1, d] * frac) * root
            diff = q1[a, d] - warped
            g += diff * diff
        if lam > 0.0:
            dev = root - psi[a]
            g += lam * dev * dev
        if a == k or a == i:
            g *= 0.5
        total += g
    return h * total


@njit(nogil=True, cache=True)
def _dp_solve(q1, q2, psi, lam, h, steps):
    m = q1.shape[0]
    n_steps = steps.shape[0]
    cost = np.full((m, m), np.inf)
    prev_i = np.zeros((m, m), dtype=np.int64)
    prev_j = np.zeros((m, m), dtype=np.int64)
    cost[0, 0] = 0.0
    for i in range(1, m):
        for j in range(1, m):
            best = np.inf
            best_k = -1
            best_l = -1
            for s in range(n_steps):
                k = i - steps[s, 0]
                l = j - steps[s, 1]
                if k < 0 or l < 0:
                    continue
                base = cost[k, l]
                if base == np.inf:
                    continue
                c = base + _edge_cost(q1, q2, psi, lam, h, k, l, i, j)
                if c < best:
                    best = c
                    best_k = k
                    best_l = l
            cost[i, j] = best
            prev_i[i, j] = best_k
            prev_j[i, j] = best_l

    path_i = np.zeros(m, dtype=np.int64)
    path_j = np.zeros(m, dtype=np.int64)
    i = m - 1
    j = m - 1
    path_i[0] = i
    path_j[0] = j
    n = 1
    while i > 0 or j > 0:
        k = prev_i[i, j]
        l = prev_j[i, j]
        i = k
        j = l
        path_i[n] = i
        path_j[n] = j
        n += 1
    return cost[m - 1, m - 1], path_i[:n][::-1].copy(), path_j[:n][::-1].copy()


def coprime_steps(max_step):
    """All (p, r) with 1 <= p, r <= max_step and gcd(p, r) = 1"""
    return tuple(
        (p, r)
        for p in range(1, max_step + 1)
        for r in range(1, max_step + 1)
        if gcd(p, r) == 1
    )


def slope_bound(m):
    """
    Default largest step on an m-point grid: the longest step covers about
    slope_span of [0, 1], clipped to [max_slope, max_slope_cap]
    """
    return int(min(max(max_slope, round(slope_span * (m - 1))), max_slope_cap))


@lru_cache(maxsize=None)
def _ordered_steps(steps):
    # closest to slope 1 first, then the lexicographically smallest predecessor
    ordered = sorted(set(steps), key=lambda s: (round(abs(log(s[1] / s[0])), 12), -s[0], -s[1]))
    return np.array(ordered, dtype=np.int64)


@dataclass(frozen=True)
class DpConfig:
    """
    DP lattice configuration
    Params:
        max_step: largest numerator/denominator of the allowed slopes
            (None -> slope_bound of the grid being aligned)
        steps: explicit slope set as (p, r) pairs, overrides max_step
        grid_size: expected m, checked against inputs when given
        tie_break: predecessor preference among equal costs
    """

    max_step: Optional[int] = None
    steps: Optional[Tuple[Tuple[int, int], ...]] = None
    grid_size: Optional[int] = None
    tie_break: str = "nearest-unit-slope"

    def __post_init__(self):
        if self.max_step is not None and self.max_step < 1:
            raise InvalidParameterError("max_step must be >= 1")
        if self.steps is not None:
            steps = tuple((int(p), int(r)) for p, r in self.steps)
        elif self.max_step is not None:
            steps = coprime_steps(self.max_step)
        else:
            steps = None
        if steps is not None:
            if any(p <= 0 or r <= 0 for p, r in steps):
                raise InvalidParameterError("all DP slopes must be positive")
            if (1, 1) not in steps:
                raise InvalidParameterError("the slope set must contain (1, 1)")
        if self.tie_break not in TIE_BREAK_RULES:
            raise InvalidParameterError("unknown tie break rule {!r}".format(self.tie_break))
        if self.grid_size is not None and self.grid_size < 3:
            raise InvalidParameterError("grid_size must be >= 3")
        object.__setattr__(self, "steps", steps)

    def slope_set(self, m=None):
        """(p, r) pairs used on an m-point grid"""
        if self.steps is not None:
            return self.steps
        m = m or self.grid_size or default_grid_size
        return coprime_steps(slope_bound(m))

    def step_array(self, m=None):
        """slope_set(m) as an int array in tie-break order"""
        return _ordered_steps(self.slope_set(m))


@dataclass(frozen=True, eq=False)
class AlignResult:
    """Optimal warp of an alignment and the objective split into its parts"""

    warp: Warp
    cost: float
    data_part: float
    penalty_part: float
    lam: float
    path: Tuple[np.ndarray, np.ndarray]


def _prepare(q1, q2, cfg):
    grid = check_same_grid(q1, q2)
    if not grid.is_uniform:
        raise InvalidInputError("DP alignment needs a uniform grid; resample inputs first")
    if cfg.grid_size is not None and cfg.grid_size != grid.m:
        raise InvalidInputError("grid has {} points, DpConfig expects {}".format(grid.m, cfg.grid_size))
    a = np.asarray(q1.values, dtype=float)
    b = np.asarray(q2.values, dtype=float)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if a.shape != b.shape:
        raise InvalidInputError("SRSFs have different dimensions {} vs {}".format(a.shape, b.shape))
    return grid, np.ascontiguousarray(a), np.ascontiguousarray(b)


def align_pairwise_penalized(q1, q2, lam, target=None, cfg=None):
    """
    gamma* = argmin ||q1 - q2 (.) gamma||^2 + lam ||sqrt(gamma') - psi_target||^2
    Params:
        q1: reference Srsf
        q2: Srsf to warp onto q1
        lam: penalty weight, >= 0
        target: WarpSrsf psi_target (None -> identity, psi = 1)
        cfg: DpConfig
    Returns:
        AlignResult
    """
    cfg = cfg or DpConfig()
    if lam is None or not np.isfinite(lam) or lam < 0:
        raise InvalidParameterError("lambda must be a finite value >= 0, got {}".format(lam))
    grid, a, b = _prepare(q1, q2, cfg)
    if target is not None:
        check_same_grid(q1, target)
    psi = np.ones(grid.m) if target is None else np.ascontiguousarray(target.values, dtype=float)

    if not np.any(b):
        # only the penalty depends on gamma: its minimizer is the target itself
        if lam > 0 and target is not None:
            logger.warning("SRSF to align is identically zero; returning the target warp")
            warp = psi_to_warp(target)
        else:
            logger.warning("SRSF to align is identically zero; returning the identity warp")
            warp = Warp.identity(grid)
        data, pen = lattice_objective_parts(q1, q2, warp, target)
        idx = np.arange(grid.m)
        nearest = np.rint(warp.values * (grid.m - 1)).astype(np.int64)
        return AlignResult(warp, data + lam * pen, data, pen, float(lam), (idx, nearest))

    cost, path_i, path_j = _dp_solve(a, b, psi, float(lam), grid.spacing, cfg.step_array(grid.m))
    t = grid.points
    warp = Warp.from_values(grid, np.interp(t, t[path_i], t[path_j]), repair=False)
    data, pen = lattice_objective_parts(q1, q2, warp, target)
    return AlignResult(warp, float(cost), data, pen, float(lam), (path_i, path_j))


def align_pairwise(q1, q2, cfg=None):
    """
    gamma* = argmin ||q1 - q2 (.) gamma||^2 over the DP lattice
    Params:
        q1: reference Srsf
        q2: Srsf to warp onto q1
        cfg: DpConfig
    Returns:
        AlignResult with lam = 0
    """
    return align_pairwise_penalized(q1, q2, 0.0, None, cfg)


def edge_cost(q1, q2, k, l, i, j, lam=0.0, target=None):
    """Cost of one lattice edge (k, l) -> (i, j), as summed inside the DP"""
    grid, a, b = _prepare(q1, q2, DpConfig())
    psi = np.ones(grid.m) if target is None else np.ascontiguousarray(target.values, dtype=float)
    return _edge_cost(a, b, psi, float(lam), grid.spacing, int(k), int(l), int(i), int(j))

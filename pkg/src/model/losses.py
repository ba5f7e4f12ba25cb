"""
Registration objectives evaluated on grid-sampled warps.

A warp sampled on the grid is read as the piecewise linear function through its
samples, so sqrt(gamma') is constant on every cell. Each cell contributes the
trapezoid of

    |q1(t) - q2(gamma(t)) sqrt(gamma')|^2 + lam (sqrt(gamma') - psi_target(t))^2

over its two end nodes. The DP in alignment.py minimises exactly this sum over
lattice paths, and the template update in registration.py is its exact minimiser
for fixed warps.
"""
import numpy as np

from src.model.warping import check_same_grid, interp_columns


def _columns(values):
    values = np.asarray(values, dtype=float)
    return values[:, None] if values.ndim == 1 else values


def lattice_objective_parts(q1, q2, warp, target=None):
    """
    Data and penalty parts of the cell-wise objective
    Params:
        q1: reference Srsf (template)
        q2: Srsf to be warped
        warp: Warp applied to q2
        target: WarpSrsf the penalty pulls sqrt(gamma') towards (None -> identity)
    Returns:
        (data_part, penalty_part)
    """
    grid = check_same_grid(q1, q2, warp)
    t = grid.points
    h = np.diff(t)
    root = np.sqrt(np.clip(np.diff(warp.values) / h, 0.0, None))
    warped = _columns(interp_columns(warp.values, t, q2.values))
    ref = _columns(q1.values)
    left = ref[:-1] - warped[:-1] * root[:, None]
    right = ref[1:] - warped[1:] * root[:, None]
    data = float(np.sum(0.5 * h * (np.sum(left ** 2, axis=1) + np.sum(right ** 2, axis=1))))
    psi = np.ones(grid.m) if target is None else target.values
    penalty = float(np.sum(0.5 * h * ((root - psi[:-1]) ** 2 + (root - psi[1:]) ** 2)))
    return data, penalty


def lattice_objective(q1, q2, warp, lam=0.0, target=None):
    """||q1 - q2 (.) gamma||^2 + lam ||sqrt(gamma') - psi_target||^2 on the lattice"""
    data, penalty = lattice_objective_parts(q1, q2, warp, target)
    return data + lam * penalty


def registration_cost(template, qs, warps, lam=0.0, targets=None):
    """
    Multiple registration objective for one component:
        sum_i ||mu - q_i (.) gamma_i||^2 + lam ||psi_i - psi_target_i||^2
    Params:
        template: Srsf mu
        qs: list of Srsf
        warps: list of Warp, one per q
        lam: penalty weight
        targets: list of WarpSrsf (None -> identity targets)
    Returns:
        total cost (float)
    """
    total = 0.0
    for idx, (q, warp) in enumerate(zip(qs, warps)):
        target = None if targets is None else targets[idx]
        total += lattice_objective(template, q, warp, lam, target)
    return total

import logging

import numpy as np
import pytest

from curves import smooth_warp
from src.model.warping import (
    SampledFunction,
    Srsf,
    TimeGrid,
    Warp,
    WarpSrsf,
    cellwise_root_slope,
    compose_function,
    compose_warps,
    extrinsic_phase_distance,
    invert_warp,
    is_valid_warp,
    l2_distance,
    l2_norm,
    psi_to_warp,
    srsf_inverse,
    srsf_transform,
    srsf_values,
    warp_action,
    warp_to_psi,
)
from src.utils.errors import InvalidInputError, InvalidWarpError


def test_uniform_grid_has_exact_endpoints():
    grid = TimeGrid.uniform(7)
    assert grid.points[0] == 0.0 and grid.points[-1] == 1.0
    assert grid.m == 7
    assert grid.is_uniform
    assert grid.spacing == pytest.approx(1 / 6)


@pytest.mark.parametrize("points", [[0.0, 1.0], [0.0, 0.5, 0.9], [0.0, 0.6, 0.4, 1.0], [0.0, np.nan, 1.0]])
def test_grid_rejects_bad_points(points):
    with pytest.raises(InvalidInputError):
        TimeGrid(np.array(points))


def test_warp_invariants(small_grid):
    t = small_grid.points
    with pytest.raises(InvalidWarpError):
        Warp(small_grid, t[::-1])
    with pytest.raises(InvalidWarpError):
        Warp(small_grid, 0.5 * t)
    bad = t.copy()
    bad[10], bad[11] = bad[11], bad[10]
    with pytest.raises(InvalidWarpError):
        Warp(small_grid, bad)
    # flat stretches are allowed
    flat = np.clip(2 * t, 0, 1)
    assert Warp(small_grid, flat).values[-1] == 1.0


def test_from_values_repairs_monotonicity(small_grid):
    t = small_grid.points
    values = t.copy()
    values[20] = values[22] + 0.01
    warp = Warp.from_values(small_grid, values)
    assert warp.repaired
    assert np.all(np.diff(warp.values) >= 0)
    with pytest.raises(InvalidWarpError):
        Warp.from_values(small_grid, values, repair=False)


def test_srsf_of_linear_function_is_constant(grid):
    q = srsf_values(3.0 * grid.points, grid)
    assert np.allclose(q, np.sqrt(3.0))


def test_srsf_inverse_recovers_function(grid):
    f = SampledFunction(grid, np.sin(2 * np.pi * grid.points) + 0.5)
    back = srsf_inverse(srsf_transform(f))
    assert back.values[0] == pytest.approx(0.5)
    assert np.max(np.abs(back.values - f.values)) < 2e-3


def test_multivariate_srsf_uses_euclidean_speed(grid):
    t = grid.points
    curve = np.column_stack([3 * t, 4 * t])
    q = srsf_values(curve, grid)
    assert q.shape == (grid.m, 2)
    # speed 5: q = (3, 4) / sqrt(5)
    assert np.allclose(q, np.array([3.0, 4.0]) / np.sqrt(5.0))


def test_identity_action_is_neutral(bump_srsf, grid):
    identity = Warp.identity(grid)
    for scheme in ("central", "cellwise"):
        out = warp_action(bump_srsf, identity, scheme=scheme)
        assert np.allclose(out.values, bump_srsf.values)
    with pytest.raises(InvalidInputError):
        warp_action(bump_srsf, identity, scheme="spline")


def test_action_preserves_norm(bump_srsf, grid):
    warp = smooth_warp(grid, 0.6)
    out = warp_action(bump_srsf, warp)
    assert l2_norm(out.values, grid) == pytest.approx(l2_norm(bump_srsf.values, grid), rel=2e-2)


def test_compose_with_identity_is_exact(grid):
    warp = smooth_warp(grid, 0.4)
    identity = Warp.identity(grid)
    assert compose_warps(warp, identity) is warp
    assert compose_warps(identity, warp) is warp


def test_inverse_composes_to_identity(grid):
    warp = smooth_warp(grid, 0.5)
    roundtrip = compose_warps(warp, invert_warp(warp))
    assert np.max(np.abs(roundtrip.values - grid.points)) < 1e-3


def test_compose_function_follows_warp(grid):
    f = SampledFunction(grid, grid.points ** 2)
    warp = smooth_warp(grid, 0.3)
    out = compose_function(f, warp)
    assert np.allclose(out.values, warp.values ** 2, atol=1e-4)


def test_psi_roundtrip(grid):
    warp = smooth_warp(grid, 0.7)
    psi = warp_to_psi(warp)
    assert l2_norm(psi.values, grid) == pytest.approx(1.0)
    back = psi_to_warp(psi)
    assert np.max(np.abs(back.values - warp.values)) < 1e-3


def test_identity_psi_is_one(grid):
    psi = warp_to_psi(Warp.identity(grid))
    assert np.allclose(psi.values, 1.0)
    assert l2_distance(psi, WarpSrsf.one(grid)) < 1e-12


def test_warp_srsf_needs_unit_norm(grid):
    with pytest.raises(InvalidInputError):
        WarpSrsf(grid, np.full(grid.m, 2.0))
    with pytest.raises(InvalidInputError):
        WarpSrsf(grid, -np.ones(grid.m))


def test_extrinsic_distance(grid):
    a = smooth_warp(grid, 0.5)
    b = smooth_warp(grid, -0.5)
    assert extrinsic_phase_distance(a, a) == 0.0
    d = extrinsic_phase_distance(a, b)
    assert d == pytest.approx(extrinsic_phase_distance(b, a))
    # psis live on the unit sphere, their chord is at most 2
    assert 0 < d < 2


def test_is_valid_warp(small_grid):
    t = small_grid.points
    assert is_valid_warp(t, small_grid)
    assert not is_valid_warp(t[::-1], small_grid)
    assert not is_valid_warp(t[:-1], small_grid)


def test_srsf_needs_matching_grid(grid, small_grid):
    with pytest.raises(InvalidInputError):
        Srsf(grid, np.ones(small_grid.m))
    with pytest.raises(InvalidInputError):
        l2_distance(SampledFunction(grid, np.ones(grid.m)), SampledFunction(small_grid, np.ones(small_grid.m)))


def _sinusoid_srsf(grid, rng):
    t = grid.points
    values = sum(rng.normal() * np.sin(2 * np.pi * k * t + rng.uniform(0, 2 * np.pi)) for k in (1, 2, 3))
    return Srsf(grid, values)


def test_action_is_an_isometry():
    grid = TimeGrid.uniform(501)
    rng = np.random.default_rng(17)
    for _ in range(100):
        q1, q2 = _sinusoid_srsf(grid, rng), _sinusoid_srsf(grid, rng)
        warp = smooth_warp(grid, rng.uniform(-0.6, 0.6))
        before = l2_distance(q1, q2)
        after = l2_distance(warp_action(q1, warp), warp_action(q2, warp))
        assert abs(after - before) <= 1e-3 * (1 + before)


def test_phase_distance_is_invariant_under_right_composition():
    grid = TimeGrid.uniform(501)
    rng = np.random.default_rng(18)
    for _ in range(100):
        a1, a2, a = rng.uniform(-0.4, 0.4, size=3)
        gamma1, gamma2, gamma = smooth_warp(grid, a1), smooth_warp(grid, a2), smooth_warp(grid, a)
        before = extrinsic_phase_distance(gamma1, gamma2)
        after = extrinsic_phase_distance(compose_warps(gamma1, gamma), compose_warps(gamma2, gamma))
        assert abs(after - before) <= 1e-3 * (1 + before)


def test_psi_of_lattice_warp_uses_cell_slopes(small_grid, caplog):
    # 10 cells of slope 2, 20 of slope 1/2, 10 of slope 1
    increments = np.concatenate([np.full(10, 2.0), np.full(20, 0.5), np.full(10, 1.0)]) / 40
    values = np.concatenate([[0.0], np.cumsum(increments)])
    values[-1] = 1.0
    warp = Warp(small_grid, values)
    with caplog.at_level(logging.WARNING, logger="src.model.warping"):
        psi = warp_to_psi(warp)
    assert not caplog.records
    roots = cellwise_root_slope(warp)
    assert roots[0] == pytest.approx(np.sqrt(2.0))
    assert roots[10] == pytest.approx(0.5 * (np.sqrt(2.0) + np.sqrt(0.5)))
    assert np.allclose(psi.values, roots / l2_norm(roots, small_grid), rtol=0, atol=1e-12)

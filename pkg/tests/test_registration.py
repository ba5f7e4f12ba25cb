import numpy as np
import pytest

from curves import bump, smooth_warp
from src.model.alignment import DpConfig
from src.model.losses import registration_cost
from src.model.registration import (
    MvSample,
    center_warps,
    fit_componentwise,
    fit_none,
    fit_universal,
    mean_srsf,
    mean_warp,
    register_componentwise,
    register_multiple,
    register_universal,
)
from src.model.methods import fit_panel
from src.model.warping import (
    SampledFunction,
    TimeGrid,
    Warp,
    compose_function,
    extrinsic_phase_distance,
    l2_distance,
    srsf_transform,
)
from src.utils.errors import InvalidInputError, InvalidParameterError


def _warped_bumps(grid, amounts):
    t = grid.points
    f = SampledFunction(grid, bump(t, 0.4) + 0.6 * bump(t, 0.7))
    return [srsf_transform(compose_function(f, smooth_warp(grid, a))) for a in amounts]


def test_sample_validation(small_grid):
    with pytest.raises(InvalidInputError):
        MvSample(small_grid, np.zeros((2, small_grid.m)))
    with pytest.raises(InvalidInputError):
        MvSample(small_grid, np.zeros((2, 3, small_grid.m + 1)))
    bad = np.zeros((2, 3, small_grid.m))
    bad[0, 0, 0] = np.nan
    with pytest.raises(InvalidInputError):
        MvSample(small_grid, bad)
    with pytest.raises(InvalidInputError):
        MvSample(small_grid, np.zeros((2, 3, small_grid.m)), labels=("a", "b"))


def test_sample_views(shifted_panel):
    assert (shifted_panel.n, shifted_panel.K) == (6, 2)
    q = shifted_panel.observation_srsf(2)
    assert q.values.shape == (shifted_panel.grid.m, 2)
    sub = shifted_panel.subset([4, 1])
    assert np.array_equal(sub.values[0], shifted_panel.values[4])
    comp = shifted_panel.components([1])
    assert comp.K == 1 and comp.layout.K == 1


def test_mean_warp_of_equal_warps_is_that_warp(grid):
    warp = smooth_warp(grid, 0.3)
    assert mean_warp([warp, warp, warp]) is warp
    with pytest.raises(InvalidInputError):
        mean_warp([])


def test_mean_of_opposite_warps_is_near_identity(grid):
    mean = mean_warp([smooth_warp(grid, 0.4), smooth_warp(grid, -0.4)])
    assert extrinsic_phase_distance(mean, Warp.identity(grid)) < 0.05


def test_multiple_registration_cost_is_monotone(grid):
    qs = _warped_bumps(grid, [-0.5, -0.2, 0.1, 0.4, 0.6])
    result = register_multiple(qs, max_iter=6, tol=1e-12, center=False)
    costs = [result.initial_cost] + list(result.cost_trace)
    for before, after in zip(costs[:-1], costs[1:]):
        assert after <= before * (1 + 1e-12) + 1e-15
    assert result.cost_trace[-1] < 0.2 * result.initial_cost


def test_multiple_registration_aligns(grid):
    qs = _warped_bumps(grid, [-0.5, -0.2, 0.1, 0.4, 0.6])
    result = register_multiple(qs)
    raw_spread = np.mean([l2_distance(q, mean_srsf(qs)) for q in qs])
    aligned_spread = np.mean([l2_distance(q, result.template) for q in result.aligned])
    assert aligned_spread < 0.3 * raw_spread
    assert len(result.warps) == len(qs)


def test_centering_puts_mean_warp_at_identity(grid):
    qs = _warped_bumps(grid, [-0.5, -0.2, 0.1, 0.4, 0.6])
    result = register_multiple(qs)
    identity = Warp.identity(grid)
    assert extrinsic_phase_distance(mean_warp(list(result.warps)), identity) < 1e-2


def test_center_warps_keeps_identity(grid):
    qs = _warped_bumps(grid, [0.0, 0.0])
    identity = Warp.identity(grid)
    warps, aligned, template = center_warps(qs, [identity, identity])
    assert all(w.is_identity() for w in warps)
    assert np.allclose(template.values, qs[0].values)


def test_multiple_registration_needs_two_functions(grid):
    with pytest.raises(InvalidInputError):
        register_multiple(_warped_bumps(grid, [0.1]))


def test_universal_equals_componentwise_for_one_component(shifted_panel):
    single = shifted_panel.components([0])
    universal = register_universal(single, max_iter=4)
    componentwise = register_componentwise(single, max_iter=4)[0]
    for a, b in zip(universal.warps, componentwise.warps):
        assert np.array_equal(a.values, b.values)


def test_fit_none(shifted_panel):
    fit = fit_none(shifted_panel)
    assert fit.method == "none"
    assert np.array_equal(fit.aligned_functions, shifted_panel.values)
    assert np.allclose(fit.function_templates, shifted_panel.values.mean(axis=0))
    assert np.all(fit.warps == shifted_panel.grid.points)


def test_fit_componentwise_shapes(shifted_panel):
    fit = fit_componentwise(shifted_panel, 0.0, DpConfig())
    n, K, m = shifted_panel.values.shape
    assert fit.warps.shape == (n, K, m)
    assert fit.templates.shape == (K, m)
    assert fit.function_templates.shape == (K, m)
    assert fit.diagnostics["method"] == "componentwise"
    spread_raw = np.var(shifted_panel.values, axis=0).sum()
    spread_fit = np.var(fit.aligned_functions, axis=0).sum()
    assert spread_fit < spread_raw


def test_fit_universal_shares_one_warp(shifted_panel):
    fit = fit_universal(shifted_panel, 0.0)
    assert np.array_equal(fit.warps[:, 0], fit.warps[:, 1])


def test_penalized_baseline_stays_closer_to_identity(shifted_panel):
    free = fit_componentwise(shifted_panel, 0.0)
    tight = fit_componentwise(shifted_panel, 1e5)
    t = shifted_panel.grid.points
    assert np.abs(tight.warps - t).max() <= np.abs(free.warps - t).max()


def test_fit_panel_dispatch(shifted_panel):
    fit, extra = fit_panel(shifted_panel, "none")
    assert fit.method == "none" and extra is None
    with pytest.raises(InvalidParameterError):
        fit_panel(shifted_panel, "procrustes")


def test_returns_the_lowest_cost_iterate(grid):
    qs = _warped_bumps(grid, [-0.3, 0.3])
    result = register_multiple(qs, lam=0.5, max_iter=3, tol=1e-12, center=False)
    # identity targets, and template and warps from the same iteration
    assert min(result.cost_trace) == pytest.approx(
        registration_cost(result.template, qs, list(result.warps), 0.5), rel=1e-12
    )


def test_mean_srsf_rejects_mixed_grids(grid):
    other = TimeGrid.uniform(11)
    q1 = _warped_bumps(grid, [0.0])[0]
    q2 = srsf_transform(SampledFunction(other, other.points))
    with pytest.raises(InvalidInputError):
        mean_srsf([q1, q2])

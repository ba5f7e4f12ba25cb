import numpy as np
import pytest

from src.model.metrics import MetricReport, evaluate_fit, mse, qmse, template_trace_variogram
from src.model.registration import MvSample, fit_none
from src.model.spatial import SpatialLayout
from src.model.warping import srsf_values
from src.utils.errors import InvalidInputError, MissingTruthError


@pytest.fixture
def truth(small_grid):
    t = small_grid.points
    return np.stack([np.sin(2 * np.pi * t), t ** 2, np.exp(-t)])


def test_perfect_registration_scores_zero(small_grid, truth):
    aligned = np.repeat(truth[None], 4, axis=0)
    assert mse(aligned, truth, small_grid) == 0.0
    aligned_q = np.stack([[srsf_values(mu, small_grid) for mu in truth]] * 4)
    assert qmse(aligned_q, truth, small_grid) == 0.0


def test_constant_offset(small_grid, truth):
    aligned = np.repeat(truth[None], 2, axis=0) + 1.0
    value, per = mse(aligned, truth, small_grid, per_component=True)
    assert value == pytest.approx(1.0)
    assert np.allclose(per, 1.0)


def test_per_component_average(small_grid, truth):
    aligned = np.repeat(truth[None], 2, axis=0)
    aligned[:, 1] += 2.0
    value, per = mse(aligned, truth, small_grid, per_component=True)
    assert per.tolist() == pytest.approx([0.0, 4.0, 0.0])
    assert value == pytest.approx(4.0 / 3.0)


def test_missing_truth(small_grid, truth):
    aligned = np.repeat(truth[None], 2, axis=0)
    with pytest.raises(MissingTruthError):
        mse(aligned, None, small_grid)
    with pytest.raises(MissingTruthError):
        qmse(aligned, np.empty((0, small_grid.m)), small_grid)


def test_shape_checks(small_grid, truth):
    with pytest.raises(InvalidInputError):
        mse(np.zeros((2, 2, small_grid.m)), truth, small_grid)
    with pytest.raises(InvalidInputError):
        mse(np.zeros((2, 3)), truth, small_grid)


def test_evaluate_fit(small_grid, truth, rng):
    values = truth[None] + 0.1 * rng.normal(size=(5, 3, small_grid.m))
    fit = fit_none(MvSample(small_grid, values))
    report = evaluate_fit(fit, truth, replicate=3)
    assert isinstance(report, MetricReport)
    assert report.method == "none" and report.replicate == 3
    assert report.mse == pytest.approx(mse(values, truth, small_grid))
    assert report.mse_per_component.shape == (3,)
    assert report.to_dict()["qmse"] == report.qmse
    with pytest.raises(MissingTruthError):
        evaluate_fit(fit, None)


def test_template_variogram(small_grid, truth):
    layout = SpatialLayout(np.array([[0.0], [1.0], [2.5]]))
    flat = template_trace_variogram(np.repeat(truth[:1], 3, axis=0), layout, small_grid)
    assert np.all(flat.estimates == 0.0)
    emp = template_trace_variogram(truth, layout, small_grid)
    assert emp.counts.sum() == 3
    with pytest.raises(InvalidInputError):
        template_trace_variogram(truth[:2], layout, small_grid)

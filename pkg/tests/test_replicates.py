import numpy as np
import pytest

from replicates import run_replicates, summarize
from src.model.spatial_registration import SpatialRegConfig


def test_small_comparison():
    cfg = SpatialRegConfig(lam=0.1, max_outer=2, max_inner=2, init_max_iter=5)
    frame = run_replicates(
        setting=1,
        replicates=2,
        lam=0.1,
        methods=("none", "componentwise", "spatial"),
        base_seed=40,
        sim_overrides=dict(n=3, K=4, m=21),
        cfg=cfg,
        progress=False,
    )
    assert len(frame) == 6
    assert frame["seed"].unique().tolist() == [40, 41]
    assert frame.loc[frame["method"] == "none", "lambda"].eq(0.0).all()
    assert np.all(np.isfinite(frame[["mse", "qmse"]].to_numpy()))
    summary = summarize(frame)
    assert summary.index.tolist() == ["none", "componentwise", "spatial"]


@pytest.mark.slow
def test_setting1_spatial_beats_componentwise():
    frame = run_replicates(setting=1, replicates=10, lam=0.1, methods=("componentwise", "spatial"), progress=False)
    means = frame.groupby("method")[["mse", "qmse"]].mean()
    assert means.loc["spatial", "mse"] < means.loc["componentwise", "mse"]
    assert means.loc["spatial", "qmse"] < means.loc["componentwise", "qmse"]
    for value in means["mse"]:
        assert 0.04 <= value <= 0.20


@pytest.mark.slow
def test_setting2_low_snr_with_presmoothing():
    frame = run_replicates(
        setting=2,
        replicates=10,
        lam=0.1,
        methods=("componentwise", "universal", "spatial"),
        presmooth=1e-5,
        sim_overrides=dict(sigma_e=1.0),
        progress=False,
    )
    means = frame.groupby("method")[["mse", "qmse"]].mean()
    for metric in ("mse", "qmse"):
        for baseline in ("componentwise", "universal"):
            # ties within 5% count
            assert means.loc["spatial", metric] <= 1.05 * means.loc[baseline, metric]

import os

import numpy as np
import pandas as pd
import pytest

from src.data.loader import (
    read_panel,
    read_sample,
    read_sites,
    read_templates,
    write_panel,
    write_sample,
    write_sites,
    write_templates,
    write_truth,
    write_variogram,
)
from src.model.spatial import EmpiricalVariogram, VariogramModel
from src.model.warping import TimeGrid
from src.utils.errors import DataFormatError, InvalidInputError


def _write_text(path, lines):
    with open(path, "w") as handle:
        handle.write("\n".join(lines) + "\n")
    return str(path)


def test_sample_round_trip_is_exact(tmp_path, sim_truth):
    sample = sim_truth.sample
    write_sample(sample, tmp_path / "sample.csv")
    write_sites(sample.layout, tmp_path / "sites.csv")
    back = read_sample(str(tmp_path / "sample.csv"))
    assert np.array_equal(back.values, sample.values)
    assert back.grid.m == sample.grid.m
    # sites.csv next to the panel is picked up
    assert back.layout is not None
    assert np.array_equal(back.layout.sites, sample.layout.sites)


def test_sites_with_labels(tmp_path):
    path = _write_text(tmp_path / "sites.csv", ["j,x,y,z,label", "1,0,1,0,Cz", "0,1,0,0,Fp1"])
    layout = read_sites(path)
    assert layout.labels == ("Fp1", "Cz")
    assert np.array_equal(layout.sites[0], [1.0, 0.0, 0.0])


def test_bad_value_reports_its_line(tmp_path):
    path = _write_text(
        tmp_path / "bad.csv",
        ["i,j,t,value", "0,0,0,1.0", "0,0,0.5,2.0", "0,0,1,abc", "1,0,0,1.0", "1,0,0.5,1.0", "1,0,1,1.0"],
    )
    with pytest.raises(DataFormatError) as info:
        read_sample(path)
    assert info.value.line == 4
    assert info.value.path == path


def test_missing_column(tmp_path):
    path = _write_text(tmp_path / "bad.csv", ["i,j,value", "0,0,1.0"])
    with pytest.raises(DataFormatError) as info:
        read_sample(path)
    assert info.value.line == 1
    with pytest.raises(DataFormatError):
        read_sample(str(tmp_path / "absent.csv"))


def _panel_lines(times, n=2, K=1, fn=lambda t: 2.0 * t):
    lines = ["i,j,t,value"]
    for i in range(n):
        for j in range(K):
            lines += ["{},{},{!r},{!r}".format(i, j, t, fn(t)) for t in times]
    return lines


def test_non_uniform_times_are_resampled(tmp_path):
    path = _write_text(tmp_path / "sample.csv", _panel_lines([0.0, 0.1, 0.3, 0.6, 1.0]))
    sample = read_sample(path, m=11)
    assert sample.values.shape == (2, 1, 11)
    assert np.allclose(sample.values[0, 0], 2.0 * TimeGrid.uniform(11).points)


def test_times_are_mapped_onto_the_unit_interval(tmp_path):
    path = _write_text(tmp_path / "sample.csv", _panel_lines([10.0, 15.0, 20.0], fn=lambda t: t))
    sample = read_sample(path)
    assert sample.grid.m == 3
    assert np.allclose(sample.values[1, 0], [10.0, 15.0, 20.0])


def test_inconsistent_panels(tmp_path):
    lines = _panel_lines([0.0, 0.5, 1.0], n=2, K=2)
    with pytest.raises(DataFormatError):
        read_sample(_write_text(tmp_path / "short.csv", lines[:-1]))
    # components 0 and 2 only
    gap = [line.replace(",1,", ",2,", 1) if line.split(",")[1] == "1" else line for line in lines]
    with pytest.raises(DataFormatError):
        read_sample(_write_text(tmp_path / "gap.csv", gap))
    with pytest.raises(DataFormatError):
        read_sample(_write_text(tmp_path / "dup.csv", lines + [lines[1]]))
    shifted = lines[:-1] + ["1,1,0.75,1.0"]
    with pytest.raises(DataFormatError):
        read_sample(_write_text(tmp_path / "times.csv", shifted))


def test_site_count_must_match(tmp_path):
    panel = _write_text(tmp_path / "sample.csv", _panel_lines([0.0, 0.5, 1.0], K=2))
    sites = _write_text(tmp_path / "three.csv", ["j,x,y", "0,0,0", "1,1,0", "2,0,1"])
    with pytest.raises(DataFormatError):
        read_sample(panel, sites)
    twice = _write_text(tmp_path / "twice.csv", ["j,x,y", "0,0,0", "0,1,0"])
    with pytest.raises(DataFormatError):
        read_sites(twice)


def test_universal_panels(tmp_path, small_grid):
    values = np.tile(small_grid.points, (3, 1, 1))
    write_panel(values, small_grid, tmp_path / "warps.csv", universal=True)
    assert set(pd.read_csv(tmp_path / "warps.csv")["j"]) == {-1}
    grid, back, universal = read_panel(str(tmp_path / "warps.csv"))
    assert universal and back.shape == (3, 1, small_grid.m)
    assert np.array_equal(back, values)
    with pytest.raises(InvalidInputError):
        write_panel(np.zeros((3, 2, small_grid.m)), small_grid, tmp_path / "x.csv", universal=True)


def test_templates_round_trip(tmp_path, small_grid, rng):
    templates = rng.normal(size=(3, small_grid.m))
    write_templates(templates, small_grid, tmp_path / "templates.csv")
    grid, back = read_templates(str(tmp_path / "templates.csv"))
    assert grid.m == small_grid.m
    assert np.array_equal(back, templates)


def test_variogram_file(tmp_path):
    emp = EmpiricalVariogram(np.array([0.5, 1.5]), 0.5, np.array([3, 2]), np.array([0.2, 0.4]))
    write_variogram(emp, tmp_path / "plain.csv")
    with open(tmp_path / "plain.csv") as handle:
        assert handle.readline().strip() == "bin_center,count,estimate,fitted_value"
    write_variogram(emp, tmp_path / "fitted.csv", VariogramModel(0.1, 0.3, 1.0))
    frame = pd.read_csv(tmp_path / "fitted.csv")
    assert frame["count"].tolist() == [3, 2]
    assert frame["fitted_value"].notna().all()


def test_write_truth(tmp_path, sim_truth):
    out = tmp_path / "sim"
    write_truth(sim_truth, str(out))
    for name in ("sample.csv", "sites.csv"):
        assert os.path.exists(out / name)
    for name in ("templates.csv", "warps.csv", "xi.csv", "alpha.csv", "latent.csv"):
        assert os.path.exists(out / "truth" / name)
    _, templates = read_templates(str(out / "truth" / "templates.csv"))
    assert np.array_equal(templates, sim_truth.templates)
    latent = pd.read_csv(out / "truth" / "latent.csv")
    assert len(latent) == sim_truth.sample.n * sim_truth.sample.K

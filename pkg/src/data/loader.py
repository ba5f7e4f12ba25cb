"""
CSV input and output of panels, sites, warps, templates and diagnostics.

Panels are long format `i,j,t,value` (one row per sample), sites are
`j,x,y[,z][,label]`. Everything is written through utils.atomic_write with 17
significant digits, so files read back bit-exactly.
"""
import logging
import os

import numpy as np
import pandas as pd

from src.data.preprocessing import resample_to_grid
from src.model.registration import MvSample
from src.model.spatial import SpatialLayout
from src.model.warping import TimeGrid
from src.utils.errors import DataFormatError, InvalidInputError
from src.utils.utils import FLOAT_FORMAT, atomic_write, ensure_dir

logger = logging.getLogger(__name__)

PANEL_COLUMNS = ["i", "j", "t", "value"]
TEMPLATE_COLUMNS = ["j", "t", "value"]
VARIOGRAM_COLUMNS = ["bin_center", "count", "estimate", "fitted_value"]
UNIVERSAL_J = -1


def _read_csv(path, required, comment=None):
    if not os.path.exists(path):
        raise DataFormatError("file not found", path=path)
    try:
        frame = pd.read_csv(path, comment=comment, float_precision="round_trip", skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as err:
        raise DataFormatError("cannot parse CSV ({})".format(err), path=path)
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataFormatError("missing column(s) {}".format(", ".join(missing)), path=path, line=1)
    return frame


def _line_of(frame, row):
    # header is line 1
    return int(frame.index[row]) + 2


def _numeric(frame, column, path, integer=False):
    column_values = frame[column]
    if column_values.dtype == object:
        values = np.empty(len(column_values))
        for row, raw in enumerate(column_values):
            try:
                values[row] = float(raw)
            except (TypeError, ValueError):
                raise DataFormatError(
                    "column {!r} holds {!r}, expected a number".format(column, raw),
                    path=path,
                    line=_line_of(frame, row),
                )
    else:
        values = column_values.to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise DataFormatError(
            "column {!r} is missing or not finite".format(column), path=path, line=_line_of(frame, bad[0])
        )
    if integer:
        frac = np.flatnonzero(values != np.round(values))
        if frac.size:
            raise DataFormatError(
                "column {!r} must hold integers".format(column), path=path, line=_line_of(frame, frac[0])
            )
        return values.astype(int)
    return values


def _indices(values, name, frame, path):
    """Checks that values cover 0..N-1"""
    found = np.unique(values)
    if found.size == 0:
        raise DataFormatError("no {} indices".format(name), path=path)
    if found[0] != 0 or not np.array_equal(found, np.arange(found.size)):
        bad = np.flatnonzero(~np.isin(values, np.arange(found.size)))
        row = bad[0] if bad.size else 0
        raise DataFormatError(
            "{} indices must run 0..N-1 without gaps".format(name), path=path, line=_line_of(frame, row)
        )
    return found.size


def _times_to_grid(times, path, m=None):
    """Grid for the shared sample times; non-uniform times are resampled"""
    times = np.asarray(times, dtype=float)
    if times.size < 3:
        raise DataFormatError("each function needs at least 3 samples", path=path)
    if np.any(np.diff(times) <= 0):
        raise DataFormatError("sample times must be strictly increasing", path=path)
    size = int(m) if m is not None else times.size
    grid = TimeGrid.uniform(size)
    on_grid = size == times.size and np.allclose(times, grid.points, rtol=0, atol=1e-12)
    return grid, on_grid


def _panel_array(frame, path, allow_universal=False, m=None):
    i = _numeric(frame, "i", path, integer=True)
    j = _numeric(frame, "j", path, integer=True)
    t = _numeric(frame, "t", path)
    v = _numeric(frame, "value", path)
    n = _indices(i, "observation", frame, path)
    universal = allow_universal and bool(np.any(j == UNIVERSAL_J))
    if universal:
        if np.any(j != UNIVERSAL_J):
            raise DataFormatError("j = -1 rows cannot be mixed with component rows", path=path)
        K = 1
        j = np.zeros_like(j)
    else:
        K = _indices(j, "component", frame, path)

    keys = pd.DataFrame({"i": i, "j": j, "t": t})
    dup = np.flatnonzero(keys.duplicated().to_numpy())
    if dup.size:
        raise DataFormatError("duplicate (i, j, t) sample", path=path, line=_line_of(frame, dup[0]))

    order = np.lexsort((t, j, i))
    counts = np.bincount(i * K + j, minlength=n * K)
    if np.any(counts != counts[0]):
        cell = int(np.flatnonzero(counts != counts[0])[0])
        raise DataFormatError(
            "function (i={}, j={}) has {} samples, expected {}".format(cell // K, cell % K, counts[cell], counts[0]),
            path=path,
        )
    size = counts[0]
    times = t[order].reshape(n, K, size)
    values = v[order].reshape(n, K, size)
    if np.any(times != times[0, 0]):
        cell = np.argwhere(np.any(times != times[0, 0], axis=-1))[0]
        raise DataFormatError(
            "function (i={}, j={}) is sampled at different times than (0, 0)".format(cell[0], cell[1]), path=path
        )
    grid, on_grid = _times_to_grid(times[0, 0], path, m)
    if not on_grid:
        logger.info("%s: resampling %d samples per function onto a uniform grid of %d", path, size, grid.m)
        values = resample_to_grid(times[0, 0], values, grid)
    return grid, values, universal


def read_sites(path):
    """
    Site coordinates `j,x,y[,z][,label]`
    Returns:
        SpatialLayout ordered by j
    """
    frame = _read_csv(path, ["j", "x", "y"])
    j = _numeric(frame, "j", path, integer=True)
    K = _indices(j, "site", frame, path)
    if K != len(j):
        raise DataFormatError("each site must appear once", path=path)
    axes = ["x", "y"] + (["z"] if "z" in frame.columns else [])
    coords = np.column_stack([_numeric(frame, a, path) for a in axes])[np.argsort(j)]
    labels = None
    if "label" in frame.columns:
        labels = tuple(frame["label"].astype(str).str.strip().to_numpy()[np.argsort(j)])
    return SpatialLayout(coords, labels)


def read_sample(path, sites_path=None, m=None):
    """
    Reads a panel in long format
    Params:
        path: CSV with columns i, j, t, value
        sites_path: optional sites CSV (None -> sites.csv next to path, if present)
        m: grid size to resample onto (None -> keep the file's sample count)
    Returns:
        MvSample
    """
    frame = _read_csv(path, PANEL_COLUMNS)
    grid, values, _ = _panel_array(frame, path, m=m)
    if sites_path is None:
        candidate = os.path.join(os.path.dirname(os.path.abspath(path)), "sites.csv")
        sites_path = candidate if os.path.exists(candidate) else None
    layout = read_sites(sites_path) if sites_path else None
    if layout is not None and layout.K != values.shape[1]:
        raise DataFormatError(
            "{} sites for {} components".format(layout.K, values.shape[1]), path=sites_path
        )
    labels = layout.labels if layout is not None else None
    return MvSample(grid, values, layout, labels)


def read_panel(path, allow_universal=True):
    """
    Reads any long-format (n, K, m) array such as warps.csv or aligned.csv
    Returns:
        (grid, values, universal) where universal marks j = -1 files
    """
    frame = _read_csv(path, PANEL_COLUMNS)
    return _panel_array(frame, path, allow_universal=allow_universal)


def read_templates(path):
    """
    Reads `j,t,value` templates
    Returns:
        (grid, values (K, m))
    """
    frame = _read_csv(path, TEMPLATE_COLUMNS)
    frame = frame.assign(i="0")
    grid, values, _ = _panel_array(frame, path)
    return grid, values[0]


def _write_frame(frame, path):
    atomic_write(path, lambda handle: frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT))


def panel_frame(values, grid, universal=False):
    values = np.asarray(values, dtype=float)
    n, K, m = values.shape
    ii, jj, tt = np.meshgrid(np.arange(n), np.arange(K), np.arange(m), indexing="ij")
    return pd.DataFrame(
        {
            "i": ii.ravel(),
            "j": np.full(ii.size, UNIVERSAL_J) if universal else jj.ravel(),
            "t": grid.points[tt.ravel()],
            "value": values.ravel(),
        }
    )


def write_panel(values, grid, path, universal=False):
    """(n, K, m) array in long format; universal writes j = -1 and expects K = 1"""
    if universal and np.shape(values)[1] != 1:
        raise InvalidInputError("universal panels carry one curve per observation")
    _write_frame(panel_frame(values, grid, universal), path)


def write_sample(sample, path):
    write_panel(sample.values, sample.grid, path)


def write_templates(templates, grid, path):
    templates = np.asarray(templates, dtype=float)
    K, m = templates.shape
    jj, tt = np.meshgrid(np.arange(K), np.arange(m), indexing="ij")
    frame = pd.DataFrame({"j": jj.ravel(), "t": grid.points[tt.ravel()], "value": templates.ravel()})
    _write_frame(frame, path)


def write_sites(layout, path):
    data = {"j": np.arange(layout.K)}
    for axis, name in enumerate(["x", "y", "z"][: layout.dim]):
        data[name] = layout.sites[:, axis]
    if layout.labels is not None:
        data["label"] = list(layout.labels)
    _write_frame(pd.DataFrame(data), path)


def variogram_frame(emp, model=None):
    fitted = model(emp.centers) if model is not None else np.full(emp.n_bins, np.nan)
    return pd.DataFrame(
        {
            "bin_center": emp.centers,
            "count": np.asarray(emp.counts, dtype=int),
            "estimate": emp.estimates,
            "fitted_value": fitted,
        },
        columns=VARIOGRAM_COLUMNS,
    )


def write_variogram(emp, path, model=None):
    """bin_center,count,estimate,fitted_value (fitted_value empty without a model)"""
    _write_frame(variogram_frame(emp, model), path)


def write_phase_variograms(variograms, models, path):
    """Per-observation phase variograms stacked with an observation column i"""
    frames = [variogram_frame(emp, model).assign(i=i) for i, (emp, model) in enumerate(zip(variograms, models))]
    frame = pd.concat(frames, ignore_index=True)[["i"] + VARIOGRAM_COLUMNS]
    _write_frame(frame, path)


def write_convergence(result, path):
    """iteration,cost,delta,event rows: one per inner iteration plus one per template update"""
    rows = []
    updates = np.cumsum([int(np.max(counts)) for counts in result.inner_iterations])
    for iteration, delta, event in result.delta_trace:
        rows.append({"iteration": iteration, "cost": np.nan, "delta": delta, "event": event})
    for iteration, cost in zip(updates, result.cost_trace):
        rows.append({"iteration": int(iteration), "cost": cost, "delta": np.nan, "event": "template_update"})
    frame = pd.DataFrame(rows, columns=["iteration", "cost", "delta", "event"])
    frame = frame.sort_values(["iteration", "event"], kind="mergesort").reset_index(drop=True)
    _write_frame(frame, path)


def write_frame(frame, path):
    _write_frame(frame, path)


def write_truth(truth, directory):
    """
    Simulation output directory: sample.csv, sites.csv, truth/ with the true
    templates, composed warps, both warp factors and the latent parameters
    """
    ensure_dir(directory)
    grid = truth.sample.grid
    write_sample(truth.sample, os.path.join(directory, "sample.csv"))
    write_sites(truth.sample.layout, os.path.join(directory, "sites.csv"))
    if truth.smoothed is not None:
        write_sample(truth.smoothed, os.path.join(directory, "sample_smoothed.csv"))
    truth_dir = ensure_dir(os.path.join(directory, "truth"))
    write_templates(truth.templates, grid, os.path.join(truth_dir, "templates.csv"))
    write_panel(truth.gamma, grid, os.path.join(truth_dir, "warps.csv"))
    write_panel(truth.xi, grid, os.path.join(truth_dir, "xi.csv"))
    write_panel(truth.alpha[:, None, :], grid, os.path.join(truth_dir, "alpha.csv"), universal=True)
    n, K = truth.b.shape
    latent = pd.DataFrame(
        {
            "i": np.repeat(np.arange(n), K),
            "j": np.tile(np.arange(K), n),
            "z": np.repeat(truth.z, K),
            "b": truth.b.ravel(),
        }
    )
    _write_frame(latent, os.path.join(truth_dir, "latent.csv"))

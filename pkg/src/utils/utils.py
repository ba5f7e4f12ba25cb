import os
import json
import logging
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from tqdm import tqdm

from settings import num_threads

# 17 significant digits round-trip every float64 exactly
FLOAT_FORMAT = "%.17g"


def ensure_dir(directory):
    """Creates the directory (and parents) if missing, returns it"""
    if directory and not os.path.exists(directory):
        os.makedirs(directory)
    return directory


def atomic_write(path, write_fn, mode="w"):
    """
    Writes a file through a temporary sibling which is then renamed over the target
    Params:
        path: final file path
        write_fn: callable receiving the open file handle
        mode: "w" for text, "wb" for bytes
    """
    directory = os.path.dirname(os.path.abspath(path))
    ensure_dir(directory)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        newline = "" if "b" not in mode else None
        with os.fdopen(fd, mode, newline=newline) as handle:
            write_fn(handle)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError("Object of type {} is not JSON serializable".format(type(obj).__name__))


def save_json(obj, path):
    """
    Saving a diagnostics / config dictionary as JSON (atomically)
    Params:
        obj: JSON serialisable object, numpy scalars and arrays allowed
        path: destination file
    """
    atomic_write(
        path,
        lambda handle: json.dump(obj, handle, indent=2, sort_keys=True, default=_json_default),
    )


def load_json(path):
    with open(path) as handle:
        return json.load(handle)


def resolve_threads(n_threads=None):
    """Worker count: explicit argument, else ESA_NUM_THREADS through settings"""
    n = num_threads if n_threads is None else n_threads
    return max(1, int(n))


def parallel_map(fn, items, n_threads=None, progress=False, desc=None):
    """
    Maps fn over items, preserving order. Runs in a thread pool when more than
    one worker is configured; the alignment kernel releases the GIL.
    Params:
        fn: callable of one argument
        items: iterable of arguments
        n_threads: worker count (None -> settings)
        progress: show a tqdm bar
        desc: bar label
    Returns:
        list of results in the order of items
    """
    items = list(items)
    workers = min(resolve_threads(n_threads), max(1, len(items)))
    if workers == 1:
        iterator = tqdm(items, desc=desc, leave=False) if progress else items
        return [fn(item) for item in iterator]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = pool.map(fn, items)
        if progress:
            results = tqdm(results, total=len(items), desc=desc, leave=False)
        return list(results)


def setup_logging(verbose=False):
    """Configures the root logger for command line use"""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        datefmt="%H:%M:%S",
    )
    # numba's compiler logging is very chatty at DEBUG
    logging.getLogger("numba").setLevel(logging.WARNING)

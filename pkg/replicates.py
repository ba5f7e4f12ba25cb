#!/usr/bin/env python
"""
Method comparison over seeded simulation replicates: none, componentwise,
universal and spatial registration of the same panels, scored by MSE and QMSE
against the true templates.

    python -u replicates.py --setting 1 --replicates 10 --lam 0.1
"""
import argparse
import logging
import os
import sys

import numpy as np
import pandas as pd
from tqdm import tqdm

from settings import num_replicates, replicate_lambda, run_dir, seed
from src.data.loader import write_frame
from src.data.simulation import SimConfig, simulate
from src.model.methods import METHODS, fit_panel
from src.model.metrics import evaluate_fit
from src.model.spatial_registration import SpatialRegConfig
from src.utils.utils import ensure_dir, setup_logging

logger = logging.getLogger("replicates")


def run_replicates(
    setting=1,
    replicates=num_replicates,
    lam=replicate_lambda,
    methods=METHODS,
    base_seed=seed,
    presmooth=None,
    sim_overrides=None,
    cfg=None,
    progress=True,
):
    """
    Params:
        setting: simulation setting (1 or 2)
        replicates: number of seeded panels, replicate r uses seed base_seed + r
        lam: penalty weight of the penalized methods
        methods: subset of METHODS
        presmooth: smoothing strength applied to every panel before registration
        sim_overrides: extra SimConfig fields
        cfg: SpatialRegConfig for dp, iteration caps and threads
    Returns:
        DataFrame with one row per (replicate, method)
    """
    cfg = cfg or SpatialRegConfig(lam=lam)
    rows = []
    iterator = range(replicates)
    if progress:
        iterator = tqdm(iterator, desc="replicates")
    for r in iterator:
        sim_cfg = SimConfig(setting=setting, seed=base_seed + r, **(sim_overrides or {}))
        truth = simulate(sim_cfg, presmooth=presmooth)
        sample = truth.smoothed if truth.smoothed is not None else truth.sample
        for method in methods:
            fit, _ = fit_panel(sample, method, 0.0 if method == "none" else lam, cfg)
            report = evaluate_fit(fit, truth.templates, replicate=r)
            logger.debug("replicate %d %s: MSE %.4f QMSE %.4f", r, method, report.mse, report.qmse)
            rows.append({"replicate": r, "seed": sim_cfg.seed, "method": method, "lambda": report.lam,
                         "mse": report.mse, "qmse": report.qmse})
    return pd.DataFrame(rows, columns=["replicate", "seed", "method", "lambda", "mse", "qmse"])


def summarize(frame):
    """mean and standard deviation of MSE and QMSE per method, in METHODS order"""
    summary = frame.groupby("method")[["mse", "qmse"]].agg(["mean", "std"])
    order = [m for m in METHODS if m in summary.index]
    return summary.loc[order]


def main(argv=None):
    parser = argparse.ArgumentParser(description="Compare registration methods over simulated replicates.")
    parser.add_argument("--setting", type=int, default=1, choices=(1, 2))
    parser.add_argument("--replicates", type=int, default=num_replicates)
    parser.add_argument("--lam", type=float, default=replicate_lambda)
    parser.add_argument("--methods", default=",".join(METHODS), help="comma separated subset")
    parser.add_argument("--seed", type=int, default=seed)
    parser.add_argument("--sigma-e", type=float, dest="sigma_e")
    parser.add_argument("--presmooth", type=float)
    parser.add_argument("-m", type=int, dest="m", help="grid size")
    parser.add_argument("--threads", type=int)
    parser.add_argument("-o", "--output", default=run_dir)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        parser.error("unknown method(s) {}".format(", ".join(unknown)))
    overrides = {k: getattr(args, k) for k in ("sigma_e", "m") if getattr(args, k) is not None}

    print("setting {}: {} replicates, lambda={:g}".format(args.setting, args.replicates, args.lam))
    frame = run_replicates(
        args.setting,
        args.replicates,
        args.lam,
        methods,
        args.seed,
        args.presmooth,
        overrides,
        SpatialRegConfig(lam=args.lam, n_threads=args.threads),
    )
    summary = summarize(frame)
    for method, row in summary.iterrows():
        print(
            "{:>14}  MSE {:.4f} +- {:.4f}   QMSE {:.4f} +- {:.4f}".format(
                method, row[("mse", "mean")], np.nan_to_num(row[("mse", "std")]),
                row[("qmse", "mean")], np.nan_to_num(row[("qmse", "std")]),
            )
        )
    directory = ensure_dir(args.output)
    write_frame(frame, os.path.join(directory, "replicates_setting{}.csv".format(args.setting)))
    print("Script completed!")
    return 0


if __name__ == "__main__":
    sys.exit(main())

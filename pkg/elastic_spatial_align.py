#!/usr/bin/env python
"""
Command line front end

    elastic-spatial-align simulate --setting 1 --seed 7 -o out/sim
    elastic-spatial-align register -i out/sim/sample.csv --method spatial --lam 0.1 -o out/reg
    elastic-spatial-align evaluate -i out/reg --truth out/sim/truth/templates.csv
    elastic-spatial-align cv -i out/sim/sample.csv --method spatial -o out/cv

Flags win over the JSON file given with --config, which wins over settings.py.
The effective configuration is written to config.json in every output directory.
Exit codes: 0 success, 1 user error, 2 internal error.
"""
import argparse
import dataclasses
import logging
import os
import sys
import traceback
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

import settings
from src.data.loader import (
    read_panel,
    read_sample,
    read_sites,
    read_templates,
    write_convergence,
    write_frame,
    write_panel,
    write_phase_variograms,
    write_sites,
    write_templates,
    write_truth,
    write_variogram,
)
from src.data.preprocessing import presmooth_sample
from src.data.simulation import SimConfig, simulate
from src.model.alignment import DpConfig
from src.model.methods import METHODS, fit_panel
from src.model.metrics import MetricReport, mse, qmse, template_trace_variogram
from src.model.spatial import VariogramBins
from src.model.spatial_registration import INIT_TEMPLATES, SpatialRegConfig
from src.model.validation import CV_METHODS, cross_validate_lambda
from src.utils.errors import (
    ElasticAlignError,
    InvalidParameterError,
    MissingTruthError,
    RegistrationError,
)
from src.utils.utils import ensure_dir, load_json, save_json, setup_logging

logger = logging.getLogger("elastic_spatial_align")

COMMANDS = ("simulate", "register", "evaluate", "cv")
TRUTH_METRICS = ("mse", "qmse")
EVAL_METRICS = TRUTH_METRICS + ("variogram",)

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2


@dataclass(frozen=True)
class RunConfig:
    """
    Effective configuration of one command
    Params:
        command: simulate | register | evaluate | cv
        input: sample CSV (register, cv) or registration output directory (evaluate)
        output: output directory
        sites / truth: optional sites CSV and true templates (file or simulate directory)
        method / lam / cv: registration method, penalty weight, select lam by CV first
        lambdas / folds: CV grid and fold count
        setting .. range_factor: simulation parameters (None -> setting default)
        presmooth: smoothing strength applied before registration or written next to simulated data
        metrics: evaluate metrics (None -> mse, qmse and variogram when truth is given, variogram otherwise)
    """

    command: str
    input: Optional[str] = None
    output: Optional[str] = None
    sites: Optional[str] = None
    truth: Optional[str] = None
    method: str = "spatial"
    lam: Optional[float] = None
    cv: bool = False
    lambdas: List[float] = field(default_factory=lambda: list(settings.lambda_grid))
    folds: int = settings.k_folds
    seed: int = settings.seed
    m: Optional[int] = None
    setting: int = 1
    n: Optional[int] = None
    K: Optional[int] = None
    Z: float = 0.5
    B: Optional[float] = None
    sigma_a: Optional[float] = None
    sigma_e: float = 0.5
    nu: float = 0.5
    range_factor: float = settings.range_factor
    presmooth: Optional[float] = None
    max_outer: int = settings.max_outer
    max_inner: int = settings.max_inner
    eps1: float = settings.outer_tol
    eps2: float = settings.inner_tol
    max_slope: Optional[int] = None
    init_template: str = settings.init_template
    no_stopping: bool = False
    metrics: Optional[List[str]] = None
    threads: Optional[int] = None
    progress: bool = False
    verbose: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InvalidParameterError("command must be one of {}".format(", ".join(COMMANDS)))
        if self.method not in METHODS:
            raise InvalidParameterError("method must be one of {}".format(", ".join(METHODS)))
        if self.init_template not in INIT_TEMPLATES:
            raise InvalidParameterError("init_template must be one of {}".format(", ".join(INIT_TEMPLATES)))
        if self.command != "simulate" and not self.input:
            raise InvalidParameterError("{} needs --input".format(self.command))
        if self.input and not os.path.exists(self.input):
            raise InvalidParameterError("input {} does not exist".format(self.input))
        if self.truth and not os.path.exists(self.truth):
            raise InvalidParameterError("truth {} does not exist".format(self.truth))
        if self.command == "register" and self.lam is None and not self.cv and self.method != "none":
            raise InvalidParameterError("register needs --lam or --cv")
        if self.lam is not None and (not np.isfinite(self.lam) or self.lam < 0):
            raise InvalidParameterError("lambda must be a finite value >= 0")
        if self.metrics is not None:
            unknown = [m for m in self.metrics if m not in EVAL_METRICS]
            if unknown:
                raise InvalidParameterError("unknown metric(s) {}".format(", ".join(unknown)))
        if self.threads is not None and self.threads < 1:
            raise InvalidParameterError("threads must be >= 1")

    @property
    def output_dir(self):
        return self.output or os.path.join(settings.out_dir, self.command)

    def sim_config(self):
        return SimConfig(
            setting=self.setting,
            n=self.n,
            K=self.K,
            Z=self.Z,
            B=self.B,
            sigma_a=self.sigma_a,
            sigma_e=self.sigma_e,
            nu=self.nu,
            range_factor=self.range_factor,
            m=self.m or settings.grid_size,
            seed=self.seed,
        )

    def reg_config(self, lam=None):
        lam = self.lam if lam is None else lam
        return SpatialRegConfig(
            lam=settings.default_lambda if lam is None else lam,
            eps1=self.eps1,
            eps2=self.eps2,
            max_outer=self.max_outer,
            max_inner=self.max_inner,
            dp=DpConfig(max_step=self.max_slope),
            init_template=self.init_template,
            stopping=not self.no_stopping,
            n_threads=self.threads,
            progress=self.progress,
        )

    def to_dict(self):
        return dataclasses.asdict(self)


def _config_keys():
    return {f.name for f in dataclasses.fields(RunConfig)}


def load_config_file(path):
    """JSON object of RunConfig fields; dashes in keys are accepted"""
    try:
        raw = load_json(path)
    except ValueError as err:
        raise InvalidParameterError("config file {} is not valid JSON: {}".format(path, err))
    if not isinstance(raw, dict):
        raise InvalidParameterError("config file {} must hold a JSON object".format(path))
    values = {key.replace("-", "_"): value for key, value in raw.items()}
    unknown = sorted(set(values) - _config_keys() - {"config"})
    if unknown:
        raise InvalidParameterError("unknown config key(s) in {}: {}".format(path, ", ".join(unknown)))
    values.pop("config", None)
    return values


def build_config(args):
    """Merges settings defaults < config file < flags into a RunConfig"""
    values = {}
    if args.config:
        values.update(load_config_file(args.config))
    flags = {k: v for k, v in vars(args).items() if k in _config_keys() and v is not None}
    for key in ("cv", "progress", "verbose", "no_stopping"):
        if flags.get(key) is False:
            flags.pop(key)
    values.update(flags)
    values["command"] = args.command
    return RunConfig(**values)


class _Parser(argparse.ArgumentParser):
    """argparse reports usage errors through InvalidParameterError (exit code 1)"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise InvalidParameterError(message)


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated numbers, got {!r}".format(text))


def _name_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser():
    parser = _Parser(
        prog="elastic-spatial-align",
        description="Elastic registration of spatially indexed multivariate functional data.",
    )
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with default values for any flag")
    common.add_argument("-o", "--output", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("-m", "--m", type=int, dest="m", help="grid size")
    common.add_argument("--threads", type=int, help="worker threads (default ESA_NUM_THREADS)")
    common.add_argument("--progress", action="store_true", default=None, help="show progress bars")
    common.add_argument("-v", "--verbose", action="store_true", default=None, help="debug logging")
    common.add_argument("--presmooth", type=float, help="second-difference smoothing strength")

    registration = _Parser(add_help=False)
    registration.add_argument("-i", "--input", help="sample CSV (i,j,t,value)")
    registration.add_argument("--sites", help="sites CSV (j,x,y[,z]), default sites.csv beside the input")
    registration.add_argument("--method", choices=METHODS)
    registration.add_argument("--lambdas", type=_float_list, help="CV grid, comma separated")
    registration.add_argument("--folds", type=int)
    registration.add_argument("--max-outer", type=int, dest="max_outer")
    registration.add_argument("--max-inner", type=int, dest="max_inner")
    registration.add_argument("--eps1", type=float, help="relative outer tolerance")
    registration.add_argument("--eps2", type=float, help="inner tolerance")
    registration.add_argument(
        "--max-slope", type=int, dest="max_slope", help="largest DP step (default grows with the grid)"
    )
    registration.add_argument("--init-template", choices=INIT_TEMPLATES, dest="init_template")
    registration.add_argument(
        "--no-stopping", action="store_true", default=None, dest="no_stopping", help="run every iteration"
    )

    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sim = sub.add_parser("simulate", parents=[common], help="generate a simulated panel with its truth")
    sim.add_argument("--setting", type=int, choices=(1, 2))
    sim.add_argument("-n", "--n", type=int, dest="n", help="observations")
    sim.add_argument("-K", "--K", type=int, dest="K", help="components")
    sim.add_argument("--Z", type=float, dest="Z", help="cross-observation phase scale")
    sim.add_argument("--B", type=float, dest="B", help="cross-component phase scale")
    sim.add_argument("--sigma-a", type=float, dest="sigma_a")
    sim.add_argument("--sigma-e", type=float, dest="sigma_e")
    sim.add_argument("--nu", type=float)
    sim.add_argument("--range-factor", type=float, dest="range_factor")

    reg = sub.add_parser("register", parents=[common, registration], help="register a panel")
    reg.add_argument("--lam", type=float, help="penalty weight")
    reg.add_argument("--cv", action="store_true", default=None, help="select lambda by cross validation")
    reg.add_argument("--truth", help="true templates; writes metrics.json when given")

    ev = sub.add_parser("evaluate", parents=[common], help="metrics of a registration output directory")
    ev.add_argument("-i", "--input", help="register output directory")
    ev.add_argument("--truth", help="true templates CSV or simulate output directory")
    ev.add_argument("--sites", help="sites CSV for the template variogram")
    ev.add_argument("--metrics", type=_name_list, help="subset of mse,qmse,variogram")

    sub.add_parser("cv", parents=[common, registration], help="select lambda by K-fold cross validation")
    return parser


def _truth_templates(path):
    """True templates from a templates CSV or a simulate output directory"""
    if os.path.isdir(path):
        for candidate in (os.path.join(path, "truth", "templates.csv"), os.path.join(path, "templates.csv")):
            if os.path.exists(candidate):
                return read_templates(candidate)
        raise MissingTruthError("no truth/templates.csv under {}".format(path))
    return read_templates(path)


def _load_sample(cfg):
    sample = read_sample(cfg.input, cfg.sites, cfg.m)
    if cfg.presmooth is not None:
        logger.info("pre-smoothing with strength %g", cfg.presmooth)
        sample = presmooth_sample(sample, cfg.presmooth)
    return sample


def _write_cv(report, directory):
    write_frame(report.to_frame(), os.path.join(directory, "cv.csv"))
    save_json(report.to_dict(), os.path.join(directory, "cv.json"))


def cmd_simulate(cfg):
    sim_cfg = cfg.sim_config()
    truth = simulate(sim_cfg, presmooth=cfg.presmooth)
    directory = ensure_dir(cfg.output_dir)
    write_truth(truth, directory)
    save_json(cfg.to_dict(), os.path.join(directory, "config.json"))
    print(
        "simulated setting {}: n={} K={} m={} seed={} -> {}".format(
            sim_cfg.setting, sim_cfg.n, sim_cfg.K, sim_cfg.m, sim_cfg.seed, directory
        )
    )
    return truth


def write_fit(fit, result, sample, directory):
    """templates, warps, aligned functions and SRSFs, diagnostics and the figure CSVs"""
    grid = fit.grid
    write_templates(fit.function_templates, grid, os.path.join(directory, "templates.csv"))
    write_templates(fit.templates, grid, os.path.join(directory, "srsf_templates.csv"))
    if fit.method == "universal":
        write_panel(fit.warps[:, :1], grid, os.path.join(directory, "warps.csv"), universal=True)
    else:
        write_panel(fit.warps, grid, os.path.join(directory, "warps.csv"))
    write_panel(fit.aligned_functions, grid, os.path.join(directory, "aligned.csv"))
    write_panel(fit.aligned_srsfs, grid, os.path.join(directory, "aligned_srsf.csv"))
    if sample.layout is not None:
        write_sites(sample.layout, os.path.join(directory, "sites.csv"))
        if sample.K >= 2:
            emp = template_trace_variogram(fit.function_templates, sample.layout, grid)
            write_variogram(emp, os.path.join(directory, "variogram_template.csv"))
    if result is not None:
        write_convergence(result, os.path.join(directory, "convergence.csv"))
        write_phase_variograms(
            result.state.variograms, result.state.models, os.path.join(directory, "variogram_phase.csv")
        )
    save_json(fit.diagnostics, os.path.join(directory, "diagnostics.json"))


def _write_metrics(reports, directory):
    save_json([r.to_dict() for r in reports], os.path.join(directory, "metrics.json"))
    frame = pd.DataFrame(
        [{"method": r.method, "lambda": r.lam, "mse": r.mse, "qmse": r.qmse} for r in reports]
    )
    write_frame(frame, os.path.join(directory, "metrics.csv"))


def cmd_register(cfg):
    sample = _load_sample(cfg)
    directory = ensure_dir(cfg.output_dir)
    lam = cfg.lam if cfg.lam is not None else 0.0
    if cfg.cv and cfg.method != "none":
        report = cross_validate_lambda(
            sample, cfg.lambdas, cfg.method, cfg.folds, cfg.seed, cfg.reg_config(), progress=cfg.progress
        )
        _write_cv(report, directory)
        lam = report.selected
        print("cross validation selected lambda = {:g}".format(lam))
    fit, result = fit_panel(sample, cfg.method, lam, cfg.reg_config(lam))
    write_fit(fit, result, sample, directory)
    save_json(dict(cfg.to_dict(), lam=lam), os.path.join(directory, "config.json"))
    summary = "registered n={} K={} m={} with {} (lambda={:g})".format(
        sample.n, sample.K, sample.grid.m, fit.method, fit.lam
    )
    if cfg.truth:
        _, truth = _truth_templates(cfg.truth)
        report = _evaluate_arrays(fit.method, fit.lam, fit.aligned_functions, fit.aligned_srsfs, truth, fit.grid)
        _write_metrics([report], directory)
        summary += ": MSE {:.4f} QMSE {:.4f}".format(report.mse, report.qmse)
    print(summary + " -> {}".format(directory))
    return fit, result


def _evaluate_arrays(method, lam, aligned, aligned_srsfs, truth, grid):
    value, per = mse(aligned, truth, grid, per_component=True)
    qvalue, qper = qmse(aligned_srsfs, truth, grid, per_component=True)
    return MetricReport(method, lam, value, qvalue, per, qper)


def cmd_evaluate(cfg):
    directory = ensure_dir(cfg.output or cfg.input)
    requested = cfg.metrics or (list(EVAL_METRICS) if cfg.truth else ["variogram"])
    needs_truth = [m for m in requested if m in TRUTH_METRICS]
    if needs_truth and not cfg.truth:
        raise MissingTruthError("{} need the true templates (--truth)".format(", ".join(needs_truth)))
    diagnostics_path = os.path.join(cfg.input, "diagnostics.json")
    diagnostics = load_json(diagnostics_path) if os.path.exists(diagnostics_path) else {}
    method = diagnostics.get("method", "unknown")
    lam = float(diagnostics.get("lambda", float("nan")))
    out = {"method": method, "lambda": lam}

    if needs_truth:
        truth_grid, truth = _truth_templates(cfg.truth)
        grid, aligned, _ = read_panel(os.path.join(cfg.input, "aligned.csv"), allow_universal=False)
        _, aligned_q, _ = read_panel(os.path.join(cfg.input, "aligned_srsf.csv"), allow_universal=False)
        if not grid.same_as(truth_grid):
            raise InvalidParameterError("aligned functions and true templates live on different grids")
        report = _evaluate_arrays(method, lam, aligned, aligned_q, truth, grid)
        _write_metrics([report], directory)
        out.update(mse=report.mse, qmse=report.qmse)
        print("{} (lambda={:g}): MSE {:.4f} QMSE {:.4f}".format(method, lam, report.mse, report.qmse))

    if "variogram" in requested:
        sites = cfg.sites or os.path.join(cfg.input, "sites.csv")
        if not os.path.exists(sites):
            raise InvalidParameterError("the template variogram needs site coordinates (--sites)")
        layout = read_sites(sites)
        grid, templates = read_templates(os.path.join(cfg.input, "templates.csv"))
        emp = template_trace_variogram(templates, layout, grid, VariogramBins.default(layout))
        write_variogram(emp, os.path.join(directory, "variogram_template.csv"))
        print("template variogram over {} bins -> {}".format(emp.n_bins, directory))
    save_json(cfg.to_dict(), os.path.join(directory, "config.json"))
    return out


def cmd_cv(cfg):
    if cfg.method not in CV_METHODS:
        raise InvalidParameterError("cv needs one of {}".format(", ".join(CV_METHODS)))
    sample = _load_sample(cfg)
    directory = ensure_dir(cfg.output_dir)
    report = cross_validate_lambda(
        sample, cfg.lambdas, cfg.method, cfg.folds, cfg.seed, cfg.reg_config(), progress=cfg.progress
    )
    _write_cv(report, directory)
    save_json(cfg.to_dict(), os.path.join(directory, "config.json"))
    for lam, value in zip(report.lambdas, report.criterion):
        print("lambda {:>10g}  CV {:.6f}".format(lam, value))
    print("selected lambda = {:g} -> {}".format(report.selected, directory))
    return report


COMMAND_FNS = {
    "simulate": cmd_simulate,
    "register": cmd_register,
    "evaluate": cmd_evaluate,
    "cv": cmd_cv,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = build_config(args)
        setup_logging(cfg.verbose)
        COMMAND_FNS[cfg.command](cfg)
    except RegistrationError as err:
        logger.error("registration failed: %s", err)
        return EXIT_INTERNAL
    except ElasticAlignError as err:
        print("error: {}".format(err), file=sys.stderr)
        return EXIT_USER
    except OSError as err:
        # unreadable inputs, unwritable outputs
        print("error: {}".format(err), file=sys.stderr)
        return EXIT_USER
    except SystemExit as err:
        # --help
        return EXIT_OK if not err.code else EXIT_USER
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

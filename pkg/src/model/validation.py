"""
K-fold cross validation of the penalty weight.

For each fold and lambda the templates are estimated on the training
observations; every held-out function is then aligned to its component's
template without penalty and the squared L2 distance between the aligned
function and the template is accumulated.
"""
import dataclasses
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import KFold

from settings import k_folds, lambda_grid, seed as default_seed
from src.model.alignment import align_pairwise
from src.model.methods import fit_panel
from src.model.spatial_registration import SpatialRegConfig, initialize
from src.model.warping import SampledFunction, Srsf, compose_function, l2_distance, srsf_values
from src.utils.errors import InvalidInputError, InvalidParameterError
from src.utils.utils import parallel_map

logger = logging.getLogger(__name__)

CV_METHODS = ("componentwise", "universal", "spatial")


@dataclass(frozen=True, eq=False)
class CvReport:
    """
    Params:
        lambdas: the (sorted, unique) lambda grid
        criterion: CV criterion per lambda
        fold_criteria: (folds, L) per-fold sums before normalisation
        selected: argmin lambda (first minimum in grid order)
        folds: validation indices of every fold
    """

    method: str
    lambdas: np.ndarray
    criterion: np.ndarray
    fold_criteria: np.ndarray
    selected: float
    folds: Tuple[np.ndarray, ...]
    seed: int

    def to_frame(self):
        return pd.DataFrame({"lambda": self.lambdas, "criterion": self.criterion})

    def to_dict(self):
        return {
            "method": self.method,
            "lambdas": self.lambdas.tolist(),
            "criterion": self.criterion.tolist(),
            "fold_criteria": self.fold_criteria.tolist(),
            "selected_lambda": self.selected,
            "folds": [f.tolist() for f in self.folds],
            "seed": self.seed,
        }


def validation_error(train_fit, sample, idx, cfg):
    """
    sum over held-out i and all j of ||f_ij o gamma_ij - mu_j||^2 with gamma_ij
    the unpenalized alignment of Q(f_ij) to Q(mu_j)
    """
    grid = sample.grid
    total = 0.0
    for j in range(sample.K):
        mu = SampledFunction(grid, train_fit.function_templates[j])
        q_mu = Srsf(grid, srsf_values(mu.values, grid), mu.values[0])
        for i in idx:
            f = sample.function(i, j)
            warp = align_pairwise(q_mu, sample.srsf(i, j), cfg.dp).warp
            total += l2_distance(compose_function(f, warp), mu) ** 2
    return total


def _check_grid(lambdas):
    lambdas = np.unique(np.asarray(lambdas, dtype=float))
    if lambdas.size == 0:
        raise InvalidParameterError("the lambda grid is empty")
    if not np.all(np.isfinite(lambdas)) or np.any(lambdas < 0):
        raise InvalidParameterError("lambda values must be finite and >= 0")
    return lambdas


def cross_validate_lambda(
    sample,
    lambdas=lambda_grid,
    method="spatial",
    folds=k_folds,
    seed=default_seed,
    cfg=None,
    progress=False,
):
    """
    Selects lambda by K-fold cross validation
    Params:
        sample: MvSample
        lambdas: candidate lambda values (order does not matter)
        method: componentwise | universal | spatial
        folds: number of folds
        seed: fold shuffling seed
        cfg: SpatialRegConfig (dp, iteration caps, n_threads)
        progress: tqdm bar over fold x lambda cells
    Returns:
        CvReport
    """
    if method not in CV_METHODS:
        raise InvalidParameterError("cross validation needs one of {}".format(", ".join(CV_METHODS)))
    if folds < 2:
        raise InvalidParameterError("at least 2 folds are needed")
    if sample.n < folds:
        raise InvalidInputError("{} observations cannot fill {} folds".format(sample.n, folds))
    cfg = cfg or SpatialRegConfig()
    lambdas = _check_grid(lambdas)

    kfold = KFold(n_splits=folds, shuffle=True, random_state=seed)
    splits = list(kfold.split(np.arange(sample.n)))
    for k, (train_idx, dev_idx) in enumerate(splits):
        if len(dev_idx) < 2 or len(train_idx) < 2:
            raise InvalidInputError("fold {} has fewer than 2 observations".format(k))

    # the spatial initialization does not depend on lambda: once per fold
    inner_cfg = dataclasses.replace(cfg, n_threads=1, progress=False)
    states = [None] * folds
    if method == "spatial":
        states = parallel_map(
            lambda split: initialize(sample.subset(split[0]), inner_cfg), splits, cfg.n_threads
        )

    def cell(args):
        k, lam = args
        train_idx, dev_idx = splits[k]
        fit, _ = fit_panel(sample.subset(train_idx), method, lam, inner_cfg, states[k])
        return validation_error(fit, sample, dev_idx, cfg)

    cells = [(k, lam) for k in range(folds) for lam in lambdas]
    values = parallel_map(cell, cells, cfg.n_threads, progress=progress, desc="cv")
    fold_criteria = np.array(values).reshape(folds, lambdas.size)
    criterion = fold_criteria.sum(axis=0) / (folds * sample.K * sample.n)
    selected = float(lambdas[int(np.argmin(criterion))])
    logger.info("cross validation selected lambda = %g", selected)
    return CvReport(
        method=method,
        lambdas=lambdas,
        criterion=criterion,
        fold_criteria=fold_criteria,
        selected=selected,
        folds=tuple(np.sort(dev) for _, dev in splits),
        seed=int(seed),
    )

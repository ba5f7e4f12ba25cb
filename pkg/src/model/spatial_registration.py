"""
Spatially penalized multiple registration of multivariate functional data.

Every component's warp is penalised towards the kriged prediction of its warp
SRSF from the other components of the same observation, with kriging weights
fixed once from each observation's phase trace-variogram. Warps are updated
component by component (Gauss-Seidel) in an inner loop, templates in an outer
loop.
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from tqdm import tqdm

from settings import (
    outer_tol,
    inner_tol,
    max_outer,
    max_inner,
    init_template as default_init_template,
    multiple_tol,
    multiple_max_iter,
    default_lambda,
)
from src.model.alignment import DpConfig, align_pairwise_penalized
from src.model.losses import lattice_objective
from src.model.registration import (
    mean_srsf,
    center_warps,
    panel_fit,
    register_componentwise,
    register_multiple,
)
from src.model.spatial import (
    EmpiricalVariogram,
    KrigingWeights,
    VariogramBins,
    VariogramModel,
    empirical_phase_variogram,
    fit_or_degenerate,
    krige_psi,
    kriging_weights,
)
from src.model.warping import Srsf, Warp, WarpSrsf, l2_norm, warp_action, warp_to_psi
from src.utils.errors import ElasticAlignError, InvalidInputError, InvalidParameterError, RegistrationError
from src.utils.utils import parallel_map

logger = logging.getLogger(__name__)

INIT_TEMPLATES = ("aligned", "raw_mean")
SWEEP_SLACK = 1e-12


@dataclass(frozen=True)
class SpatialRegConfig:
    """
    Params:
        lam: weight of the spatial penalty
        eps1: relative outer tolerance on sum_j ||mu_j^(z) - mu_j^(z-1)||
        eps2: inner tolerance on the per-observation mean squared psi change
        max_outer / max_inner: iteration caps
        dp: DpConfig of every pairwise solve
        init_template: "aligned" starts from componentwise templates, "raw_mean" from plain SRSF means
        stopping: False runs all max_outer x max_inner iterations
        n_threads: workers across observations
        progress: tqdm bar over outer iterations
    """

    lam: float = default_lambda
    eps1: float = outer_tol
    eps2: float = inner_tol
    max_outer: int = max_outer
    max_inner: int = max_inner
    dp: DpConfig = field(default_factory=DpConfig)
    init_template: str = default_init_template
    stopping: bool = True
    n_threads: Optional[int] = None
    progress: bool = False
    init_max_iter: int = multiple_max_iter
    init_tol: float = multiple_tol

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise InvalidParameterError("lambda must be a finite value >= 0")
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise InvalidParameterError("tolerances must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise InvalidParameterError("iteration caps must be >= 1")
        if self.init_template not in INIT_TEMPLATES:
            raise InvalidParameterError("init_template must be one of {}".format(INIT_TEMPLATES))


@dataclass(frozen=True, eq=False)
class InitState:
    """
    Everything fixed before the iterations start
    Params:
        templates: K starting SRSF templates
        phases: (n, K) cross-component warps from per-observation registration
        phase_psis: their warp SRSFs
        variograms: per-observation EmpiricalVariogram
        models: per-observation VariogramModel
        weights: per-observation KrigingWeights
    """

    templates: Tuple[Srsf, ...]
    phases: Tuple[Tuple[Warp, ...], ...]
    phase_psis: Tuple[Tuple[WarpSrsf, ...], ...]
    variograms: Tuple[EmpiricalVariogram, ...]
    models: Tuple[VariogramModel, ...]
    weights: Tuple[KrigingWeights, ...]

    def initial_psis(self):
        grid = self.templates[0].grid
        one = WarpSrsf.one(grid)
        return [[one] * len(self.templates) for _ in range(len(self.weights))]


@dataclass(frozen=True, eq=False)
class SpatialRegResult:
    """
    Params:
        templates: K SRSF templates (per component re-centred)
        warps / aligned: (n, K) warps and aligned SRSFs
        targets: (n, K) kriged targets of the final warps, before centring
        state: InitState holding weights, variograms and cross-component phases
        cost_trace: mean per-component penalized objective after every template update,
            non-increasing since sweeps that raise it are reverted
        initial_cost: the same objective at the starting point
        delta_trace: (cumulative inner iteration, delta, event) rows
        template_changes: relative template change per outer iteration
        inner_iterations: (outer, n) inner iteration counts
        converged: outer loop met eps1
    """

    templates: Tuple[Srsf, ...]
    warps: Tuple[Tuple[Warp, ...], ...]
    aligned: Tuple[Tuple[Srsf, ...], ...]
    targets: Tuple[Tuple[WarpSrsf, ...], ...]
    state: InitState
    cost_trace: Tuple[float, ...]
    initial_cost: float
    delta_trace: Tuple[Tuple[int, float, str], ...]
    template_changes: Tuple[float, ...]
    inner_iterations: np.ndarray
    outer_iterations: int
    converged: bool
    lam: float


@contextmanager
def _stage(name, **context):
    try:
        yield
    except RegistrationError:
        raise
    except (ElasticAlignError, ArithmeticError, ValueError, np.linalg.LinAlgError) as err:
        raise RegistrationError(str(err), stage=name, context=context) from err


def _check_sample(sample):
    if sample.n < 2 or sample.K < 2:
        raise InvalidInputError("spatial registration needs n >= 2 and K >= 2")
    if sample.layout is None:
        raise InvalidInputError("spatial registration needs site coordinates")


def initialize(sample, cfg=None, bins=None):
    """
    Starting templates, cross-component phases and the fixed kriging weights
    Params:
        sample: MvSample with a layout
        cfg: SpatialRegConfig
        bins: VariogramBins shared by all observations (None -> default)
    Returns:
        InitState
    """
    cfg = cfg or SpatialRegConfig()
    _check_sample(sample)
    bins = bins or VariogramBins.default(sample.layout)

    with _stage("componentwise"):
        if cfg.init_template == "aligned":
            results = register_componentwise(
                sample, 0.0, cfg.dp, n_threads=cfg.n_threads, max_iter=cfg.init_max_iter, tol=cfg.init_tol
            )
            templates = tuple(r.template for r in results)
        else:
            templates = tuple(mean_srsf(sample.component_srsfs(j)) for j in range(sample.K))

    def observation_phase(i):
        with _stage("cross-component", i=i):
            qs = [sample.srsf(i, j) for j in range(sample.K)]
            result = register_multiple(qs, 0.0, cfg.dp, max_iter=cfg.init_max_iter, tol=cfg.init_tol, n_threads=1)
            psis = tuple(warp_to_psi(w) for w in result.warps)
        with _stage("variogram", i=i):
            emp = empirical_phase_variogram(psis, sample.layout, bins)
            model = fit_or_degenerate(emp)
        with _stage("kriging", i=i):
            weights = kriging_weights(model, sample.layout)
        return result.warps, psis, emp, model, weights

    per_obs = parallel_map(observation_phase, range(sample.n), cfg.n_threads)
    degenerate = sum(1 for o in per_obs if o[3].degenerate)
    if degenerate:
        logger.info("%d of %d observations have a flat phase variogram (uniform weights)", degenerate, sample.n)
    return InitState(
        templates=templates,
        phases=tuple(o[0] for o in per_obs),
        phase_psis=tuple(o[1] for o in per_obs),
        variograms=tuple(o[2] for o in per_obs),
        models=tuple(o[3] for o in per_obs),
        weights=tuple(o[4] for o in per_obs),
    )


def convergence_delta(history):
    """
    delta(k) = 1/(Kn) sum_i sum_j ||psi_ij^(k) - psi_ij^(k-1)||^2
    Params:
        history: sequence of psi states, each (n, K) nested WarpSrsf or an (n, K, m) array
    Returns:
        list of len(history) - 1 deltas
    """
    if len(history) < 2:
        raise InvalidInputError("convergence delta needs at least two states")
    grid = None
    states = []
    for state in history:
        if isinstance(state, np.ndarray):
            states.append(state)
        else:
            grid = state[0][0].grid
            states.append(np.array([[p.values for p in row] for row in state]))
    if grid is None:
        raise InvalidInputError("array states need a grid; pass WarpSrsf objects")
    deltas = []
    for prev, cur in zip(states[:-1], states[1:]):
        n, K = cur.shape[:2]
        total = sum(l2_norm(cur[i, j] - prev[i, j], grid) ** 2 for i in range(n) for j in range(K))
        deltas.append(total / (n * K))
    return deltas


def _kriged_target(weights, psis, j):
    row = weights.row(j)
    return krige_psi(row.weights, [psis[l] for l in row.neighbors])


def _kriged_targets(weights, psis):
    return [_kriged_target(weights, psis, j) for j in range(len(psis))]


def _observation_cost(templates, qs_i, warps_i, psis_i, weights, lam):
    """Penalized objective of one observation, targets kriged from its current psis"""
    targets = _kriged_targets(weights, psis_i) if lam > 0 else [None] * len(psis_i)
    return sum(
        lattice_objective(template, q, warp, lam, target)
        for template, q, warp, target in zip(templates, qs_i, warps_i, targets)
    )

def _penalized_cost(templates, qs, warps, targets, lam):
    n, K = len(warps), len(templates)
    total = 0.0
    for j in range(K):
        for i in range(n):
            total += lattice_objective(templates[j], qs[i][j], warps[i][j], lam, targets[i][j])
    return total / K


def register_spatial(sample, cfg=None, state=None):
    """
    Spatially penalized registration
    Params:
        sample: MvSample with a layout
        cfg: SpatialRegConfig
        state: InitState from initialize (computed when None)
    Returns:
        SpatialRegResult
    """
    cfg = cfg or SpatialRegConfig()
    _check_sample(sample)
    state = state or initialize(sample, cfg)
    n, K = sample.n, sample.K
    lam = float(cfg.lam)
    qs = [[sample.srsf(i, j) for j in range(K)] for i in range(n)]
    grid = sample.grid
    identity = Warp.identity(grid)

    templates = list(state.templates)
    psis = state.initial_psis()
    warps = [[identity] * K for _ in range(n)]
    targets = [[WarpSrsf.one(grid)] * K for _ in range(n)]
    initial_cost = _penalized_cost(templates, qs, warps, targets, lam)

    def inner(args):
        i, z = args
        psi_i = list(psis[i])
        warps_i = list(warps[i])
        best = _observation_cost(templates, qs[i], warps_i, psi_i, state.weights[i], lam)
        deltas = []
        for k in range(1, cfg.max_inner + 1):
            previous, previous_warps = list(psi_i), list(warps_i)
            for j in range(K):
                with _stage("inner", i=i, j=j, z=z, k=k):
                    target = _kriged_target(state.weights[i], psi_i, j)
                    res = align_pairwise_penalized(templates[j], qs[i][j], lam, target, cfg.dp)
                if not np.isfinite(res.cost) or not np.all(np.isfinite(res.warp.values)):
                    raise RegistrationError("non-finite alignment cost", stage="inner", context=dict(i=i, j=j, z=z, k=k))
                warps_i[j] = res.warp
                psi_i[j] = warp_to_psi(res.warp)
            with _stage("inner", i=i, z=z, k=k):
                cost = _observation_cost(templates, qs[i], warps_i, psi_i, state.weights[i], lam)
            if cost > best + SWEEP_SLACK * abs(best):
                # moving targets can make a sweep worse; keep the previous warps
                logger.debug("observation %d, outer %d: sweep %d raised the cost, reverted", i, z, k)
                psi_i, warps_i = previous, previous_warps
                # later sweeps would repeat this one
                deltas.extend([0.0] * (1 if cfg.stopping else cfg.max_inner - k + 1))
                break
            best = cost
            delta = sum(l2_norm(psi_i[j].values - previous[j].values, grid) ** 2 for j in range(K)) / K
            deltas.append(delta)
            if cfg.stopping and delta < cfg.eps2:
                break
        return psi_i, warps_i, _kriged_targets(state.weights[i], psi_i), deltas

    cost_trace = []
    delta_trace = []
    template_changes = []
    inner_counts = []
    cumulative = 0
    converged = False
    outer = range(1, cfg.max_outer + 1)
    if cfg.progress:
        outer = tqdm(outer, desc="outer", leave=False)
    z = 0
    for z in outer:
        per_obs = parallel_map(inner, [(i, z) for i in range(n)], cfg.n_threads)
        longest = max(len(o[3]) for o in per_obs)
        inner_counts.append([len(o[3]) for o in per_obs])
        for k in range(longest):
            # observations that already stopped contribute no change
            delta = sum(o[3][k] for o in per_obs if k < len(o[3])) / n
            cumulative += 1
            event = "after_update" if (k == 0 and z > 1) else "inner"
            delta_trace.append((cumulative, float(delta), event))
        for i, (psi_i, warps_i, targets_i, _) in enumerate(per_obs):
            psis[i], warps[i], targets[i] = psi_i, warps_i, targets_i

        with _stage("template", z=z):
            new_templates = []
            for j in range(K):
                aligned_j = [warp_action(qs[i][j], warps[i][j], scheme="cellwise") for i in range(n)]
                new_templates.append(mean_srsf(aligned_j))
            scale = sum(l2_norm(t.values, grid) for t in templates)
            change = sum(l2_norm(new.values - old.values, grid) for new, old in zip(new_templates, templates))
            change = change / scale if scale > 0 else change
            templates = new_templates
        cost = _penalized_cost(templates, qs, warps, targets, lam)
        if not np.isfinite(cost):
            raise RegistrationError("non-finite objective", stage="template", context=dict(z=z))
        cost_trace.append(cost)
        template_changes.append(float(change))
        logger.debug("outer %d: cost %.6g, template change %.3g", z, cost, change)
        if change <= cfg.eps1:
            converged = True
            if cfg.stopping:
                break
    if not converged:
        logger.warning("spatial registration hit %d outer iterations without converging", cfg.max_outer)

    final_warps, final_aligned = [[None] * K for _ in range(n)], [[None] * K for _ in range(n)]
    final_templates = []
    for j in range(K):
        centered, aligned_j, template_j = center_warps([qs[i][j] for i in range(n)], [warps[i][j] for i in range(n)])
        for i in range(n):
            final_warps[i][j] = centered[i]
            final_aligned[i][j] = aligned_j[i]
        final_templates.append(template_j)

    return SpatialRegResult(
        templates=tuple(final_templates),
        warps=tuple(tuple(row) for row in final_warps),
        aligned=tuple(tuple(row) for row in final_aligned),
        targets=tuple(tuple(row) for row in targets),
        state=state,
        cost_trace=tuple(cost_trace),
        initial_cost=initial_cost,
        delta_trace=tuple(delta_trace),
        template_changes=tuple(template_changes),
        inner_iterations=np.array(inner_counts, dtype=int),
        outer_iterations=z,
        converged=converged,
        lam=lam,
    )


def fit_spatial(sample, cfg=None, state=None):
    """register_spatial arranged as a PanelFit"""
    cfg = cfg or SpatialRegConfig()
    result = register_spatial(sample, cfg, state)
    diagnostics = {
        "method": "spatial",
        "lambda": result.lam,
        "outer_iterations": result.outer_iterations,
        "inner_iterations": result.inner_iterations.tolist(),
        "cumulative_iterations": len(result.delta_trace),
        "converged": bool(result.converged),
        "initial_cost": result.initial_cost,
        "cost_trace": list(result.cost_trace),
        "delta_trace": [list(row) for row in result.delta_trace],
        "template_changes": list(result.template_changes),
        "degenerate_variograms": [bool(m.degenerate) for m in result.state.models],
        "variogram_models": [
            {"nugget": m.nugget, "sill": m.sill, "range": m.range, "degenerate": bool(m.degenerate)}
            for m in result.state.models
        ],
    }
    fit = panel_fit("spatial", result.lam, sample, result.warps, result.aligned, result.templates, diagnostics)
    return fit, result

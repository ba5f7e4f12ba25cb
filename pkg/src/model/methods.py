import dataclasses

from src.model.registration import fit_componentwise, fit_none, fit_universal
from src.model.spatial_registration import SpatialRegConfig, fit_spatial
from src.utils.errors import InvalidParameterError

METHODS = ("none", "componentwise", "universal", "spatial")


def fit_panel(sample, method, lam=0.0, cfg=None, state=None):
    """
    Runs one registration method on a panel
    Params:
        sample: MvSample
        method: one of METHODS
        lam: penalty weight (identity target for the baselines, kriged target for spatial)
        cfg: SpatialRegConfig; its dp and n_threads are used by every method
        state: spatial InitState to reuse (spatial only)
    Returns:
        (PanelFit, SpatialRegResult or None)
    """
    if method not in METHODS:
        raise InvalidParameterError("method must be one of {}".format(", ".join(METHODS)))
    cfg = cfg or SpatialRegConfig()
    if method == "none":
        return fit_none(sample), None
    if method == "componentwise":
        return fit_componentwise(sample, lam, cfg.dp, cfg.n_threads), None
    if method == "universal":
        return fit_universal(sample, lam, cfg.dp, cfg.n_threads), None
    return fit_spatial(sample, dataclasses.replace(cfg, lam=lam), state)

"""Component regressors: random forest, gradient boosting, SVR and OLS."""

from .base import FittedModel, load_model, model_from_json, predict, save_model
from .gbm import STATEWIDE_GBM_DIRECT, STATEWIDE_GBM_INDIRECT, GbmParams, GradientBoostingModel, fit_gbm
from .ols import OLSModel, fit_ols
from .rf import STATEWIDE_RF_DIRECT, STATEWIDE_RF_INDIRECT, RandomForestModel, RfParams, fit_rf
from .svr import STATEWIDE_SVR_DIRECT, SupportVectorModel, SvrParams, fit_svr

PARAM_TYPES = {"rf": RfParams, "gbm": GbmParams, "svr": SvrParams}


def fit(kind: str, train, params, **kw):
    if kind == "rf":
        return fit_rf(train, params, **kw)
    if kind == "gbm":
        return fit_gbm(train, params)
    if kind == "svr":
        return fit_svr(train, params)
    raise ValueError(f"unknown learner kind {kind!r}")


__all__ = [
    "FittedModel", "load_model", "model_from_json", "predict", "save_model",
    "GbmParams", "GradientBoostingModel", "fit_gbm", "STATEWIDE_GBM_DIRECT", "STATEWIDE_GBM_INDIRECT",
    "OLSModel", "fit_ols",
    "RfParams", "RandomForestModel", "fit_rf", "STATEWIDE_RF_DIRECT", "STATEWIDE_RF_INDIRECT",
    "SvrParams", "SupportVectorModel", "fit_svr", "STATEWIDE_SVR_DIRECT",
    "PARAM_TYPES", "fit",
]

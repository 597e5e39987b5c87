"""Base learners: CART, random forest, gradient boosting, elastic net, tuning."""

from .boost import BoostConfig, BoostModel, fit_boost, logistic_loss, negative_gradient, sigmoid
from .elastic_net import (ConvergenceError, ElasticNetModel, fit_elastic_net, fit_path,
                          kkt_violation, lambda_max, lambda_path)
from .forest import ForestModel, fit_forest, predict_oob
from .tree import TreeModel, fit_tree
from .tuning import LearnerSpec, LinearModel, MeanModel, fit_learner, fit_linear, tune

__all__ = [
    "BoostConfig", "BoostModel", "ConvergenceError", "ElasticNetModel", "ForestModel",
    "LearnerSpec", "LinearModel", "MeanModel", "TreeModel", "fit_boost", "fit_elastic_net",
    "fit_forest", "fit_learner", "fit_linear", "fit_path", "fit_tree", "kkt_violation",
    "lambda_max", "lambda_path", "logistic_loss", "negative_gradient", "predict_oob",
    "sigmoid", "tune",
]

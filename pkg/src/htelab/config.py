"""Default hyperparameters and grids.

These are the pre-specified analysis settings; every run echoes the resolved
values into its outputs.
"""

from __future__ import annotations

from .learners import LearnerSpec

BOOST_GRID = {"max_depth": [2, 3, 5], "learning_rate": [0.01, 0.1], "n_rounds": [100, 500]}
BOOST_FIXED = {"min_leaf": 5, "subsample": 1.0, "colsample": 1.0}
TREE_DEPTH_GRID = [2, 3, 5]
N_LAMBDA = 50
ENET_ALPHA = 0.5
ENET_CV_FOLDS = 10
TUNE_CV_FOLDS = 5
CROSSFIT_FOLDS = 5
PROPENSITY_EPS = 0.01
CAUSAL_TREE = {"min_leaf": 25, "max_depth": 6, "honest_fraction": 0.5}
PRIM = {"alpha": 0.05, "min_support": 0.1, "max_boxes": 3}
GUO_HE_R = 0.25


def boost_spec(cv_folds: int = TUNE_CV_FOLDS, grid: dict | None = None, **fixed) -> LearnerSpec:
    """Tuned gradient boosting for continuous targets."""
    return LearnerSpec("boost", {**BOOST_FIXED, **fixed},
                       dict(BOOST_GRID if grid is None else grid), cv_folds, "mse")


def enet_spec(binary: bool = False, alpha: float = ENET_ALPHA,
              cv_folds: int = ENET_CV_FOLDS) -> LearnerSpec:
    """Elastic net with lambda chosen from the data-driven path by CV."""
    return LearnerSpec("elastic_net", {"alpha": alpha, "n_lambda": N_LAMBDA},
                       {"lam": "path"}, cv_folds, "logloss" if binary else "mse")


def propensity_spec() -> LearnerSpec:
    return enet_spec(binary=True)


def augmentation_spec() -> LearnerSpec:
    return enet_spec(binary=False)


def tree_spec(cv_folds: int = TUNE_CV_FOLDS) -> LearnerSpec:
    return LearnerSpec("tree", {"min_leaf": 5}, {"max_depth": TREE_DEPTH_GRID}, cv_folds)


def spec_from_name(name: str) -> LearnerSpec:
    """Named default specs accepted by configs and the CLI."""
    table = {
        "boost": boost_spec, "enet": enet_spec, "elastic_net": enet_spec, "tree": tree_spec,
        "linear": lambda: LearnerSpec("linear"),
        "forest": lambda: LearnerSpec("forest", {"n_trees": 300, "min_leaf": 5}),
        "logistic_enet": propensity_spec,
    }
    if name not in table:
        raise KeyError(f"unknown learner {name!r}; choose from {sorted(table)}")
    return table[name]()


def defaults_dict() -> dict:
    return {
        "boost_grid": BOOST_GRID, "boost_fixed": BOOST_FIXED, "n_lambda": N_LAMBDA,
        "enet_alpha": ENET_ALPHA, "enet_cv_folds": ENET_CV_FOLDS, "tune_cv_folds": TUNE_CV_FOLDS,
        "crossfit_folds": CROSSFIT_FOLDS, "propensity_eps": PROPENSITY_EPS,
        "causal_tree": CAUSAL_TREE, "prim": PRIM, "guo_he_r": GUO_HE_R,
    }

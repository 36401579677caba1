"""Recurrent deep latent variable model for longitudinal multi-view data.

Time-indexed loading matrices map a shared latent state onto each group
(view) of features; a group-lasso penalty, applied through exact proximal
updates, switches whole latent-to-group columns off.
"""

__version__ = "0.1.0"

from .autodiff import ParamStore, Tensor, backward, finite_diff_check, no_grad
from .data import (
    LongitudinalDataset,
    SplitSpec,
    generate_one_bar,
    load_wide_csv,
    make_batches,
    save_wide_csv,
    split_dataset,
)
from .evaluation import (
    export_heatmap_csv,
    lambda_sweep,
    mse_test,
    sparsity_report,
    test_log_likelihood,
    top_features_per_factor,
)
from .model import DlgfaModel, GaussianParams, GroupSpec, LoadingMatrices, ModelConfig
from .objective import LossBreakdown, collapsed_elbo, group_lasso_penalty, kl_diag_gaussian, logpdf_diag_gaussian
from .optim import AdamState, OptimConfig, TrainHistory, adam_step, fit, has_converged, prox_group_columns, train_epoch

__all__ = [
    "AdamState",
    "DlgfaModel",
    "GaussianParams",
    "GroupSpec",
    "LoadingMatrices",
    "LongitudinalDataset",
    "LossBreakdown",
    "ModelConfig",
    "OptimConfig",
    "ParamStore",
    "SplitSpec",
    "Tensor",
    "TrainHistory",
    "adam_step",
    "backward",
    "collapsed_elbo",
    "export_heatmap_csv",
    "finite_diff_check",
    "fit",
    "generate_one_bar",
    "group_lasso_penalty",
    "has_converged",
    "kl_diag_gaussian",
    "lambda_sweep",
    "load_wide_csv",
    "logpdf_diag_gaussian",
    "make_batches",
    "mse_test",
    "no_grad",
    "prox_group_columns",
    "save_wide_csv",
    "sparsity_report",
    "split_dataset",
    "test_log_likelihood",
    "top_features_per_factor",
    "train_epoch",
]

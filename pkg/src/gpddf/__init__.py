"""Decentralized GP data fusion with agent-centric support sets.

Agents summarise their observations against small support sets, move those
summaries between support sets when they change area, and fuse everyone's
summaries into predictions that match centralized sparse GP approximations.
"""

from .kernel import (Dataset, Hyperparams, NumericError, PredictiveDistribution, cov_matrix,
                     full_gp_predict, full_gp_predict_many, se_cov)
from .summaries import (GlobalSummary, LocalSummary, PriorSummary, SupportSet,
                        aggregate_global, assimilate, build_local_summary, local_to_prior,
                        prior_to_local, summary_from_bytes, summary_to_bytes)
from .transfer import (cluster_assign, loss_bound, transfer_local, transfer_prior)
from .predictors import (gpddf_predict, gpddf_predict_many, gpddfplus_predict,
                         gpddfplus_predict_many, local_gp_predict, pic_predict,
                         pic_predict_many, pitc_predict, pitc_predict_many)
from .fleet import (AreaPartition, Fleet, SimConfig, make_support_set, memory_accounting)
from .hyperlearn import learn_hyperparams, log_marginal_area
from .bench import (ExperimentConfig, generate_gp_field, rmse, run_experiment, summarize_sweep,
                    sweep)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Hyperparams",
    "NumericError",
    "PredictiveDistribution",
    "cov_matrix",
    "full_gp_predict",
    "full_gp_predict_many",
    "se_cov",
    "GlobalSummary",
    "LocalSummary",
    "PriorSummary",
    "SupportSet",
    "aggregate_global",
    "assimilate",
    "build_local_summary",
    "local_to_prior",
    "prior_to_local",
    "summary_from_bytes",
    "summary_to_bytes",
    "cluster_assign",
    "loss_bound",
    "transfer_local",
    "transfer_prior",
    "gpddf_predict",
    "gpddf_predict_many",
    "gpddfplus_predict",
    "gpddfplus_predict_many",
    "local_gp_predict",
    "pic_predict",
    "pic_predict_many",
    "pitc_predict",
    "pitc_predict_many",
    "AreaPartition",
    "Fleet",
    "SimConfig",
    "make_support_set",
    "memory_accounting",
    "learn_hyperparams",
    "log_marginal_area",
    "ExperimentConfig",
    "generate_gp_field",
    "rmse",
    "run_experiment",
    "summarize_sweep",
    "sweep",
]

"""PAC-Bayesian bounds for multiclass domain adaptation.

The package estimates the divergence terms that appear in target-risk bounds
(an H-Delta-H divergence between two model classes and a model-dependent
h-Delta-H divergence), assembles full bound reports for Gibbs predictors, and
ships exact finite-class oracles so every estimator can be checked against
brute force.

Typical use::

    from pbadapt import Architecture, SyntheticSpec, Shift, make_synthetic_task
    from pbadapt import hdh_divergence

    task = make_synthetic_task(SyntheticSpec(3, 2, 200, Shift("rotate", angle=30), seed=0))
    est = hdh_divergence(task.source, task.target_features, Architecture.linear(2, 3))
"""

from .bounds import (
    BoundConfigs,
    BoundReport,
    assemble_cor53,
    assemble_thm31,
    assemble_thm52,
    lambda_hoeffding,
    pinsker_penalty,
)
from .data import (
    AdaptationTask,
    LabeledSample,
    Shift,
    SyntheticSpec,
    UnlabeledSample,
    empirical_risk,
    error_gap,
    load_csv,
    make_synthetic_task,
)
from .divergence import (
    DivergenceEstimate,
    FiniteClassSpec,
    exact_h_delta_h,
    exact_hdh,
    germain_terms,
    h_delta_h_divergence,
    hdh_divergence,
    mc_divergence_over_gibbs,
    restricted_divergence,
    second_best_labeler,
)
from .errors import PbAdaptError
from .gibbs import (
    GaussianGibbs,
    GibbsTrainSpec,
    gibbs_risk_mc,
    kl_divergence,
    make_prior,
    train_dann_gibbs,
    train_gibbs,
)
from .models import Architecture, ScoredModel, init_model
from .training import DannConfig, SurrogateConfig, TrainConfig, dann_train, train_erm

__version__ = "0.1.0"

__all__ = [
    "AdaptationTask",
    "Architecture",
    "BoundConfigs",
    "BoundReport",
    "DannConfig",
    "DivergenceEstimate",
    "FiniteClassSpec",
    "GaussianGibbs",
    "GibbsTrainSpec",
    "LabeledSample",
    "PbAdaptError",
    "ScoredModel",
    "Shift",
    "SurrogateConfig",
    "SyntheticSpec",
    "TrainConfig",
    "UnlabeledSample",
    "assemble_cor53",
    "assemble_thm31",
    "assemble_thm52",
    "dann_train",
    "empirical_risk",
    "error_gap",
    "exact_h_delta_h",
    "exact_hdh",
    "germain_terms",
    "h_delta_h_divergence",
    "hdh_divergence",
    "init_model",
    "gibbs_risk_mc",
    "kl_divergence",
    "lambda_hoeffding",
    "load_csv",
    "make_prior",
    "make_synthetic_task",
    "mc_divergence_over_gibbs",
    "pinsker_penalty",
    "restricted_divergence",
    "second_best_labeler",
    "train_erm",
    "train_dann_gibbs",
    "train_gibbs",
]

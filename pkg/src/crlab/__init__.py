"""crlab: a desk-scale domain-generalization laboratory.

Synthetic benchmark families with controllable spurious correlation, a small
classifier with exact hand-written gradients, nine pair-consistency training
penalties, a seeded training/tuning harness, and an exact enumeration-based
optimum to measure every model against.
"""
from .cld import (
    Benchmark,
    DomainSpec,
    Example,
    ExampleBatch,
    FamilySpec,
    InvariantPredictor,
    LatentPair,
    SSPair,
    SpurCorrConfig,
    bayes_accuracy,
    bayes_oracle,
    check_support_condition,
    invariant_predictor_ood_loss,
    make_spurcorr_family,
    make_ss_pair,
    sample_batch,
    sample_example,
    support_of,
    uniform_style_distribution,
)
from .estimator import PairConsistencyClassifier
from .metrics import (
    EvalReport,
    HeadWeightHistogram,
    evaluate,
    head_weight_histogram,
    invariance_score,
    macro_f1,
)
from .network import ModelParams, backward, forward, init_params, predict, sgd_step
from .penalties import (
    VALID_KINDS,
    PairPenalty,
    combined_objective,
    feature_matching,
    group_variance,
    js_divergence,
    kl_divergence,
    logit_attribution_matching,
    logit_matching,
    target_logit_matching,
    target_probability_matching,
)
from .training import (
    DEFAULT_LAMBDA_GRID,
    METHODS,
    RunRecord,
    TrainConfig,
    train,
    train_with_tuning,
    tune_lambda,
)
from .validation import ConfigError

__version__ = "0.1.0"

__all__ = [
    "Benchmark",
    "ConfigError",
    "DEFAULT_LAMBDA_GRID",
    "DomainSpec",
    "EvalReport",
    "Example",
    "ExampleBatch",
    "FamilySpec",
    "HeadWeightHistogram",
    "InvariantPredictor",
    "LatentPair",
    "METHODS",
    "ModelParams",
    "PairConsistencyClassifier",
    "PairPenalty",
    "RunRecord",
    "SSPair",
    "SpurCorrConfig",
    "TrainConfig",
    "VALID_KINDS",
    "backward",
    "bayes_accuracy",
    "bayes_oracle",
    "check_support_condition",
    "combined_objective",
    "evaluate",
    "feature_matching",
    "forward",
    "group_variance",
    "head_weight_histogram",
    "init_params",
    "invariance_score",
    "invariant_predictor_ood_loss",
    "js_divergence",
    "kl_divergence",
    "logit_attribution_matching",
    "logit_matching",
    "macro_f1",
    "make_spurcorr_family",
    "make_ss_pair",
    "predict",
    "sample_batch",
    "sample_example",
    "sgd_step",
    "support_of",
    "target_logit_matching",
    "target_probability_matching",
    "train",
    "train_with_tuning",
    "tune_lambda",
    "uniform_style_distribution",
]

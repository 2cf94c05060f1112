"""Noisy-label regression via contrastive fragment pairing and clean-sample selection."""

from .config import ExperimentConfig, NetConfig
from .data import (
    Dataset,
    NoiseSpec,
    Sample,
    generate_synthetic,
    inject_gaussian_noise,
    inject_symmetric_noise,
    load_csv,
    split_dataset,
    write_csv,
    write_jsonl,
)
from .experts import (
    ExpertEnsemble,
    FeatureBank,
    build_feature_bank,
    classify_pair,
    init_ensemble,
    knn_classify,
    train_experts_epoch,
)
from .fragments import (
    FragmentationScheme,
    JitteredScheme,
    Pairing,
    fragment_edge_weights,
    fragment_labels,
    jitter_scheme,
    jittered_membership,
    list_perfect_matchings,
    max_jitter,
    select_contrastive_pairing,
)
from .metrics import MetricsReport, error_residual_ratio, mae, mrae, selection_rate
from .net import Net, NetSpec, forward, forward_batch, gradient_check, init_net, load_net, save_net, train_step
from .pipeline import (
    RunResult,
    compare_pairings,
    run_experiment,
    run_noise_free_reference,
)
from .selection import (
    SelectionOutcome,
    fragment_prior,
    neighborhood_agreement,
    select_clean,
    selection_probability,
    self_agreement_pred,
    self_agreement_regr,
    self_agreement_repr,
)

__version__ = "0.1.0"

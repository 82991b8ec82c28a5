"""Latent uncertainty representation heads over frozen latent features.

Thin Python surface over the C++ core: dataset generation and I/O, head
training (regular, sub-ensemble, LUR, RLUR, RLLE, BBB-LL, GDA), kernel score
estimators, calibration/OOD metrics, and the grid-search harness.
"""

from lur._lur import (
    FormatError,
    HeadModel,
    IndexError,
    InvalidInputError,
    LatentDataset,
    NumericError,
    TrainingDivergedError,
    accuracy_and_macro_f1,
    ace,
    aggregate_sem2,
    cross_entropy_with_grad,
    fpr_at_95_tpr,
    gen_synthetic,
    latent_variance_score,
    load_head,
    load_latents,
    make_ood_split,
    median_bandwidth,
    pr_auc,
    predictive_entropy,
    raulc,
    rbf_gram,
    render_markdown,
    repulsion_grad_kde,
    roc_auc,
    run_plan,
    save_head,
    save_latents,
    score_sge,
    score_ssge,
    softmax,
    sym_eigh,
    train_head,
)

__all__ = [
    "FormatError",
    "HeadModel",
    "IndexError",
    "InvalidInputError",
    "LatentDataset",
    "NumericError",
    "TrainingDivergedError",
    "accuracy_and_macro_f1",
    "ace",
    "aggregate_sem2",
    "cross_entropy_with_grad",
    "fpr_at_95_tpr",
    "gen_synthetic",
    "latent_variance_score",
    "load_head",
    "load_latents",
    "make_ood_split",
    "median_bandwidth",
    "pr_auc",
    "predictive_entropy",
    "raulc",
    "rbf_gram",
    "render_markdown",
    "repulsion_grad_kde",
    "roc_auc",
    "run_plan",
    "save_head",
    "save_latents",
    "score_sge",
    "score_ssge",
    "softmax",
    "sym_eigh",
    "train_head",
]

"""Informational-support classification, attribution and helpfulness
analysis for health-forum question/response pairs."""

from ._native import (
    Corpus,
    Pipeline,
    Resources,
    SyntheticCorpus,
    auc,
    cli_main,
    compute_metrics,
    fit_glm,
    greedy_ensemble,
    helpfulness_analysis,
    load_embeddings,
    log_loss,
    shap_exact,
    shap_sampled,
    synthetic_helpfulness_corpus,
    synthetic_isr_corpus,
    vif,
)

__all__ = [
    "Corpus",
    "Pipeline",
    "Resources",
    "SyntheticCorpus",
    "auc",
    "cli_main",
    "compute_metrics",
    "fit_glm",
    "greedy_ensemble",
    "helpfulness_analysis",
    "load_embeddings",
    "log_loss",
    "shap_exact",
    "shap_sampled",
    "synthetic_helpfulness_corpus",
    "synthetic_isr_corpus",
    "vif",
]

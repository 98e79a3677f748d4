//! Evaluation protocols: masked-token probes, pseudo-log-likelihood, and
//! span/pair F1 with micro aggregation.

mod metrics;
mod mlm;

pub use metrics::{f1, ner_metrics, re_metrics, Counts, LabelRow, MetricsReport, Micro, Protocol, RelationRecord};
pub use mlm::{
    load_probes, masked_token_accuracy, pll_terms, pll_via_cross_entropy, pseudo_log_likelihood, ExcludedProbe,
    MaskedLm, MaskedProbe, ProbeCategory, ProbeCounts, ProbePrediction, ProbeReport, PLACEHOLDER,
};

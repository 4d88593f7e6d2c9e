//! Metrics, domain-shift diagnostics and result tables.

mod diagnostics;
mod metrics;
mod report;

pub use diagnostics::{
    domain_id_experiment, pitch_distribution, xgen_experiment, DomainIdReport, PitchDistribution,
    XgenReport, PITCH_BIN_HZ, PITCH_RANGE_HZ,
};
pub use metrics::{auc, mean_stderr, wasserstein1d, Histogram};
pub use report::{build_report, MethodSummary, MetricsReport};

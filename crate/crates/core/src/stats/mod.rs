//! Survival and association statistics.

pub mod correlation;
pub mod ks;
pub mod special;
pub mod summary;
pub mod survival;

pub use correlation::{correlation_report, correlations, median_shift, pearson, CorrelationReport, CorrelationRow, MedianShift, Pearson};
pub use summary::{quantile, quantile_summary, QuantileSummary};
pub use survival::{kaplan_meier, log_rank, LogRank, Observation, SurvivalCurve};

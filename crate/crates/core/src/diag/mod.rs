//! Chain diagnostics, the getting-it-right harness and abstention scores.

mod geweke;
mod mcmc;
mod report;
mod scores;

pub use geweke::{geweke_test, GewekeConfig, GewekeModel, GewekeQuantity, GewekeReport, GewekeTransition};
pub use mcmc::{acceptance_rate, effective_sample_size, ks_one_sample, ks_two_sample, psrf, KsResult};
pub use report::{diagnose, report_to_csv, DiagnosticsReport, ParamDiagnostics, RHAT_CHECKPOINTS};
pub use scores::{auc, capacity_scores, CapacityPoint, CapacityScores};

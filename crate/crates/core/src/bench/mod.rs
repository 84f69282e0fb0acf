//! Synthetic benchmark: sample generation, metrics, reports and the
//! reprojection-descent baseline.

pub mod ablation;
pub mod baseline;
pub mod metrics;
pub mod report;
pub mod synth;

pub use ablation::{run_ablation, AblationRow, AblationTable, BaselineSettings};
pub use baseline::{baseline_refine_reproj, BaselineOutcome};
pub use metrics::{mpjpe, pa_mpjpe, reprojection_error, PelvisMode};
pub use report::{
    evaluation_report, facing_report, summarize, EvalReport, FacingAccuracy, MetricsReport,
};
pub use synth::{generate_samples, GenerateConfig, PerturbConfig, SyntheticSample};

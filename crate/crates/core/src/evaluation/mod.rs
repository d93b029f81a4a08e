//! Metrics, experiment specs and the cross-validation runner.

mod cv;
mod metrics;
mod report;
mod spec;

pub use cv::{mean_std, run_cv, run_cv_with, CVReport, CvHooks, FoldResult, FASTTEXT_NOTE, LEAKAGE_WARNING, REPORT_SCHEMA};
pub use metrics::{confusion, per_class, weighted_prf, ClassMetrics, ConfusionMatrix, MetricsTriple};
pub use report::{aggregate_reports, ComparisonTable, TableRow};
pub use spec::{
    CharNgramParams, ExperimentSpec, FeatureKind, Init, Learner, MethodId, NetKind, NeuralParams, Part, Pipeline,
    Protocol,
};

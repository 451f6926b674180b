//! Segmentation metrics and the comparison harness.

pub mod experiment;
pub mod metrics;

pub use experiment::{run_experiment, standard_runs, ExperimentReport, RunResult, RunSpec};
pub use metrics::{class_metrics, confusion, confusion_grids, evaluate, iou, macro_f1, ConfusionMatrix, EvalReport, Summary};

//! Metrics, experiment configuration, orchestration and reports.

mod config;
mod experiment;
mod metrics;
mod report;

pub use config::{ExperimentConfig, SPLITS};
pub use experiment::{
    paint_superpixels, prepare, prepare_with, provenance, run_ablation, run_ablation_with,
    run_table1, superpixel_accuracy, table1_with, AblationOutcome, Prepared, SuperpixelAccuracy,
    ABLATION_ROWS, TABLE1_ROWS,
};
pub use metrics::{
    accumulate_confusion, confusion_of, evaluate_masks, evaluate_model, iou_from_confusion,
    predict_masks, worker_threads, ConfusionCounts, Metrics, UNDEFINED_IOU,
};
pub use report::{fmt_g6, ReportRow, ReportTable};

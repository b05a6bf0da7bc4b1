//! Metrics, reports, latency aggregation and hyperparameter sweeps.

mod latency;
mod metrics;
mod report;
mod sweep;

pub use latency::{measure_latency, LatencyStats, LatencySummary};
pub use metrics::{
    normalize_answer, parse_number, recall_at_k, relaxed_accuracy, section_recall_at_1, vqa_accuracy, NumericGold,
    DEFAULT_TOLERANCE,
};
pub use report::{evaluate, write_predictions, EvalOptions, EvalReport, Metrics, SampleOutcome};
pub use sweep::{sweep, write_sweep_csv, SweepParam, SweepRow, SWEEP_METRICS};

use crate::pipeline::PipelineError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0}")]
    Precondition(String),
    #[error("no result record for sample {0:?}")]
    MissingResult(String),
    #[error("sample {sample}: {source}")]
    Pipeline {
        sample: String,
        #[source]
        source: PipelineError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

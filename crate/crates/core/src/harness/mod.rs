//! Experiment runner, tabular oracle and reporting.

mod config;
mod oracle;
mod report;
mod run;

use std::path::{Path, PathBuf};

pub use config::{load_env_file, EvalConfig, RunConfig};
pub use oracle::{
    greedy_path_length, optimal_path_lengths, table_path_length, value_iteration_oracle, Pose, QTable,
    ORACLE_STATE_LIMIT, ORACLE_TOLERANCE,
};
pub use report::{
    compare_dirs, compare_runs, emit_plot_data, load_run_set, plot_series, q_separation_report, seed_series, step_grid,
    Band, Comparison, MetricComparison, PlotPoint, PlotSeries, SeedRun, SeparationReport, SeparationRow, SetSummary,
    FINAL_WINDOW, METRICS_HEADER, METRIC_NAMES,
};
pub use run::{
    evaluate, holdout_accuracy, read_eval, read_metrics, run_experiment, run_seed, EvalResult, EvalRow, HoldoutAccuracy,
    Manifest, MetricsRow, RunOutcome, RunStatus, RunSummary, CLASSIFIER_FILE, EVAL_FILE, MANIFEST_FILE, METRICS_FILE,
    QNET_FILE, SEPARATION_FILE,
};

use crate::agent::AgentError;
use crate::env::EnvError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("malformed file: {0}")]
    Schema(String),
    #[error("unknown metric {name:?}; valid metrics: {valid}")]
    UnknownMetric { name: String, valid: String },
    #[error("state space has {states} states, above the oracle limit of {limit}")]
    TooLarge { states: usize, limit: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, source: csv::Error) -> Self {
        HarnessError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Errors caused by the user's input rather than by training.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_) | HarnessError::UnknownMetric { .. } | HarnessError::Env(_) | HarnessError::Schema(_)
        )
    }
}

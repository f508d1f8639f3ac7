//! Verification experiments: oracles, width and depth sweeps, regression.

mod experiments;
mod fit;
mod io;
mod oracle;
mod trainer;

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::models::ModelError;
use crate::optim::OptimError;
use crate::scaling::ScalingError;

pub use experiments::{
    coord_check, depth_check, lr_sweep, rank_scan, update_exponent, window_slopes, Checks,
    CoordCheckReport, DepthCheckReport, DepthMetric, Executor, LayerSlope, LrCell, LrSweepReport,
    RankScanReport, RankSummary, Sequential, ShapeFamily, SweepConfig,
};
pub use fit::{compute_multiplier, exponent_fit, ExponentFit, MultiplierEstimate};
pub use io::{write_jsonl, write_records_csv, CSV_HEADER};
pub use oracle::{
    dense_rank1_update, dense_shampoo_update, gram_oracle_shampoo, gram_suite, rank1_oracle,
    rank1_suite, rel_error, OracleCheck, OracleTolerances,
};
pub use trainer::{resolve_layers, train, MetricRecord, RunResult, RunSpec, DIVERGENCE_FACTOR};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

//! End-to-end experiments: the RF-GNN pipeline, threshold sweeps, similarity
//! comparisons and baselines.

mod config;
mod pipeline;
mod report;

use thiserror::Error;

pub use config::{AlphaGridSpec, ExperimentConfig, ForestGridSpec, DENSE_GUARD_ROWS};
pub use pipeline::{
    build_graph, compare_similarities, cv_fold_graphs, prepare_seed, run_baselines, run_rfgnn,
    run_rfgnn_with_split, select_candidate, threshold_sweep, CandidateScore, PreparedSeed,
    SelectionOutcome, SimilaritySource,
};
pub use report::{
    run_experiment, write_compare_csv, write_sweep_csv, BaselineReport, CompareRow,
    ExperimentReport, MlpScores, SeedReport, SweepRow,
};

use crate::forest::ForestError;
use crate::gcn::GcnError;
use crate::graph::GraphError;
use crate::metrics::MetricError;
use crate::proximity::ProximityError;
use crate::tabular::TabularError;

/// Pipeline failure tagged with the stage that produced it.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[data] {0}")]
    Data(#[from] TabularError),
    #[error("[forest] {0}")]
    Forest(#[from] ForestError),
    #[error("[proximity] {0}")]
    Proximity(#[from] ProximityError),
    #[error("[graph] {0}")]
    Graph(#[from] GraphError),
    #[error("[gcn] {0}")]
    Gcn(#[from] GcnError),
    #[error("[metrics] {0}")]
    Metric(#[from] MetricError),
    #[error("[output] {0}")]
    Output(#[from] std::io::Error),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Data(_) => "data",
            PipelineError::Forest(_) => "forest",
            PipelineError::Proximity(_) => "proximity",
            PipelineError::Graph(_) => "graph",
            PipelineError::Gcn(_) => "gcn",
            PipelineError::Metric(_) => "metrics",
            PipelineError::Output(_) => "output",
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::forest::{ForestParams, MaxFeatures};
use crate::gcn::TrainConfig;
use crate::graph::{alpha_grid, DEFAULT_RBF_GAMMA};
use crate::proximity::{Measure, StorageMode};

/// Largest row count for which forced dense proximity storage is accepted.
pub const DENSE_GUARD_ROWS: usize = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaGridSpec {
    pub count: usize,
    pub min: f64,
    pub max: f64,
}

impl Default for AlphaGridSpec {
    fn default() -> Self {
        Self {
            count: 51,
            min: 0.0,
            max: 1.0,
        }
    }
}

impl AlphaGridSpec {
    pub fn single(alpha: f64) -> Self {
        Self {
            count: 1,
            min: alpha,
            max: alpha,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        alpha_grid(self.count, self.min, self.max)
    }
}

/// Cartesian forest tuning grid, enumerated with `n_trees` outermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestGridSpec {
    pub n_trees: Vec<usize>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
    pub max_features: MaxFeatures,
}

impl Default for ForestGridSpec {
    fn default() -> Self {
        Self {
            n_trees: vec![50, 100, 200, 500, 700, 1000],
            min_samples_split: vec![2, 5, 10],
            min_samples_leaf: vec![1, 20, 50, 80, 100, 150, 200, 300, 500],
            max_features: MaxFeatures::Sqrt,
        }
    }
}

impl ForestGridSpec {
    pub fn candidates(&self, seed: u64) -> Vec<ForestParams> {
        let mut out = Vec::new();
        for &n_trees in &self.n_trees {
            for &min_samples_split in &self.min_samples_split {
                for &min_samples_leaf in &self.min_samples_leaf {
                    out.push(ForestParams {
                        n_trees,
                        min_samples_split,
                        min_samples_leaf,
                        max_features: self.max_features,
                        seed,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Dataset manifest; a relative path is resolved against the config file.
    pub dataset: PathBuf,
    pub proximities: Vec<Measure>,
    pub alpha_grid: AlphaGridSpec,
    pub seeds: Vec<u64>,
    pub cv_folds: usize,
    pub train_fraction: f64,
    pub forest_grid: ForestGridSpec,
    pub gcn: TrainConfig,
    /// Hidden widths tried by the MLP baseline.
    pub mlp_hidden_dims: Vec<Vec<usize>>,
    pub rbf_gamma: f64,
    pub storage: StorageMode,
    /// Refit the forest inside every CV fold instead of reusing the graph
    /// built from the train-fitted forest.
    pub strict: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            proximities: Measure::FOREST.to_vec(),
            alpha_grid: AlphaGridSpec::default(),
            seeds: vec![0, 1, 2, 3, 4],
            cv_folds: 5,
            train_fraction: 0.8,
            forest_grid: ForestGridSpec::default(),
            gcn: TrainConfig::default(),
            mlp_hidden_dims: vec![vec![64, 128], vec![128, 256]],
            rbf_gamma: DEFAULT_RBF_GAMMA,
            storage: StorageMode::Auto,
            strict: false,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if config.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                config.dataset = dir.join(&config.dataset);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if self.proximities.is_empty() {
            return bad("no proximity kinds given".into());
        }
        if let Some(m) = self.proximities.iter().find(|m| !m.is_forest()) {
            return bad(format!("`{m}` is not a forest proximity"));
        }
        if self.alpha_grid.count == 0 {
            return bad("alpha grid is empty".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds given".into());
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2".into());
        }
        if self.forest_grid.candidates(0).is_empty() {
            return bad("forest grid is empty".into());
        }
        if !(self.rbf_gamma.is_finite() && self.rbf_gamma > 0.0) {
            return bad("rbf_gamma must be positive".into());
        }
        self.gcn.validate()?;
        Ok(())
    }

    /// Rejects forced dense storage for datasets too large to hold densely.
    pub fn check_budget(&self, n_rows: usize) -> Result<()> {
        if self.storage == StorageMode::Dense && n_rows > DENSE_GUARD_ROWS {
            return Err(PipelineError::Config(format!(
                "{n_rows} rows exceed the dense proximity limit of {DENSE_GUARD_ROWS}; \
                 use \"storage\": \"sparse\" or \"auto\""
            )));
        }
        Ok(())
    }
}

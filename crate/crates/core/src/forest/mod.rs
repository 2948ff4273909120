//! Bootstrap random forests with explicit in-bag bookkeeping.
//!
//! Every tree records how many times each training row was drawn into its
//! bootstrap sample. Out-of-bag sets, per-row OOB tree sets and in-bag leaf
//! masses are all derived from those counts.

mod grid;
mod tree;

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{grid_search, default_grid, GridSearchResult};
pub use tree::{fit_tree, DecisionTree, MaxFeatures, Node};

use crate::metrics::argmax;

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid forest parameters: {0}")]
    InvalidParams(String),
    #[error("feature dimension mismatch: forest expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("{rows} feature rows but {labels} labels")]
    LabelCountMismatch { rows: usize, labels: usize },
    #[error("grid search: {0}")]
    Grid(String),
    #[error(transparent)]
    Folds(#[from] crate::tabular::TabularError),
    #[error("forest io: {0}")]
    Io(#[from] std::io::Error),
    #[error("forest serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("unsupported forest format version {0}")]
    UnsupportedVersion(u32),
}

pub type Result<T> = std::result::Result<T, ForestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Sqrt,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidParams("n_trees must be positive".into()));
        }
        if self.min_samples_split < 2 {
            return Err(ForestError::InvalidParams(
                "min_samples_split must be at least 2".into(),
            ));
        }
        if self.min_samples_leaf < 1 {
            return Err(ForestError::InvalidParams(
                "min_samples_leaf must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    /// `inbag_counts[t][j]`: multiplicity of training row `j` in tree `t`'s bootstrap.
    pub inbag_counts: Vec<Vec<u32>>,
    pub n_train: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Training label counts per class.
    pub class_totals: Vec<usize>,
    pub params: ForestParams,
}

/// Leaf id of every sample in every tree, `values[[i, t]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafIndexMatrix {
    pub values: Array2<usize>,
}

impl LeafIndexMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_trees(&self) -> usize {
        self.values.ncols()
    }

    /// Rows grouped by leaf for tree `t`; entry `l` lists rows in leaf `l`.
    pub fn leaf_members(&self, t: usize, n_leaves: usize) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); n_leaves];
        for (i, &leaf) in self.values.column(t).iter().enumerate() {
            members[leaf].push(i);
        }
        members
    }

    /// Restricts to a contiguous range of trees.
    pub fn trees(&self, range: std::ops::Range<usize>) -> LeafIndexMatrix {
        LeafIndexMatrix {
            values: self.values.slice(ndarray::s![.., range]).to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OobPrediction {
    pub labels: Vec<usize>,
    pub vote_shares: Array2<f64>,
}

/// Seed of tree `t`: the forest seed offset by the tree index.
pub fn tree_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_add(t as u64)
}

/// Fits `params.n_trees` trees on multiplicity-weighted bootstrap samples.
pub fn fit_forest(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    params: &ForestParams,
) -> Result<RandomForest> {
    params.validate()?;
    let n = x.nrows();
    if n < 2 {
        return Err(ForestError::TooFewRows(n));
    }
    if y.len() != n {
        return Err(ForestError::LabelCountMismatch {
            rows: n,
            labels: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&label| label >= n_classes) {
        return Err(ForestError::InvalidParams(format!(
            "label {bad} outside 0..{n_classes}"
        )));
    }
    let fitted: Vec<(DecisionTree, Vec<u32>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(params.seed, t));
            let mut counts = vec![0u32; n];
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1;
            }
            let tree = fit_tree(x, y, n_classes, &counts, params, &mut rng);
            (tree, counts)
        })
        .collect();
    let (trees, inbag_counts) = fitted.into_iter().unzip();
    let mut class_totals = vec![0; n_classes];
    for &label in y {
        class_totals[label] += 1;
    }
    Ok(RandomForest {
        trees,
        inbag_counts,
        n_train: n,
        n_features: x.ncols(),
        n_classes,
        class_totals,
        params: *params,
    })
}

impl RandomForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn is_oob(&self, t: usize, j: usize) -> bool {
        self.inbag_counts[t][j] == 0
    }

    /// O(t): training rows not drawn into tree `t`.
    pub fn oob_rows(&self, t: usize) -> Vec<usize> {
        (0..self.n_train).filter(|&j| self.is_oob(t, j)).collect()
    }

    /// S_i: trees for which training row `i` is out of bag.
    pub fn oob_trees(&self, i: usize) -> Vec<usize> {
        (0..self.n_trees()).filter(|&t| self.is_oob(t, i)).collect()
    }

    /// Fraction of distinct training rows drawn into tree `t`.
    pub fn inbag_fraction(&self, t: usize) -> f64 {
        let drawn = self.inbag_counts[t].iter().filter(|&&c| c > 0).count();
        drawn as f64 / self.n_train as f64
    }

    pub fn mean_inbag_fraction(&self) -> f64 {
        (0..self.n_trees()).map(|t| self.inbag_fraction(t)).sum::<f64>() / self.n_trees() as f64
    }

    fn check_dims(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Leaf ids of every row of `x` in every tree.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<LeafIndexMatrix> {
        self.check_dims(&x)?;
        let rows: Vec<Vec<usize>> = (0..x.nrows())
            .into_par_iter()
            .map(|i| {
                let row = x.row(i).to_vec();
                self.trees.iter().map(|tree| tree.leaf_of(&row)).collect()
            })
            .collect();
        let mut values = Array2::zeros((x.nrows(), self.n_trees()));
        for (i, row) in rows.into_iter().enumerate() {
            for (t, leaf) in row.into_iter().enumerate() {
                values[[i, t]] = leaf;
            }
        }
        Ok(LeafIndexMatrix { values })
    }

    /// Mean of per-tree normalized leaf class distributions over all trees.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let leaves = self.apply(x)?;
        let mut proba = Array2::zeros((x.nrows(), self.n_classes));
        for i in 0..x.nrows() {
            for (t, tree) in self.trees.iter().enumerate() {
                let counts = tree.leaf_counts(leaves.values[[i, t]]);
                let total: u32 = counts.iter().sum();
                for (k, &c) in counts.iter().enumerate() {
                    proba[[i, k]] += c as f64 / total as f64;
                }
            }
        }
        proba /= self.n_trees() as f64;
        Ok(proba)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let proba = self.predict_proba(x)?;
        Ok(proba
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().expect("standard layout")))
            .collect())
    }

    /// Out-of-bag prediction for the training rows the forest was fit on.
    ///
    /// Each tree in S_i contributes its leaf's normalized in-bag class
    /// distribution; shares are averaged over S_i. Rows with empty S_i fall
    /// back to the training class frequencies.
    pub fn oob_predict(&self, x_train: ArrayView2<'_, f64>) -> Result<OobPrediction> {
        if x_train.nrows() != self.n_train {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_train,
                found: x_train.nrows(),
            });
        }
        let leaves = self.apply(x_train)?;
        let mut vote_shares = Array2::zeros((self.n_train, self.n_classes));
        let mut labels = Vec::with_capacity(self.n_train);
        for i in 0..self.n_train {
            let trees = self.oob_trees(i);
            let mut shares = vec![0.0; self.n_classes];
            if trees.is_empty() {
                let total: usize = self.class_totals.iter().sum();
                for (k, &c) in self.class_totals.iter().enumerate() {
                    shares[k] = c as f64 / total as f64;
                }
            } else {
                for &t in &trees {
                    let counts = self.trees[t].leaf_counts(leaves.values[[i, t]]);
                    let total: u32 = counts.iter().sum();
                    for (k, &c) in counts.iter().enumerate() {
                        shares[k] += c as f64 / total as f64;
                    }
                }
                for s in &mut shares {
                    *s /= trees.len() as f64;
                }
            }
            labels.push(argmax(&shares));
            for (k, s) in shares.into_iter().enumerate() {
                vote_shares[[i, k]] = s;
            }
        }
        Ok(OobPrediction {
            labels,
            vote_shares,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ForestFile {
            format: FOREST_FORMAT.to_string(),
            version: FOREST_FORMAT_VERSION,
            forest: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ForestFile = serde_json::from_str(text)?;
        if file.format != FOREST_FORMAT || file.version != FOREST_FORMAT_VERSION {
            return Err(ForestError::UnsupportedVersion(file.version));
        }
        Ok(file.forest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

const FOREST_FORMAT: &str = "rfgnn-forest";

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format: String,
    version: u32,
    forest: RandomForest,
}

//! Thresholded similarity graphs and the feature-space baseline similarities.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use thiserror::Error;

use crate::proximity::{Measure, ProximityMatrix, Storage};
use crate::tabular::SplitIndices;

/// Bandwidth of the RBF baseline.
pub const DEFAULT_RBF_GAMMA: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("similarity matrix is not symmetric")]
    Asymmetric,
    #[error("threshold must be a non-negative number, got {0}")]
    InvalidAlpha(f64),
    #[error("negative feature value at ({row}, {col}); jaccard needs non-negative input")]
    NegativeFeature { row: usize, col: usize },
    #[error("rbf gamma must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Undirected, unweighted graph without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub n_nodes: usize,
    /// Sorted `(i, j)` pairs with `i < j`.
    pub edges: Vec<(usize, usize)>,
    /// Sorted neighbor list of each node.
    pub neighbors: Vec<Vec<usize>>,
    pub alpha: f64,
    pub source_kind: Measure,
}

impl Adjacency {
    pub fn from_edges(n_nodes: usize, mut edges: Vec<(usize, usize)>, alpha: f64, source_kind: Measure) -> Self {
        for e in &mut edges {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.retain(|&(i, j)| i != j);
        edges.sort_unstable();
        edges.dedup();
        let mut neighbors = vec![Vec::new(); n_nodes];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Self {
            n_nodes,
            edges,
            neighbors,
            alpha,
            source_kind,
        }
    }

    pub fn empty(n_nodes: usize) -> Self {
        Self::from_edges(n_nodes, Vec::new(), f64::INFINITY, Measure::Original)
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Edge list: header `# nodes=N alpha=α kind=K`, then `i j` per line.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# nodes={} alpha={} kind={}",
            self.n_nodes, self.alpha, self.source_kind
        )?;
        for &(i, j) in &self.edges {
            writeln!(out, "{i} {j}")?;
        }
        Ok(())
    }
}

/// Keeps every off-diagonal pair whose similarity is at least `alpha`.
pub fn threshold_adjacency(p: &ProximityMatrix, alpha: f64) -> Result<Adjacency> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(GraphError::InvalidAlpha(alpha));
    }
    if !p.symmetric || !p.is_symmetric() {
        return Err(GraphError::Asymmetric);
    }
    let n = p.n();
    let edges: Vec<(usize, usize)> = match &p.storage {
        Storage::Dense(v) => (0..n)
            .into_par_iter()
            .flat_map_iter(|i| (i + 1..n).filter(move |&j| v[[i, j]] >= alpha).map(move |j| (i, j)))
            .collect(),
        // absent sparse entries are zeros, which pass a zero threshold
        Storage::Sparse(_) if alpha <= 0.0 => {
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
        }
        Storage::Sparse(rows) => rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .filter(move |&&(j, v)| j > i && v >= alpha)
                    .map(move |&(j, _)| (i, j))
            })
            .collect(),
    };
    Ok(Adjacency::from_edges(n, edges, alpha, p.kind))
}

/// `count` evenly spaced thresholds from `min` to `max`, inclusive.
pub fn alpha_grid(count: usize, min: f64, max: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![min],
        _ => (0..count)
            .map(|k| {
                if k == count - 1 {
                    max
                } else {
                    min + (max - min) * k as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

fn similarity_rows<F>(n: usize, f: F) -> Array2<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let mut out = Array2::zeros((n, n));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for j in 0..n {
                row[j] = f(i, j);
            }
        });
    out
}

/// Cosine similarity of feature rows. A zero-norm row is similar to nothing,
/// itself included.
pub fn cosine_matrix(x: ArrayView2<'_, f64>) -> ProximityMatrix {
    let norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let values = similarity_rows(x.nrows(), |i, j| {
        if norms[i] == 0.0 || norms[j] == 0.0 {
            return 0.0;
        }
        if i == j {
            return 1.0;
        }
        (x.row(i).dot(&x.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
    });
    let mut m = ProximityMatrix::from_dense(symmetric_copy(values), Measure::Cosine);
    m.symmetric = true;
    m
}

/// Weighted Jaccard: Σ min / Σ max, with 0/0 taken as 1.
pub fn jaccard_matrix(x: ArrayView2<'_, f64>) -> Result<ProximityMatrix> {
    if let Some(((row, col), _)) = x.indexed_iter().find(|(_, &v)| v < 0.0) {
        return Err(GraphError::NegativeFeature { row, col });
    }
    let values = similarity_rows(x.nrows(), |i, j| {
        let (mut lo, mut hi) = (0.0, 0.0);
        for (a, b) in x.row(i).iter().zip(x.row(j).iter()) {
            lo += a.min(*b);
            hi += a.max(*b);
        }
        if hi == 0.0 {
            1.0
        } else {
            lo / hi
        }
    });
    let mut m = ProximityMatrix::from_dense(symmetric_copy(values), Measure::Jaccard);
    m.symmetric = true;
    Ok(m)
}

pub fn rbf_kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// RBF kernel min-max rescaled to [0, 1] over off-diagonal entries; the
/// diagonal is 1. Constant off-diagonal values are left unscaled.
pub fn rbf_matrix(x: ArrayView2<'_, f64>, gamma: f64) -> Result<ProximityMatrix> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(GraphError::InvalidGamma(gamma));
    }
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut values = similarity_rows(x.nrows(), |i, j| rbf_kernel(&rows[i], &rows[j], gamma));
    let n = values.nrows();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                lo = lo.min(values[[i, j]]);
                hi = hi.max(values[[i, j]]);
            }
        }
    }
    if hi > lo {
        for i in 0..n {
            for j in 0..n {
                values[[i, j]] = if i == j { 1.0 } else { (values[[i, j]] - lo) / (hi - lo) };
            }
        }
    }
    let mut m = ProximityMatrix::from_dense(symmetric_copy(values), Measure::Rbf);
    m.symmetric = true;
    Ok(m)
}

/// Copies the upper triangle onto the lower one so rounding cannot break
/// exact symmetry.
fn symmetric_copy(mut v: Array2<f64>) -> Array2<f64> {
    let n = v.nrows();
    for i in 0..n {
        for j in i + 1..n {
            v[[j, i]] = v[[i, j]];
        }
    }
    v
}

/// Per-column min-max shift to [0, 1]; constant columns map to 0.
pub fn minmax_shift(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        col.mapv_inplace(|v| if span > 0.0 { (v - lo) / span } else { 0.0 });
    }
    out
}

/// Transductive node-classification input. Labels are present only for the
/// nodes whose labels may be used in training.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphData {
    pub adjacency: Adjacency,
    pub features: Array2<f64>,
    pub train_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    pub labels: Vec<Option<usize>>,
    pub n_classes: usize,
}

impl GraphData {
    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }

    /// `(node, label)` pairs usable as training targets.
    pub fn train_targets(&self) -> Vec<(usize, usize)> {
        self.train_mask
            .iter()
            .zip(&self.labels)
            .enumerate()
            .filter_map(|(i, (&m, l))| if m { l.map(|y| (i, y)) } else { None })
            .collect()
    }

    /// Same graph with training restricted to `visible`; every other label is
    /// removed and those nodes move to the evaluation mask.
    pub fn restrict_training(&self, visible: &[usize]) -> GraphData {
        let n = self.n_nodes();
        let mut train_mask = vec![false; n];
        for &i in visible {
            train_mask[i] = self.train_mask[i];
        }
        let labels = (0..n)
            .map(|i| if train_mask[i] { self.labels[i] } else { None })
            .collect();
        GraphData {
            adjacency: self.adjacency.clone(),
            features: self.features.clone(),
            test_mask: train_mask.iter().map(|m| !m).collect(),
            train_mask,
            labels,
            n_classes: self.n_classes,
        }
    }

    pub fn with_adjacency(&self, adjacency: Adjacency) -> Result<GraphData> {
        if adjacency.n_nodes != self.n_nodes() {
            return Err(GraphError::Shape(format!(
                "adjacency has {} nodes, graph has {}",
                adjacency.n_nodes,
                self.n_nodes()
            )));
        }
        Ok(GraphData {
            adjacency,
            ..self.clone()
        })
    }
}

/// Packages features, graph and split; only train labels are kept.
pub fn assemble_graph(
    adjacency: Adjacency,
    features: Array2<f64>,
    split: &SplitIndices,
    labels: &[usize],
    n_classes: usize,
) -> Result<GraphData> {
    let n = features.nrows();
    if adjacency.n_nodes != n || split.n_rows() != n || labels.len() != n {
        return Err(GraphError::Shape(format!(
            "nodes {}, features {n}, split {}, labels {}",
            adjacency.n_nodes,
            split.n_rows(),
            labels.len()
        )));
    }
    if split.train.iter().chain(&split.test).any(|&i| i >= n) {
        return Err(GraphError::Shape("split index out of range".into()));
    }
    let train_mask = split.train_mask();
    let test_mask = train_mask.iter().map(|m| !m).collect();
    let labels = (0..n)
        .map(|i| train_mask[i].then_some(labels[i]))
        .collect();
    Ok(GraphData {
        adjacency,
        features,
        train_mask,
        test_mask,
        labels,
        n_classes,
    })
}

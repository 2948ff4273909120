//! Random-forest proximities: original co-occurrence, out-of-bag and RF-GAP.
//!
//! All measures are computed for every dataset row. `train_rows[p]` names the
//! dataset row that was training position `p` of the forest; any other row is
//! a test row and counts as out of bag in every tree.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{LeafIndexMatrix, RandomForest};

/// Above this many rows, matrices are stored as sparse rows.
pub const DENSE_ROW_LIMIT: usize = 20_000;
/// Entries below this are dropped from sparse rows and triple exports.
pub const SPARSE_DROP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ProximityError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("train rows: {0}")]
    TrainRows(String),
    #[error("proximity io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, ProximityError>;

/// Similarity measure that produced a matrix. The declaration order of the
/// forest measures is the selection tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Original,
    Rfgap,
    Oob,
    Cosine,
    Jaccard,
    Rbf,
}

impl Measure {
    pub const FOREST: [Measure; 3] = [Measure::Original, Measure::Rfgap, Measure::Oob];
    pub const BASELINES: [Measure; 3] = [Measure::Cosine, Measure::Jaccard, Measure::Rbf];

    pub fn is_forest(self) -> bool {
        matches!(self, Measure::Original | Measure::Rfgap | Measure::Oob)
    }

    pub fn name(self) -> &'static str {
        match self {
            Measure::Original => "original",
            Measure::Rfgap => "rfgap",
            Measure::Oob => "oob",
            Measure::Cosine => "cosine",
            Measure::Jaccard => "jaccard",
            Measure::Rbf => "rbf",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "original" | "rf_prox" => Ok(Measure::Original),
            "rfgap" | "rf-gap" => Ok(Measure::Rfgap),
            "oob" => Ok(Measure::Oob),
            "cosine" => Ok(Measure::Cosine),
            "jaccard" => Ok(Measure::Jaccard),
            "rbf" => Ok(Measure::Rbf),
            other => Err(format!("unknown measure `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageMode {
    /// Dense up to [`DENSE_ROW_LIMIT`] rows, sparse beyond.
    #[default]
    Auto,
    Dense,
    Sparse,
}

impl StorageMode {
    fn sparse_for(self, n: usize) -> bool {
        match self {
            StorageMode::Auto => n > DENSE_ROW_LIMIT,
            StorageMode::Dense => false,
            StorageMode::Sparse => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Storage {
    Dense(Array2<f64>),
    /// Per-row `(column, value)` pairs sorted by column; absent entries are 0.
    Sparse(Vec<Vec<(usize, f64)>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityMatrix {
    pub storage: Storage,
    pub kind: Measure,
    /// Dataset row id of each matrix row.
    pub row_index_map: Vec<usize>,
    pub symmetric: bool,
}

impl ProximityMatrix {
    pub fn from_dense(values: Array2<f64>, kind: Measure) -> Self {
        let n = values.nrows();
        let mut m = Self {
            storage: Storage::Dense(values),
            kind,
            row_index_map: (0..n).collect(),
            symmetric: false,
        };
        m.symmetric = m.is_symmetric();
        m
    }

    fn from_storage(storage: Storage, kind: Measure, symmetric: bool) -> Self {
        let n = match &storage {
            Storage::Dense(v) => v.nrows(),
            Storage::Sparse(rows) => rows.len(),
        };
        Self {
            storage,
            kind,
            row_index_map: (0..n).collect(),
            symmetric,
        }
    }

    pub fn n(&self) -> usize {
        self.row_index_map.len()
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v[[i, j]],
            Storage::Sparse(rows) => rows[i]
                .binary_search_by_key(&j, |&(c, _)| c)
                .map_or(0.0, |p| rows[i][p].1),
        }
    }

    /// Nonzero (or, for dense storage, all) entries of row `i` in column order.
    pub fn row_entries(&self, i: usize) -> Vec<(usize, f64)> {
        match &self.storage {
            Storage::Dense(v) => v.row(i).iter().copied().enumerate().collect(),
            Storage::Sparse(rows) => rows[i].clone(),
        }
    }

    /// Dense copy of the values.
    pub fn to_dense(&self) -> Array2<f64> {
        match &self.storage {
            Storage::Dense(v) => v.clone(),
            Storage::Sparse(rows) => {
                let n = rows.len();
                let mut out = Array2::zeros((n, n));
                for (i, row) in rows.iter().enumerate() {
                    for &(j, v) in row {
                        out[[i, j]] = v;
                    }
                }
                out
            }
        }
    }

    /// Exact check that entry (i, j) equals entry (j, i) everywhere.
    pub fn is_symmetric(&self) -> bool {
        match &self.storage {
            Storage::Dense(v) => {
                let n = v.nrows();
                v.ncols() == n && (0..n).all(|i| (i + 1..n).all(|j| v[[i, j]] == v[[j, i]]))
            }
            Storage::Sparse(rows) => rows
                .iter()
                .enumerate()
                .all(|(i, row)| row.iter().all(|&(j, v)| self.get(j, i) == v)),
        }
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for (j, v) in self.row_entries(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Text export: header `N kind`, then one space-separated row per line.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.n();
        writeln!(out, "{n} {}", self.kind)?;
        for i in 0..n {
            let mut line = String::new();
            let mut dense_row = vec![0.0; n];
            for (j, v) in self.row_entries(i) {
                dense_row[j] = v;
            }
            for (j, v) in dense_row.iter().enumerate() {
                if j > 0 {
                    line.push(' ');
                }
                line.push_str(&v.to_string());
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Sparse export: header `N kind`, then `i j value` for entries at or
    /// above [`SPARSE_DROP`].
    pub fn write_triples<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.n(), self.kind)?;
        for i in 0..self.n() {
            for (j, v) in self.row_entries(i) {
                if v >= SPARSE_DROP {
                    writeln!(out, "{i} {j} {v}")?;
                }
            }
        }
        Ok(())
    }

    pub fn read_triples<R: BufRead>(input: R, storage: StorageMode) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (n, kind) = match lines.next() {
            Some((_, header)) => {
                let header = header?;
                let mut parts = header.split_whitespace();
                let n = parts
                    .next()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(0, "bad row count"))?;
                let kind = parts
                    .next()
                    .ok_or_else(|| parse_err(0, "missing kind"))?
                    .parse::<Measure>()
                    .map_err(|e| parse_err(0, &e))?;
                (n, kind)
            }
            None => return Err(parse_err(0, "empty input")),
        };
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (line_no, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(parse_err(line_no, "expected `i j value`"));
            }
            let i: usize = parts[0].parse().map_err(|_| parse_err(line_no, "bad i"))?;
            let j: usize = parts[1].parse().map_err(|_| parse_err(line_no, "bad j"))?;
            let v: f64 = parts[2].parse().map_err(|_| parse_err(line_no, "bad value"))?;
            if i >= n || j >= n {
                return Err(parse_err(line_no, "index out of range"));
            }
            rows[i].push((j, v));
        }
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
        }
        let storage = if storage.sparse_for(n) {
            Storage::Sparse(rows)
        } else {
            let mut dense = Array2::zeros((n, n));
            for (i, row) in rows.iter().enumerate() {
                for &(j, v) in row {
                    dense[[i, j]] = v;
                }
            }
            Storage::Dense(dense)
        };
        let mut m = Self::from_storage(storage, kind, false);
        m.symmetric = m.is_symmetric();
        Ok(m)
    }
}

fn parse_err(line: usize, message: &str) -> ProximityError {
    ProximityError::Parse {
        line: line + 1,
        message: message.to_string(),
    }
}

/// Fills each row with `fill(i, buf)` (buf starts zeroed, length n).
fn collect_rows<F>(n: usize, sparse: bool, fill: F) -> Storage
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    if sparse {
        let rows = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut buf = vec![0.0; n];
                fill(i, &mut buf);
                buf.into_iter()
                    .enumerate()
                    .filter(|&(_, v)| v.abs() >= SPARSE_DROP)
                    .collect()
            })
            .collect();
        Storage::Sparse(rows)
    } else {
        let mut values = Array2::zeros((n, n));
        values
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| fill(i, row.as_slice_mut().expect("standard layout")));
        Storage::Dense(values)
    }
}

/// Per tree, per leaf: member rows.
fn leaf_members(leaves: &LeafIndexMatrix) -> Vec<Vec<Vec<usize>>> {
    (0..leaves.n_trees())
        .map(|t| {
            let n_leaves = leaves.values.column(t).iter().max().map_or(0, |&m| m + 1);
            leaves.leaf_members(t, n_leaves)
        })
        .collect()
}

/// p(i, j) = fraction of trees in which i and j share a leaf.
pub fn original_proximity(leaves: &LeafIndexMatrix, storage: StorageMode) -> ProximityMatrix {
    let n = leaves.n_rows();
    let n_trees = leaves.n_trees();
    let members = leaf_members(leaves);
    let values = collect_rows(n, storage.sparse_for(n), |i, buf| {
        for (t, tree_members) in members.iter().enumerate() {
            for &j in &tree_members[leaves.values[[i, t]]] {
                buf[j] += 1.0;
            }
        }
        for v in buf.iter_mut() {
            *v /= n_trees as f64;
        }
    });
    ProximityMatrix::from_storage(values, Measure::Original, true)
}

/// Out-of-bag status of every dataset row in every tree, `oob[row][t]`.
struct OobLayout {
    oob: Vec<Vec<bool>>,
    /// Training position of each dataset row, if it is a training row.
    position: Vec<Option<usize>>,
}

impl OobLayout {
    fn new(forest: &RandomForest, leaves: &LeafIndexMatrix, train_rows: &[usize]) -> Result<Self> {
        let n = leaves.n_rows();
        if leaves.n_trees() != forest.n_trees() {
            return Err(ProximityError::Shape(format!(
                "leaf matrix has {} trees, forest has {}",
                leaves.n_trees(),
                forest.n_trees()
            )));
        }
        if train_rows.len() != forest.n_train {
            return Err(ProximityError::TrainRows(format!(
                "{} rows given, forest was fit on {}",
                train_rows.len(),
                forest.n_train
            )));
        }
        let mut position = vec![None; n];
        for (p, &row) in train_rows.iter().enumerate() {
            if row >= n {
                return Err(ProximityError::TrainRows(format!("row {row} >= {n}")));
            }
            if position[row].replace(p).is_some() {
                return Err(ProximityError::TrainRows(format!("row {row} repeated")));
            }
        }
        let oob = (0..n)
            .map(|i| match position[i] {
                Some(p) => (0..forest.n_trees()).map(|t| forest.is_oob(t, p)).collect(),
                None => vec![true; forest.n_trees()],
            })
            .collect();
        Ok(Self { oob, position })
    }
}

/// p(i, j) = #{t: i, j both OOB and co-leaved} / #{t: i, j both OOB}, with
/// 0 for an empty denominator.
pub fn oob_proximity(
    forest: &RandomForest,
    leaves: &LeafIndexMatrix,
    train_rows: &[usize],
    storage: StorageMode,
) -> Result<ProximityMatrix> {
    let layout = OobLayout::new(forest, leaves, train_rows)?;
    let n = leaves.n_rows();
    let n_trees = forest.n_trees();
    let words = n_trees.div_ceil(64);
    let bits: Vec<Vec<u64>> = layout
        .oob
        .iter()
        .map(|flags| {
            let mut w = vec![0u64; words];
            for (t, &f) in flags.iter().enumerate() {
                if f {
                    w[t / 64] |= 1 << (t % 64);
                }
            }
            w
        })
        .collect();
    let oob_members: Vec<Vec<Vec<usize>>> = leaf_members(leaves)
        .into_iter()
        .enumerate()
        .map(|(t, per_leaf)| {
            per_leaf
                .into_iter()
                .map(|rows| rows.into_iter().filter(|&j| layout.oob[j][t]).collect())
                .collect()
        })
        .collect();

    let values = collect_rows(n, storage.sparse_for(n), |i, buf| {
        for t in 0..n_trees {
            if layout.oob[i][t] {
                for &j in &oob_members[t][leaves.values[[i, t]]] {
                    buf[j] += 1.0;
                }
            }
        }
        for (j, v) in buf.iter_mut().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let both: u32 = bits[i]
                .iter()
                .zip(&bits[j])
                .map(|(a, b)| (a & b).count_ones())
                .sum();
            *v /= both as f64;
        }
    });
    Ok(ProximityMatrix::from_storage(values, Measure::Oob, true))
}

/// Per leaf: `(dataset row, multiplicity)` of the in-bag rows.
type LeafLists = Vec<Vec<(usize, f64)>>;

/// RF-GAP proximities.
///
/// Row i averages, over the trees where i is out of bag, the in-bag
/// multiplicity of j in i's leaf divided by the leaf's total in-bag mass.
/// Only training rows can be columns with nonzero weight, so the test-test
/// block is filled by the diffusion product `P_test,train * P_test,trainᵀ`
/// with its diagonal left at 0. The result is asymmetric.
pub fn rfgap_proximity(
    forest: &RandomForest,
    leaves: &LeafIndexMatrix,
    train_rows: &[usize],
    storage: StorageMode,
) -> Result<ProximityMatrix> {
    let layout = OobLayout::new(forest, leaves, train_rows)?;
    let n = leaves.n_rows();
    let sparse = storage.sparse_for(n);
    let inbag: Vec<(LeafLists, Vec<f64>)> = leaf_members(leaves)
        .into_iter()
        .enumerate()
        .map(|(t, per_leaf)| {
            let lists: Vec<Vec<(usize, f64)>> = per_leaf
                .into_iter()
                .map(|rows| {
                    rows.into_iter()
                        .filter_map(|j| {
                            let p = layout.position[j]?;
                            let c = forest.inbag_counts[t][p];
                            (c > 0).then_some((j, c as f64))
                        })
                        .collect()
                })
                .collect();
            let mass = lists.iter().map(|l| l.iter().map(|&(_, c)| c).sum()).collect();
            (lists, mass)
        })
        .collect();

    let mut values = collect_rows(n, sparse, |i, buf| {
        let mut n_oob = 0usize;
        for (t, (lists, mass)) in inbag.iter().enumerate() {
            if !layout.oob[i][t] {
                continue;
            }
            n_oob += 1;
            let leaf = leaves.values[[i, t]];
            if mass[leaf] == 0.0 {
                continue;
            }
            for &(j, c) in &lists[leaf] {
                buf[j] += c / mass[leaf];
            }
        }
        if n_oob > 0 {
            for v in buf.iter_mut() {
                *v /= n_oob as f64;
            }
        }
    });

    let test_rows: Vec<usize> = (0..n).filter(|&i| layout.position[i].is_none()).collect();
    if test_rows.len() > 1 {
        let block = if sparse {
            diffuse_sparse(&values, &test_rows, &layout.position)
        } else {
            let Storage::Dense(dense) = &values else {
                unreachable!()
            };
            let q = dense.select(Axis(0), &test_rows).select(Axis(1), train_rows);
            extend_test_test(q.view(), q.t())?
        };
        write_test_block(&mut values, &test_rows, &block);
    }
    Ok(ProximityMatrix::from_storage(values, Measure::Rfgap, false))
}

fn write_test_block(values: &mut Storage, test_rows: &[usize], block: &Array2<f64>) {
    match values {
        Storage::Dense(dense) => {
            for (a, &ra) in test_rows.iter().enumerate() {
                for (b, &rb) in test_rows.iter().enumerate() {
                    dense[[ra, rb]] = if a == b { 0.0 } else { block[[a, b]] };
                }
            }
        }
        Storage::Sparse(rows) => {
            for (a, &ra) in test_rows.iter().enumerate() {
                for (b, &rb) in test_rows.iter().enumerate() {
                    let v = block[[a, b]];
                    if a != b && v >= SPARSE_DROP {
                        rows[ra].push((rb, v));
                    }
                }
                rows[ra].sort_by_key(|&(j, _)| j);
            }
        }
    }
}

/// Diffusion product over sparse rows, scaled like [`extend_test_test`].
fn diffuse_sparse(values: &Storage, test_rows: &[usize], position: &[Option<usize>]) -> Array2<f64> {
    let Storage::Sparse(rows) = values else {
        unreachable!()
    };
    let n_test = test_rows.len();
    let mut by_train: Vec<Vec<(usize, f64)>> = vec![Vec::new(); position.len()];
    for (b, &rb) in test_rows.iter().enumerate() {
        for &(j, v) in &rows[rb] {
            if position[j].is_some() {
                by_train[j].push((b, v));
            }
        }
    }
    let mut block = Array2::zeros((n_test, n_test));
    for (a, &ra) in test_rows.iter().enumerate() {
        for &(j, qa) in &rows[ra] {
            for &(b, qb) in &by_train[j] {
                block[[a, b]] += qa * qb;
            }
        }
    }
    scale_to_unit(&mut block);
    block
}

fn scale_to_unit(block: &mut Array2<f64>) {
    let max = block.iter().copied().fold(0.0f64, f64::max);
    if max > 1.0 {
        *block /= max;
    }
}

/// Test-test similarities by diffusion through the training rows:
/// `p_test_train · p_train_test`, divided by its maximum when that exceeds 1.
pub fn extend_test_test(
    p_test_train: ArrayView2<'_, f64>,
    p_train_test: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if p_test_train.ncols() != p_train_test.nrows() || p_test_train.nrows() != p_train_test.ncols() {
        return Err(ProximityError::Shape(format!(
            "cannot diffuse {}x{} with {}x{}",
            p_test_train.nrows(),
            p_test_train.ncols(),
            p_train_test.nrows(),
            p_train_test.ncols()
        )));
    }
    let mut block = p_test_train.dot(&p_train_test);
    scale_to_unit(&mut block);
    Ok(block)
}

/// `(P + Pᵀ) / 2`, exactly symmetric.
pub fn symmetrize(p: &ProximityMatrix) -> ProximityMatrix {
    let storage = match &p.storage {
        Storage::Dense(v) => {
            let n = v.nrows();
            let mut out = v.clone();
            for i in 0..n {
                for j in i + 1..n {
                    let s = 0.5 * (v[[i, j]] + v[[j, i]]);
                    out[[i, j]] = s;
                    out[[j, i]] = s;
                }
            }
            Storage::Dense(out)
        }
        Storage::Sparse(rows) => {
            let n = rows.len();
            let mut merged: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
            for (i, row) in rows.iter().enumerate() {
                for &(j, v) in row {
                    if i == j {
                        *merged[i].entry(j).or_insert(0.0) += v;
                    } else {
                        let (a, b) = (i.min(j), i.max(j));
                        *merged[a].entry(b).or_insert(0.0) += v;
                    }
                }
            }
            let mut out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
            for (a, row) in merged.into_iter().enumerate() {
                for (b, sum) in row {
                    if a == b {
                        out[a].push((a, sum));
                    } else {
                        let s = 0.5 * sum;
                        out[a].push((b, s));
                        out[b].push((a, s));
                    }
                }
            }
            for row in &mut out {
                row.sort_by_key(|&(j, _)| j);
            }
            Storage::Sparse(out)
        }
    };
    ProximityMatrix {
        storage,
        kind: p.kind,
        row_index_map: p.row_index_map.clone(),
        symmetric: true,
    }
}

/// Computes one forest measure for all rows; OOB and RF-GAP are symmetrized.
pub fn forest_proximity(
    kind: Measure,
    forest: &RandomForest,
    leaves: &LeafIndexMatrix,
    train_rows: &[usize],
    storage: StorageMode,
) -> Result<ProximityMatrix> {
    match kind {
        Measure::Original => Ok(original_proximity(leaves, storage)),
        Measure::Oob => Ok(symmetrize(&oob_proximity(forest, leaves, train_rows, storage)?)),
        Measure::Rfgap => Ok(symmetrize(&rfgap_proximity(forest, leaves, train_rows, storage)?)),
        other => Err(ProximityError::Shape(format!(
            "{other} is not a forest proximity"
        ))),
    }
}

/// Rows whose RF-GAP row has at least one OOB tree: distinct training rows
/// with nonempty S_i.
pub fn rows_with_oob_trees(forest: &RandomForest) -> HashSet<usize> {
    (0..forest.n_train)
        .filter(|&p| (0..forest.n_trees()).any(|t| forest.is_oob(t, p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{fit_forest, ForestParams, MaxFeatures};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn leaf_matrix(rows: &[&[usize]]) -> LeafIndexMatrix {
        let n = rows.len();
        let t = rows[0].len();
        LeafIndexMatrix {
            values: Array2::from_shape_fn((n, t), |(i, k)| rows[i][k]),
        }
    }

    #[test]
    fn original_two_of_three_trees() {
        let leaves = leaf_matrix(&[&[0, 1, 1], &[1, 1, 1], &[0, 0, 0]]);
        let p = original_proximity(&leaves, StorageMode::Dense);
        assert!((p.get(0, 1) - 2.0 / 3.0).abs() < 1e-15);
        for i in 0..3 {
            assert_eq!(p.get(i, i), 1.0);
        }
        assert!(p.is_symmetric());
    }

    #[test]
    fn original_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let values = Array2::from_shape_fn((5, 4), |_| rng.random_range(0..3usize));
        let leaves = LeafIndexMatrix { values };
        let p = original_proximity(&leaves, StorageMode::Dense);
        for i in 0..5 {
            for j in 0..5 {
                let mut same = 0;
                for t in 0..4 {
                    if leaves.values[[i, t]] == leaves.values[[j, t]] {
                        same += 1;
                    }
                }
                assert_eq!(p.get(i, j), same as f64 / 4.0);
            }
        }
    }

    /// A hand-built forest shell: only `inbag_counts` and tree count matter
    /// for OOB and RF-GAP given a leaf matrix.
    fn shell_forest(inbag: Vec<Vec<u32>>) -> RandomForest {
        let x = Array2::from_shape_fn((inbag[0].len(), 1), |(i, _)| i as f64);
        let y: Vec<usize> = (0..inbag[0].len()).map(|i| i % 2).collect();
        let mut f = fit_forest(
            x.view(),
            &y,
            2,
            &ForestParams {
                n_trees: inbag.len(),
                ..Default::default()
            },
        )
        .unwrap();
        f.inbag_counts = inbag;
        f
    }

    #[test]
    fn oob_half_when_cooccurring_in_one_of_two_shared_trees() {
        // rows 0 and 1 both OOB in trees 0 and 2; same leaf only in tree 2
        let forest = shell_forest(vec![vec![0, 0, 2], vec![1, 1, 1], vec![0, 0, 3]]);
        let leaves = leaf_matrix(&[&[0, 0, 1], &[1, 0, 1], &[0, 0, 0]]);
        let p = oob_proximity(&forest, &leaves, &[0, 1, 2], StorageMode::Dense).unwrap();
        assert_eq!(p.get(0, 1), 0.5);
        assert_eq!(p.get(1, 0), 0.5);
        assert_eq!(p.get(0, 0), 1.0);
        // row 2 is never OOB
        assert_eq!(p.get(2, 2), 0.0);
        assert_eq!(p.get(0, 2), 0.0);
    }

    #[test]
    fn rfgap_hand_row() {
        let forest = shell_forest(vec![vec![2, 1, 1, 0]]);
        let leaves = leaf_matrix(&[&[0], &[0], &[0], &[0]]);
        let p = rfgap_proximity(&forest, &leaves, &[0, 1, 2, 3], StorageMode::Dense).unwrap();
        assert_eq!(p.to_dense().row(3).to_vec(), vec![0.5, 0.25, 0.25, 0.0]);
        for i in 0..3 {
            assert_eq!(p.to_dense().row(i).iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn extend_test_test_examples() {
        let zero = Array2::<f64>::zeros((2, 3));
        let out = extend_test_test(zero.view(), zero.t()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));

        let p_tt = array![[0.0, 1.0], [1.0, 0.0]];
        let p_tr = array![[0.2, 0.7], [0.9, 0.4]];
        let out = extend_test_test(p_tt.view(), p_tr.view()).unwrap();
        assert_eq!(out, array![[0.9, 0.4], [0.2, 0.7]]);

        let half = array![[0.5, 0.5], [0.5, 0.5]];
        let out = extend_test_test(half.view(), half.t()).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));

        let bad = Array2::<f64>::zeros((3, 3));
        assert!(extend_test_test(half.view(), bad.view()).is_err());
    }

    #[test]
    fn extend_scales_large_products() {
        let a = array![[2.0, 2.0]];
        let out = extend_test_test(a.view(), a.t()).unwrap();
        assert_eq!(out, array![[1.0]]);
    }

    #[test]
    fn symmetrize_examples() {
        let p = ProximityMatrix::from_dense(array![[1.0, 0.2], [0.6, 1.0]], Measure::Rfgap);
        assert!(!p.symmetric);
        let s = symmetrize(&p);
        assert_eq!(s.get(0, 1), 0.4);
        assert_eq!(s.get(1, 0), 0.4);
        assert_eq!(s.max_abs_asymmetry(), 0.0);
        let again = symmetrize(&s);
        assert_eq!(again.to_dense(), s.to_dense());
    }

    fn random_case(seed: u64) -> (RandomForest, LeafIndexMatrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(4..=12usize);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..1.0));
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut train: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
        if train.len() < 2 {
            train = vec![0, 1];
        }
        let xt = x.select(Axis(0), &train);
        let yt: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let params = ForestParams {
            n_trees: rng.random_range(1..=5),
            max_features: MaxFeatures::All,
            seed,
            ..Default::default()
        };
        let f = fit_forest(xt.view(), &yt, 2, &params).unwrap();
        let leaves = f.apply(x.view()).unwrap();
        (f, leaves, train)
    }

    #[test]
    fn sparse_and_dense_agree() {
        for seed in 0..10 {
            let (f, leaves, train) = random_case(seed);
            for kind in Measure::FOREST {
                let d = forest_proximity(kind, &f, &leaves, &train, StorageMode::Dense).unwrap();
                let s = forest_proximity(kind, &f, &leaves, &train, StorageMode::Sparse).unwrap();
                assert!(s.is_sparse());
                let (dd, sd) = (d.to_dense(), s.to_dense());
                for (a, b) in dd.iter().zip(sd.iter()) {
                    assert!((a - b).abs() < 1e-12, "{kind}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn triples_round_trip() {
        let (f, leaves, train) = random_case(3);
        let p = forest_proximity(Measure::Rfgap, &f, &leaves, &train, StorageMode::Dense).unwrap();
        let mut buf = Vec::new();
        p.write_triples(&mut buf).unwrap();
        let back = ProximityMatrix::read_triples(buf.as_slice(), StorageMode::Dense).unwrap();
        assert_eq!(back.kind, Measure::Rfgap);
        for i in 0..p.n() {
            for j in 0..p.n() {
                let v = p.get(i, j);
                let expected = if v >= SPARSE_DROP { v } else { 0.0 };
                assert_eq!(back.get(i, j), expected);
            }
        }
        let mut text = Vec::new();
        p.write_text(&mut text).unwrap();
        let text = String::from_utf8(text).unwrap();
        assert!(text.starts_with(&format!("{} rfgap\n", p.n())));
        assert_eq!(text.lines().count(), p.n() + 1);
    }

    #[test]
    fn incremental_trees_agree_with_full() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| ((i * 5 + j * 3) % 7) as f64);
        let y: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let p3 = ForestParams { n_trees: 3, seed: 17, ..Default::default() };
        let p5 = ForestParams { n_trees: 5, ..p3 };
        let f3 = fit_forest(x.view(), &y, 2, &p3).unwrap();
        let f5 = fit_forest(x.view(), &y, 2, &p5).unwrap();
        assert_eq!(&f5.trees[..3], &f3.trees[..]);
        let l5 = f5.apply(x.view()).unwrap();
        let full = original_proximity(&l5, StorageMode::Dense).to_dense() * 5.0;
        let head = original_proximity(&l5.trees(0..3), StorageMode::Dense).to_dense() * 3.0;
        let tail = original_proximity(&l5.trees(3..5), StorageMode::Dense).to_dense() * 2.0;
        let sum = head + tail;
        for (a, b) in full.iter().zip(sum.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn entries_in_unit_interval(seed in any::<u64>()) {
            let (f, leaves, train) = random_case(seed);
            for kind in Measure::FOREST {
                let raw = match kind {
                    Measure::Original => original_proximity(&leaves, StorageMode::Dense),
                    Measure::Oob => oob_proximity(&f, &leaves, &train, StorageMode::Dense).unwrap(),
                    _ => rfgap_proximity(&f, &leaves, &train, StorageMode::Dense).unwrap(),
                };
                for &v in raw.to_dense().iter() {
                    prop_assert!((0.0..=1.0).contains(&v), "{kind}: {v}");
                }
            }
            let oob = oob_proximity(&f, &leaves, &train, StorageMode::Dense).unwrap();
            prop_assert!(oob.is_symmetric());
        }
    }
}

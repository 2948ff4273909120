use std::cmp::Ordering;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ForestParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    /// `max(1, floor(sqrt(d)))` features per node.
    Sqrt,
    All,
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::All => n_features.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf_id: usize,
        /// In-bag class counts, with bootstrap multiplicity.
        class_counts: Vec<u32>,
    },
}

/// A CART classification tree. Node 0 is the root; leaves carry dense ids in
/// depth-first (left before right) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_leaves: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Node index of each leaf id.
    pub leaf_nodes: Vec<usize>,
}

impl DecisionTree {
    /// Routes a sample to its leaf and returns the leaf id.
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { leaf_id, .. } => return *leaf_id,
            }
        }
    }

    pub fn leaf_counts(&self, leaf_id: usize) -> &[u32] {
        match &self.nodes[self.leaf_nodes[leaf_id]] {
            Node::Leaf { class_counts, .. } => class_counts,
            Node::Internal { .. } => unreachable!("leaf_nodes points at an internal node"),
        }
    }

    /// Normalized in-bag class distribution of a leaf.
    pub fn leaf_distribution(&self, leaf_id: usize) -> Vec<f64> {
        let counts = self.leaf_counts(leaf_id);
        let total: u32 = counts.iter().sum();
        counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Fits a tree by greedy weighted-Gini splitting.
///
/// Rows with zero weight are ignored. A node becomes a leaf when its weight is
/// below `min_samples_split`, it is pure, or no candidate split with both
/// children weighing at least `min_samples_leaf` lowers impurity.
pub fn fit_tree<R: Rng>(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    weights: &[u32],
    params: &ForestParams,
    rng: &mut R,
) -> DecisionTree {
    let n_features = x.ncols();
    let mut nodes = vec![placeholder()];
    let mut leaf_nodes = Vec::new();
    let root_rows: Vec<usize> = (0..x.nrows()).filter(|&i| weights[i] > 0).collect();
    let mut stack = vec![(0usize, root_rows)];

    while let Some((slot, rows)) = stack.pop() {
        let counts = class_counts(&rows, y, weights, n_classes);
        let total: u32 = counts.iter().sum();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let split = if pure || total < params.min_samples_split as u32 {
            None
        } else {
            best_split(x, y, weights, &rows, &counts, n_classes, params, rng)
        };
        match split {
            None => {
                nodes[slot] = Node::Leaf {
                    leaf_id: leaf_nodes.len(),
                    class_counts: counts,
                };
                leaf_nodes.push(slot);
            }
            Some(split) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| x[[i, split.feature]] <= split.threshold);
                let left = nodes.len();
                nodes.push(placeholder());
                let right = nodes.len();
                nodes.push(placeholder());
                nodes[slot] = Node::Internal {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                };
                stack.push((right, right_rows));
                stack.push((left, left_rows));
            }
        }
    }

    DecisionTree {
        n_leaves: leaf_nodes.len(),
        nodes,
        n_features,
        n_classes,
        leaf_nodes,
    }
}

fn placeholder() -> Node {
    Node::Leaf {
        leaf_id: usize::MAX,
        class_counts: Vec::new(),
    }
}

fn class_counts(rows: &[usize], y: &[usize], weights: &[u32], n_classes: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n_classes];
    for &i in rows {
        counts[y[i]] += weights[i];
    }
    counts
}

fn sum_sq_over(counts: &[u32], total: u32) -> f64 {
    let s: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    s / total as f64
}

/// Features are visited in a random order until `max_features` non-constant
/// ones have been scored. Among scored candidates the largest gain wins, with
/// ties going to the lowest feature index and then the lowest threshold.
#[allow(clippy::too_many_arguments)]
fn best_split<R: Rng>(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    weights: &[u32],
    rows: &[usize],
    parent_counts: &[u32],
    n_classes: usize,
    params: &ForestParams,
    rng: &mut R,
) -> Option<Split> {
    let n_features = x.ncols();
    let budget = params.max_features.resolve(n_features);
    let total: u32 = parent_counts.iter().sum();
    let parent_score = sum_sq_over(parent_counts, total);
    let tol = 1e-12 * total as f64;
    let min_leaf = params.min_samples_leaf as u32;

    let mut order: Vec<usize> = (0..n_features).collect();
    order.shuffle(rng);

    let mut best: Option<Split> = None;
    let mut scored = 0;
    let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
    for feature in order {
        if scored == budget {
            break;
        }
        sorted.clear();
        sorted.extend(rows.iter().map(|&i| (x[[i, feature]], i)));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if sorted[0].0 == sorted[sorted.len() - 1].0 {
            continue;
        }
        scored += 1;

        let mut left = vec![0u32; n_classes];
        let mut left_total = 0u32;
        for p in 0..sorted.len() - 1 {
            let (value, i) = sorted[p];
            left[y[i]] += weights[i];
            left_total += weights[i];
            let next = sorted[p + 1].0;
            if next == value {
                continue;
            }
            let right_total = total - left_total;
            if left_total < min_leaf || right_total < min_leaf {
                continue;
            }
            let right: Vec<u32> = parent_counts.iter().zip(&left).map(|(a, b)| a - b).collect();
            let gain =
                sum_sq_over(&left, left_total) + sum_sq_over(&right, right_total) - parent_score;
            if gain <= tol {
                continue;
            }
            let mut threshold = value + (next - value) / 2.0;
            if threshold >= next || !threshold.is_finite() {
                threshold = value;
            }
            let better = match &best {
                None => true,
                Some(b) => {
                    if gain > b.gain + tol {
                        true
                    } else if gain + tol >= b.gain {
                        (feature, threshold).partial_cmp(&(b.feature, b.threshold))
                            == Some(Ordering::Less)
                    } else {
                        false
                    }
                }
            };
            if better {
                best = Some(Split {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(min_split: usize, min_leaf: usize) -> ForestParams {
        ForestParams {
            n_trees: 1,
            min_samples_split: min_split,
            min_samples_leaf: min_leaf,
            max_features: MaxFeatures::All,
            seed: 0,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn pure_labels_give_single_leaf() {
        let x = array![[0.0], [1.0], [2.0]];
        let tree = fit_tree(x.view(), &[1, 1, 1], 2, &[1, 1, 1], &params(2, 1), &mut rng());
        assert_eq!(tree.n_leaves, 1);
        assert_eq!(tree.leaf_counts(0), &[0, 3]);
    }

    #[test]
    fn two_points_one_split() {
        let x = array![[0.0], [1.0]];
        let tree = fit_tree(x.view(), &[0, 1], 2, &[1, 1], &params(2, 1), &mut rng());
        assert_eq!(tree.n_leaves, 2);
        match &tree.nodes[0] {
            Node::Internal { threshold, .. } => assert_eq!(*threshold, 0.5),
            other => panic!("{other:?}"),
        }
        assert_eq!(tree.leaf_of(&[0.0]), 0);
        assert_eq!(tree.leaf_of(&[1.0]), 1);
    }

    #[test]
    fn min_samples_split_above_weight_gives_leaf() {
        let x = array![[0.0], [1.0], [2.0]];
        let tree = fit_tree(x.view(), &[0, 1, 0], 2, &[1, 1, 1], &params(4, 1), &mut rng());
        assert_eq!(tree.n_leaves, 1);
    }

    #[test]
    fn min_samples_leaf_respected_with_multiplicity() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [0, 0, 1, 1];
        let w = [2, 1, 1, 3];
        let tree = fit_tree(x.view(), &y, 2, &w, &params(2, 3), &mut rng());
        for leaf in 0..tree.n_leaves {
            let total: u32 = tree.leaf_counts(leaf).iter().sum();
            assert!(total >= 3);
        }
        assert_eq!(tree.n_leaves, 2);
    }

    #[test]
    fn zero_weight_rows_ignored() {
        let x = array![[0.0], [1.0], [2.0]];
        let tree = fit_tree(x.view(), &[0, 1, 1], 2, &[1, 0, 2], &params(2, 1), &mut rng());
        let total: u32 = (0..tree.n_leaves)
            .map(|l| tree.leaf_counts(l).iter().sum::<u32>())
            .sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn equal_gain_prefers_lowest_feature() {
        // both columns separate the classes identically
        let x = array![[0.0, 10.0], [1.0, 11.0]];
        let mut p = params(2, 1);
        p.max_features = MaxFeatures::All;
        for seed in 0..10 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let tree = fit_tree(x.view(), &[0, 1], 2, &[1, 1], &p, &mut r);
            match &tree.nodes[0] {
                Node::Internal { feature, .. } => assert_eq!(*feature, 0),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn training_rows_reach_leaf_holding_them() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let x = Array2::from_shape_fn((n, 3), |(i, j)| ((i * 7 + j * 13) % 17) as f64 + r.random::<f64>());
        let y: Vec<usize> = (0..n).map(|i| (i * 3 % 5) % 3).collect();
        let w: Vec<u32> = (0..n).map(|i| (i % 3) as u32).collect();
        let tree = fit_tree(x.view(), &y, 3, &w, &params(2, 1), &mut r);
        let mut replay = vec![vec![0u32; 3]; tree.n_leaves];
        for i in 0..n {
            let leaf = tree.leaf_of(x.row(i).as_slice().unwrap());
            replay[leaf][y[i]] += w[i];
        }
        for (leaf, counts) in replay.iter().enumerate() {
            assert_eq!(counts.as_slice(), tree.leaf_counts(leaf));
        }
    }
}

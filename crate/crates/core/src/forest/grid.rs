use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_forest, ForestError, ForestParams, MaxFeatures, Result};
use crate::metrics::weighted_f1;
use crate::tabular::stratified_folds;

/// The tuning grid: n_trees x min_samples_split x min_samples_leaf,
/// enumerated with n_trees outermost.
pub fn default_grid(seed: u64) -> Vec<ForestParams> {
    const N_TREES: [usize; 6] = [50, 100, 200, 500, 700, 1000];
    const MIN_SPLIT: [usize; 3] = [2, 5, 10];
    const MIN_LEAF: [usize; 9] = [1, 20, 50, 80, 100, 150, 200, 300, 500];
    let mut grid = Vec::with_capacity(N_TREES.len() * MIN_SPLIT.len() * MIN_LEAF.len());
    for &n_trees in &N_TREES {
        for &min_samples_split in &MIN_SPLIT {
            for &min_samples_leaf in &MIN_LEAF {
                grid.push(ForestParams {
                    n_trees,
                    min_samples_split,
                    min_samples_leaf,
                    max_features: MaxFeatures::Sqrt,
                    seed,
                });
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: ForestParams,
    pub best_index: usize,
    /// Mean weighted F1 per candidate; `None` when no fold was scorable.
    pub scores: Vec<Option<f64>>,
}

/// Selects the candidate with the highest mean weighted F1 over `k`
/// stratified folds. Ties keep the earliest candidate. A fold whose training
/// part lacks one of the classes present in `y` is skipped.
pub fn grid_search(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    grid: &[ForestParams],
    k: usize,
    fold_seed: u64,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(ForestError::Grid("empty grid".into()));
    }
    for params in grid {
        params.validate()?;
    }
    let folds = stratified_folds(y, k, fold_seed)?;
    let present: Vec<bool> = (0..n_classes).map(|c| y.contains(&c)).collect();

    let scores: Vec<Option<f64>> = grid
        .par_iter()
        .map(|params| cv_score(x, y, n_classes, params, &folds, &present))
        .collect::<Result<_>>()?;

    let mut best: Option<(usize, f64)> = None;
    for (idx, score) in scores.iter().enumerate() {
        if let Some(s) = *score {
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((idx, s));
            }
        }
    }
    let best_index = best.map(|(idx, _)| idx);
    let best_index =
        best_index.ok_or_else(|| ForestError::Grid("no candidate had a scorable fold".into()))?;
    Ok(GridSearchResult {
        best: grid[best_index],
        best_index,
        scores,
    })
}

fn cv_score(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    params: &ForestParams,
    folds: &[Vec<usize>],
    present: &[bool],
) -> Result<Option<f64>> {
    let n = y.len();
    let mut total = 0.0;
    let mut scored = 0;
    for held_out in folds {
        let mut is_held = vec![false; n];
        for &i in held_out {
            is_held[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !is_held[i]).collect();
        let mut covered = vec![false; n_classes];
        for &i in &train {
            covered[y[i]] = true;
        }
        if covered.iter().zip(present).any(|(c, p)| *p && !c) || train.len() < 2 {
            continue;
        }
        let x_train = x.select(Axis(0), &train);
        let y_train: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let forest = fit_forest(x_train.view(), &y_train, n_classes, params)?;
        let x_held = x.select(Axis(0), held_out);
        let pred = forest.predict(x_held.view())?;
        let truth: Vec<usize> = held_out.iter().map(|&i| y[i]).collect();
        total += weighted_f1(&truth, &pred, n_classes).expect("equal lengths");
        scored += 1;
    }
    Ok((scored > 0).then(|| total / scored as f64))
}

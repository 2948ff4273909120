use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{BaselineReport, CompareRow, SeedReport, SweepRow};
use super::{ExperimentConfig, PipelineError, Result};
use crate::forest::{fit_forest, grid_search, ForestParams, LeafIndexMatrix, RandomForest};
use crate::gcn::{mlp_baseline_train_predict, predict, train, TrainConfig};
use crate::graph::{
    assemble_graph, cosine_matrix, jaccard_matrix, minmax_shift, rbf_matrix, threshold_adjacency,
    Adjacency, GraphData,
};
use crate::metrics::{aggregate_seeds, weighted_f1};
use crate::proximity::{forest_proximity, Measure, ProximityMatrix};
use crate::tabular::{encode, stratified_folds, stratified_split, SplitIndices, TabularDataset};

/// Everything that depends only on the seed: split, encoded features and the
/// tuned forest applied to all rows.
#[derive(Debug, Clone)]
pub struct PreparedSeed {
    pub seed: u64,
    pub split: SplitIndices,
    pub features: Array2<f64>,
    /// All labels. Test labels are read only when scoring.
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub forest_params: ForestParams,
    pub forest_cv_f1: f64,
    pub forest: RandomForest,
    pub leaves: LeafIndexMatrix,
    /// CV folds over the training nodes, as node ids.
    pub folds: Vec<Vec<usize>>,
}

impl PreparedSeed {
    fn select_rows(&self, rows: &[usize]) -> (Array2<f64>, Vec<usize>) {
        (
            self.features.select(Axis(0), rows),
            rows.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    fn gcn_config(&self, config: &ExperimentConfig) -> TrainConfig {
        config.gcn.with_seed(config.gcn.seed.wrapping_add(self.seed))
    }
}

pub fn prepare_seed(
    dataset: &TabularDataset,
    config: &ExperimentConfig,
    seed: u64,
    split: SplitIndices,
) -> Result<PreparedSeed> {
    config.validate()?;
    config.check_budget(dataset.n_rows())?;
    if split.n_rows() != dataset.n_rows() {
        return Err(PipelineError::Config(format!(
            "split covers {} rows, dataset has {}",
            split.n_rows(),
            dataset.n_rows()
        )));
    }
    let n_classes = dataset.n_classes();
    let features = encode(dataset, &split.train)?.values;
    let x_train = features.select(Axis(0), &split.train);
    let y_train: Vec<usize> = split.train.iter().map(|&i| dataset.labels[i]).collect();

    let grid = config.forest_grid.candidates(seed);
    let search = grid_search(x_train.view(), &y_train, n_classes, &grid, config.cv_folds, seed)?;
    let forest_cv_f1 = search.scores[search.best_index].unwrap_or(0.0);
    let forest = fit_forest(x_train.view(), &y_train, n_classes, &search.best)?;
    let leaves = forest.apply(features.view())?;

    let folds = stratified_folds(&y_train, config.cv_folds, seed)?
        .into_iter()
        .map(|fold| fold.into_iter().map(|p| split.train[p]).collect())
        .collect();

    Ok(PreparedSeed {
        seed,
        split,
        features,
        labels: dataset.labels.clone(),
        n_classes,
        forest_params: search.best,
        forest_cv_f1,
        forest,
        leaves,
        folds,
    })
}

/// A similarity matrix over all rows, plus per-fold matrices in strict mode.
#[derive(Debug, Clone)]
pub struct SimilaritySource {
    pub measure: Measure,
    pub full: ProximityMatrix,
    pub per_fold: Option<Vec<ProximityMatrix>>,
}

fn fold_visible(prep: &PreparedSeed, fold: &[usize]) -> Vec<usize> {
    prep.split
        .train
        .iter()
        .copied()
        .filter(|i| !fold.contains(i))
        .collect()
}

/// Forests refit on the visible part of each fold, with their leaf matrices.
fn fold_forests(prep: &PreparedSeed) -> Result<Vec<(RandomForest, LeafIndexMatrix, Vec<usize>)>> {
    prep.folds
        .iter()
        .map(|fold| {
            let visible = fold_visible(prep, fold);
            let (x, y) = prep.select_rows(&visible);
            let forest = fit_forest(x.view(), &y, prep.n_classes, &prep.forest_params)?;
            let leaves = forest.apply(prep.features.view())?;
            Ok((forest, leaves, visible))
        })
        .collect()
}

fn similarity_sources(
    prep: &PreparedSeed,
    measures: &[Measure],
    config: &ExperimentConfig,
) -> Result<Vec<SimilaritySource>> {
    let strict_forests = if config.strict && measures.iter().any(|m| m.is_forest()) {
        Some(fold_forests(prep)?)
    } else {
        None
    };
    let mut shifted = None;
    measures
        .iter()
        .map(|&measure| {
            let full = match measure {
                Measure::Cosine => cosine_matrix(
                    shifted
                        .get_or_insert_with(|| minmax_shift(prep.features.view()))
                        .view(),
                ),
                Measure::Jaccard => jaccard_matrix(
                    shifted
                        .get_or_insert_with(|| minmax_shift(prep.features.view()))
                        .view(),
                )?,
                Measure::Rbf => rbf_matrix(prep.features.view(), config.rbf_gamma)?,
                _ => forest_proximity(
                    measure,
                    &prep.forest,
                    &prep.leaves,
                    &prep.split.train,
                    config.storage,
                )?,
            };
            let per_fold = match (&strict_forests, measure.is_forest()) {
                (Some(forests), true) => Some(
                    forests
                        .iter()
                        .map(|(forest, leaves, visible)| {
                            forest_proximity(measure, forest, leaves, visible, config.storage)
                        })
                        .collect::<std::result::Result<Vec<_>, _>>()?,
                ),
                _ => None,
            };
            Ok(SimilaritySource {
                measure,
                full,
                per_fold,
            })
        })
        .collect()
}

/// One training graph per fold: the held-out fold's labels are removed and
/// those nodes join the evaluation mask. Returns the graph and the held-out
/// node ids.
pub fn cv_fold_graphs(graph: &GraphData, folds: &[Vec<usize>]) -> Vec<(GraphData, Vec<usize>)> {
    folds
        .iter()
        .map(|fold| {
            let visible: Vec<usize> = (0..graph.n_nodes())
                .filter(|&i| graph.train_mask[i] && !fold.contains(&i))
                .collect();
            (graph.restrict_training(&visible), fold.clone())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub proximity: Measure,
    pub alpha: f64,
    pub edge_count: usize,
    pub cv_f1: f64,
    pub test_f1: f64,
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub candidates: Vec<CandidateScore>,
    pub selected: usize,
    pub test_predictions: Vec<usize>,
}

impl SelectionOutcome {
    pub fn best(&self) -> &CandidateScore {
        &self.candidates[self.selected]
    }
}

fn score_nodes(prep: &PreparedSeed, nodes: &[usize], pred: &[usize]) -> Result<f64> {
    let truth: Vec<usize> = nodes.iter().map(|&i| prep.labels[i]).collect();
    let guess: Vec<usize> = nodes.iter().map(|&i| pred[i]).collect();
    Ok(weighted_f1(&truth, &guess, prep.n_classes)?)
}

fn full_graph(prep: &PreparedSeed, adjacency: Adjacency) -> Result<GraphData> {
    Ok(assemble_graph(
        adjacency,
        prep.features.clone(),
        &prep.split,
        &prep.labels,
        prep.n_classes,
    )?)
}

/// Trains on all train labels and scores the test nodes.
fn fit_and_score_test(
    prep: &PreparedSeed,
    graph: &GraphData,
    gcn: &TrainConfig,
) -> Result<(f64, Vec<usize>)> {
    let model = train(graph, gcn)?.model;
    let pred = predict(graph, &model)?;
    let f1 = score_nodes(prep, &prep.split.test, &pred)?;
    let test_pred = prep.split.test.iter().map(|&i| pred[i]).collect();
    Ok((f1, test_pred))
}

fn evaluate_candidate(
    prep: &PreparedSeed,
    source: &SimilaritySource,
    alpha: f64,
    config: &ExperimentConfig,
) -> Result<(CandidateScore, Vec<usize>)> {
    let gcn = prep.gcn_config(config);
    let adjacency = threshold_adjacency(&source.full, alpha)?;
    let edge_count = adjacency.n_edges();
    let graph = full_graph(prep, adjacency)?;

    let mut fold_scores = Vec::with_capacity(prep.folds.len());
    for (f, (fold_graph, held_out)) in cv_fold_graphs(&graph, &prep.folds).into_iter().enumerate() {
        let fold_graph = match &source.per_fold {
            Some(mats) => fold_graph.with_adjacency(threshold_adjacency(&mats[f], alpha)?)?,
            None => fold_graph,
        };
        let model = train(&fold_graph, &gcn)?.model;
        let pred = predict(&fold_graph, &model)?;
        fold_scores.push(score_nodes(prep, &held_out, &pred)?);
    }
    let cv_f1 = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;

    let (test_f1, test_pred) = fit_and_score_test(prep, &graph, &gcn)?;
    Ok((
        CandidateScore {
            proximity: source.measure,
            alpha,
            edge_count,
            cv_f1,
            test_f1,
        },
        test_pred,
    ))
}

/// Higher CV score wins, then the higher alpha, then the earlier measure.
fn preferred(a: &CandidateScore, b: &CandidateScore) -> bool {
    if a.cv_f1 != b.cv_f1 {
        return a.cv_f1 > b.cv_f1;
    }
    if a.alpha != b.alpha {
        return a.alpha > b.alpha;
    }
    a.proximity < b.proximity
}

/// Scores every (source, alpha) pair by CV on the training nodes and picks
/// the best. Test scores are recorded for every candidate but never used
/// for selection.
pub fn select_candidate(
    prep: &PreparedSeed,
    sources: &[SimilaritySource],
    alphas: &[f64],
    config: &ExperimentConfig,
) -> Result<SelectionOutcome> {
    let cells: Vec<(&SimilaritySource, f64)> = sources
        .iter()
        .flat_map(|s| alphas.iter().map(move |&a| (s, a)))
        .collect();
    let results: Vec<(CandidateScore, Vec<usize>)> = cells
        .par_iter()
        .map(|&(source, alpha)| evaluate_candidate(prep, source, alpha, config))
        .collect::<Result<_>>()?;
    let mut selected = 0;
    for (idx, (score, _)) in results.iter().enumerate() {
        if preferred(score, &results[selected].0) {
            selected = idx;
        }
    }
    let (candidates, mut predictions): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(SelectionOutcome {
        candidates,
        selected,
        test_predictions: predictions.swap_remove(selected),
    })
}

fn rf_test_f1(prep: &PreparedSeed) -> Result<f64> {
    let (x_test, y_test) = prep.select_rows(&prep.split.test);
    let pred = prep.forest.predict(x_test.view())?;
    Ok(weighted_f1(&y_test, &pred, prep.n_classes)?)
}

/// Full pipeline for one seed on a given split.
pub fn run_rfgnn_with_split(
    dataset: &TabularDataset,
    config: &ExperimentConfig,
    seed: u64,
    split: SplitIndices,
) -> Result<SeedReport> {
    let prep = prepare_seed(dataset, config, seed, split)?;
    let sources = similarity_sources(&prep, &config.proximities, config)?;
    let outcome = select_candidate(&prep, &sources, &config.alpha_grid.values(), config)?;
    let best = outcome.best().clone();
    Ok(SeedReport {
        seed,
        forest_params: prep.forest_params,
        forest_cv_f1: prep.forest_cv_f1,
        selected_proximity: best.proximity,
        selected_alpha: best.alpha,
        test_f1: best.test_f1,
        rf_test_f1: rf_test_f1(&prep)?,
        test_predictions: outcome.test_predictions,
        candidates: outcome.candidates,
    })
}

/// Full pipeline for one seed with a stratified split drawn from that seed.
pub fn run_rfgnn(dataset: &TabularDataset, config: &ExperimentConfig, seed: u64) -> Result<SeedReport> {
    let split = stratified_split(dataset, config.train_fraction, seed)?;
    run_rfgnn_with_split(dataset, config, seed, split)
}

/// Test F1 at every alpha for one measure, with no selection, aggregated over
/// seeds. Edge counts are averaged over seeds.
pub fn threshold_sweep(
    dataset: &TabularDataset,
    config: &ExperimentConfig,
    measure: Measure,
) -> Result<Vec<SweepRow>> {
    let alphas = config.alpha_grid.values();
    let mut f1 = vec![Vec::with_capacity(config.seeds.len()); alphas.len()];
    let mut edges = vec![0usize; alphas.len()];
    for &seed in &config.seeds {
        let split = stratified_split(dataset, config.train_fraction, seed)?;
        let prep = prepare_seed(dataset, config, seed, split)?;
        let strictless = ExperimentConfig {
            strict: false,
            ..config.clone()
        };
        let source = similarity_sources(&prep, &[measure], &strictless)?.remove(0);
        let gcn = prep.gcn_config(config);
        let per_alpha: Vec<(f64, usize)> = alphas
            .par_iter()
            .map(|&alpha| {
                let adjacency = threshold_adjacency(&source.full, alpha)?;
                let n_edges = adjacency.n_edges();
                let graph = full_graph(&prep, adjacency)?;
                Ok((fit_and_score_test(&prep, &graph, &gcn)?.0, n_edges))
            })
            .collect::<Result<_>>()?;
        for (k, (score, n_edges)) in per_alpha.into_iter().enumerate() {
            f1[k].push(score);
            edges[k] += n_edges;
        }
    }
    alphas
        .iter()
        .zip(f1)
        .zip(edges)
        .map(|((&alpha, scores), total)| {
            let (mean_f1, std_f1) = aggregate_seeds(&scores)?;
            Ok(SweepRow {
                alpha,
                mean_f1,
                std_f1,
                edge_count: total as f64 / config.seeds.len() as f64,
            })
        })
        .collect()
}

/// Runs the selection protocol once per similarity measure on the same seeds
/// and splits: the three forest proximities, then cosine, Jaccard and RBF.
pub fn compare_similarities(dataset: &TabularDataset, config: &ExperimentConfig) -> Result<Vec<CompareRow>> {
    let measures: Vec<Measure> = Measure::FOREST.into_iter().chain(Measure::BASELINES).collect();
    let alphas = config.alpha_grid.values();
    let mut scores = vec![Vec::with_capacity(config.seeds.len()); measures.len()];
    for &seed in &config.seeds {
        let split = stratified_split(dataset, config.train_fraction, seed)?;
        let prep = prepare_seed(dataset, config, seed, split)?;
        let sources = similarity_sources(&prep, &measures, config)?;
        for (k, source) in sources.iter().enumerate() {
            let outcome = select_candidate(&prep, std::slice::from_ref(source), &alphas, config)?;
            scores[k].push(outcome.best().test_f1);
        }
    }
    measures
        .into_iter()
        .zip(scores)
        .map(|(measure, s)| {
            let (mean_f1, std_f1) = aggregate_seeds(&s)?;
            Ok(CompareRow {
                measure,
                mean_f1,
                std_f1,
                per_seed: s,
            })
        })
        .collect()
}

/// Tuned random forest and the MLP variants on the same splits.
pub fn run_baselines(dataset: &TabularDataset, config: &ExperimentConfig) -> Result<BaselineReport> {
    let mut rf = Vec::with_capacity(config.seeds.len());
    let mut mlp = vec![Vec::with_capacity(config.seeds.len()); config.mlp_hidden_dims.len()];
    for &seed in &config.seeds {
        let split = stratified_split(dataset, config.train_fraction, seed)?;
        let prep = prepare_seed(dataset, config, seed, split)?;
        rf.push(rf_test_f1(&prep)?);
        let (_, y_test) = prep.select_rows(&prep.split.test);
        for (k, dims) in config.mlp_hidden_dims.iter().enumerate() {
            let cfg = TrainConfig {
                hidden_dims: dims.clone(),
                ..prep.gcn_config(config)
            };
            let pred =
                mlp_baseline_train_predict(prep.features.view(), &prep.labels, &prep.split, &cfg)?;
            mlp[k].push(weighted_f1(&y_test, &pred, prep.n_classes)?);
        }
    }
    BaselineReport::new(config, rf, mlp)
}

/// The graph for one seed at a fixed measure and threshold. Baseline
/// similarities are accepted too.
pub fn build_graph(
    dataset: &TabularDataset,
    config: &ExperimentConfig,
    seed: u64,
    measure: Measure,
    alpha: f64,
) -> Result<Adjacency> {
    let split = stratified_split(dataset, config.train_fraction, seed)?;
    let prep = prepare_seed(dataset, config, seed, split)?;
    let strictless = ExperimentConfig {
        strict: false,
        ..config.clone()
    };
    let source = similarity_sources(&prep, &[measure], &strictless)?.remove(0);
    Ok(threshold_adjacency(&source.full, alpha)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{AlphaGridSpec, ForestGridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(n_per_class: usize, seed: u64) -> TabularDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2 {
            let c = if class == 0 { -1.5 } else { 1.5 };
            for _ in 0..n_per_class {
                rows.push(vec![c + rng.random_range(-1.0..1.0), c + rng.random_range(-1.0..1.0)]);
                labels.push(class);
            }
        }
        TabularDataset::from_numeric_rows(&rows, &labels).unwrap()
    }

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            alpha_grid: AlphaGridSpec { count: 3, min: 0.2, max: 0.6 },
            seeds: vec![0],
            cv_folds: 3,
            forest_grid: ForestGridSpec {
                n_trees: vec![20],
                min_samples_split: vec![2],
                min_samples_leaf: vec![1, 5],
                ..ForestGridSpec::default()
            },
            gcn: TrainConfig {
                epochs: 30,
                hidden_dims: vec![8],
                head_hidden: 8,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn fold_graphs_hide_held_out_labels() {
        let data = blobs(15, 0);
        let cfg = tiny_config();
        let split = stratified_split(&data, 0.8, 0).unwrap();
        let prep = prepare_seed(&data, &cfg, 0, split).unwrap();
        let graph = full_graph(&prep, Adjacency::empty(data.n_rows())).unwrap();
        for &i in &prep.split.test {
            assert_eq!(graph.labels[i], None);
        }
        for (g, held) in cv_fold_graphs(&graph, &prep.folds) {
            for &i in &held {
                assert_eq!(g.labels[i], None);
                assert!(!g.train_mask[i]);
            }
            for &i in &prep.split.test {
                assert_eq!(g.labels[i], None);
            }
            let visible = g.train_targets().len();
            assert_eq!(visible + held.len(), prep.split.train.len());
        }
    }

    #[test]
    fn selection_tie_break() {
        let c = |proximity, alpha, cv_f1| CandidateScore { proximity, alpha, edge_count: 0, cv_f1, test_f1: 0.0 };
        assert!(preferred(&c(Measure::Oob, 0.1, 0.9), &c(Measure::Original, 0.9, 0.8)));
        assert!(preferred(&c(Measure::Oob, 0.5, 0.8), &c(Measure::Original, 0.4, 0.8)));
        assert!(preferred(&c(Measure::Original, 0.5, 0.8), &c(Measure::Rfgap, 0.5, 0.8)));
        assert!(preferred(&c(Measure::Rfgap, 0.5, 0.8), &c(Measure::Oob, 0.5, 0.8)));
    }

    #[test]
    fn strict_mode_runs() {
        let data = blobs(15, 1);
        let cfg = ExperimentConfig { strict: true, proximities: vec![Measure::Rfgap], ..tiny_config() };
        let report = run_rfgnn(&data, &cfg, 0).unwrap();
        assert_eq!(report.candidates.len(), 3);
        assert!(report.test_f1 >= 0.0 && report.test_f1 <= 1.0);
    }

    #[test]
    fn empty_graph_pipeline_completes() {
        let data = blobs(15, 2);
        let cfg = ExperimentConfig { alpha_grid: AlphaGridSpec::single(1.01), ..tiny_config() };
        let report = run_rfgnn(&data, &cfg, 0).unwrap();
        assert!(report.candidates.iter().all(|c| c.edge_count == 0));
        assert!(report.test_f1 > 0.8);
    }

    #[test]
    fn dense_guard_rejects_large_forced_dense() {
        let cfg = ExperimentConfig { storage: crate::proximity::StorageMode::Dense, ..tiny_config() };
        assert!(cfg.check_budget(60_000).is_ok());
        let err = cfg.check_budget(60_001).unwrap_err();
        assert_eq!(err.stage(), "config");
        assert!(err.to_string().contains("sparse"));
    }

    #[test]
    fn stage_tag_on_bad_config() {
        let data = blobs(5, 0);
        let cfg = ExperimentConfig { proximities: vec![Measure::Cosine], ..tiny_config() };
        let err = run_rfgnn(&data, &cfg, 0).unwrap_err();
        assert!(err.to_string().starts_with("[config]"));
    }
}

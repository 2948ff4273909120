use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rfgnn::gcn::TrainConfig;
use rfgnn::harness::{
    compare_similarities, run_experiment, run_rfgnn_with_split, threshold_sweep, AlphaGridSpec,
    ExperimentConfig, ForestGridSpec,
};
use rfgnn::metrics::aggregate_seeds;
use rfgnn::proximity::Measure;
use rfgnn::tabular::{stratified_split, TabularDataset};

fn blobs(n_per_class: usize, gap: f64, seed: u64) -> TabularDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for class in 0..2 {
        let c = class as f64 * gap;
        for _ in 0..n_per_class {
            rows.push(vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)]);
            labels.push(class);
        }
    }
    TabularDataset::from_numeric_rows(&rows, &labels).unwrap()
}

fn small_config(seeds: Vec<u64>, alphas: AlphaGridSpec) -> ExperimentConfig {
    ExperimentConfig {
        alpha_grid: alphas,
        seeds,
        cv_folds: 3,
        forest_grid: ForestGridSpec {
            n_trees: vec![50],
            min_samples_split: vec![2],
            min_samples_leaf: vec![1, 10],
            ..ForestGridSpec::default()
        },
        gcn: TrainConfig {
            epochs: 60,
            hidden_dims: vec![8, 8],
            head_hidden: 8,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn scrambled_test_labels_change_nothing_but_the_score() {
    let data = blobs(40, 2.0, 1);
    let config = small_config(vec![5], AlphaGridSpec { count: 4, min: 0.1, max: 0.7 });
    let split = stratified_split(&data, 0.8, 5).unwrap();
    let honest = run_rfgnn_with_split(&data, &config, 5, split.clone()).unwrap();

    let mut scrambled = data.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for &i in &split.test {
        scrambled.labels[i] = rng.random_range(0..2);
    }
    let tampered = run_rfgnn_with_split(&scrambled, &config, 5, split).unwrap();

    assert_eq!(honest.forest_params, tampered.forest_params);
    assert_eq!(honest.selected_proximity, tampered.selected_proximity);
    assert_eq!(honest.selected_alpha, tampered.selected_alpha);
    assert_eq!(honest.test_predictions, tampered.test_predictions);
    let cv = |r: &rfgnn::harness::SeedReport| r.candidates.iter().map(|c| c.cv_f1).collect::<Vec<_>>();
    assert_eq!(cv(&honest), cv(&tampered));
}

#[test]
fn report_is_pure_and_aggregates_are_exact() {
    let data = blobs(30, 3.0, 2);
    let config = small_config(vec![0, 1, 2], AlphaGridSpec { count: 3, min: 0.2, max: 0.6 });
    let a = run_experiment(&data, &config).unwrap();
    let b = run_experiment(&data, &config).unwrap();
    assert_eq!(a.to_json(), b.to_json());

    let per_seed: Vec<f64> = a.seeds.iter().map(|s| s.test_f1).collect();
    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    let var = per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per_seed.len() as f64;
    assert_eq!(aggregate_seeds(&per_seed).unwrap(), (a.test_f1_mean, a.test_f1_std));
    assert!((a.test_f1_mean - mean).abs() < 1e-15);
    assert!((a.test_f1_std - var.sqrt()).abs() < 1e-15);
    for s in &a.seeds {
        let chosen = s
            .candidates
            .iter()
            .find(|c| c.proximity == s.selected_proximity && c.alpha == s.selected_alpha)
            .unwrap();
        assert!(s.candidates.iter().all(|c| c.cv_f1 <= chosen.cv_f1));
        assert_eq!(chosen.test_f1, s.test_f1);
    }
}

#[test]
fn sweep_covers_default_grid_with_falling_edge_counts() {
    let data = blobs(30, 3.0, 3);
    let config = ExperimentConfig {
        gcn: TrainConfig {
            epochs: 20,
            hidden_dims: vec![4],
            head_hidden: 4,
            ..TrainConfig::default()
        },
        ..small_config(vec![0, 1], AlphaGridSpec::default())
    };
    let rows = threshold_sweep(&data, &config, Measure::Rfgap).unwrap();
    assert_eq!(rows.len(), 51);
    assert_eq!(rows[0].alpha, 0.0);
    assert_eq!(rows[50].alpha, 1.0);
    assert!(rows.windows(2).all(|w| w[1].edge_count <= w[0].edge_count));
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.mean_f1)));
}

/// The best threshold on blobs sits at a moderate alpha rather than at
/// either end of the grid.
#[test]
fn sweep_optimum_on_blobs_is_moderate() {
    let data = blobs(100, 2.0, 4);
    let config = small_config(vec![0, 1, 2, 3, 4], AlphaGridSpec::default());
    let rows = threshold_sweep(&data, &config, Measure::Rfgap).unwrap();
    let best = rows
        .iter()
        .fold(&rows[0], |best, r| if r.mean_f1 > best.mean_f1 { r } else { best });
    assert!(
        (0.05..=0.6).contains(&best.alpha),
        "best alpha {} (F1 {:.3})",
        best.alpha,
        best.mean_f1
    );
}

/// Two noise features plus one feature that carries the label: forest
/// proximities should not lose to cosine similarity.
#[test]
fn forest_proximity_keeps_up_with_cosine_on_label_feature() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..160 {
        let y = i % 2;
        rows.push(vec![
            noise.sample(&mut rng) * 3.0,
            noise.sample(&mut rng) * 3.0,
            y as f64 * 2.0 + noise.sample(&mut rng) * 0.5,
        ]);
        labels.push(y);
    }
    let data = TabularDataset::from_numeric_rows(&rows, &labels).unwrap();
    let config = small_config(vec![0, 1, 2], AlphaGridSpec { count: 5, min: 0.1, max: 0.9 });
    let table = compare_similarities(&data, &config).unwrap();
    let score = |m: Measure| table.iter().find(|r| r.measure == m).unwrap().per_seed.clone();
    let cosine = score(Measure::Cosine);
    for m in Measure::FOREST {
        for (f, c) in score(m).iter().zip(&cosine) {
            assert!(*f >= c - 0.05, "{m}: {f:.3} vs cosine {c:.3}");
        }
    }
}

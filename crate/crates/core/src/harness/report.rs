use std::io::Write;

use serde::{Deserialize, Serialize};

use super::pipeline::{run_rfgnn, CandidateScore};
use super::{ExperimentConfig, Result};
use crate::forest::ForestParams;
use crate::metrics::aggregate_seeds;
use crate::proximity::Measure;
use crate::tabular::TabularDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub forest_params: ForestParams,
    pub forest_cv_f1: f64,
    pub selected_proximity: Measure,
    pub selected_alpha: f64,
    pub test_f1: f64,
    /// Tuned random forest on the same split.
    pub rf_test_f1: f64,
    /// Predicted class of each test row, in split order.
    pub test_predictions: Vec<usize>,
    pub candidates: Vec<CandidateScore>,
}

/// Result of `run` over all seeds. Contains no timing information, so equal
/// inputs serialize to equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedReport>,
    pub test_f1_mean: f64,
    pub test_f1_std: f64,
    pub rf_test_f1_mean: f64,
    pub rf_test_f1_std: f64,
}

impl ExperimentReport {
    pub fn from_seeds(config: ExperimentConfig, seeds: Vec<SeedReport>) -> Result<Self> {
        let gnn: Vec<f64> = seeds.iter().map(|s| s.test_f1).collect();
        let rf: Vec<f64> = seeds.iter().map(|s| s.rf_test_f1).collect();
        let (test_f1_mean, test_f1_std) = aggregate_seeds(&gnn)?;
        let (rf_test_f1_mean, rf_test_f1_std) = aggregate_seeds(&rf)?;
        Ok(Self {
            config,
            seeds,
            test_f1_mean,
            test_f1_std,
            rf_test_f1_mean,
            rf_test_f1_std,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs the pipeline for every configured seed.
pub fn run_experiment(dataset: &TabularDataset, config: &ExperimentConfig) -> Result<ExperimentReport> {
    let seeds = config
        .seeds
        .iter()
        .map(|&seed| run_rfgnn(dataset, config, seed))
        .collect::<Result<Vec<_>>>()?;
    ExperimentReport::from_seeds(config.clone(), seeds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub edge_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub measure: Measure,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpScores {
    pub hidden_dims: Vec<usize>,
    pub per_seed: Vec<f64>,
    pub mean_f1: f64,
    pub std_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub seeds: Vec<u64>,
    pub rf_per_seed: Vec<f64>,
    pub rf_mean_f1: f64,
    pub rf_std_f1: f64,
    pub mlp: Vec<MlpScores>,
}

impl BaselineReport {
    pub(crate) fn new(config: &ExperimentConfig, rf: Vec<f64>, mlp: Vec<Vec<f64>>) -> Result<Self> {
        let (rf_mean_f1, rf_std_f1) = aggregate_seeds(&rf)?;
        let mlp = config
            .mlp_hidden_dims
            .iter()
            .zip(mlp)
            .map(|(dims, per_seed)| {
                let (mean_f1, std_f1) = aggregate_seeds(&per_seed)?;
                Ok(MlpScores {
                    hidden_dims: dims.clone(),
                    per_seed,
                    mean_f1,
                    std_f1,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            seeds: config.seeds.clone(),
            rf_per_seed: rf,
            rf_mean_f1,
            rf_std_f1,
            mlp,
        })
    }
}

/// `alpha,mean_f1,std_f1,edge_count`, scores at full precision.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "alpha,mean_f1,std_f1,edge_count")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.alpha, r.mean_f1, r.std_f1, r.edge_count)?;
    }
    Ok(())
}

/// `measure,mean_f1,std_f1`.
pub fn write_compare_csv<W: Write>(rows: &[CompareRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "measure,mean_f1,std_f1")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.measure, r.mean_f1, r.std_f1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed_report(seed: u64, test_f1: f64, rf_test_f1: f64) -> SeedReport {
        SeedReport {
            seed,
            forest_params: ForestParams::default(),
            forest_cv_f1: 1.0,
            selected_proximity: Measure::Rfgap,
            selected_alpha: 0.3,
            test_f1,
            rf_test_f1,
            test_predictions: vec![0, 1],
            candidates: vec![],
        }
    }

    #[test]
    fn aggregates_match_per_seed_values() {
        let report = ExperimentReport::from_seeds(
            ExperimentConfig::default(),
            vec![seed_report(0, 0.8, 0.7), seed_report(1, 0.9, 0.7)],
        )
        .unwrap();
        assert!((report.test_f1_mean - 0.85).abs() < 1e-12);
        assert!((report.test_f1_std - 0.05).abs() < 1e-12);
        assert_eq!(report.rf_test_f1_std, 0.0);
        let back: ExperimentReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_sweep_csv(
            &[SweepRow { alpha: 0.5, mean_f1: 0.9, std_f1: 0.0, edge_count: 3.0 }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "alpha,mean_f1,std_f1,edge_count\n0.5,0.9,0,3\n");
        let mut buf = Vec::new();
        write_compare_csv(
            &[CompareRow { measure: Measure::Rbf, mean_f1: 1.0, std_f1: 0.0, per_seed: vec![1.0] }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "measure,mean_f1,std_f1\nrbf,1,0\n");
    }
}

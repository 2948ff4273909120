use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rfgnn::harness::{
    build_graph, compare_similarities, run_baselines, run_experiment, run_rfgnn,
    threshold_sweep, write_compare_csv, write_sweep_csv, AlphaGridSpec, ExperimentConfig,
};
use rfgnn::proximity::Measure;
use rfgnn::tabular::{DatasetManifest, TabularDataset};

#[derive(Parser)]
#[command(name = "rfgnn", version, about = "Random-forest proximity graphs + GCN on tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline; writes report.json and timings.json.
    Run(Common),
    /// Test F1 at every threshold for one proximity; writes sweep.csv.
    Sweep(Common),
    /// Forest proximities against cosine, Jaccard and RBF; writes compare.csv.
    Compare(Common),
    /// Random forest and MLP baselines; writes baseline.json.
    Baseline(Common),
    /// Writes the graph for one seed as an edge list (graph.edges).
    ExportGraph(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Use this single threshold instead of the grid.
    #[arg(long)]
    alpha: Option<f64>,
    /// Use this proximity only.
    #[arg(long)]
    proximity: Option<Measure>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Loaded {
    config: ExperimentConfig,
    dataset: TabularDataset,
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<Loaded> {
        let mut config = ExperimentConfig::from_file(&self.config)?;
        if let Some(seed) = self.seed {
            config.seeds = vec![seed];
        }
        if let Some(alpha) = self.alpha {
            config.alpha_grid = AlphaGridSpec::single(alpha);
        }
        if let Some(p) = self.proximity.filter(|p| p.is_forest()) {
            config.proximities = vec![p];
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        config.validate()?;
        let manifest = DatasetManifest::from_file(&config.dataset)
            .map_err(rfgnn::harness::PipelineError::from)?;
        let dataset = manifest.load().map_err(rfgnn::harness::PipelineError::from)?;
        let out = config.output_dir.clone();
        fs::create_dir_all(&out).with_context(|| format!("[output] creating {}", out.display()))?;
        Ok(Loaded {
            config,
            dataset,
            out,
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("[output] creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("[output] writing {}", path.display()))
}

fn run(args: &Common) -> Result<()> {
    let Loaded { config, dataset, out } = args.load()?;
    let start = Instant::now();
    let report = run_experiment(&dataset, &config)?;
    let seconds = start.elapsed().as_secs_f64();
    write_text(&out.join("report.json"), &report.to_json())?;
    write_text(
        &out.join("timings.json"),
        &serde_json::json!({ "total_seconds": seconds }).to_string(),
    )?;
    for s in &report.seeds {
        println!(
            "seed {}: test F1 {:.3} ({} alpha={:.2}), RF {:.3}",
            s.seed, s.test_f1, s.selected_proximity, s.selected_alpha, s.rf_test_f1
        );
    }
    println!(
        "RF-GNN {:.3} ± {:.3}, RF {:.3} ± {:.3}",
        report.test_f1_mean, report.test_f1_std, report.rf_test_f1_mean, report.rf_test_f1_std
    );
    Ok(())
}

fn sweep(args: &Common) -> Result<()> {
    let Loaded { config, dataset, out } = args.load()?;
    let measure = args.proximity.unwrap_or(config.proximities[0]);
    let rows = threshold_sweep(&dataset, &config, measure)?;
    write_sweep_csv(&rows, create(&out.join("sweep.csv"))?)?;
    for r in &rows {
        println!("{:.2}  {:.3} ± {:.3}  edges {:.1}", r.alpha, r.mean_f1, r.std_f1, r.edge_count);
    }
    Ok(())
}

fn compare(args: &Common) -> Result<()> {
    let Loaded { config, dataset, out } = args.load()?;
    let rows = compare_similarities(&dataset, &config)?;
    write_compare_csv(&rows, create(&out.join("compare.csv"))?)?;
    for r in &rows {
        println!("{:<8} {:.3} ± {:.3}", r.measure.name(), r.mean_f1, r.std_f1);
    }
    Ok(())
}

fn baseline(args: &Common) -> Result<()> {
    let Loaded { config, dataset, out } = args.load()?;
    let report = run_baselines(&dataset, &config)?;
    write_text(
        &out.join("baseline.json"),
        &serde_json::to_string_pretty(&report).context("[output] serializing baselines")?,
    )?;
    println!("RF {:.3} ± {:.3}", report.rf_mean_f1, report.rf_std_f1);
    for m in &report.mlp {
        println!("MLP {:?} {:.3} ± {:.3}", m.hidden_dims, m.mean_f1, m.std_f1);
    }
    Ok(())
}

fn export_graph(args: &Common) -> Result<()> {
    let Loaded { config, dataset, out } = args.load()?;
    let seed = config.seeds[0];
    let adjacency = match (args.proximity, args.alpha) {
        (Some(measure), Some(alpha)) => build_graph(&dataset, &config, seed, measure, alpha)?,
        _ => {
            let chosen = run_rfgnn(&dataset, &config, seed)?;
            build_graph(&dataset, &config, seed, chosen.selected_proximity, chosen.selected_alpha)?
        }
    };
    adjacency
        .write_edge_list(create(&out.join("graph.edges"))?)
        .context("[output] writing graph.edges")?;
    println!(
        "{} nodes, {} edges ({} alpha={})",
        adjacency.n_nodes,
        adjacency.n_edges(),
        adjacency.source_kind,
        adjacency.alpha
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Compare(a) => compare(a),
        Command::Baseline(a) => baseline(a),
        Command::ExportGraph(a) => export_graph(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error {err:#}");
            ExitCode::from(2)
        }
    }
}

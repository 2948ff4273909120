use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerState};
use super::{cross_entropy, loss_and_grads_with, GcnError, GcnModel, Mlp, Result};
use crate::graph::GraphData;
use crate::metrics::argmax;
use crate::tabular::SplitIndices;

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "rfgnn-gcn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// One entry per graph layer. The MLP baseline reuses these as its
    /// hidden widths.
    pub hidden_dims: Vec<usize>,
    pub head_hidden: usize,
    pub weight_init_scale: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Drop probability after each graph layer during training.
    pub dropout: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 200,
            hidden_dims: vec![64, 64],
            head_hidden: 64,
            weight_init_scale: 1.0,
            seed: 0,
            optimizer: Optimizer::adam(),
            dropout: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn n_layers(&self) -> usize {
        self.hidden_dims.len()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// A zero learning rate is allowed; it leaves the model at its
    /// initialization.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(GcnError::InvalidConfig(msg.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.hidden_dims.contains(&0) || self.head_hidden == 0 {
            return bad("layer widths must be positive");
        }
        if !(self.weight_init_scale.is_finite() && self.weight_init_scale >= 0.0) {
            return bad("weight_init_scale must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GcnModel,
    /// Loss before each update, one entry per epoch.
    pub loss_trace: Vec<f64>,
}

/// Full-batch training on the labelled training nodes.
pub fn train(graph: &GraphData, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if graph.train_targets().is_empty() {
        return Err(GcnError::NoTrainingNodes);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = GcnModel::init(
        graph.features.ncols(),
        &config.hidden_dims,
        config.head_hidden,
        graph.n_classes,
        config.weight_init_scale,
        &mut rng,
    );
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);

    let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    let mut opt = OptimizerState::new(
        config.optimizer,
        config.learning_rate,
        config.weight_decay,
        &shapes,
    );
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let dropout = (config.dropout > 0.0).then_some((config.dropout, &mut dropout_rng));
        let (loss, grads) = loss_and_grads_with(graph, &model, dropout)?;
        if !loss.is_finite() {
            return Err(GcnError::Divergence { epoch });
        }
        loss_trace.push(loss);
        opt.update(model.param_slices_mut(), grads.param_slices());
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Plain MLP on the raw features, trained on the split's train rows.
/// Returns predictions for `split.test` in order. Dropout is not applied.
pub fn mlp_baseline_train_predict(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    split: &SplitIndices,
    config: &TrainConfig,
) -> Result<Vec<usize>> {
    config.validate()?;
    if labels.len() != features.nrows() {
        return Err(GcnError::Dimension(format!(
            "{} labels for {} rows",
            labels.len(),
            features.nrows()
        )));
    }
    if split.train.is_empty() {
        return Err(GcnError::NoTrainingNodes);
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut dims = vec![features.ncols()];
    dims.extend(&config.hidden_dims);
    dims.push(n_classes);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mlp = Mlp::init(&dims, config.weight_init_scale, &mut rng);
    let x_train = features.select(Axis(0), &split.train);
    let targets: Vec<(usize, usize)> = split
        .train
        .iter()
        .enumerate()
        .map(|(row, &i)| (row, labels[i]))
        .collect();

    let shapes: Vec<usize> = mlp.param_slices().iter().map(|s| s.len()).collect();
    let mut opt = OptimizerState::new(
        config.optimizer,
        config.learning_rate,
        config.weight_decay,
        &shapes,
    );
    for epoch in 0..config.epochs {
        let (logits, cache) = mlp.forward_cached(x_train.view());
        let (loss, d_logits) = cross_entropy(logits.view(), &targets);
        if !loss.is_finite() {
            return Err(GcnError::Divergence { epoch });
        }
        let (grads, _) = mlp.backward(&cache, d_logits);
        opt.update(mlp.param_slices_mut(), grads.param_slices());
    }

    let x_test: Array2<f64> = features.select(Axis(0), &split.test);
    let logits = mlp.forward(x_test.view());
    Ok(logits
        .rows()
        .into_iter()
        .map(|r| argmax(&r.to_vec()))
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub model: GcnModel,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, model: GcnModel) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(GcnError::UnsupportedVersion(ckpt.version));
        }
        Ok(ckpt)
    }
}

/// CSV with header `epoch,loss`.
pub fn write_loss_trace<W: Write>(trace: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,loss")?;
    for (epoch, loss) in trace.iter().enumerate() {
        writeln!(out, "{epoch},{loss}")?;
    }
    Ok(())
}

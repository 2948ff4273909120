//! Graph convolutional network with an MLP classification head.
//!
//! Layer update, for node i with neighbor set N(i):
//!
//! ```text
//! h_i' = ReLU( W · mean_{j ∈ N(i)} h_j  +  B · h_i )
//! ```
//!
//! Isolated nodes get a zero neighbor term. The head is
//! `ŷ = W_out · ReLU(W_in · h + b_a) + b_o`. Gradients are derived by hand and
//! checked against finite differences in the tests.

mod mlp;
mod optim;
mod train;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mlp::{cross_entropy, softmax, Dense, Mlp};
pub use optim::Optimizer;
pub use train::{
    mlp_baseline_train_predict, train, write_loss_trace, Checkpoint, TrainConfig, TrainOutcome,
    CHECKPOINT_VERSION,
};

use crate::graph::{Adjacency, GraphData};
use crate::metrics::argmax;
use mlp::{init_bound, relu, relu_backward, uniform, MlpCache};

#[derive(Debug, Error)]
pub enum GcnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no labelled training nodes")]
    NoTrainingNodes,
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
}

pub type Result<T> = std::result::Result<T, GcnError>;

/// One graph convolution: `w_neigh` acts on the neighbor mean, `w_self` on
/// the node's own embedding. Both are stored out × in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLayer {
    pub w_neigh: Array2<f64>,
    pub w_self: Array2<f64>,
}

impl GcnLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w_neigh: Array2::zeros((output, input)),
            w_self: Array2::zeros((output, input)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_neigh.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_neigh.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnModel {
    pub layers: Vec<GcnLayer>,
    /// Two-layer head: `layers[0]` is (W_in, b_a), `layers[1]` is (W_out, b_o).
    pub head: Mlp,
}

impl GcnModel {
    /// Random initialization, uniform in ±scale/√fan_in.
    pub fn init<R: Rng>(
        input_dim: usize,
        hidden_dims: &[usize],
        head_hidden: usize,
        n_classes: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden_dims.len());
        let mut prev = input_dim;
        for &out in hidden_dims {
            let bound = init_bound(prev, scale);
            layers.push(GcnLayer {
                w_neigh: uniform((out, prev), bound, rng),
                w_self: uniform((out, prev), bound, rng),
            });
            prev = out;
        }
        let head = Mlp::init(&[prev, head_hidden, n_classes], scale, rng);
        Self { layers, head }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| GcnLayer::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            head: self.head.zeros_like(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .first()
            .map_or_else(|| self.head.input_dim(), GcnLayer::input_dim)
    }

    /// Output dimension k of the last graph layer.
    pub fn embedding_dim(&self) -> usize {
        self.layers
            .last()
            .map_or_else(|| self.head.input_dim(), GcnLayer::output_dim)
    }

    pub fn n_classes(&self) -> usize {
        self.head.output_dim()
    }

    /// All parameter tensors as flat slices, in a fixed order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self
            .layers
            .iter()
            .flat_map(|l| {
                [
                    l.w_neigh.as_slice().expect("standard layout"),
                    l.w_self.as_slice().expect("standard layout"),
                ]
            })
            .collect();
        out.extend(self.head.param_slices());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w_neigh.as_slice_mut().expect("standard layout"),
                    l.w_self.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect();
        out.extend(self.head.param_slices_mut());
        out
    }

    fn check(&self, graph: &GraphData) -> Result<()> {
        if graph.features.ncols() != self.input_dim() {
            return Err(GcnError::Dimension(format!(
                "model expects {} features, graph has {}",
                self.input_dim(),
                graph.features.ncols()
            )));
        }
        if graph.adjacency.n_nodes != graph.n_nodes() {
            return Err(GcnError::Dimension(format!(
                "adjacency has {} nodes, features have {} rows",
                graph.adjacency.n_nodes,
                graph.n_nodes()
            )));
        }
        for pair in self.layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(GcnError::Dimension("layer dimensions do not chain".into()));
            }
        }
        if self.embedding_dim() != self.head.input_dim() {
            return Err(GcnError::Dimension(format!(
                "head expects {} inputs, last layer gives {}",
                self.head.input_dim(),
                self.embedding_dim()
            )));
        }
        Ok(())
    }
}

/// Mean of neighbor rows; zero for isolated nodes. Neighbors are summed in
/// index order.
fn mean_aggregate(adj: &Adjacency, h: &Array2<f64>) -> Array2<f64> {
    let d = h.ncols();
    let h = h.as_standard_layout();
    let src = h.as_slice().expect("standard layout");
    let mut out = Array2::zeros((h.nrows(), d));
    let dst = out.as_slice_mut().expect("standard layout");
    for (i, neighbors) in adj.neighbors.iter().enumerate() {
        if neighbors.is_empty() {
            continue;
        }
        let row = &mut dst[i * d..(i + 1) * d];
        for &j in neighbors {
            for (acc, v) in row.iter_mut().zip(&src[j * d..(j + 1) * d]) {
                *acc += v;
            }
        }
        let inv = 1.0 / neighbors.len() as f64;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    out
}

/// Adjoint of [`mean_aggregate`].
fn mean_aggregate_backward(adj: &Adjacency, d_mean: &Array2<f64>, d_h: &mut Array2<f64>) {
    let d = d_mean.ncols();
    let d_mean = d_mean.as_standard_layout();
    let src = d_mean.as_slice().expect("standard layout");
    let dst = d_h.as_slice_mut().expect("standard layout");
    for (i, neighbors) in adj.neighbors.iter().enumerate() {
        if neighbors.is_empty() {
            continue;
        }
        let inv = 1.0 / neighbors.len() as f64;
        let g = &src[i * d..(i + 1) * d];
        for &j in neighbors {
            for (acc, v) in dst[j * d..(j + 1) * d].iter_mut().zip(g) {
                *acc += v * inv;
            }
        }
    }
}

struct LayerCache {
    input: Array2<f64>,
    mean: Array2<f64>,
    pre: Array2<f64>,
    /// Inverted-dropout multipliers applied to this layer's output.
    mask: Option<Array2<f64>>,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    head: MlpCache,
}

fn forward_cached<R: Rng>(
    graph: &GraphData,
    model: &GcnModel,
    dropout: Option<(f64, &mut R)>,
) -> (Array2<f64>, ForwardCache) {
    let mut dropout = dropout.filter(|(p, _)| *p > 0.0);
    let mut h = graph.features.to_owned();
    let mut caches = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let mean = mean_aggregate(&graph.adjacency, &h);
        let pre = mean.dot(&layer.w_neigh.t()) + h.dot(&layer.w_self.t());
        let mut out = relu(&pre);
        let mask = dropout.as_mut().map(|(p, rng)| {
            let keep = 1.0 / (1.0 - *p);
            let mask = Array2::from_shape_fn(out.raw_dim(), |_| {
                if rng.random::<f64>() < *p {
                    0.0
                } else {
                    keep
                }
            });
            out *= &mask;
            mask
        });
        caches.push(LayerCache {
            input: h,
            mean,
            pre,
            mask,
        });
        h = out;
    }
    let (logits, head) = model.head.forward_cached(h.view());
    (
        logits,
        ForwardCache {
            layers: caches,
            head,
        },
    )
}

/// Node embeddings after all graph layers.
pub fn gcn_forward(graph: &GraphData, model: &GcnModel) -> Result<Array2<f64>> {
    model.check(graph)?;
    let mut h = graph.features.to_owned();
    for layer in &model.layers {
        let mean = mean_aggregate(&graph.adjacency, &h);
        h = relu(&(mean.dot(&layer.w_neigh.t()) + h.dot(&layer.w_self.t())));
    }
    Ok(h)
}

/// Class logits from node embeddings.
pub fn head_forward(embeddings: ArrayView2<'_, f64>, model: &GcnModel) -> Result<Array2<f64>> {
    if embeddings.ncols() != model.head.input_dim() {
        return Err(GcnError::Dimension(format!(
            "head expects {} inputs, got {}",
            model.head.input_dim(),
            embeddings.ncols()
        )));
    }
    Ok(model.head.forward(embeddings))
}

pub fn logits(graph: &GraphData, model: &GcnModel) -> Result<Array2<f64>> {
    let h = gcn_forward(graph, model)?;
    head_forward(h.view(), model)
}

/// Mean cross-entropy over the labelled training nodes and the gradient of
/// every parameter.
pub fn loss_and_grads(graph: &GraphData, model: &GcnModel) -> Result<(f64, GcnModel)> {
    loss_and_grads_with(graph, model, None::<(f64, &mut rand::rngs::ThreadRng)>)
}

pub(crate) fn loss_and_grads_with<R: Rng>(
    graph: &GraphData,
    model: &GcnModel,
    dropout: Option<(f64, &mut R)>,
) -> Result<(f64, GcnModel)> {
    model.check(graph)?;
    let targets = graph.train_targets();
    if targets.is_empty() {
        return Err(GcnError::NoTrainingNodes);
    }
    let (logits, cache) = forward_cached(graph, model, dropout);
    let (loss, d_logits) = cross_entropy(logits.view(), &targets);
    let (head_grads, mut d_h) = model.head.backward(&cache.head, d_logits);

    let mut layer_grads = Vec::with_capacity(model.layers.len());
    for (layer, c) in model.layers.iter().zip(&cache.layers).rev() {
        if let Some(mask) = &c.mask {
            d_h *= mask;
        }
        relu_backward(&mut d_h, &c.pre);
        let w_neigh = d_h.t().dot(&c.mean);
        let w_self = d_h.t().dot(&c.input);
        let d_mean = d_h.dot(&layer.w_neigh);
        let mut d_input = d_h.dot(&layer.w_self);
        mean_aggregate_backward(&graph.adjacency, &d_mean, &mut d_input);
        layer_grads.push(GcnLayer { w_neigh, w_self });
        d_h = d_input;
    }
    layer_grads.reverse();
    Ok((
        loss,
        GcnModel {
            layers: layer_grads,
            head: head_grads,
        },
    ))
}

pub fn predict_proba(graph: &GraphData, model: &GcnModel) -> Result<Array2<f64>> {
    Ok(softmax(logits(graph, model)?.view()))
}

/// Most probable class per node; the lowest index wins ties.
pub fn predict(graph: &GraphData, model: &GcnModel) -> Result<Vec<usize>> {
    let proba = predict_proba(graph, model)?;
    Ok(proba
        .rows()
        .into_iter()
        .map(|r| argmax(&r.to_vec()))
        .collect())
}

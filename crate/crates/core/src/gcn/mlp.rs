use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Affine map `x · wᵀ + b` with `w` stored out × in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }

    /// Uniform in ±scale/√fan_in for weights and bias.
    pub fn init<R: Rng>(input: usize, output: usize, scale: f64, rng: &mut R) -> Self {
        let bound = init_bound(input, scale);
        Self {
            w: uniform((output, input), bound, rng),
            b: Array1::from_shape_fn(output, |_| sample(bound, rng)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

pub(crate) fn init_bound(fan_in: usize, scale: f64) -> f64 {
    scale / (fan_in.max(1) as f64).sqrt()
}

fn sample<R: Rng>(bound: f64, rng: &mut R) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..bound)
    } else {
        0.0
    }
}

pub(crate) fn uniform<R: Rng>(shape: (usize, usize), bound: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| sample(bound, rng))
}

pub(crate) fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Zeroes `grad` wherever the pre-activation was not positive.
pub(crate) fn relu_backward(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    grad.zip_mut_with(pre, |g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Feed-forward network: ReLU after every layer except the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

pub(crate) struct MlpCache {
    /// Input of each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn init<R: Rng>(dims: &[usize], scale: f64, rng: &mut R) -> Self {
        Self {
            layers: dims
                .windows(2)
                .map(|w| Dense::init(w[0], w[1], scale, rng))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub(crate) fn forward_cached(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(h.view());
            inputs.push(h);
            if k == last {
                return (z, MlpCache { inputs, pre });
            }
            h = relu(&z);
            pre.push(z);
        }
        unreachable!("an MLP has at least one layer")
    }

    /// Gradients of all parameters and of the input, given d(loss)/d(output).
    pub(crate) fn backward(&self, cache: &MlpCache, d_out: Array2<f64>) -> (Mlp, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = d_out;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let w_grad = g.t().dot(&cache.inputs[k]);
            let b_grad = g.sum_axis(Axis(0));
            grads.push(Dense { w: w_grad, b: b_grad });
            g = g.dot(&layer.w);
            if k > 0 {
                relu_backward(&mut g, &cache.pre[k - 1]);
            }
        }
        grads.reverse();
        (Mlp { layers: grads }, g)
    }

    pub(crate) fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.w.as_slice().expect("standard layout"),
                    l.b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w.as_slice_mut().expect("standard layout"),
                    l.b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy over `targets` and its gradient w.r.t. all logits
/// (zero rows for non-target nodes).
pub fn cross_entropy(logits: ArrayView2<'_, f64>, targets: &[(usize, usize)]) -> (f64, Array2<f64>) {
    let probs = softmax(logits);
    let mut grad = Array2::zeros(logits.raw_dim());
    let m = targets.len() as f64;
    let mut loss = 0.0;
    for &(i, y) in targets {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - row[y];
        for k in 0..logits.ncols() {
            grad[[i, k]] = probs[[i, k]] / m;
        }
        grad[[i, y]] -= 1.0 / m;
    }
    (loss / m, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn head_identity_example() {
        let mlp = Mlp {
            layers: vec![
                Dense { w: Array2::eye(2), b: Array1::zeros(2) },
                Dense { w: Array2::eye(2), b: Array1::zeros(2) },
            ],
        };
        let out = mlp.forward(array![[1.0, -1.0]].view());
        assert_eq!(out, array![[1.0, 0.0]]);
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut mlp = Mlp {
            layers: vec![Dense::zeros(3, 4), Dense::zeros(4, 2)],
        };
        mlp.layers[1].b = array![0.1, -0.1];
        let out = mlp.forward(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]].view());
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![0.1, -0.1]);
        }
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        let logits = Array2::zeros((3, 4));
        let (loss, _) = cross_entropy(logits.view(), &[(0, 1), (2, 3)]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_loss_near_zero() {
        let logits = array![[20.0, 0.0], [0.0, 20.0]];
        let (loss, _) = cross_entropy(logits.view(), &[(0, 0), (1, 1)]);
        assert!(loss < 1e-3);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(array![[3.0, 1.0, -2.0], [1000.0, 1000.0, 0.0]].view());
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(p[[1, 0]], p[[1, 1]]);
    }
}

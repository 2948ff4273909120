use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-tensor optimizer state.
pub(crate) struct OptimizerState {
    kind: Optimizer,
    learning_rate: f64,
    weight_decay: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub(crate) fn new(kind: Optimizer, learning_rate: f64, weight_decay: f64, shapes: &[usize]) -> Self {
        Self {
            kind,
            learning_rate,
            weight_decay,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub(crate) fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        self.step += 1;
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            match self.kind {
                Optimizer::Sgd => {
                    for (w, &dw) in p.iter_mut().zip(g) {
                        *w -= self.learning_rate * (dw + self.weight_decay * *w);
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.step);
                    let c2 = 1.0 - beta2.powi(self.step);
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for (idx, (w, &dw)) in p.iter_mut().zip(g).enumerate() {
                        let grad = dw + self.weight_decay * *w;
                        m[idx] = beta1 * m[idx] + (1.0 - beta1) * grad;
                        v[idx] = beta2 * v[idx] + (1.0 - beta2) * grad * grad;
                        let m_hat = m[idx] / c1;
                        let v_hat = v[idx] / c2;
                        *w -= self.learning_rate * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut state = OptimizerState::new(Optimizer::Sgd, 0.5, 0.0, &[2]);
        let mut p = vec![1.0, -1.0];
        state.update(vec![&mut p], vec![&[2.0, -2.0]]);
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut state = OptimizerState::new(Optimizer::adam(), 0.01, 0.0, &[1]);
        let mut p = vec![1.0];
        state.update(vec![&mut p], vec![&[123.0]]);
        assert!((p[0] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut state = OptimizerState::new(Optimizer::adam(), 0.1, 0.0, &[1]);
        let mut p = vec![5.0];
        for _ in 0..500 {
            let g = [2.0 * (p[0] - 2.0)];
            state.update(vec![&mut p], vec![&g]);
        }
        assert!((p[0] - 2.0).abs() < 1e-2);
    }
}

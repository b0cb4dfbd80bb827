//! Adaptive-moment optimizer and flattened gradients.

use crate::numerics::ParamSet;

use super::TrainConfig;

/// Per-parameter gradient buffers aligned with the parameter set's
/// iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatGrads {
    buffers: Vec<Vec<f64>>,
}

impl FlatGrads {
    pub fn zeros_like(params: &ParamSet) -> Self {
        FlatGrads { buffers: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect() }
    }

    pub fn from_buffers(buffers: Vec<Vec<f64>>) -> Self {
        FlatGrads { buffers }
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }

    pub fn add_scaled(&mut self, other: &FlatGrads, k: f64) {
        debug_assert_eq!(self.buffers.len(), other.buffers.len());
        for (a, b) in self.buffers.iter_mut().zip(&other.buffers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for buf in self.buffers.iter_mut() {
            for x in buf.iter_mut() {
                *x *= k;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.buffers
            .iter()
            .flat_map(|b| b.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Scales so the global norm does not exceed `max_norm` (0 disables).
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        if max_norm <= 0.0 {
            return;
        }
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.buffers.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Adam with bias correction. A zero gradient applied to a fresh
/// optimizer leaves the parameters bit-identical.
pub struct Adam {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(params: &ParamSet, cfg: &TrainConfig) -> Self {
        Adam {
            step: 0,
            m: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    pub fn apply(&mut self, params: &mut ParamSet, grads: &FlatGrads, learning_rate: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let names: Vec<String> = params.names().map(String::from).collect();
        for (idx, name) in names.iter().enumerate() {
            let grad = &grads.buffers()[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let tensor = params.get_mut(name).expect("aligned with params");
            for (k, value) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *value -= learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn small_params() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::vector(vec![1.0, -2.0]));
        p.insert("b", Tensor::scalar(0.5));
        p
    }

    #[test]
    fn zero_gradient_leaves_fresh_state_unchanged() {
        let mut params = small_params();
        let before = params.clone();
        let mut adam = Adam::new(&params, &TrainConfig::default());
        let zeros = FlatGrads::zeros_like(&params);
        adam.apply(&mut params, &zeros, 0.01);
        for ((_, a), (_, b)) in params.iter().zip(before.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn gradient_descends_a_quadratic() {
        // Minimize (a - 3)^2 elementwise.
        let mut params = ParamSet::new();
        params.insert("a", Tensor::vector(vec![0.0, 10.0]));
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(&params, &cfg);
        for _ in 0..2000 {
            let grads: Vec<f64> = params
                .get("a")
                .unwrap()
                .data()
                .iter()
                .map(|&x| 2.0 * (x - 3.0))
                .collect();
            adam.apply(&mut params, &FlatGrads::from_buffers(vec![grads]), 0.05);
        }
        for &x in params.get("a").unwrap().data() {
            assert!((x - 3.0).abs() < 1e-3, "got {x}");
        }
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = FlatGrads::from_buffers(vec![vec![3.0, 4.0]]);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);
        g.clip_global_norm(1.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        let mut small = FlatGrads::from_buffers(vec![vec![0.1]]);
        small.clip_global_norm(1.0);
        assert_eq!(small.buffers()[0][0], 0.1);
    }
}

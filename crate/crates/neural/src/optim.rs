use serde::{Deserialize, Serialize};

use crate::params::EncoderParams;
use crate::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction; moments are kept in `f32` like the weights.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<f32>,
    second: Vec<f32>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            first: vec![0.0; len],
            second: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update. A frozen encoder is never modified.
    pub fn step(&mut self, params: &mut EncoderParams<f32>, grads: &[f32]) -> Result<(), NeuralError> {
        if params.frozen {
            return Err(NeuralError::Frozen);
        }
        if grads.len() != params.data.len() || grads.len() != self.first.len() {
            return Err(NeuralError::Wiring("gradient and parameter sizes differ".into()));
        }
        self.steps += 1;
        let c = &self.config;
        let t = self.steps as i32;
        let correct1 = 1.0 - c.beta1.powi(t);
        let correct2 = 1.0 - c.beta2.powi(t);
        let step = (c.learning_rate * correct2.sqrt() / correct1) as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.epsilon as f32);
        let eps_hat = eps * (correct2.sqrt() as f32);
        let state = self.first.iter_mut().zip(self.second.iter_mut());
        for ((p, &g), (first, second)) in params.data.iter_mut().zip(grads).zip(state) {
            *first = b1 * *first + (1.0 - b1) * g;
            *second = b2 * *second + (1.0 - b2) * g * g;
            *p -= step * *first / (second.sqrt() + eps_hat);
        }
        Ok(())
    }
}

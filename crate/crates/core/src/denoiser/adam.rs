use serde::{Deserialize, Serialize};

use super::DenoiserParameters;
use crate::error::{Error, Result};

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

/// Adam moments, aligned with the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, parameter_count: usize) -> Self {
        Self {
            config,
            step: 0,
            first_moment: vec![0.0; parameter_count],
            second_moment: vec![0.0; parameter_count],
        }
    }

    /// One bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut DenoiserParameters, grads: &[f64]) -> Result<()> {
        let n = params.len();
        if grads.len() != n || self.first_moment.len() != n || self.second_moment.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "optimizer: {n} parameters, {} gradients, {} moments",
                grads.len(),
                self.first_moment.len()
            )));
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        let values = params.values_mut();
        for i in 0..n {
            let g = grads[i];
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            values[i] -= learning_rate * (m / c1) / ((v / c2).sqrt() + epsilon);
        }
        Ok(())
    }
}

//! The noise predictor: a conditional per-point network.
//!
//! ```text
//! condition (N x 3) --[shared affine + swish]*--> max-pool over points --> g
//! time step t       --sinusoidal(1000 t / T)--------------------------------> e
//! x~_t (M x 3) ‖ g ‖ e --[shared affine + swish]* --affine--> eps_hat (M x 3)
//! ```
//!
//! Parameters live in one flat `f64` vector; each layer owns a row-major
//! `in x out` weight block followed by its bias.

mod adam;
mod checkpoint;
mod network;

pub use adam::{AdamConfig, OptimizerState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{forward, gradients, time_embedding, EncodedCondition};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::rng;

/// Layer widths of the network. The output layer (3 wide) is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder_widths: Vec<usize>,
    pub trunk_widths: Vec<usize>,
    pub time_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            encoder_widths: vec![64, 128],
            trunk_widths: vec![256, 256, 128],
            time_dim: 64,
        }
    }
}

impl Architecture {
    /// Small network for gradient checks and quick experiments.
    pub fn reduced() -> Self {
        Self {
            encoder_widths: vec![8, 16],
            trunk_widths: vec![16, 16],
            time_dim: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() || self.trunk_widths.is_empty() {
            return Err(Error::InvalidDescriptor("encoder and trunk need at least one layer".into()));
        }
        if self.encoder_widths.iter().chain(&self.trunk_widths).any(|&w| w == 0) {
            return Err(Error::InvalidDescriptor("all widths must be at least 1".into()));
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::InvalidDescriptor(format!(
                "time_dim must be even and at least 2, got {}",
                self.time_dim
            )));
        }
        Ok(())
    }

    pub fn global_dim(&self) -> usize {
        *self.encoder_widths.last().expect("validated")
    }

    pub fn layers(&self) -> Vec<Layer> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, input: usize, output: usize| {
            out.push(Layer {
                name,
                input,
                output,
                offset,
            });
            offset += input * output + output;
        };
        let mut width = 3;
        for (i, &w) in self.encoder_widths.iter().enumerate() {
            push(format!("encoder.{i}"), width, w);
            width = w;
        }
        width = 3 + self.global_dim() + self.time_dim;
        for (i, &w) in self.trunk_widths.iter().enumerate() {
            push(format!("trunk.{i}"), width, w);
            width = w;
        }
        push("output".into(), width, 3);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(Layer::size).sum()
    }
}

/// Placement of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub offset: usize,
}

impl Layer {
    pub fn size(&self) -> usize {
        self.input * self.output + self.output
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.input * self.output
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.input * self.output;
        start..start + self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParameters {
    architecture: Architecture,
    values: Vec<f64>,
}

impl DenoiserParameters {
    pub fn from_values(architecture: Architecture, values: Vec<f64>) -> Result<Self> {
        architecture.validate()?;
        let want = architecture.parameter_count();
        if values.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "architecture needs {want} parameters, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Self { architecture, values })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weight and bias slices of the named layer.
    pub fn layer(&self, name: &str) -> Option<(&[f64], &[f64])> {
        let l = self.architecture.layers().into_iter().find(|l| l.name == name)?;
        Some((&self.values[l.weight_range()], &self.values[l.bias_range()]))
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(architecture: &Architecture, seed: u64) -> Result<DenoiserParameters> {
    architecture.validate()?;
    let mut rng = rng::rng(seed);
    let mut values = vec![0.0; architecture.parameter_count()];
    for layer in architecture.layers() {
        let limit = (6.0 / (layer.input + layer.output) as f64).sqrt();
        for w in &mut values[layer.weight_range()] {
            *w = rng.random_range(-limit..limit);
        }
    }
    Ok(DenoiserParameters {
        architecture: architecture.clone(),
        values,
    })
}

/// A parameter set used as a noise predictor.
#[derive(Debug, Clone, Copy)]
pub struct Denoiser<'a> {
    pub params: &'a DenoiserParameters,
}

impl NoisePredictor for Denoiser<'_> {
    type Encoded = EncodedCondition;

    fn encode(&self, condition: &PointCloud) -> Result<EncodedCondition> {
        network::encode(self.params, condition)
    }

    fn predict(&self, encoded: &EncodedCondition, x_t: &[Point3], t: usize, steps: usize) -> Result<Vec<Point3>> {
        network::predict(self.params, encoded, x_t, t, steps)
    }
}

impl NoisePredictor for DenoiserParameters {
    type Encoded = EncodedCondition;

    fn encode(&self, condition: &PointCloud) -> Result<EncodedCondition> {
        network::encode(self, condition)
    }

    fn predict(&self, encoded: &EncodedCondition, x_t: &[Point3], t: usize, steps: usize) -> Result<Vec<Point3>> {
        network::predict(self, encoded, x_t, t, steps)
    }
}

//! Minibatch training of the denoiser on (repair, condition) pairs.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{gradients, DenoiserParameters, OptimizerState};
use crate::diffusion::{gaussian_points, LossSample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::rng;

/// A count-fixed repair (`M` points) and its condition (`N` points).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub id: String,
    pub repair: PointCloud,
    pub condition: PointCloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 8,
            learning_rate: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
}

pub struct Trainer<'a> {
    pub params: DenoiserParameters,
    pub optimizer: OptimizerState,
    schedule: &'a NoiseSchedule,
    data: &'a [TrainingPair],
}

impl<'a> Trainer<'a> {
    pub fn new(
        params: DenoiserParameters,
        optimizer: OptimizerState,
        schedule: &'a NoiseSchedule,
        data: &'a [TrainingPair],
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("no training pairs".into()));
        }
        if optimizer.first_moment.len() != params.len() {
            return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
        }
        Ok(Self {
            params,
            optimizer,
            schedule,
            data,
        })
    }

    /// One optimizer update on the given items, with a fresh step and noise
    /// draw per item. Returns the batch loss before the update.
    pub fn step(&mut self, items: &[usize], rng: &mut rng::Rng) -> Result<LossRecord> {
        let steps = self.schedule.steps();
        let draws: Vec<(usize, Vec<Point3>)> = items
            .iter()
            .map(|&i| {
                let t = rng.random_range(1..=steps);
                (t, gaussian_points(rng, self.data[i].repair.len()))
            })
            .collect();
        let batch: Vec<LossSample<'_>> = items
            .iter()
            .zip(&draws)
            .map(|(&i, (t, eps))| LossSample {
                repair: &self.data[i].repair,
                condition: &self.data[i].condition,
                t: *t,
                eps,
            })
            .collect();
        let (loss, grad) = gradients(&self.params, &batch, self.schedule)?;
        self.optimizer.step(&mut self.params, &grad)?;
        Ok(LossRecord {
            step: self.optimizer.step,
            loss,
        })
    }

    /// Shuffled minibatch epochs. Each epoch's randomness derives from
    /// `seed` and the optimizer step it starts at, so a resumed run is as
    /// reproducible as a fresh one.
    pub fn run_epochs(
        &mut self,
        epochs: usize,
        batch_size: usize,
        seed: u64,
        mut on_step: impl FnMut(LossRecord),
    ) -> Result<()> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        for _ in 0..epochs {
            let mut rng = rng::rng(rng::derive(seed, self.optimizer.step));
            order.sort_unstable();
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch_size) {
                let rec = self.step(chunk, &mut rng)?;
                on_step(rec);
            }
        }
        Ok(())
    }
}

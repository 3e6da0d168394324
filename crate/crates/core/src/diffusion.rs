//! Conditional denoising diffusion over the repair cloud.
//!
//! Only the repair part `x~` is diffused; the condition cloud (the broken
//! object) is passed to the noise predictor unchanged at every step.
//!
//! Forward marginal: `x~_t = sqrt(abar_t) x~_0 + sqrt(1 - abar_t) eps`.
//! Reverse step: `x~_{t-1} = (x~_t - (1 - a_t) / sqrt(1 - abar_t) * eps_hat) / sqrt(a_t) + sqrt(b_t) z`,
//! with `z = 0` on the final step.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
}

/// The parameters a schedule is built from; this is what checkpoints store.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: ScheduleKind,
}

impl ScheduleParams {
    /// 1000 steps, beta 1e-4 to 0.02.
    pub const STANDARD: ScheduleParams = ScheduleParams {
        steps: 1000,
        beta_start: 1e-4,
        beta_end: 0.02,
        kind: ScheduleKind::Linear,
    };

    /// 100 steps, beta 1e-4 to 0.05, for small experiments.
    pub const DESK: ScheduleParams = ScheduleParams {
        steps: 100,
        beta_start: 1e-4,
        beta_end: 0.05,
        kind: ScheduleKind::Linear,
    };

    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end, self.kind)
    }
}

/// Per-step `beta`, `alpha = 1 - beta` and `alpha_bar = prod alpha` for
/// steps `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidSchedule("at least one step required".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let beta: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect(),
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule {
        params: ScheduleParams {
            steps,
            beta_start,
            beta_end,
            kind,
        },
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange {
                t,
                steps: self.steps(),
            });
        }
        Ok(t - 1)
    }

    /// `beta_t` for `t` in `1..=T`. Panics outside that range.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// The learnable noise predictor `eps_theta(x~_t, c_0, t)`.
///
/// Conditioning is split out so the sampler can encode the condition cloud
/// once and reuse it for all `T` steps.
pub trait NoisePredictor: Sync {
    type Encoded: Sync;

    fn encode(&self, condition: &PointCloud) -> Result<Self::Encoded>;

    fn predict(&self, encoded: &Self::Encoded, x_t: &[Point3], t: usize, steps: usize) -> Result<Vec<Point3>>;

    fn predict_noise(&self, x_t: &[Point3], condition: &PointCloud, t: usize, steps: usize) -> Result<Vec<Point3>> {
        self.predict(&self.encode(condition)?, x_t, t, steps)
    }
}

/// A noisy repair at step `t` together with its fixed condition cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x_tilde: PointCloud,
    pub condition: PointCloud,
    pub t: usize,
}

fn same_shape(a: &[Point3], b: &[Point3], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {} points vs {} points",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Closed-form forward sample `x~_t` from `x~_0` and noise `eps`.
pub fn q_sample(x0: &PointCloud, t: usize, eps: &[Point3], schedule: &NoiseSchedule) -> Result<PointCloud> {
    schedule.check(t)?;
    same_shape(x0.points(), eps, "noise")?;
    PointCloud::new(q_sample_raw(x0.points(), t, eps, schedule))
}

pub(crate) fn q_sample_raw(x0: &[Point3], t: usize, eps: &[Point3], schedule: &NoiseSchedule) -> Vec<Point3> {
    let ab = schedule.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter()
        .zip(eps)
        .map(|(x, e)| [s * x[0] + n * e[0], s * x[1] + n * e[1], s * x[2] + n * e[2]])
        .collect()
}

/// One item of a training batch: a repair/condition pair with its step and
/// noise draw.
#[derive(Debug, Clone, Copy)]
pub struct LossSample<'a> {
    pub repair: &'a PointCloud,
    pub condition: &'a PointCloud,
    pub t: usize,
    pub eps: &'a [Point3],
}

/// Mean squared noise-prediction error over the batch and every coordinate.
pub fn training_loss<P: NoisePredictor>(net: &P, batch: &[LossSample<'_>], schedule: &NoiseSchedule) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for s in batch {
        schedule.check(s.t)?;
        same_shape(s.repair.points(), s.eps, "noise")?;
        let x_t = q_sample_raw(s.repair.points(), s.t, s.eps, schedule);
        let pred = net.predict_noise(&x_t, s.condition, s.t, schedule.steps())?;
        same_shape(&pred, s.eps, "prediction")?;
        for (e, p) in s.eps.iter().zip(&pred) {
            for k in 0..3 {
                let r = e[k] - p[k];
                total += r * r;
            }
        }
        count += 3 * s.eps.len();
    }
    Ok(total / count as f64)
}

fn reverse_update(x_t: &[Point3], eps_hat: &[Point3], z: &[Point3], t: usize, schedule: &NoiseSchedule) -> Vec<Point3> {
    let a = schedule.alpha(t);
    let coef = (1.0 - a) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv = 1.0 / a.sqrt();
    let sigma = schedule.beta(t).sqrt();
    x_t.iter()
        .zip(eps_hat)
        .zip(z)
        .map(|((x, e), z)| {
            [
                inv * (x[0] - coef * e[0]) + sigma * z[0],
                inv * (x[1] - coef * e[1]) + sigma * z[1],
                inv * (x[2] - coef * e[2]) + sigma * z[2],
            ]
        })
        .collect()
}

fn reverse_step_encoded<P: NoisePredictor>(
    net: &P,
    encoded: &P::Encoded,
    state: DiffusionState,
    z: &[Point3],
    schedule: &NoiseSchedule,
) -> Result<DiffusionState> {
    let t = state.t;
    schedule.check(t)?;
    same_shape(state.x_tilde.points(), z, "z")?;
    if t == 1 && z.iter().any(|p| p.iter().any(|&c| c != 0.0)) {
        return Err(Error::InvalidArgument("the final step (t = 1) takes z = 0".into()));
    }
    let eps_hat = net.predict(encoded, state.x_tilde.points(), t, schedule.steps())?;
    same_shape(&eps_hat, z, "prediction")?;
    let next = reverse_update(state.x_tilde.points(), &eps_hat, z, t, schedule);
    Ok(DiffusionState {
        x_tilde: PointCloud::new(next)?,
        condition: state.condition,
        t: t - 1,
    })
}

/// One ancestral step `t -> t - 1`. The condition is moved through untouched.
pub fn reverse_step<P: NoisePredictor>(
    net: &P,
    state: DiffusionState,
    z: &[Point3],
    schedule: &NoiseSchedule,
) -> Result<DiffusionState> {
    if state.t == 0 {
        return Err(Error::StepOutOfRange {
            t: 0,
            steps: schedule.steps(),
        });
    }
    let encoded = net.encode(&state.condition)?;
    reverse_step_encoded(net, &encoded, state, z, schedule)
}

pub fn gaussian_points(rng: &mut rng::Rng, m: usize) -> Vec<Point3> {
    (0..m)
        .map(|_| {
            [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ]
        })
        .collect()
}

/// Generates an `m`-point repair for `condition` by running the reverse chain
/// from pure noise at `t = T` down to `t = 0`.
pub fn sample_repair<P: NoisePredictor>(
    net: &P,
    condition: &PointCloud,
    m: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<PointCloud> {
    if m == 0 {
        return Err(Error::InvalidArgument("repair size must be at least 1".into()));
    }
    let mut rng = rng::rng(seed);
    let encoded = net.encode(condition)?;
    let mut state = DiffusionState {
        x_tilde: PointCloud::new(gaussian_points(&mut rng, m))?,
        condition: condition.clone(),
        t: schedule.steps(),
    };
    while state.t > 0 {
        let z = if state.t > 1 {
            gaussian_points(&mut rng, m)
        } else {
            vec![[0.0; 3]; m]
        };
        state = reverse_step_encoded(net, &encoded, state, &z, schedule)?;
    }
    Ok(state.x_tilde)
}

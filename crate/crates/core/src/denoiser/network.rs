use rayon::prelude::*;

use super::{DenoiserParameters, Layer};
use crate::diffusion::{q_sample_raw, LossSample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// `c = beta * c + op(a) * op(b)` on row-major buffers, where `op(a)` is
/// `m x k` and `op(b)` is `k x n`. A transposed operand is stored as its
/// transpose (`k x m` or `n x k`).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn swish(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn swish_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Sinusoidal embedding of `1000 * t / steps`: `dim / 2` sines followed by
/// `dim / 2` cosines at geometrically spaced frequencies from 1 to 1e-4.
pub fn time_embedding(t: usize, steps: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let s = 1000.0 * t as f64 / steps as f64;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (s * freq).sin();
        out[half + i] = (s * freq).cos();
    }
    out
}

fn flatten(points: &[Point3]) -> Vec<f64> {
    points.iter().flat_map(|p| p.iter().copied()).collect()
}

/// `rows x layer.output` pre-activations of `input * W + b`.
fn affine(params: &[f64], layer: &Layer, input: &[f64], rows: usize) -> Vec<f64> {
    let bias = &params[layer.bias_range()];
    let mut z: Vec<f64> = bias.iter().copied().cycle().take(rows * layer.output).collect();
    gemm(rows, layer.input, layer.output, input, false, &params[layer.weight_range()], false, 1.0, &mut z);
    z
}

/// Global feature of a condition cloud, reusable across diffusion steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCondition {
    pub global: Vec<f64>,
}

struct EncoderTrace {
    /// Input to each encoder layer.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    argmax: Vec<usize>,
    global: Vec<f64>,
}

fn run_encoder(values: &[f64], layers: &[Layer], condition: &PointCloud, keep: bool) -> EncoderTrace {
    let n = condition.len();
    let mut h = flatten(condition.points());
    let mut inputs = Vec::new();
    let mut pre = Vec::new();
    for layer in layers {
        let z = affine(values, layer, &h, n);
        let a: Vec<f64> = z.iter().map(|&v| swish(v)).collect();
        if keep {
            inputs.push(std::mem::replace(&mut h, a));
            pre.push(z);
        } else {
            h = a;
        }
    }
    let width = layers.last().expect("encoder layers").output;
    let mut global = h[..width].to_vec();
    let mut argmax = vec![0usize; width];
    for i in 1..n {
        let row = &h[i * width..(i + 1) * width];
        for j in 0..width {
            if row[j] > global[j] {
                global[j] = row[j];
                argmax[j] = i;
            }
        }
    }
    EncoderTrace {
        inputs,
        pre,
        argmax,
        global,
    }
}

struct TrunkTrace {
    /// Input to each trunk layer; the first is the raw `M x 3` points.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// `g ‖ e`, broadcast to every point.
    shared: Vec<f64>,
    output: Vec<f64>,
}

fn run_trunk(
    values: &[f64],
    layers: &[Layer],
    global: &[f64],
    x_t: &[Point3],
    t: usize,
    steps: usize,
    time_dim: usize,
    keep: bool,
) -> TrunkTrace {
    let m = x_t.len();
    let mut shared = global.to_vec();
    shared.extend(time_embedding(t, steps, time_dim));

    // First layer: per-point xyz rows of W plus a per-cloud constant from
    // the shared rows.
    let first = &layers[0];
    let w = &values[first.weight_range()];
    let mut row_bias = values[first.bias_range()].to_vec();
    gemm(1, shared.len(), first.output, &shared, false, &w[3 * first.output..], false, 1.0, &mut row_bias);
    let x = flatten(x_t);
    let mut z: Vec<f64> = row_bias.iter().copied().cycle().take(m * first.output).collect();
    gemm(m, 3, first.output, &x, false, &w[..3 * first.output], false, 1.0, &mut z);

    let mut inputs = Vec::new();
    let mut pre = Vec::new();
    let mut h = x;
    let last = layers.len() - 1;
    for (i, layer) in layers.iter().enumerate() {
        if i > 0 {
            z = affine(values, layer, &h, m);
        }
        if i == last {
            if keep {
                inputs.push(h);
                pre.push(Vec::new());
            }
            return TrunkTrace {
                inputs,
                pre,
                shared,
                output: z,
            };
        }
        let a: Vec<f64> = z.iter().map(|&v| swish(v)).collect();
        if keep {
            inputs.push(std::mem::replace(&mut h, a));
            pre.push(std::mem::take(&mut z));
        } else {
            h = a;
        }
    }
    unreachable!("trunk has an output layer")
}

fn split_layers(params: &DenoiserParameters) -> (Vec<Layer>, Vec<Layer>) {
    let mut layers = params.architecture().layers();
    let trunk = layers.split_off(params.architecture().encoder_widths.len());
    (layers, trunk)
}

fn check_step(t: usize, steps: usize) -> Result<()> {
    if t == 0 || t > steps {
        return Err(Error::StepOutOfRange { t, steps });
    }
    Ok(())
}

fn to_points(flat: &[f64]) -> Vec<Point3> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub(super) fn encode(params: &DenoiserParameters, condition: &PointCloud) -> Result<EncodedCondition> {
    let (enc, _) = split_layers(params);
    let trace = run_encoder(params.values(), &enc, condition, false);
    Ok(EncodedCondition { global: trace.global })
}

pub(super) fn predict(
    params: &DenoiserParameters,
    encoded: &EncodedCondition,
    x_t: &[Point3],
    t: usize,
    steps: usize,
) -> Result<Vec<Point3>> {
    check_step(t, steps)?;
    let (_, trunk) = split_layers(params);
    if encoded.global.len() != params.architecture().global_dim() {
        return Err(Error::ShapeMismatch("encoded condition width".into()));
    }
    if x_t.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let trace = run_trunk(
        params.values(),
        &trunk,
        &encoded.global,
        x_t,
        t,
        steps,
        params.architecture().time_dim,
        false,
    );
    Ok(to_points(&trace.output))
}

/// Predicted noise for `x_t` (M points) given the condition (N points) at
/// step `t` of `steps`.
pub fn forward(
    params: &DenoiserParameters,
    x_t: &[Point3],
    condition: &PointCloud,
    t: usize,
    steps: usize,
) -> Result<Vec<Point3>> {
    predict(params, &encode(params, condition)?, x_t, t, steps)
}

/// Loss contribution and gradient of one item. `scale` is `1 / (total
/// coordinate count of the batch)`.
fn item_gradient(
    params: &DenoiserParameters,
    enc: &[Layer],
    trunk: &[Layer],
    sample: &LossSample<'_>,
    schedule: &NoiseSchedule,
    scale: f64,
) -> (f64, Vec<f64>) {
    let values = params.values();
    let arch = params.architecture();
    let x_t = q_sample_raw(sample.repair.points(), sample.t, sample.eps, schedule);
    let et = run_encoder(values, enc, sample.condition, true);
    let tt = run_trunk(values, trunk, &et.global, &x_t, sample.t, schedule.steps(), arch.time_dim, true);

    let m = x_t.len();
    let eps = flatten(sample.eps);
    let mut sq = 0.0;
    // dL/d(output) = -2 (eps - out) * scale
    let mut dz: Vec<f64> = eps
        .iter()
        .zip(&tt.output)
        .map(|(e, o)| {
            let r = e - o;
            sq += r * r;
            -2.0 * r * scale
        })
        .collect();

    let mut grad = vec![0.0; values.len()];
    let colsum = |d: &[f64], width: usize| {
        let mut s = vec![0.0; width];
        for row in d.chunks_exact(width) {
            for (acc, v) in s.iter_mut().zip(row) {
                *acc += v;
            }
        }
        s
    };

    // Trunk, top down.
    let mut dglobal = Vec::new();
    for (i, layer) in trunk.iter().enumerate().rev() {
        let (fi, fo) = (layer.input, layer.output);
        if i + 1 < trunk.len() {
            for (d, &z) in dz.iter_mut().zip(&tt.pre[i]) {
                *d *= swish_grad(z);
            }
        }
        let db = colsum(&dz, fo);
        let wr = layer.weight_range();
        if i == 0 {
            let gw = &mut grad[wr.clone()];
            gemm(3, m, fo, &tt.inputs[0], true, &dz, false, 1.0, &mut gw[..3 * fo]);
            for (r, &v) in tt.shared.iter().enumerate() {
                let row = &mut gw[(3 + r) * fo..(4 + r) * fo];
                for (g, d) in row.iter_mut().zip(&db) {
                    *g += v * d;
                }
            }
            let g_dim = arch.global_dim();
            let mut dshared = vec![0.0; g_dim];
            // dg = W[3..3+G, :] * db
            gemm(g_dim, fo, 1, &values[wr.start + 3 * fo..wr.start + (3 + g_dim) * fo], false, &db, false, 0.0, &mut dshared);
            dglobal = dshared;
        } else {
            gemm(fi, m, fo, &tt.inputs[i], true, &dz, false, 1.0, &mut grad[wr.clone()]);
            let mut dh = vec![0.0; m * fi];
            gemm(m, fo, fi, &dz, false, &values[wr], true, 0.0, &mut dh);
            dz = dh;
        }
        for (g, d) in grad[layer.bias_range()].iter_mut().zip(&db) {
            *g += d;
        }
    }

    // Encoder: only rows selected by the max-pool receive gradient.
    let mut rows: Vec<usize> = et.argmax.clone();
    rows.sort_unstable();
    rows.dedup();
    let r = rows.len();
    let last = enc.len() - 1;
    let width = enc[last].output;
    let mut dh = vec![0.0; r * width];
    for (j, &src) in et.argmax.iter().enumerate() {
        let k = rows.binary_search(&src).expect("row present");
        dh[k * width + j] += dglobal[j];
    }
    for (i, layer) in enc.iter().enumerate().rev() {
        let (fi, fo) = (layer.input, layer.output);
        let mut dz = dh;
        for (k, &row) in rows.iter().enumerate() {
            for j in 0..fo {
                dz[k * fo + j] *= swish_grad(et.pre[i][row * fo + j]);
            }
        }
        let input: Vec<f64> = rows
            .iter()
            .flat_map(|&row| et.inputs[i][row * fi..(row + 1) * fi].iter().copied())
            .collect();
        let wr = layer.weight_range();
        gemm(fi, r, fo, &input, true, &dz, false, 1.0, &mut grad[wr.clone()]);
        let db = colsum(&dz, fo);
        for (g, d) in grad[layer.bias_range()].iter_mut().zip(&db) {
            *g += d;
        }
        dh = if i > 0 {
            let mut prev = vec![0.0; r * fi];
            gemm(r, fo, fi, &dz, false, &values[wr], true, 0.0, &mut prev);
            prev
        } else {
            Vec::new()
        };
    }

    (sq, grad)
}

/// Batch loss (mean over items and coordinates) and its exact gradient.
///
/// Items are processed in parallel and reduced in batch order, so the result
/// does not depend on the thread count.
pub fn gradients(
    params: &DenoiserParameters,
    batch: &[LossSample<'_>],
    schedule: &NoiseSchedule,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for s in batch {
        check_step(s.t, schedule.steps())?;
        if s.eps.len() != s.repair.len() {
            return Err(Error::ShapeMismatch(format!(
                "noise: {} points vs {} points",
                s.eps.len(),
                s.repair.len()
            )));
        }
    }
    let count: usize = batch.iter().map(|s| 3 * s.eps.len()).sum();
    let scale = 1.0 / count as f64;
    let (enc, trunk) = split_layers(params);
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|s| item_gradient(params, &enc, &trunk, s, schedule, scale))
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (sq, g) in parts {
        total += sq;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    Ok((total * scale, grad))
}

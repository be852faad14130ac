//! Test-only oracles. Nothing here goes through the autodiff graph.
#![allow(dead_code)]

use detach_lab::autodiff::{Graph, Tensor};
use detach_lab::losses::{loss_value, LossKind};
use detach_lab::model::{DualStreamModel, Linear, ModelConfig, Wiring};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Gradient magnitude below which relative error is measured against this
/// floor instead. A central difference at `FD_STEP` in f64 carries rounding
/// noise of about `eps * |loss| / FD_STEP`, i.e. 1e-11..1e-10 for the losses
/// checked here, so it cannot resolve a 1e-5 relative error on gradients
/// much smaller than 1e-5.
pub const GRAD_FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
    (analytic - numeric).abs() / scale
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..m).map(|_| (0..n).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn linear(l: &Linear, x: &[f64]) -> Vec<f64> {
    let (fan_in, fan_out) = (l.weight.shape()[0], l.weight.shape()[1]);
    let w = l.weight.data();
    (0..fan_out)
        .map(|j| (0..fan_in).map(|i| x[i] * w[i * fan_out + j]).sum::<f64>() + l.bias.data()[j])
        .collect()
}

pub fn encode(layers: &[Linear], x: &[f64]) -> Vec<f64> {
    layers.iter().fold(x.to_vec(), |h, l| linear(l, &h).into_iter().map(|v| v.max(0.0)).collect())
}

/// Features per row: `(f_a, f_b)`, with `f_b` absent for one-encoder wirings.
pub fn features(model: &DualStreamModel, xs: &[Vec<f64>]) -> Vec<(Vec<f64>, Option<Vec<f64>>)> {
    xs.iter()
        .map(|x| {
            let fa = model.encoder_a.as_ref().map(|e| encode(&e.layers, x));
            let fb = model.encoder_b.as_ref().map(|e| encode(&e.layers, x));
            match (fa, fb) {
                (Some(a), b) => (a, b),
                (None, Some(b)) => (b, None),
                (None, None) => unreachable!(),
            }
        })
        .collect()
}

/// Logits per task; `frozen` supplies the features used for the cross-task
/// (detached) half of each classifier input.
pub fn logits(
    model: &DualStreamModel,
    xs: &[Vec<f64>],
    frozen: Option<&[(Vec<f64>, Option<Vec<f64>>)]>,
) -> (Option<Vec<Vec<f64>>>, Option<Vec<Vec<f64>>>) {
    let live = features(model, xs);
    let cross = frozen.unwrap_or(&live);
    let mut la = Vec::new();
    let mut lb = Vec::new();
    for (i, (fa, fb)) in live.iter().enumerate() {
        let (in_a, in_b) = match model.config.wiring {
            Wiring::Detached | Wiring::Entangled => {
                let fb = fb.as_ref().unwrap();
                let (xa, xb) = (&cross[i].0, cross[i].1.as_ref().unwrap());
                ([fa.clone(), xb.clone()].concat(), [xa.clone(), fb.clone()].concat())
            }
            _ => (fa.clone(), fa.clone()),
        };
        if let Some(c) = &model.classifier_a {
            la.push(linear(c, &in_a));
        }
        if let Some(c) = &model.classifier_b {
            lb.push(linear(c, &in_b));
        }
    }
    (model.classifier_a.as_ref().map(|_| la), model.classifier_b.as_ref().map(|_| lb))
}

pub fn mean_ce(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    logits.iter().zip(labels).map(|(z, &y)| -softmax(z)[y].ln()).sum::<f64>() / labels.len() as f64
}

/// Central difference of `f` with respect to `params[k]`.
pub fn central_difference(params: &mut [f64], k: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = params[k];
    params[k] = orig + FD_STEP;
    let up = f(params);
    params[k] = orig - FD_STEP;
    let down = f(params);
    params[k] = orig;
    (up - down) / (2.0 * FD_STEP)
}

/// Per-sample loss from plain arithmetic. For DAW the weight is
/// `frozen_pt^gamma`: holding it fixed while `z` moves is the numerical
/// meaning of a stop-gradient on alpha.
pub fn loss_oracle(kind: LossKind, z: &[f64], y: usize, gamma: f64, frozen_pt: f64) -> f64 {
    let p = softmax(z)[y];
    match kind {
        LossKind::Ce => -p.ln(),
        LossKind::Focal { focus } => -(1.0 - p).powf(focus) * p.ln(),
        LossKind::Gce { q } => (1.0 - p.powf(q)) / q,
        LossKind::Daw { alpha_grad: true, .. } => -p.powf(gamma) * p.ln(),
        LossKind::Daw { alpha_grad: false, .. } => -frozen_pt.powf(gamma) * p.ln(),
    }
}

/// Worst relative error between the graph's logit gradient of the mean loss
/// and central differences of [`loss_oracle`], over one random batch.
pub fn loss_gradient_error(kind: LossKind, rng: &mut ChaCha8Rng, gamma: f64) -> f64 {
    let (m, c) = (rng.random_range(1..6), rng.random_range(2..6));
    let mut z: Vec<f64> = (0..m * c).map(|_| rng.random_range(-3.0..3.0)).collect();
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();

    let mut g = Graph::new();
    let zv = g.leaf(Tensor::new(vec![m, c], z.clone()).unwrap());
    let l = loss_value(&mut g, kind, zv, &labels, gamma).unwrap();
    g.backward(l).unwrap();
    let analytic = g.grad_tensor(zv).into_data();

    let frozen: Vec<f64> = (0..m).map(|i| softmax(&z[i * c..(i + 1) * c])[labels[i]]).collect();
    let mean_loss = |z: &[f64]| {
        (0..m).map(|i| loss_oracle(kind, &z[i * c..(i + 1) * c], labels[i], gamma, frozen[i])).sum::<f64>()
            / m as f64
    };
    (0..z.len())
        .map(|k| rel_err(analytic[k], central_difference(&mut z, k, mean_loss)))
        .fold(0.0, f64::max)
}

fn flat_params(model: &DualStreamModel) -> Vec<f64> {
    model.named_parameters().iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

fn with_params(model: &DualStreamModel, flat: &[f64]) -> DualStreamModel {
    let mut out = model.clone();
    let mut offset = 0;
    for t in out.parameters_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    out
}

/// Worst relative error between the graph's parameter gradient of
/// `CE_a + CE_b` and central differences of the plain-arithmetic model.
/// The oracle holds cross-task features at their unperturbed values when the
/// wiring is detached, which is what a stop-gradient means numerically.
pub fn model_gradient_error(config: ModelConfig, seed: u64) -> f64 {
    let mut r = rng(100 + seed);
    // Freshly built models have zero biases, which puts rows with a dead
    // hidden layer exactly on a ReLU kink; probe at a generic point instead.
    let built = DualStreamModel::build(config.clone(), seed).unwrap();
    let generic: Vec<f64> = flat_params(&built).iter().map(|_| r.random_range(-1.0..1.0)).collect();
    let model = with_params(&built, &generic);
    let m = 4;
    let xs = uniform_matrix(&mut r, m, config.input_dim, -2.0, 2.0);
    let ya: Vec<usize> = (0..m).map(|_| r.random_range(0..config.classes_a)).collect();
    let yb: Vec<usize> = (0..m).map(|_| r.random_range(0..config.classes_b)).collect();

    let mut g = Graph::new();
    let params = model.bind(&mut g);
    let x = g.constant(Tensor::from_rows(&xs).unwrap());
    let out = model.forward(&mut g, &params, x).unwrap();
    let la = loss_value(&mut g, LossKind::Ce, out.a.unwrap(), &ya, 0.0).unwrap();
    let lb = loss_value(&mut g, LossKind::Ce, out.b.unwrap(), &yb, 0.0).unwrap();
    let total = g.add(la, lb).unwrap();
    g.backward(total).unwrap();
    let analytic: Vec<f64> = params.grads(&g).into_iter().flat_map(Tensor::into_data).collect();

    let frozen = features(&model, &xs);
    let detached = config.wiring == Wiring::Detached;
    let mut flat = generic;
    (0..flat.len())
        .map(|k| {
            let numeric = central_difference(&mut flat, k, |p| {
                let moved = with_params(&model, p);
                let (za, zb) = logits(&moved, &xs, detached.then_some(frozen.as_slice()));
                mean_ce(&za.unwrap(), &ya) + mean_ce(&zb.unwrap(), &yb)
            });
            rel_err(analytic[k], numeric)
        })
        .fold(0.0, f64::max)
}

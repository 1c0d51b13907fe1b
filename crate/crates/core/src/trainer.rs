//! Surrogate-gradient backpropagation through time.
//!
//! The forward pass uses the hard spike `V > threshold`; the backward pass
//! replaces its derivative with the fast-sigmoid surrogate
//! `1 / (1 + slope * |V - threshold|)^2`. The loss is cross-entropy over the
//! softmax of output spike counts summed across the window. Weights and
//! thresholds are trained with Adam; decays stay at their power-of-two values.
//!
//! Per-layer recurrence, with `x_t` the presynaptic spikes:
//!
//! ```text
//! I_t = alpha * I_{t-1} + W x_t
//! V_t = beta  * U_{t-1} + I_t
//! s_t = H(V_t - threshold)
//! U_t = V_t - threshold * s_t        (subtract reset)
//! U_t = V_t * (1 - s_t)              (reset to zero)
//! ```

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{shuffled_batches, DatasetSplit};
use crate::encoder::{encode_indexed, EncodingConfig, SpikeTrain};
use crate::error::{Error, Result};
use crate::network::{argmax_lowest, Architecture, LayerSpec, LifParams, NetworkModel, ResetMode};
use crate::quantizer::evaluate;

/// Thresholds are kept at or above this value after each optimizer step.
pub const MIN_THRESHOLD: f64 = 1e-3;

/// Samples per gradient chunk. Chunks are reduced in index order, so the
/// result does not depend on how many threads ran them.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub surrogate_slope: f64,
    pub seed: u64,
    pub timesteps: usize,
    /// Treat the reset term as a constant in the backward pass.
    pub detach_reset: bool,
    /// Optional cap on training samples per epoch (first `n` of the split).
    pub train_limit: Option<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 64,
            learning_rate: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            surrogate_slope: 25.0,
            seed: 0,
            timesteps: 10,
            detach_reset: true,
            train_limit: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 || self.timesteps == 0 {
            return Err(Error::invalid("batch_size and timesteps must be at least 1"));
        }
        if self.learning_rate < 0.0 || self.surrogate_slope <= 0.0 || self.adam_eps <= 0.0 {
            return Err(Error::invalid("learning rate, surrogate slope and eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn encoding(&self) -> EncodingConfig {
        EncodingConfig {
            timesteps: self.timesteps,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
}

impl TrainReport {
    /// One `key=value` record per line.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&format!(
                "record=epoch epoch={} loss={:.6} train_accuracy={:.6}\n",
                e.epoch, e.loss, e.train_accuracy
            ));
        }
        out.push_str(&format!(
            "record=final test_accuracy={:.6} wall_seconds={:.3}\n",
            self.test_accuracy, self.wall_seconds
        ));
        out
    }
}

/// Derivative of the fast-sigmoid spike surrogate at `u - threshold`.
#[inline]
pub fn surrogate_grad(u_minus_theta: f64, slope: f64) -> f64 {
    let d = 1.0 + slope * u_minus_theta.abs();
    1.0 / (d * d)
}

/// Smooth spike whose derivative is exactly [`surrogate_grad`]; used only to
/// check the backward pass against finite differences.
#[inline]
pub fn relaxed_spike(u_minus_theta: f64, slope: f64) -> f64 {
    0.5 + u_minus_theta / (1.0 + slope * u_minus_theta.abs())
}

/// Uniform `±1/sqrt(fan_in)` weights for every layer, drawn from `seed`.
pub fn init_model(arch: &Architecture, lif: LifParams, seed: u64) -> NetworkModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .sizes()
        .windows(2)
        .map(|w| {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let mut layer = LayerSpec::zeros(w[0], w[1], lif);
            // drawn post-major so the stream matches a fan_out x fan_in fill
            for post in 0..w[1] {
                for pre in 0..w[0] {
                    layer.set_weight(post, pre, rng.gen_range(-bound..bound));
                }
            }
            layer
        })
        .collect();
    NetworkModel { layers }
}

/// Gradients of the loss with respect to every weight and threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub thresholds: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model: &NetworkModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            thresholds: vec![0.0; model.layers.len()],
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.thresholds.iter_mut().zip(&other.thresholds).for_each(|(x, y)| *x += y);
    }

    fn scale(&mut self, k: f64) {
        self.weights.iter_mut().flatten().for_each(|x| *x *= k);
        self.thresholds.iter_mut().for_each(|x| *x *= k);
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().flatten().copied().chain(self.thresholds.iter().copied())
    }
}

#[derive(Debug, Clone, Copy)]
struct Mode {
    slope: f64,
    relaxed: bool,
    detach_reset: bool,
}

/// Per-layer unrolled activations for one sample.
#[derive(Default)]
struct LayerTape {
    /// `V_t - threshold`, `T * fan_out`.
    margin: Vec<f64>,
    /// Pre-reset membrane `V_t`.
    pre: Vec<f64>,
    /// Spike value (0/1, or the relaxed spike).
    spike: Vec<f64>,
}

struct Tape {
    layers: Vec<LayerTape>,
    counts: Vec<f64>,
}

fn forward(model: &NetworkModel, input: &[Vec<f64>], mode: Mode) -> Tape {
    let steps = input.len();
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut x_seq: Vec<f64> = input.concat();
    let mut fan_in = model.layers[0].fan_in;
    for layer in &model.layers {
        let n = layer.fan_out;
        let lif = &layer.lif;
        let beta = lif.membrane_retention();
        let theta = lif.threshold;
        let mut tape = LayerTape {
            margin: vec![0.0; steps * n],
            pre: vec![0.0; steps * n],
            spike: vec![0.0; steps * n],
        };
        let mut current = vec![0.0; n];
        let mut membrane = vec![0.0; n];
        let mut syn = vec![0.0; n];
        for t in 0..steps {
            syn.iter_mut().for_each(|v| *v = 0.0);
            crate::network::accumulate_f64(&layer.weights, n, &x_seq[t * fan_in..(t + 1) * fan_in], &mut syn);
            for j in 0..n {
                current[j] = lif.alpha * current[j] + syn[j];
                let v = beta * membrane[j] + current[j];
                let m = v - theta;
                let s = if mode.relaxed {
                    relaxed_spike(m, mode.slope)
                } else {
                    (m > 0.0) as u8 as f64
                };
                membrane[j] = match lif.reset_mode {
                    ResetMode::Subtract => v - theta * s,
                    ResetMode::ToZero => v * (1.0 - s),
                };
                tape.margin[t * n + j] = m;
                tape.pre[t * n + j] = v;
                tape.spike[t * n + j] = s;
            }
        }
        x_seq = tape.spike.clone();
        fan_in = n;
        layers.push(tape);
    }
    let out_n = model.output_size();
    let top = layers.last().unwrap();
    let mut counts = vec![0.0; out_n];
    for t in 0..steps {
        for k in 0..out_n {
            counts[k] += top.spike[t * out_n + k];
        }
    }
    Tape { layers, counts }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn cross_entropy(counts: &[f64], label: usize) -> f64 {
    let max = counts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + counts.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - counts[label]
}

/// Loss of a single sample; adds its gradient into `grads`.
fn backward(
    model: &NetworkModel,
    input: &[Vec<f64>],
    label: usize,
    mode: Mode,
    grads: &mut Gradients,
) -> (f64, Vec<f64>) {
    let steps = input.len();
    let tape = forward(model, input, mode);
    let loss = cross_entropy(&tape.counts, label);
    let mut g_count = softmax(&tape.counts);
    g_count[label] -= 1.0;

    let out_n = model.output_size();
    // dL/ds_t for the current layer, T * fan_out
    let mut g_spike: Vec<f64> = (0..steps).flat_map(|_| g_count.iter().copied()).collect();
    debug_assert_eq!(g_spike.len(), steps * out_n);

    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        let lt = &tape.layers[l];
        let n = layer.fan_out;
        let fan_in = layer.fan_in;
        let lif = &layer.lif;
        let beta = lif.membrane_retention();
        let theta = lif.threshold;
        let nd = if mode.detach_reset { 0.0 } else { 1.0 };
        let x_seq: Vec<f64> = if l == 0 { input.concat() } else { tape.layers[l - 1].spike.clone() };
        let mut g_x = if l > 0 { vec![0.0; steps * fan_in] } else { Vec::new() };

        let mut g_v_next = vec![0.0; n];
        let mut g_i_next = vec![0.0; n];
        let mut g_i = vec![0.0; n];
        let gw = &mut grads.weights[l];
        let mut g_theta = 0.0;
        for t in (0..steps).rev() {
            for j in 0..n {
                let idx = t * n + j;
                let sp = surrogate_grad(lt.margin[idx], mode.slope);
                let s = lt.spike[idx];
                let v = lt.pre[idx];
                let g_u = beta * g_v_next[j];
                let (du_dv, du_dtheta) = match lif.reset_mode {
                    ResetMode::Subtract => (1.0 - nd * theta * sp, -s + nd * theta * sp),
                    ResetMode::ToZero => ((1.0 - s) - nd * v * sp, nd * v * sp),
                };
                let gs = g_spike[idx];
                let g_v = g_u * du_dv + gs * sp;
                g_theta += g_u * du_dtheta - gs * sp;
                g_i[j] = g_v + lif.alpha * g_i_next[j];
                g_v_next[j] = g_v;
            }
            let x_t = &x_seq[t * fan_in..(t + 1) * fan_in];
            for (i, &x) in x_t.iter().enumerate() {
                if x != 0.0 {
                    let row = &mut gw[i * n..(i + 1) * n];
                    row.iter_mut().zip(&g_i).for_each(|(g, gi)| *g += x * gi);
                }
            }
            if l > 0 {
                let gx_t = &mut g_x[t * fan_in..(t + 1) * fan_in];
                for (i, gx) in gx_t.iter_mut().enumerate() {
                    let row = &layer.weights[i * n..(i + 1) * n];
                    *gx = row.iter().zip(&g_i).map(|(w, g)| w * g).sum();
                }
            }
            std::mem::swap(&mut g_i, &mut g_i_next);
        }
        grads.thresholds[l] += g_theta;
        g_spike = g_x;
    }
    (loss, tape.counts)
}

fn train_rows(train: &SpikeTrain) -> Vec<Vec<f64>> {
    (0..train.timesteps())
        .map(|t| train.row(t).iter().map(|&b| b as f64).collect())
        .collect()
}

/// Mean loss and gradient over a batch of encoded samples, plus the number of
/// correct hard-forward predictions.
pub fn batch_gradients(
    model: &NetworkModel,
    batch: &[(SpikeTrain, usize)],
    slope: f64,
    detach_reset: bool,
) -> (f64, Gradients, usize) {
    let mode = Mode {
        slope,
        relaxed: false,
        detach_reset,
    };
    let inputs: Vec<(Vec<Vec<f64>>, usize)> = batch.iter().map(|(t, y)| (train_rows(t), *y)).collect();
    batch_gradients_rows(model, &inputs, mode)
}

fn batch_gradients_rows(model: &NetworkModel, batch: &[(Vec<Vec<f64>>, usize)], mode: Mode) -> (f64, Gradients, usize) {
    let partials: Vec<(f64, Gradients, usize)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = Gradients::zeros(model);
            let mut loss = 0.0;
            let mut correct = 0;
            for (rows, label) in chunk {
                let (l, counts) = backward(model, rows, *label, mode, &mut g);
                loss += l;
                let c: Vec<u32> = counts.iter().map(|&c| c.round() as u32).collect();
                correct += (argmax_lowest(&c) == *label) as usize;
            }
            (loss, g, correct)
        })
        .collect();
    let mut total = Gradients::zeros(model);
    let mut loss = 0.0;
    let mut correct = 0;
    for (l, g, c) in &partials {
        loss += l;
        total.add(g);
        correct += c;
    }
    let k = 1.0 / batch.len().max(1) as f64;
    total.scale(k);
    (loss * k, total, correct)
}

/// Standard bias-corrected Adam over every weight and threshold.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(model: &NetworkModel, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Gradients::zeros(model),
            v: Gradients::zeros(model),
        }
    }

    pub fn step(&mut self, model: &mut NetworkModel, grads: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        };
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let (gw, mw, vw) = (&grads.weights[l], &mut self.m.weights[l], &mut self.v.weights[l]);
            for i in 0..layer.weights.len() {
                update(&mut layer.weights[i], gw[i], &mut mw[i], &mut vw[i]);
            }
            let mut theta = layer.lif.threshold;
            update(&mut theta, grads.thresholds[l], &mut self.m.thresholds[l], &mut self.v.thresholds[l]);
            layer.lif.threshold = theta.max(MIN_THRESHOLD);
        }
    }
}

fn mix(seed: u64, salt: u64, epoch: usize) -> u64 {
    seed ^ salt.wrapping_mul(epoch as u64 + 1)
}

const SHUFFLE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const ENCODE_SALT: u64 = 0xc2b2_ae3d_27d4_eb4f;

/// Trains weights and thresholds; decay parameters are left as given.
///
/// `progress` is called after every epoch.
pub fn train_with_progress(
    model0: &NetworkModel,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    cfg: &TrainerConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<(NetworkModel, TrainReport)> {
    cfg.validate()?;
    model0.validate()?;
    let started = Instant::now();
    let train_split = match cfg.train_limit {
        Some(n) => train_split.head(n),
        None => train_split.clone(),
    };
    if train_split.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut model = model0.clone();
    let mut adam = Adam::new(&model, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mode = Mode {
        slope: cfg.surrogate_slope,
        relaxed: false,
        detach_reset: cfg.detach_reset,
    };
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let enc = EncodingConfig {
            timesteps: cfg.timesteps,
            seed: mix(cfg.seed, ENCODE_SALT, epoch),
        };
        let batches = shuffled_batches(&train_split, cfg.batch_size, mix(cfg.seed, SHUFFLE_SALT, epoch))?;
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in &batches {
            let inputs: Vec<(Vec<Vec<f64>>, usize)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_split.samples[i];
                    (train_rows(&encode_indexed(s, i as u64, &enc)), s.label as usize)
                })
                .collect();
            let (loss, grads, c) = batch_gradients_rows(&model, &inputs, mode);
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    msg: format!("non-finite loss {loss}"),
                });
            }
            loss_sum += loss * batch.len() as f64;
            correct += c;
            adam.step(&mut model, &grads, cfg.learning_rate);
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / train_split.len() as f64,
            train_accuracy: correct as f64 / train_split.len() as f64,
        };
        progress(&stats);
        epochs.push(stats);
    }
    let test_accuracy = if test_split.is_empty() {
        0.0
    } else {
        evaluate(&model, test_split, &cfg.encoding())?
    };
    Ok((
        model,
        TrainReport {
            epochs,
            test_accuracy,
            wall_seconds: started.elapsed().as_secs_f64(),
        },
    ))
}

pub fn train(
    model0: &NetworkModel,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    cfg: &TrainerConfig,
) -> Result<(NetworkModel, TrainReport)> {
    train_with_progress(model0, train_split, test_split, cfg, |_| {})
}

/// Analytic gradient on the relaxed forward pass, with the reset kept in the
/// graph. Returns the mean loss and gradient over the batch.
pub fn relaxed_gradients(model: &NetworkModel, batch: &[(SpikeTrain, usize)], slope: f64) -> (f64, Gradients) {
    let mode = Mode {
        slope,
        relaxed: true,
        detach_reset: false,
    };
    let inputs: Vec<(Vec<Vec<f64>>, usize)> = batch.iter().map(|(t, y)| (train_rows(t), *y)).collect();
    let (loss, g, _) = batch_gradients_rows(model, &inputs, mode);
    (loss, g)
}

/// Mean relaxed-forward loss over the batch.
pub fn relaxed_loss(model: &NetworkModel, batch: &[(SpikeTrain, usize)], slope: f64) -> f64 {
    let mode = Mode {
        slope,
        relaxed: true,
        detach_reset: false,
    };
    let total: f64 = batch
        .iter()
        .map(|(t, y)| cross_entropy(&forward(model, &train_rows(t), mode).counts, *y))
        .sum();
    total / batch.len() as f64
}

/// Largest relative disagreement between the analytic relaxed-forward
/// gradient and central differences with step `h`, over every weight and
/// threshold.
pub fn grad_check(model: &NetworkModel, batch: &[(SpikeTrain, usize)], slope: f64, h: f64) -> f64 {
    let (_, analytic) = relaxed_gradients(model, batch, slope);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
    for l in 0..model.layers.len() {
        for i in 0..model.layers[l].weights.len() {
            let w0 = probe.layers[l].weights[i];
            probe.layers[l].weights[i] = w0 + h;
            let up = relaxed_loss(&probe, batch, slope);
            probe.layers[l].weights[i] = w0 - h;
            let down = relaxed_loss(&probe, batch, slope);
            probe.layers[l].weights[i] = w0;
            worst = worst.max(rel(analytic.weights[l][i], (up - down) / (2.0 * h)));
        }
        let th0 = probe.layers[l].lif.threshold;
        probe.layers[l].lif.threshold = th0 + h;
        let up = relaxed_loss(&probe, batch, slope);
        probe.layers[l].lif.threshold = th0 - h;
        let down = relaxed_loss(&probe, batch, slope);
        probe.layers[l].lif.threshold = th0;
        worst = worst.max(rel(analytic.thresholds[l], (up - down) / (2.0 * h)));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::round_decays_to_pow2;

    fn random_train(seed: u64, steps: usize, channels: usize, p: f64) -> SpikeTrain {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits = (0..steps * channels).map(|_| rng.gen_bool(p) as u8).collect();
        SpikeTrain::from_bits(bits, steps, channels).unwrap()
    }

    fn toy(lif: LifParams) -> NetworkModel {
        let arch: Architecture = "8-16-4".parse().unwrap();
        let mut m = round_decays_to_pow2(&init_model(&arch, lif, 3));
        // scale up so the relaxed forward is away from trivial regimes
        m.layers.iter_mut().for_each(|l| l.weights.iter_mut().for_each(|w| *w *= 3.0));
        m
    }

    #[test]
    fn surrogate_values() {
        assert_eq!(surrogate_grad(0.0, 25.0), 1.0);
        assert!((surrogate_grad(1.0, 25.0) - 1.0 / 676.0).abs() < 1e-15);
        for x in [0.01, 0.3, 2.5, 17.0] {
            assert_eq!(surrogate_grad(x, 25.0), surrogate_grad(-x, 25.0));
        }
    }

    #[test]
    fn relaxed_spike_derivative_is_surrogate() {
        for x in [-0.7, -0.05, 0.02, 0.4] {
            let h = 1e-6;
            let fd = (relaxed_spike(x + h, 25.0) - relaxed_spike(x - h, 25.0)) / (2.0 * h);
            assert!((fd - surrogate_grad(x, 25.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_check_all_neuron_kinds() {
        let batch: Vec<_> = (0..4).map(|i| (random_train(i, 6, 8, 0.4), i as usize % 4)).collect();
        let mut second = LifParams::first_order(0.8, 0.4);
        second.alpha = 0.6;
        for mut lif in [LifParams::first_order(0.9, 0.4), LifParams::integrate_and_fire(0.4), second] {
            for reset in [ResetMode::Subtract, ResetMode::ToZero] {
                lif.reset_mode = reset;
                let err = grad_check(&toy(lif), &batch, 25.0, 1e-4);
                assert!(err < 1e-3, "{lif:?}: {err}");
            }
        }
    }

    #[test]
    fn silent_input_gives_zero_first_layer_gradient() {
        let m = toy(LifParams::first_order(0.9, 0.4));
        let batch = vec![(SpikeTrain::zeros(5, 8), 1)];
        let (_, g) = relaxed_gradients(&m, &batch, 25.0);
        assert!(g.weights[0].iter().all(|&x| x == 0.0));
        let (_, g, _) = batch_gradients(&m, &batch, 25.0, true);
        assert!(g.weights[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn duplicated_sample_doubles_gradient_sum() {
        let m = toy(LifParams::first_order(0.9, 0.4));
        let a = (random_train(5, 6, 8, 0.5), 2);
        let b = (random_train(6, 6, 8, 0.5), 0);
        let (_, g1) = relaxed_gradients(&m, &[a.clone(), b.clone()], 25.0);
        let (_, g2) = relaxed_gradients(&m, &[a.clone(), a.clone(), b.clone()], 25.0);
        let (_, ga) = relaxed_gradients(&m, &[a], 25.0);
        // 3 * mean(a, a, b) - 2 * mean(a, b) == a
        for ((x1, x2), xa) in g1.iter().zip(g2.iter()).zip(ga.iter()) {
            assert!((3.0 * x2 - 2.0 * x1 - xa).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_without_moments_is_sign_sgd() {
        let arch: Architecture = "3-2".parse().unwrap();
        let mut m = init_model(&arch, LifParams::first_order(0.5, 1.0), 1);
        let before = m.clone();
        let mut g = Gradients::zeros(&m);
        g.weights[0] = vec![0.5, -2.0, 3.0, -0.1, 1e-3, -7.0];
        g.thresholds[0] = -0.25;
        let mut adam = Adam::new(&m, 0.0, 0.0, 1e-12);
        adam.step(&mut m, &g, 0.01);
        for (i, (&a, &b)) in m.layers[0].weights.iter().zip(&before.layers[0].weights).enumerate() {
            let want = b - 0.01 * g.weights[0][i].signum();
            assert!((a - want).abs() < 1e-9);
        }
        assert!((m.layers[0].lif.threshold - 1.01).abs() < 1e-9);
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        let arch: Architecture = "1-1".parse().unwrap();
        let mut m = init_model(&arch, LifParams::first_order(0.5, 1.0), 1);
        let w0 = m.layers[0].weights[0];
        let mut g = Gradients::zeros(&m);
        g.weights[0][0] = 0.2;
        let mut adam = Adam::new(&m, 0.9, 0.999, 1e-8);
        adam.step(&mut m, &g, 1e-3);
        // bias-corrected first step: m_hat = g, v_hat = g^2
        assert!((m.layers[0].weights[0] - (w0 - 1e-3 * 0.2 / (0.2 + 1e-8))).abs() < 1e-15);
        adam.step(&mut m, &g, 1e-3);
        let (m2, v2) = (0.9 * 0.02 + 0.1 * 0.2, 0.999 * 0.001 * 0.04 + 0.001 * 0.04);
        let step2 = 1e-3 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((m.layers[0].weights[0] - (w0 - 1e-3 * 0.2 / (0.2 + 1e-8) - step2)).abs() < 1e-15);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let arch: Architecture = "784-25-10".parse().unwrap();
        let lif = LifParams::first_order(0.9375, 1.0);
        let a = init_model(&arch, lif, 11);
        assert_eq!(a, init_model(&arch, lif, 11));
        assert_ne!(a, init_model(&arch, lif, 12));
        let bound = 1.0 / 28.0;
        assert!(a.layers[0].weights.iter().all(|w| w.abs() < bound));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainerConfig::default();
        cfg.validate().unwrap();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
    }
}

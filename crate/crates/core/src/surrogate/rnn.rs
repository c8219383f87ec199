//! Single-layer Elman network surrogate.
//!
//! Inputs per tick are the ground acceleration and the (delayed) brace force,
//! z-scored with statistics frozen at training time. The network works on a
//! z-scored target as well; [`RnnModel::denormalize`] maps its output back
//! to command displacement in mm.
//!
//! `h_t = tanh(W_x z_t + W_y h_{t−1} + b)`, `y_t = w_out · h_t + b_out`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation;
use crate::par::{self, ExecPolicy};

pub const INPUT_COUNT: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnModel {
    pub hidden_size: usize,
    /// `hidden × 2`, row-major.
    pub w_x: Vec<f64>,
    /// `hidden × hidden`, row-major.
    pub w_y: Vec<f64>,
    pub b: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
    pub input_mean: [f64; INPUT_COUNT],
    pub input_std: [f64; INPUT_COUNT],
    pub target_mean: f64,
    pub target_std: f64,
    pub seed: u64,
}

impl RnnModel {
    /// Seeded Glorot-uniform weights, zero biases, identity normalization.
    pub fn init(hidden_size: usize, seed: u64) -> Result<Self> {
        if hidden_size == 0 {
            return Err(Error::config("rnn.hidden_size", "must be >= 1"));
        }
        let h = hidden_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform =
            |n: usize, limit: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-limit..limit)).collect() };
        let w_x = uniform(h * INPUT_COUNT, (6.0 / (h + INPUT_COUNT) as f64).sqrt());
        let w_y = uniform(h * h, 0.5 * (3.0 / h as f64).sqrt());
        let w_out = uniform(h, (6.0 / (h + 1) as f64).sqrt());
        Ok(RnnModel {
            hidden_size: h,
            w_x,
            w_y,
            b: vec![0.0; h],
            w_out,
            b_out: 0.0,
            input_mean: [0.0; INPUT_COUNT],
            input_std: [1.0; INPUT_COUNT],
            target_mean: 0.0,
            target_std: 1.0,
            seed,
        })
    }

    pub fn parameter_count(&self) -> usize {
        let h = self.hidden_size;
        h * INPUT_COUNT + h * h + h + h + 1
    }

    /// Flattened parameters in the order `w_x, w_y, b, w_out, b_out`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.parameter_count());
        p.extend_from_slice(&self.w_x);
        p.extend_from_slice(&self.w_y);
        p.extend_from_slice(&self.b);
        p.extend_from_slice(&self.w_out);
        p.push(self.b_out);
        p
    }

    pub fn set_parameters(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.parameter_count() {
            return Err(Error::Shape {
                what: "rnn parameters",
                expected: self.parameter_count(),
                got: p.len(),
            });
        }
        let h = self.hidden_size;
        let (wx, rest) = p.split_at(h * INPUT_COUNT);
        let (wy, rest) = rest.split_at(h * h);
        let (b, rest) = rest.split_at(h);
        let (wo, rest) = rest.split_at(h);
        self.w_x.copy_from_slice(wx);
        self.w_y.copy_from_slice(wy);
        self.b.copy_from_slice(b);
        self.w_out.copy_from_slice(wo);
        self.b_out = rest[0];
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_size;
        let shapes = [
            ("w_x", self.w_x.len(), h * INPUT_COUNT),
            ("w_y", self.w_y.len(), h * h),
            ("b", self.b.len(), h),
            ("w_out", self.w_out.len(), h),
        ];
        for (what, got, expected) in shapes {
            if got != expected {
                return Err(Error::Shape { what, expected, got });
            }
        }
        if self
            .input_std
            .iter()
            .chain([&self.target_std])
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::config("rnn.input_std", "must be positive"));
        }
        if !self.parameters().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "rnn parameters",
                step: 0,
            });
        }
        Ok(())
    }

    /// z-scores one raw input sample.
    pub fn normalize(&self, raw: [f64; INPUT_COUNT]) -> [f64; INPUT_COUNT] {
        [
            (raw[0] - self.input_mean[0]) / self.input_std[0],
            (raw[1] - self.input_mean[1]) / self.input_std[1],
        ]
    }

    /// Displacement in mm from a network output.
    pub fn denormalize(&self, y: f64) -> f64 {
        self.target_mean + self.target_std * y
    }

    /// One recurrent step on a normalized input; `hidden` is updated in place.
    /// Returns the normalized output.
    pub fn step(&self, z: [f64; INPUT_COUNT], hidden: &mut [f64], scratch: &mut Vec<f64>) -> f64 {
        let h = self.hidden_size;
        scratch.clear();
        for j in 0..h {
            let mut a = self.b[j] + self.w_x[j * 2] * z[0] + self.w_x[j * 2 + 1] * z[1];
            let row = &self.w_y[j * h..(j + 1) * h];
            for (w, hp) in row.iter().zip(hidden.iter()) {
                a += w * hp;
            }
            scratch.push(a.tanh());
        }
        hidden.copy_from_slice(scratch);
        self.b_out + self.w_out.iter().zip(hidden.iter()).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Outputs over a sequence of raw inputs from a zero hidden state.
/// `channels` holds one slice per input channel, all of equal length.
pub fn rnn_forward(model: &RnnModel, channels: &[&[f64]]) -> Result<Vec<f64>> {
    if channels.len() != INPUT_COUNT {
        return Err(Error::Shape {
            what: "rnn input channels",
            expected: INPUT_COUNT,
            got: channels.len(),
        });
    }
    let n = channels[0].len();
    if channels[1].len() != n {
        return Err(Error::Shape {
            what: "rnn input length",
            expected: n,
            got: channels[1].len(),
        });
    }
    let mut hidden = vec![0.0; model.hidden_size];
    let mut scratch = Vec::with_capacity(model.hidden_size);
    let mut out = Vec::with_capacity(n);
    for (t, (&a, &f)) in channels[0].iter().zip(channels[1]).enumerate() {
        let raw = [a, f];
        if !raw.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "rnn input",
                step: t,
            });
        }
        let y = model.step(model.normalize(raw), &mut hidden, &mut scratch);
        out.push(model.denormalize(y));
    }
    Ok(out)
}

/// Mean squared error over a window and its gradient with respect to
/// [`RnnModel::parameters`], by backpropagation through the window starting
/// from hidden state `h0` (treated as a constant).
pub fn bptt_gradients(model: &RnnModel, z: &[[f64; INPUT_COUNT]], target: &[f64], h0: &[f64]) -> (f64, Vec<f64>) {
    let h = model.hidden_size;
    let n = z.len();
    debug_assert_eq!(target.len(), n);
    // forward, keeping every hidden state
    let mut hs = Vec::with_capacity((n + 1) * h);
    hs.extend_from_slice(h0);
    let mut ys = Vec::with_capacity(n);
    let mut cur = h0.to_vec();
    let mut scratch = Vec::with_capacity(h);
    for zt in z {
        ys.push(model.step(*zt, &mut cur, &mut scratch));
        hs.extend_from_slice(&cur);
    }
    let inv_n = 1.0 / n as f64;
    let loss = ys.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum::<f64>() * inv_n;

    let mut g_wx = vec![0.0; h * INPUT_COUNT];
    let mut g_wy = vec![0.0; h * h];
    let mut g_b = vec![0.0; h];
    let mut g_wo = vec![0.0; h];
    let mut g_bo = 0.0;
    let mut dh_next = vec![0.0; h];
    let mut da = vec![0.0; h];
    for t in (0..n).rev() {
        let ht = &hs[(t + 1) * h..(t + 2) * h];
        let hp = &hs[t * h..(t + 1) * h];
        let dy = 2.0 * (ys[t] - target[t]) * inv_n;
        g_bo += dy;
        for j in 0..h {
            g_wo[j] += dy * ht[j];
            let dh = dy * model.w_out[j] + dh_next[j];
            da[j] = dh * (1.0 - ht[j] * ht[j]);
        }
        for j in 0..h {
            g_b[j] += da[j];
            g_wx[j * 2] += da[j] * z[t][0];
            g_wx[j * 2 + 1] += da[j] * z[t][1];
            let row = &mut g_wy[j * h..(j + 1) * h];
            for (g, v) in row.iter_mut().zip(hp) {
                *g += da[j] * v;
            }
        }
        for (k, d) in dh_next.iter_mut().enumerate() {
            *d = (0..h).map(|j| model.w_y[j * h + k] * da[j]).sum();
        }
    }
    let mut grad = g_wx;
    grad.extend(g_wy);
    grad.extend(g_b);
    grad.extend(g_wo);
    grad.push(g_bo);
    (loss, grad)
}

/// Scales `grad` so its Euclidean norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_gradient(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub optimizer: Optimizer,
    /// Truncated-BPTT window, ticks.
    pub window: usize,
    pub clip_norm: f64,
    /// Trailing fraction of the sequence held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_size: 10,
            epochs: 40,
            learning_rate: 0.005,
            lr_decay: 0.9,
            optimizer: Optimizer::Adam,
            window: 64,
            clip_norm: 10.0,
            validation_fraction: 0.2,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::config("rnn.hidden_size", "must be >= 1"));
        }
        if self.window == 0 {
            return Err(Error::config("rnn.window", "must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("rnn.learning_rate", "must be >= 0"));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("rnn.lr_decay", "must be in (0, 1]"));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::config("rnn.clip_norm", "must be > 0"));
        }
        if !(0.0..0.9).contains(&self.validation_fraction) {
            return Err(Error::config("rnn.validation_fraction", "must be in [0, 0.9)"));
        }
        Ok(())
    }
}

/// Aligned training sequence: raw inputs and target displacement.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnDataset {
    pub ground_accel: Vec<f64>,
    pub force_feedback: Vec<f64>,
    pub target: Vec<f64>,
}

impl RnnDataset {
    /// Pairs the reference response with its own force delayed by
    /// `delay_steps` ticks (zero before the start).
    pub fn from_reference(ground_accel: &[f64], displacement: &[f64], force: &[f64], delay_steps: usize) -> Self {
        let n = ground_accel.len().min(displacement.len()).min(force.len());
        let force_feedback = (0..n)
            .map(|i| if i >= delay_steps { force[i - delay_steps] } else { 0.0 })
            .collect();
        RnnDataset {
            ground_accel: ground_accel[..n].to_vec(),
            force_feedback,
            target: displacement[..n].to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnTraining {
    pub model: RnnModel,
    pub losses: Vec<EpochLoss>,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

fn sequence_mse(model: &RnnModel, z: &[[f64; INPUT_COUNT]], target: &[f64], h0: &mut [f64]) -> f64 {
    let mut scratch = Vec::with_capacity(model.hidden_size);
    let mut se = 0.0;
    for (zt, y) in z.iter().zip(target) {
        let p = model.step(*zt, h0, &mut scratch);
        se += (p - y) * (p - y);
    }
    if target.is_empty() {
        0.0
    } else {
        se / target.len() as f64
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Truncated-BPTT training. Each epoch visits the training windows in a
/// seeded random order; every window starts from the hidden state reached
/// by a forward pass of the current model at the start of the epoch.
/// The reported losses are full-sequence mean squared errors after each
/// epoch.
pub fn train_rnn(dataset: &RnnDataset, config: &TrainConfig) -> Result<RnnTraining> {
    config.validate()?;
    let n = dataset.len();
    if dataset.ground_accel.len() != n || dataset.force_feedback.len() != n {
        return Err(Error::Shape {
            what: "rnn dataset channels",
            expected: n,
            got: dataset.ground_accel.len().min(dataset.force_feedback.len()),
        });
    }
    let n_val = (n as f64 * config.validation_fraction) as usize;
    let n_train = n - n_val;
    if n_train < config.window {
        return Err(Error::DatasetTooShort {
            len: n_train,
            warmup: config.window,
        });
    }
    let mut model = RnnModel::init(config.hidden_size, config.seed)?;
    let (ma, sa) = mean_std(&dataset.ground_accel[..n_train]);
    let (mf, sf) = mean_std(&dataset.force_feedback[..n_train]);
    model.input_mean = [ma, mf];
    model.input_std = [sa, sf];
    let (mt, st) = mean_std(&dataset.target[..n_train]);
    model.target_mean = mt;
    model.target_std = st;
    let z: Vec<[f64; INPUT_COUNT]> = dataset
        .ground_accel
        .iter()
        .zip(&dataset.force_feedback)
        .map(|(&a, &f)| model.normalize([a, f]))
        .collect();
    let target: Vec<f64> = dataset.target.iter().map(|y| (y - mt) / st).collect();
    let h = config.hidden_size;
    let starts: Vec<usize> = (0..n_train / config.window).map(|k| k * config.window).collect();
    let mut order: Vec<usize> = (0..starts.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9));
    let mut params = model.parameters();
    let mut adam = Adam::new(params.len());
    let mut losses = Vec::with_capacity(config.epochs);

    let mut lr = config.learning_rate;
    for epoch in 0..config.epochs {
        // hidden state at each window start under the current weights
        let mut h0s = Vec::with_capacity(starts.len() * h);
        let mut hidden = vec![0.0; h];
        let mut scratch = Vec::with_capacity(h);
        for (k, &s) in starts.iter().enumerate() {
            h0s.extend_from_slice(&hidden);
            let end = if k + 1 < starts.len() { starts[k + 1] } else { s };
            for zt in &z[s..end] {
                model.step(*zt, &mut hidden, &mut scratch);
            }
        }
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for &k in &order {
            let s = starts[k];
            let e = s + config.window;
            let (_, mut grad) = bptt_gradients(&model, &z[s..e], &target[s..e], &h0s[k * h..(k + 1) * h]);
            clip_gradient(&mut grad, config.clip_norm);
            match config.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                Optimizer::Adam => adam.apply(&mut params, &grad, lr),
            }
            model.set_parameters(&params)?;
        }
        lr *= config.lr_decay;
        let mut hidden = vec![0.0; h];
        let train = sequence_mse(&model, &z[..n_train], &target[..n_train], &mut hidden);
        let validation = sequence_mse(&model, &z[n_train..], &target[n_train..], &mut hidden);
        if !(train.is_finite() && validation.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        losses.push(EpochLoss {
            epoch,
            train,
            validation,
        });
    }
    Ok(RnnTraining { model, losses })
}

/// Replays the model over the whole dataset and scores it against the
/// target.
pub fn replay_nrmse(model: &RnnModel, dataset: &RnnDataset) -> Result<f64> {
    let y = rnn_forward(model, &[&dataset.ground_accel, &dataset.force_feedback])?;
    evaluation::nrmse(&dataset.target, &y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub hidden_size: usize,
    pub nrmse_percent: f64,
    pub final_train_loss: f64,
    pub final_validation_loss: f64,
    pub parameter_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub best_hidden_size: Option<usize>,
}

/// Trains one model per hidden size (same seed) and scores each replay.
pub fn evaluate_hidden_size_sweep(
    hidden_sizes: &[usize],
    dataset: &RnnDataset,
    config: &TrainConfig,
    policy: ExecPolicy,
) -> Result<SweepReport> {
    let results = par::map(hidden_sizes, policy, |&hidden_size| -> Result<SweepEntry> {
        let cfg = TrainConfig {
            hidden_size,
            ..config.clone()
        };
        let trained = train_rnn(dataset, &cfg)?;
        let last = trained.losses.last().copied().unwrap_or(EpochLoss {
            epoch: 0,
            train: f64::NAN,
            validation: f64::NAN,
        });
        Ok(SweepEntry {
            hidden_size,
            nrmse_percent: replay_nrmse(&trained.model, dataset)?,
            final_train_loss: last.train,
            final_validation_loss: last.validation,
            parameter_count: trained.model.parameter_count(),
        })
    });
    let entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    let best_hidden_size = entries
        .iter()
        .min_by(|a, b| a.nrmse_percent.total_cmp(&b.nrmse_percent))
        .map(|e| e.hidden_size);
    Ok(SweepReport {
        entries,
        best_hidden_size,
    })
}

/// Outcome of comparing analytic and finite-difference gradients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub parameters: usize,
    pub passed: bool,
}

/// Central-difference check of [`bptt_gradients`] on a random model and
/// sequence drawn from `seed`.
pub fn gradient_check(
    hidden_size: usize,
    steps: usize,
    seed: u64,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradientCheck> {
    let mut model = RnnModel::init(hidden_size, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_a5a5);
    for b in model.b.iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    model.b_out = rng.random_range(-0.5..0.5);
    let z: Vec<[f64; INPUT_COUNT]> = (0..steps)
        .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
        .collect();
    let target: Vec<f64> = (0..steps).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h0: Vec<f64> = (0..hidden_size).map(|_| rng.random_range(-0.5..0.5)).collect();
    let (_, analytic) = bptt_gradients(&model, &z, &target, &h0);
    let base = model.parameters();
    let mut probe = model.clone();
    let mut max_rel = 0.0f64;
    let mut passed = true;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + epsilon;
        probe.set_parameters(&p)?;
        let (lp, _) = bptt_gradients(&probe, &z, &target, &h0);
        p[i] = base[i] - epsilon;
        probe.set_parameters(&p)?;
        let (lm, _) = bptt_gradients(&probe, &z, &target, &h0);
        let numeric = (lp - lm) / (2.0 * epsilon);
        let diff = (numeric - analytic[i]).abs();
        let scale = numeric.abs().max(analytic[i].abs());
        // absolute floor for parameters whose gradient is ~0
        if diff > tolerance * scale && diff > 1e-9 {
            passed = false;
        }
        if scale > 0.0 {
            max_rel = max_rel.max(diff / scale);
        }
    }
    Ok(GradientCheck {
        max_relative_error: max_rel,
        parameters: base.len(),
        passed,
    })
}

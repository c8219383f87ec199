//! Linear-regression surrogate of the analytical substructure.
//!
//! The next command displacement is a weighted sum of five features:
//! ground acceleration, displacement and force feedback, and the two
//! previous predictions. The feedback delay is absorbed into the weights,
//! so the surrogate runs in the loop without a compensator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::history::RunHistory;
use crate::lstsq;

pub const FEATURE_COUNT: usize = 5;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "ground_accel",
    "x_feedback",
    "force_feedback",
    "x_prediction_prev",
    "x_prediction_prev2",
];

pub const FEATURE_UNITS: [&str; FEATURE_COUNT] = ["mm/s2", "mm", "kN", "mm", "mm"];

/// Singular values below this fraction of the largest (after column
/// equilibration) count as rank loss.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Feedback synthesized by delaying the reference response.
    SyntheticDelay,
    /// Feedback recorded from the actuator during a hybrid run.
    RecordedFeedback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrDataset {
    pub features: Vec<[f64; FEATURE_COUNT]>,
    pub targets: Vec<f64>,
    pub provenance: Provenance,
    pub delay_steps: usize,
    /// Leading ticks without a complete feature row.
    pub warmup: usize,
}

impl LrDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// SHA-256 over the little-endian bytes of every row, hex encoded.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (row, y) in self.features.iter().zip(&self.targets) {
            for v in row {
                hasher.update(v.to_le_bytes());
            }
            hasher.update(y.to_le_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn warmup_for(delay_steps: usize) -> usize {
    delay_steps.max(2)
}

/// Training rows from a reference run with feedback synthesized by
/// delaying the reference displacement and force by `delay_steps` ticks.
///
/// Row `i`: `(üg(i), x(i−d), F(i−d), x(i−1), x(i−2)) → x(i)`.
pub fn build_lr_dataset(run: &RunHistory, delay_steps: usize) -> Result<LrDataset> {
    let warmup = warmup_for(delay_steps);
    let n = run.len();
    if n <= warmup {
        return Err(Error::DatasetTooShort { len: n, warmup });
    }
    let r = &run.records;
    let mut features = Vec::with_capacity(n - warmup);
    let mut targets = Vec::with_capacity(n - warmup);
    for i in warmup..n {
        let fb = &r[i - delay_steps];
        features.push([
            r[i].gm_accel,
            fb.command_x,
            fb.force,
            r[i - 1].command_x,
            r[i - 2].command_x,
        ]);
        targets.push(r[i].command_x);
    }
    finish(features, targets, Provenance::SyntheticDelay, delay_steps, warmup)
}

/// Training rows pairing the reference response with feedback recorded from
/// a hybrid run. The driver sees the plant output of the previous tick, so
/// row `i` uses `recorded[i−1]` for the feedback features.
pub fn build_recorded_lr_dataset(
    reference: &RunHistory,
    recorded: &RunHistory,
    delay_steps: usize,
) -> Result<LrDataset> {
    let warmup = warmup_for(delay_steps);
    let n = reference.len().min(recorded.len());
    if n <= warmup {
        return Err(Error::DatasetTooShort { len: n, warmup });
    }
    let r = &reference.records;
    let fb = &recorded.records;
    let mut features = Vec::with_capacity(n - warmup);
    let mut targets = Vec::with_capacity(n - warmup);
    for i in warmup..n {
        features.push([
            r[i].gm_accel,
            fb[i - 1].measured_x,
            fb[i - 1].force,
            r[i - 1].command_x,
            r[i - 2].command_x,
        ]);
        targets.push(r[i].command_x);
    }
    finish(features, targets, Provenance::RecordedFeedback, delay_steps, warmup)
}

fn finish(
    features: Vec<[f64; FEATURE_COUNT]>,
    targets: Vec<f64>,
    provenance: Provenance,
    delay_steps: usize,
    warmup: usize,
) -> Result<LrDataset> {
    for (i, (row, y)) in features.iter().zip(&targets).enumerate() {
        if !(row.iter().all(|v| v.is_finite()) && y.is_finite()) {
            return Err(Error::NonFinite {
                what: "dataset row",
                step: i + warmup,
            });
        }
    }
    Ok(LrDataset {
        features,
        targets,
        provenance,
        delay_steps,
        warmup,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub weights: [f64; FEATURE_COUNT],
    pub bias: Option<f64>,
    pub feature_names: Vec<String>,
    pub feature_units: Vec<String>,
    pub provenance: Provenance,
    pub delay_steps: usize,
    /// Checksum of the training dataset.
    pub training_checksum: String,
}

impl LrModel {
    pub fn from_weights(weights: [f64; FEATURE_COUNT], bias: Option<f64>) -> Self {
        LrModel {
            weights,
            bias,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            feature_units: FEATURE_UNITS.iter().map(|s| s.to_string()).collect(),
            provenance: Provenance::SyntheticDelay,
            delay_steps: 0,
            training_checksum: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weights.iter().all(|w| w.is_finite()) && self.bias.is_none_or(f64::is_finite)) {
            return Err(Error::NonFinite {
                what: "regression weights",
                step: 0,
            });
        }
        Ok(())
    }
}

/// What to do when the design matrix loses rank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankPolicy {
    /// Fail, listing the near-collinear features.
    #[default]
    Strict,
    /// Return the minimum-norm solution and report the collinear features.
    MinimumNorm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrTrainOptions {
    pub include_bias: bool,
    pub rank_policy: RankPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrTrainingReport {
    pub rows: usize,
    pub rank: usize,
    pub condition_number: f64,
    pub collinear_features: Vec<String>,
    pub residual_rms: f64,
}

fn column_name(j: usize) -> String {
    FEATURE_NAMES.get(j).copied().unwrap_or("bias").to_string()
}

/// Ordinary least squares through an orthogonal factorization.
pub fn train_lr(dataset: &LrDataset, options: LrTrainOptions) -> Result<(LrModel, LrTrainingReport)> {
    let cols = FEATURE_COUNT + usize::from(options.include_bias);
    let rows = dataset.len();
    if rows < cols {
        return Err(Error::DatasetTooShort {
            len: rows,
            warmup: cols,
        });
    }
    let design = DMatrix::from_fn(
        rows,
        cols,
        |i, j| {
            if j < FEATURE_COUNT {
                dataset.features[i][j]
            } else {
                1.0
            }
        },
    );
    let target = DVector::from_column_slice(&dataset.targets);
    let fit = lstsq::solve(&design, &target, RANK_TOLERANCE);
    let collinear: Vec<String> = fit.collinear_columns.iter().map(|&j| column_name(j)).collect();
    if !fit.is_full_rank() && options.rank_policy == RankPolicy::Strict {
        return Err(Error::RankDeficient {
            rank: fit.rank,
            cols,
            columns: collinear,
        });
    }
    let mut weights = [0.0; FEATURE_COUNT];
    weights.copy_from_slice(&fit.solution[..FEATURE_COUNT]);
    let bias = options.include_bias.then(|| fit.solution[FEATURE_COUNT]);
    let model = LrModel {
        weights,
        bias,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        feature_units: FEATURE_UNITS.iter().map(|s| s.to_string()).collect(),
        provenance: dataset.provenance,
        delay_steps: dataset.delay_steps,
        training_checksum: dataset.checksum(),
    };
    model.validate()?;
    let residual_rms = (dataset
        .features
        .iter()
        .zip(&dataset.targets)
        .map(|(f, y)| {
            let e = dot(&model, f) - y;
            e * e
        })
        .sum::<f64>()
        / rows as f64)
        .sqrt();
    let report = LrTrainingReport {
        rows,
        rank: fit.rank,
        condition_number: fit.condition_number,
        collinear_features: collinear,
        residual_rms,
    };
    Ok((model, report))
}

#[inline]
fn dot(model: &LrModel, features: &[f64; FEATURE_COUNT]) -> f64 {
    let mut y = model.bias.unwrap_or(0.0);
    for (w, f) in model.weights.iter().zip(features) {
        y += w * f;
    }
    y
}

/// Next command displacement, mm.
pub fn predict_lr(model: &LrModel, features: &[f64]) -> Result<f64> {
    if features.len() != FEATURE_COUNT {
        return Err(Error::Shape {
            what: "features",
            expected: FEATURE_COUNT,
            got: features.len(),
        });
    }
    if !features.iter().all(|f| f.is_finite()) {
        return Err(Error::NonFinite {
            what: "features",
            step: 0,
        });
    }
    let mut row = [0.0; FEATURE_COUNT];
    row.copy_from_slice(features);
    Ok(dot(model, &row))
}

/// One-step predictions on the dataset's own (teacher-forced) rows.
pub fn predict_dataset(model: &LrModel, dataset: &LrDataset) -> Vec<f64> {
    dataset.features.iter().map(|f| dot(model, f)).collect()
}

/// Where the surrogate's feedback features come from in closed loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackPath {
    /// The surrogate's own prediction delayed by this many ticks, with force
    /// `k_e · x`; the actuator (if any) is driven but not listened to.
    SyntheticDelay(usize),
    /// Measured displacement and force returned by the plant.
    Plant,
}

/// Closed-loop state of the regression surrogate.
#[derive(Clone, Debug)]
pub struct LrLoop {
    model: LrModel,
    feedback: FeedbackPath,
    brace_stiffness: f64,
    predictions: Vec<f64>,
}

impl LrLoop {
    pub fn new(model: LrModel, feedback: FeedbackPath, brace_stiffness: f64) -> Self {
        LrLoop {
            model,
            feedback,
            brace_stiffness,
            predictions: Vec::new(),
        }
    }

    /// Prediction for the next tick. `plant_x`/`plant_force` are the plant
    /// outputs of the previous tick (ignored for synthetic feedback).
    pub fn next(&mut self, gm_accel: f64, plant_x: f64, plant_force: f64) -> f64 {
        let i = self.predictions.len();
        let past = |k: usize| if i >= k { self.predictions[i - k] } else { 0.0 };
        let (fb_x, fb_f) = match self.feedback {
            FeedbackPath::SyntheticDelay(d) => {
                let x = if d == 0 {
                    // zero delay would need the value being predicted; use the latest one
                    past(1)
                } else {
                    past(d)
                };
                (x, self.brace_stiffness * x)
            }
            FeedbackPath::Plant => (plant_x, plant_force),
        };
        let y = dot(&self.model, &[gm_accel, fb_x, fb_f, past(1), past(2)]);
        self.predictions.push(y);
        y
    }
}

/// Autoregressive replay from rest with synthetic delayed feedback.
pub fn replay_closed_loop(model: &LrModel, ground_accel: &[f64], delay_steps: usize, brace_stiffness: f64) -> Vec<f64> {
    let mut lp = LrLoop::new(
        model.clone(),
        FeedbackPath::SyntheticDelay(delay_steps),
        brace_stiffness,
    );
    ground_accel.iter().map(|&ag| lp.next(ag, 0.0, 0.0)).collect()
}

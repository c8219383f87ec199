//! Experiment configuration, loaded from TOML.
//!
//! Every section is optional; missing values fall back to the reference
//! frame, the built-in El Centro record and a 10 s window.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compensation::AtsConfig;
use crate::dynamics::{
    build_sdof, reference_brace_lateral_stiffness, BraceStiffness, SdofModel, REFERENCE_DAMPING_RATIO,
    REFERENCE_FRAME_STIFFNESS, REFERENCE_MASS,
};
use crate::error::{Error, Result};
use crate::integrator::IntegratorConfig;
use crate::par::ExecPolicy;
use crate::plant::{ActuatorConfig, DEFAULT_DELAY_STEPS};
use crate::signal::{el_centro, read_record, resample, GroundMotion, ParseOptions, RecordFormat, Units};
use crate::surrogate::lr::{LrTrainOptions, RankPolicy};
use crate::surrogate::rnn::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureConfig {
    pub mass: f64,
    pub frame_stiffness: f64,
    /// Brace lateral stiffness, kN/mm. Derived from the reference period
    /// when neither this nor the axial pair is given.
    pub brace_lateral_stiffness: Option<f64>,
    pub brace_axial_stiffness: Option<f64>,
    /// Brace inclination from horizontal, degrees.
    pub brace_angle_deg: Option<f64>,
    pub damping_ratio: f64,
}

impl Default for StructureConfig {
    fn default() -> Self {
        StructureConfig {
            mass: REFERENCE_MASS,
            frame_stiffness: REFERENCE_FRAME_STIFFNESS,
            brace_lateral_stiffness: None,
            brace_axial_stiffness: None,
            brace_angle_deg: None,
            damping_ratio: REFERENCE_DAMPING_RATIO,
        }
    }
}

impl StructureConfig {
    pub fn build(&self) -> Result<SdofModel> {
        let brace = match (
            self.brace_lateral_stiffness,
            self.brace_axial_stiffness,
            self.brace_angle_deg,
        ) {
            (Some(k), None, None) => BraceStiffness::Lateral(k),
            (None, Some(k), Some(deg)) => BraceStiffness::Axial {
                stiffness: k,
                angle: deg.to_radians(),
            },
            (None, None, None) => BraceStiffness::Lateral(reference_brace_lateral_stiffness()),
            _ => {
                return Err(Error::config(
                    "structure",
                    "give either brace_lateral_stiffness or both brace_axial_stiffness and brace_angle_deg",
                ))
            }
        };
        build_sdof(self.mass, self.frame_stiffness, brace, self.damping_ratio)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordConfig {
    /// AT2 or CSV file; the built-in El Centro NS record when absent.
    pub path: Option<PathBuf>,
    pub units: Option<Units>,
    /// Sample interval for single-column CSV files, s.
    pub dt: Option<f64>,
    pub scale: f64,
    /// Simulated window, s.
    pub duration: f64,
}

impl Default for RecordConfig {
    fn default() -> Self {
        RecordConfig {
            path: None,
            units: None,
            dt: None,
            scale: 1.0,
            duration: 10.0,
        }
    }
}

impl RecordConfig {
    /// Reads, scales, resamples to `dt` and truncates the record.
    pub fn load(&self, dt: f64) -> Result<GroundMotion> {
        let raw = match &self.path {
            None => el_centro(),
            Some(p) => {
                let name = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "record".into());
                read_record(
                    p,
                    &ParseOptions {
                        format: RecordFormat::from_path(p),
                        units: self.units,
                        dt: self.dt,
                        name,
                    },
                )?
            }
        };
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::config("record.scale", "must be > 0"));
        }
        let gm = if self.scale == 1.0 { raw } else { raw.scaled(self.scale) };
        resample(&gm, dt)?.truncated(self.duration)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrConfig {
    pub delay_steps: usize,
    pub include_bias: bool,
    pub rank_policy: RankPolicy,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig {
            delay_steps: DEFAULT_DELAY_STEPS,
            include_bias: false,
            // force feedback is k_e times displacement feedback for a linear specimen
            rank_policy: RankPolicy::MinimumNorm,
        }
    }
}

impl LrConfig {
    pub fn options(&self) -> LrTrainOptions {
        LrTrainOptions {
            include_bias: self.include_bias,
            rank_policy: self.rank_policy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnConfig {
    pub delay_steps: usize,
    pub hidden_sizes: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for RnnConfig {
    fn default() -> Self {
        RnnConfig {
            delay_steps: DEFAULT_DELAY_STEPS,
            hidden_sizes: vec![5, 10, 20],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub real_time: bool,
    pub exec: ExecPolicy,
    /// Delays swept by the monotonicity check, ticks.
    pub delay_sweep: Vec<usize>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            real_time: false,
            exec: ExecPolicy::Parallel,
            delay_sweep: vec![0, 7, 14, 28],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub structure: StructureConfig,
    pub record: RecordConfig,
    pub integrator: IntegratorConfig,
    pub actuator: ActuatorConfig,
    pub compensator: AtsConfig,
    pub lr: LrConfig,
    pub rnn: RnnConfig,
    pub run: RunSettings,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|source| Error::Toml {
            path: origin.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.structure.build()?;
        self.actuator.validate()?;
        self.compensator.validate()?;
        self.rnn.train.validate()?;
        let dt = self.integrator.dt;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::config("integrator.dt", "must be > 0"));
        }
        for (field, other) in [
            ("actuator.dt", self.actuator.dt),
            ("compensator.dt", self.compensator.dt),
        ] {
            if (other - dt).abs() > 1e-12 * dt {
                return Err(Error::config(field, format!("must equal integrator.dt = {dt}")));
            }
        }
        if !(self.record.duration.is_finite() && self.record.duration >= 0.0) {
            return Err(Error::config("record.duration", "must be >= 0"));
        }
        if self.rnn.hidden_sizes.contains(&0) {
            return Err(Error::config("rnn.hidden_sizes", "sizes must be >= 1"));
        }
        Ok(())
    }

    /// Stable JSON echo for reports.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is serializable")
    }
}

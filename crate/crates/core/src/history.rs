//! Per-tick logs of a simulation run.

use serde::{Deserialize, Serialize};

/// One tick of the hybrid loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tick: usize,
    /// Seconds.
    pub t: f64,
    /// Ground acceleration, mm/s².
    pub gm_accel: f64,
    /// Displacement ordered by the driver, mm.
    pub command_x: f64,
    /// Command after delay compensation (equals `command_x` when none), mm.
    pub compensated_x: f64,
    /// Actuator displacement returned by the plant, mm.
    pub measured_x: f64,
    /// Specimen restoring force returned to the driver, kN.
    pub force: f64,
}

/// Wall-clock statistics of a paced run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PacingStats {
    pub rate_hz: f64,
    pub ticks: usize,
    pub deadline_misses: usize,
    pub max_latency_us: f64,
    pub mean_latency_us: f64,
    /// More than 1% of ticks missed their deadline.
    pub sustained_overrun: bool,
}

/// ATS coefficients in force from `tick` onwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSample {
    pub tick: usize,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    /// The window regression was singular and the previous values were kept.
    pub held: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub id: String,
    pub dt: f64,
    pub records: Vec<StepRecord>,
    pub pacing: Option<PacingStats>,
    pub compensator_trace: Vec<CoefficientSample>,
}

impl RunHistory {
    pub fn new(id: impl Into<String>, dt: f64, records: Vec<StepRecord>) -> Self {
        RunHistory {
            id: id.into(),
            dt,
            records,
            pacing: None,
            compensator_trace: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Command displacement column, the response compared against references.
    pub fn displacement(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.command_x).collect()
    }

    pub fn measured(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.measured_x).collect()
    }

    pub fn force(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.force).collect()
    }

    pub fn ground_accel(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.gm_accel).collect()
    }
}

//! Single-degree-of-freedom model of the braced frame and a closed-form
//! response oracle.
//!
//! Units throughout the crate are mm, kN and s, so mass is in kN·s²/mm and
//! accelerations are in mm/s².

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{RunHistory, StepRecord};
use crate::signal::GroundMotion;

/// Natural period the reference frame is tuned to, in seconds.
pub const REFERENCE_PERIOD: f64 = 0.294;
pub const REFERENCE_MASS: f64 = 1.75;
pub const REFERENCE_FRAME_STIFFNESS: f64 = 176.75;
pub const REFERENCE_BRACE_AXIAL_STIFFNESS: f64 = 1224.1;
pub const REFERENCE_DAMPING_RATIO: f64 = 0.02;

/// Lateral brace stiffness consistent with the reference period:
/// `(2π / T)² · m − k_a`.
pub fn reference_brace_lateral_stiffness() -> f64 {
    let omega = 2.0 * PI / REFERENCE_PERIOD;
    omega * omega * REFERENCE_MASS - REFERENCE_FRAME_STIFFNESS
}

/// How the brace (experimental substructure) stiffness is supplied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BraceStiffness {
    /// Axial stiffness along the brace plus its inclination from horizontal
    /// in radians; the lateral stiffness is `k_axial · cos²(angle)`.
    Axial { stiffness: f64, angle: f64 },
    /// Lateral stiffness in global coordinates, given directly.
    Lateral(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdofModel {
    /// Story mass, kN·s²/mm.
    pub mass: f64,
    /// Frame (analytical substructure) lateral stiffness, kN/mm.
    pub frame_stiffness: f64,
    /// Brace stiffness along its own axis, when known.
    pub brace_axial_stiffness: Option<f64>,
    /// Brace inclination from horizontal, radians, when known.
    pub brace_angle: Option<f64>,
    /// Brace (experimental substructure) lateral stiffness, kN/mm.
    pub brace_lateral_stiffness: f64,
    pub damping_ratio: f64,
    /// Viscous damping coefficient, kN·s/mm.
    pub damping: f64,
    /// Natural circular frequency of the combined system, rad/s.
    pub natural_frequency: f64,
}

/// Builds the structural model and derives damping and frequency.
pub fn build_sdof(mass: f64, frame_stiffness: f64, brace: BraceStiffness, damping_ratio: f64) -> Result<SdofModel> {
    positive("mass", mass)?;
    positive("frame_stiffness", frame_stiffness)?;
    if !(damping_ratio.is_finite() && (0.0..1.0).contains(&damping_ratio)) {
        return Err(Error::InvalidModel {
            field: "damping_ratio",
            reason: format!("must lie in [0, 1), got {damping_ratio}"),
        });
    }
    let (axial, angle, lateral) = match brace {
        BraceStiffness::Axial { stiffness, angle } => {
            non_negative("brace_axial_stiffness", stiffness)?;
            if !angle.is_finite() {
                return Err(Error::InvalidModel {
                    field: "brace_angle",
                    reason: format!("must be finite, got {angle}"),
                });
            }
            let c = angle.cos();
            (Some(stiffness), Some(angle), stiffness * c * c)
        }
        BraceStiffness::Lateral(k) => {
            non_negative("brace_lateral_stiffness", k)?;
            (None, None, k)
        }
    };
    let natural_frequency = ((frame_stiffness + lateral) / mass).sqrt();
    let mut model = SdofModel {
        mass,
        frame_stiffness,
        brace_axial_stiffness: axial,
        brace_angle: angle,
        brace_lateral_stiffness: lateral,
        damping_ratio,
        damping: 0.0,
        natural_frequency,
    };
    model.damping = damping_coefficient(&model, None);
    Ok(model)
}

/// Mass-proportional Rayleigh damping anchored at `anchor_frequency`
/// (defaults to the natural frequency): `c = 2 ζ ω m`.
pub fn damping_coefficient(model: &SdofModel, anchor_frequency: Option<f64>) -> f64 {
    let omega = anchor_frequency.unwrap_or(model.natural_frequency);
    2.0 * model.damping_ratio * omega * model.mass
}

fn positive(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidModel {
            field,
            reason: format!("must be positive, got {value}"),
        })
    }
}

fn non_negative(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidModel {
            field,
            reason: format!("must be non-negative, got {value}"),
        })
    }
}

impl SdofModel {
    /// The one-bay braced frame with the brace lateral stiffness tuned so the
    /// natural period is [`REFERENCE_PERIOD`].
    pub fn reference_frame() -> Self {
        build_sdof(
            REFERENCE_MASS,
            REFERENCE_FRAME_STIFFNESS,
            BraceStiffness::Lateral(reference_brace_lateral_stiffness()),
            REFERENCE_DAMPING_RATIO,
        )
        .expect("reference parameters are valid")
    }

    pub fn total_stiffness(&self) -> f64 {
        self.frame_stiffness + self.brace_lateral_stiffness
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.natural_frequency
    }

    /// Brace inclination that maps the stored axial stiffness onto the
    /// lateral one, if an axial value is known.
    pub fn implied_brace_angle(&self) -> Option<f64> {
        let axial = self.brace_axial_stiffness?;
        if axial <= 0.0 || self.brace_lateral_stiffness > axial {
            return None;
        }
        Some((self.brace_lateral_stiffness / axial).sqrt().acos())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DynamicState {
    pub step_index: usize,
    pub t: f64,
    /// Displacement, mm.
    pub x: f64,
    /// Velocity, mm/s.
    pub v: f64,
    /// Acceleration, mm/s².
    pub a: f64,
}

/// Closed-form response of the linear model under piecewise-linear ground
/// acceleration (piecewise-exact recurrence), from the given initial
/// displacement and velocity.
pub fn exact_linear_states(
    model: &SdofModel,
    ground_motion: &GroundMotion,
    x0: f64,
    v0: f64,
) -> Result<Vec<DynamicState>> {
    let zeta = model.damping_ratio;
    if zeta >= 1.0 {
        return Err(Error::InvalidModel {
            field: "damping_ratio",
            reason: "piecewise-exact response needs an underdamped model".into(),
        });
    }
    let dt = ground_motion.dt;
    let m = model.mass;
    let k = model.total_stiffness();
    let c = model.damping;
    let omega = model.natural_frequency;
    let root = (1.0 - zeta * zeta).sqrt();
    let omega_d = omega * root;

    let e = (-zeta * omega * dt).exp();
    let s = (omega_d * dt).sin();
    let co = (omega_d * dt).cos();
    let zr = zeta / root;
    let two_z_wdt = 2.0 * zeta / (omega * dt);

    let a = e * (zr * s + co);
    let b = e * s / omega_d;
    let cc = (two_z_wdt + e * (((1.0 - 2.0 * zeta * zeta) / (omega_d * dt) - zr) * s - (1.0 + two_z_wdt) * co)) / k;
    let d = (1.0 - two_z_wdt + e * ((2.0 * zeta * zeta - 1.0) / (omega_d * dt) * s + two_z_wdt * co)) / k;
    let a_p = -e * (omega / root) * s;
    let b_p = e * (co - zr * s);
    let c_p = (-1.0 / dt + e * ((omega / root + zeta / (dt * root)) * s + co / dt)) / k;
    let d_p = (1.0 - e * (zr * s + co)) / (k * dt);

    let load: Vec<f64> = ground_motion.accel.iter().map(|ag| -m * ag).collect();
    let mut states = Vec::with_capacity(load.len());
    let (mut x, mut v) = (x0, v0);
    for (i, p) in load.iter().enumerate() {
        if i > 0 {
            let p_prev = load[i - 1];
            let x_next = a * x + b * v + cc * p_prev + d * p;
            let v_next = a_p * x + b_p * v + c_p * p_prev + d_p * p;
            x = x_next;
            v = v_next;
        }
        states.push(DynamicState {
            step_index: i,
            t: i as f64 * dt,
            x,
            v,
            a: (p - c * v - k * x) / m,
        });
    }
    Ok(states)
}

/// Oracle response from rest, packaged as a run history whose command,
/// measured and force columns describe a perfect, delay-free specimen.
pub fn exact_linear_response(model: &SdofModel, ground_motion: &GroundMotion) -> Result<RunHistory> {
    let states = exact_linear_states(model, ground_motion, 0.0, 0.0)?;
    let ke = model.brace_lateral_stiffness;
    let records = states
        .iter()
        .zip(&ground_motion.accel)
        .map(|(s, &ag)| StepRecord {
            tick: s.step_index,
            t: s.t,
            gm_accel: ag,
            command_x: s.x,
            compensated_x: s.x,
            measured_x: s.x,
            force: ke * s.x,
        })
        .collect();
    Ok(RunHistory::new("exact", ground_motion.dt, records))
}

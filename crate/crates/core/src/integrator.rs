//! Explicit direct integration of the substructured equation of motion
//!
//! `m ẍ + c ẋ + k_a x + r(x) = −m üg`
//!
//! where `r` is the restoring force of the brace, either computed as
//! `k_e · x` or fed back from the (virtual) specimen.
//!
//! Both schemes share the explicit displacement update
//! `x₊ = x + β₁ dt v + β₂ dt² a` and the trapezoidal velocity update
//! `v₊ = v + dt/2 (a + a₊)`. Chang's method picks β₁, β₂ from the system
//! properties (unconditionally stable for linear systems); the central
//! difference method is the special case β₁ = 1, β₂ = ½.

use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicState, SdofModel};
use crate::error::{Error, Result};
use crate::history::{RunHistory, StepRecord};
use crate::signal::{GroundMotion, CONTROLLER_DT};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    ChangExplicit,
    CentralDifference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: CONTROLLER_DT,
            scheme: Scheme::ChangExplicit,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangParameters {
    pub beta1: f64,
    pub beta2: f64,
}

/// Chang's explicit parameters from mass, damping, total initial stiffness
/// and the step:
///
/// `β₁ = (1 + c dt/2m) / D`, `β₂ = ½ / D`, `D = 1 + c dt/2m + k dt²/4m`.
pub fn chang_parameters(model: &SdofModel, dt: f64) -> Result<ChangParameters> {
    if !(model.mass.is_finite() && model.mass > 0.0) {
        return Err(Error::InvalidModel {
            field: "mass",
            reason: format!("must be positive, got {}", model.mass),
        });
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::config("dt", format!("must be positive, got {dt}")));
    }
    let damping_term = model.damping * dt / (2.0 * model.mass);
    let stiffness_term = model.total_stiffness() * dt * dt / (4.0 * model.mass);
    let denom = 1.0 + damping_term + stiffness_term;
    Ok(ChangParameters {
        beta1: (1.0 + damping_term) / denom,
        beta2: 0.5 / denom,
    })
}

/// Precomputed per-run constants of an integrator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integrator {
    pub config: IntegratorConfig,
    pub beta1: f64,
    pub beta2: f64,
    mass: f64,
    damping: f64,
    frame_stiffness: f64,
}

impl Integrator {
    pub fn new(model: &SdofModel, config: IntegratorConfig) -> Result<Self> {
        let ChangParameters { beta1, beta2 } = match config.scheme {
            Scheme::ChangExplicit => chang_parameters(model, config.dt)?,
            Scheme::CentralDifference => {
                chang_parameters(model, config.dt)?;
                ChangParameters { beta1: 1.0, beta2: 0.5 }
            }
        };
        Ok(Integrator {
            config,
            beta1,
            beta2,
            mass: model.mass,
            damping: model.damping,
            frame_stiffness: model.frame_stiffness,
        })
    }

    /// State at tick 0 from equilibrium with the restoring force at `x0`.
    pub fn initial_state(
        &self,
        x0: f64,
        v0: f64,
        gm_accel: f64,
        restoring_force_feedback: f64,
    ) -> Result<DynamicState> {
        check_finite(&[x0, v0, gm_accel, restoring_force_feedback], 0)?;
        let a = (-self.mass * gm_accel - self.frame_stiffness * x0 - restoring_force_feedback - self.damping * v0)
            / self.mass;
        Ok(DynamicState {
            step_index: 0,
            t: 0.0,
            x: x0,
            v: v0,
            a,
        })
    }

    /// Displacement of the next step; depends only on the current state.
    pub fn predict_displacement(&self, state: &DynamicState) -> f64 {
        let dt = self.config.dt;
        state.x + self.beta1 * dt * state.v + self.beta2 * dt * dt * state.a
    }

    /// Advances one step. `restoring_force_feedback` is the brace force at the
    /// displacement returned by [`Integrator::predict_displacement`], and
    /// `gm_accel` the ground acceleration at the new step.
    pub fn step(&self, state: &DynamicState, restoring_force_feedback: f64, gm_accel: f64) -> Result<DynamicState> {
        let next_index = state.step_index + 1;
        check_finite(
            &[state.x, state.v, state.a, restoring_force_feedback, gm_accel],
            next_index,
        )?;
        let dt = self.config.dt;
        let x = self.predict_displacement(state);
        let half = 0.5 * dt;
        let a = (-self.mass * gm_accel
            - self.frame_stiffness * x
            - restoring_force_feedback
            - self.damping * (state.v + half * state.a))
            / (self.mass + half * self.damping);
        let v = state.v + half * (state.a + a);
        let next = DynamicState {
            step_index: next_index,
            t: next_index as f64 * dt,
            x,
            v,
            a,
        };
        check_finite(&[next.x, next.v, next.a], next_index)?;
        Ok(next)
    }
}

fn check_finite(values: &[f64], step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: "integrator input",
            step,
        })
    }
}

/// Advances one step of `model` under `config`; see [`Integrator::step`].
pub fn step(
    model: &SdofModel,
    config: &IntegratorConfig,
    state: &DynamicState,
    restoring_force_feedback: f64,
    gm_accel: f64,
) -> Result<DynamicState> {
    Integrator::new(model, *config)?.step(state, restoring_force_feedback, gm_accel)
}

pub(crate) fn check_grid(gm: &GroundMotion, dt: f64) -> Result<()> {
    if (gm.dt - dt).abs() > 1e-12 * dt {
        return Err(Error::config(
            "dt",
            format!(
                "record `{}` is sampled at {} s but the integrator runs at {} s; resample first",
                gm.name, gm.dt, dt
            ),
        ));
    }
    Ok(())
}

/// Full numerical analysis with the brace force computed as `k_e · x`.
pub fn run_pure_fe(model: &SdofModel, config: &IntegratorConfig, ground_motion: &GroundMotion) -> Result<RunHistory> {
    let ke = model.brace_lateral_stiffness;
    let records = pure_fe_states(model, config, ground_motion)?
        .into_iter()
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
    Ok(RunHistory::new("pure-fe", config.dt, records))
}

/// Integrated states of the pure analysis, one per ground-motion sample.
pub fn pure_fe_states(
    model: &SdofModel,
    config: &IntegratorConfig,
    ground_motion: &GroundMotion,
) -> Result<Vec<DynamicState>> {
    check_grid(ground_motion, config.dt)?;
    let integ = Integrator::new(model, *config)?;
    let ke = model.brace_lateral_stiffness;
    let mut states = Vec::with_capacity(ground_motion.len());
    let mut state = integ.initial_state(0.0, 0.0, ground_motion.accel[0], 0.0)?;
    states.push(state);
    for &ag in &ground_motion.accel[1..] {
        let x = integ.predict_displacement(&state);
        state = integ.step(&state, ke * x, ag)?;
        states.push(state);
    }
    Ok(states)
}

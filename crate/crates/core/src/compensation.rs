//! Adaptive time-series (ATS) delay compensation.
//!
//! The compensated command is `a0·x + a1·ẋ + a2·ẍ` of the target command.
//! The coefficients are re-fitted periodically by regressing the commands
//! sent to the actuator onto the measured displacement and its derivatives
//! over a sliding window; for a pure delay τ this converges to
//! `(1, τ, τ²/2)`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::CoefficientSample;
use crate::lstsq;
use crate::plant::DEFAULT_DELAY_STEPS;
use crate::signal::CONTROLLER_DT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtsConfig {
    /// Regression window, ticks.
    pub window_length: usize,
    /// Ticks between coefficient updates once the window is full.
    pub update_period: usize,
    /// Delay used for the initial coefficients and default bounds, ticks.
    pub nominal_delay_steps: usize,
    pub dt: f64,
    /// Freeze the coefficients at their initial values.
    pub adapt: bool,
    pub a0_bounds: Option<[f64; 2]>,
    pub a1_bounds: Option<[f64; 2]>,
    pub a2_bounds: Option<[f64; 2]>,
}

impl Default for AtsConfig {
    fn default() -> Self {
        AtsConfig {
            window_length: 2048,
            update_period: 1024,
            nominal_delay_steps: DEFAULT_DELAY_STEPS,
            dt: CONTROLLER_DT,
            adapt: true,
            a0_bounds: None,
            a1_bounds: None,
            a2_bounds: None,
        }
    }
}

impl AtsConfig {
    pub fn nominal_delay(&self) -> f64 {
        self.nominal_delay_steps as f64 * self.dt
    }

    /// Bounds on `(a0, a1, a2)`; defaults are `[0.5, 1.5]`, `[0, 4τ]` and
    /// `[0, (4τ)²]` with τ the nominal delay.
    pub fn bounds(&self) -> [[f64; 2]; 3] {
        let wide = 4.0 * self.nominal_delay();
        [
            self.a0_bounds.unwrap_or([0.5, 1.5]),
            self.a1_bounds.unwrap_or([0.0, wide]),
            self.a2_bounds.unwrap_or([0.0, wide * wide]),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length < 3 {
            return Err(Error::config("compensator.window_length", "must be at least 3"));
        }
        if self.update_period == 0 {
            return Err(Error::config("compensator.update_period", "must be positive"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("compensator.dt", "must be positive"));
        }
        for (name, [lo, hi]) in ["a0_bounds", "a1_bounds", "a2_bounds"].iter().zip(self.bounds()) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config(format!("compensator.{name}"), "need finite lo <= hi"));
            }
        }
        Ok(())
    }
}

/// `a0·command + a1·rate + a2·accel`.
pub fn compensate(coefficients: [f64; 3], command: f64, command_rate: f64, command_accel: f64) -> f64 {
    coefficients[0] * command + coefficients[1] * command_rate + coefficients[2] * command_accel
}

/// Three-point backward difference estimates `(ẋ, ẍ)` at the newest sample
/// of `[x_{i-2}, x_{i-1}, x_i]`.
pub fn backward_derivatives(x: [f64; 3], dt: f64) -> (f64, f64) {
    let [x2, x1, x0] = x;
    let rate = (3.0 * x0 - 4.0 * x1 + x2) / (2.0 * dt);
    let accel = (x0 - 2.0 * x1 + x2) / (dt * dt);
    (rate, accel)
}

#[derive(Clone, Debug)]
pub struct AtsState {
    config: AtsConfig,
    coefficients: [f64; 3],
    /// Last three target commands, oldest first.
    targets: [f64; 3],
    /// (command sent, measured) pairs, oldest first.
    window: VecDeque<(f64, f64)>,
    since_update: usize,
    tick: usize,
    trace: Vec<CoefficientSample>,
}

impl AtsState {
    pub fn new(config: AtsConfig) -> Result<Self> {
        config.validate()?;
        let tau = config.nominal_delay();
        let coefficients = clamp([1.0, tau, 0.5 * tau * tau], config.bounds());
        Ok(AtsState {
            window: VecDeque::with_capacity(config.window_length),
            coefficients,
            targets: [0.0; 3],
            since_update: 0,
            tick: 0,
            trace: vec![CoefficientSample {
                tick: 0,
                a0: coefficients[0],
                a1: coefficients[1],
                a2: coefficients[2],
                held: false,
            }],
            config,
        })
    }

    pub fn with_coefficients(config: AtsConfig, coefficients: [f64; 3]) -> Result<Self> {
        let mut s = AtsState::new(config)?;
        s.coefficients = coefficients;
        s.trace[0] = CoefficientSample {
            tick: 0,
            a0: coefficients[0],
            a1: coefficients[1],
            a2: coefficients[2],
            held: false,
        };
        Ok(s)
    }

    pub fn coefficients(&self) -> [f64; 3] {
        self.coefficients
    }

    pub fn trace(&self) -> &[CoefficientSample] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<CoefficientSample> {
        self.trace
    }

    /// Compensates the newest target command using backward-difference rates.
    pub fn apply(&mut self, command: f64) -> f64 {
        self.targets = [self.targets[1], self.targets[2], command];
        let (rate, accel) = backward_derivatives(self.targets, self.config.dt);
        compensate(self.coefficients, command, rate, accel)
    }

    /// Records the pair sent/measured for this tick and adapts when due.
    pub fn observe(&mut self, sent: f64, measured: f64) {
        self.tick += 1;
        if self.window.len() == self.config.window_length {
            self.window.pop_front();
        }
        self.window.push_back((sent, measured));
        self.since_update += 1;
        if self.config.adapt
            && self.window.len() == self.config.window_length
            && self.since_update >= self.config.update_period
        {
            self.since_update = 0;
            self.update();
        }
    }

    /// Refits the coefficients over the current window. Returns `false` (and
    /// keeps the previous coefficients) when the window is not full or the
    /// regression is singular.
    pub fn update(&mut self) -> bool {
        let n = self.window.len();
        if n < self.config.window_length {
            return false;
        }
        let dt = self.config.dt;
        let rows = n - 2;
        let mut design = DMatrix::<f64>::zeros(rows, 3);
        let mut target = DVector::<f64>::zeros(rows);
        for r in 0..rows {
            let m = [self.window[r].1, self.window[r + 1].1, self.window[r + 2].1];
            let (rate, accel) = backward_derivatives(m, dt);
            design[(r, 0)] = m[2];
            design[(r, 1)] = rate;
            design[(r, 2)] = accel;
            target[r] = self.window[r + 2].0;
        }
        let fit = lstsq::solve(&design, &target, 1e-10);
        let ok = fit.is_full_rank() && fit.solution.iter().all(|c| c.is_finite());
        if ok {
            self.coefficients = clamp(
                [fit.solution[0], fit.solution[1], fit.solution[2]],
                self.config.bounds(),
            );
        }
        self.trace.push(CoefficientSample {
            tick: self.tick,
            a0: self.coefficients[0],
            a1: self.coefficients[1],
            a2: self.coefficients[2],
            held: !ok,
        });
        ok
    }
}

fn clamp(c: [f64; 3], bounds: [[f64; 2]; 3]) -> [f64; 3] {
    [
        c[0].clamp(bounds[0][0], bounds[0][1]),
        c[1].clamp(bounds[1][0], bounds[1][1]),
        c[2].clamp(bounds[2][0], bounds[2][1]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::lag_estimate;
    use crate::plant::{Actuator, ActuatorConfig};
    use proptest::prelude::*;

    /// Open loop: target → compensator → plant; returns (targets, measured).
    fn drive(
        ats: &mut AtsState,
        plant: ActuatorConfig,
        target: impl Fn(usize) -> f64,
        n: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut act = Actuator::new(plant).unwrap();
        let mut xs = Vec::with_capacity(n);
        let mut ms = Vec::with_capacity(n);
        for i in 0..n {
            let x = target(i);
            let sent = ats.apply(x);
            let m = act.step(i, sent).unwrap();
            ats.observe(sent, m);
            xs.push(x);
            ms.push(m);
        }
        (xs, ms)
    }

    #[test]
    fn unit_coefficients_are_identity() {
        assert_eq!(compensate([1.0, 0.0, 0.0], 3.5, 100.0, -7.0), 3.5);
    }

    #[test]
    fn ramp_through_delay_is_tracked_exactly() {
        let d = 28;
        let dt = CONTROLLER_DT;
        let cfg = AtsConfig {
            adapt: false,
            ..Default::default()
        };
        let mut ats = AtsState::with_coefficients(cfg, [1.0, d as f64 * dt, 0.0]).unwrap();
        let slope = 40.0;
        let (xs, ms) = drive(&mut ats, ActuatorConfig::pure_delay(d), |i| slope * i as f64 * dt, 400);
        // The 3-point stencil is exact on a ramp once it has 3 samples.
        for i in (d + 2)..400 {
            assert!((ms[i] - xs[i]).abs() < 1e-10, "tick {i}: {} vs {}", ms[i], xs[i]);
        }
    }

    #[test]
    fn identity_plant_converges_to_unit_coefficients() {
        let mut ats = AtsState::new(AtsConfig::default()).unwrap();
        let w = 2.0 * std::f64::consts::PI * 1.7;
        drive(
            &mut ats,
            ActuatorConfig::pure_delay(0),
            |i| (w * i as f64 * CONTROLLER_DT).sin() + 0.3 * (3.1 * w * i as f64 * CONTROLLER_DT).sin(),
            6 * 2048,
        );
        let [a0, a1, a2] = ats.coefficients();
        assert!((a0 - 1.0).abs() < 1e-3, "a0 {a0}");
        assert!(a1.abs() < 1e-3, "a1 {a1}");
        assert!(a2.abs() < 1e-3, "a2 {a2}");
    }

    #[test]
    fn pure_delay_drives_a1_towards_delay() {
        let d = 28;
        let mut ats = AtsState::with_coefficients(AtsConfig::default(), [1.0, 0.0, 0.0]).unwrap();
        let w = 2.0 * std::f64::consts::PI / 0.294;
        drive(
            &mut ats,
            ActuatorConfig::pure_delay(d),
            |i| (w * i as f64 * CONTROLLER_DT).sin(),
            8 * 2048,
        );
        let [_, a1, _] = ats.coefficients();
        let tau = d as f64 * CONTROLLER_DT;
        assert!((a1 - tau).abs() < 0.05 * tau, "a1 {a1} vs {tau}");
    }

    #[test]
    fn adapted_sinusoid_has_sub_tick_phase_error() {
        let mut ats = AtsState::new(AtsConfig::default()).unwrap();
        let w = 2.0 * std::f64::consts::PI / 0.294;
        let n = 8 * 2048;
        let (xs, ms) = drive(
            &mut ats,
            ActuatorConfig::pure_delay(28),
            |i| (w * i as f64 * CONTROLLER_DT).sin(),
            n,
        );
        let tail = n / 2;
        let lag = lag_estimate(&xs[tail..], &ms[tail..]).unwrap();
        assert!(lag.abs() < 1, "lag {lag}");
    }

    #[test]
    fn zero_window_keeps_coefficients() {
        let mut ats = AtsState::new(AtsConfig::default()).unwrap();
        let before = ats.coefficients();
        drive(&mut ats, ActuatorConfig::pure_delay(28), |_| 0.0, 3 * 2048);
        assert_eq!(ats.coefficients(), before);
        assert!(ats.trace().iter().skip(1).all(|s| s.held));
        assert!(ats.trace().len() > 1);
    }

    #[test]
    fn rejects_tiny_window() {
        assert!(AtsState::new(AtsConfig {
            window_length: 2,
            ..Default::default()
        })
        .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn coefficients_stay_in_bounds(delay in 0usize..60, gain in 0.3f64..2.0, freq in 0.5f64..8.0) {
            let cfg = AtsConfig { window_length: 256, update_period: 128, ..Default::default() };
            let bounds = cfg.bounds();
            let mut ats = AtsState::new(cfg).unwrap();
            let w = 2.0 * std::f64::consts::PI * freq;
            drive(
                &mut ats,
                ActuatorConfig { delay_steps: delay, amplitude_scale: gain, ..Default::default() },
                |i| (w * i as f64 * CONTROLLER_DT).sin(),
                2048,
            );
            for s in ats.trace() {
                for (c, [lo, hi]) in [s.a0, s.a1, s.a2].iter().zip(bounds) {
                    prop_assert!(*c >= lo && *c <= hi);
                }
            }
        }
    }
}

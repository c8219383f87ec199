//! Virtual servo-hydraulic actuator and linear-elastic brace specimen.
//!
//! The actuator is a transport delay followed by an optional first-order
//! lag, a gain (amplitude) error and optional Gaussian measurement noise.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::SdofModel;
use crate::error::{Error, Result};
use crate::signal::CONTROLLER_DT;

/// Feedback delay of the reference rig, in controller ticks.
pub const DEFAULT_DELAY_STEPS: usize = 28;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorConfig {
    /// Transport delay, ticks.
    pub delay_steps: usize,
    /// First-order lag time constant, s (0 disables the lag).
    pub lag_time_constant: f64,
    /// Standard deviation of additive measurement noise, mm.
    pub noise_std: f64,
    /// Gain from command to achieved displacement (1 is ideal).
    pub amplitude_scale: f64,
    pub seed: u64,
    /// Tick length, s.
    pub dt: f64,
}

impl Default for ActuatorConfig {
    fn default() -> Self {
        ActuatorConfig {
            delay_steps: DEFAULT_DELAY_STEPS,
            lag_time_constant: 0.0,
            noise_std: 0.0,
            amplitude_scale: 1.0,
            seed: 0,
            dt: CONTROLLER_DT,
        }
    }
}

impl ActuatorConfig {
    /// A noiseless, lag-free actuator with only a transport delay.
    pub fn pure_delay(delay_steps: usize) -> Self {
        ActuatorConfig {
            delay_steps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lag_time_constant.is_finite() && self.lag_time_constant >= 0.0) {
            return Err(Error::config("actuator.lag_time_constant", "must be >= 0"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::config("actuator.noise_std", "must be >= 0"));
        }
        if !(self.amplitude_scale.is_finite() && self.amplitude_scale > 0.0) {
            return Err(Error::config("actuator.amplitude_scale", "must be > 0"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("actuator.dt", "must be > 0"));
        }
        Ok(())
    }
}

/// Stateful actuator; one instance per run, stepped once per tick in order.
#[derive(Clone, Debug)]
pub struct Actuator {
    config: ActuatorConfig,
    buffer: VecDeque<f64>,
    lag_state: f64,
    lag_gain: f64,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
    next_tick: usize,
}

impl Actuator {
    pub fn new(config: ActuatorConfig) -> Result<Self> {
        config.validate()?;
        let lag_gain = if config.lag_time_constant > 0.0 {
            1.0 - (-config.dt / config.lag_time_constant).exp()
        } else {
            1.0
        };
        let noise = if config.noise_std > 0.0 {
            Some(Normal::new(0.0, config.noise_std).expect("validated std"))
        } else {
            None
        };
        Ok(Actuator {
            buffer: std::iter::repeat_n(0.0, config.delay_steps).collect(),
            lag_state: 0.0,
            lag_gain,
            noise,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            next_tick: 0,
            config,
        })
    }

    pub fn config(&self) -> &ActuatorConfig {
        &self.config
    }

    /// Applies `command_x` at `tick` and returns the measured displacement.
    pub fn step(&mut self, tick: usize, command_x: f64) -> Result<f64> {
        if tick != self.next_tick {
            return Err(Error::TickOrder {
                expected: self.next_tick,
                got: tick,
            });
        }
        self.next_tick += 1;
        let delayed = if self.config.delay_steps == 0 {
            command_x
        } else {
            self.buffer.push_back(command_x);
            self.buffer.pop_front().expect("buffer holds delay_steps values")
        };
        if self.config.lag_time_constant > 0.0 {
            self.lag_state += self.lag_gain * (delayed - self.lag_state);
        } else {
            self.lag_state = delayed;
        }
        let mut measured = self.config.amplitude_scale * self.lag_state;
        if let Some(noise) = &self.noise {
            measured += noise.sample(&mut self.rng);
        }
        Ok(measured)
    }
}

/// Where the specimen force is computed from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantMode {
    /// Force from the command, as if the actuator were perfect.
    Offline,
    /// Force from the actuator's measured displacement.
    #[default]
    Online,
}

/// Restoring force of the linear-elastic brace, kN.
pub fn specimen_force(model: &SdofModel, mode: PlantMode, command_x: f64, measured_x: f64) -> f64 {
    let x = match mode {
        PlantMode::Offline => command_x,
        PlantMode::Online => measured_x,
    };
    model.brace_lateral_stiffness * x
}

/// Actuator plus specimen, as seen from the hybrid loop.
#[derive(Clone, Debug)]
pub struct VirtualPlant {
    actuator: Actuator,
    mode: PlantMode,
    model: SdofModel,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantOutput {
    pub measured_x: f64,
    pub force: f64,
}

impl VirtualPlant {
    pub fn new(model: &SdofModel, config: ActuatorConfig, mode: PlantMode) -> Result<Self> {
        Ok(VirtualPlant {
            actuator: Actuator::new(config)?,
            mode,
            model: model.clone(),
        })
    }

    pub fn mode(&self) -> PlantMode {
        self.mode
    }

    /// `actuator_command` drives the actuator; `command_x` is the
    /// uncompensated driver command used for the offline force.
    pub fn step(&mut self, tick: usize, command_x: f64, actuator_command: f64) -> Result<PlantOutput> {
        let measured_x = self.actuator.step(tick, actuator_command)?;
        Ok(PlantOutput {
            measured_x,
            force: specimen_force(&self.model, self.mode, command_x, measured_x),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn run(config: ActuatorConfig, input: &[f64]) -> Vec<f64> {
        let mut act = Actuator::new(config).unwrap();
        input
            .iter()
            .enumerate()
            .map(|(i, &u)| act.step(i, u).unwrap())
            .collect()
    }

    #[test]
    fn pure_delay_shifts_an_impulse() {
        let mut input = vec![0.0; 100];
        input[10] = 1.0;
        let out = run(ActuatorConfig::pure_delay(28), &input);
        for (i, y) in out.iter().enumerate() {
            assert_eq!(*y, if i == 38 { 1.0 } else { 0.0 }, "tick {i}");
        }
    }

    #[test]
    fn zero_delay_is_identity() {
        let input: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(run(ActuatorConfig::pure_delay(0), &input), input);
    }

    #[test]
    fn first_order_lag_closed_form() {
        let dt = CONTROLLER_DT;
        let tau = 2.0 * dt;
        let cfg = ActuatorConfig {
            delay_steps: 0,
            lag_time_constant: tau,
            ..Default::default()
        };
        let out = run(cfg, &[1.0; 40]);
        for (n, y) in out.iter().enumerate() {
            let expected = 1.0 - (-((n + 1) as f64) * dt / tau).exp();
            assert_relative_eq!(*y, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn out_of_order_tick_is_a_fault() {
        let mut act = Actuator::new(ActuatorConfig::default()).unwrap();
        act.step(0, 1.0).unwrap();
        match act.step(2, 1.0).unwrap_err() {
            Error::TickOrder { expected, got } => assert_eq!((expected, got), (1, 2)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let cfg = ActuatorConfig {
            noise_std: 0.05,
            seed: 11,
            ..Default::default()
        };
        let input: Vec<f64> = (0..500).map(|i| (i as f64 * 0.01).sin()).collect();
        let a = run(cfg.clone(), &input);
        let b = run(cfg.clone(), &input);
        assert_eq!(a, b);
        let c = run(ActuatorConfig { seed: 12, ..cfg }, &input);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs() {
        assert!(Actuator::new(ActuatorConfig {
            amplitude_scale: 0.0,
            ..Default::default()
        })
        .is_err());
        assert!(Actuator::new(ActuatorConfig {
            noise_std: -1.0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn specimen_force_modes() {
        let mut model = SdofModel::reference_frame();
        model.brace_lateral_stiffness = 622.63;
        assert_relative_eq!(specimen_force(&model, PlantMode::Offline, 1.0, 0.3), 622.63);
        assert_relative_eq!(specimen_force(&model, PlantMode::Online, 1.0, 0.5), 311.315);
        assert_eq!(specimen_force(&model, PlantMode::Online, 0.0, 0.0), 0.0);
    }

    #[test]
    fn online_force_is_shifted_offline_force() {
        let model = SdofModel::reference_frame();
        let cmd: Vec<f64> = (0..300).map(|i| (i as f64 * 0.02).sin()).collect();
        let mut off = VirtualPlant::new(&model, ActuatorConfig::pure_delay(28), PlantMode::Offline).unwrap();
        let mut on = VirtualPlant::new(&model, ActuatorConfig::pure_delay(28), PlantMode::Online).unwrap();
        let f_off: Vec<f64> = cmd
            .iter()
            .enumerate()
            .map(|(i, &c)| off.step(i, c, c).unwrap().force)
            .collect();
        let f_on: Vec<f64> = cmd
            .iter()
            .enumerate()
            .map(|(i, &c)| on.step(i, c, c).unwrap().force)
            .collect();
        for i in 28..300 {
            assert_eq!(f_on[i], f_off[i - 28]);
        }
        assert!(f_on[..28].iter().all(|f| *f == 0.0));
    }

    proptest! {
        #[test]
        fn noiseless_plant_is_linear(
            scale in -5.0f64..5.0,
            delay in 0usize..40,
            lag in 0.0f64..0.01,
            gain in 0.5f64..1.5,
        ) {
            let cfg = ActuatorConfig { delay_steps: delay, lag_time_constant: lag, amplitude_scale: gain, ..Default::default() };
            let u: Vec<f64> = (0..200).map(|i| (i as f64 * 0.05).sin() + 0.1 * i as f64).collect();
            let su: Vec<f64> = u.iter().map(|x| scale * x).collect();
            let y = run(cfg.clone(), &u);
            let sy = run(cfg, &su);
            for (a, b) in y.iter().zip(&sy) {
                prop_assert!((scale * a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }
    }
}

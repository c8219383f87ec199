//! The hybrid loop: driver → compensator → plant → feedback, one tick at a
//! time, optionally paced against the wall clock.
//!
//! The driver at tick `i` sees the plant outputs of tick `i − 1` (zero at
//! tick 0).

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::compensation::{AtsConfig, AtsState};
use crate::dynamics::{DynamicState, SdofModel};
use crate::error::{Error, Result};
pub use crate::history::StepRecord;
use crate::history::{PacingStats, RunHistory};
use crate::integrator::{check_grid, Integrator, IntegratorConfig};
use crate::plant::{ActuatorConfig, PlantMode, VirtualPlant};
use crate::signal::{tick_count, GroundMotion};
use crate::surrogate::lr::{FeedbackPath, LrLoop, LrModel};
use crate::surrogate::rnn::RnnModel;

/// Records kept for diagnosis when a driver blows up.
pub const BLOW_UP_WINDOW: usize = 100;

/// Fraction of missed deadlines above which a run counts as overrunning.
pub const SUSTAINED_OVERRUN_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DriverInput {
    pub tick: usize,
    /// Ground acceleration at this tick, mm/s².
    pub gm_accel: f64,
    /// Measured displacement from the previous tick, mm.
    pub feedback_x: f64,
    /// Specimen force from the previous tick, kN.
    pub feedback_force: f64,
}

/// Produces the displacement command for each tick.
pub trait Driver: Send {
    fn name(&self) -> &str;
    fn command(&mut self, input: &DriverInput) -> Result<f64>;
}

/// Explicit integrator in the loop.
pub struct FeDriver {
    integrator: Integrator,
    state: Option<DynamicState>,
    previous_gm: f64,
}

impl FeDriver {
    pub fn new(model: &SdofModel, config: IntegratorConfig) -> Result<Self> {
        Ok(FeDriver {
            integrator: Integrator::new(model, config)?,
            state: None,
            previous_gm: 0.0,
        })
    }
}

impl Driver for FeDriver {
    fn name(&self) -> &str {
        "fe"
    }

    fn command(&mut self, input: &DriverInput) -> Result<f64> {
        let x = if input.tick == 0 {
            0.0
        } else {
            // complete the previous step with the force it produced
            let state = match &self.state {
                None => self
                    .integrator
                    .initial_state(0.0, 0.0, self.previous_gm, input.feedback_force)?,
                Some(s) => self.integrator.step(s, input.feedback_force, self.previous_gm)?,
            };
            let x = self.integrator.predict_displacement(&state);
            self.state = Some(state);
            x
        };
        self.previous_gm = input.gm_accel;
        Ok(x)
    }
}

/// Regression surrogate in the loop.
pub struct LrDriver {
    inner: LrLoop,
}

impl LrDriver {
    pub fn new(model: LrModel, feedback: FeedbackPath, brace_stiffness: f64) -> Result<Self> {
        model.validate()?;
        Ok(LrDriver {
            inner: LrLoop::new(model, feedback, brace_stiffness),
        })
    }
}

impl Driver for LrDriver {
    fn name(&self) -> &str {
        "lr"
    }

    fn command(&mut self, input: &DriverInput) -> Result<f64> {
        Ok(self.inner.next(input.gm_accel, input.feedback_x, input.feedback_force))
    }
}

/// Recurrent surrogate in the loop.
pub struct RnnDriver {
    model: RnnModel,
    feedback: FeedbackPath,
    brace_stiffness: f64,
    hidden: Vec<f64>,
    scratch: Vec<f64>,
    predictions: Vec<f64>,
}

impl RnnDriver {
    pub fn new(model: RnnModel, feedback: FeedbackPath, brace_stiffness: f64) -> Result<Self> {
        model.validate()?;
        Ok(RnnDriver {
            hidden: vec![0.0; model.hidden_size],
            scratch: Vec::with_capacity(model.hidden_size),
            model,
            feedback,
            brace_stiffness,
            predictions: Vec::new(),
        })
    }
}

impl Driver for RnnDriver {
    fn name(&self) -> &str {
        "rnn"
    }

    fn command(&mut self, input: &DriverInput) -> Result<f64> {
        let i = self.predictions.len();
        let force = match self.feedback {
            FeedbackPath::SyntheticDelay(d) => {
                let k = d.max(1);
                if i >= k {
                    self.brace_stiffness * self.predictions[i - k]
                } else {
                    0.0
                }
            }
            FeedbackPath::Plant => input.feedback_force,
        };
        let z = self.model.normalize([input.gm_accel, force]);
        let y = self
            .model
            .denormalize(self.model.step(z, &mut self.hidden, &mut self.scratch));
        self.predictions.push(y);
        Ok(y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriverSpec {
    Fe(IntegratorConfig),
    Lr { model: LrModel, feedback: FeedbackPath },
    Rnn { model: RnnModel, feedback: FeedbackPath },
}

impl DriverSpec {
    pub fn build(&self, model: &SdofModel) -> Result<Box<dyn Driver>> {
        let ke = model.brace_lateral_stiffness;
        Ok(match self {
            DriverSpec::Fe(cfg) => Box::new(FeDriver::new(model, *cfg)?),
            DriverSpec::Lr { model: m, feedback } => Box::new(LrDriver::new(m.clone(), *feedback, ke)?),
            DriverSpec::Rnn { model: m, feedback } => Box::new(RnnDriver::new(m.clone(), *feedback, ke)?),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pacing {
    #[default]
    AsFastAsPossible,
    RealTime {
        rate_hz: f64,
        /// Extra sleep inside every tick, µs (fault injection).
        #[serde(default)]
        injected_delay_us: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub id: String,
    pub driver: DriverSpec,
    pub actuator: ActuatorConfig,
    pub mode: PlantMode,
    pub compensator: Option<AtsConfig>,
    pub pacing: Pacing,
    /// Simulated seconds; the whole record when absent.
    pub duration: Option<f64>,
}

impl RunConfig {
    pub fn new(id: impl Into<String>, driver: DriverSpec) -> Self {
        RunConfig {
            id: id.into(),
            driver,
            actuator: ActuatorConfig::default(),
            mode: PlantMode::Online,
            compensator: None,
            pacing: Pacing::AsFastAsPossible,
            duration: None,
        }
    }
}

/// Sleeps until shortly before a deadline, then spins.
struct Pacer {
    start: Instant,
    period: Duration,
    injected: Duration,
    misses: usize,
    max_latency: Duration,
    total_latency: Duration,
}

const SPIN_MARGIN: Duration = Duration::from_micros(200);

impl Pacer {
    fn new(rate_hz: f64, injected_delay_us: u64) -> Self {
        Pacer {
            start: Instant::now(),
            period: Duration::from_secs_f64(1.0 / rate_hz),
            injected: Duration::from_micros(injected_delay_us),
            misses: 0,
            max_latency: Duration::ZERO,
            total_latency: Duration::ZERO,
        }
    }

    fn release(&self, tick: usize) -> Instant {
        self.start + self.period * tick as u32
    }

    /// Blocks until the release time of `tick` (returns at once if late).
    fn wait(&self, tick: usize) -> Instant {
        let release = self.release(tick);
        loop {
            let now = Instant::now();
            if now >= release {
                return release;
            }
            let remaining = release - now;
            if remaining > SPIN_MARGIN {
                std::thread::sleep(remaining - SPIN_MARGIN);
            } else {
                std::hint::spin_loop();
            }
        }
    }

    fn finish(&mut self, release: Instant) {
        if !self.injected.is_zero() {
            std::thread::sleep(self.injected);
        }
        let latency = Instant::now().saturating_duration_since(release);
        if latency > self.period {
            self.misses += 1;
        }
        self.max_latency = self.max_latency.max(latency);
        self.total_latency += latency;
    }

    fn stats(&self, rate_hz: f64, ticks: usize) -> PacingStats {
        let mean = if ticks > 0 {
            self.total_latency.as_secs_f64() / ticks as f64
        } else {
            0.0
        };
        PacingStats {
            rate_hz,
            ticks,
            deadline_misses: self.misses,
            max_latency_us: self.max_latency.as_secs_f64() * 1e6,
            mean_latency_us: mean * 1e6,
            sustained_overrun: ticks > 0 && self.misses as f64 > SUSTAINED_OVERRUN_FRACTION * ticks as f64,
        }
    }
}

/// Runs the hybrid loop over `ground_motion` (already on the controller
/// grid).
pub fn run_hybrid(model: &SdofModel, ground_motion: &GroundMotion, config: &RunConfig) -> Result<RunHistory> {
    ground_motion.validate()?;
    let dt = ground_motion.dt;
    check_grid(ground_motion, config.actuator.dt)?;
    if let DriverSpec::Fe(ic) = &config.driver {
        check_grid(ground_motion, ic.dt)?;
    }
    let n = match config.duration {
        Some(d) => {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::config("duration", "must be >= 0"));
            }
            tick_count(d, dt).min(ground_motion.len())
        }
        None => ground_motion.len(),
    };
    let mut pacer = match config.pacing {
        Pacing::AsFastAsPossible => None,
        Pacing::RealTime {
            rate_hz,
            injected_delay_us,
        } => {
            if !(rate_hz.is_finite() && rate_hz > 0.0) || (rate_hz * dt - 1.0).abs() > 1e-9 {
                return Err(Error::config(
                    "pacing.rate_hz",
                    format!("must equal 1/dt = {} Hz, got {rate_hz}", 1.0 / dt),
                ));
            }
            Some(Pacer::new(rate_hz, injected_delay_us))
        }
    };

    let mut driver = config.driver.build(model)?;
    let mut plant = VirtualPlant::new(model, config.actuator.clone(), config.mode)?;
    let mut ats = match &config.compensator {
        Some(c) => Some(AtsState::new(c.clone())?),
        None => None,
    };
    let mut records: Vec<StepRecord> = Vec::with_capacity(n);
    let (mut fb_x, mut fb_f) = (0.0, 0.0);
    if let Some(p) = pacer.as_mut() {
        p.start = Instant::now();
    }
    for tick in 0..n {
        let release = pacer.as_ref().map(|p| p.wait(tick));
        let gm_accel = ground_motion.accel[tick];
        let command_x = driver.command(&DriverInput {
            tick,
            gm_accel,
            feedback_x: fb_x,
            feedback_force: fb_f,
        })?;
        if !command_x.is_finite() {
            let keep = records.len().saturating_sub(BLOW_UP_WINDOW);
            return Err(Error::DriverBlowUp {
                tick,
                window: records.split_off(keep),
            });
        }
        let compensated_x = match ats.as_mut() {
            Some(a) => a.apply(command_x),
            None => command_x,
        };
        let out = plant.step(tick, command_x, compensated_x)?;
        if let Some(a) = ats.as_mut() {
            a.observe(compensated_x, out.measured_x);
        }
        records.push(StepRecord {
            tick,
            t: tick as f64 * dt,
            gm_accel,
            command_x,
            compensated_x,
            measured_x: out.measured_x,
            force: out.force,
        });
        fb_x = out.measured_x;
        fb_f = out.force;
        if let (Some(p), Some(r)) = (pacer.as_mut(), release) {
            p.finish(r);
        }
    }
    let mut history = RunHistory::new(config.id.clone(), dt, records);
    if let (Some(p), Pacing::RealTime { rate_hz, .. }) = (&pacer, config.pacing) {
        history.pacing = Some(p.stats(rate_hz, n));
    }
    if let Some(a) = ats {
        history.compensator_trace = a.into_trace();
    }
    Ok(history)
}

//! Named scenarios and the batch runner.
//!
//! | name | what runs |
//! |---|---|
//! | `pure-fe` | integrator with `k_e · x`, scored against the closed-form oracle |
//! | `fe-offline` | integrator in the loop, force from the command |
//! | `fe-online-uncompensated` | integrator in the loop, force from the delayed actuator |
//! | `fe-online-ats` | as above with adaptive compensation |
//! | `lr-pure` | phase-1 regression surrogate, synthetic delayed feedback, no plant |
//! | `lr-offline` | phase-1 surrogate driving the actuator without listening to it |
//! | `lr-online` | phase-2 surrogate (retrained on `lr-offline` feedback) with plant feedback |
//! | `rnn-sweep` | recurrent surrogates over the configured hidden sizes |

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dynamics::{exact_linear_response, SdofModel};
use crate::error::{Error, Result};
use crate::evaluation::{self, Metrics};
use crate::history::{PacingStats, RunHistory};
use crate::integrator::run_pure_fe;
use crate::par::{self, ExecPolicy};
use crate::plant::{ActuatorConfig, PlantMode};
use crate::runner::{run_hybrid, DriverSpec, Pacing, RunConfig};
use crate::signal::GroundMotion;
use crate::surrogate::lr::{
    build_lr_dataset, build_recorded_lr_dataset, train_lr, FeedbackPath, LrModel, LrTrainingReport,
};
use crate::surrogate::rnn::{evaluate_hidden_size_sweep, RnnDataset, SweepReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    PureFe,
    FeOffline,
    FeOnlineUncompensated,
    FeOnlineAts,
    LrPure,
    LrOffline,
    LrOnline,
    RnnSweep,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::PureFe,
        Scenario::FeOffline,
        Scenario::FeOnlineUncompensated,
        Scenario::FeOnlineAts,
        Scenario::LrPure,
        Scenario::LrOffline,
        Scenario::LrOnline,
        Scenario::RnnSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::PureFe => "pure-fe",
            Scenario::FeOffline => "fe-offline",
            Scenario::FeOnlineUncompensated => "fe-online-uncompensated",
            Scenario::FeOnlineAts => "fe-online-ats",
            Scenario::LrPure => "lr-pure",
            Scenario::LrOffline => "lr-offline",
            Scenario::LrOnline => "lr-online",
            Scenario::RnnSweep => "rnn-sweep",
        }
    }

    /// nRMSE reported for the physical reference rig, percent. Context only.
    pub fn rig_reference_percent(self) -> Option<f64> {
        match self {
            Scenario::FeOffline => Some(5.4),
            Scenario::FeOnlineAts => Some(9.4),
            Scenario::LrPure => Some(0.15),
            Scenario::LrOnline => Some(0.066),
            _ => None,
        }
    }

    /// Whether the scenario drives the hybrid loop (and so can be paced).
    pub fn is_loop(self) -> bool {
        !matches!(self, Scenario::PureFe | Scenario::RnnSweep)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            Error::config(
                "scenario",
                format!(
                    "unknown scenario `{s}`; expected one of {}",
                    Scenario::ALL.map(Scenario::name).join(", ")
                ),
            )
        })
    }
}

/// Both phases of the regression pipeline.
#[derive(Clone, Debug)]
pub struct LrPipeline {
    pub phase1: LrModel,
    pub phase1_report: LrTrainingReport,
    /// Loop run of the phase-1 model whose actuator feedback trains phase 2.
    pub offline_run: RunHistory,
    pub phase2: LrModel,
    pub phase2_report: LrTrainingReport,
}

/// A configured experiment: model, record and lazily computed shared
/// artifacts (reference response, trained surrogates).
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: SdofModel,
    pub ground_motion: GroundMotion,
    reference: OnceLock<std::result::Result<RunHistory, String>>,
    lr: OnceLock<std::result::Result<LrPipeline, String>>,
}

fn shared<T: Clone>(cell: &OnceLock<std::result::Result<T, String>>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    cell.get_or_init(|| f().map_err(|e| e.to_string()))
        .clone()
        .map_err(Error::Metric)
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = config.structure.build()?;
        let ground_motion = config.record.load(config.integrator.dt)?;
        Ok(Self::with_parts(config, model, ground_motion))
    }

    pub fn with_parts(config: ExperimentConfig, model: SdofModel, ground_motion: GroundMotion) -> Self {
        Experiment {
            config,
            model,
            ground_motion,
            reference: OnceLock::new(),
            lr: OnceLock::new(),
        }
    }

    fn pacing(&self) -> Pacing {
        if self.config.run.real_time {
            Pacing::RealTime {
                rate_hz: 1.0 / self.config.integrator.dt,
                injected_delay_us: 0,
            }
        } else {
            Pacing::AsFastAsPossible
        }
    }

    /// Pure numerical analysis; the reference for every loop scenario.
    pub fn reference(&self) -> Result<RunHistory> {
        shared(&self.reference, || {
            run_pure_fe(&self.model, &self.config.integrator, &self.ground_motion)
        })
    }

    pub fn oracle(&self) -> Result<RunHistory> {
        exact_linear_response(&self.model, &self.ground_motion)
    }

    fn run_config(&self, id: &str, driver: DriverSpec) -> RunConfig {
        RunConfig {
            id: id.to_string(),
            driver,
            actuator: self.config.actuator.clone(),
            mode: PlantMode::Online,
            compensator: None,
            pacing: self.pacing(),
            duration: None,
        }
    }

    /// FE driver against a pure-delay online plant, no compensation.
    pub fn fe_with_delay(&self, delay_steps: usize) -> Result<RunHistory> {
        let mut cfg = self.run_config(
            &format!("fe-online-delay-{delay_steps}"),
            DriverSpec::Fe(self.config.integrator),
        );
        cfg.actuator = ActuatorConfig {
            delay_steps,
            dt: self.config.integrator.dt,
            ..ActuatorConfig::pure_delay(delay_steps)
        };
        cfg.pacing = Pacing::AsFastAsPossible;
        run_hybrid(&self.model, &self.ground_motion, &cfg)
    }

    pub fn lr_pipeline(&self) -> Result<LrPipeline> {
        shared(&self.lr, || {
            let reference = self.reference()?;
            let lr = &self.config.lr;
            let ds1 = build_lr_dataset(&reference, lr.delay_steps)?;
            let (phase1, phase1_report) = train_lr(&ds1, lr.options())?;
            let mut cfg = self.run_config(
                "lr-offline",
                DriverSpec::Lr {
                    model: phase1.clone(),
                    feedback: FeedbackPath::SyntheticDelay(lr.delay_steps),
                },
            );
            // the recorded feedback must not depend on wall-clock pacing
            cfg.pacing = Pacing::AsFastAsPossible;
            let offline_run = run_hybrid(&self.model, &self.ground_motion, &cfg)?;
            let ds2 = build_recorded_lr_dataset(&reference, &offline_run, lr.delay_steps)?;
            let (phase2, phase2_report) = train_lr(&ds2, lr.options())?;
            Ok(LrPipeline {
                phase1,
                phase1_report,
                offline_run,
                phase2,
                phase2_report,
            })
        })
    }

    pub fn rnn_dataset(&self) -> Result<RnnDataset> {
        let reference = self.reference()?;
        Ok(RnnDataset::from_reference(
            &reference.ground_accel(),
            &reference.displacement(),
            &reference.force(),
            self.config.rnn.delay_steps,
        ))
    }

    /// Runs one scenario; `inner` is the policy for work inside it (the
    /// hidden-size sweep).
    pub fn run(&self, scenario: Scenario, inner: ExecPolicy) -> Result<ScenarioOutcome> {
        let started = Instant::now();
        let mut extra = None;
        let mut sweep = None;
        let (history, metrics) = match scenario {
            Scenario::PureFe => {
                let h = self.reference()?;
                let oracle = self.oracle()?;
                let m = score(&oracle, &h, false)?;
                (Some(h), Some(m))
            }
            Scenario::FeOffline => {
                let mut cfg = self.run_config("fe-offline", DriverSpec::Fe(self.config.integrator));
                cfg.mode = PlantMode::Offline;
                self.loop_run(cfg)?
            }
            Scenario::FeOnlineUncompensated => {
                let cfg = self.run_config("fe-online-uncompensated", DriverSpec::Fe(self.config.integrator));
                self.loop_run(cfg)?
            }
            Scenario::FeOnlineAts => {
                let mut cfg = self.run_config("fe-online-ats", DriverSpec::Fe(self.config.integrator));
                cfg.compensator = Some(self.config.compensator.clone());
                self.loop_run(cfg)?
            }
            Scenario::LrPure => {
                let p = self.lr_pipeline()?;
                extra = Some(serde_json::to_value(&p.phase1_report).expect("serializable"));
                let mut cfg = self.run_config(
                    "lr-pure",
                    DriverSpec::Lr {
                        model: p.phase1,
                        feedback: FeedbackPath::SyntheticDelay(self.config.lr.delay_steps),
                    },
                );
                cfg.mode = PlantMode::Offline;
                cfg.actuator = ActuatorConfig {
                    dt: self.config.integrator.dt,
                    ..ActuatorConfig::pure_delay(0)
                };
                self.loop_run(cfg)?
            }
            Scenario::LrOffline => {
                let p = self.lr_pipeline()?;
                extra = Some(serde_json::to_value(&p.phase1_report).expect("serializable"));
                if self.config.run.real_time {
                    let cfg = self.run_config(
                        "lr-offline",
                        DriverSpec::Lr {
                            model: p.phase1,
                            feedback: FeedbackPath::SyntheticDelay(self.config.lr.delay_steps),
                        },
                    );
                    self.loop_run(cfg)?
                } else {
                    let m = score(&self.reference()?, &p.offline_run, true)?;
                    (Some(p.offline_run), Some(m))
                }
            }
            Scenario::LrOnline => {
                let p = self.lr_pipeline()?;
                extra = Some(serde_json::to_value(&p.phase2_report).expect("serializable"));
                let cfg = self.run_config(
                    "lr-online",
                    DriverSpec::Lr {
                        model: p.phase2,
                        feedback: FeedbackPath::Plant,
                    },
                );
                self.loop_run(cfg)?
            }
            Scenario::RnnSweep => {
                let ds = self.rnn_dataset()?;
                let report =
                    evaluate_hidden_size_sweep(&self.config.rnn.hidden_sizes, &ds, &self.config.rnn.train, inner)?;
                sweep = Some(report);
                (None, None)
            }
        };
        Ok(ScenarioOutcome {
            scenario,
            pacing: history.as_ref().and_then(|h| h.pacing.clone()),
            history,
            metrics,
            sweep,
            extra,
            elapsed_s: started.elapsed().as_secs_f64(),
        })
    }

    fn loop_run(&self, cfg: RunConfig) -> Result<(Option<RunHistory>, Option<Metrics>)> {
        let h = run_hybrid(&self.model, &self.ground_motion, &cfg)?;
        let m = score(&self.reference()?, &h, true)?;
        Ok((Some(h), Some(m)))
    }

    /// Runs every scenario, recording failures and carrying on.
    pub fn run_matrix(&self, scenarios: &[Scenario], policy: ExecPolicy) -> MatrixReport {
        if scenarios.is_empty() {
            return MatrixReport {
                config: self.config.to_json(),
                scenarios: Vec::new(),
                summary: Vec::new(),
            };
        }
        // shared artifacts first so parallel scenarios do not race to build them
        if scenarios.iter().any(|s| s.is_loop() || *s == Scenario::RnnSweep) {
            let _ = self.reference();
        }
        if scenarios
            .iter()
            .any(|s| matches!(s, Scenario::LrPure | Scenario::LrOffline | Scenario::LrOnline))
        {
            let _ = self.lr_pipeline();
        }
        // real-time runs share one core badly; pace them one after another
        let outer = if self.config.run.real_time {
            ExecPolicy::Sequential
        } else {
            policy
        };
        let outcomes = par::map(scenarios, outer, |&s| (s, self.run(s, policy)));
        let mut entries = Vec::with_capacity(outcomes.len());
        for (s, outcome) in outcomes {
            entries.push(match outcome {
                Ok(o) => ScenarioEntry::from_outcome(o),
                Err(e) => ScenarioEntry::failed(s, &e),
            });
        }
        MatrixReport::from_entries(self.config.to_json(), entries)
    }
}

fn score(reference: &RunHistory, test: &RunHistory, with_lag: bool) -> Result<Metrics> {
    evaluation::compare(
        &reference.id,
        &reference.displacement(),
        &test.id,
        &test.displacement(),
        with_lag,
    )
}

/// Everything one scenario produced.
#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub history: Option<RunHistory>,
    pub metrics: Option<Metrics>,
    pub pacing: Option<PacingStats>,
    pub sweep: Option<SweepReport>,
    pub extra: Option<serde_json::Value>,
    pub elapsed_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub scenario: Scenario,
    pub status: Status,
    pub error: Option<String>,
    pub metrics: Option<Metrics>,
    pub pacing: Option<PacingStats>,
    pub sweep: Option<SweepReport>,
    pub training: Option<serde_json::Value>,
    pub elapsed_s: f64,
    #[serde(skip)]
    pub history: Option<RunHistory>,
}

impl ScenarioEntry {
    pub fn from_outcome(o: ScenarioOutcome) -> Self {
        ScenarioEntry {
            scenario: o.scenario,
            status: Status::Ok,
            error: None,
            metrics: o.metrics,
            pacing: o.pacing,
            sweep: o.sweep,
            training: o.extra,
            elapsed_s: o.elapsed_s,
            history: o.history,
        }
    }

    pub fn failed(scenario: Scenario, error: &Error) -> Self {
        ScenarioEntry {
            scenario,
            status: Status::Failed,
            error: Some(format!("{scenario}: {error}")),
            metrics: None,
            pacing: None,
            sweep: None,
            training: None,
            elapsed_s: 0.0,
            history: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: Scenario,
    pub status: Status,
    pub nrmse_percent: Option<f64>,
    pub rig_reference_percent: Option<f64>,
}

impl SummaryRow {
    fn from_entry(e: &ScenarioEntry) -> Self {
        let nrmse = e.metrics.as_ref().map(|m| m.nrmse_percent).or_else(|| {
            e.sweep
                .as_ref()
                .and_then(|s| s.entries.iter().map(|x| x.nrmse_percent).reduce(f64::min))
        });
        SummaryRow {
            scenario: e.scenario,
            status: e.status,
            nrmse_percent: nrmse,
            rig_reference_percent: e.scenario.rig_reference_percent(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixReport {
    pub config: serde_json::Value,
    pub scenarios: Vec<ScenarioEntry>,
    pub summary: Vec<SummaryRow>,
}

impl MatrixReport {
    pub fn from_entries(config: serde_json::Value, scenarios: Vec<ScenarioEntry>) -> Self {
        let summary = scenarios.iter().map(SummaryRow::from_entry).collect();
        MatrixReport {
            config,
            scenarios,
            summary,
        }
    }

    pub fn all_ok(&self) -> bool {
        self.scenarios.iter().all(|e| e.status == Status::Ok)
    }

    pub fn entry(&self, scenario: Scenario) -> Option<&ScenarioEntry> {
        self.scenarios.iter().find(|e| e.scenario == scenario)
    }

    /// Plain-text comparison table.
    pub fn table(&self) -> String {
        let mut out = format!("{:<26} {:>8} {:>12} {:>10}\n", "scenario", "status", "nRMSE %", "rig %");
        for row in &self.summary {
            let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:<26} {:>8} {:>12} {:>10}\n",
                row.scenario.name(),
                match row.status {
                    Status::Ok => "ok",
                    Status::Failed => "FAILED",
                },
                fmt_opt(row.nrmse_percent),
                fmt_opt(row.rig_reference_percent)
            ));
        }
        out
    }
}

/// One gate of the `--check` mode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Threshold checks that apply to the scenarios present in `report`.
pub fn check_thresholds(report: &MatrixReport) -> Vec<CheckResult> {
    let nrmse = |s: Scenario| {
        report
            .entry(s)
            .and_then(|e| e.metrics.as_ref())
            .map(|m| m.nrmse_percent)
    };
    let mut out = Vec::new();
    let mut gate = |name: &str, value: Option<f64>, passed: &dyn Fn(f64) -> bool, what: &str| {
        if let Some(v) = value {
            out.push(CheckResult {
                name: name.to_string(),
                passed: passed(v),
                detail: format!("{v:.6} ({what})"),
            });
        }
    };
    gate(
        "pure-fe vs oracle",
        nrmse(Scenario::PureFe),
        &|v| v < 0.1,
        "nRMSE % < 0.1",
    );
    gate(
        "fe-offline identity",
        nrmse(Scenario::FeOffline),
        &|v| v == 0.0,
        "nRMSE % == 0",
    );
    gate("lr-pure", nrmse(Scenario::LrPure), &|v| v <= 0.5, "nRMSE % <= 0.5");
    gate("lr-online", nrmse(Scenario::LrOnline), &|v| v <= 1.0, "nRMSE % <= 1");
    if let (Some(ats), Some(unc)) = (nrmse(Scenario::FeOnlineAts), nrmse(Scenario::FeOnlineUncompensated)) {
        out.push(CheckResult {
            name: "ats beats uncompensated".into(),
            passed: ats < unc,
            detail: format!("{ats:.4} < {unc:.4}"),
        });
    }
    if let Some(sweep) = report.entry(Scenario::RnnSweep).and_then(|e| e.sweep.as_ref()) {
        for e in &sweep.entries {
            out.push(CheckResult {
                name: format!("rnn h={}", e.hidden_size),
                passed: e.nrmse_percent <= 10.0,
                detail: format!("{:.4} (nRMSE % <= 10)", e.nrmse_percent),
            });
        }
    }
    for e in &report.scenarios {
        if e.status == Status::Failed {
            out.push(CheckResult {
                name: e.scenario.name().into(),
                passed: false,
                detail: e.error.clone().unwrap_or_default(),
            });
        }
        if let Some(p) = &e.pacing {
            out.push(CheckResult {
                name: format!("{} pacing", e.scenario),
                passed: p.deadline_misses == 0,
                detail: format!("{} misses of {} ticks", p.deadline_misses, p.ticks),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_experiment(seconds: f64) -> Experiment {
        let mut cfg = ExperimentConfig::default();
        cfg.record.duration = seconds;
        cfg.rnn.hidden_sizes = vec![2];
        cfg.rnn.train.epochs = 1;
        Experiment::new(cfg).unwrap()
    }

    #[test]
    fn names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("fe-magic".parse::<Scenario>().is_err());
    }

    #[test]
    fn empty_matrix() {
        let exp = short_experiment(0.5);
        let r = exp.run_matrix(&[], ExecPolicy::Sequential);
        assert!(r.scenarios.is_empty() && r.summary.is_empty());
    }

    #[test]
    fn pure_fe_entry_is_the_pure_analysis() {
        let exp = short_experiment(1.0);
        let r = exp.run_matrix(&[Scenario::PureFe], ExecPolicy::Sequential);
        let h = r.scenarios[0].history.as_ref().unwrap();
        let direct = run_pure_fe(&exp.model, &exp.config.integrator, &exp.ground_motion).unwrap();
        assert_eq!(h, &direct);
    }

    #[test]
    fn full_matrix_has_eight_entries_and_policies_agree() {
        let exp = short_experiment(1.5);
        let a = exp.run_matrix(&Scenario::ALL, ExecPolicy::Sequential);
        let b = exp.run_matrix(&Scenario::ALL, ExecPolicy::Parallel);
        assert_eq!(a.scenarios.len(), 8);
        assert_eq!(a.summary.len(), 8);
        assert!(a.all_ok(), "{}", a.table());
        for (x, y) in a.scenarios.iter().zip(&b.scenarios) {
            assert_eq!(x.history, y.history);
            assert_eq!(x.metrics, y.metrics);
        }
        assert_eq!(
            a.entry(Scenario::FeOffline)
                .unwrap()
                .metrics
                .as_ref()
                .unwrap()
                .nrmse_percent,
            0.0
        );
    }

    #[test]
    fn failures_are_recorded_and_the_batch_continues() {
        let mut cfg = ExperimentConfig::default();
        cfg.record.duration = 0.005;
        let exp = Experiment::new(cfg).unwrap();
        // 11 ticks: too short for a 28-tick dataset
        let r = exp.run_matrix(&[Scenario::LrPure, Scenario::FeOffline], ExecPolicy::Sequential);
        assert_eq!(r.scenarios[0].status, Status::Failed);
        assert!(r.scenarios[0].error.as_ref().unwrap().starts_with("lr-pure"));
        assert_eq!(r.scenarios[1].status, Status::Ok);
        assert!(!r.all_ok());
    }
}

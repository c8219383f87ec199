//! `rths`: run the virtual hybrid-simulation scenarios from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rths_core::config::ExperimentConfig;
use rths_core::evaluation;
use rths_core::integrator::chang_parameters;
use rths_core::output::{
    coefficient_trace_csv, history_to_csv, overlay_svg, read_history_csv, read_json, to_json_string,
};
use rths_core::par::ExecPolicy;
use rths_core::runner::{run_hybrid, DriverSpec, RunConfig};
use rths_core::scenario::{check_thresholds, Experiment, MatrixReport, Scenario, ScenarioEntry};
use rths_core::signal::Units;
use rths_core::surrogate::lr::{build_lr_dataset, build_recorded_lr_dataset, train_lr, FeedbackPath, LrModel};
use rths_core::surrogate::rnn::{replay_nrmse, train_rnn, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "rths",
    version,
    about = "Virtual real-time hybrid simulation of a braced frame"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Ground-motion record (.at2 or .csv); the bundled El Centro NS by default.
    #[arg(long, global = true)]
    record: Option<PathBuf>,
    /// Units of the record samples (g, m/s2, mm/s2).
    #[arg(long, global = true)]
    units: Option<String>,
    /// Seed for actuator noise and network training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Simulated seconds.
    #[arg(long, global = true)]
    duration: Option<f64>,
    /// Pace loop scenarios against the wall clock at 1/dt.
    #[arg(long, global = true)]
    real_time: bool,
    /// Run scenarios and sweeps one at a time.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pure numerical analysis; writes the history and displacement/force plots.
    SimulateFe,
    /// Train a surrogate and write the model file.
    Train {
        #[arg(value_enum)]
        driver: DriverKind,
        #[arg(value_enum, default_value = "synthetic")]
        phase: Phase,
        /// Loop history recorded with the phase-1 model (recorded phase).
        #[arg(long)]
        history: Option<PathBuf>,
        /// Hidden units (rnn).
        #[arg(long)]
        hidden: Option<usize>,
    },
    /// Run one named scenario.
    Run {
        #[arg(long)]
        scenario: String,
        /// Regression model file to drive `lr-pure`, `lr-offline` or `lr-online`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Exit nonzero when an acceptance threshold is missed.
        #[arg(long)]
        check: bool,
    },
    /// Run several scenarios (all by default) and write a comparison report.
    Matrix {
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        #[arg(long)]
        check: bool,
    },
    /// Compare two history files.
    Evaluate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Print the structural model, integrator and record summary.
    Info,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DriverKind {
    Lr,
    Rnn,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum Phase {
    Synthetic,
    Recorded,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(r) = &c.record {
        if !r.is_file() {
            bail!("record file {} does not exist", r.display());
        }
        cfg.record.path = Some(r.clone());
    }
    if let Some(u) = &c.units {
        cfg.record.units =
            Some(Units::parse(u).with_context(|| format!("unknown units `{u}` (expected g, m/s2 or mm/s2)"))?);
    }
    if let Some(s) = c.seed {
        cfg.actuator.seed = s;
        cfg.rnn.train.seed = s;
    }
    if let Some(d) = c.duration {
        cfg.record.duration = d;
    }
    if c.real_time {
        cfg.run.real_time = true;
    }
    if c.sequential {
        cfg.run.exec = ExecPolicy::Sequential;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Files collected in memory and written only once everything succeeded.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    fn json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.add(name, to_json_string(value)?);
        Ok(())
    }

    fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::new();
        for (name, bytes) in self.files {
            let p = dir.join(name);
            rths_core::output::write_atomic(&p, &bytes)?;
            written.push(p);
        }
        Ok(written)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<bool> {
    let c = &cli.common;
    match &cli.command {
        Command::Evaluate { reference, test } => evaluate(reference, test),
        Command::Info => info(&load_config(c)?),
        Command::SimulateFe => simulate_fe(load_config(c)?, &c.out),
        Command::Train {
            driver,
            phase,
            history,
            hidden,
        } => train(load_config(c)?, &c.out, *driver, *phase, history.as_deref(), *hidden),
        Command::Run { scenario, model, check } => {
            let s: Scenario = scenario.parse()?;
            run(load_config(c)?, &c.out, s, model.as_deref(), *check)
        }
        Command::Matrix { scenarios, check } => {
            let list = if scenarios.is_empty() {
                Scenario::ALL.to_vec()
            } else {
                scenarios
                    .iter()
                    .map(|s| s.parse())
                    .collect::<rths_core::Result<Vec<_>>>()?
            };
            matrix(load_config(c)?, &c.out, &list, *check)
        }
    }
}

fn info(cfg: &ExperimentConfig) -> Result<bool> {
    let exp = Experiment::new(cfg.clone())?;
    let m = &exp.model;
    let beta = chang_parameters(m, cfg.integrator.dt)?;
    println!("mass                 {:.6} kN s^2/mm", m.mass);
    println!("frame stiffness      {:.6} kN/mm", m.frame_stiffness);
    println!("brace lateral k_e    {:.6} kN/mm", m.brace_lateral_stiffness);
    if let Some(a) = m.implied_brace_angle() {
        println!("brace angle          {:.3} deg", a.to_degrees());
    }
    println!("damping ratio        {}", m.damping_ratio);
    println!("damping c            {:.6} kN s/mm", m.damping);
    println!("omega_n              {:.6} rad/s", m.natural_frequency);
    println!("period               {:.6} s", m.period());
    println!(
        "dt                   {} s ({:?})",
        cfg.integrator.dt, cfg.integrator.scheme
    );
    println!("chang beta1, beta2   {:.16}, {:.16}", beta.beta1, beta.beta2);
    println!("actuator delay       {} ticks", cfg.actuator.delay_steps);
    let gm = &exp.ground_motion;
    println!(
        "record               {} ({} samples, {:.4} s, peak {:.3} mm/s^2)",
        gm.name,
        gm.len(),
        gm.duration(),
        gm.accel.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    );
    Ok(true)
}

fn evaluate(reference: &Path, test: &Path) -> Result<bool> {
    let r = read_history_csv(reference)?;
    let t = read_history_csv(test)?;
    let m = evaluation::compare(&r.id, &r.displacement(), &t.id, &t.displacement(), true)?;
    print!("{}", to_json_string(&m)?);
    Ok(true)
}

fn simulate_fe(cfg: ExperimentConfig, out: &Path) -> Result<bool> {
    let exp = Experiment::new(cfg)?;
    let h = exp.reference()?;
    let mut o = Outputs::default();
    o.add("pure-fe.csv", history_to_csv(&h));
    o.add(
        "pure-fe-displacement.svg",
        overlay_svg("brace displacement, mm", h.dt, &[("pure-fe", &h.displacement())]),
    );
    o.add(
        "pure-fe-force.svg",
        overlay_svg("brace force, kN", h.dt, &[("pure-fe", &h.force())]),
    );
    for p in o.commit(out)? {
        println!("wrote {}", p.display());
    }
    println!("{} ticks", h.len());
    Ok(true)
}

fn train(
    cfg: ExperimentConfig,
    out: &Path,
    driver: DriverKind,
    phase: Phase,
    history: Option<&Path>,
    hidden: Option<usize>,
) -> Result<bool> {
    let mut o = Outputs::default();
    match driver {
        DriverKind::Lr => {
            let recorded = if phase == Phase::Recorded {
                let p = history
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| out.join("lr-offline.csv"));
                if !p.is_file() {
                    return Err(rths_core::Error::MissingArtifact {
                        path: p,
                        hint:
                            "phase-1 loop history; produce it with `rths run --scenario lr-offline` or pass --history"
                                .into(),
                    }
                    .into());
                }
                Some(read_history_csv(&p)?)
            } else {
                None
            };
            let exp = Experiment::new(cfg.clone())?;
            let reference = exp.reference()?;
            let ds = match &recorded {
                None => build_lr_dataset(&reference, cfg.lr.delay_steps)?,
                Some(r) => build_recorded_lr_dataset(&reference, r, cfg.lr.delay_steps)?,
            };
            let (model, report) = train_lr(&ds, cfg.lr.options())?;
            let feedback = match phase {
                Phase::Synthetic => FeedbackPath::SyntheticDelay(cfg.lr.delay_steps),
                Phase::Recorded => FeedbackPath::Plant,
            };
            let mut rc = RunConfig::new(
                "lr-replay",
                DriverSpec::Lr {
                    model: model.clone(),
                    feedback,
                },
            );
            rc.actuator = cfg.actuator.clone();
            let replay = run_hybrid(&exp.model, &exp.ground_motion, &rc)?;
            let nrmse = evaluation::nrmse(&reference.displacement(), &replay.displacement())?;
            println!(
                "rows {}  rank {}  condition {:.3e}  collinear {:?}  replay nRMSE {:.4}%",
                report.rows, report.rank, report.condition_number, report.collinear_features, nrmse
            );
            let name = match phase {
                Phase::Synthetic => "lr-synthetic",
                Phase::Recorded => "lr-recorded",
            };
            o.json(&format!("{name}.json"), &model)?;
            o.json(
                &format!("{name}-report.json"),
                &serde_json::json!({
                    "training": report,
                    "replay_nrmse_percent": nrmse,
                    "config": cfg.to_json(),
                }),
            )?;
        }
        DriverKind::Rnn => {
            if phase == Phase::Recorded {
                bail!("the recurrent surrogate is trained on synthetic feedback only");
            }
            let exp = Experiment::new(cfg.clone())?;
            let ds = exp.rnn_dataset()?;
            let tc = TrainConfig {
                hidden_size: hidden.unwrap_or(cfg.rnn.train.hidden_size),
                ..cfg.rnn.train.clone()
            };
            let trained = train_rnn(&ds, &tc)?;
            let nrmse = replay_nrmse(&trained.model, &ds)?;
            println!(
                "hidden {}  epochs {}  replay nRMSE {:.4}%",
                tc.hidden_size,
                trained.losses.len(),
                nrmse
            );
            let name = format!("rnn-h{}", tc.hidden_size);
            o.json(&format!("{name}.json"), &trained.model)?;
            o.json(
                &format!("{name}-report.json"),
                &serde_json::json!({
                    "losses": trained.losses,
                    "replay_nrmse_percent": nrmse,
                    "config": cfg.to_json(),
                }),
            )?;
        }
    }
    for p in o.commit(out)? {
        println!("wrote {}", p.display());
    }
    Ok(true)
}

fn scenario_files(o: &mut Outputs, exp: &Experiment, e: &ScenarioEntry) -> Result<()> {
    let name = e.scenario.name();
    if let Some(h) = &e.history {
        o.add(format!("{name}.csv"), history_to_csv(h));
        let reference = if e.scenario == Scenario::PureFe {
            exp.oracle()?
        } else {
            exp.reference()?
        };
        let r = reference.displacement();
        let t = h.displacement();
        let err: Vec<f64> = r.iter().zip(&t).map(|(a, b)| b - a).collect();
        o.add(
            format!("{name}.svg"),
            overlay_svg(
                &format!("{name}: displacement, mm"),
                h.dt,
                &[(reference.id.as_str(), &r), (name, &t), ("error", &err)],
            ),
        );
        if !h.compensator_trace.is_empty() {
            o.add(
                format!("{name}-coefficients.csv"),
                coefficient_trace_csv(&h.compensator_trace),
            );
        }
    }
    Ok(())
}

fn report_checks(report: &MatrixReport, check: bool) -> bool {
    if !check {
        return true;
    }
    let mut ok = true;
    for c in check_thresholds(report) {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    ok
}

fn run(cfg: ExperimentConfig, out: &Path, scenario: Scenario, model: Option<&Path>, check: bool) -> Result<bool> {
    let exp = Experiment::new(cfg.clone())?;
    let report = match (model, scenario) {
        (None, _) => exp.run_matrix(&[scenario], cfg.run.exec),
        (Some(p), Scenario::LrPure | Scenario::LrOffline | Scenario::LrOnline) => {
            let m: LrModel = read_json(p)?;
            run_with_lr_model(&exp, scenario, m)?
        }
        (Some(_), _) => bail!("--model only applies to the lr-* scenarios"),
    };
    let entry = &report.scenarios[0];
    if let Some(e) = &entry.error {
        bail!("{e}");
    }
    let mut o = Outputs::default();
    scenario_files(&mut o, &exp, entry)?;
    o.json(&format!("{}.json", scenario.name()), &report)?;
    for p in o.commit(out)? {
        println!("wrote {}", p.display());
    }
    print!("{}", report.table());
    Ok(report_checks(&report, check))
}

fn run_with_lr_model(exp: &Experiment, scenario: Scenario, model: LrModel) -> Result<MatrixReport> {
    let cfg = &exp.config;
    let feedback = match scenario {
        Scenario::LrOnline => FeedbackPath::Plant,
        _ => FeedbackPath::SyntheticDelay(cfg.lr.delay_steps),
    };
    let mut rc = RunConfig::new(scenario.name(), DriverSpec::Lr { model, feedback });
    rc.actuator = cfg.actuator.clone();
    if cfg.run.real_time {
        rc.pacing = rths_core::runner::Pacing::RealTime {
            rate_hz: 1.0 / cfg.integrator.dt,
            injected_delay_us: 0,
        };
    }
    let started = std::time::Instant::now();
    let h = run_hybrid(&exp.model, &exp.ground_motion, &rc)?;
    let reference = exp.reference()?;
    let metrics = evaluation::compare(&reference.id, &reference.displacement(), &h.id, &h.displacement(), true)?;
    let entry = ScenarioEntry::from_outcome(rths_core::scenario::ScenarioOutcome {
        scenario,
        pacing: h.pacing.clone(),
        history: Some(h),
        metrics: Some(metrics),
        sweep: None,
        extra: None,
        elapsed_s: started.elapsed().as_secs_f64(),
    });
    Ok(MatrixReport::from_entries(cfg.to_json(), vec![entry]))
}

fn matrix(cfg: ExperimentConfig, out: &Path, scenarios: &[Scenario], check: bool) -> Result<bool> {
    let exp = Experiment::new(cfg.clone())?;
    let report = exp.run_matrix(scenarios, cfg.run.exec);
    let mut o = Outputs::default();
    for e in &report.scenarios {
        scenario_files(&mut o, &exp, e)?;
    }
    o.json("matrix.json", &report)?;
    o.add("matrix.txt", report.table());
    for p in o.commit(out)? {
        println!("wrote {}", p.display());
    }
    print!("{}", report.table());
    for e in &report.scenarios {
        if let Some(err) = &e.error {
            eprintln!("error: {err}");
        }
    }
    let checks_ok = report_checks(&report, check);
    if !report.all_ok() {
        bail!(
            "{} scenario(s) failed",
            report.scenarios.iter().filter(|e| e.error.is_some()).count()
        );
    }
    Ok(checks_ok)
}

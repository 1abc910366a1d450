//! Command-line pipeline: `certify`, `simulate`, `verify-iss`, `synthesize`.
//!
//! Exit codes: 0 when every check passes, 1 on a verification failure,
//! 2 on a configuration error.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::certify::{class_g_certificate, markov_certificate, uh_certificate, CertificateKind, CertificateReport, UhTuning};
use crate::error::{Error, Result};
use crate::lyapunov::DecrementReport;
use crate::model::SwitchedSystem;
use crate::montecarlo::{
    run_batch, verify_bounded, verify_class_g_envelope, verify_iss_l1, AuditSummary, BatchSpec, ClassGEnvelope,
    EnvelopeCheck, IssVerdict, MIN_BATCH_PATHS,
};
use crate::sim::integrate;
use crate::switching::SwitchingGenerator;
use crate::synthesis::{assemble_closed_loop, check_closed_loop, make_mode_dependent, ControllerKind, Provenance, WBarPolicy};

use config::{Experiment, ExperimentConfig};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "switchstab", version, about = "Stability certificates and Monte Carlo checks for randomly switched systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the Lyapunov conditions and compute the switching certificate.
    Certify(RunArgs),
    /// Write sample trajectories as CSV.
    Simulate(RunArgs),
    /// Certify, then verify the certified bounds by Monte Carlo.
    VerifyIss(RunArgs),
    /// Build a feedback controller and verify the closed loop.
    Synthesize(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trajectories: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

/// What a command produced.
#[derive(Debug)]
pub struct Outcome {
    pub pass: bool,
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovChecks {
    pub sandwich: DecrementReport,
    pub decrement: DecrementReport,
    pub mu: f64,
    pub exact_mu: f64,
    pub mu_pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertifyReport {
    pub checks: LyapunovChecks,
    pub tuning: Option<UhTuning>,
    pub certificate: CertificateReport,
    /// Why the run cannot be certified, if it cannot.
    pub refusal: Option<String>,
    pub warnings: Vec<String>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BatchSummary {
    pub n_paths: usize,
    pub base_seed: u64,
    pub horizon: f64,
    pub step: f64,
    pub coverage: Vec<usize>,
    pub audit: Option<AuditSummary>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Boundedness {
    pub level: f64,
    pub check: EnvelopeCheck,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub certify: CertifyReport,
    pub batch: Option<BatchSummary>,
    pub iss: Option<IssVerdict>,
    pub envelope: Option<ClassGEnvelope>,
    pub boundedness: Option<Boundedness>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ControllerSummary {
    pub kind: ControllerKind,
    pub provenance: Provenance,
    pub w_bar: Option<WBarPolicy>,
    /// Largest `‖u‖` over the state grid and all modes.
    pub max_control_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SynthesisReport {
    pub controller: ControllerSummary,
    pub closed_loop_check: DecrementReport,
    pub verify: Option<VerifyReport>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
struct SimulatedPath {
    file: String,
    seed: u64,
    n_jumps: usize,
    final_state: Vec<f64>,
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("artifacts written to {}", outcome.output_dir.display());
            if outcome.pass {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_FAIL,
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let (Command::Certify(args) | Command::Simulate(args) | Command::VerifyIss(args) | Command::Synthesize(args)) =
        &cli.command;
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(m) = args.trajectories {
        cfg.experiment.trajectories = m;
    }
    if let Some(dir) = &args.output_dir {
        cfg.outputs.dir = dir.display().to_string();
    }
    let exp = Experiment::from_config(cfg)?;
    let out = PathBuf::from(&exp.config.outputs.dir);
    fs::create_dir_all(&out)?;
    let mut writer = Writer::new(out);
    writer.write("config.json", &exp.config.to_json())?;
    let (pass, summary) = match &cli.command {
        Command::Certify(_) => cmd_certify(&exp, &mut writer)?,
        Command::Simulate(_) => cmd_simulate(&exp, &mut writer)?,
        Command::VerifyIss(_) => cmd_verify_iss(&exp, &mut writer)?,
        Command::Synthesize(_) => cmd_synthesize(&exp, &mut writer)?,
    };
    Ok(Outcome {
        pass,
        output_dir: writer.dir,
        files: writer.files,
        summary,
    })
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: PathBuf) -> Self {
        Self { dir, files: Vec::new() }
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }
}

fn verdict_word(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Checks the Lyapunov conditions for `sys` and computes the certificate
/// matching the configured switching law.
pub fn certify_stage(exp: &Experiment, sys: &SwitchedSystem) -> Result<CertifyReport> {
    let fam = &exp.fam;
    let grid = &exp.config.lyapunov.grid;
    let xs = grid.states(sys.state_dim());
    let ds = grid.disturbances(sys.dist_dim());
    let sandwich = fam.check_sandwich(&xs);
    let decrement = fam.check_decrement(sys, &xs, &ds)?;
    let exact_mu = fam.exact_mu();
    let mu_pass = fam.mu_is_valid();
    let mut warnings = exp.warnings.clone();

    let certificate = match &exp.generator {
        SwitchingGenerator::Uh { params, .. } => uh_certificate(fam, params)?,
        SwitchingGenerator::ClassG { params, .. } => {
            let report = class_g_certificate(fam, params);
            match (exp.config.experiment.rho, exp.config.experiment.eta_ball, report.pass) {
                (Some(rho), Some(eta_ball), true) => {
                    report.with_excursion_gain(fam.alpha2(), rho, eta_ball, exp.config.experiment.delta)?
                }
                _ => report,
            }
        }
        SwitchingGenerator::Ctmc { params, .. } => {
            let lambda_circ = exp
                .config
                .experiment
                .lambda_circ
                .ok_or_else(|| Error::config("experiment.lambda_circ", "required for ctmc switching"))?;
            markov_certificate(sys, fam, params, exp.rho()?, lambda_circ, &xs, &ds)?
        }
    };
    // the generator check replaces per-mode dissipation under Markov switching
    let markov = certificate.kind == CertificateKind::Markov;
    if markov && !decrement.pass {
        warnings.push("per-mode dissipation fails on the grid; only the generator condition is used".into());
    }

    let refusal = if !sandwich.pass {
        Some("sandwich bounds violated on the grid".to_string())
    } else if !mu_pass {
        Some(format!("mu = {} is below the exact compatibility constant {exact_mu}", fam.mu()))
    } else if !decrement.pass && !markov {
        let w = decrement.witness.as_ref().expect("failing check has a witness");
        Some(format!(
            "dissipation violated in mode {} at x = {:?}, d = {:?} (residual {:.3e})",
            w.mode, w.x, w.d, w.residual
        ))
    } else if !certificate.pass {
        certificate.reason.clone()
    } else {
        None
    };

    Ok(CertifyReport {
        checks: LyapunovChecks {
            sandwich,
            decrement,
            mu: fam.mu(),
            exact_mu,
            mu_pass,
        },
        tuning: exp.tuning.clone(),
        pass: refusal.is_none(),
        certificate,
        refusal,
        warnings,
    })
}

fn certify_summary(r: &CertifyReport) -> Vec<String> {
    let c = &r.certificate;
    let mut lines = vec![format!("certificate ({:?}): {}", c.kind, verdict_word(r.pass))];
    if let Some(eta) = c.eta {
        lines.push(format!("  eta = {eta:.6}"));
    }
    if let Some(k) = c.k_prime {
        lines.push(format!("  k' = {k:.6}"));
    }
    if let Some(m) = c.margin {
        lines.push(format!("  margin = {m:.6}"));
    }
    if let Some(reason) = &r.refusal {
        lines.push(format!("  refused: {reason}"));
    }
    lines.extend(r.warnings.iter().map(|w| format!("  warning: {w}")));
    lines
}

fn cmd_certify(exp: &Experiment, w: &mut Writer) -> Result<(bool, Vec<String>)> {
    let report = certify_stage(exp, &exp.sys)?;
    w.json("report.json", &report)?;
    Ok((report.pass, certify_summary(&report)))
}

fn cmd_simulate(exp: &Experiment, w: &mut Writer) -> Result<(bool, Vec<String>)> {
    let horizon = exp.horizon()?;
    let ex = &exp.config.experiment;
    let mut paths = Vec::new();
    for i in 0..exp.config.outputs.trajectories {
        let seed = ex.seed.wrapping_add(i as u64);
        let path = exp.generator.sample(horizon, seed)?;
        let traj = integrate(&exp.sys, &path, &exp.disturbance, None, &exp.x0, ex.step)?;
        let file = format!("trajectory_{i}.csv");
        w.write(&file, &traj.to_csv())?;
        paths.push(SimulatedPath {
            file,
            seed,
            n_jumps: path.n_jumps(),
            final_state: traj.final_state().iter().copied().collect(),
        });
    }
    w.json("report.json", &paths)?;
    Ok((true, vec![format!("simulated {} trajectories", paths.len())]))
}

/// Certifies `sys`, then runs the Monte Carlo check matching the switching law.
pub fn verify_stage(exp: &Experiment, sys: &SwitchedSystem) -> Result<VerifyReport> {
    let certify = certify_stage(exp, sys)?;
    let mut report = VerifyReport {
        certify,
        batch: None,
        iss: None,
        envelope: None,
        boundedness: None,
        pass: false,
    };
    if !report.certify.pass {
        return Ok(report);
    }
    let ex = &exp.config.experiment;
    if ex.trajectories < MIN_BATCH_PATHS {
        return Err(Error::config(
            "experiment.trajectories",
            format!("Monte Carlo verification needs at least {MIN_BATCH_PATHS} paths"),
        ));
    }
    let mut spec = BatchSpec::new(ex.trajectories, ex.seed, 0, exp.horizon()?, ex.step);
    match &exp.generator {
        SwitchingGenerator::Uh { .. } => {
            spec.nu_max = ex.nu_max;
            spec.audit = ex.audit;
        }
        SwitchingGenerator::ClassG { .. } => {
            spec.time_grid = exp.time_grid()?;
            spec.excursions = Some(exp.excursion_params()?);
            spec.audit = ex.audit;
        }
        SwitchingGenerator::Ctmc { .. } => {
            spec.time_grid = exp.time_grid()?;
        }
    }
    let batch = run_batch(sys, &exp.generator, &exp.disturbance, &exp.fam, &exp.x0, &spec)?;
    let audit = batch.audit_summary();
    let audit_pass = audit.as_ref().is_none_or(|a| a.pass);
    let cert = &report.certify.certificate;
    let check_pass = match &exp.generator {
        SwitchingGenerator::Uh { .. } => {
            let verdict = verify_iss_l1(&batch, cert, &exp.fam, &exp.x0, &exp.disturbance)?;
            let pass = verdict.pass;
            report.iss = Some(verdict);
            pass
        }
        SwitchingGenerator::ClassG { .. } => {
            let env = verify_class_g_envelope(&batch, &exp.fam, cert, &exp.x0)?;
            let pass = env.pass;
            report.envelope = Some(env);
            pass
        }
        SwitchingGenerator::Ctmc { .. } => {
            let alpha2 = exp.fam.alpha2();
            let level = alpha2
                .at(exp.x0.norm())
                .max(alpha2.at(exp.rho()?.at(exp.disturbance.sup_norm())));
            let check = verify_bounded(&batch, level);
            let pass = check.pass;
            report.boundedness = Some(Boundedness { level, check });
            pass
        }
    };
    report.batch = Some(BatchSummary {
        n_paths: spec.n_paths,
        base_seed: spec.base_seed,
        horizon: spec.horizon,
        step: spec.step,
        coverage: batch.coverage.clone(),
        audit,
        warnings: batch.warnings.clone(),
    });
    report.pass = check_pass && audit_pass;
    Ok(report)
}

fn write_verify_artifacts(report: &VerifyReport, w: &mut Writer, prefix: &str) -> Result<()> {
    if let Some(v) = &report.iss {
        w.write(&format!("{prefix}verdict.csv"), &v.to_csv())?;
        w.write(&format!("{prefix}verdict.json"), &(v.to_json() + "\n"))?;
    }
    if let Some(env) = &report.envelope {
        w.write(&format!("{prefix}envelope_pre_entry.csv"), &env.pre_entry.to_csv())?;
        w.write(&format!("{prefix}envelope_post_exit.csv"), &env.post_exit.to_csv())?;
    }
    if let Some(b) = &report.boundedness {
        w.write(&format!("{prefix}envelope_boundedness.csv"), &b.check.to_csv())?;
    }
    Ok(())
}

fn verify_summary(report: &VerifyReport) -> Vec<String> {
    let mut lines = certify_summary(&report.certify);
    if let Some(b) = &report.batch {
        lines.push(format!("monte carlo: {} paths, seed {}", b.n_paths, b.base_seed));
        if let Some(a) = &b.audit {
            lines.push(format!(
                "  audit: {}/{} paths pass (max residual {:.3e})",
                a.n_pass, a.n_paths, a.max_residual
            ));
        }
        lines.extend(b.warnings.iter().map(|w| format!("  warning: {w}")));
    }
    if let Some(v) = &report.iss {
        let failing = v.rows.iter().filter(|r| !r.pass).count();
        lines.push(format!("  ISS-in-the-mean rows: {} of {} pass", v.rows.len() - failing, v.rows.len()));
    }
    if let Some(e) = &report.envelope {
        lines.push(format!("  pre-entry envelope: {}", verdict_word(e.pre_entry.pass)));
        lines.push(format!(
            "  post-exit parametric envelope: {} ({} paths exit)",
            verdict_word(e.post_exit.pass),
            e.n_paths_with_exit
        ));
    }
    if let Some(b) = &report.boundedness {
        lines.push(format!("  boundedness below {:.6}: {}", b.level, verdict_word(b.check.pass)));
    }
    lines.push(format!("verdict: {}", verdict_word(report.pass)));
    lines
}

fn cmd_verify_iss(exp: &Experiment, w: &mut Writer) -> Result<(bool, Vec<String>)> {
    let report = verify_stage(exp, &exp.sys)?;
    w.json("report.json", &report)?;
    write_verify_artifacts(&report, w, "")?;
    Ok((report.pass, verify_summary(&report)))
}

fn cmd_synthesize(exp: &Experiment, w: &mut Writer) -> Result<(bool, Vec<String>)> {
    let sys = &exp.sys;
    if sys.ctrl_dim() == 0 {
        return Err(Error::config("system.G", "synthesis needs control channels"));
    }
    if exp.config.lyapunov.rates.is_none() {
        return Err(Error::config("lyapunov.rates", "synthesis needs explicit target rates"));
    }
    let (controller, w_bar) = match exp.user_controller() {
        Some(c) => (c, None),
        None => {
            let policy = exp.w_bar_policy();
            (make_mode_dependent(sys, &exp.fam, policy)?, Some(policy))
        }
    };
    let grid = &exp.config.lyapunov.grid;
    let xs = grid.states(sys.state_dim());
    let ds = grid.disturbances(sys.dist_dim());
    let closed_loop_check = check_closed_loop(sys, &exp.fam, &controller, &xs, &ds)?;
    let max_control_norm = (0..sys.n_modes())
        .flat_map(|j| xs.iter().map(move |x| (j, x)))
        .map(|(j, x)| controller.control(j, x).norm())
        .fold(0.0, f64::max);
    let verify = if closed_loop_check.pass {
        let closed = assemble_closed_loop(sys, &controller)?;
        Some(verify_stage(exp, &closed)?)
    } else {
        None
    };
    let pass = closed_loop_check.pass && verify.as_ref().is_some_and(|v| v.pass);
    let report = SynthesisReport {
        controller: ControllerSummary {
            kind: controller.kind(),
            provenance: controller.provenance(),
            w_bar,
            max_control_norm,
        },
        closed_loop_check,
        verify,
        pass,
    };
    w.json("report.json", &report)?;
    let mut lines = vec![format!(
        "controller ({:?}, {:?}): closed-loop dissipation {} (max residual {:.3e})",
        report.controller.kind,
        report.controller.provenance,
        verdict_word(report.closed_loop_check.pass),
        report.closed_loop_check.max_residual
    )];
    if let Some(wit) = &report.closed_loop_check.witness {
        if !report.closed_loop_check.pass {
            lines.push(format!("  witness: mode {} x = {:?} d = {:?}", wit.mode, wit.x, wit.d));
        }
    }
    if let Some(v) = &report.verify {
        write_verify_artifacts(v, w, "closed_loop_")?;
        lines.extend(verify_summary(v));
    } else {
        lines.push(format!("verdict: {}", verdict_word(false)));
    }
    Ok((pass, lines))
}

/// Convenience for tests and scripts: runs one subcommand on a config file.
pub fn run_command(command: &str, config: &Path, output_dir: &Path, extra: &[&str]) -> i32 {
    let mut args: Vec<OsString> = vec!["switchstab".into(), command.into(), "--config".into(), config.into()];
    args.push("--output-dir".into());
    args.push(output_dir.into());
    args.extend(extra.iter().map(OsString::from));
    main_with_args(args)
}

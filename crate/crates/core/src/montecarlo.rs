//! Batch simulation and statistical verification.
//!
//! Paths are simulated in parallel with per-path seeds `base_seed + index`;
//! every estimator folds its samples sequentially in path-index order, so a
//! fixed [`BatchSpec`] reproduces the same numbers bit for bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{class_g_fingerprint, phi0, relaxation_factor, uh_bound, uh_fingerprint, CertificateKind, CertificateReport};
use crate::error::{Error, Result};
use crate::lyapunov::LyapunovFamily;
use crate::model::{DisturbanceSignal, PowerGain, SwitchedSystem, Vector};
use crate::sim::{integrate_with, IntegrationOptions, Trajectory};
use crate::stats::{MeanEstimate, SE_SLACK};
use crate::switching::{SwitchingGenerator, SwitchingPath, UhParams};

/// Slack on the per-interval audit residual (integration error).
pub const AUDIT_TOL: f64 = 1e-7;

/// Fraction of paths that must reach a switching index before its
/// estimate is trusted.
pub const MIN_COVERAGE: f64 = 0.99;

pub const MIN_BATCH_PATHS: usize = 100;

/// Ball parameters for excursion detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcursionParams {
    /// Gain margin: dissipation is only required outside `‖x‖ < ρ(‖d‖)`.
    pub rho: PowerGain,
    /// Inflation of the exit ball, `C₂ = {‖x‖ < eta_ball ρ(‖d‖)}`.
    pub eta_ball: f64,
    /// Constant in the post-exit gain `(1 + 1/δ) α₂(eta_ball ρ(r))`.
    #[serde(default = "ExcursionParams::default_delta")]
    pub delta: f64,
}

impl ExcursionParams {
    fn default_delta() -> f64 {
        1.0
    }

    /// Checks `eta_ball, δ > 0` and `α₁(eta_ball ρ(r)) > 2 α₂(ρ(r))` at `r = d_sup`.
    pub fn validate(&self, fam: &LyapunovFamily, d_sup: f64) -> Result<()> {
        if !(self.eta_ball > 0.0 && self.delta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eta_ball and delta must be positive, got {} and {}",
                self.eta_ball, self.delta
            )));
        }
        if d_sup > 0.0 {
            let r = self.rho.eval(d_sup)?;
            let lhs = fam.alpha1().at(self.eta_ball * r);
            let rhs = 2.0 * fam.alpha2().at(r);
            if lhs <= rhs {
                return Err(Error::InvalidParameter(format!(
                    "eta_ball = {} too small: alpha1(eta_ball rho(d)) = {lhs} does not exceed 2 alpha2(rho(d)) = {rhs}",
                    self.eta_ball
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub n_paths: usize,
    pub base_seed: u64,
    /// Deepest switching index estimated.
    pub nu_max: usize,
    pub horizon: f64,
    pub step: f64,
    /// Times at which `V_{σ(t)}(x(t))` is recorded on every path.
    #[serde(default)]
    pub time_grid: Vec<f64>,
    #[serde(default)]
    pub excursions: Option<ExcursionParams>,
    /// Run the per-interval audit on every path.
    #[serde(default)]
    pub audit: bool,
}

impl BatchSpec {
    pub fn new(n_paths: usize, base_seed: u64, nu_max: usize, horizon: f64, step: f64) -> Self {
        Self {
            n_paths,
            base_seed,
            nu_max,
            horizon,
            step,
            time_grid: Vec::new(),
            excursions: None,
            audit: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < MIN_BATCH_PATHS {
            return Err(Error::InvalidParameter(format!(
                "a batch needs at least {MIN_BATCH_PATHS} paths, got {}",
                self.n_paths
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {}", self.step)));
        }
        if let Some(t) = self.time_grid.iter().find(|t| !(0.0..=self.horizon).contains(*t)) {
            return Err(Error::InvalidParameter(format!(
                "time grid point {t} lies outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// State and Lyapunov value at one switching instant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SwitchRecord {
    pub nu: usize,
    pub tau: f64,
    pub state: Vec<f64>,
    pub mode: usize,
    pub v: f64,
}

/// Entry times into `C₁` and exit times from `C₂`, alternating
/// `ť₁ < t̂₁ < ť₂ < …`. Times never attained are simply missing.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExcursionRecord {
    pub entries: Vec<f64>,
    pub exits: Vec<f64>,
}

impl ExcursionRecord {
    pub fn first_entry(&self) -> Option<f64> {
        self.entries.first().copied()
    }

    /// All present times in order `ť₁, t̂₁, ť₂, …`.
    pub fn interleaved(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.entries.len() + self.exits.len());
        for (i, e) in self.entries.iter().enumerate() {
            out.push(*e);
            if let Some(x) = self.exits.get(i) {
                out.push(*x);
            }
        }
        out
    }

    pub fn is_interleaved(&self) -> bool {
        let n_e = self.entries.len();
        let n_x = self.exits.len();
        (n_x == n_e || n_x + 1 == n_e) && self.interleaved().windows(2).all(|w| w[0] < w[1])
    }

    /// `t < ť₁`.
    pub fn before_first_entry(&self, t: f64) -> bool {
        self.first_entry().is_none_or(|e| t < e)
    }

    /// `t ∈ [t̂_j, ť_{j+1})` for some `j`.
    pub fn after_exit(&self, t: f64) -> bool {
        self.exits
            .iter()
            .enumerate()
            .any(|(j, &x)| t >= x && self.entries.get(j + 1).is_none_or(|&e| t < e))
    }
}

/// Per-path output of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub index: usize,
    pub seed: u64,
    pub path: SwitchingPath,
    pub v0: f64,
    /// Records for `ν = 1..=min(ν_max, jumps within the horizon)`.
    pub switches: Vec<SwitchRecord>,
    /// `V_{σ(t)}(x(t))` on the batch time grid.
    pub grid_v: Vec<f64>,
    pub excursions: Option<ExcursionRecord>,
    /// Largest audit residual (`NEG_INFINITY` for paths without switches).
    pub audit_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditSummary {
    pub n_paths: usize,
    pub n_pass: usize,
    pub max_residual: f64,
    pub worst_path: Option<usize>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchResult {
    pub spec: BatchSpec,
    pub x0: Vector,
    pub d_sup: f64,
    pub paths: Vec<PathRecord>,
    /// Number of paths reaching `τ_ν`, for `ν = 1..=ν_max`.
    pub coverage: Vec<usize>,
    pub warnings: Vec<String>,
    /// Digest matching the certificate for this family and switching law.
    pub certificate_fingerprint: Option<String>,
    pub system_fingerprint: String,
}

impl BatchResult {
    /// Whether the estimate at switching index `nu` is based on enough paths.
    pub fn is_covered(&self, nu: usize) -> bool {
        nu >= 1
            && self
                .coverage
                .get(nu - 1)
                .is_some_and(|&c| c as f64 >= MIN_COVERAGE * self.paths.len() as f64)
    }

    pub fn audit_summary(&self) -> Option<AuditSummary> {
        if !self.spec.audit {
            return None;
        }
        let mut n_pass = 0;
        let mut max_residual = f64::NEG_INFINITY;
        let mut worst_path = None;
        for p in &self.paths {
            let r = p.audit_max.unwrap_or(f64::NEG_INFINITY);
            if r <= AUDIT_TOL {
                n_pass += 1;
            }
            if r > max_residual {
                max_residual = r;
                worst_path = Some(p.index);
            }
        }
        Some(AuditSummary {
            n_paths: self.paths.len(),
            n_pass,
            max_residual,
            worst_path,
            pass: n_pass == self.paths.len(),
        })
    }
}

fn certificate_fingerprint(fam: &LyapunovFamily, generator: &SwitchingGenerator) -> Option<String> {
    match generator {
        SwitchingGenerator::Uh { params, .. } => Some(uh_fingerprint(fam.mu(), fam.rates(), &params.q, params.t_max)),
        SwitchingGenerator::ClassG { params, .. } => {
            let lambda_circ = fam.rates().iter().copied().fold(f64::INFINITY, f64::min);
            Some(class_g_fingerprint(fam.mu(), lambda_circ, params))
        }
        SwitchingGenerator::Ctmc { .. } => None,
    }
}

/// Simulates `spec.n_paths` independent paths and records switch samples,
/// grid values, excursions and audit residuals as requested by `spec`.
pub fn run_batch(
    sys: &SwitchedSystem,
    generator: &SwitchingGenerator,
    d: &DisturbanceSignal,
    fam: &LyapunovFamily,
    x0: &Vector,
    spec: &BatchSpec,
) -> Result<BatchResult> {
    spec.validate()?;
    d.validate()?;
    if generator.n_modes() != sys.n_modes() || fam.n_modes() != sys.n_modes() {
        return Err(Error::InvalidParameter(format!(
            "system has {} modes, switching law {}, Lyapunov family {}",
            sys.n_modes(),
            generator.n_modes(),
            fam.n_modes()
        )));
    }
    if fam.state_dim() != sys.state_dim() {
        return Err(Error::InvalidParameter("Lyapunov family and system state dimensions differ".into()));
    }
    let d_sup = d.sup_norm();
    if let Some(ex) = &spec.excursions {
        ex.validate(fam, d_sup)?;
    }

    let opts = IntegrationOptions {
        step: spec.step,
        output_times: spec.time_grid.clone(),
        dense: spec.excursions.is_some(),
    };

    let paths: Vec<PathRecord> = (0..spec.n_paths)
        .into_par_iter()
        .map(|index| {
            let seed = spec.base_seed.wrapping_add(index as u64);
            let path = generator.sample(spec.horizon, seed)?;
            let traj = integrate_with(sys, &path, d, None, x0, &opts)?;
            let switches = traj
                .switch_samples
                .iter()
                .take(spec.nu_max)
                .map(|s| SwitchRecord {
                    nu: s.nu,
                    tau: s.tau,
                    state: s.state.iter().copied().collect(),
                    mode: s.mode,
                    v: fam.eval_v(s.mode, &s.state),
                })
                .collect();
            let grid_v = spec
                .time_grid
                .iter()
                .map(|&t| {
                    let k = traj.index_of(t).expect("grid times are integration breakpoints");
                    fam.eval_v(traj.modes[k], &traj.states[k])
                })
                .collect();
            let excursions = spec
                .excursions
                .as_ref()
                .map(|ex| detect_excursions(&traj, ex.rho, d_sup, ex.eta_ball));
            let audit_max = spec.audit.then(|| {
                audit_iterated_inequality(&traj, fam, d_sup)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            });
            Ok(PathRecord {
                index,
                seed,
                v0: fam.eval_v(path.initial_mode(), x0),
                path,
                switches,
                grid_v,
                excursions,
                audit_max,
            })
        })
        .collect::<Result<_>>()?;

    let coverage: Vec<usize> = (1..=spec.nu_max)
        .map(|nu| paths.iter().filter(|p| p.switches.len() >= nu).count())
        .collect();
    let mut warnings = Vec::new();
    let short: Vec<usize> = coverage
        .iter()
        .enumerate()
        .filter(|(_, &c)| (c as f64) < MIN_COVERAGE * spec.n_paths as f64)
        .map(|(i, _)| i + 1)
        .collect();
    if let Some(first) = short.first() {
        warnings.push(format!(
            "fewer than {:.0}% of paths reach switching index {first} within the horizon; estimates for nu >= {first} are flagged",
            MIN_COVERAGE * 100.0
        ));
    }

    Ok(BatchResult {
        spec: spec.clone(),
        x0: x0.clone(),
        d_sup,
        paths,
        coverage,
        warnings,
        certificate_fingerprint: certificate_fingerprint(fam, generator),
        system_fingerprint: format!("{:016x}", sys.fingerprint()),
    })
}

/// Residuals of the one-step estimate
/// `V_{σ(τ_{i+1})}(x(τ_{i+1})) ≤ μ V_{σ(τ_i)}(x(τ_i)) e^{−λS} + μ χ(d_sup) (1 − e^{−λS})/λ`,
/// with `λ = λ_{σ(τ_i)}`, `S = τ_{i+1} − τ_i`, `τ₀ = 0`. One entry per
/// consecutive pair of instants; empty when the path never switches.
pub fn audit_iterated_inequality(traj: &Trajectory, fam: &LyapunovFamily, d_sup: f64) -> Vec<f64> {
    let mu = fam.mu();
    let chi = fam.chi().at(d_sup);
    let mut tau = 0.0;
    let mut mode = traj.path.initial_mode();
    let mut v = fam.eval_v(mode, traj.initial_state());
    traj.switch_samples
        .iter()
        .map(|s| {
            let lambda = fam.rates()[mode];
            let dt = s.tau - tau;
            let decay = (-lambda * dt).exp();
            // (1 − e^{−λS})/λ = S φ₀(λS), finite for every sign of λ
            let rhs = mu * v * decay + mu * chi * dt * phi0(lambda * dt);
            let v_next = fam.eval_v(s.mode, &s.state);
            tau = s.tau;
            mode = s.mode;
            v = v_next;
            v_next - rhs
        })
        .collect()
}

/// Scans the dense trajectory for entries into `‖x‖ < ρ(d_sup)` and exits
/// from `‖x‖ < eta_ball ρ(d_sup)`, alternating, at sample times `t > 0`.
pub fn detect_excursions(traj: &Trajectory, rho: PowerGain, d_sup: f64, eta_ball: f64) -> ExcursionRecord {
    let inner = rho.at(d_sup);
    let outer = eta_ball * inner;
    let mut rec = ExcursionRecord::default();
    let mut inside = false;
    for (t, x) in traj.times.iter().zip(&traj.states).skip(1) {
        let r = x.norm();
        if !inside && r < inner {
            rec.entries.push(*t);
            inside = true;
        } else if inside && r >= outer {
            rec.exits.push(*t);
            inside = false;
        }
    }
    rec
}

/// One row of an ISS-in-the-mean verdict.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IssRow {
    pub nu: usize,
    pub mean_v: f64,
    pub se_v: f64,
    pub bound: f64,
    pub pass: bool,
    pub mean_alpha1: f64,
    pub se_alpha1: f64,
    pub n: usize,
    /// Fewer than 99% of paths reached this index.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IssVerdict {
    pub rows: Vec<IssRow>,
    pub pass: bool,
    pub warnings: Vec<String>,
}

impl IssVerdict {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("nu,mean_V,se_V,bound,pass,mean_alpha1,se_alpha1\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.nu, r.mean_v, r.se_v, r.bound, r.pass, r.mean_alpha1, r.se_alpha1
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serializes")
    }
}

fn check_fingerprint(batch: &BatchResult, report: &CertificateReport) -> Result<()> {
    match &batch.certificate_fingerprint {
        Some(fp) if *fp == report.fingerprint => Ok(()),
        _ => Err(Error::Refused(
            "batch was generated for a different Lyapunov family or switching law than the certificate".into(),
        )),
    }
}

/// Compares `E[V_{σ(τ_ν)}(x(τ_ν))]` with `α₂(‖x₀‖) η^ν + k′ χ(‖d‖)` for
/// `ν = 1..=ν_max`. A row fails when its mean exceeds the bound by more
/// than three standard errors.
pub fn verify_iss_l1(
    batch: &BatchResult,
    report: &CertificateReport,
    fam: &LyapunovFamily,
    x0: &Vector,
    d: &DisturbanceSignal,
) -> Result<IssVerdict> {
    if report.kind != CertificateKind::Uh {
        return Err(Error::Refused("ISS-in-the-mean verification needs a class-UH certificate".into()));
    }
    check_fingerprint(batch, report)?;
    let alpha1 = fam.alpha1();
    let mut rows = Vec::with_capacity(batch.spec.nu_max);
    for nu in 1..=batch.spec.nu_max {
        let recs: Vec<&SwitchRecord> = batch.paths.iter().filter_map(|p| p.switches.get(nu - 1)).collect();
        let vs: Vec<f64> = recs.iter().map(|r| r.v).collect();
        let a1: Vec<f64> = recs
            .iter()
            .map(|r| alpha1.at(r.state.iter().map(|v| v * v).sum::<f64>().sqrt()))
            .collect();
        let est_v = MeanEstimate::from_samples(&vs);
        let est_a = MeanEstimate::from_samples(&a1);
        let bound = uh_bound(fam, report, x0.norm(), d.sup_norm(), nu as u32)?;
        rows.push(IssRow {
            nu,
            mean_v: est_v.mean,
            se_v: est_v.se,
            bound,
            pass: est_v.within_upper(bound, SE_SLACK),
            mean_alpha1: est_a.mean,
            se_alpha1: est_a.se,
            n: est_v.n,
            flagged: !batch.is_covered(nu),
        });
    }
    Ok(IssVerdict {
        pass: rows.iter().all(|r| r.pass),
        rows,
        warnings: batch.warnings.clone(),
    })
}

/// Sample means of the one-interval factors `e^{−λ_{σ(τ₁)} S₂}` and
/// `(1 − e^{−λ_{σ(τ₁)} S₂})/λ_{σ(τ₁)}`, with their closed forms under a
/// uniform-holding-time law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BuildingBlocks {
    pub decay: MeanEstimate,
    pub decay_expected: f64,
    pub relaxation: MeanEstimate,
    pub relaxation_expected: f64,
}

impl BuildingBlocks {
    pub fn agree(&self, slack: f64) -> bool {
        self.decay.agrees_with(self.decay_expected, slack) && self.relaxation.agrees_with(self.relaxation_expected, slack)
    }
}

/// Uses the interval `[τ₁, τ₂)` of each path, whose mode is a fresh draw
/// from `q` whatever the initial-mode rule. Paths without `τ₂` are skipped.
pub fn building_blocks(paths: &[SwitchingPath], rates: &[f64], p: &UhParams) -> Result<BuildingBlocks> {
    if rates.len() != p.n_modes() {
        return Err(Error::InvalidParameter("rates and mode law differ in length".into()));
    }
    let mut decay = Vec::with_capacity(paths.len());
    let mut relax = Vec::with_capacity(paths.len());
    for path in paths {
        let jumps = path.jump_times();
        if jumps.len() < 2 {
            continue;
        }
        let lambda = rates[path.modes()[1]];
        let s = jumps[1] - jumps[0];
        decay.push((-lambda * s).exp());
        relax.push(s * phi0(lambda * s));
    }
    let weighted = |f: &dyn Fn(f64) -> f64| -> f64 { rates.iter().zip(&p.q).map(|(l, q)| q * f(*l)).sum() };
    Ok(BuildingBlocks {
        decay: MeanEstimate::from_samples(&decay),
        decay_expected: weighted(&|l| phi0(l * p.t_max)),
        relaxation: MeanEstimate::from_samples(&relax),
        relaxation_expected: weighted(&|l| relaxation_factor(l, p.t_max)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FirstTermRow {
    pub nu: usize,
    pub estimate: MeanEstimate,
    pub bound: f64,
    pub pass: bool,
}

/// Estimates `E[μ^ν V_{σ₀}(x₀) Π_{i<ν} e^{−λ_{σ(τ_i)} S_{i+1}}]` and
/// compares it with `α₂(‖x₀‖) η^ν`.
pub fn first_term_check(batch: &BatchResult, fam: &LyapunovFamily, eta: f64) -> Vec<FirstTermRow> {
    let alpha2_x0 = fam.alpha2().at(batch.x0.norm());
    (1..=batch.spec.nu_max)
        .map(|nu| {
            let samples: Vec<f64> = batch
                .paths
                .iter()
                .filter(|p| p.path.n_jumps() >= nu)
                .map(|p| {
                    let jumps = p.path.jump_times();
                    let modes = p.path.modes();
                    let mut prev = 0.0;
                    let mut acc = p.v0;
                    for i in 0..nu {
                        acc *= fam.mu() * (-fam.rates()[modes[i]] * (jumps[i] - prev)).exp();
                        prev = jumps[i];
                    }
                    acc
                })
                .collect();
            let estimate = MeanEstimate::from_samples(&samples);
            let bound = alpha2_x0 * eta.powi(nu as i32);
            FirstTermRow {
                nu,
                estimate,
                bound,
                pass: estimate.within_upper(bound, SE_SLACK),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvelopeCheckRow {
    pub t: f64,
    pub estimate: f64,
    pub se: f64,
    pub envelope: f64,
    pub pass: bool,
}

/// A time-indexed estimate checked against an envelope.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeCheck {
    pub label: String,
    pub rows: Vec<EnvelopeCheckRow>,
    pub pass: bool,
}

impl EnvelopeCheck {
    fn from_rows(label: &str, rows: Vec<EnvelopeCheckRow>) -> Self {
        Self {
            label: label.into(),
            pass: rows.iter().all(|r| r.pass),
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,estimate,se,envelope,pass\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.t, r.estimate, r.se, r.envelope, r.pass));
        }
        out
    }
}

fn grid_check<F, G>(batch: &BatchResult, label: &str, indicator: F, envelope: G) -> EnvelopeCheck
where
    F: Fn(&PathRecord, f64) -> bool,
    G: Fn(f64) -> f64,
{
    let rows = batch
        .spec
        .time_grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let samples: Vec<f64> = batch
                .paths
                .iter()
                .map(|p| if indicator(p, t) { p.grid_v[k] } else { 0.0 })
                .collect();
            let est = MeanEstimate::from_samples(&samples);
            let env = envelope(t);
            EnvelopeCheckRow {
                t,
                estimate: est.mean,
                se: est.se,
                envelope: env,
                pass: est.within_upper(env, SE_SLACK),
            }
        })
        .collect();
    EnvelopeCheck::from_rows(label, rows)
}

/// Both regimes of the class-G argument, checked separately.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassGEnvelope {
    /// `E[V·1{t < ť₁}] ≤ α₂(‖x₀‖) e^{−λt}`.
    pub pre_entry: EnvelopeCheck,
    /// `E[V·1{t ∈ [t̂_j, ť_{j+1})}] ≤ (1 + 1/δ) α₂(eta_ball ρ(d_sup))`; the
    /// constant δ is a free parameter, so this is a parametric envelope.
    pub post_exit: EnvelopeCheck,
    /// Paths that exit `C₂` at least once.
    pub n_paths_with_exit: usize,
    pub pass: bool,
}

pub fn verify_class_g_envelope(
    batch: &BatchResult,
    fam: &LyapunovFamily,
    report: &CertificateReport,
    x0: &Vector,
) -> Result<ClassGEnvelope> {
    if report.kind != CertificateKind::ClassG {
        return Err(Error::Refused("envelope verification needs a class-G certificate".into()));
    }
    if !report.pass {
        return Err(Error::Refused(report.reason.clone().unwrap_or_else(|| "certificate failed".into())));
    }
    check_fingerprint(batch, report)?;
    let ex = batch
        .spec
        .excursions
        .ok_or_else(|| Error::Refused("batch was run without excursion detection".into()))?;
    let rate = report.decay_rate.expect("passing class-G report has a decay rate");
    let alpha2_x0 = fam.alpha2().at(x0.norm());
    let pre_entry = grid_check(
        batch,
        "pre-entry",
        |p, t| p.excursions.as_ref().is_some_and(|e| e.before_first_entry(t)),
        |t| alpha2_x0 * (-rate * t).exp(),
    );
    let gamma = fam
        .alpha2()
        .compose(&ex.rho.scaled(ex.eta_ball))
        .scaled(1.0 + 1.0 / ex.delta)
        .at(batch.d_sup);
    let post_exit = grid_check(
        batch,
        "post-exit (parametric envelope)",
        |p, t| p.excursions.as_ref().is_some_and(|e| e.after_exit(t)),
        |_| gamma,
    );
    let n_paths_with_exit = batch
        .paths
        .iter()
        .filter(|p| p.excursions.as_ref().is_some_and(|e| !e.exits.is_empty()))
        .count();
    Ok(ClassGEnvelope {
        pass: pre_entry.pass && post_exit.pass,
        pre_entry,
        post_exit,
        n_paths_with_exit,
    })
}

/// `E[V_{σ(t)}(x(t))] ≤ level` on the batch time grid.
pub fn verify_bounded(batch: &BatchResult, level: f64) -> EnvelopeCheck {
    grid_check(batch, "boundedness", |_, _| true, |_| level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::uh_certificate;
    use crate::model::make_linear_system;
    use crate::switching::{ClassGParams, InitialMode};
    use nalgebra::{dmatrix, DMatrix};
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn scalar(a: &[f64]) -> SwitchedSystem {
        make_linear_system(
            a.iter().map(|x| dmatrix![*x]).collect(),
            a.iter().map(|_| dmatrix![1.0]).collect(),
            None,
        )
        .unwrap()
    }

    fn unit_family(rates: Vec<f64>) -> LyapunovFamily {
        let n = rates.len();
        LyapunovFamily::quadratic(vec![dmatrix![1.0]; n], rates, None, PowerGain::quadratic(1.0), None, None).unwrap()
    }

    fn uh(q: Vec<f64>) -> SwitchingGenerator {
        SwitchingGenerator::Uh {
            params: UhParams::new(1.0, q).unwrap(),
            initial: InitialMode::Drawn,
        }
    }

    #[test]
    fn zero_dynamics_from_origin() {
        let sys = make_linear_system(vec![DMatrix::zeros(1, 1)], vec![dmatrix![1.0]], None).unwrap();
        let spec = BatchSpec::new(100, 7, 3, 3.0, 0.1);
        let b = run_batch(&sys, &uh(vec![1.0]), &DisturbanceSignal::zero(1), &unit_family(vec![0.0]), &v(&[0.0]), &spec).unwrap();
        assert!(b.paths.iter().all(|p| p.switches.iter().all(|s| s.v == 0.0)));
        assert!(b.warnings.is_empty());
    }

    #[test]
    fn batches_are_reproducible() {
        let sys = scalar(&[-1.0, -3.0]);
        let mut spec = BatchSpec::new(100, 42, 4, 4.0, 0.05);
        spec.audit = true;
        let d = DisturbanceSignal::Sinusoid {
            amplitude: vec![0.5],
            omega: 1.0,
            phase: 0.0,
        };
        let fam = unit_family(vec![1.0, 3.0]);
        let a = run_batch(&sys, &uh(vec![0.5, 0.5]), &d, &fam, &v(&[5.0]), &spec).unwrap();
        let b = run_batch(&sys, &uh(vec![0.5, 0.5]), &d, &fam, &v(&[5.0]), &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.paths[3].seed, 45);
    }

    #[test]
    fn small_batches_are_rejected() {
        let sys = scalar(&[-1.0]);
        let spec = BatchSpec::new(99, 0, 1, 1.0, 0.1);
        assert!(run_batch(&sys, &uh(vec![1.0]), &DisturbanceSignal::zero(1), &unit_family(vec![1.0]), &v(&[1.0]), &spec).is_err());
    }

    #[test]
    fn first_switch_expectation_matches_closed_form() {
        // ẋ = −x: E[x(τ₁)] = x₀ E[e^{−S}] = x₀ (1 − e^{−1}) for S ~ U(0, 1].
        let sys = scalar(&[-1.0]);
        let spec = BatchSpec::new(4000, 11, 1, 1.0, 0.01);
        let b = run_batch(&sys, &uh(vec![1.0]), &DisturbanceSignal::zero(1), &unit_family(vec![1.0]), &v(&[2.0]), &spec).unwrap();
        let xs: Vec<f64> = b.paths.iter().map(|p| p.switches[0].state[0]).collect();
        let est = MeanEstimate::from_samples(&xs);
        assert!(est.agrees_with(2.0 * (1.0 - (-1.0f64).exp()), 3.0), "{est:?}");
    }

    #[test]
    fn null_case_passes_and_mismatch_is_refused() {
        let sys = scalar(&[-1.0, -3.0]);
        let fam = unit_family(vec![1.0, 3.0]);
        let gen = uh(vec![0.5, 0.5]);
        let spec = BatchSpec::new(100, 1, 5, 5.0, 0.05);
        let d = DisturbanceSignal::zero(1);
        let b = run_batch(&sys, &gen, &d, &fam, &v(&[0.0]), &spec).unwrap();
        let SwitchingGenerator::Uh { params, .. } = &gen else { unreachable!() };
        let report = uh_certificate(&fam, params).unwrap();
        let verdict = verify_iss_l1(&b, &report, &fam, &v(&[0.0]), &d).unwrap();
        assert!(verdict.pass);
        assert_eq!(verdict.rows.len(), 5);
        assert!(verdict.to_csv().starts_with("nu,mean_V,se_V,bound,pass,mean_alpha1,se_alpha1\n"));

        let other = uh_certificate(&fam, &UhParams::new(0.5, vec![0.5, 0.5]).unwrap()).unwrap();
        assert!(matches!(verify_iss_l1(&b, &other, &fam, &v(&[0.0]), &d), Err(Error::Refused(_))));
    }

    #[test]
    fn audit_single_interval_closed_form() {
        // ẋ = −x, V = x², λ = 2 exact: residual = x(τ₁)² − x₀² e^{−2τ₁} ≈ 0.
        let sys = scalar(&[-1.0]);
        let fam = unit_family(vec![2.0]);
        let path = SwitchingPath::new(vec![0.7], vec![0, 0], 1.0).unwrap();
        let traj = integrate_with(&sys, &path, &DisturbanceSignal::zero(1), None, &v(&[3.0]), &IntegrationOptions::dense(0.01)).unwrap();
        let r = audit_iterated_inequality(&traj, &fam, 0.0);
        assert_eq!(r.len(), 1);
        assert!(r[0].abs() < 1e-9, "{r:?}");

        let still = SwitchingPath::constant(0, 1.0).unwrap();
        let traj = integrate_with(&sys, &still, &DisturbanceSignal::zero(1), None, &v(&[3.0]), &IntegrationOptions::dense(0.01)).unwrap();
        assert!(audit_iterated_inequality(&traj, &fam, 0.0).is_empty());
    }

    #[test]
    fn audit_handles_nonpositive_rates() {
        // mode 0 is unstable and undisturbed so that λ₀ = −0.5 is a valid rate
        let sys = make_linear_system(vec![dmatrix![0.2], dmatrix![-1.0]], vec![dmatrix![0.0], dmatrix![1.0]], None).unwrap();
        let fam = unit_family(vec![-0.5, 1.0]);
        let path = SwitchingPath::new(vec![0.5, 1.2, 1.9], vec![0, 1, 0, 1], 2.0).unwrap();
        let d = DisturbanceSignal::Constant { value: vec![0.3] };
        let traj = integrate_with(&sys, &path, &d, None, &v(&[1.0]), &IntegrationOptions::dense(0.01)).unwrap();
        let r = audit_iterated_inequality(&traj, &fam, 0.3);
        assert_eq!(r.len(), 3);
        assert!(r.iter().all(|x| x.is_finite() && *x <= AUDIT_TOL), "{r:?}");

        let zero = unit_family(vec![0.0, 1.0]);
        let r = audit_iterated_inequality(&traj, &zero, 0.3);
        assert!(r.iter().all(|x| x.is_finite()));
    }

    fn traj_from(times: Vec<f64>, xs: Vec<f64>) -> Trajectory {
        let horizon = *times.last().unwrap();
        Trajectory {
            modes: vec![0; times.len()],
            states: xs.into_iter().map(|x| v(&[x])).collect(),
            times,
            switch_samples: Vec::new(),
            step: 0.1,
            path: SwitchingPath::constant(0, horizon).unwrap(),
        }
    }

    #[test]
    fn excursion_examples() {
        let rho = PowerGain::linear(2.0);
        // decay from 5 to 0 with d_sup = 0.5: enters ‖x‖ < 1, never leaves ‖x‖ < 1.5
        let times: Vec<f64> = (0..=50).map(|k| k as f64 * 0.1).collect();
        let decay = traj_from(times.clone(), times.iter().map(|t| 5.0 * (-t).exp()).collect());
        let rec = detect_excursions(&decay, rho, 0.5, 1.5);
        assert_eq!(rec.entries.len(), 1);
        assert!(rec.exits.is_empty());
        assert!(rec.before_first_entry(0.0) && !rec.before_first_entry(5.0));

        let flat = traj_from(times.clone(), vec![3.0; times.len()]);
        assert_eq!(detect_excursions(&flat, rho, 0.5, 1.5), ExcursionRecord::default());

        let osc = traj_from(times.clone(), times.iter().map(|t| 1.3 + 0.6 * (3.0 * t).sin()).collect());
        let rec = detect_excursions(&osc, rho, 0.5, 1.5);
        assert!(rec.entries.len() >= 2 && !rec.exits.is_empty());
        assert!(rec.is_interleaved());
        let x = rec.exits[0];
        assert!(rec.after_exit(x) && !rec.after_exit(rec.entries[0]));

        assert_eq!(detect_excursions(&decay, rho, 0.0, 1.5), ExcursionRecord::default());
    }

    #[test]
    fn initial_sample_is_not_an_entry() {
        let times = vec![0.0, 0.1, 0.2];
        let rec = detect_excursions(&traj_from(times, vec![0.1, 3.0, 0.1]), PowerGain::linear(1.0), 1.0, 2.0);
        assert_eq!(rec.entries, vec![0.2]);
        assert!(rec.exits.is_empty());
    }

    proptest! {
        #[test]
        fn excursions_interleave(xs in proptest::collection::vec(0.0f64..4.0, 2..200), d in 0.1f64..1.5) {
            let times = (0..xs.len()).map(|k| k as f64 * 0.05).collect();
            let rec = detect_excursions(&traj_from(times, xs), PowerGain::linear(1.0), d, 1.5);
            prop_assert!(rec.is_interleaved());
        }
    }

    #[test]
    fn class_g_single_mode_envelope_is_deterministic_decay() {
        // one mode, μ = 1: the path never leaves mode 0 and V = x₀² e^{−2t}
        // sits below α₂(x₀) e^{−λt} with λ = λ∘ + λ̃ − λ̄ = 1.
        let sys = scalar(&[-1.0]);
        let fam = unit_family(vec![1.0]);
        let params = ClassGParams::with_uniform_kernel(0.2, 0.2, 1).unwrap();
        let gen = SwitchingGenerator::ClassG { params: params.clone(), sigma0: 0 };
        let mut spec = BatchSpec::new(100, 3, 0, 4.0, 0.01);
        spec.time_grid = (0..=8).map(|k| k as f64 * 0.5).collect();
        spec.excursions = Some(ExcursionParams {
            rho: PowerGain::linear(2.0),
            eta_ball: 1.5,
            delta: 1.0,
        });
        let d = DisturbanceSignal::zero(1);
        let b = run_batch(&sys, &gen, &d, &fam, &v(&[5.0]), &spec).unwrap();
        let report = crate::certify::class_g_certificate(&fam, &params);
        let env = verify_class_g_envelope(&b, &fam, &report, &v(&[5.0])).unwrap();
        assert!(env.pass);
        for row in &env.pre_entry.rows {
            assert!((row.estimate - 25.0 * (-2.0 * row.t).exp()).abs() < 1e-6);
            assert!(row.se < 1e-9);
        }
        assert_eq!(env.pre_entry.rows[0].estimate, 25.0);
        assert!(env.post_exit.rows.iter().all(|r| r.estimate == 0.0));
        assert!(env.pre_entry.to_csv().starts_with("t,estimate,se,envelope,pass\n"));
    }

    #[test]
    fn eta_ball_below_step_one_threshold_is_rejected() {
        let fam = unit_family(vec![1.0]);
        let ex = ExcursionParams {
            rho: PowerGain::linear(2.0),
            eta_ball: 1.4,
            delta: 1.0,
        };
        assert!(ex.validate(&fam, 0.5).is_err());
        assert!(ExcursionParams { eta_ball: 1.5, ..ex }.validate(&fam, 0.5).is_ok());
    }

    #[test]
    fn coverage_shortfall_is_reported() {
        let sys = scalar(&[-1.0]);
        let spec = BatchSpec::new(100, 0, 5, 2.0, 0.1);
        let b = run_batch(&sys, &uh(vec![1.0]), &DisturbanceSignal::zero(1), &unit_family(vec![1.0]), &v(&[1.0]), &spec).unwrap();
        assert!(!b.warnings.is_empty());
        assert!(b.is_covered(1) && !b.is_covered(5));
    }

    #[test]
    fn building_blocks_and_first_term() {
        let sys = scalar(&[-1.0, -3.0]);
        let fam = unit_family(vec![1.0, 3.0]);
        let params = UhParams::new(1.0, vec![0.5, 0.5]).unwrap();
        let gen = SwitchingGenerator::Uh { params: params.clone(), initial: InitialMode::Drawn };
        let spec = BatchSpec::new(3000, 5, 4, 4.0, 0.05);
        let b = run_batch(&sys, &gen, &DisturbanceSignal::zero(1), &fam, &v(&[5.0]), &spec).unwrap();
        let paths: Vec<SwitchingPath> = b.paths.iter().map(|p| p.path.clone()).collect();
        let bb = building_blocks(&paths, fam.rates(), &params).unwrap();
        assert!(bb.agree(3.0), "{bb:?}");
        let report = uh_certificate(&fam, &params).unwrap();
        let rows = first_term_check(&b, &fam, report.eta.unwrap());
        assert!(rows.iter().all(|r| r.pass), "{rows:?}");
    }
}

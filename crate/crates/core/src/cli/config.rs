//! Experiment documents: JSON schema, loading, and validation into the
//! library types.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certify::{tune_uh, UhTuning};
use crate::error::{Error, Result};
use crate::lyapunov::{linear_rate_certificate, GridSpec, LyapunovFamily};
use crate::model::{make_linear_system, DisturbanceSignal, PowerGain, SwitchedSystem, Vector};
use crate::montecarlo::ExcursionParams;
use crate::switching::{uniform_other_kernel, ClassGParams, CtmcParams, InitialMode, SwitchingGenerator, UhParams};
use crate::synthesis::{Controller, WBarMode, WBarPolicy};

pub type Matrix = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub lyapunov: LyapunovConfig,
    pub switching: SwitchingConfig,
    pub disturbance: DisturbanceSignal,
    pub experiment: ExperimentParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerConfig>,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

/// Linear-affine modes `ẋ = A_i x + B_i d (+ G_i u)`, matrices row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "A")]
    pub a: Vec<Matrix>,
    #[serde(rename = "B")]
    pub b: Vec<Matrix>,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Matrix>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    #[serde(rename = "P")]
    pub p: Vec<Matrix>,
    /// Computed from the linear certificate when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<PowerGain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha2: Option<PowerGain>,
    pub chi: PowerGain,
    #[serde(default)]
    pub grid: GridSpec,
}

fn drawn() -> InitialMode {
    InitialMode::Drawn
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SwitchingConfig {
    /// Uniform holding times. With `T` omitted the tool searches for a
    /// horizon (and, if `q` is omitted too, a mode law) with `η < 1`.
    Uh {
        #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
        t_max: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<Vec<f64>>,
        #[serde(default = "drawn")]
        initial: InitialMode,
    },
    ClassG {
        lambda_bar: f64,
        lambda_tilde: f64,
        #[serde(default)]
        k0: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode_kernel: Option<Matrix>,
        #[serde(default)]
        sigma0: usize,
    },
    Ctmc {
        #[serde(rename = "Q")]
        generator: Matrix,
        #[serde(default)]
        sigma0: usize,
    },
}

/// Either explicit instants or `n` evenly spaced points on `[0, end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeGrid {
    Points(Vec<f64>),
    Uniform { n: usize, end: f64 },
}

impl TimeGrid {
    pub fn points(&self) -> Vec<f64> {
        match self {
            TimeGrid::Points(p) => p.clone(),
            TimeGrid::Uniform { n, end } => match n {
                0 => Vec::new(),
                1 => vec![0.0],
                _ => (0..*n).map(|k| end * k as f64 / (*n - 1) as f64).collect(),
            },
        }
    }
}

fn default_step() -> f64 {
    0.01
}
fn default_trajectories() -> usize {
    1000
}
fn default_nu_max() -> usize {
    10
}
fn default_delta() -> f64 {
    1.0
}
fn default_theta() -> f64 {
    1.5
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentParams {
    pub x0: Vec<f64>,
    /// Defaults to `nu_max · T` for uniform holding times; required otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_nu_max")]
    pub nu_max: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_ball: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<PowerGain>,
    /// Common generator decay rate (Markov switching only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_circ: Option<f64>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_grid: Option<TimeGrid>,
    #[serde(default = "yes")]
    pub audit: bool,
}

fn analytic() -> WBarMode {
    WBarMode::AnalyticAffine
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControllerConfig {
    UniversalFormula {
        #[serde(default = "analytic")]
        w_bar: WBarMode,
    },
    /// `u = K x` in every mode.
    Linear {
        #[serde(rename = "K")]
        k: Matrix,
    },
}

fn default_dir() -> String {
    "switchstab-out".into()
}
fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    /// Number of `trajectory_*.csv` files written by `simulate`.
    #[serde(default = "one")]
    pub trajectories: usize,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            trajectories: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read config: {e}")))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// A validated experiment, ready to run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub sys: SwitchedSystem,
    pub fam: LyapunovFamily,
    pub generator: SwitchingGenerator,
    pub disturbance: DisturbanceSignal,
    pub x0: Vector,
    pub horizon: Option<f64>,
    pub tuning: Option<UhTuning>,
    pub warnings: Vec<String>,
}

fn matrix(rows: &Matrix, path: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::config(path, "matrix must be nonempty"));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(Error::config(format!("{path}[{i}]"), format!("row has {} entries, expected {c}", rows[i].len())));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::config(path, "matrix entries must be finite"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn matrices(list: &[Matrix], path: &str) -> Result<Vec<DMatrix<f64>>> {
    list.iter().enumerate().map(|(i, m)| matrix(m, &format!("{path}[{i}]"))).collect()
}

fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    }
}

impl Experiment {
    pub fn from_config(config: ExperimentConfig) -> Result<Self> {
        let mut warnings = Vec::new();
        let sc = &config.system;
        let a = matrices(&sc.a, "system.A")?;
        let b = matrices(&sc.b, "system.B")?;
        let g = sc.g.as_ref().map(|g| matrices(g, "system.G")).transpose()?;
        let sys = make_linear_system(a.clone(), b.clone(), g).map_err(at("system"))?;
        let n_modes = sys.n_modes();

        let lc = &config.lyapunov;
        let p = matrices(&lc.p, "lyapunov.P")?;
        if p.len() != n_modes {
            return Err(Error::config("lyapunov.P", format!("{} matrices for {n_modes} modes", p.len())));
        }
        let rates = match &lc.rates {
            Some(r) => r.clone(),
            None => {
                let mut rates = Vec::with_capacity(n_modes);
                for (i, pi) in p.iter().enumerate() {
                    let cert = linear_rate_certificate(&a[i], &b[i], pi).map_err(at("lyapunov.rates"))?;
                    if cert.chi_coeff > 0.0 && !(lc.chi.exponent == 2.0 && lc.chi.coeff >= cert.chi_coeff) {
                        return Err(Error::config(
                            "lyapunov.chi",
                            format!(
                                "automatic rates need chi(r) = c r^2 with c >= {}; supply rates explicitly otherwise",
                                cert.chi_coeff
                            ),
                        ));
                    }
                    rates.push(cert.lambda);
                }
                rates
            }
        };
        let fam = LyapunovFamily::quadratic(p, rates, lc.mu, lc.chi, lc.alpha1, lc.alpha2).map_err(at("lyapunov"))?;
        if fam.state_dim() != sys.state_dim() {
            return Err(Error::config("lyapunov.P", "matrix size does not match the state dimension"));
        }

        let mut tuning = None;
        let generator = match &config.switching {
            SwitchingConfig::Uh { t_max, q, initial } => {
                let params = match t_max {
                    Some(t) => {
                        let q = q.clone().unwrap_or_else(|| vec![1.0 / n_modes as f64; n_modes]);
                        UhParams::new(*t, q).map_err(at("switching"))?
                    }
                    None => {
                        let t = tune_uh(fam.mu(), fam.rates(), q.as_deref()).ok_or_else(|| {
                            Error::config("switching.T", "no holding-time bound with contraction factor below 1 was found")
                        })?;
                        let params = t.params.clone();
                        tuning = Some(t);
                        params
                    }
                };
                if params.n_modes() != n_modes {
                    return Err(Error::config("switching.q", format!("{} probabilities for {n_modes} modes", params.n_modes())));
                }
                if let InitialMode::Fixed(m) = initial {
                    if *m >= n_modes {
                        return Err(Error::config("switching.initial", format!("mode {m} out of range 0..{n_modes}")));
                    }
                }
                SwitchingGenerator::Uh { params, initial: *initial }
            }
            SwitchingConfig::ClassG {
                lambda_bar,
                lambda_tilde,
                k0,
                mode_kernel,
                sigma0,
            } => {
                let kernel = mode_kernel.clone().unwrap_or_else(|| uniform_other_kernel(n_modes));
                let params = ClassGParams::new(*lambda_bar, *lambda_tilde, *k0, kernel).map_err(at("switching"))?;
                if params.n_modes() != n_modes {
                    return Err(Error::config("switching.mode_kernel", format!("kernel is not {n_modes}x{n_modes}")));
                }
                if *sigma0 >= n_modes {
                    return Err(Error::config("switching.sigma0", format!("mode {sigma0} out of range 0..{n_modes}")));
                }
                warnings.extend(params.warnings());
                SwitchingGenerator::ClassG { params, sigma0: *sigma0 }
            }
            SwitchingConfig::Ctmc { generator, sigma0 } => {
                let params = CtmcParams::new(generator.clone()).map_err(at("switching.Q"))?;
                if params.n_modes() != n_modes {
                    return Err(Error::config("switching.Q", format!("generator is not {n_modes}x{n_modes}")));
                }
                if *sigma0 >= n_modes {
                    return Err(Error::config("switching.sigma0", format!("mode {sigma0} out of range 0..{n_modes}")));
                }
                SwitchingGenerator::Ctmc { params, sigma0: *sigma0 }
            }
        };

        let disturbance = config.disturbance.clone();
        disturbance.validate().map_err(at("disturbance"))?;
        if disturbance.dim() != sys.dist_dim() {
            return Err(Error::config(
                "disturbance",
                format!("dimension {} does not match the system ({})", disturbance.dim(), sys.dist_dim()),
            ));
        }

        let ex = &config.experiment;
        if ex.x0.len() != sys.state_dim() || ex.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("experiment.x0", format!("expected {} finite entries", sys.state_dim())));
        }
        if !(ex.step.is_finite() && ex.step > 0.0) {
            return Err(Error::config("experiment.step", "must be positive"));
        }
        if !(1.0..=2.0).contains(&ex.theta) {
            return Err(Error::config("experiment.theta", "must lie in [1, 2]"));
        }
        if !(ex.delta > 0.0) {
            return Err(Error::config("experiment.delta", "must be positive"));
        }
        if let Some(h) = ex.horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::config("experiment.horizon", "must be positive"));
            }
        }
        let horizon = ex.horizon.or(match &generator {
            SwitchingGenerator::Uh { params, .. } => Some(ex.nu_max.max(1) as f64 * params.t_max),
            _ => None,
        });

        if let Some(ctl) = &config.controller {
            if sys.ctrl_dim() == 0 {
                return Err(Error::config("controller", "the system has no control channels (system.G)"));
            }
            if let ControllerConfig::Linear { k } = ctl {
                let k = matrix(k, "controller.K")?;
                if k.nrows() != sys.ctrl_dim() || k.ncols() != sys.state_dim() {
                    return Err(Error::config(
                        "controller.K",
                        format!("expected {}x{}", sys.ctrl_dim(), sys.state_dim()),
                    ));
                }
            }
        }

        Ok(Self {
            x0: Vector::from_column_slice(&ex.x0),
            config,
            sys,
            fam,
            generator,
            disturbance,
            horizon,
            tuning,
            warnings,
        })
    }

    pub fn horizon(&self) -> Result<f64> {
        self.horizon
            .ok_or_else(|| Error::config("experiment.horizon", "required for this switching kind"))
    }

    pub fn time_grid(&self) -> Result<Vec<f64>> {
        let horizon = self.horizon()?;
        let grid = self
            .config
            .experiment
            .time_grid
            .clone()
            .unwrap_or(TimeGrid::Uniform { n: 50, end: horizon })
            .points();
        if grid.iter().any(|t| !(0.0..=horizon).contains(t)) {
            return Err(Error::config("experiment.time_grid", format!("points must lie in [0, {horizon}]")));
        }
        Ok(grid)
    }

    pub fn rho(&self) -> Result<PowerGain> {
        self.config
            .experiment
            .rho
            .ok_or_else(|| Error::config("experiment.rho", "required for this switching kind"))
    }

    pub fn excursion_params(&self) -> Result<ExcursionParams> {
        let ex = &self.config.experiment;
        let params = ExcursionParams {
            rho: self.rho()?,
            eta_ball: ex
                .eta_ball
                .ok_or_else(|| Error::config("experiment.eta_ball", "required for class-g switching"))?,
            delta: ex.delta,
        };
        params
            .validate(&self.fam, self.disturbance.sup_norm())
            .map_err(at("experiment.eta_ball"))?;
        Ok(params)
    }

    pub fn w_bar_policy(&self) -> WBarPolicy {
        let mode = match &self.config.controller {
            Some(ControllerConfig::UniversalFormula { w_bar }) => *w_bar,
            _ => WBarMode::AnalyticAffine,
        };
        WBarPolicy {
            mode,
            theta: self.config.experiment.theta,
        }
    }

    /// The user-supplied linear controller, if the config names one.
    pub fn user_controller(&self) -> Option<Controller> {
        match &self.config.controller {
            Some(ControllerConfig::Linear { k }) => Some(Controller::linear(matrix(k, "controller.K").expect("validated"))),
            _ => None,
        }
    }
}

pub fn load_experiment(path: &Path) -> Result<Experiment> {
    Experiment::from_config(ExperimentConfig::load(path)?)
}

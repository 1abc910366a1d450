//! Universal-formula feedback for ISS disturbance attenuation.
//!
//! For each mode `j` the controller evaluates
//! `k_j(x) = φ(W̄_j(x), W̃_j(x))`, where `W̃_j` is the row of Lie derivatives
//! of `V_j` along the control channels and `W̄_j` sits inside the band
//! `M_j(x) + λ_j V_j(x) ≤ W̄_j(x) ≤ M_j(x) + 2λ_j V_j(x)` with
//! `M_j(x) = max_d {∇V_j·f_j(x, d) − χ(‖d‖)}`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{halton_ball, DecrementAccumulator, DecrementReport, LyapunovFamily};
use crate::model::{ControlField, ModeField, SwitchedSystem, Vector};

/// Residual tolerance for closed-loop dissipation checks.
pub const CLOSED_LOOP_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    ModeDependent,
    ModeIndependent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    UniversalFormula,
    UserSupplied,
}

type Law = Arc<dyn Fn(usize, &Vector) -> Vector + Send + Sync>;

/// State feedback `u = k_σ(x)` (or `u = k(x)` when mode-independent).
#[derive(Clone)]
pub struct Controller {
    kind: ControllerKind,
    provenance: Provenance,
    ctrl_dim: usize,
    law: Law,
}

impl fmt::Debug for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Controller")
            .field("kind", &self.kind)
            .field("provenance", &self.provenance)
            .field("ctrl_dim", &self.ctrl_dim)
            .finish()
    }
}

impl Controller {
    pub fn mode_dependent<F>(ctrl_dim: usize, provenance: Provenance, law: F) -> Self
    where
        F: Fn(usize, &Vector) -> Vector + Send + Sync + 'static,
    {
        Self {
            kind: ControllerKind::ModeDependent,
            provenance,
            ctrl_dim,
            law: Arc::new(law),
        }
    }

    pub fn mode_independent<F>(ctrl_dim: usize, law: F) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Self {
            kind: ControllerKind::ModeIndependent,
            provenance: Provenance::UserSupplied,
            ctrl_dim,
            law: Arc::new(move |_, x| law(x)),
        }
    }

    /// Linear state feedback `u = K x`, shared by all modes.
    pub fn linear(gain: DMatrix<f64>) -> Self {
        let m = gain.nrows();
        Self::mode_independent(m, move |x| &gain * x)
    }

    pub fn zero(ctrl_dim: usize) -> Self {
        Self::mode_independent(ctrl_dim, move |_| Vector::zeros(ctrl_dim))
    }

    #[inline]
    pub fn control(&self, mode: usize, x: &Vector) -> Vector {
        (self.law)(mode, x)
    }

    pub fn kind(&self) -> ControllerKind {
        self.kind
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn ctrl_dim(&self) -> usize {
        self.ctrl_dim
    }
}

/// `φ(a, b) = −(a + √(a² + ‖b‖⁴))/‖b‖² · b`, and `0` when `b = 0`.
pub fn phi(a: f64, b: &Vector) -> Vector {
    let nb2 = b.norm_squared();
    if nb2 == 0.0 {
        return Vector::zeros(b.len());
    }
    let s = (a * a + nb2 * nb2).sqrt();
    b * (-(a + s) / nb2)
}

/// `W̃_j(x)`: component `l` is `∇V_j(x) · g_{j,l}(x)`.
pub fn w_tilde(sys: &SwitchedSystem, fam: &LyapunovFamily, j: usize, x: &Vector) -> Result<Vector> {
    if sys.ctrl_dim() == 0 {
        return Err(Error::Unsupported("system has no control channels".into()));
    }
    sys.check_mode(j)?;
    let g = sys.control_matrix(j, x).expect("controlled system");
    Ok(g.transpose() * fam.grad_v(j, x))
}

/// How the inner maximum over disturbances is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WBarMode {
    /// Completion of squares; needs a linear-affine system and quadratic `χ`.
    AnalyticAffine,
    /// Maximum over `n` sampled disturbances in the ball of radius `radius`.
    /// This under-estimates the supremum.
    GridSearch { radius: f64, n: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WBarPolicy {
    pub mode: WBarMode,
    /// Position inside the admissible band, in `[1, 2]`.
    pub theta: f64,
}

impl Default for WBarPolicy {
    fn default() -> Self {
        Self {
            mode: WBarMode::AnalyticAffine,
            theta: 1.5,
        }
    }
}

impl WBarPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(1.0..=2.0).contains(&self.theta) {
            return Err(Error::InvalidParameter(format!(
                "band position theta must lie in [1, 2], got {}",
                self.theta
            )));
        }
        if let WBarMode::GridSearch { radius, n } = self.mode {
            if !(radius > 0.0 && n >= 2) {
                return Err(Error::InvalidParameter("grid search needs radius > 0 and n >= 2".into()));
            }
        }
        Ok(())
    }
}

/// `M_j(x) = max_d {∇V_j(x)·f_j(x, d) − χ(‖d‖)}` under the given policy.
pub fn max_term(sys: &SwitchedSystem, fam: &LyapunovFamily, j: usize, x: &Vector, mode: WBarMode) -> Result<f64> {
    sys.check_mode(j)?;
    let grad = fam.grad_v(j, x);
    match mode {
        WBarMode::AnalyticAffine => {
            let (a, b) = sys
                .linear_mode(j)
                .ok_or_else(|| Error::Refused("analytic W̄ requires a linear-affine system".into()))?;
            let chi = fam.chi();
            if chi.exponent != 2.0 {
                return Err(Error::Refused("analytic W̄ requires a quadratic disturbance gain".into()));
            }
            let bt_grad = b.transpose() * &grad;
            Ok(grad.dot(&(a * x)) + bt_grad.norm_squared() / (4.0 * chi.coeff))
        }
        WBarMode::GridSearch { radius, n } => {
            let k = sys.dist_dim();
            let ds: Vec<Vector> = if k == 1 {
                (0..n)
                    .map(|i| Vector::from_element(1, -radius + 2.0 * radius * i as f64 / (n - 1) as f64))
                    .collect()
            } else {
                let mut pts = halton_ball(n, k, radius);
                pts.push(Vector::zeros(k));
                pts
            };
            Ok(ds
                .iter()
                .map(|d| grad.dot(&sys.drift(j, x, d)) - fam.chi().at(d.norm()))
                .fold(f64::NEG_INFINITY, f64::max))
        }
    }
}

/// `W̄_j(x) = M_j(x) + θ λ_j V_j(x)`.
pub fn w_bar(sys: &SwitchedSystem, fam: &LyapunovFamily, j: usize, x: &Vector, policy: &WBarPolicy) -> Result<f64> {
    policy.validate()?;
    Ok(max_term(sys, fam, j, x, policy.mode)? + policy.theta * fam.rates()[j] * fam.eval_v(j, x))
}

/// Mode-dependent universal-formula controller `k_j(x) = φ(W̄_j(x), W̃_j(x))`.
pub fn make_mode_dependent(sys: &SwitchedSystem, fam: &LyapunovFamily, policy: WBarPolicy) -> Result<Controller> {
    policy.validate()?;
    if sys.ctrl_dim() == 0 {
        return Err(Error::Unsupported("system has no control channels".into()));
    }
    if fam.n_modes() != sys.n_modes() || fam.state_dim() != sys.state_dim() {
        return Err(Error::InvalidParameter("system and Lyapunov family disagree in shape".into()));
    }
    if policy.mode == WBarMode::AnalyticAffine {
        // surface refusals at construction rather than inside the control law
        max_term(sys, fam, 0, &Vector::zeros(sys.state_dim()), policy.mode)?;
    }
    let sys = sys.clone();
    let fam = fam.clone();
    Ok(Controller::mode_dependent(
        sys.ctrl_dim(),
        Provenance::UniversalFormula,
        move |j, x| {
            let a = w_bar(&sys, &fam, j, x, &policy).expect("validated policy");
            let b = w_tilde(&sys, &fam, j, x).expect("controlled system");
            phi(a, &b)
        },
    ))
}

/// Closed-loop dissipation
/// `∇V_j·(f_j(x,d) + Σ_l g_{j,l}(x) u_l) + λ_j V_j(x) − χ(‖d‖) ≤ tol`
/// with `u = k_j(x)`, over every mode and sampled `(x, d)`.
pub fn check_closed_loop(
    sys: &SwitchedSystem,
    fam: &LyapunovFamily,
    controller: &Controller,
    x_samples: &[Vector],
    d_samples: &[Vector],
) -> Result<DecrementReport> {
    if x_samples.is_empty() || d_samples.is_empty() {
        return Err(Error::InvalidParameter("closed-loop check needs nonempty grids".into()));
    }
    if controller.ctrl_dim() != sys.ctrl_dim() {
        return Err(Error::InvalidParameter("controller and system control dimensions differ".into()));
    }
    let mut acc = DecrementAccumulator::new(CLOSED_LOOP_TOL);
    for j in 0..sys.n_modes() {
        for x in x_samples {
            let u = controller.control(j, x);
            for d in d_samples {
                let flow = sys.eval_field(j, x, d, Some(&u))?;
                acc.record(fam.decrement_residual(j, x, &flow, d), j, x, d, 1);
            }
        }
    }
    Ok(acc.finish())
}

/// Uncontrolled system whose mode fields are the closed-loop fields.
pub fn assemble_closed_loop(sys: &SwitchedSystem, controller: &Controller) -> Result<SwitchedSystem> {
    if sys.ctrl_dim() == 0 || controller.ctrl_dim() != sys.ctrl_dim() {
        return Err(Error::InvalidParameter(format!(
            "controller dimension {} does not match system control dimension {}",
            controller.ctrl_dim(),
            sys.ctrl_dim()
        )));
    }
    let fields: Vec<ModeField> = (0..sys.n_modes())
        .map(|j| {
            let sys = sys.clone();
            let ctl = controller.clone();
            let f: ModeField = Arc::new(move |x: &Vector, d: &Vector| {
                let mut v = sys.drift(j, x, d);
                let g = sys.control_matrix(j, x).expect("controlled system");
                v.gemv(1.0, &g, &ctl.control(j, x), 1.0);
                v
            });
            f
        })
        .collect();
    SwitchedSystem::from_fields(sys.state_dim(), sys.dist_dim(), fields, None::<(usize, Vec<ControlField>)>)
}

//! Switched systems, disturbance signals and comparison functions.
//!
//! A switched system is a finite family of vector fields `f_i(x, d)` with
//! optional control channels `g_{i,l}(x)`; the active member is selected by
//! an exogenous switching signal. Linear-affine families store their
//! matrices so that certificates can be computed exactly; general families
//! are arbitrary closures.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State, disturbance and control values are dense column vectors.
pub type Vector = DVector<f64>;

/// Drift of one mode, `(x, d) -> f_i(x, d)`.
pub type ModeField = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;

/// Control channels of one mode, `x -> [g_{i,1}(x) .. g_{i,m}(x)]` as an n x m matrix.
pub type ControlField = Arc<dyn Fn(&Vector) -> DMatrix<f64> + Send + Sync>;

/// Power-law class-K-infinity function `r -> c * r^p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerGain {
    #[serde(rename = "c")]
    pub coeff: f64,
    #[serde(rename = "p")]
    pub exponent: f64,
}

impl PowerGain {
    pub fn new(coeff: f64, exponent: f64) -> Result<Self> {
        if !(coeff.is_finite() && coeff > 0.0 && exponent.is_finite() && exponent > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "power gain needs positive finite coefficient and exponent, got c = {coeff}, p = {exponent}"
            )));
        }
        Ok(Self { coeff, exponent })
    }

    pub fn quadratic(coeff: f64) -> Self {
        Self {
            coeff,
            exponent: 2.0,
        }
    }

    pub fn linear(coeff: f64) -> Self {
        Self {
            coeff,
            exponent: 1.0,
        }
    }

    /// Evaluates the gain, rejecting arguments outside `[0, inf)`.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if r < 0.0 || r.is_nan() {
            return Err(Error::NegativeGainArgument(r));
        }
        Ok(self.at(r))
    }

    /// Unchecked evaluation for arguments already known to be norms.
    #[inline]
    pub fn at(&self, r: f64) -> f64 {
        if r == 0.0 {
            0.0
        } else if self.exponent == 2.0 {
            self.coeff * r * r
        } else if self.exponent == 1.0 {
            self.coeff * r
        } else {
            self.coeff * r.powf(self.exponent)
        }
    }

    /// `(c, p)^{-1} = (c^{-1/p}, 1/p)`.
    pub fn inverse(&self) -> Self {
        Self {
            coeff: self.coeff.powf(-1.0 / self.exponent),
            exponent: 1.0 / self.exponent,
        }
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &PowerGain) -> Self {
        Self {
            coeff: self.coeff * inner.coeff.powf(self.exponent),
            exponent: self.exponent * inner.exponent,
        }
    }

    /// `factor * self(r)`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coeff: self.coeff * factor,
            exponent: self.exponent,
        }
    }
}

impl fmt::Display for PowerGain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}·r^{}", self.coeff, self.exponent)
    }
}

pub fn eval_gain(g: &PowerGain, r: f64) -> Result<f64> {
    g.eval(r)
}

#[derive(Clone)]
pub enum SystemKind {
    /// `f_i(x, d) = A_i x + B_i d`, `g_{i,l}(x) = column l of G_i`.
    LinearAffine {
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        g: Option<Vec<DMatrix<f64>>>,
    },
    General {
        fields: Vec<ModeField>,
        controls: Option<Vec<ControlField>>,
    },
}

/// A finite family of vector fields sharing state, disturbance and control
/// dimensions. Immutable after construction.
#[derive(Clone)]
pub struct SwitchedSystem {
    n_modes: usize,
    state_dim: usize,
    dist_dim: usize,
    ctrl_dim: usize,
    kind: SystemKind,
}

impl fmt::Debug for SwitchedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            SystemKind::LinearAffine { .. } => "linear-affine",
            SystemKind::General { .. } => "general-callable",
        };
        f.debug_struct("SwitchedSystem")
            .field("n_modes", &self.n_modes)
            .field("state_dim", &self.state_dim)
            .field("dist_dim", &self.dist_dim)
            .field("ctrl_dim", &self.ctrl_dim)
            .field("kind", &kind)
            .finish()
    }
}

/// Builds a linear-affine switched system from per-mode matrices.
pub fn make_linear_system(
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    g: Option<Vec<DMatrix<f64>>>,
) -> Result<SwitchedSystem> {
    if a.is_empty() {
        return Err(Error::InvalidParameter(
            "a switched system needs at least one mode".into(),
        ));
    }
    let n_modes = a.len();
    let n = a[0].nrows();
    if n == 0 {
        return Err(Error::DimensionMismatch {
            mode: 0,
            what: "state dimension must be positive".into(),
        });
    }
    if b.len() != n_modes {
        return Err(Error::InvalidParameter(format!(
            "{} drift matrices but {} disturbance matrices",
            n_modes,
            b.len()
        )));
    }
    let k = b[0].ncols();
    if k == 0 {
        return Err(Error::DimensionMismatch {
            mode: 0,
            what: "disturbance dimension must be positive".into(),
        });
    }
    for (i, (ai, bi)) in a.iter().zip(&b).enumerate() {
        if ai.nrows() != n || ai.ncols() != n {
            return Err(Error::DimensionMismatch {
                mode: i,
                what: format!("A is {}x{}, expected {n}x{n}", ai.nrows(), ai.ncols()),
            });
        }
        if bi.nrows() != n || bi.ncols() != k {
            return Err(Error::DimensionMismatch {
                mode: i,
                what: format!("B is {}x{}, expected {n}x{k}", bi.nrows(), bi.ncols()),
            });
        }
        if ai.iter().chain(bi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch {
                mode: i,
                what: "matrix entries must be finite".into(),
            });
        }
    }
    let mut m = 0;
    if let Some(gs) = &g {
        if gs.len() != n_modes {
            return Err(Error::InvalidParameter(format!(
                "{} drift matrices but {} control matrices",
                n_modes,
                gs.len()
            )));
        }
        m = gs[0].ncols();
        for (i, gi) in gs.iter().enumerate() {
            if gi.nrows() != n || gi.ncols() != m || m == 0 {
                return Err(Error::DimensionMismatch {
                    mode: i,
                    what: format!("G is {}x{}, expected {n}x{m} with m > 0", gi.nrows(), gi.ncols()),
                });
            }
        }
    }
    Ok(SwitchedSystem {
        n_modes,
        state_dim: n,
        dist_dim: k,
        ctrl_dim: m,
        kind: SystemKind::LinearAffine { a, b, g },
    })
}

/// Probe radius for the sampled `f_i(0, 0) = 0` check on general systems.
const ORIGIN_TOL: f64 = 1e-12;

impl SwitchedSystem {
    /// Wraps arbitrary per-mode closures. `f_i(0, 0) = 0` is checked at the
    /// origin for every mode.
    pub fn from_fields(
        state_dim: usize,
        dist_dim: usize,
        fields: Vec<ModeField>,
        controls: Option<(usize, Vec<ControlField>)>,
    ) -> Result<Self> {
        if fields.is_empty() || state_dim == 0 || dist_dim == 0 {
            return Err(Error::InvalidParameter(
                "general system needs at least one mode and positive dimensions".into(),
            ));
        }
        let zero_x = Vector::zeros(state_dim);
        let zero_d = Vector::zeros(dist_dim);
        for (i, f) in fields.iter().enumerate() {
            let v = f(&zero_x, &zero_d);
            if v.len() != state_dim {
                return Err(Error::DimensionMismatch {
                    mode: i,
                    what: format!("field returns length {}, expected {state_dim}", v.len()),
                });
            }
            if v.norm() > ORIGIN_TOL {
                return Err(Error::InvalidParameter(format!(
                    "mode {i}: f(0, 0) has norm {} but must vanish",
                    v.norm()
                )));
            }
        }
        let (ctrl_dim, controls) = match controls {
            Some((m, cs)) => {
                if m == 0 || cs.len() != fields.len() {
                    return Err(Error::InvalidParameter(
                        "control channels need m > 0 and one entry per mode".into(),
                    ));
                }
                for (i, c) in cs.iter().enumerate() {
                    let g0 = c(&zero_x);
                    if g0.nrows() != state_dim || g0.ncols() != m {
                        return Err(Error::DimensionMismatch {
                            mode: i,
                            what: format!("control matrix is {}x{}, expected {state_dim}x{m}", g0.nrows(), g0.ncols()),
                        });
                    }
                }
                (m, Some(cs))
            }
            None => (0, None),
        };
        Ok(Self {
            n_modes: fields.len(),
            state_dim,
            dist_dim,
            ctrl_dim,
            kind: SystemKind::General { fields, controls },
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn dist_dim(&self) -> usize {
        self.dist_dim
    }

    pub fn ctrl_dim(&self) -> usize {
        self.ctrl_dim
    }

    pub fn kind(&self) -> &SystemKind {
        &self.kind
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, SystemKind::LinearAffine { .. })
    }

    /// `(A_i, B_i)` for linear-affine systems.
    pub fn linear_mode(&self, i: usize) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        match &self.kind {
            SystemKind::LinearAffine { a, b, .. } => Some((&a[i], &b[i])),
            SystemKind::General { .. } => None,
        }
    }

    pub fn check_mode(&self, i: usize) -> Result<()> {
        if i >= self.n_modes {
            Err(Error::ModeOutOfRange {
                index: i,
                n_modes: self.n_modes,
            })
        } else {
            Ok(())
        }
    }

    /// `f_i(x, d)` without the control term. `i` must be valid.
    #[inline]
    pub fn drift(&self, i: usize, x: &Vector, d: &Vector) -> Vector {
        match &self.kind {
            SystemKind::LinearAffine { a, b, .. } => {
                let mut out = &a[i] * x;
                out.gemv(1.0, &b[i], d, 1.0);
                out
            }
            SystemKind::General { fields, .. } => fields[i](x, d),
        }
    }

    /// Control matrix `[g_{i,1}(x) .. g_{i,m}(x)]`, `None` when uncontrolled.
    pub fn control_matrix(&self, i: usize, x: &Vector) -> Option<DMatrix<f64>> {
        match &self.kind {
            SystemKind::LinearAffine { g: Some(g), .. } => Some(g[i].clone()),
            SystemKind::General {
                controls: Some(c), ..
            } => Some(c[i](x)),
            _ => None,
        }
    }

    /// `f_i(x, d) + Σ_l g_{i,l}(x) u_l`.
    pub fn eval_field(&self, i: usize, x: &Vector, d: &Vector, u: Option<&Vector>) -> Result<Vector> {
        self.check_mode(i)?;
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                mode: i,
                what: format!("state has length {}, expected {}", x.len(), self.state_dim),
            });
        }
        if d.len() != self.dist_dim {
            return Err(Error::DimensionMismatch {
                mode: i,
                what: format!("disturbance has length {}, expected {}", d.len(), self.dist_dim),
            });
        }
        let mut out = self.drift(i, x, d);
        match (self.ctrl_dim, u) {
            (0, None) => {}
            (0, Some(_)) => {
                return Err(Error::InvalidParameter(
                    "control value supplied to an uncontrolled system".into(),
                ))
            }
            (_, None) => {
                return Err(Error::InvalidParameter(
                    "controlled system requires a control value".into(),
                ))
            }
            (m, Some(u)) => {
                if u.len() != m {
                    return Err(Error::DimensionMismatch {
                        mode: i,
                        what: format!("control has length {}, expected {m}", u.len()),
                    });
                }
                let g = self.control_matrix(i, x).expect("controlled system has channels");
                out.gemv(1.0, &g, u, 1.0);
            }
        }
        Ok(out)
    }

    /// Open-loop view: the same drifts with control channels dropped.
    pub fn without_controls(&self) -> SwitchedSystem {
        let kind = match &self.kind {
            SystemKind::LinearAffine { a, b, .. } => SystemKind::LinearAffine {
                a: a.clone(),
                b: b.clone(),
                g: None,
            },
            SystemKind::General { fields, .. } => SystemKind::General {
                fields: fields.clone(),
                controls: None,
            },
        };
        SwitchedSystem {
            ctrl_dim: 0,
            kind,
            ..*self
        }
    }

    /// Stable fingerprint of a linear-affine description; general systems
    /// hash only their dimensions.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fingerprint::new();
        h.usize(self.n_modes)
            .usize(self.state_dim)
            .usize(self.dist_dim)
            .usize(self.ctrl_dim);
        if let SystemKind::LinearAffine { a, b, g } = &self.kind {
            for m in a.iter().chain(b).chain(g.iter().flatten()) {
                h.slice(m.as_slice());
            }
        } else {
            h.usize(usize::MAX);
        }
        h.finish()
    }
}

/// FNV-1a over the bit patterns of the hashed values; stable across runs and
/// platforms so it can be written into artifacts.
#[derive(Clone, Copy, Debug)]
pub struct Fingerprint(u64);

impl Default for Fingerprint {
    fn default() -> Self {
        Self::new()
    }
}

impl Fingerprint {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn usize(&mut self, v: usize) -> &mut Self {
        self.u64(v as u64)
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }

    pub fn slice(&mut self, v: &[f64]) -> &mut Self {
        self.usize(v.len());
        for x in v {
            self.f64(*x);
        }
        self
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

/// Bounded disturbance inputs with analytically known sup-norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DisturbanceSignal {
    Zero {
        dim: usize,
    },
    Constant {
        value: Vec<f64>,
    },
    /// `d(t) = amplitude · sin(omega t + phase)`.
    Sinusoid {
        amplitude: Vec<f64>,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Telegraph-style signal: on each window `[n·dwell, (n+1)·dwell)` the
    /// value is `magnitude` times a unit vector drawn from the window's own
    /// random stream, so `‖d(t)‖ = magnitude` everywhere.
    PiecewiseConstantRandom {
        dim: usize,
        magnitude: f64,
        dwell: f64,
        seed: u64,
    },
}

impl DisturbanceSignal {
    pub fn zero(dim: usize) -> Self {
        DisturbanceSignal::Zero { dim }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("disturbance: {m}")));
        match self {
            DisturbanceSignal::Zero { dim } if *dim == 0 => bad("dimension must be positive"),
            DisturbanceSignal::Constant { value } if value.is_empty() || value.iter().any(|v| !v.is_finite()) => {
                bad("constant value must be a nonempty finite vector")
            }
            DisturbanceSignal::Sinusoid { amplitude, omega, phase }
                if amplitude.is_empty()
                    || amplitude.iter().any(|v| !v.is_finite())
                    || !omega.is_finite()
                    || !phase.is_finite() =>
            {
                bad("sinusoid needs a nonempty finite amplitude and finite omega, phase")
            }
            DisturbanceSignal::PiecewiseConstantRandom { dim, magnitude, dwell, .. }
                if *dim == 0 || !(magnitude.is_finite() && *magnitude >= 0.0) || !(dwell.is_finite() && *dwell > 0.0) =>
            {
                bad("piecewise-constant-random needs dim > 0, magnitude >= 0 and dwell > 0")
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DisturbanceSignal::Zero { dim } => *dim,
            DisturbanceSignal::Constant { value } => value.len(),
            DisturbanceSignal::Sinusoid { amplitude, .. } => amplitude.len(),
            DisturbanceSignal::PiecewiseConstantRandom { dim, .. } => *dim,
        }
    }

    /// `‖d‖` over `[0, inf)`.
    pub fn sup_norm(&self) -> f64 {
        match self {
            DisturbanceSignal::Zero { .. } => 0.0,
            DisturbanceSignal::Constant { value } => norm(value),
            DisturbanceSignal::Sinusoid {
                amplitude,
                omega,
                phase,
            } => {
                if *omega == 0.0 {
                    norm(amplitude) * phase.sin().abs()
                } else {
                    norm(amplitude)
                }
            }
            DisturbanceSignal::PiecewiseConstantRandom { magnitude, .. } => *magnitude,
        }
    }

    pub fn eval(&self, t: f64) -> Vector {
        match self {
            DisturbanceSignal::Zero { dim } => Vector::zeros(*dim),
            DisturbanceSignal::Constant { value } => Vector::from_column_slice(value),
            DisturbanceSignal::Sinusoid {
                amplitude,
                omega,
                phase,
            } => Vector::from_column_slice(amplitude) * (omega * t + phase).sin(),
            DisturbanceSignal::PiecewiseConstantRandom {
                dim,
                magnitude,
                dwell,
                seed,
            } => {
                let window = (t / dwell).floor().max(0.0) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(window);
                let mut v = Vector::from_fn(*dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let n = v.norm();
                if n == 0.0 {
                    v = Vector::zeros(*dim);
                    v[0] = 1.0;
                } else {
                    v /= n;
                }
                v * *magnitude
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

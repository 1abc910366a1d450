//! Closed-form stability certificates and the bounds they imply.
//!
//! * Slow switching (class G): the margin `(λ̃ + λ∘)/λ̄ − μ` must be positive;
//!   the pre-entry envelope then decays at rate `λ = λ∘ + λ̃ − μλ̄`.
//! * Uniform holding times (class UH): the contraction factor
//!   `η = Σ_j μ q_j (1 − e^{−λ_j T})/(λ_j T)` must be below one; it yields
//!   `E[V(x(τ_ν))] ≤ α₂(‖x₀‖) η^ν + k′ χ(‖d‖)`.
//! * Markov switching: a pointwise generator decrement outside a
//!   gain-margin ball.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lyapunov::{DecrementAccumulator, DecrementReport, LyapunovFamily, DECREMENT_TOL};
use crate::model::{Fingerprint, PowerGain, SwitchedSystem, Vector};
use crate::switching::{ClassGParams, CtmcParams, UhParams};

/// Below this `|z|` the closed forms switch to their Taylor series.
pub const SERIES_CROSSOVER: f64 = 1e-4;

/// `φ₀(z) = (1 − e^{−z})/z`, continuous at 0 with `φ₀(0) = 1`.
pub fn phi0(z: f64) -> f64 {
    if z.abs() < SERIES_CROSSOVER {
        1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0
    } else {
        -(-z).exp_m1() / z
    }
}

/// `(1 − φ₀(λT))/λ`, the expected `(1 − e^{−λS})/λ` for `S ~ Uniform(0, T]`.
/// Tends to `T/2` as `λ → 0`.
pub fn relaxation_factor(lambda: f64, t_max: f64) -> f64 {
    let z = lambda * t_max;
    if z.abs() < SERIES_CROSSOVER {
        t_max * (0.5 - z / 6.0 + z * z / 24.0 - z * z * z / 120.0)
    } else {
        (1.0 - phi0(z)) / lambda
    }
}

fn check_uh_inputs(mu: f64, rates: &[f64], q: &[f64], t_max: f64) -> Result<()> {
    if rates.len() != q.len() {
        return Err(Error::InvalidParameter(format!(
            "{} rates but {} mode probabilities",
            rates.len(),
            q.len()
        )));
    }
    if !(mu.is_finite() && mu >= 1.0) {
        return Err(Error::InvalidParameter(format!("mu must be >= 1, got {mu}")));
    }
    UhParams::new(t_max, q.to_vec()).map(|_| ())
}

/// Contraction factor `η = Σ_j μ q_j φ₀(λ_j T)`.
pub fn uh_contraction(mu: f64, rates: &[f64], q: &[f64], t_max: f64) -> Result<f64> {
    check_uh_inputs(mu, rates, q, t_max)?;
    Ok(rates
        .iter()
        .zip(q)
        .map(|(l, qj)| mu * qj * phi0(l * t_max))
        .sum())
}

/// `k′ = μ Σ_j q_j (1 − φ₀(λ_j T))/λ_j / (1 − η)`.
pub fn uh_kprime(mu: f64, rates: &[f64], q: &[f64], t_max: f64) -> Result<f64> {
    let eta = uh_contraction(mu, rates, q, t_max)?;
    if eta >= 1.0 {
        return Err(Error::Infeasible(format!(
            "contraction factor {eta} >= 1; the gain constant is undefined"
        )));
    }
    let numerator: f64 = rates
        .iter()
        .zip(q)
        .map(|(l, qj)| qj * relaxation_factor(*l, t_max))
        .sum();
    Ok(mu * numerator / (1.0 - eta))
}

/// Class-KL bounds in the two closed forms the certificates produce.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum KlBound {
    /// `α₂(r) e^{−rate·s}`.
    Exponential { alpha2: PowerGain, rate: f64 },
    /// `α₂(r) factor^s`.
    Geometric { alpha2: PowerGain, factor: f64 },
}

impl KlBound {
    pub fn eval(&self, r: f64, s: f64) -> f64 {
        match self {
            KlBound::Exponential { alpha2, rate } => alpha2.at(r) * (-rate * s).exp(),
            KlBound::Geometric { alpha2, factor } => alpha2.at(r) * factor.powf(s),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateKind {
    ClassG,
    Uh,
    Markov,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CertificateInputs {
    ClassG {
        mu: f64,
        lambda_circ: f64,
        lambda_bar: f64,
        lambda_tilde: f64,
    },
    Uh {
        mu: f64,
        rates: Vec<f64>,
        q: Vec<f64>,
        #[serde(rename = "T")]
        t_max: f64,
    },
    Markov {
        lambda_circ: f64,
        rho: PowerGain,
        generator: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateReport {
    pub kind: CertificateKind,
    pub inputs: CertificateInputs,
    /// `(λ̃ + λ∘)/λ̄ − μ` (class G).
    pub margin: Option<f64>,
    /// `λ∘ + λ̃ − μλ̄`, recorded when the class-G margin is positive.
    pub decay_rate: Option<f64>,
    /// Contraction factor (class UH).
    pub eta: Option<f64>,
    pub k_prime: Option<f64>,
    pub beta: Option<KlBound>,
    pub gamma: Option<PowerGain>,
    pub generator_check: Option<DecrementReport>,
    pub pass: bool,
    pub reason: Option<String>,
    /// Hex digest of the certificate inputs, used to match batches.
    pub fingerprint: String,
}

impl CertificateReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    /// Adds the post-exit gain `γ(r) = (1 + 1/δ) α₂(η_ball ρ(r))` to a
    /// class-G report.
    pub fn with_excursion_gain(mut self, alpha2: PowerGain, rho: PowerGain, eta_ball: f64, delta: f64) -> Result<Self> {
        if self.kind != CertificateKind::ClassG {
            return Err(Error::Refused("excursion gain applies to class-G certificates only".into()));
        }
        if !(eta_ball > 0.0 && delta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eta_ball and delta must be positive, got {eta_ball}, {delta}"
            )));
        }
        let inflated = rho.scaled(eta_ball);
        self.gamma = Some(alpha2.compose(&inflated).scaled(1.0 + 1.0 / delta));
        Ok(self)
    }
}

pub(crate) fn uh_fingerprint(mu: f64, rates: &[f64], q: &[f64], t_max: f64) -> String {
    let mut h = Fingerprint::new();
    h.f64(mu).slice(rates).slice(q).f64(t_max);
    format!("{:016x}", h.finish())
}

pub(crate) fn class_g_fingerprint(mu: f64, lambda_circ: f64, p: &ClassGParams) -> String {
    let mut h = Fingerprint::new();
    h.f64(mu).f64(lambda_circ).f64(p.lambda_bar).f64(p.lambda_tilde);
    format!("{:016x}", h.finish())
}

/// Slow-switching certificate: passes iff `μ < (λ̃ + λ∘)/λ̄`.
pub fn check_g3(mu: f64, lambda_circ: f64, p: &ClassGParams) -> CertificateReport {
    let margin = (p.lambda_tilde + lambda_circ) / p.lambda_bar - mu;
    let rate = lambda_circ + p.lambda_tilde - mu * p.lambda_bar;
    let pass = margin > 0.0 && lambda_circ > 0.0 && mu >= 1.0;
    let reason = if pass {
        None
    } else if lambda_circ <= 0.0 {
        Some(format!("common rate {lambda_circ} is not positive"))
    } else {
        Some(format!(
            "mu = {mu} is not below (lambda_tilde + lambda_circ)/lambda_bar = {}",
            (p.lambda_tilde + lambda_circ) / p.lambda_bar
        ))
    };
    CertificateReport {
        kind: CertificateKind::ClassG,
        inputs: CertificateInputs::ClassG {
            mu,
            lambda_circ,
            lambda_bar: p.lambda_bar,
            lambda_tilde: p.lambda_tilde,
        },
        margin: Some(margin),
        decay_rate: pass.then_some(rate),
        eta: None,
        k_prime: None,
        beta: None,
        gamma: None,
        generator_check: None,
        pass,
        reason,
        fingerprint: class_g_fingerprint(mu, lambda_circ, p),
    }
}

/// Class-G certificate for a Lyapunov family: the common rate is the
/// smallest family rate (dissipation at a rate implies it at any lower one).
pub fn class_g_certificate(fam: &LyapunovFamily, p: &ClassGParams) -> CertificateReport {
    let lambda_circ = fam.rates().iter().copied().fold(f64::INFINITY, f64::min);
    let mut report = check_g3(fam.mu(), lambda_circ, p);
    report.beta = report.decay_rate.map(|rate| KlBound::Exponential {
        alpha2: fam.alpha2(),
        rate,
    });
    report
}

/// Uniform-holding-time certificate for a Lyapunov family.
pub fn uh_certificate(fam: &LyapunovFamily, p: &UhParams) -> Result<CertificateReport> {
    if fam.n_modes() != p.n_modes() {
        return Err(Error::InvalidParameter(format!(
            "family has {} modes, switching law has {}",
            fam.n_modes(),
            p.n_modes()
        )));
    }
    let eta = uh_contraction(fam.mu(), fam.rates(), &p.q, p.t_max)?;
    let pass = eta < 1.0;
    let k_prime = if pass {
        Some(uh_kprime(fam.mu(), fam.rates(), &p.q, p.t_max)?)
    } else {
        None
    };
    Ok(CertificateReport {
        kind: CertificateKind::Uh,
        inputs: CertificateInputs::Uh {
            mu: fam.mu(),
            rates: fam.rates().to_vec(),
            q: p.q.clone(),
            t_max: p.t_max,
        },
        margin: None,
        decay_rate: None,
        eta: Some(eta),
        k_prime,
        beta: pass.then_some(KlBound::Geometric {
            alpha2: fam.alpha2(),
            factor: eta,
        }),
        gamma: k_prime.map(|k| fam.chi().scaled(k)),
        generator_check: None,
        pass,
        reason: (!pass).then(|| format!("contraction factor {eta} is not below 1")),
        fingerprint: uh_fingerprint(fam.mu(), fam.rates(), &p.q, p.t_max),
    })
}

/// `B(ν) = α₂(‖x₀‖) η^ν + k′ χ(‖d‖)`.
pub fn uh_bound(fam: &LyapunovFamily, report: &CertificateReport, x0_norm: f64, d_sup: f64, nu: u32) -> Result<f64> {
    if report.kind != CertificateKind::Uh {
        return Err(Error::Refused("bound requires a class-UH certificate".into()));
    }
    if !report.pass {
        return Err(Error::Refused(
            report.reason.clone().unwrap_or_else(|| "certificate failed".into()),
        ));
    }
    let eta = report.eta.expect("passing UH report has eta");
    let k_prime = report.k_prime.expect("passing UH report has k'");
    Ok(fam.alpha2().eval(x0_norm)? * eta.powi(nu as i32) + k_prime * fam.chi().eval(d_sup)?)
}

/// `LV(i, x) = ∇V_i(x)·f_i(x, d) + Σ_j q_{ij} V_j(x)`.
pub fn generator_value(sys: &SwitchedSystem, fam: &LyapunovFamily, q: &CtmcParams, i: usize, x: &Vector, d: &Vector) -> f64 {
    let flow = sys.drift(i, x, d);
    let jump: f64 = q.generator[i]
        .iter()
        .enumerate()
        .map(|(j, qij)| qij * fam.eval_v(j, x))
        .sum();
    fam.grad_v(i, x).dot(&flow) + jump
}

/// Checks `LV(i, x) + λ∘ V_i(x) ≤ tol` at every sampled `(i, x, d)` with
/// `‖x‖ ≥ ρ(‖d‖)`; points inside the gain-margin ball are skipped.
pub fn markov_generator_check(
    sys: &SwitchedSystem,
    fam: &LyapunovFamily,
    q: &CtmcParams,
    rho: PowerGain,
    lambda_circ: f64,
    x_samples: &[Vector],
    d_samples: &[Vector],
) -> Result<DecrementReport> {
    if x_samples.is_empty() || d_samples.is_empty() {
        return Err(Error::InvalidParameter("generator check needs nonempty sample lists".into()));
    }
    if q.n_modes() != sys.n_modes() || fam.n_modes() != sys.n_modes() {
        return Err(Error::InvalidParameter("generator, system and family mode counts differ".into()));
    }
    let mut acc = DecrementAccumulator::new(DECREMENT_TOL);
    for i in 0..sys.n_modes() {
        for x in x_samples {
            for d in d_samples {
                if x.norm() < rho.at(d.norm()) {
                    acc.skip(1);
                    continue;
                }
                let r = generator_value(sys, fam, q, i, x, d) + lambda_circ * fam.eval_v(i, x);
                acc.record(r, i, x, d, 1);
            }
        }
    }
    Ok(acc.finish())
}

/// Markov certificate: the generator check wrapped as a report.
pub fn markov_certificate(
    sys: &SwitchedSystem,
    fam: &LyapunovFamily,
    q: &CtmcParams,
    rho: PowerGain,
    lambda_circ: f64,
    x_samples: &[Vector],
    d_samples: &[Vector],
) -> Result<CertificateReport> {
    let check = markov_generator_check(sys, fam, q, rho, lambda_circ, x_samples, d_samples)?;
    let pass = check.pass && lambda_circ > 0.0;
    let mut h = Fingerprint::new();
    h.f64(lambda_circ).f64(rho.coeff).f64(rho.exponent);
    for row in &q.generator {
        h.slice(row);
    }
    Ok(CertificateReport {
        kind: CertificateKind::Markov,
        inputs: CertificateInputs::Markov {
            lambda_circ,
            rho,
            generator: q.generator.clone(),
        },
        margin: None,
        decay_rate: None,
        eta: None,
        k_prime: None,
        beta: None,
        gamma: None,
        reason: (!pass).then(|| match &check.witness {
            Some(w) => format!(
                "generator decrement violated in mode {} at x = {:?}, d = {:?} (residual {:.3e})",
                w.mode, w.x, w.d, w.residual
            ),
            None => "common rate must be positive".into(),
        }),
        generator_check: Some(check),
        pass,
        fingerprint: format!("{:016x}", h.finish()),
    })
}

/// Result of searching for uniform-holding-time parameters with `η < 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UhTuning {
    pub params: UhParams,
    pub eta: f64,
}

/// Searches `T` (and, if needed, a tilt of `q` toward the most contractive
/// mode) for parameters with `η < 1`, returning the most contractive found.
pub fn tune_uh(mu: f64, rates: &[f64], q: Option<&[f64]>) -> Option<UhTuning> {
    let n = rates.len();
    if n == 0 {
        return None;
    }
    let uniform = vec![1.0 / n as f64; n];
    let base = q.map(|q| q.to_vec()).unwrap_or(uniform);
    let mut candidates = vec![base.clone()];
    if n > 1 {
        let best = rates
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j)
            .expect("nonempty");
        for eps in [0.5, 0.25, 0.1, 0.05] {
            candidates.push(
                (0..n)
                    .map(|j| {
                        let spread = eps / n as f64;
                        if j == best {
                            1.0 - eps + spread
                        } else {
                            spread
                        }
                    })
                    .collect(),
            );
        }
    }
    for q in candidates {
        let eta_at = |t: f64| uh_contraction(mu, rates, &q, t).unwrap_or(f64::INFINITY);
        // coarse log-spaced scan on [1e-3, 1e3]
        let grid: Vec<f64> = (0..=600).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 600.0)).collect();
        let (k_best, _) = grid
            .iter()
            .enumerate()
            .map(|(k, &t)| (k, eta_at(t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty grid");
        // golden-section refinement on the bracketing cell
        let (mut lo, mut hi) = (grid[k_best.saturating_sub(1)].ln(), grid[(k_best + 1).min(600)].ln());
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if eta_at(a.exp()) < eta_at(b.exp()) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let t = (0.5 * (lo + hi)).exp();
        let eta = eta_at(t);
        if eta < 1.0 {
            if let Ok(params) = UhParams::new(t, q) {
                return Some(UhTuning { params, eta });
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_linear_system;
    use nalgebra::dmatrix;

    /// Composite Simpson quadrature on `[0, T]`.
    fn simpson<F: Fn(f64) -> f64>(f: F, t: f64, n: usize) -> f64 {
        let h = t / n as f64;
        let mut s = f(0.0) + f(t);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(k as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn contraction_examples() {
        let eta = uh_contraction(1.0, &[1.0], &[1.0], 1.0).unwrap();
        let oracle = simpson(|s| (-s).exp(), 1.0, 2000);
        assert!((eta - oracle).abs() < 1e-12);
        assert!((eta - 0.632121).abs() < 1e-6);

        let small = uh_contraction(1.0, &[1e-9], &[1.0], 1.0).unwrap();
        assert!((small - 1.0).abs() < 1e-9);

        let eta = uh_contraction(1.0, &[1.0, 3.0], &[0.5, 0.5], 1.0).unwrap();
        let oracle = 0.5 * simpson(|s| (-s).exp(), 1.0, 2000) + 0.5 * simpson(|s| (-3.0 * s).exp(), 1.0, 2000);
        assert!((eta - oracle).abs() < 1e-12);
        assert!((eta - 0.474429).abs() < 1e-6, "{eta}");
    }

    #[test]
    fn kprime_examples() {
        let k = uh_kprime(1.0, &[1.0], &[1.0], 1.0).unwrap();
        assert!((k - 1.0).abs() < 1e-12, "{k}");

        assert!((relaxation_factor(1e-12, 2.0) - 1.0).abs() < 1e-9);

        let k = uh_kprime(1.0, &[1.0, 3.0], &[0.5, 0.5], 1.0).unwrap();
        let num = 0.5 * simpson(|s| 1.0 - (-s).exp(), 1.0, 2000) + 0.5 * simpson(|s| (1.0 - (-3.0 * s).exp()) / 3.0, 1.0, 2000);
        let eta = 0.5 * simpson(|s| (-s).exp(), 1.0, 2000) + 0.5 * simpson(|s| (-3.0 * s).exp(), 1.0, 2000);
        assert!((k - num / (1.0 - eta)).abs() < 1e-10, "{k}");

        assert!(matches!(uh_kprime(2.0, &[0.1], &[1.0], 1.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn phi0_continuous_across_crossover() {
        for z in [SERIES_CROSSOVER, -SERIES_CROSSOVER] {
            for dz in [1e-6, -1e-6] {
                assert!((phi0(z) - phi0(z + dz)).abs() <= 1e-5);
            }
            let below = z * (1.0 - 1e-9);
            assert!((phi0(below) - phi0(z)).abs() < 1e-12);
        }
    }

    #[test]
    fn g3_examples() {
        let p = ClassGParams::with_uniform_kernel(0.2, 0.2, 2).unwrap();
        let r = check_g3(1.0, 1.0, &p);
        assert!(r.pass);
        assert!((r.margin.unwrap() - 5.0).abs() < 1e-12);
        assert!((r.decay_rate.unwrap() - 1.0).abs() < 1e-12);

        let r = check_g3(6.0, 1.0, &p);
        assert!(!r.pass);

        let q = ClassGParams::with_uniform_kernel(1.0, 1.0, 2).unwrap();
        let r = check_g3(2.0, 0.1, &q);
        assert!(!r.pass && r.margin.unwrap() < 0.0);
        assert!(r.decay_rate.is_none());
    }

    fn benchmark_family() -> LyapunovFamily {
        LyapunovFamily::quadratic(vec![dmatrix![1.0], dmatrix![1.0]], vec![1.0, 3.0], None, PowerGain::quadratic(1.0), None, None).unwrap()
    }

    #[test]
    fn bound_examples() {
        let fam = benchmark_family();
        let p = UhParams::new(1.0, vec![0.5, 0.5]).unwrap();
        let r = uh_certificate(&fam, &p).unwrap();
        let eta = r.eta.unwrap();
        let kp = r.k_prime.unwrap();
        assert!(r.pass);
        assert!((uh_bound(&fam, &r, 5.0, 0.0, 3).unwrap() - 25.0 * eta.powi(3)).abs() < 1e-12);
        assert!((uh_bound(&fam, &r, 0.0, 0.5, 7).unwrap() - kp * 0.25).abs() < 1e-15);
        assert!((uh_bound(&fam, &r, 5.0, 0.5, 1).unwrap() - (25.0 * eta + kp * 0.25)).abs() < 1e-12);
        let b: Vec<f64> = (1..20).map(|nu| uh_bound(&fam, &r, 5.0, 0.0, nu).unwrap()).collect();
        assert!(b.windows(2).all(|w| w[1] < w[0]));

        let failing = uh_certificate(&fam.with_rates(vec![-5.0, -5.0]).unwrap(), &p).unwrap();
        assert!(!failing.pass && failing.k_prime.is_none());
        assert!(uh_bound(&fam, &failing, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn markov_generator_examples() {
        // Q = 0 reduces to a plain decrement: ẋ = −x, V = x², LV = −2x².
        let sys = make_linear_system(vec![dmatrix![-1.0]], vec![dmatrix![0.0]], None).unwrap();
        let fam = LyapunovFamily::quadratic(vec![dmatrix![1.0]], vec![1.0], None, PowerGain::quadratic(1.0), None, None).unwrap();
        let q0 = CtmcParams::new(vec![vec![0.0]]).unwrap();
        let xs: Vec<Vector> = (1..20).map(|k| Vector::from_element(1, k as f64 * 0.3)).collect();
        let ds = vec![Vector::zeros(1)];
        let rho = PowerGain::linear(1.0);
        assert!(markov_generator_check(&sys, &fam, &q0, rho, 2.0, &xs, &ds).unwrap().pass);
        assert!(!markov_generator_check(&sys, &fam, &q0, rho, 2.5, &xs, &ds).unwrap().pass);

        // Everything inside the gain-margin ball: vacuous pass.
        let inside = vec![Vector::from_element(1, 0.1)];
        let big_d = vec![Vector::from_element(1, 1.0)];
        let r = markov_generator_check(&sys, &fam, &q0, rho, 100.0, &inside, &big_d).unwrap();
        assert!(r.pass && r.n_skipped == 1 && r.n_checked == 0);

        // Two modes with V₂ = 2V₁: the jump sum contributes q₁₂(V₂ − V₁) = x².
        let sys2 = make_linear_system(vec![dmatrix![-1.0], dmatrix![-2.0]], vec![dmatrix![1.0], dmatrix![1.0]], None).unwrap();
        let fam2 = LyapunovFamily::quadratic(vec![dmatrix![1.0], dmatrix![2.0]], vec![1.0, 1.0], None, PowerGain::quadratic(1.0), None, None).unwrap();
        let q = CtmcParams::new(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let x = Vector::from_element(1, 1.5);
        let d = Vector::zeros(1);
        let lv1 = generator_value(&sys2, &fam2, &q, 0, &x, &d);
        assert!((lv1 - (-2.0 * 2.25 + 2.25)).abs() < 1e-12);
    }

    #[test]
    fn excursion_gain_composition() {
        let p = ClassGParams::with_uniform_kernel(0.2, 0.2, 1).unwrap();
        let r = check_g3(1.0, 1.0, &p)
            .with_excursion_gain(PowerGain::quadratic(1.0), PowerGain::linear(2.0), 1.5, 1.0)
            .unwrap();
        let gamma = r.gamma.unwrap();
        // (1 + 1/1) · (1.5 · 2 · 0.5)²
        assert!((gamma.at(0.5) - 2.0 * 2.25).abs() < 1e-12);
    }

    #[test]
    fn tuning_finds_feasible_parameters() {
        let t = tune_uh(1.0, &[1.0, 3.0, -0.5], None).unwrap();
        assert!(t.eta < 1.0);
        assert!((uh_contraction(1.0, &[1.0, 3.0, -0.5], &t.params.q, t.params.t_max).unwrap() - t.eta).abs() < 1e-15);
        // all modes expanding: no parameters work
        assert!(tune_uh(1.0, &[-1.0, -2.0], None).is_none());
    }
}

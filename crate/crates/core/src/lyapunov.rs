//! Multiple ISS-Lyapunov functions and numerical checks of their hypotheses.
//!
//! Families are quadratic, `V_i(x) = xᵀ P_i x`, with:
//!
//! * sandwich bounds `α₁(‖x‖) ≤ V_i(x) ≤ α₂(‖x‖)`, exact by construction;
//! * dissipation `∇V_i · f_i(x, d) ≤ −λ_i V_i(x) + χ(‖d‖)`, checked on grids
//!   (and exactly constructible for linear modes, see
//!   [`linear_rate_certificate`]);
//! * compatibility `V_i ≤ μ V_j`, whose minimal constant is a generalized
//!   eigenvalue.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{gen_eig_max, is_symmetric, sym_eig_extremes, symmetrize};
use crate::model::{PowerGain, SwitchedSystem, Vector};

/// Residual tolerance for dissipation checks.
pub const DECREMENT_TOL: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovFamily {
    p: Vec<DMatrix<f64>>,
    rates: Vec<f64>,
    mu: f64,
    alpha1: PowerGain,
    alpha2: PowerGain,
    chi: PowerGain,
}

impl LyapunovFamily {
    /// Builds a quadratic family. `mu` defaults to the exact minimal
    /// compatibility constant; `alpha1`/`alpha2` default to the extreme
    /// eigenvalues of the `P_i`.
    pub fn quadratic(
        p: Vec<DMatrix<f64>>,
        rates: Vec<f64>,
        mu: Option<f64>,
        chi: PowerGain,
        alpha1: Option<PowerGain>,
        alpha2: Option<PowerGain>,
    ) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidParameter("Lyapunov family is empty".into()));
        }
        if p.len() != rates.len() {
            return Err(Error::InvalidParameter(format!(
                "{} matrices but {} rates",
                p.len(),
                rates.len()
            )));
        }
        let n = p[0].nrows();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (i, pi) in p.iter().enumerate() {
            if pi.nrows() != n || !pi.is_square() {
                return Err(Error::DimensionMismatch {
                    mode: i,
                    what: format!("P is {}x{}, expected {n}x{n}", pi.nrows(), pi.ncols()),
                });
            }
            if !is_symmetric(pi, SYMMETRY_TOL) {
                return Err(Error::InvalidParameter(format!("P[{i}] is not symmetric")));
            }
            let (l, h) = sym_eig_extremes(pi);
            if !(l > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "P[{i}] is not positive definite (smallest eigenvalue {l})"
                )));
            }
            lo = lo.min(l);
            hi = hi.max(h);
        }
        if rates.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidParameter("rates must be finite".into()));
        }
        let alpha1 = alpha1.unwrap_or(PowerGain::quadratic(lo));
        let alpha2 = alpha2.unwrap_or(PowerGain::quadratic(hi));
        if alpha1.exponent != 2.0 || alpha2.exponent != 2.0 {
            return Err(Error::InvalidParameter(
                "quadratic families need exponent-2 sandwich gains".into(),
            ));
        }
        if alpha1.coeff > lo * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "alpha1 coefficient {} exceeds min eigenvalue {lo}",
                alpha1.coeff
            )));
        }
        if alpha2.coeff < hi * (1.0 - 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "alpha2 coefficient {} is below max eigenvalue {hi}",
                alpha2.coeff
            )));
        }
        let p: Vec<_> = p.iter().map(symmetrize).collect();
        let exact = exact_mu_of(&p)?;
        let mu = mu.unwrap_or(exact);
        if !(mu.is_finite() && mu >= 1.0) {
            return Err(Error::InvalidParameter(format!("mu must be >= 1, got {mu}")));
        }
        Ok(Self {
            p,
            rates,
            mu,
            alpha1,
            alpha2,
            chi,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.p.len()
    }

    pub fn state_dim(&self) -> usize {
        self.p[0].nrows()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.p
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn alpha1(&self) -> PowerGain {
        self.alpha1
    }

    pub fn alpha2(&self) -> PowerGain {
        self.alpha2
    }

    pub fn chi(&self) -> PowerGain {
        self.chi
    }

    /// Same functions with different rates.
    pub fn with_rates(&self, rates: Vec<f64>) -> Result<Self> {
        Self::quadratic(
            self.p.clone(),
            rates,
            Some(self.mu),
            self.chi,
            Some(self.alpha1),
            Some(self.alpha2),
        )
    }

    /// `xᵀ P_i x`.
    #[inline]
    pub fn eval_v(&self, i: usize, x: &Vector) -> f64 {
        x.dot(&(&self.p[i] * x))
    }

    /// `2 P_i x`.
    #[inline]
    pub fn grad_v(&self, i: usize, x: &Vector) -> Vector {
        (&self.p[i] * x) * 2.0
    }

    /// Minimal `μ` with `V_i ≤ μ V_j` for all pairs.
    pub fn exact_mu(&self) -> f64 {
        exact_mu_of(&self.p).expect("family matrices are positive definite")
    }

    /// Whether the stored `μ` dominates the exact constant.
    pub fn mu_is_valid(&self) -> bool {
        self.mu >= self.exact_mu() * (1.0 - 1e-12)
    }

    /// Checks `α₁(‖x‖) ≤ V_i(x) ≤ α₂(‖x‖)` at every mode and sampled state.
    /// The residual is the larger of the two violations.
    pub fn check_sandwich(&self, x_samples: &[Vector]) -> DecrementReport {
        let mut acc = DecrementAccumulator::new(DECREMENT_TOL);
        let none = Vector::zeros(0);
        for i in 0..self.n_modes() {
            for x in x_samples {
                let r = x.norm();
                let v = self.eval_v(i, x);
                let residual = (self.alpha1.at(r) - v).max(v - self.alpha2.at(r));
                acc.record(residual, i, x, &none, 1);
            }
        }
        acc.finish()
    }

    /// Residual of the dissipation inequality at one point.
    #[inline]
    pub fn decrement_residual(&self, i: usize, x: &Vector, flow: &Vector, d: &Vector) -> f64 {
        self.grad_v(i, x).dot(flow) + self.rates[i] * self.eval_v(i, x) - self.chi.at(d.norm())
    }

    /// Checks `∇V_i·f_i(x,d) + λ_i V_i(x) − χ(‖d‖) ≤ tol` over every mode and
    /// every sampled `(x, d)`.
    pub fn check_decrement(&self, sys: &SwitchedSystem, x_samples: &[Vector], d_samples: &[Vector]) -> Result<DecrementReport> {
        if x_samples.is_empty() || d_samples.is_empty() {
            return Err(Error::InvalidParameter("decrement check needs nonempty sample lists".into()));
        }
        if sys.n_modes() != self.n_modes() || sys.state_dim() != self.state_dim() {
            return Err(Error::InvalidParameter(format!(
                "system ({} modes, n = {}) and Lyapunov family ({} modes, n = {}) disagree",
                sys.n_modes(),
                sys.state_dim(),
                self.n_modes(),
                self.state_dim()
            )));
        }
        let mut acc = DecrementAccumulator::new(DECREMENT_TOL);
        for i in 0..self.n_modes() {
            let worst = x_samples
                .par_iter()
                .enumerate()
                .map(|(xi, x)| {
                    let mut best: Option<(f64, usize, usize)> = None;
                    for (di, d) in d_samples.iter().enumerate() {
                        let r = self.decrement_residual(i, x, &sys.drift(i, x, d), d);
                        if best.is_none_or(|(b, _, _)| r > b) {
                            best = Some((r, xi, di));
                        }
                    }
                    best.expect("nonempty disturbance samples")
                })
                .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
                .expect("nonempty state samples");
            acc.record(worst.0, i, &x_samples[worst.1], &d_samples[worst.2], x_samples.len() * d_samples.len());
        }
        Ok(acc.finish())
    }
}

fn exact_mu_of(p: &[DMatrix<f64>]) -> Result<f64> {
    let mut mu = 1.0f64;
    for (i, pi) in p.iter().enumerate() {
        for (j, pj) in p.iter().enumerate() {
            if i != j {
                mu = mu.max(gen_eig_max(pi, pj)?);
            }
        }
    }
    Ok(mu)
}

pub fn eval_v(fam: &LyapunovFamily, i: usize, x: &Vector) -> f64 {
    fam.eval_v(i, x)
}

pub fn grad_v(fam: &LyapunovFamily, i: usize, x: &Vector) -> Vector {
    fam.grad_v(i, x)
}

pub fn exact_mu(fam: &LyapunovFamily) -> f64 {
    fam.exact_mu()
}

pub fn check_decrement(
    sys: &SwitchedSystem,
    fam: &LyapunovFamily,
    x_samples: &[Vector],
    d_samples: &[Vector],
) -> Result<DecrementReport> {
    fam.check_decrement(sys, x_samples, d_samples)
}

/// Point at which a residual was attained.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub mode: usize,
    pub x: Vec<f64>,
    pub d: Vec<f64>,
    pub residual: f64,
}

/// Outcome of a grid check of a pointwise inequality `residual ≤ tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecrementReport {
    pub max_residual: f64,
    pub witness: Option<Witness>,
    pub n_checked: usize,
    pub n_skipped: usize,
    pub tolerance: f64,
    pub pass: bool,
}

impl DecrementReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Order-independent max-reduction shared by the grid checks.
pub(crate) struct DecrementAccumulator {
    worst: Option<Witness>,
    checked: usize,
    skipped: usize,
    tol: f64,
}

impl DecrementAccumulator {
    pub(crate) fn new(tol: f64) -> Self {
        Self {
            worst: None,
            checked: 0,
            skipped: 0,
            tol,
        }
    }

    pub(crate) fn record(&mut self, residual: f64, mode: usize, x: &Vector, d: &Vector, count: usize) {
        self.checked += count;
        if self.worst.as_ref().is_none_or(|w| residual > w.residual) {
            self.worst = Some(Witness {
                mode,
                x: x.iter().copied().collect(),
                d: d.iter().copied().collect(),
                residual,
            });
        }
    }

    pub(crate) fn skip(&mut self, count: usize) {
        self.skipped += count;
    }

    pub(crate) fn finish(self) -> DecrementReport {
        let max_residual = self.worst.as_ref().map_or(f64::NEG_INFINITY, |w| w.residual);
        DecrementReport {
            max_residual,
            pass: self.worst.is_none() || max_residual <= self.tol,
            witness: self.worst,
            n_checked: self.checked,
            n_skipped: self.skipped,
            tolerance: self.tol,
        }
    }
}

/// Exact dissipation data for a linear mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateCertificate {
    pub lambda: f64,
    /// Coefficient `c` of `χ(r) = c r²`.
    pub chi_coeff: f64,
}

/// Rate certificate with the default square-completion split `c = 1`
/// (`c = 0` when `B = 0`) and no floor on `λ`.
pub fn linear_rate_certificate(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<RateCertificate> {
    linear_rate_certificate_with(a, b, p, 1.0, f64::NEG_INFINITY)
}

/// Finds `λ` with
/// `xᵀ(AᵀP + PA)x + 2xᵀPBd ≤ −λ xᵀPx + c‖d‖²` for all `(x, d)`.
///
/// Uses `2xᵀPBd ≤ c⁻¹‖BᵀPx‖² + c‖d‖²`, so `λ` is minus the largest
/// generalized eigenvalue of `(AᵀP + PA + c⁻¹PBBᵀP, P)`.
pub fn linear_rate_certificate_with(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p: &DMatrix<f64>,
    chi_coeff: f64,
    floor: f64,
) -> Result<RateCertificate> {
    let n = p.nrows();
    if a.nrows() != n || a.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch {
            mode: 0,
            what: "A, B and P dimensions disagree".into(),
        });
    }
    if !is_symmetric(p, SYMMETRY_TOL) || !(sym_eig_extremes(p).0 > 0.0) {
        return Err(Error::InvalidParameter("P must be symmetric positive definite".into()));
    }
    let mut m = a.transpose() * p + p * a;
    let has_channel = b.iter().any(|v| *v != 0.0);
    let c = if has_channel {
        if !(chi_coeff.is_finite() && chi_coeff > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "disturbance gain coefficient must be positive, got {chi_coeff}"
            )));
        }
        let pb = p * b;
        m += &pb * pb.transpose() / chi_coeff;
        chi_coeff
    } else {
        0.0
    };
    let lambda = -gen_eig_max(&m, p)?;
    if !(lambda > floor) {
        return Err(Error::Infeasible(format!(
            "certified rate {lambda} does not exceed the floor {floor}"
        )));
    }
    Ok(RateCertificate { lambda, chi_coeff: c })
}

/// Deterministic low-discrepancy points in the closed ball of radius
/// `radius`: Halton points of `[-1, 1]^dim` kept when inside the unit ball.
pub fn halton_ball(n_points: usize, dim: usize, radius: f64) -> Vec<Vector> {
    const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    assert!(dim >= 1 && dim <= PRIMES.len(), "halton grid supports dimensions 1..=12");
    let mut out = Vec::with_capacity(n_points);
    let mut index = 1u64;
    while out.len() < n_points {
        let v = Vector::from_fn(dim, |j, _| 2.0 * radical_inverse(index, PRIMES[j]) - 1.0);
        index += 1;
        if v.norm_squared() <= 1.0 {
            out.push(v * radius);
        }
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// `n` disturbance values with magnitudes evenly spaced on `[0, radius]`
/// and directions from a low-discrepancy sequence (alternating signs in 1-D).
pub fn disturbance_grid(n: usize, dim: usize, radius: f64) -> Vec<Vector> {
    let dirs = if dim == 1 {
        (0..n)
            .map(|l| Vector::from_element(1, if l % 2 == 0 { 1.0 } else { -1.0 }))
            .collect::<Vec<_>>()
    } else {
        halton_ball(2 * n + 1, dim, 1.0)
            .into_iter()
            .filter(|v| v.norm() > 1e-3)
            .take(n)
            .map(|v| v.normalize())
            .collect()
    };
    dirs.into_iter()
        .enumerate()
        .map(|(l, u)| {
            let mag = if n > 1 { radius * l as f64 / (n - 1) as f64 } else { radius };
            u * mag
        })
        .collect()
}

/// Sampling grid for dissipation checks.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "GridSpec::default_state_radius")]
    pub state_radius: f64,
    #[serde(default = "GridSpec::default_dist_radius")]
    pub dist_radius: f64,
    #[serde(default = "GridSpec::default_n_states")]
    pub n_states: usize,
    #[serde(default = "GridSpec::default_n_dist")]
    pub n_dist: usize,
}

impl GridSpec {
    fn default_state_radius() -> f64 {
        10.0
    }
    fn default_dist_radius() -> f64 {
        2.0
    }
    fn default_n_states() -> usize {
        1000
    }
    fn default_n_dist() -> usize {
        10
    }

    pub fn states(&self, dim: usize) -> Vec<Vector> {
        let mut xs = halton_ball(self.n_states.saturating_sub(1), dim, self.state_radius);
        xs.insert(0, Vector::zeros(dim));
        xs
    }

    pub fn disturbances(&self, dim: usize) -> Vec<Vector> {
        disturbance_grid(self.n_dist, dim, self.dist_radius)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            state_radius: Self::default_state_radius(),
            dist_radius: Self::default_dist_radius(),
            n_states: Self::default_n_states(),
            n_dist: Self::default_n_dist(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_linear_system;
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn sq() -> PowerGain {
        PowerGain::quadratic(1.0)
    }

    fn family(p: Vec<DMatrix<f64>>, rates: Vec<f64>) -> LyapunovFamily {
        LyapunovFamily::quadratic(p, rates, None, sq(), None, None).unwrap()
    }

    #[test]
    fn sandwich_holds_for_default_gains() {
        let f = family(vec![DMatrix::identity(2, 2), dmatrix![1.0, 0.0; 0.0, 2.0]], vec![1.0, 1.0]);
        let xs = GridSpec::default().states(2);
        assert!(f.check_sandwich(&xs).pass);
        let tight = LyapunovFamily::quadratic(vec![dmatrix![2.0]], vec![1.0], None, sq(), Some(PowerGain::quadratic(1.0)), None).unwrap();
        let r = tight.check_sandwich(&[v(&[3.0])]);
        assert!(r.pass && r.max_residual == 0.0);
    }

    #[test]
    fn evaluation_examples() {
        let f = family(vec![DMatrix::identity(2, 2), dmatrix![1.0, 0.0; 0.0, 2.0]], vec![1.0, 1.0]);
        assert_eq!(f.eval_v(0, &v(&[3.0, 4.0])), 25.0);
        assert_eq!(f.eval_v(1, &v(&[0.0, 0.0])), 0.0);
        assert_eq!(f.eval_v(1, &v(&[1.0, 1.0])), 3.0);
        assert_eq!(f.grad_v(0, &v(&[1.0, 0.0])).as_slice(), &[2.0, 0.0]);
        assert_eq!(f.grad_v(1, &v(&[1.0, 1.0])).as_slice(), &[2.0, 4.0]);
    }

    fn central_difference(f: &LyapunovFamily, i: usize, x: &Vector, h: f64) -> Vector {
        Vector::from_fn(x.len(), |j, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            (f.eval_v(i, &xp) - f.eval_v(i, &xm)) / (2.0 * h)
        })
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let f = family(vec![dmatrix![1.0, 0.0; 0.0, 2.0]], vec![1.0]);
        let x = v(&[1.0, 1.0]);
        let fd = central_difference(&f, 0, &x, 1e-5);
        assert!((f.grad_v(0, &x) - fd).norm() < 1e-8);
    }

    #[test]
    fn exact_mu_examples() {
        let same = family(vec![DMatrix::identity(2, 2); 3], vec![1.0; 3]);
        assert_eq!(same.exact_mu(), 1.0);
        let scaled = family(vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 2.0], vec![1.0; 2]);
        assert!((scaled.exact_mu() - 2.0).abs() < 1e-14);
        let diag = family(vec![dmatrix![1.0, 0.0; 0.0, 4.0], dmatrix![2.0, 0.0; 0.0, 2.0]], vec![1.0; 2]);
        // ratios {1/2, 4/2, 2/1, 2/4}
        assert!((diag.exact_mu() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_families() {
        assert!(LyapunovFamily::quadratic(vec![dmatrix![1.0, 0.5; 0.0, 1.0]], vec![1.0], None, sq(), None, None).is_err());
        assert!(LyapunovFamily::quadratic(vec![dmatrix![1.0, 0.0; 0.0, -1.0]], vec![1.0], None, sq(), None, None).is_err());
        assert!(LyapunovFamily::quadratic(vec![DMatrix::identity(1, 1)], vec![1.0], Some(0.5), sq(), None, None).is_err());
        assert!(LyapunovFamily::quadratic(
            vec![DMatrix::identity(1, 1)],
            vec![1.0],
            None,
            sq(),
            Some(PowerGain::quadratic(2.0)),
            None
        )
        .is_err());
    }

    fn scalar_sys(a: f64, b: f64) -> SwitchedSystem {
        make_linear_system(vec![dmatrix![a]], vec![dmatrix![b]], None).unwrap()
    }

    #[test]
    fn decrement_completing_the_square() {
        let sys = scalar_sys(-1.0, 1.0);
        let xs: Vec<_> = (-20..=20).map(|k| v(&[k as f64 * 0.25])).collect();
        let ds: Vec<_> = (-10..=10).map(|k| v(&[k as f64 * 0.2])).collect();
        let ok = family(vec![dmatrix![1.0]], vec![1.0]).check_decrement(&sys, &xs, &ds).unwrap();
        assert!(ok.pass, "{ok:?}");
        // residual is −(x − d)², attained 0 on the diagonal
        assert!(ok.max_residual.abs() < 1e-12);

        let inflated = family(vec![dmatrix![1.0]], vec![3.0]);
        let bad = inflated.check_decrement(&sys, &[v(&[1.0])], &[v(&[0.0])]).unwrap();
        assert!(!bad.pass);
        assert!((bad.max_residual - 1.0).abs() < 1e-15);
        assert_eq!(bad.witness.unwrap().x, vec![1.0]);

        let origin = inflated.check_decrement(&sys, &[v(&[0.0])], &[v(&[0.0])]).unwrap();
        assert!(origin.pass && origin.max_residual == 0.0);
    }

    #[test]
    fn rate_certificate_examples() {
        let c = linear_rate_certificate(&dmatrix![-1.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
        assert!((c.lambda - 1.0).abs() < 1e-14 && c.chi_coeff == 1.0);
        let c = linear_rate_certificate(&(-DMatrix::identity(2, 2)), &DMatrix::zeros(2, 1), &DMatrix::identity(2, 2)).unwrap();
        assert!((c.lambda - 2.0).abs() < 1e-14 && c.chi_coeff == 0.0);
        let c = linear_rate_certificate(&dmatrix![-2.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
        assert!((c.lambda - 3.0).abs() < 1e-14 && c.chi_coeff == 1.0);
        assert!(linear_rate_certificate_with(&dmatrix![-1.0], &dmatrix![1.0], &dmatrix![1.0], 1.0, 2.0).is_err());
    }

    #[test]
    fn halton_grid_inside_ball() {
        let pts = halton_ball(500, 3, 2.5);
        assert_eq!(pts.len(), 500);
        assert!(pts.iter().all(|p| p.norm() <= 2.5 + 1e-12));
        let ds = disturbance_grid(10, 2, 1.0);
        assert_eq!(ds.len(), 10);
        assert!((ds[9].norm() - 1.0).abs() < 1e-12);
        assert_eq!(ds[0].norm(), 0.0);
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn sandwich_and_mu_on_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p: Vec<_> = (0..3).map(|_| random_spd(&mut rng, 3)).collect();
        let f = family(p, vec![1.0; 3]);
        let mu = f.exact_mu();
        for _ in 0..10_000 {
            let x = Vector::from_fn(3, |_, _| rng.random_range(-5.0..5.0));
            let r = x.norm();
            for i in 0..3 {
                let vi = f.eval_v(i, &x);
                assert!(f.alpha1().at(r) - 1e-12 <= vi && vi <= f.alpha2().at(r) + 1e-12 * (1.0 + vi));
                let j = (i + 1) % 3;
                assert!(vi / f.eval_v(j, &x) <= mu + 1e-9);
            }
        }
    }

    #[test]
    fn gradient_on_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = family(vec![random_spd(&mut rng, 4)], vec![1.0]);
        for _ in 0..200 {
            let x = Vector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let g = f.grad_v(0, &x);
            let fd = central_difference(&f, 0, &x, 1e-4);
            assert!((&g - fd).norm() <= 1e-6 * g.norm().max(1.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn certificate_passes_grid(seed in 0u64..10_000, n in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..1.0));
            let b = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
            let p = random_spd(&mut rng, n);
            let cert = linear_rate_certificate(&a, &b, &p).unwrap();
            let sys = make_linear_system(vec![a], vec![b], None).unwrap();
            let fam = LyapunovFamily::quadratic(vec![p], vec![cert.lambda], None, PowerGain::quadratic(cert.chi_coeff), None, None).unwrap();
            let grid = GridSpec { n_states: 200, ..GridSpec::default() };
            let report = fam.check_decrement(&sys, &grid.states(n), &grid.disturbances(1)).unwrap();
            prop_assert!(report.pass, "{:?}", report);
        }
    }
}

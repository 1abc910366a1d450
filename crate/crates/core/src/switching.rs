//! Sample-path generators for random switching signals.
//!
//! Three classes are supported:
//!
//! * class UH: i.i.d. `Uniform(0, T]` holding times with i.i.d. mode draws
//!   from a probability vector `q`, the two sequences independent;
//! * class G: jump counts dominated by a Poisson-type envelope
//!   `e^{-λ̃ s} (λ̄ s)^k / k!`; the built-in generator is a homogeneous
//!   Poisson process of rate `λ̃`, which meets the envelope whenever `λ̄ >= λ̃`;
//! * continuous-time Markov chains given by a generator matrix.
//!
//! A path records the event times of the generator. For UH signals and for
//! class-G kernels with self-loops an event may re-select the current mode;
//! such events are still switching instants.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{wilson_interval, Z_99_ONE_SIDED};

const PROB_TOL: f64 = 1e-12;

/// A realized switching signal on `[0, horizon]`.
///
/// `modes[0]` is the initial mode and `modes[ν]` is the mode selected at the
/// ν-th jump; the mode is constant on `[τ_ν, τ_{ν+1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchingPath {
    jump_times: Vec<f64>,
    modes: Vec<usize>,
    horizon: f64,
}

impl SwitchingPath {
    pub fn new(jump_times: Vec<f64>, modes: Vec<usize>, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if modes.len() != jump_times.len() + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} jump times need {} mode entries, got {}",
                jump_times.len(),
                jump_times.len() + 1,
                modes.len()
            )));
        }
        let mut prev = 0.0;
        for &t in &jump_times {
            if !(t > prev) || t > horizon {
                return Err(Error::InvalidParameter(format!(
                    "jump times must be strictly increasing in (0, {horizon}]; got {t} after {prev}"
                )));
            }
            prev = t;
        }
        Ok(Self {
            jump_times,
            modes,
            horizon,
        })
    }

    /// Constant path: no jumps.
    pub fn constant(mode: usize, horizon: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![mode], horizon)
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn initial_mode(&self) -> usize {
        self.modes[0]
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// `S_i = τ_i − τ_{i−1}` with `τ_0 = 0`.
    pub fn holding_times(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.jump_times
            .iter()
            .map(|&t| {
                let s = t - prev;
                prev = t;
                s
            })
            .collect()
    }

    /// σ(t), right-continuous.
    pub fn mode_at(&self, t: f64) -> usize {
        let idx = self.jump_times.partition_point(|&tau| tau <= t);
        self.modes[idx]
    }

    /// Number of jumps in the half-open window `]t1, t2]`.
    pub fn count_jumps(&self, t1: f64, t2: f64) -> Result<usize> {
        if t1 > t2 {
            return Err(Error::InvalidParameter(format!(
                "count window needs t1 <= t2, got ({t1}, {t2})"
            )));
        }
        let lo = self.jump_times.partition_point(|&tau| tau <= t1);
        let hi = self.jump_times.partition_point(|&tau| tau <= t2);
        Ok(hi - lo)
    }
}

/// Free-function form of [`SwitchingPath::count_jumps`].
pub fn count_jumps(path: &SwitchingPath, t1: f64, t2: f64) -> Result<usize> {
    path.count_jumps(t1, t2)
}

fn validate_probability_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "{what}: entries must be nonnegative"
        )));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidParameter(format!(
            "{what}: entries sum to {s}, expected 1"
        )));
    }
    Ok(())
}

fn draw_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Roundoff in the cumulative sum: fall back to the last positive entry.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Uniform draw on `(0, 1]`.
fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

fn exponential<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    -open_unit(rng).ln() / rate
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parameters of the class-G envelope and the built-in generator's mode kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassGParams {
    pub lambda_bar: f64,
    pub lambda_tilde: f64,
    /// Stored for completeness; the envelope does not involve it.
    pub k0: u32,
    /// Row-stochastic N x N matrix; row `i` is the law of the next mode
    /// when a jump happens in mode `i`.
    pub mode_kernel: Vec<Vec<f64>>,
}

impl ClassGParams {
    pub fn new(lambda_bar: f64, lambda_tilde: f64, k0: u32, mode_kernel: Vec<Vec<f64>>) -> Result<Self> {
        let p = Self {
            lambda_bar,
            lambda_tilde,
            k0,
            mode_kernel,
        };
        p.validate()?;
        Ok(p)
    }

    /// Uniform kernel over the other modes (a single mode re-selects itself).
    pub fn with_uniform_kernel(lambda_bar: f64, lambda_tilde: f64, n_modes: usize) -> Result<Self> {
        Self::new(lambda_bar, lambda_tilde, 0, uniform_other_kernel(n_modes))
    }

    pub fn n_modes(&self) -> usize {
        self.mode_kernel.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_bar.is_finite() && self.lambda_bar > 0.0) {
            return Err(Error::InvalidParameter("class G: lambda_bar must be positive".into()));
        }
        if !(self.lambda_tilde.is_finite() && self.lambda_tilde > 0.0) {
            return Err(Error::InvalidParameter("class G: lambda_tilde must be positive".into()));
        }
        let n = self.mode_kernel.len();
        if n == 0 {
            return Err(Error::InvalidParameter("class G: mode kernel is empty".into()));
        }
        for (i, row) in self.mode_kernel.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "class G: mode kernel row {i} has length {}, expected {n}",
                    row.len()
                )));
            }
            validate_probability_row(row, &format!("class G: mode kernel row {i}"))?;
        }
        Ok(())
    }

    /// Non-fatal remarks about the parameters.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.k0 != 0 {
            w.push(format!(
                "k0 = {} is recorded but does not enter the jump-count envelope",
                self.k0
            ));
        }
        w
    }

    /// `e^{-λ̃ s} (λ̄ s)^k / k!`.
    pub fn envelope(&self, s: f64, k: u32) -> f64 {
        let log = -self.lambda_tilde * s + f64::from(k) * (self.lambda_bar * s).ln() - ln_factorial(k);
        if k == 0 {
            (-self.lambda_tilde * s).exp()
        } else {
            log.exp()
        }
    }
}

fn ln_factorial(k: u32) -> f64 {
    (2..=k).map(|j| f64::from(j).ln()).sum()
}

pub fn uniform_other_kernel(n_modes: usize) -> Vec<Vec<f64>> {
    if n_modes == 1 {
        return vec![vec![1.0]];
    }
    let p = 1.0 / (n_modes - 1) as f64;
    (0..n_modes)
        .map(|i| (0..n_modes).map(|j| if i == j { 0.0 } else { p }).collect())
        .collect()
}

/// Class UH: holding times `Uniform(0, T]`, mode values i.i.d. with law `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UhParams {
    #[serde(rename = "T")]
    pub t_max: f64,
    pub q: Vec<f64>,
}

impl UhParams {
    pub fn new(t_max: f64, q: Vec<f64>) -> Result<Self> {
        let p = Self { t_max, q };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "class UH: T must be positive, got {}",
                self.t_max
            )));
        }
        if self.q.is_empty() {
            return Err(Error::InvalidParameter("class UH: q is empty".into()));
        }
        validate_probability_row(&self.q, "class UH: q")?;
        if self.q.len() > 1 && self.q.iter().any(|p| *p <= 0.0 || *p >= 1.0) {
            return Err(Error::InvalidParameter(
                "class UH: every q_j must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn n_modes(&self) -> usize {
        self.q.len()
    }
}

/// Generator matrix of a continuous-time Markov chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtmcParams {
    #[serde(rename = "Q")]
    pub generator: Vec<Vec<f64>>,
}

impl CtmcParams {
    pub fn new(generator: Vec<Vec<f64>>) -> Result<Self> {
        let p = Self { generator };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.generator.len();
        if n == 0 {
            return Err(Error::InvalidParameter("CTMC: generator is empty".into()));
        }
        for (i, row) in self.generator.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "CTMC: row {i} has length {}, expected {n}",
                    row.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() || (i != j && *v < 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "CTMC: off-diagonal rate q[{i}][{j}] = {v} must be finite and nonnegative"
                    )));
                }
            }
            if row[i] > 0.0 {
                return Err(Error::InvalidParameter(format!("CTMC: diagonal q[{i}][{i}] is positive")));
            }
            let s: f64 = row.iter().sum();
            if s.abs() > PROB_TOL {
                return Err(Error::InvalidParameter(format!(
                    "CTMC: row {i} sums to {s}, expected 0"
                )));
            }
        }
        Ok(())
    }

    pub fn n_modes(&self) -> usize {
        self.generator.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.n_modes();
        DMatrix::from_fn(n, n, |i, j| self.generator[i][j])
    }

    /// Stationary law `π Q = 0, Σπ = 1` by solving the augmented system.
    pub fn stationary(&self) -> Option<Vec<f64>> {
        let n = self.n_modes();
        let q = self.matrix();
        let mut a = q.transpose();
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut rhs = nalgebra::DVector::zeros(n);
        rhs[n - 1] = 1.0;
        a.lu().solve(&rhs).map(|v| v.iter().copied().collect())
    }
}

/// How the mode at time 0 is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialMode {
    Fixed(usize),
    /// Drawn from the same law as the post-jump modes (UH only).
    Drawn,
}

fn check_mode(mode: usize, n: usize) -> Result<()> {
    if mode >= n {
        Err(Error::ModeOutOfRange {
            index: mode,
            n_modes: n,
        })
    } else {
        Ok(())
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon.is_finite() && horizon > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "horizon must be positive and finite, got {horizon}"
        )))
    }
}

pub fn sample_uh_path(p: &UhParams, sigma0: InitialMode, horizon: f64, seed: u64) -> Result<SwitchingPath> {
    p.validate()?;
    check_horizon(horizon)?;
    let mut rng = rng_for(seed);
    let first = match sigma0 {
        InitialMode::Fixed(m) => {
            check_mode(m, p.n_modes())?;
            m
        }
        InitialMode::Drawn => draw_index(&mut rng, &p.q),
    };
    let mut modes = vec![first];
    let mut times = Vec::new();
    let mut t = 0.0;
    loop {
        // Holding time and mode come from separate draws so the two
        // sequences stay independent.
        t += p.t_max * open_unit(&mut rng);
        let next = draw_index(&mut rng, &p.q);
        if t > horizon {
            break;
        }
        times.push(t);
        modes.push(next);
    }
    SwitchingPath::new(times, modes, horizon)
}

pub fn sample_class_g_path(p: &ClassGParams, sigma0: usize, horizon: f64, seed: u64) -> Result<SwitchingPath> {
    p.validate()?;
    check_horizon(horizon)?;
    check_mode(sigma0, p.n_modes())?;
    if p.lambda_bar < p.lambda_tilde {
        return Err(Error::InvalidParameter(format!(
            "class G: lambda_bar = {} < lambda_tilde = {}; the Poisson generator cannot certify this envelope",
            p.lambda_bar, p.lambda_tilde
        )));
    }
    let mut rng = rng_for(seed);
    let mut modes = vec![sigma0];
    let mut times = Vec::new();
    let mut t = 0.0;
    let mut current = sigma0;
    loop {
        t += exponential(&mut rng, p.lambda_tilde);
        if t > horizon {
            break;
        }
        current = draw_index(&mut rng, &p.mode_kernel[current]);
        times.push(t);
        modes.push(current);
    }
    SwitchingPath::new(times, modes, horizon)
}

pub fn sample_ctmc_path(p: &CtmcParams, sigma0: usize, horizon: f64, seed: u64) -> Result<SwitchingPath> {
    p.validate()?;
    check_horizon(horizon)?;
    check_mode(sigma0, p.n_modes())?;
    let mut rng = rng_for(seed);
    let mut modes = vec![sigma0];
    let mut times = Vec::new();
    let mut t = 0.0;
    let mut current = sigma0;
    loop {
        let exit = -p.generator[current][current];
        if exit <= 0.0 {
            break;
        }
        t += exponential(&mut rng, exit);
        if t > horizon {
            break;
        }
        let jump: Vec<f64> = p.generator[current]
            .iter()
            .enumerate()
            .map(|(j, q)| if j == current { 0.0 } else { q / exit })
            .collect();
        current = draw_index(&mut rng, &jump);
        times.push(t);
        modes.push(current);
    }
    SwitchingPath::new(times, modes, horizon)
}

/// Any of the supported generators together with its initial-mode rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SwitchingGenerator {
    Uh { params: UhParams, initial: InitialMode },
    ClassG { params: ClassGParams, sigma0: usize },
    Ctmc { params: CtmcParams, sigma0: usize },
}

impl SwitchingGenerator {
    pub fn sample(&self, horizon: f64, seed: u64) -> Result<SwitchingPath> {
        match self {
            SwitchingGenerator::Uh { params, initial } => sample_uh_path(params, *initial, horizon, seed),
            SwitchingGenerator::ClassG { params, sigma0 } => sample_class_g_path(params, *sigma0, horizon, seed),
            SwitchingGenerator::Ctmc { params, sigma0 } => sample_ctmc_path(params, *sigma0, horizon, seed),
        }
    }

    pub fn n_modes(&self) -> usize {
        match self {
            SwitchingGenerator::Uh { params, .. } => params.n_modes(),
            SwitchingGenerator::ClassG { params, .. } => params.n_modes(),
            SwitchingGenerator::Ctmc { params, .. } => params.n_modes(),
        }
    }
}

/// One row of a jump-count envelope check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeRow {
    pub k: u32,
    pub empirical_freq: f64,
    pub ucl_99: f64,
    pub lcl_99: f64,
    pub envelope: f64,
    pub violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub s: f64,
    pub n_paths: usize,
    pub rows: Vec<EnvelopeRow>,
}

impl EnvelopeReport {
    pub fn violations(&self) -> Vec<u32> {
        self.rows.iter().filter(|r| r.violation).map(|r| r.k).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,empirical_freq,ucl_99,envelope,violation\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.10e},{:.10e},{:.10e},{}\n",
                r.k, r.empirical_freq, r.ucl_99, r.envelope, r.violation
            ));
        }
        out
    }
}

/// Minimum number of paths for an envelope check.
pub const MIN_ENVELOPE_PATHS: usize = 1000;

/// Empirical law of `N_σ(s, 0)` against the class-G envelope.
///
/// A row is a violation when the envelope lies below the one-sided 99%
/// lower confidence limit of the empirical frequency, i.e. the data show
/// at 99% confidence that the envelope is exceeded.
pub fn check_envelope(p: &ClassGParams, s: f64, k_max: u32, n_paths: usize, seed: u64) -> Result<EnvelopeReport> {
    if n_paths < MIN_ENVELOPE_PATHS {
        return Err(Error::InvalidParameter(format!(
            "envelope check needs at least {MIN_ENVELOPE_PATHS} paths, got {n_paths}"
        )));
    }
    check_horizon(s)?;
    let counts: Vec<usize> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            sample_class_g_path(p, 0, s, seed.wrapping_add(i as u64)).and_then(|path| path.count_jumps(0.0, s))
        })
        .collect::<Result<_>>()?;
    let rows = (0..=k_max)
        .map(|k| {
            let hits = counts.iter().filter(|&&c| c == k as usize).count();
            let (lcl, ucl) = wilson_interval(hits, n_paths, Z_99_ONE_SIDED);
            let envelope = p.envelope(s, k);
            EnvelopeRow {
                k,
                empirical_freq: hits as f64 / n_paths as f64,
                ucl_99: ucl,
                lcl_99: lcl,
                envelope,
                violation: lcl > envelope,
            }
        })
        .collect();
    Ok(EnvelopeReport { s, n_paths, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::MeanEstimate;

    fn path(times: &[f64]) -> SwitchingPath {
        SwitchingPath::new(times.to_vec(), vec![0; times.len() + 1], 10.0).unwrap()
    }

    #[test]
    fn count_jumps_half_open() {
        let p = path(&[1.0, 2.0, 3.0]);
        assert_eq!(p.count_jumps(0.5, 2.0).unwrap(), 2);
        assert_eq!(p.count_jumps(1.0, 3.0).unwrap(), 2);
        assert_eq!(p.count_jumps(2.0, 2.0).unwrap(), 0);
        assert!(p.count_jumps(3.0, 1.0).is_err());
    }

    #[test]
    fn mode_is_right_continuous() {
        let p = SwitchingPath::new(vec![1.0, 2.0], vec![0, 1, 2], 3.0).unwrap();
        assert_eq!(p.mode_at(0.0), 0);
        assert_eq!(p.mode_at(1.0), 1);
        assert_eq!(p.mode_at(1.999), 1);
        assert_eq!(p.mode_at(2.0), 2);
        assert_eq!(p.holding_times(), vec![1.0, 1.0]);
    }

    #[test]
    fn rejects_simultaneous_jumps() {
        assert!(SwitchingPath::new(vec![1.0, 1.0], vec![0, 1, 0], 2.0).is_err());
        assert!(SwitchingPath::new(vec![0.0], vec![0, 1], 2.0).is_err());
    }

    #[test]
    fn uh_single_mode_and_support() {
        let single = UhParams::new(1.0, vec![1.0]).unwrap();
        let p = sample_uh_path(&single, InitialMode::Drawn, 50.0, 3).unwrap();
        assert!(p.modes().iter().all(|&m| m == 0));

        let two = UhParams::new(2.0, vec![0.5, 0.5]).unwrap();
        let p = sample_uh_path(&two, InitialMode::Fixed(1), 10.0, 9).unwrap();
        assert!(p.holding_times().iter().all(|s| *s > 0.0 && *s <= 2.0));
        assert!(p.jump_times().iter().all(|t| *t <= 10.0));
        assert_eq!(p.initial_mode(), 1);
    }

    #[test]
    fn uh_holding_mean() {
        let params = UhParams::new(1.0, vec![0.3, 0.7]).unwrap();
        let p = sample_uh_path(&params, InitialMode::Drawn, 1000.0, 17).unwrap();
        let s = p.holding_times();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let tol = 3.0 * (1.0 / 12f64.sqrt()) / (s.len() as f64).sqrt();
        assert!((mean - 0.5).abs() <= tol, "{mean}");
    }

    #[test]
    fn generators_are_deterministic() {
        let uh = UhParams::new(1.0, vec![0.5, 0.5]).unwrap();
        assert_eq!(
            sample_uh_path(&uh, InitialMode::Drawn, 20.0, 5).unwrap(),
            sample_uh_path(&uh, InitialMode::Drawn, 20.0, 5).unwrap()
        );
        let g = ClassGParams::with_uniform_kernel(1.0, 0.5, 3).unwrap();
        assert_eq!(
            sample_class_g_path(&g, 0, 20.0, 5).unwrap(),
            sample_class_g_path(&g, 0, 20.0, 5).unwrap()
        );
        let c = CtmcParams::new(vec![vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap();
        assert_eq!(
            sample_ctmc_path(&c, 0, 20.0, 5).unwrap(),
            sample_ctmc_path(&c, 0, 20.0, 5).unwrap()
        );
    }

    #[test]
    fn class_g_rejects_inverted_rates() {
        let g = ClassGParams::with_uniform_kernel(0.5, 1.0, 2).unwrap();
        assert!(sample_class_g_path(&g, 0, 1.0, 0).is_err());
    }

    #[test]
    fn class_g_poisson_zero_count() {
        let g = ClassGParams::with_uniform_kernel(0.2, 0.2, 2).unwrap();
        let n = 100_000;
        let zeros = (0..n)
            .filter(|i| sample_class_g_path(&g, 0, 5.0, *i as u64).unwrap().n_jumps() == 0)
            .count();
        let p = zeros as f64 / n as f64;
        let target = (-1.0f64).exp();
        let se = (target * (1.0 - target) / n as f64).sqrt();
        assert!((p - target).abs() <= 3.0 * se, "{p} vs {target}");
    }

    #[test]
    fn k0_is_flagged() {
        let mut g = ClassGParams::with_uniform_kernel(1.0, 1.0, 2).unwrap();
        assert!(g.warnings().is_empty());
        g.k0 = 2;
        assert_eq!(g.warnings().len(), 1);
    }

    #[test]
    fn ctmc_absorbing_and_holding_mean() {
        let zero = CtmcParams::new(vec![vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let p = sample_ctmc_path(&zero, 1, 100.0, 1).unwrap();
        assert_eq!(p.n_jumps(), 0);
        assert_eq!(p.mode_at(50.0), 1);

        let sym = CtmcParams::new(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let p = sample_ctmc_path(&sym, 0, 20_000.0, 2).unwrap();
        let est = MeanEstimate::from_samples(&p.holding_times());
        assert!(est.agrees_with(1.0, 3.0), "{est:?}");
    }

    #[test]
    fn ctmc_stationary_fraction() {
        let asym = CtmcParams::new(vec![vec![-2.0, 2.0], vec![1.0, -1.0]]).unwrap();
        let pi = asym.stationary().unwrap();
        assert!((pi[0] - 1.0 / 3.0).abs() < 1e-12);
        // Fraction of time in mode 0 over independent windows.
        let fractions: Vec<f64> = (0..400)
            .map(|i| {
                let horizon = 50.0;
                let p = sample_ctmc_path(&asym, 0, horizon, 1000 + i).unwrap();
                let mut prev = 0.0;
                let mut occupied = 0.0;
                for (k, &t) in p.jump_times().iter().chain(std::iter::once(&horizon)).enumerate() {
                    if p.modes()[k] == 0 {
                        occupied += t - prev;
                    }
                    prev = t;
                }
                occupied / horizon
            })
            .collect();
        let est = MeanEstimate::from_samples(&fractions);
        // Start in mode 0 biases each window by at most 1/(3 horizon) in expectation.
        assert!(
            (est.mean - 1.0 / 3.0).abs() <= 3.0 * est.se + 1.0 / 150.0,
            "{est:?}"
        );
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(UhParams::new(1.0, vec![0.5, 0.6]).is_err());
        assert!(UhParams::new(0.0, vec![1.0]).is_err());
        assert!(UhParams::new(1.0, vec![1.0, 0.0]).is_err());
        assert!(CtmcParams::new(vec![vec![-1.0, 0.5], vec![0.0, 0.0]]).is_err());
        assert!(ClassGParams::new(1.0, 1.0, 0, vec![vec![0.5, 0.4], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn envelope_report_shape() {
        let g = ClassGParams::with_uniform_kernel(1.0, 1.0, 2).unwrap();
        let r = check_envelope(&g, 1.3, 0, 1000, 0).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(check_envelope(&g, 1.0, 3, 999, 0).is_err());
    }

    #[test]
    fn envelope_tight_at_zero_when_rates_differ() {
        let g = ClassGParams::with_uniform_kernel(2.0, 1.0, 2).unwrap();
        let r = check_envelope(&g, 1.0, 4, 20_000, 77).unwrap();
        let row = &r.rows[0];
        assert!((row.envelope - (-1.0f64).exp()).abs() < 1e-15);
        let se = (row.envelope * (1.0 - row.envelope) / 20_000.0).sqrt();
        assert!((row.empirical_freq - row.envelope).abs() <= 3.0 * se);
        assert!(r.violations().is_empty());
    }
}

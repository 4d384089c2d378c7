//! Numerical oracle for the error-amplification argument: a node
//! aggregates itself with `d` neighbors, a fraction `p` of which are
//! causally related and the rest spuriously related. The closed forms are
//! checked against explicit Monte-Carlo simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// One node's neighborhood and the moments of its observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalNeighborhoodSpec {
    /// Degree, strictly greater than 1.
    pub d: usize,
    /// Fraction of causal neighbors, in (0, 1).
    pub p: f64,
    /// Base mean and standard deviation of the observations.
    pub mu0: f64,
    pub sigma0: f64,
    /// Expected observation of the node at the current and next step.
    pub mu_t: f64,
    pub mu_next: f64,
    /// Expected observations of causal and spurious neighbors.
    pub mu_c: f64,
    pub mu_s: f64,
    /// Aggregation weights of causal and spurious neighbors.
    pub w_c: f64,
    pub w_s: f64,
    /// Test-time mean multiplier, `μ_q = q·μ0`.
    pub q: f64,
    /// Prior mean and spread of the aggregation weights.
    pub mu_w: f64,
    pub sigma_w: f64,
}

impl Default for CausalNeighborhoodSpec {
    fn default() -> Self {
        CausalNeighborhoodSpec {
            d: 4,
            p: 0.5,
            mu0: 1.0,
            sigma0: 0.25,
            mu_t: 1.0,
            mu_next: 1.0,
            mu_c: 1.0,
            mu_s: 1.0,
            w_c: 0.5,
            w_s: 0.5,
            q: 3.0,
            mu_w: 0.5,
            sigma_w: 0.1,
        }
    }
}

impl CausalNeighborhoodSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d <= 1 {
            return Err(config_err(format!("degree must exceed 1, got {}", self.d)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(config_err(format!("causal fraction must lie in (0, 1), got {}", self.p)));
        }
        if !(self.sigma0 > 0.0) {
            return Err(config_err(format!("sigma0 must be positive, got {}", self.sigma0)));
        }
        if !(self.sigma_w >= 0.0) {
            return Err(config_err(format!("sigma_w must be non-negative, got {}", self.sigma_w)));
        }
        Ok(())
    }

    fn d(&self) -> f64 {
        self.d as f64
    }

    fn causal_part(&self) -> f64 {
        self.p * self.d() * self.mu_c * self.w_c
    }

    fn spurious_part(&self) -> f64 {
        (1.0 - self.p) * self.d() * self.mu_s * self.w_s
    }

    /// The next-step mean under which the causal part alone leaves a
    /// residual equal to the spurious part, i.e. the regression residual
    /// `ŷ − w_c·x_c = w_s·x_s` substituted into the aggregation error.
    pub fn residual_next(&self) -> f64 {
        (self.mu_t + self.causal_part() - self.spurious_part()) / (1.0 + self.d())
    }
}

/// Expected one-hop aggregation of a node with its neighbors.
pub fn expected_aggregation(spec: &CausalNeighborhoodSpec) -> f64 {
    (spec.mu_t + spec.causal_part() + spec.spurious_part()) / (1.0 + spec.d())
}

/// Signed aggregation error against the next-step mean.
pub fn aggregation_error_signed(spec: &CausalNeighborhoodSpec) -> f64 {
    (spec.mu_t + spec.causal_part() + spec.spurious_part() - (1.0 + spec.d()) * spec.mu_next) / (1.0 + spec.d())
}

pub fn aggregation_error(spec: &CausalNeighborhoodSpec) -> f64 {
    aggregation_error_signed(spec).abs()
}

/// In-distribution error attributable to the spurious neighbors.
pub fn epsilon0(spec: &CausalNeighborhoodSpec) -> f64 {
    2.0 * spec.spurious_part() / (1.0 + spec.d())
}

/// Error of a unit shift: the spurious contribution with prior mean `μ_w`.
fn unit_shift_error(spec: &CausalNeighborhoodSpec) -> f64 {
    2.0 * (1.0 - spec.p) * spec.d() * spec.mu0 * spec.mu_w / (1.0 + spec.d())
}

/// Error when test observations have mean `q·μ0` and weights have prior
/// mean `μ_w`.
pub fn epsilon_q(spec: &CausalNeighborhoodSpec) -> Result<f64> {
    if !(spec.q >= 1.0) {
        return Err(config_err(format!("shift multiplier must be at least 1, got {}", spec.q)));
    }
    Ok(spec.q * unit_shift_error(spec))
}

/// `ε_q / ε_1`, evaluated without intermediate rounding: the product
/// `q·ε_1` is carried as an exact hi/lo pair and the quotient gets one
/// remainder correction, so the result is the correctly rounded ratio.
pub fn amplification_ratio(spec: &CausalNeighborhoodSpec) -> Result<f64> {
    let eps_q = epsilon_q(spec)?;
    let base = unit_shift_error(spec);
    if base == 0.0 {
        return Err(Error::Singularity("in-distribution error is zero (μ0·μ_w = 0)".into()));
    }
    let lo = spec.q.mul_add(base, -eps_q);
    let r = eps_q / base;
    let rem = (-r).mul_add(base, eps_q) + lo;
    Ok(r + rem / base)
}

/// Spurious weight that zeroes the signed aggregation error.
pub fn optimal_ws(spec: &CausalNeighborhoodSpec) -> Result<f64> {
    let denom = (1.0 - spec.p) * spec.d() * spec.mu_s;
    if spec.mu_s == 0.0 || spec.p >= 1.0 || denom == 0.0 {
        return Err(Error::Singularity(format!("(1 − p)·d·μ_s = 0 (p = {}, μ_s = {})", spec.p, spec.mu_s)));
    }
    Ok(((1.0 + spec.d()) * spec.mu_next - (spec.mu_t + spec.causal_part())) / denom)
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl McEstimate {
    fn from_moments(sum: f64, sum_sq: f64, n: usize) -> McEstimate {
        let nf = n as f64;
        let mean = sum / nf;
        let var = ((sum_sq - nf * mean * mean) / (nf - 1.0).max(1.0)).max(0.0);
        McEstimate { mean, std_err: (var / nf).sqrt(), samples: n }
    }
}

const CHUNK: usize = 1 << 14;

/// Runs `draw` over `samples` draws split into fixed-size chunks, each with
/// its own seeded stream, and reduces the moments in chunk order.
fn chunked_moments(samples: usize, seed: u64, mut draw: impl FnMut(&mut ChaCha8Rng) -> f64) -> McEstimate {
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let mut done = 0;
    let mut chunk = 0u64;
    while done < samples {
        let n = CHUNK.min(samples - done);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = draw(&mut rng);
            s += v;
            s2 += v * v;
        }
        sum += s;
        sum_sq += s2;
        done += n;
        chunk += 1;
    }
    McEstimate::from_moments(sum, sum_sq, samples)
}

/// Simulates the explicit aggregation: the node and each neighbor draw
/// Gaussian observations; each neighbor is causal with probability `p`.
pub fn aggregation_mc(spec: &CausalNeighborhoodSpec, samples: usize, seed: u64) -> Result<McEstimate> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.sigma0).map_err(|e| config_err(e.to_string()))?;
    Ok(chunked_moments(samples, seed, |rng| {
        let mut h = spec.mu_t + noise.sample(rng);
        for _ in 0..spec.d {
            let x = noise.sample(rng);
            if rng.random::<f64>() < spec.p {
                h += spec.w_c * (spec.mu_c + x);
            } else {
                h += spec.w_s * (spec.mu_s + x);
            }
        }
        h / (1.0 + spec.d())
    }))
}

/// Outcome of the least-squares amplification experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplificationMc {
    /// Fitted causal and spurious weights.
    pub fitted_wc: f64,
    pub fitted_ws: f64,
    /// Mean absolute test error with spurious neighbors at `μ0` and `q·μ0`.
    pub error_id: f64,
    pub error_ood: f64,
    pub ratio: f64,
    pub samples: usize,
}

/// Per-sample (causal feature, spurious feature) of a simulated
/// neighborhood: the mean of the causal and of the spurious neighbors.
fn neighborhood_features(spec: &CausalNeighborhoodSpec, spurious_mean: f64, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let n_c = ((spec.p * spec.d()).round() as usize).clamp(1, spec.d - 1);
    let n_s = spec.d - n_c;
    let fc = (0..n_c).map(|_| spec.mu0 + noise.sample(rng)).sum::<f64>() / n_c as f64;
    let fs = (0..n_s).map(|_| spurious_mean + noise.sample(rng)).sum::<f64>() / n_s as f64;
    (fc, fs)
}

/// Trains `ŷ = w_c·f_c + w_s·f_s` by least squares on neighborhoods drawn
/// from `N(μ0, σ0)` whose target depends on both features, then tests where
/// the spurious relation is broken (the target depends on `f_c` only) with
/// spurious neighbors at `μ0` (in distribution) and at `q·μ0` (shifted).
pub fn amplification_mc(spec: &CausalNeighborhoodSpec, samples: usize, seed: u64) -> Result<AmplificationMc> {
    spec.validate()?;
    if !(spec.q >= 1.0) {
        return Err(config_err(format!("shift multiplier must be at least 1, got {}", spec.q)));
    }
    if samples < 2 {
        return Err(config_err("amplification needs at least 2 samples"));
    }
    let noise = Normal::new(0.0, spec.sigma0).map_err(|e| config_err(e.to_string()))?;
    let target_noise = Normal::new(0.0, 0.1 * spec.sigma0).map_err(|e| config_err(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Normal equations of the two-feature regression without intercept.
    let (mut scc, mut scs, mut sss, mut scy, mut ssy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..samples {
        let (fc, fs) = neighborhood_features(spec, spec.mu0, &noise, &mut rng);
        let y = spec.w_c * fc + spec.w_s * fs + target_noise.sample(&mut rng);
        scc += fc * fc;
        scs += fc * fs;
        sss += fs * fs;
        scy += fc * y;
        ssy += fs * y;
    }
    let det = scc * sss - scs * scs;
    if det.abs() < 1e-12 * scc * sss {
        return Err(Error::Singularity("least-squares design is rank deficient".into()));
    }
    let fitted_wc = (sss * scy - scs * ssy) / det;
    let fitted_ws = (scc * ssy - scs * scy) / det;

    let test = |spurious_mean: f64, rng: &mut ChaCha8Rng| -> f64 {
        let mut err = 0.0;
        for _ in 0..samples {
            let (fc, fs) = neighborhood_features(spec, spurious_mean, &noise, rng);
            let y = spec.w_c * fc + target_noise.sample(rng);
            err += (fitted_wc * fc + fitted_ws * fs - y).abs();
        }
        err / samples as f64
    };
    let error_id = test(spec.mu0, &mut rng);
    let error_ood = test(spec.q * spec.mu0, &mut rng);
    Ok(AmplificationMc { fitted_wc, fitted_ws, error_id, error_ood, ratio: error_ood / error_id, samples })
}

/// Amplification ratio when the true weights are drawn from `N(μ_w, σ_w)`,
/// summarised over `trials` draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaWSensitivity {
    pub sigma_w: f64,
    pub mean_ratio: f64,
    pub std_ratio: f64,
    pub trials: usize,
}

pub fn sigma_w_sensitivity(spec: &CausalNeighborhoodSpec, sigmas: &[f64], trials: usize, samples: usize, seed: u64) -> Result<Vec<SigmaWSensitivity>> {
    sigmas
        .iter()
        .enumerate()
        .map(|(k, &sigma_w)| {
            let prior = Normal::new(spec.mu_w, sigma_w).map_err(|e| config_err(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut ratios = Vec::with_capacity(trials);
            for _ in 0..trials {
                let (w_c, w_s) = (prior.sample(&mut rng), prior.sample(&mut rng));
                let run = amplification_mc(&CausalNeighborhoodSpec { w_c, w_s, sigma_w, ..*spec }, samples, rng.random())?;
                ratios.push(run.ratio);
            }
            let n = ratios.len().max(1) as f64;
            let mean = ratios.iter().sum::<f64>() / n;
            let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            Ok(SigmaWSensitivity { sigma_w, mean_ratio: mean, std_ratio: var.sqrt(), trials })
        })
        .collect()
}

/// A random spec with moments and weights in ranges where the closed forms
/// are well conditioned.
pub fn random_spec(rng: &mut impl Rng) -> CausalNeighborhoodSpec {
    CausalNeighborhoodSpec {
        d: rng.random_range(2..=32),
        p: rng.random_range(0.05..0.95),
        mu0: rng.random_range(0.5..5.0),
        sigma0: rng.random_range(0.1..2.0),
        mu_t: rng.random_range(0.0..10.0),
        mu_next: rng.random_range(0.0..10.0),
        mu_c: rng.random_range(0.5..5.0),
        mu_s: rng.random_range(0.5..5.0),
        w_c: rng.random_range(0.0..2.0),
        w_s: rng.random_range(0.0..2.0),
        q: rng.random_range(1..=10) as f64,
        mu_w: rng.random_range(0.1..2.0),
        sigma_w: rng.random_range(0.0..0.5),
    }
}

/// One pass/fail line of the theory check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCheck {
    pub name: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

impl TheoryCheck {
    fn within(name: &str, value: f64, lower: f64, upper: f64) -> TheoryCheck {
        TheoryCheck { name: name.into(), value, lower, upper, pass: value >= lower && value <= upper }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoryCheckConfig {
    pub spec: CausalNeighborhoodSpec,
    pub aggregation_samples: usize,
    pub amplification_samples: usize,
    pub root_check_specs: usize,
    pub sensitivity_trials: usize,
    pub sensitivity_samples: usize,
    pub seed: u64,
}

impl Default for TheoryCheckConfig {
    fn default() -> Self {
        TheoryCheckConfig {
            spec: CausalNeighborhoodSpec::default(),
            aggregation_samples: 1_000_000,
            amplification_samples: 100_000,
            root_check_specs: 1000,
            sensitivity_trials: 20,
            sensitivity_samples: 10_000,
            seed: 0,
        }
    }
}

/// Closed forms, Monte-Carlo estimates and pass/fail checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub spec: CausalNeighborhoodSpec,
    pub expected_aggregation: f64,
    pub aggregation_error: f64,
    pub epsilon0: f64,
    pub epsilon_q: f64,
    pub amplification_ratio: f64,
    pub aggregation_mc: McEstimate,
    pub aggregation_mc_small: McEstimate,
    pub amplification_mc: AmplificationMc,
    pub max_root_residual: f64,
    pub sigma_w_sensitivity: Vec<SigmaWSensitivity>,
    pub checks: Vec<TheoryCheck>,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub fn theory_check(cfg: &TheoryCheckConfig) -> Result<TheoryReport> {
    let spec = cfg.spec;
    spec.validate()?;
    let expected = expected_aggregation(&spec);
    let ratio = amplification_ratio(&spec)?;
    let mc = aggregation_mc(&spec, cfg.aggregation_samples, cfg.seed)?;
    let small_n = (cfg.aggregation_samples / 100).max(2);
    let mc_small = aggregation_mc(&spec, small_n, cfg.seed.wrapping_add(1))?;
    let amp = amplification_mc(&spec, cfg.amplification_samples, cfg.seed.wrapping_add(2))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));
    let mut max_root = 0.0f64;
    for _ in 0..cfg.root_check_specs {
        let mut s = random_spec(&mut rng);
        s.w_s = optimal_ws(&s)?;
        max_root = max_root.max(aggregation_error(&s));
    }
    let sensitivity = sigma_w_sensitivity(&spec, &[0.0, 0.1, 0.25, 0.5], cfg.sensitivity_trials, cfg.sensitivity_samples, cfg.seed.wrapping_add(4))?;

    let residual_spec = CausalNeighborhoodSpec { mu_next: spec.residual_next(), ..spec };
    let eps0 = epsilon0(&spec);
    let se_ratio = mc_small.std_err / mc.std_err;
    let expected_se_ratio = ((cfg.aggregation_samples as f64) / small_n as f64).sqrt();
    let checks = vec![
        TheoryCheck::within("closed-form amplification ratio minus q", (ratio - spec.q).abs(), 0.0, 0.0),
        TheoryCheck::within("Monte-Carlo amplification ratio (q = 3 band)", amp.ratio, 0.8 * spec.q, 1.2 * spec.q),
        TheoryCheck::within("max |aggregation error| at optimal w_s", max_root, 0.0, 1e-12),
        TheoryCheck::within(
            "aggregation Monte-Carlo within 3 standard errors",
            (mc.mean - expected).abs() / mc.std_err.max(f64::MIN_POSITIVE),
            0.0,
            3.0,
        ),
        TheoryCheck::within("standard-error ratio over sqrt(sample ratio)", se_ratio / expected_se_ratio, 0.8, 1.25),
        TheoryCheck::within("epsilon0 matches residual-substituted error", (aggregation_error(&residual_spec) - eps0).abs(), 0.0, 1e-12),
    ];
    Ok(TheoryReport {
        spec,
        expected_aggregation: expected,
        aggregation_error: aggregation_error(&spec),
        epsilon0: eps0,
        epsilon_q: epsilon_q(&spec)?,
        amplification_ratio: ratio,
        aggregation_mc: mc,
        aggregation_mc_small: mc_small,
        amplification_mc: amp,
        max_root_residual: max_root,
        sigma_w_sensitivity: sensitivity,
        checks,
    })
}

//! Distributed-DP noise: calibration and per-party sampling for the Binomial
//! and discrete Gaussian mechanisms.
//!
//! Both mechanisms are sum-stable, so each party adds a share of the noise
//! and the aggregate carries the calibrated total. Shares are sized so that
//! the honest parties alone (`h = N - floor((1 - gamma) N)`) supply the full
//! calibrated amount.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("invalid privacy parameters: {0}")]
    InvalidParams(String),
    #[error("no honest parties: N = {n_parties}, gamma = {gamma}")]
    NoHonestParties { n_parties: usize, gamma: f64 },
    #[error("could not bracket the analytic Gaussian root for epsilon = {epsilon}, delta = {delta}")]
    Bracket { epsilon: f64, delta: f64 },
    #[error("unknown mechanism `{0}` (expected `bm` or `dgm`)")]
    UnknownMechanism(String),
}

/// `(epsilon, delta, gamma)`: privacy budget plus the guaranteed honest fraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    epsilon: f64,
    delta: f64,
    gamma: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64, gamma: f64) -> Result<Self, MechanismError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(MechanismError::InvalidParams(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(MechanismError::InvalidParams(format!("delta must be in (0, 1), got {delta}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(MechanismError::InvalidParams(format!("gamma must be in (0, 1], got {gamma}")));
        }
        Ok(PrivacyParams { epsilon, delta, gamma })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// `N - floor((1 - gamma) N)`. A tiny tolerance absorbs float error in
/// fractions such as 2/3.
pub fn honest_count(n_parties: usize, gamma: f64) -> usize {
    let compromised = ((1.0 - gamma) * n_parties as f64 + 1e-9).floor().max(0.0) as usize;
    n_parties.saturating_sub(compromised)
}

/// Total coin tosses needed for `(epsilon, delta)`-DP at sensitivity 1:
/// `ceil(2 ((2 + eps) / eps)^2 ln(2 / delta))`.
pub fn bm_min_tosses(params: &PrivacyParams) -> u64 {
    let eps = params.epsilon;
    let ratio = (2.0 + eps) / eps;
    (2.0 * ratio * ratio * (2.0 / params.delta).ln()).ceil() as u64
}

/// The older sufficient toss count `ceil(64 ln(2 / delta) / eps^2)`, kept for comparison.
pub fn baseline_min_tosses(epsilon: f64, delta: f64) -> u64 {
    (64.0 * (2.0 / delta).ln() / (epsilon * epsilon)).ceil() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    #[serde(rename = "bm", alias = "binomial")]
    Binomial,
    #[serde(rename = "dgm", alias = "discrete_gaussian")]
    DiscreteGaussian,
}

impl Mechanism {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mechanism::Binomial => "bm",
            Mechanism::DiscreteGaussian => "dgm",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mechanism {
    type Err = MechanismError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bm" | "binomial" => Ok(Mechanism::Binomial),
            "dgm" | "dg" | "gaussian" | "discrete_gaussian" => Ok(Mechanism::DiscreteGaussian),
            other => Err(MechanismError::UnknownMechanism(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinomialPlan {
    /// Calibrated total tosses the honest parties must cover.
    pub n_total: u64,
    /// Tosses per party; always even so the offset `m / 2` is integral.
    pub m_per_party: u64,
    pub n_parties: usize,
    pub honest: usize,
    pub gamma: f64,
}

impl BinomialPlan {
    pub const SUCCESS_P: f64 = 0.5;

    /// A plan that adds no noise at all.
    pub fn noiseless(n_parties: usize) -> Self {
        BinomialPlan {
            n_total: 0,
            m_per_party: 0,
            n_parties,
            honest: n_parties,
            gamma: 1.0,
        }
    }

    /// Whether `parties` honest contributors cover `n_total`.
    pub fn covered_by(&self, parties: usize) -> bool {
        parties as u64 * self.m_per_party >= self.n_total
    }
}

pub fn bm_plan(params: &PrivacyParams, n_parties: usize) -> Result<BinomialPlan, MechanismError> {
    let honest = honest_count(n_parties, params.gamma);
    if honest == 0 {
        return Err(MechanismError::NoHonestParties {
            n_parties,
            gamma: params.gamma,
        });
    }
    let n_total = bm_min_tosses(params);
    let m = n_total.div_ceil(honest as u64);
    let m_per_party = m + (m % 2);
    Ok(BinomialPlan {
        n_total,
        m_per_party,
        n_parties,
        honest,
        gamma: params.gamma,
    })
}

/// Draws `z ~ Binomial(m, 1/2)` by counting heads over `m` fair coin flips.
pub fn sample_binomial_share<R: RngCore + ?Sized>(m: u64, rng: &mut R) -> u64 {
    let mut remaining = m;
    let mut heads = 0u64;
    while remaining >= 64 {
        heads += rng.next_u64().count_ones() as u64;
        remaining -= 64;
    }
    if remaining > 0 {
        let mask = (1u64 << remaining) - 1;
        heads += (rng.next_u64() & mask).count_ones() as u64;
    }
    heads
}

/// Standard normal CDF via the complementary error function, which keeps
/// relative accuracy deep in the lower tail.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Left side of the analytic Gaussian condition:
/// `Phi(D / 2s - e s / D) - e^e Phi(-D / 2s - e s / D)`.
///
/// This is the exact `delta` of the continuous Gaussian mechanism with
/// standard deviation `sigma` at privacy level `epsilon`.
pub fn analytic_gaussian_delta(sigma: f64, epsilon: f64, sensitivity: f64) -> f64 {
    let a = sensitivity / (2.0 * sigma);
    let b = epsilon * sigma / sensitivity;
    std_normal_cdf(a - b) - epsilon.exp() * std_normal_cdf(-a - b)
}

/// `sqrt(2 ln(1.25 / delta)) * sensitivity / epsilon`
pub fn classical_gaussian_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt() * sensitivity / epsilon
}

/// Smallest sigma (to within 1e-12) meeting the analytic Gaussian condition
/// with equality, by bisection. The condition is decreasing in sigma.
pub fn ag_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> Result<f64, MechanismError> {
    if !(epsilon > 0.0 && delta > 0.0 && delta < 1.0 && sensitivity > 0.0) {
        return Err(MechanismError::InvalidParams(format!(
            "ag_sigma needs epsilon > 0, delta in (0, 1), sensitivity > 0; got {epsilon}, {delta}, {sensitivity}"
        )));
    }
    let f = |sigma: f64| analytic_gaussian_delta(sigma, epsilon, sensitivity) - delta;
    let mut lo = sensitivity / (10.0 * (1.0 + epsilon));
    let mut hi = 10.0 * classical_gaussian_sigma(epsilon, delta, sensitivity);
    if !(f(lo) > 0.0 && f(hi) <= 0.0) {
        return Err(MechanismError::Bracket { epsilon, delta });
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // `hi` is always on the private side of the root.
    Ok(hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPlan {
    pub sigma_total: f64,
    pub sigma_per_party: f64,
    pub sensitivity: f64,
    pub truncation_bound: i64,
    pub n_parties: usize,
    pub honest: usize,
    pub gamma: f64,
}

impl GaussianPlan {
    pub fn covered_by(&self, parties: usize) -> bool {
        // Relative slack for the rounding in sigma_total / sqrt(h).
        parties as f64 * self.sigma_per_party.powi(2) >= self.sigma_total.powi(2) * (1.0 - 1e-12)
    }
}

pub fn dg_plan(params: &PrivacyParams, n_parties: usize) -> Result<GaussianPlan, MechanismError> {
    let honest = honest_count(n_parties, params.gamma);
    if honest == 0 {
        return Err(MechanismError::NoHonestParties {
            n_parties,
            gamma: params.gamma,
        });
    }
    let sensitivity = 1.0;
    let sigma_total = ag_sigma(params.epsilon, params.delta, sensitivity)?;
    let sigma_per_party = sigma_total / (honest as f64).sqrt();
    Ok(GaussianPlan {
        sigma_total,
        sigma_per_party,
        sensitivity,
        truncation_bound: truncation_bound(sigma_per_party),
        n_parties,
        honest,
        gamma: params.gamma,
    })
}

/// `ceil(12 sigma)`; the tail mass beyond it is below 1e-30.
pub fn truncation_bound(sigma: f64) -> i64 {
    (12.0 * sigma).ceil() as i64
}

/// Discrete Gaussian on `[-B, B]` sampled through a normalized inverse-CDF table.
#[derive(Clone, Debug)]
pub struct DiscreteGaussian {
    sigma: f64,
    bound: i64,
    cdf: Vec<f64>,
}

impl DiscreteGaussian {
    pub fn new(sigma: f64) -> Self {
        assert!(sigma > 0.0 && sigma.is_finite(), "sigma must be positive");
        let bound = truncation_bound(sigma);
        let pmf = discrete_gaussian_pmf(sigma, bound);
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for p in pmf {
            acc += p;
            cdf.push(acc);
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        DiscreteGaussian { sigma, bound, cdf }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn bound(&self) -> i64 {
        self.bound
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.gen();
        let slot = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        slot as i64 - self.bound
    }
}

/// Normalized pmf proportional to `exp(-x^2 / (2 sigma^2))` on `[-bound, bound]`.
pub fn discrete_gaussian_pmf(sigma: f64, bound: i64) -> Vec<f64> {
    let weights: Vec<f64> = (-bound..=bound)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    // Sum from the tails inward so small terms are not swallowed.
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]));
    let total: f64 = order.iter().map(|&i| weights[i]).sum();
    weights.into_iter().map(|w| w / total).collect()
}

pub fn sample_discrete_gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> i64 {
    DiscreteGaussian::new(sigma).sample(rng)
}

/// A calibrated per-party noise plan for either mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism")]
pub enum NoisePlan {
    #[serde(rename = "bm")]
    Binomial(BinomialPlan),
    #[serde(rename = "dgm")]
    DiscreteGaussian(GaussianPlan),
}

impl NoisePlan {
    pub fn calibrate(mechanism: Mechanism, params: &PrivacyParams, n_parties: usize) -> Result<Self, MechanismError> {
        Ok(match mechanism {
            Mechanism::Binomial => NoisePlan::Binomial(bm_plan(params, n_parties)?),
            Mechanism::DiscreteGaussian => NoisePlan::DiscreteGaussian(dg_plan(params, n_parties)?),
        })
    }

    pub fn noiseless(n_parties: usize) -> Self {
        NoisePlan::Binomial(BinomialPlan::noiseless(n_parties))
    }

    pub fn mechanism(&self) -> Mechanism {
        match self {
            NoisePlan::Binomial(_) => Mechanism::Binomial,
            NoisePlan::DiscreteGaussian(_) => Mechanism::DiscreteGaussian,
        }
    }

    /// Deterministic offset carried by `participants` raw shares: `participants * m / 2`
    /// for the Binomial mechanism, zero for the discrete Gaussian.
    pub fn offset(&self, participants: usize) -> i64 {
        match self {
            NoisePlan::Binomial(plan) => (participants as u64 * plan.m_per_party / 2) as i64,
            NoisePlan::DiscreteGaussian(_) => 0,
        }
    }

    /// Whether `parties` honest contributors meet the calibrated total.
    pub fn covered_by(&self, parties: usize) -> bool {
        match self {
            NoisePlan::Binomial(plan) => plan.covered_by(parties),
            NoisePlan::DiscreteGaussian(plan) => plan.covered_by(parties),
        }
    }

    /// Largest absolute raw share a party can produce.
    pub fn max_share(&self) -> i64 {
        match self {
            NoisePlan::Binomial(plan) => plan.m_per_party as i64,
            NoisePlan::DiscreteGaussian(plan) => plan.truncation_bound,
        }
    }

    pub fn sampler(&self) -> ShareSampler {
        match self {
            NoisePlan::Binomial(plan) => ShareSampler::Binomial(plan.m_per_party),
            NoisePlan::DiscreteGaussian(plan) => ShareSampler::Gaussian(DiscreteGaussian::new(plan.sigma_per_party)),
        }
    }

    pub fn record(&self, params: &PrivacyParams) -> CalibrationRecord {
        match self {
            NoisePlan::Binomial(plan) => CalibrationRecord {
                mechanism: Mechanism::Binomial,
                epsilon: params.epsilon,
                delta: params.delta,
                gamma: params.gamma,
                n_parties: plan.n_parties,
                honest: plan.honest,
                n_total: Some(plan.n_total),
                m_per_party: Some(plan.m_per_party),
                sigma_total: None,
                sigma_per_party: None,
                residual: None,
            },
            NoisePlan::DiscreteGaussian(plan) => CalibrationRecord {
                mechanism: Mechanism::DiscreteGaussian,
                epsilon: params.epsilon,
                delta: params.delta,
                gamma: params.gamma,
                n_parties: plan.n_parties,
                honest: plan.honest,
                n_total: None,
                m_per_party: None,
                sigma_total: Some(plan.sigma_total),
                sigma_per_party: Some(plan.sigma_per_party),
                residual: Some(
                    (analytic_gaussian_delta(plan.sigma_total, params.epsilon, plan.sensitivity) - params.delta).abs(),
                ),
            },
        }
    }
}

/// Per-party raw share sampler built once from a plan.
#[derive(Clone, Debug)]
pub enum ShareSampler {
    /// Raw `Binomial(m, 1/2)` draw, not centered.
    Binomial(u64),
    Gaussian(DiscreteGaussian),
}

impl ShareSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        match self {
            ShareSampler::Binomial(m) => sample_binomial_share(*m, rng) as i64,
            ShareSampler::Gaussian(dg) => dg.sample(rng),
        }
    }

    /// One share per class.
    pub fn sample_vector<R: Rng + ?Sized>(&self, classes: usize, rng: &mut R) -> Vec<i64> {
        (0..classes).map(|_| self.sample(rng)).collect()
    }
}

/// Flat JSON record of a calibration result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
    pub n_parties: usize,
    pub honest: usize,
    pub n_total: Option<u64>,
    pub m_per_party: Option<u64>,
    pub sigma_total: Option<f64>,
    pub sigma_per_party: Option<f64>,
    /// `|analytic delta(sigma_total) - delta|` for the Gaussian plan.
    pub residual: Option<f64>,
}

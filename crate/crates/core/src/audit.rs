//! Independent privacy oracles: exact hockey-stick divergences of the noise
//! pmfs, convolution stability checks and a Monte-Carlo test of the released
//! argmax.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mechanisms::{
    ag_sigma, analytic_gaussian_delta, bm_min_tosses, classical_gaussian_sigma, discrete_gaussian_pmf,
    baseline_min_tosses, truncation_bound, MechanismError, NoisePlan, PrivacyParams,
};
use crate::protocol::VoteVector;

/// Outcome of one privacy check. `tolerance` is zero for exact checks and the
/// Monte-Carlo slack for empirical ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpAuditReport {
    pub epsilon: f64,
    pub delta_claimed: f64,
    pub delta_actual: f64,
    pub mechanism: String,
    pub support_bound: i64,
    pub tolerance: f64,
    pub pass: bool,
}

impl DpAuditReport {
    pub fn new(mechanism: &str, epsilon: f64, delta_claimed: f64, delta_actual: f64, support_bound: i64, tolerance: f64) -> Self {
        DpAuditReport {
            epsilon,
            delta_claimed,
            delta_actual,
            mechanism: mechanism.to_string(),
            support_bound,
            tolerance,
            pass: delta_actual <= delta_claimed + tolerance,
        }
    }
}

/// Neumaier-compensated sum.
#[derive(Clone, Copy, Debug, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// A finite distribution on the integers `min, min + 1, ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pmf {
    pub min: i64,
    pub probs: Vec<f64>,
}

impl Pmf {
    pub fn new(min: i64, probs: Vec<f64>) -> Self {
        Pmf { min, probs }
    }

    pub fn point(at: i64) -> Self {
        Pmf::new(at, vec![1.0])
    }

    pub fn binomial(n: u64) -> Self {
        Pmf::new(0, binomial_pmf(n))
    }

    /// Truncated, normalized discrete Gaussian on `[-B, B]` with `B = ceil(12 sigma)`.
    pub fn discrete_gaussian(sigma: f64) -> Self {
        let bound = truncation_bound(sigma);
        Pmf::new(-bound, discrete_gaussian_pmf(sigma, bound))
    }

    pub fn max(&self) -> i64 {
        self.min + self.probs.len() as i64 - 1
    }

    pub fn get(&self, x: i64) -> f64 {
        if x < self.min {
            return 0.0;
        }
        self.probs.get((x - self.min) as usize).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        let mut acc = CompensatedSum::default();
        self.probs.iter().for_each(|&p| acc.add(p));
        acc.value()
    }

    /// Drops outer atoms whose combined mass on each side is below `mass`.
    pub fn trimmed(&self, mass: f64) -> Pmf {
        let (mut lo, mut hi) = (0, self.probs.len());
        let mut acc = 0.0;
        while lo < hi && acc + self.probs[lo] < mass {
            acc += self.probs[lo];
            lo += 1;
        }
        acc = 0.0;
        while hi > lo && acc + self.probs[hi - 1] < mass {
            acc += self.probs[hi - 1];
            hi -= 1;
        }
        Pmf::new(self.min + lo as i64, self.probs[lo..hi].to_vec())
    }
}

/// Binomial(n, 1/2) pmf built outward from the mode with the ratio
/// `P(k+1) / P(k) = (n - k) / (k + 1)`, then normalized. Far tails underflow to 0.
pub fn binomial_pmf(n: u64) -> Vec<f64> {
    let len = n as usize + 1;
    let mode = (n / 2) as usize;
    let mut weights = vec![0.0f64; len];
    weights[mode] = 1.0;
    for k in mode..len - 1 {
        weights[k + 1] = weights[k] * (n - k as u64) as f64 / (k + 1) as f64;
    }
    for k in (1..=mode).rev() {
        weights[k - 1] = weights[k] * k as f64 / (n - k as u64 + 1) as f64;
    }
    // Smallest terms first.
    let mut total = CompensatedSum::default();
    let (left, right) = weights.split_at(mode);
    for (i, w) in left.iter().enumerate() {
        total.add(*w);
        if let Some(r) = right.get(right.len() - 1 - i) {
            total.add(*r);
        }
    }
    for w in right.iter().take(right.len().saturating_sub(left.len())).rev() {
        total.add(*w);
    }
    let total = total.value();
    weights.into_iter().map(|w| w / total).collect()
}

/// `sum_x max(0, p(x) - e^eps q(x))` over the union of supports.
pub fn hockey_stick(p: &Pmf, q: &Pmf, epsilon: f64) -> f64 {
    let scale = epsilon.exp();
    let mut acc = CompensatedSum::default();
    for (i, &px) in p.probs.iter().enumerate() {
        let diff = px - scale * q.get(p.min + i as i64);
        if diff > 0.0 {
            acc.add(diff);
        }
    }
    acc.value()
}

/// Worst of `hockey_stick(P, P shifted by +s)` and `... -s`, both orders
/// being covered because a symmetric pmf's two shifts mirror each other.
pub fn shifted_delta(pmf: &Pmf, shift: i64, epsilon: f64) -> f64 {
    [shift, -shift]
        .into_iter()
        .map(|s| {
            let shifted = Pmf::new(pmf.min + s, pmf.probs.clone());
            hockey_stick(pmf, &shifted, epsilon)
        })
        .fold(0.0, f64::max)
}

/// Exact delta of Binomial(n, 1/2) noise on a sensitivity-1 sum.
pub fn bm_exact_delta(n: u64, epsilon: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let pmf = binomial_pmf(n);
    let mut worst = 0.0f64;
    for s in [1i64, -1] {
        let mut acc = CompensatedSum::default();
        for (k, &p) in pmf.iter().enumerate() {
            let k = k as u64;
            // P(k) - e^eps P(k+s) = P(k) (1 - exp(eps + ln(P(k+s) / P(k)))), with
            // the ratio taken exactly from the recurrence.
            let ratio = match s {
                1 if k < n => Some((n - k) as f64 / (k + 1) as f64),
                -1 if k > 0 => Some(k as f64 / (n - k + 1) as f64),
                _ => None,
            };
            let term = match ratio {
                Some(r) => {
                    let x = epsilon + r.ln();
                    if x >= 0.0 {
                        0.0
                    } else {
                        p * -x.exp_m1()
                    }
                }
                None => p,
            };
            acc.add(term);
        }
        worst = worst.max(acc.value());
    }
    worst
}

/// Exact delta of the truncated discrete Gaussian on a sum with the given sensitivity.
pub fn dg_exact_delta(sigma: f64, epsilon: f64, sensitivity: i64) -> f64 {
    shifted_delta(&Pmf::discrete_gaussian(sigma), sensitivity, epsilon)
}

/// Pmf of the sum of two independent variables.
pub fn convolve(a: &Pmf, b: &Pmf) -> Pmf {
    let mut out = vec![0.0; a.probs.len() + b.probs.len() - 1];
    for (i, &x) in a.probs.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.probs.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    Pmf::new(a.min + b.min, out)
}

/// Pmf of the sum of `copies` independent draws (`copies = 0` gives the point mass at 0).
pub fn convolve_pmf(pmf: &Pmf, copies: usize) -> Pmf {
    // Square-and-multiply keeps the number of large convolutions logarithmic.
    let mut result = Pmf::point(0);
    let mut base = pmf.clone();
    let mut k = copies;
    while k > 0 {
        if k & 1 == 1 {
            result = convolve(&result, &base);
        }
        k >>= 1;
        if k > 0 {
            base = convolve(&base, &base);
        }
    }
    result
}

/// Delta when one vote moves between two classes: one coordinate gains 1 and
/// another loses 1, each carrying independent noise from `pmf`.
pub fn flip_delta(pmf: &Pmf, epsilon: f64) -> f64 {
    // Mass beyond 1e-30 on either side changes the sum by less than that.
    let p = pmf.trimmed(1e-30);
    let scale = epsilon.exp();
    let mut acc = CompensatedSum::default();
    // Outputs (a, b): first input gives P(a-1) P(b), second P(a) P(b-1).
    for a in p.min..=p.max() + 1 {
        let (pa1, pa) = (p.get(a - 1), p.get(a));
        for b in p.min..=p.max() + 1 {
            let diff = pa1 * p.get(b) - scale * pa * p.get(b - 1);
            if diff > 0.0 {
                acc.add(diff);
            }
        }
    }
    acc.value()
}

/// Aggregate noise of a distributed plan when `honest` parties contribute:
/// the `honest`-fold convolution of one party's share distribution.
pub fn aggregate_noise_pmf(plan: &NoisePlan, honest: usize) -> Pmf {
    let share = match plan {
        NoisePlan::Binomial(p) => Pmf::binomial(p.m_per_party),
        NoisePlan::DiscreteGaussian(p) => Pmf::discrete_gaussian(p.sigma_per_party),
    };
    convolve_pmf(&share, honest)
}

/// Hockey-stick audit of the plan's noise as contributed by its honest parties.
pub fn distributed_plan_audit(plan: &NoisePlan, params: &PrivacyParams) -> DpAuditReport {
    let (honest, name) = match plan {
        NoisePlan::Binomial(p) => (p.honest, "bm"),
        NoisePlan::DiscreteGaussian(p) => (p.honest, "dgm"),
    };
    let pmf = aggregate_noise_pmf(plan, honest);
    let actual = shifted_delta(&pmf, 1, params.epsilon());
    let bound = pmf.max().max(-pmf.min);
    DpAuditReport::new(name, params.epsilon(), params.delta(), actual, bound, 0.0)
}

/// Whether the parties outside `compromised` still supply the calibrated noise.
pub fn collusion_residual_check(plan: &NoisePlan, n_parties: usize, compromised: &BTreeSet<usize>) -> bool {
    plan.covered_by(n_parties.saturating_sub(compromised.len()))
}

/// DKW-style slack at confidence 0.999 for `trials` samples.
pub fn dkw_slack(trials: usize) -> f64 {
    3.0 * ((2.0f64 / 0.001).ln() / (2.0 * trials as f64)).sqrt()
}

/// Monte-Carlo test of a randomized mechanism on neighboring vote sets.
///
/// `runner` returns one released class per call. Each input is run `trials`
/// times; for every output `s` and both input orders the check is
/// `freq(s) <= e^eps freq'(s) + delta + slack`.
pub fn empirical_dp_test<R, F>(
    mut runner: F,
    d: &[VoteVector],
    d_prime: &[VoteVector],
    epsilon: f64,
    delta: f64,
    trials: usize,
    rng: &mut R,
) -> DpAuditReport
where
    R: Rng + ?Sized,
    F: FnMut(&[VoteVector], &mut R) -> usize,
{
    let classes = d.first().map_or(0, VoteVector::len);
    let mut histogram = |votes: &[VoteVector], rng: &mut R| {
        let mut counts = vec![0usize; classes];
        for _ in 0..trials {
            counts[runner(votes, rng)] += 1;
        }
        counts.into_iter().map(|k| k as f64 / trials as f64).collect::<Vec<f64>>()
    };
    let freq_d = histogram(d, rng);
    let freq_dp = histogram(d_prime, rng);
    let scale = epsilon.exp();
    let worst = freq_d
        .iter()
        .zip(&freq_dp)
        .flat_map(|(&a, &b)| [a - scale * b, b - scale * a])
        .fold(0.0, f64::max);
    DpAuditReport::new("empirical", epsilon, delta, worst, classes as i64, dkw_slack(trials))
}

pub const AUDIT_EPSILONS: [f64; 5] = [0.1, 0.2, 0.5, 1.0, 2.0];
pub const AUDIT_DELTAS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Relative slack allowed between the discrete Gaussian's exact delta and
/// the continuous calibration target.
pub const DG_DISCRETIZATION_SLACK: f64 = 0.10;

/// One grid point of the calibration audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub epsilon: f64,
    pub delta: f64,
    pub bm_tosses: u64,
    pub baseline_tosses: u64,
    pub bm_delta: f64,
    pub baseline_delta: f64,
    /// Informational: delta under the joint (flip) neighboring relation.
    pub bm_flip_delta: f64,
    pub sigma_analytic: f64,
    pub sigma_classical: f64,
    pub sigma_residual: f64,
    pub dg_delta: f64,
    /// Informational: `1 - (sigma_analytic / sigma_classical)^2`.
    pub variance_reduction: f64,
}

impl AuditRow {
    pub fn bm_pass(&self) -> bool {
        self.bm_delta <= self.delta
    }

    pub fn tighter_than_baseline(&self) -> bool {
        self.bm_tosses < self.baseline_tosses && self.baseline_delta <= self.delta
    }

    pub fn sigma_pass(&self) -> bool {
        self.sigma_residual <= 1e-9 && (self.epsilon > 1.0 || self.sigma_analytic <= self.sigma_classical)
    }

    pub fn dg_within_slack(&self) -> bool {
        (self.dg_delta - self.delta).abs() <= DG_DISCRETIZATION_SLACK * self.delta
    }

    pub fn pass(&self) -> bool {
        self.bm_pass() && self.tighter_than_baseline() && self.sigma_pass() && self.dg_within_slack()
    }
}

pub fn audit_point(epsilon: f64, delta: f64) -> Result<AuditRow, MechanismError> {
    let params = PrivacyParams::new(epsilon, delta, 1.0)?;
    let bm_tosses = bm_min_tosses(&params);
    let baseline_tosses = baseline_min_tosses(epsilon, delta);
    let sigma_analytic = ag_sigma(epsilon, delta, 1.0)?;
    let sigma_classical = classical_gaussian_sigma(epsilon, delta, 1.0);
    Ok(AuditRow {
        epsilon,
        delta,
        bm_tosses,
        baseline_tosses,
        bm_delta: bm_exact_delta(bm_tosses, epsilon),
        baseline_delta: bm_exact_delta(baseline_tosses, epsilon),
        bm_flip_delta: flip_delta(&Pmf::binomial(bm_tosses), epsilon),
        sigma_analytic,
        sigma_classical,
        sigma_residual: (analytic_gaussian_delta(sigma_analytic, epsilon, 1.0) - delta).abs(),
        dg_delta: dg_exact_delta(sigma_analytic, epsilon, 1),
        variance_reduction: 1.0 - (sigma_analytic / sigma_classical).powi(2),
    })
}

pub fn audit_grid(epsilons: &[f64], deltas: &[f64]) -> Result<Vec<AuditRow>, MechanismError> {
    epsilons
        .iter()
        .flat_map(|&e| deltas.iter().map(move |&d| audit_point(e, d)))
        .collect()
}

//! Demand and lead-time laws, their samplers, maximum-likelihood fitting from
//! historical series and the standard-normal quantile used by the safety-stock
//! rule.
//!
//! Demand is a Bernoulli-gated Poisson: zero with probability `1-b`, otherwise
//! a Poisson draw with mean `mu`. Lead-times are geometric on {1, 2, ...}: an
//! order can never arrive in the period it was placed.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

/// Bernoulli(b) x Poisson(mu) demand law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    /// Probability of a nonzero-demand period.
    pub b: f64,
    /// Mean of the Poisson component, conditional on nonzero demand.
    pub mu: f64,
}

impl DemandModel {
    pub fn new(b: f64, mu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&b) || !b.is_finite() {
            return Err(Error::ProbabilityOutOfRange(b));
        }
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::Config(format!("demand mu must be > 0, got {mu}")));
        }
        Ok(Self { b, mu })
    }

    /// Mean demand per period: b * mu.
    pub fn mean(&self) -> f64 {
        self.b * self.mu
    }

    /// Variance of the mixture: b*mu*(1 + mu*(1-b)).
    pub fn variance(&self) -> f64 {
        self.b * self.mu * (1.0 + self.mu * (1.0 - self.b))
    }
}

/// Geometric lead-time law on support {1, 2, 3, ...} with success probability p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadTimeModel {
    pub p: f64,
}

impl LeadTimeModel {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::ProbabilityOutOfRange(p));
        }
        Ok(Self { p })
    }

    /// Mean lead-time: 1/p.
    pub fn mean(&self) -> f64 {
        1.0 / self.p
    }

    /// Variance: (1-p)/p^2.
    pub fn variance(&self) -> f64 {
        (1.0 - self.p) / (self.p * self.p)
    }
}

/// What a history series records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Demand,
    LeadTime,
}

/// An ordered series of non-negative integer observations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistorySeries {
    pub values: Vec<u64>,
    pub kind: SeriesKind,
}

impl HistorySeries {
    pub fn demand(values: Vec<u64>) -> Self {
        Self {
            values,
            kind: SeriesKind::Demand,
        }
    }

    pub fn lead_time(values: Vec<u64>) -> Self {
        Self {
            values,
            kind: SeriesKind::LeadTime,
        }
    }
}

/// Draw one period's demand: Y*X with X ~ Bernoulli(b), Y ~ Poisson(mu).
pub fn sample_demand(model: &DemandModel, rng: &mut RngStream) -> u64 {
    if !rng.gen_bool(model.b) {
        return 0;
    }
    let draw: f64 = Poisson::new(model.mu).expect("mu > 0 by invariant").sample(rng);
    draw as u64
}

/// Draw one lead-time: geometric on {1, 2, ...} via inversion.
pub fn sample_lead_time(model: &LeadTimeModel, rng: &mut RngStream) -> u64 {
    if model.p >= 1.0 {
        return 1;
    }
    let u = rng.uniform_open();
    // ceil(ln(u) / ln(1-p)) >= 1 for u in (0,1)
    let t = (u.ln() / (1.0 - model.p).ln()).ceil();
    (t as u64).max(1)
}

/// MLE for the gated-Poisson demand law:
/// b_hat = (#positive)/N, mu_hat = (sum of positives)/(#positive).
pub fn fit_demand_mle(history: &HistorySeries) -> Result<DemandModel> {
    if history.values.is_empty() {
        return Err(Error::Config("empty demand history".into()));
    }
    let n = history.values.len() as f64;
    let positives: Vec<u64> = history.values.iter().copied().filter(|&v| v > 0).collect();
    if positives.is_empty() {
        return Err(Error::NoPositiveDemand);
    }
    let k = positives.len() as f64;
    let sum: u64 = positives.iter().sum();
    DemandModel::new(k / n, sum as f64 / k)
}

/// MLE for the geometric lead-time law: p_hat = T / (sum of observations).
pub fn fit_lead_time_mle(history: &HistorySeries) -> Result<LeadTimeModel> {
    if history.values.is_empty() {
        return Err(Error::Config("empty lead-time history".into()));
    }
    if let Some(&bad) = history.values.iter().find(|&&v| v < 1) {
        return Err(Error::InvalidLeadTime(bad as i64));
    }
    let sum: u64 = history.values.iter().sum();
    LeadTimeModel::new(history.values.len() as f64 / sum as f64)
}

/// erf on |x| <= ~6 via the all-positive-term confluent series.
fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x > 6.5 {
        return 1.0;
    }
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0u32;
    loop {
        n += 1;
        term *= 2.0 * x2 / (2.0 * n as f64 + 1.0);
        let prev = sum;
        sum += term;
        if sum == prev || n > 200 {
            break;
        }
    }
    let two_over_sqrt_pi = 2.0 / std::f64::consts::PI.sqrt();
    (two_over_sqrt_pi * (-x2).exp() * sum).min(1.0)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Quantile of N(0,1): the z with Phi(z) = alpha, |Phi(z) - alpha| <= 1e-9.
///
/// Bisection bracket followed by Newton polishing.
pub fn inverse_normal_cdf(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::ProbabilityOutOfRange(alpha));
    }
    let (mut lo, mut hi) = (-9.0f64, 9.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..3 {
        let pdf = normal_pdf(z);
        if pdf > 0.0 {
            z -= (normal_cdf(z) - alpha) / pdf;
        }
    }
    Ok(z)
}

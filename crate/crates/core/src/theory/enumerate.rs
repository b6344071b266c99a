//! Exact expectations over Bernoulli masks by enumerating every outcome.

use rayon::prelude::*;

use super::linalg::CompensatedSum;
use crate::error::{Error, Result};
use crate::math::ParamVector;
use crate::mixreg::{
    mask_units, phi_mix_into, MaskDistribution, MaskStream, MaskVector, MixPolicy,
};

/// Largest number of independent mask units that will be enumerated.
pub const ENUM_LIMIT: usize = 20;

const BLOCK: u64 = 1 << 10;

/// All `2^k` outcomes of the independent units of a Bernoulli policy.
struct Outcomes {
    units: Vec<Vec<usize>>,
    active: Vec<bool>,
    p: f64,
}

impl Outcomes {
    fn new(policy: &MixPolicy, w: &ParamVector) -> Result<Self> {
        let p = match policy.distribution {
            MaskDistribution::Bernoulli { p } => p,
            MaskDistribution::General { .. } => {
                return Err(Error::Unsupported(
                    "exact enumeration needs a Bernoulli mask law".into(),
                ))
            }
        };
        policy.validate(w.layout())?;
        let units = mask_units(policy, w.layout());
        if units.len() > ENUM_LIMIT {
            return Err(Error::Capacity {
                units: units.len(),
                limit: ENUM_LIMIT,
            });
        }
        let mut active = vec![false; w.len()];
        for i in units.iter().flatten() {
            active[*i] = true;
        }
        Ok(Self { units, active, p })
    }

    fn count(&self) -> u64 {
        1u64 << self.units.len()
    }

    /// Bit `j` of `outcome` set means unit `j` is kept.
    fn fill(&self, outcome: u64, values: &mut [f64]) -> f64 {
        let mut kept = 0;
        for (j, unit) in self.units.iter().enumerate() {
            let m = if outcome >> j & 1 == 1 {
                kept += 1;
                1.0
            } else {
                0.0
            };
            for &i in unit {
                values[i] = m;
            }
        }
        let dropped = self.units.len() - kept;
        (1.0 - self.p).powi(kept as i32) * self.p.powi(dropped as i32)
    }

    /// Compensated sum of `prob * f(phi)` over all outcomes, in outcome order.
    fn expectation<F>(&self, w: &ParamVector, u: &ParamVector, f: F) -> Result<f64>
    where
        F: Fn(&ParamVector) -> Result<f64> + Sync,
    {
        let mu = 1.0 - self.p;
        let total = self.count();
        let blocks = total.div_ceil(BLOCK);
        let partial: Result<Vec<f64>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut values = vec![1.0; w.len()];
                let mut phi = vec![0.0; w.len()];
                let mut acc = CompensatedSum::default();
                for outcome in (b * BLOCK)..((b + 1) * BLOCK).min(total) {
                    let prob = self.fill(outcome, &mut values);
                    if prob == 0.0 {
                        continue;
                    }
                    let mask = MaskVector::with_activity(values.clone(), self.active.clone())?;
                    phi_mix_into(w.values(), u.values(), &mask, mu, &mut phi)?;
                    let v = f(&w.with_values(phi.clone())?)?;
                    acc.add(prob * v);
                }
                Ok(acc.value())
            })
            .collect();
        let sum: CompensatedSum = partial?.into_iter().collect();
        Ok(sum.value())
    }
}

/// `E_M[loss(phi(w; u, M))]` computed exactly, with `u` taken from the policy anchor.
///
/// Respects per-neuron tying and excluded layers. Fails with
/// [`Error::Capacity`] above [`ENUM_LIMIT`] units and [`Error::Unsupported`]
/// for non-Bernoulli laws.
pub fn enum_expected_loss<F>(loss: F, w: &ParamVector, policy: &MixPolicy) -> Result<f64>
where
    F: Fn(&ParamVector) -> Result<f64> + Sync,
{
    let outcomes = Outcomes::new(policy, w)?;
    let u = policy.anchor_vector(w.layout())?;
    outcomes.expectation(w, &u, loss)
}

/// First and second moments of `phi` under a Bernoulli policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// `E[phi]`.
    pub mean: Vec<f64>,
    /// `E ||phi - w||^2`.
    pub deviation_sq: f64,
    /// `Cov(phi_i, phi_j)`, row-major `d x d`.
    pub covariance: Vec<f64>,
}

pub fn enum_moments(w: &ParamVector, policy: &MixPolicy) -> Result<Moments> {
    let outcomes = Outcomes::new(policy, w)?;
    let u = policy.anchor_vector(w.layout())?;
    let d = w.len();
    let mu = 1.0 - outcomes.p;
    let mut values = vec![1.0; d];
    let mut phi = vec![0.0; d];
    let mut mean = vec![CompensatedSum::default(); d];
    let mut second = CompensatedSum::default();
    let mut cross = vec![CompensatedSum::default(); d * d];
    for outcome in 0..outcomes.count() {
        let prob = outcomes.fill(outcome, &mut values);
        if prob == 0.0 {
            continue;
        }
        let mask = MaskVector::with_activity(values.clone(), outcomes.active.clone())?;
        phi_mix_into(w.values(), u.values(), &mask, mu, &mut phi)?;
        let mut dev = 0.0;
        for i in 0..d {
            let e = phi[i] - w.values()[i];
            mean[i].add(prob * e);
            dev += e * e;
            for j in 0..d {
                cross[i * d + j].add(prob * e * (phi[j] - w.values()[j]));
            }
        }
        second.add(prob * dev);
    }
    // Moments are accumulated around w so that the covariance does not lose
    // precision to cancellation.
    let bias: Vec<f64> = mean.iter().map(|s| s.value()).collect();
    let mut covariance = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            covariance[i * d + j] = cross[i * d + j].value() - bias[i] * bias[j];
        }
    }
    Ok(Moments {
        mean: bias.iter().zip(w.values()).map(|(b, x)| x + b).collect(),
        deviation_sq: second.value(),
        covariance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// Monte Carlo estimate of `E_M[loss(phi)]` for any mask law.
pub fn monte_carlo_expected_loss<F>(
    loss: F,
    w: &ParamVector,
    policy: &MixPolicy,
    samples: usize,
    seed: u64,
) -> Result<Estimate>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    if samples < 2 {
        return Err(Error::config("Monte Carlo needs at least 2 samples"));
    }
    policy.validate(w.layout())?;
    let u = policy.anchor_vector(w.layout())?;
    let mu = policy.distribution.mean();
    let stream = MaskStream::new(seed);
    let mut phi = vec![0.0; w.len()];
    let mut xs = Vec::with_capacity(samples);
    for s in 0..samples {
        let mask = crate::mixreg::sample_mask(policy, w.layout(), &stream, s as u64)?;
        phi_mix_into(w.values(), u.values(), &mask, mu, &mut phi)?;
        xs.push(loss(&w.with_values(phi.clone())?)?);
    }
    let n = samples as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok(Estimate {
        mean,
        std_err: (var / n).sqrt(),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Expectation {
    Exact(f64),
    Estimated(Estimate),
}

/// Exact enumeration when possible, otherwise a Monte Carlo estimate.
pub fn expected_loss<F>(
    loss: F,
    w: &ParamVector,
    policy: &MixPolicy,
    fallback_samples: usize,
    seed: u64,
) -> Result<Expectation>
where
    F: Fn(&ParamVector) -> Result<f64> + Sync,
{
    match enum_expected_loss(&loss, w, policy) {
        Ok(v) => Ok(Expectation::Exact(v)),
        Err(Error::Capacity { .. }) | Err(Error::Unsupported(_)) => Ok(Expectation::Estimated(
            monte_carlo_expected_loss(&loss, w, policy, fallback_samples, seed)?,
        )),
        Err(e) => Err(e),
    }
}

//! Randomized self-checks of the closed forms against enumeration.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::enumerate::{enum_expected_loss, enum_moments};
use super::quadratic::{check_lower_bound, quadratic_expected_loss, QuadraticLoss};
use super::regression::{ls_mixout_solve, ls_regression_demo, RegressionProblem};
use crate::error::Result;
use crate::math::{LayerShape, ParamLayout, ParamVector};
use crate::mixreg::{Anchor, Granularity, MixPolicy};

/// One randomly drawn test case.
#[derive(Debug, Clone)]
pub struct Instance {
    pub quad: QuadraticLoss,
    pub w: ParamVector,
    pub u: ParamVector,
    pub policy: MixPolicy,
}

/// Random weights-only layout with at most `max_params` entries.
pub fn random_layout<R: Rng>(rng: &mut R, max_params: usize) -> Arc<ParamLayout> {
    loop {
        let layers = rng.random_range(1..=2);
        let shapes: Vec<LayerShape> = (0..layers)
            .map(|_| LayerShape::weights_only(rng.random_range(1..=4), rng.random_range(1..=3)))
            .collect();
        let total: usize = shapes.iter().map(|s| s.len()).sum();
        if total <= max_params {
            return Arc::new(ParamLayout::new(&shapes));
        }
    }
}

/// `A = B^T B / d + shift I` with standard normal `B`.
pub fn random_spd<R: Rng>(rng: &mut R, d: usize, shift: f64) -> Vec<f64> {
    let b: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let v: f64 = (0..d).map(|k| b[k * d + i] * b[k * d + j]).sum::<f64>() / d as f64;
            a[i * d + j] = v;
            a[j * d + i] = v;
        }
        a[i * d + i] += shift;
    }
    a
}

fn uniform_vec<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_instance<R: Rng>(
    rng: &mut R,
    granularity: Granularity,
    p: f64,
    max_params: usize,
) -> Result<Instance> {
    let layout = random_layout(rng, max_params);
    let d = layout.total_len();
    let quad = QuadraticLoss::new(random_spd(rng, d, 0.1), uniform_vec(rng, d))?;
    let w = ParamVector::from_values(layout.clone(), uniform_vec(rng, d))?;
    let u = ParamVector::from_values(layout.clone(), uniform_vec(rng, d))?;
    let mut policy = MixPolicy::mixout(Anchor::Explicit(u.clone()), p)?;
    policy.granularity = granularity;
    Ok(Instance { quad, w, u, policy })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check {
        name,
        passed: worst <= tol,
        detail: format!("max error {worst:.3e} (tolerance {tol:e})"),
    }
}

/// Runs the theory checks on `instances` random cases per granularity.
pub fn run_checks(seed: u64, instances: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let mut enum_err: f64 = 0.0;
    let mut bound_worst: f64 = 0.0;
    let mut mean_err: f64 = 0.0;
    let mut second_err: f64 = 0.0;
    for k in 0..instances {
        for granularity in [Granularity::PerParameter, Granularity::PerSourceNeuron] {
            let p = grid[k % grid.len()];
            let inst = random_instance(&mut rng, granularity, p, 12)?;
            let quad = &inst.quad;
            let exact = enum_expected_loss(|v| quad.value(v.values()), &inst.w, &inst.policy)?;
            let closed = quadratic_expected_loss(quad, &inst.w, &inst.policy)?;
            enum_err = enum_err.max((exact - closed).abs());
            let report = check_lower_bound(quad, &inst.w, &inst.policy)?;
            bound_worst = bound_worst.max(-report.slack);
            let moments = enum_moments(&inst.w, &inst.policy)?;
            for (m, x) in moments.mean.iter().zip(inst.w.values()) {
                mean_err = mean_err.max((m - x).abs());
            }
            let dev = crate::math::deviation_norm_sq(&inst.w, &inst.u)?;
            let predicted = inst.policy.distribution.penalty_ratio() * dev;
            second_err = second_err.max((moments.deviation_sq - predicted).abs());
        }
    }
    let hand = RegressionProblem::new(vec![1.0, -1.0], vec![2.0, -2.0], 1)?;
    let hand_err = (ls_mixout_solve(&hand, &[0.0], 0.5)?[0] - 1.0).abs();
    let demo = ls_regression_demo(seed, &[0.0, 0.3, 0.6, 0.9], None)?;
    let decreasing = demo
        .rows
        .windows(2)
        .all(|r| r[1].dev_from_u < r[0].dev_from_u);
    Ok(vec![
        check("expected loss: enumeration vs closed form", enum_err, 1e-12),
        check("lower bound slack", bound_worst, 1e-12),
        check("unbiased mixing", mean_err, 1e-12),
        check("second moment of mixing", second_err, 1e-12),
        check("least squares hand example", hand_err, 1e-12),
        Check {
            name: "least squares deviation decreases in p",
            passed: decreasing,
            detail: demo
                .rows
                .iter()
                .map(|r| format!("{}:{:.6}", r.p, r.dev_from_u))
                .collect::<Vec<_>>()
                .join(" "),
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_pass_on_a_small_run() {
        for c in run_checks(3, 5).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn layouts_respect_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert!(random_layout(&mut rng, 12).total_len() <= 12);
        }
    }
}

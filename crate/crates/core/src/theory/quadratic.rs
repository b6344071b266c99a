//! Closed-form expected loss for quadratics and the strong-convexity bound.

use super::linalg::{asymmetry, symmetric_eigenvalues};
use crate::error::{Error, Result};
use crate::math::ParamVector;
use crate::mixreg::{mask_units, MixPolicy};

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const BOUND_TOL: f64 = 1e-12;

/// `L(w) = 0.5 (w - w*)^T A (w - w*)` with `A` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLoss {
    a: Vec<f64>,
    w_star: Vec<f64>,
    m: f64,
}

impl QuadraticLoss {
    pub fn new(a: Vec<f64>, w_star: Vec<f64>) -> Result<Self> {
        let d = w_star.len();
        let skew = asymmetry(&a, d)?;
        if skew > SYMMETRY_TOL {
            return Err(Error::config(format!(
                "matrix is not symmetric (max skew {skew:e})"
            )));
        }
        if w_star.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("minimizer"));
        }
        let m = symmetric_eigenvalues(&a, d, 1e-12)?[0];
        if !(m > 0.0) {
            return Err(Error::config(format!(
                "matrix is not positive definite (min eigenvalue {m})"
            )));
        }
        Ok(Self { a, w_star, m })
    }

    /// `m I` centered at `w_star`; `m` is exact here rather than computed.
    pub fn isotropic(m: f64, w_star: Vec<f64>) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::config(format!("curvature {m} must be > 0")));
        }
        let d = w_star.len();
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            a[i * d + i] = m;
        }
        Ok(Self { a, w_star, m })
    }

    pub fn dim(&self) -> usize {
        self.w_star.len()
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.w_star
    }

    /// Strong-convexity constant: the smallest eigenvalue of `A`.
    pub fn m(&self) -> f64 {
        self.m
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        self.check(w.len())?;
        let d = self.dim();
        let delta: Vec<f64> = w.iter().zip(&self.w_star).map(|(a, b)| a - b).collect();
        let mut total = 0.0;
        for i in 0..d {
            let row: f64 = (0..d).map(|j| self.a[i * d + j] * delta[j]).sum();
            total += delta[i] * row;
        }
        Ok(0.5 * total)
    }

    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w.len())?;
        let d = self.dim();
        Ok((0..d)
            .map(|i| {
                (0..d)
                    .map(|j| self.a[i * d + j] * (w[j] - self.w_star[j]))
                    .sum()
            })
            .collect())
    }
}

/// `0.5 (s^2 / mu^2) sum_blocks sum_{i,j in block} A_ij (w_i - u_i)(w_j - u_j)`.
pub fn quadratic_penalty(quad: &QuadraticLoss, w: &ParamVector, policy: &MixPolicy) -> Result<f64> {
    quad.check(w.len())?;
    policy.validate(w.layout())?;
    let u = policy.anchor_vector(w.layout())?;
    let delta: Vec<f64> = w
        .values()
        .iter()
        .zip(u.values())
        .map(|(a, b)| a - b)
        .collect();
    let d = quad.dim();
    let mut total = 0.0;
    for block in mask_units(policy, w.layout()) {
        for &i in &block {
            for &j in &block {
                total += quad.a[i * d + j] * delta[i] * delta[j];
            }
        }
    }
    Ok(0.5 * policy.distribution.penalty_ratio() * total)
}

/// Exact `E_M[L(phi(w; u, M))]` for a quadratic `L`.
pub fn quadratic_expected_loss(
    quad: &QuadraticLoss,
    w: &ParamVector,
    policy: &MixPolicy,
) -> Result<f64> {
    Ok(quad.value(w.values())? + quadratic_penalty(quad, w, policy)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// Expected loss under mixing.
    pub lhs: f64,
    /// `L(w) + (m s^2 / 2 mu^2) ||w - u||^2` over masked coordinates.
    pub rhs: f64,
    pub slack: f64,
    pub loss_at_w: f64,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.slack >= -BOUND_TOL
    }
}

/// Compares the expected loss with its strong-convexity lower bound.
pub fn check_lower_bound(
    quad: &QuadraticLoss,
    w: &ParamVector,
    policy: &MixPolicy,
) -> Result<BoundReport> {
    let loss_at_w = quad.value(w.values())?;
    let lhs = loss_at_w + quadratic_penalty(quad, w, policy)?;
    let u = policy.anchor_vector(w.layout())?;
    let masked: f64 = mask_units(policy, w.layout())
        .iter()
        .flatten()
        .map(|&i| {
            let e = w.values()[i] - u.values()[i];
            e * e
        })
        .sum();
    let rhs = loss_at_w + 0.5 * quad.m() * policy.distribution.penalty_ratio() * masked;
    Ok(BoundReport {
        lhs,
        rhs,
        slack: lhs - rhs,
        loss_at_w,
    })
}

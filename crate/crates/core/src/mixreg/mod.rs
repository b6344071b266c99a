//! Stochastic parameter mixing.
//!
//! A mask `M` with `E[M_i] = mu` mixes the current parameter `w` with an
//! anchor `u`:
//!
//! ```text
//! phi_i = u_i + (M_i / mu) * (w_i - u_i)
//! ```
//!
//! With `u = 0` and Bernoulli masks this is inverted dropconnect (per-parameter
//! draws) or inverted dropout (one draw per source neuron). With `u = w_pre` it
//! is mixout. Evaluation always uses `w` itself; there is no test-time rescaling.

mod mask;
mod policy;

use std::sync::Arc;

pub use mask::{mask_units, sample_mask, MaskStream, MaskVector};
pub use policy::{Anchor, Decay, Granularity, MaskDistribution, MaskScope, MixPolicy};

use crate::error::{Error, Result};
use crate::math::{ParamLayout, ParamVector};

fn check_mean(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("mask mean must be > 0, got {mu}")))
    }
}

#[inline]
fn mix_entry(w: f64, u: f64, scale: f64) -> f64 {
    // The two exact cases are returned without rounding so that p = 0 and
    // full replacement reproduce w and u bit for bit.
    if scale == 0.0 {
        u
    } else if scale == 1.0 {
        w
    } else {
        u + scale * (w - u)
    }
}

/// Writes `phi(w; u, M)` into `out`.
pub fn phi_mix_into(
    w: &[f64],
    u: &[f64],
    mask: &MaskVector,
    mu: f64,
    out: &mut [f64],
) -> Result<()> {
    check_mean(mu)?;
    let n = w.len();
    for len in [u.len(), mask.len(), out.len()] {
        if len != n {
            return Err(Error::Dimension {
                expected: n,
                got: len,
            });
        }
    }
    let inv = 1.0 / mu;
    for i in 0..n {
        out[i] = if mask.active()[i] {
            mix_entry(w[i], u[i], mask.values()[i] * inv)
        } else {
            w[i]
        };
    }
    Ok(())
}

/// The random mixture `phi(w; u, M)`.
pub fn phi_mix(
    w: &ParamVector,
    u: &ParamVector,
    mask: &MaskVector,
    mu: f64,
) -> Result<ParamVector> {
    w.check_compatible(u)?;
    let mut out = vec![0.0; w.len()];
    phi_mix_into(w.values(), u.values(), mask, mu, &mut out)?;
    w.with_values(out)
}

/// Pulls a gradient taken at `phi` back to `w`: `(M_i / mu) * g_i`.
pub fn phi_backward_in_place(mask: &MaskVector, mu: f64, grad: &mut [f64]) -> Result<()> {
    check_mean(mu)?;
    if grad.len() != mask.len() {
        return Err(Error::Dimension {
            expected: mask.len(),
            got: grad.len(),
        });
    }
    let inv = 1.0 / mu;
    for ((g, &m), &a) in grad.iter_mut().zip(mask.values()).zip(mask.active()) {
        if a {
            *g *= m * inv;
        }
    }
    Ok(())
}

pub fn phi_backward(mask: &MaskVector, mu: f64, grad_at_phi: &ParamVector) -> Result<ParamVector> {
    let mut out = grad_at_phi.values().to_vec();
    phi_backward_in_place(mask, mu, &mut out)?;
    grad_at_phi.with_values(out)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!(
            "decay coefficient {lambda} must be >= 0"
        )))
    }
}

/// `(lambda / 2) * sum over weight entries of (w_i - u_i)^2`.
///
/// Bias and normalization entries are never penalized.
pub fn decay_penalty(w: &ParamVector, u: &ParamVector, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    w.check_compatible(u)?;
    let mut sum = 0.0;
    for layer in w.layout().layers() {
        for i in layer.weights() {
            let d = w.values()[i] - u.values()[i];
            sum += d * d;
        }
    }
    Ok(0.5 * lambda * sum)
}

/// Adds `lambda * (w_i - u_i)` on weight entries to `grad`.
pub fn add_decay_grad(
    layout: &ParamLayout,
    w: &[f64],
    u: &[f64],
    lambda: f64,
    grad: &mut [f64],
) -> Result<()> {
    check_lambda(lambda)?;
    if lambda == 0.0 {
        return Ok(());
    }
    for layer in layout.layers() {
        for i in layer.weights() {
            grad[i] += lambda * (w[i] - u[i]);
        }
    }
    Ok(())
}

pub fn decay_grad(w: &ParamVector, u: &ParamVector, lambda: f64) -> Result<ParamVector> {
    w.check_compatible(u)?;
    let mut out = vec![0.0; w.len()];
    add_decay_grad(w.layout(), w.values(), u.values(), lambda, &mut out)?;
    w.with_values(out)
}

/// A policy resolved against a layout: anchor vectors are materialized once.
#[derive(Debug, Clone)]
pub struct Regularizer {
    policy: MixPolicy,
    layout: Arc<ParamLayout>,
    anchor: ParamVector,
    decay: Option<(ParamVector, f64)>,
}

impl Regularizer {
    pub fn new(policy: MixPolicy, layout: Arc<ParamLayout>) -> Result<Self> {
        policy.validate(&layout)?;
        let anchor = policy.anchor_vector(&layout)?;
        let decay = match &policy.decay {
            Some(d) => Some((d.anchor.vector(&layout)?, d.lambda)),
            None => None,
        };
        Ok(Self {
            policy,
            layout,
            anchor,
            decay,
        })
    }

    pub fn policy(&self) -> &MixPolicy {
        &self.policy
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn anchor(&self) -> &ParamVector {
        &self.anchor
    }

    pub fn mean(&self) -> f64 {
        self.policy.distribution.mean()
    }

    /// False when every mask is identically 1.
    pub fn mixes(&self) -> bool {
        !matches!(self.policy.distribution, MaskDistribution::Bernoulli { p } if p == 0.0)
    }

    pub fn sample(&self, stream: &MaskStream, step: u64) -> Result<MaskVector> {
        if self.mixes() {
            sample_mask(&self.policy, &self.layout, stream, step)
        } else {
            Ok(MaskVector::pass_through(self.layout.total_len()))
        }
    }

    pub fn add_decay(&self, w: &[f64], grad: &mut [f64]) -> Result<()> {
        if let Some((u, lambda)) = &self.decay {
            add_decay_grad(&self.layout, w, u.values(), *lambda, grad)?;
        }
        Ok(())
    }

    pub fn decay_penalty(&self, w: &ParamVector) -> Result<f64> {
        match &self.decay {
            Some((u, lambda)) => decay_penalty(w, u, *lambda),
            None => Ok(0.0),
        }
    }
}

//! Adam with linear warmup and linear decay, and the mixing training step.
//!
//! One optimization step samples a single mask, evaluates the loss and its
//! gradient at `phi(w; u, M)`, pulls the gradient back to `w`, adds the decay
//! term, and applies the Adam update.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::ParamVector;
use crate::mixreg::{phi_backward_in_place, phi_mix_into, MaskStream, Regularizer};
use crate::net::{self, Batch, NetworkSpec};

/// Anything with a loss and a gradient over a flat parameter vector.
pub trait Objective {
    fn loss_and_grad(&self, w: &ParamVector) -> Result<(f64, Vec<f64>)>;
}

/// A network evaluated on one batch.
pub struct NetObjective<'a> {
    pub spec: &'a NetworkSpec,
    pub batch: &'a Batch,
}

impl Objective for NetObjective<'_> {
    fn loss_and_grad(&self, w: &ParamVector) -> Result<(f64, Vec<f64>)> {
        net::loss_and_grad_raw(self.spec, w, self.batch, None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

pub(crate) fn default_beta1() -> f64 {
    0.9
}
pub(crate) fn default_beta2() -> f64 {
    0.999
}
pub(crate) fn default_adam_eps() -> f64 {
    1e-8
}
pub(crate) fn default_warmup() -> f64 {
    0.1
}
pub(crate) fn default_batch_size() -> usize {
    32
}

impl TrainConfig {
    pub fn new(lr: f64, epochs: usize) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            warmup_fraction: default_warmup(),
            batch_size: default_batch_size(),
            epochs,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be > 0",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("warmup fraction must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn warmup_steps(&self, total_steps: u64) -> u64 {
        (self.warmup_fraction * total_steps as f64).ceil() as u64
    }
}

/// Learning rate at step `t` of `total_steps`: linear warmup to `lr` over the
/// first `ceil(warmup_fraction * T)` steps, then linear decay to 0 at `T`.
pub fn lr_at(config: &TrainConfig, t: f64, total_steps: u64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::config("schedule needs at least one step"));
    }
    let total = total_steps as f64;
    if !(0.0..=total).contains(&t) {
        return Err(Error::config(format!(
            "step {t} outside [0, {total_steps}]"
        )));
    }
    let warmup = config.warmup_steps(total_steps) as f64;
    let lr = config.lr;
    if warmup > 0.0 && t <= warmup {
        Ok(lr * (t / warmup))
    } else {
        Ok(lr * ((total - t) / (total - warmup)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

/// Bias-corrected Adam update. Returns the parameter delta.
pub fn adam_step(
    state: &mut AdamState,
    grad: &[f64],
    lr: f64,
    hp: &AdamParams,
) -> Result<Vec<f64>> {
    if grad.len() != state.m.len() {
        return Err(Error::Dimension {
            expected: state.m.len(),
            got: grad.len(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric(format!("gradient entry {i}")));
    }
    state.t += 1;
    let bc1 = 1.0 - hp.beta1.powi(state.t as i32);
    let bc2 = 1.0 - hp.beta2.powi(state.t as i32);
    let mut delta = vec![0.0; grad.len()];
    for (((m, v), &g), d) in state
        .m
        .iter_mut()
        .zip(state.v.iter_mut())
        .zip(grad)
        .zip(delta.iter_mut())
    {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *d = -lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(delta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// Loss at the mixed parameter `phi`.
    pub loss: f64,
    /// `||w' - w_0||` when a reference `w_0` is registered.
    pub drift: Option<f64>,
}

/// One regularized optimization step, updating `w` and `state` in place.
#[allow(clippy::too_many_arguments)]
pub fn train_step<O: Objective + ?Sized>(
    objective: &O,
    w: &mut ParamVector,
    reg: &Regularizer,
    state: &mut AdamState,
    lr: f64,
    hp: &AdamParams,
    stream: &MaskStream,
    step: u64,
    reference: Option<&ParamVector>,
) -> Result<StepMetrics> {
    w.check_compatible(reg.anchor())?;
    let mask = reg.sample(stream, step)?;
    let mu = reg.mean();
    let mut phi = vec![0.0; w.len()];
    phi_mix_into(w.values(), reg.anchor().values(), &mask, mu, &mut phi)?;
    let phi = w.with_values(phi)?;
    let (loss, mut grad) = objective.loss_and_grad(&phi)?;
    phi_backward_in_place(&mask, mu, &mut grad)?;
    reg.add_decay(w.values(), &mut grad)?;
    let delta = adam_step(state, &grad, lr, hp)?;
    for (x, d) in w.values_mut().iter_mut().zip(&delta) {
        *x += d;
    }
    if !w.is_finite() {
        return Err(Error::numeric(format!("parameters after step {step}")));
    }
    let drift = match reference {
        Some(w0) => Some(crate::math::deviation_norm_sq(w, w0)?.sqrt()),
        None => None,
    };
    Ok(StepMetrics { loss, drift })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss at `phi` over the epoch's steps.
    pub train_loss: f64,
    /// `||w_t - w_0||` at the end of the epoch.
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub steps: u64,
    pub epochs: Vec<EpochStats>,
    pub secs_per_step: f64,
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> u64 {
    n.div_ceil(batch_size) as u64
}

/// Trains for `config.epochs` epochs over `n` examples.
///
/// `make_batch` builds a batch from example indices. Examples are reshuffled
/// every epoch from the config seed; masks come from a separate stream keyed
/// by the same seed, so the run is a pure function of its inputs.
pub fn fit<F, E>(
    spec: &NetworkSpec,
    w: &mut ParamVector,
    reg: &Regularizer,
    config: &TrainConfig,
    n: usize,
    make_batch: F,
    mut on_epoch: E,
) -> Result<FitReport>
where
    F: Fn(&[usize]) -> Result<Batch>,
    E: FnMut(&EpochStats, &ParamVector) -> Result<()>,
{
    config.validate()?;
    if n == 0 {
        return Err(Error::config("training split is empty"));
    }
    let per_epoch = steps_per_epoch(n, config.batch_size);
    let total = per_epoch * config.epochs as u64;
    let hp = config.adam();
    let stream = MaskStream::new(config.seed);
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle.set_stream(u64::MAX);
    let w0 = w.clone();
    let mut state = AdamState::new(w.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    let start = Instant::now();
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = make_batch(chunk)?;
            let lr = lr_at(config, (step + 1) as f64, total)?;
            let objective = NetObjective {
                spec,
                batch: &batch,
            };
            let metrics = train_step(&objective, w, reg, &mut state, lr, &hp, &stream, step, None)?;
            loss_sum += metrics.loss;
            step += 1;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / per_epoch as f64,
            drift: crate::math::deviation_norm_sq(w, &w0)?.sqrt(),
        };
        on_epoch(&stats, w)?;
        epochs.push(stats);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(FitReport {
        steps: step,
        epochs,
        secs_per_step: if step > 0 { secs / step as f64 } else { 0.0 },
    })
}

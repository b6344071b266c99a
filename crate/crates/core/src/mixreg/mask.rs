use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::policy::{Granularity, MaskDistribution, MaskScope, MixPolicy};
use crate::error::{Error, Result};
use crate::math::{LayerLayout, ParamLayout};

/// Counter-based random stream for masks.
///
/// The generator for a given `(step, layer)` pair is derived from the run seed
/// alone, so a draw never depends on how many draws came before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskStream {
    seed: u64,
}

impl MaskStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, step: u64, layer: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        rng.set_word_pos((layer as u128) << 48);
        rng
    }
}

/// One sampled mask realization aligned with a layout.
///
/// Entries that do not take part in mixing (excluded layers, normalization
/// parameters, biases unless the scope includes them) hold exactly 1 and are
/// flagged inactive; mixing passes them through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVector {
    values: Vec<f64>,
    active: Vec<bool>,
}

impl MaskVector {
    /// All-ones mask with no active entries.
    pub fn pass_through(len: usize) -> Self {
        Self {
            values: vec![1.0; len],
            active: vec![false; len],
        }
    }

    /// Explicit mask; every entry is active.
    pub fn from_values(values: Vec<f64>) -> Self {
        let active = vec![true; values.len()];
        Self { values, active }
    }

    /// Explicit mask with an activity flag per entry. Inactive entries are forced to 1.
    pub fn with_activity(mut values: Vec<f64>, active: Vec<bool>) -> Result<Self> {
        if values.len() != active.len() {
            return Err(Error::Dimension {
                expected: values.len(),
                got: active.len(),
            });
        }
        for (v, &a) in values.iter_mut().zip(&active) {
            if !a {
                *v = 1.0;
            }
        }
        Ok(Self { values, active })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn set(&mut self, index: usize, value: f64) {
        self.values[index] = value;
        self.active[index] = true;
    }
}

fn draw(dist: &MaskDistribution, normal: Option<&Normal<f64>>, rng: &mut ChaCha8Rng) -> f64 {
    match *dist {
        MaskDistribution::Bernoulli { p } => {
            if rng.random::<f64>() < 1.0 - p {
                1.0
            } else {
                0.0
            }
        }
        MaskDistribution::General { .. } => normal.expect("normal sampler").sample(rng),
    }
}

/// Samples one mask for optimization step `step`.
///
/// Each independent unit (a parameter, or a source neuron's outgoing weights)
/// gets one draw; a layer's draws come from its own `(step, layer)` stream.
pub fn sample_mask(
    policy: &MixPolicy,
    layout: &ParamLayout,
    stream: &MaskStream,
    step: u64,
) -> Result<MaskVector> {
    policy.distribution.validate()?;
    let normal = match policy.distribution {
        MaskDistribution::General { mean, variance } => Some(
            Normal::new(mean, variance.sqrt())
                .map_err(|e| Error::config(format!("gaussian mask law: {e}")))?,
        ),
        MaskDistribution::Bernoulli { .. } => None,
    };
    let mut mask = MaskVector::pass_through(layout.total_len());
    for layer in layout.layers() {
        if !policy.is_masked_layer(layer.id) {
            continue;
        }
        let mut rng = stream.rng(step, layer.id);
        let mut next = || draw(&policy.distribution, normal.as_ref(), &mut rng);
        match policy.granularity {
            Granularity::PerParameter => {
                for i in layer.weights() {
                    mask.set(i, next());
                }
                if policy.mask_scope == MaskScope::WeightsAndBiases {
                    for i in layer.bias() {
                        mask.set(i, next());
                    }
                }
            }
            Granularity::PerSourceNeuron => {
                for col in 0..layer.shape.in_dim {
                    let m = next();
                    for i in layer.neuron_segment(col) {
                        mask.set(i, m);
                    }
                }
                if policy.mask_scope == MaskScope::WeightsAndBiases && layer.shape.bias_len > 0 {
                    let m = next();
                    for i in layer.bias() {
                        mask.set(i, m);
                    }
                }
            }
        }
    }
    Ok(mask)
}

fn layer_units(policy: &MixPolicy, layer: &LayerLayout) -> Vec<Vec<usize>> {
    let with_bias = policy.mask_scope == MaskScope::WeightsAndBiases;
    match policy.granularity {
        Granularity::PerParameter => {
            let mut units: Vec<Vec<usize>> = layer.weights().map(|i| vec![i]).collect();
            if with_bias {
                units.extend(layer.bias().map(|i| vec![i]));
            }
            units
        }
        Granularity::PerSourceNeuron => {
            let mut units: Vec<Vec<usize>> = (0..layer.shape.in_dim)
                .map(|c| layer.neuron_segment(c).collect())
                .filter(|u: &Vec<usize>| !u.is_empty())
                .collect();
            if with_bias && layer.shape.bias_len > 0 {
                units.push(layer.bias().collect());
            }
            units
        }
    }
}

/// Index groups that share one mask draw, in sampling order.
pub fn mask_units(policy: &MixPolicy, layout: &ParamLayout) -> Vec<Vec<usize>> {
    layout
        .layers()
        .iter()
        .filter(|l| policy.is_masked_layer(l.id))
        .flat_map(|l| layer_units(policy, l))
        .collect()
}

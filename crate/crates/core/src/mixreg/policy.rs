use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::math::{ParamLayout, ParamVector};

/// Law of a single mask draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskDistribution {
    /// Keep with probability `1 - p`, drop (mask 0) with probability `p`.
    Bernoulli { p: f64 },
    /// Any law with the given moments; sampled as a Gaussian.
    General { mean: f64, variance: f64 },
}

impl MaskDistribution {
    pub fn bernoulli(p: f64) -> Result<Self> {
        let d = MaskDistribution::Bernoulli { p };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MaskDistribution::Bernoulli { p } if !(0.0..1.0).contains(&p) => Err(Error::config(
                format!("drop probability {p} outside [0, 1)"),
            )),
            MaskDistribution::General { mean, variance }
                if !(mean > 0.0 && mean.is_finite())
                    || !(variance >= 0.0 && variance.is_finite()) =>
            {
                Err(Error::config(format!(
                    "mask law needs mean > 0 and variance >= 0, got ({mean}, {variance})"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            MaskDistribution::Bernoulli { p } => 1.0 - p,
            MaskDistribution::General { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            MaskDistribution::Bernoulli { p } => p * (1.0 - p),
            MaskDistribution::General { variance, .. } => variance,
        }
    }

    /// `sigma^2 / mu^2`, the strength of the induced penalty. Equals `p / (1 - p)`
    /// for Bernoulli masks.
    pub fn penalty_ratio(&self) -> f64 {
        match *self {
            MaskDistribution::Bernoulli { p } => p / (1.0 - p),
            MaskDistribution::General { mean, variance } => variance / (mean * mean),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    /// Independent draw per parameter (mixconnect / dropconnect).
    PerParameter,
    /// One draw per source neuron, shared by all its outgoing weights (mixout / dropout).
    PerSourceNeuron,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskScope {
    WeightsOnly,
    WeightsAndBiases,
}

/// Target parameter that dropped entries are replaced by.
#[derive(Debug, Clone, PartialEq)]
pub enum Anchor {
    Origin,
    PretrainedSnapshot(ParamVector),
    InitSnapshot(ParamVector),
    Explicit(ParamVector),
}

impl Anchor {
    pub fn vector(&self, layout: &std::sync::Arc<ParamLayout>) -> Result<ParamVector> {
        match self {
            Anchor::Origin => Ok(ParamVector::zeros(layout.clone())),
            Anchor::PretrainedSnapshot(v) | Anchor::InitSnapshot(v) | Anchor::Explicit(v) => {
                if v.layout().as_ref() != layout.as_ref() {
                    return Err(Error::Dimension {
                        expected: layout.total_len(),
                        got: v.len(),
                    });
                }
                Ok(v.clone())
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Anchor::Origin => "origin",
            Anchor::PretrainedSnapshot(_) => "pretrained",
            Anchor::InitSnapshot(_) => "init",
            Anchor::Explicit(_) => "explicit",
        }
    }
}

/// Weight decay toward an anchor: adds `(lambda / 2) * ||w - anchor||^2` over weight entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Decay {
    pub anchor: Anchor,
    pub lambda: f64,
}

/// Full regularizer configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MixPolicy {
    pub granularity: Granularity,
    pub distribution: MaskDistribution,
    pub anchor: Anchor,
    /// Per-layer anchor overrides, e.g. a freshly initialized head anchored to its own init.
    pub layer_anchors: BTreeMap<usize, Anchor>,
    /// Layers whose mask is fixed to 1 (no mixing).
    pub excluded_layers: BTreeSet<usize>,
    pub mask_scope: MaskScope,
    pub decay: Option<Decay>,
}

impl MixPolicy {
    /// No mixing and no decay.
    pub fn none() -> Self {
        Self {
            granularity: Granularity::PerSourceNeuron,
            distribution: MaskDistribution::Bernoulli { p: 0.0 },
            anchor: Anchor::Origin,
            layer_anchors: BTreeMap::new(),
            excluded_layers: BTreeSet::new(),
            mask_scope: MaskScope::WeightsOnly,
            decay: None,
        }
    }

    /// Inverted dropout with drop probability `p`: mixout toward the origin.
    pub fn dropout(p: f64) -> Result<Self> {
        Ok(Self {
            distribution: MaskDistribution::bernoulli(p)?,
            ..Self::none()
        })
    }

    /// Inverted dropconnect with drop probability `p`.
    pub fn dropconnect(p: f64) -> Result<Self> {
        Ok(Self {
            granularity: Granularity::PerParameter,
            ..Self::dropout(p)?
        })
    }

    /// Mixout toward a frozen copy of `anchor`.
    pub fn mixout(anchor: Anchor, p: f64) -> Result<Self> {
        Ok(Self {
            anchor,
            ..Self::dropout(p)?
        })
    }

    pub fn mixconnect(anchor: Anchor, distribution: MaskDistribution) -> Result<Self> {
        distribution.validate()?;
        Ok(Self {
            granularity: Granularity::PerParameter,
            distribution,
            anchor,
            ..Self::none()
        })
    }

    pub fn excluding(mut self, layers: impl IntoIterator<Item = usize>) -> Self {
        self.excluded_layers.extend(layers);
        self
    }

    pub fn with_decay(mut self, anchor: Anchor, lambda: f64) -> Self {
        self.decay = Some(Decay { anchor, lambda });
        self
    }

    pub fn with_layer_anchor(mut self, layer: usize, anchor: Anchor) -> Self {
        self.layer_anchors.insert(layer, anchor);
        self
    }

    pub fn with_scope(mut self, scope: MaskScope) -> Self {
        self.mask_scope = scope;
        self
    }

    pub fn validate(&self, layout: &std::sync::Arc<ParamLayout>) -> Result<()> {
        self.distribution.validate()?;
        let n = layout.num_layers();
        if let Some(&bad) = self
            .excluded_layers
            .iter()
            .chain(self.layer_anchors.keys())
            .find(|&&id| id >= n)
        {
            return Err(Error::config(format!(
                "layer {bad} not in layout with {n} layers"
            )));
        }
        self.anchor.vector(layout)?;
        for a in self.layer_anchors.values() {
            a.vector(layout)?;
        }
        if let Some(decay) = &self.decay {
            if !(decay.lambda >= 0.0 && decay.lambda.is_finite()) {
                return Err(Error::config(format!(
                    "decay coefficient {} must be >= 0",
                    decay.lambda
                )));
            }
            decay.anchor.vector(layout)?;
        }
        Ok(())
    }

    /// The anchor vector `u`, with per-layer overrides spliced in.
    pub fn anchor_vector(&self, layout: &std::sync::Arc<ParamLayout>) -> Result<ParamVector> {
        let mut u = self.anchor.vector(layout)?;
        for (&layer, anchor) in &self.layer_anchors {
            u.splice_layer(&anchor.vector(layout)?, layer)?;
        }
        Ok(u)
    }

    pub fn is_masked_layer(&self, layer: usize) -> bool {
        !self.excluded_layers.contains(&layer)
    }
}

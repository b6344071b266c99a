//! Dense feed-forward networks with a hand-written backward pass.
//!
//! Each hidden layer computes `affine -> activation -> optional layer norm`;
//! the output layer is affine and feeds either a softmax cross-entropy head or
//! a squared-error head. The loss is the mean of per-example losses.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{LayerShape, ParamCategory, ParamLayout, ParamVector};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub width: usize,
    pub activation: Activation,
    pub layer_norm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Head {
    SoftmaxXent {
        classes: usize,
    },
    /// Per-example loss `0.5 * ||y_hat - y||^2`.
    Mse {
        outputs: usize,
    },
}

impl Head {
    pub fn output_dim(&self) -> usize {
        match *self {
            Head::SoftmaxXent { classes } => classes,
            Head::Mse { outputs } => outputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<HiddenLayer>,
    pub head: Head,
}

impl NetworkSpec {
    /// ReLU hidden layers with layer norm after the activation.
    pub fn mlp(input_dim: usize, widths: &[usize], classes: usize) -> Self {
        Self {
            input_dim,
            hidden: widths
                .iter()
                .map(|&width| HiddenLayer {
                    width,
                    activation: Activation::Relu,
                    layer_norm: true,
                })
                .collect(),
            head: Head::SoftmaxXent { classes },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.head.output_dim() == 0 {
            return Err(Error::config("input and output widths must be >= 1"));
        }
        if self.hidden.iter().any(|h| h.width == 0) {
            return Err(Error::config("hidden widths must be >= 1"));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn output_layer(&self) -> usize {
        self.hidden.len()
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.num_layers());
        let mut in_dim = self.input_dim;
        for h in &self.hidden {
            shapes.push(LayerShape {
                norm_len: if h.layer_norm { 2 * h.width } else { 0 },
                ..LayerShape::dense(in_dim, h.width)
            });
            in_dim = h.width;
        }
        shapes.push(LayerShape::dense(in_dim, self.head.output_dim()));
        shapes
    }

    pub fn layout(&self) -> Arc<ParamLayout> {
        Arc::new(ParamLayout::new(&self.shapes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    /// Row-major `n x outputs`.
    Values(Vec<f64>),
}

/// Dense row-major batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    dim: usize,
    targets: Targets,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, dim: usize, targets: Targets) -> Result<Self> {
        if dim == 0 || inputs.is_empty() || !inputs.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: inputs.len(),
            });
        }
        let n = inputs.len() / dim;
        let target_rows = match &targets {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => {
                if v.len() % n != 0 {
                    return Err(Error::Dimension {
                        expected: n,
                        got: v.len(),
                    });
                }
                n
            }
        };
        if target_rows != n {
            return Err(Error::Dimension {
                expected: n,
                got: target_rows,
            });
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("batch inputs"));
        }
        Ok(Self {
            inputs,
            dim,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        if self.dim != spec.input_dim {
            return Err(Error::Dimension {
                expected: spec.input_dim,
                got: self.dim,
            });
        }
        match (&self.targets, spec.head) {
            (Targets::Classes(c), Head::SoftmaxXent { classes }) => {
                if let Some(&bad) = c.iter().find(|&&c| c >= classes) {
                    return Err(Error::Consistency(format!(
                        "label {bad} out of range for {classes} classes"
                    )));
                }
                Ok(())
            }
            (Targets::Values(v), Head::Mse { outputs }) => {
                if v.len() != self.len() * outputs {
                    return Err(Error::Dimension {
                        expected: self.len() * outputs,
                        got: v.len(),
                    });
                }
                Ok(())
            }
            _ => Err(Error::Consistency(
                "targets do not match the network head".into(),
            )),
        }
    }
}

/// Fresh parameters: weights `N(0, 0.02^2)`, biases 0, norm gains 1 and shifts 0.
pub fn init_params<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> ParamVector {
    init_params_with_std(spec, INIT_STD, rng)
}

pub fn init_params_with_std<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    std: f64,
    rng: &mut R,
) -> ParamVector {
    let layout = spec.layout();
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut values = vec![0.0; layout.total_len()];
    for layer in layout.layers() {
        for i in layer.weights() {
            values[i] = normal.sample(rng);
        }
        let norm = layer.norm();
        let half = norm.start + layer.shape.norm_len / 2;
        values[norm.start..half].iter_mut().for_each(|g| *g = 1.0);
    }
    ParamVector::from_values(layout, values).expect("finite init")
}

/// Every entry (weights, biases, gains, shifts) drawn from `N(0, std^2)`.
///
/// Zero biases put exactly-zero pre-activations on the ReLU kink whenever a
/// whole input row is dead, so gradient checks use this instead of [`init_params`].
pub fn random_params<R: Rng + ?Sized>(spec: &NetworkSpec, std: f64, rng: &mut R) -> ParamVector {
    let layout = spec.layout();
    let normal = Normal::new(0.0, std).expect("finite std");
    let values = (0..layout.total_len())
        .map(|_| normal.sample(rng))
        .collect();
    ParamVector::from_values(layout, values).expect("finite draw")
}

/// Re-draws the weights and zeroes the biases of one layer (a fresh head).
pub fn reinit_layer<R: Rng + ?Sized>(w: &mut ParamVector, layer: usize, rng: &mut R) -> Result<()> {
    let layout = w.layout().clone();
    let l = layout.layer(layer)?;
    let normal = Normal::new(0.0, INIT_STD).expect("finite std");
    let values = w.values_mut();
    for i in l.weights() {
        values[i] = normal.sample(rng);
    }
    values[l.bias()].iter_mut().for_each(|b| *b = 0.0);
    Ok(())
}

/// Per-layer scaling of a layer's input columns; used for activation-level dropout.
pub type InputScales = [Option<Vec<f64>>];

struct LayerCache {
    /// Input to the layer after any input scaling, `n x in`.
    input: Vec<f64>,
    /// Pre-activation, `n x out`.
    pre: Vec<f64>,
    /// Normalized activations and per-row inverse std (layer norm only).
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

struct ForwardPass {
    caches: Vec<LayerCache>,
    output: Vec<f64>,
}

fn check_params(spec: &NetworkSpec, w: &ParamVector) -> Result<()> {
    spec.validate()?;
    let shapes = spec.shapes();
    let layers = w.layout().layers();
    if layers.len() != shapes.len() || layers.iter().zip(&shapes).any(|(l, s)| l.shape != *s) {
        return Err(Error::Dimension {
            expected: ParamLayout::new(&shapes).total_len(),
            got: w.len(),
        });
    }
    Ok(())
}

fn run_forward(
    spec: &NetworkSpec,
    w: &[f64],
    layout: &ParamLayout,
    inputs: &[f64],
    n: usize,
    scales: Option<&InputScales>,
    keep_cache: bool,
) -> Result<ForwardPass> {
    let mut caches = Vec::new();
    let mut act = inputs.to_vec();
    for layer in layout.layers() {
        let (in_dim, out_dim) = (layer.shape.in_dim, layer.shape.out_dim);
        if let Some(Some(s)) = scales.and_then(|s| s.get(layer.id)) {
            for row in act.chunks_exact_mut(in_dim) {
                for (a, f) in row.iter_mut().zip(s) {
                    *a *= f;
                }
            }
        }
        let weights = &w[layer.weights()];
        let bias = &w[layer.bias()];
        let mut pre = vec![0.0; n * out_dim];
        for (a_row, z_row) in act.chunks_exact(in_dim).zip(pre.chunks_exact_mut(out_dim)) {
            for (o, z) in z_row.iter_mut().enumerate() {
                let w_row = &weights[o * in_dim..(o + 1) * in_dim];
                let dot: f64 = w_row.iter().zip(a_row).map(|(x, y)| x * y).sum();
                *z = bias[o] + dot;
            }
        }
        if pre.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "pre-activation of layer {}",
                layer.id
            )));
        }
        let mut out = pre.clone();
        let mut xhat = Vec::new();
        let mut inv_std = Vec::new();
        if let Some(h) = spec.hidden.get(layer.id) {
            if h.activation == Activation::Relu {
                out.iter_mut()
                    .for_each(|v| *v = if *v > 0.0 { *v } else { 0.0 });
            }
            if h.layer_norm {
                let norm = &w[layer.norm()];
                let (gain, shift) = norm.split_at(out_dim);
                xhat = vec![0.0; n * out_dim];
                inv_std = vec![0.0; n];
                for (r, row) in out.chunks_exact_mut(out_dim).enumerate() {
                    let mean = row.iter().sum::<f64>() / out_dim as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / out_dim as f64;
                    let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    inv_std[r] = is;
                    for (c, v) in row.iter_mut().enumerate() {
                        let x = (*v - mean) * is;
                        xhat[r * out_dim + c] = x;
                        *v = gain[c] * x + shift[c];
                    }
                }
            }
        }
        if keep_cache {
            caches.push(LayerCache {
                input: std::mem::take(&mut act),
                pre,
                xhat,
                inv_std,
            });
        }
        act = out;
    }
    Ok(ForwardPass {
        caches,
        output: act,
    })
}

fn softmax_rows(logits: &mut [f64], classes: usize) {
    for row in logits.chunks_exact_mut(classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Network outputs, `n x out_dim`. Softmax heads return probabilities.
pub fn forward(spec: &NetworkSpec, w: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
    forward_inputs(spec, w, batch.inputs(), batch.len())
}

pub fn forward_inputs(
    spec: &NetworkSpec,
    w: &ParamVector,
    inputs: &[f64],
    n: usize,
) -> Result<Vec<f64>> {
    check_params(spec, w)?;
    if inputs.len() != n * spec.input_dim {
        return Err(Error::Dimension {
            expected: n * spec.input_dim,
            got: inputs.len(),
        });
    }
    let mut out = run_forward(spec, w.values(), w.layout(), inputs, n, None, false)?.output;
    if let Head::SoftmaxXent { classes } = spec.head {
        softmax_rows(&mut out, classes);
    }
    Ok(out)
}

/// Mean loss over the batch and its exact gradient.
pub fn loss_and_grad(
    spec: &NetworkSpec,
    w: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    let (loss, grad) = loss_and_grad_raw(spec, w, batch, None)?;
    Ok((loss, w.with_values(grad)?))
}

pub fn loss(spec: &NetworkSpec, w: &ParamVector, batch: &Batch) -> Result<f64> {
    check_params(spec, w)?;
    batch.check_against(spec)?;
    let pass = run_forward(
        spec,
        w.values(),
        w.layout(),
        batch.inputs(),
        batch.len(),
        None,
        false,
    )?;
    let (loss, _) = head_loss(spec, &pass.output, batch);
    Ok(loss)
}

fn head_loss(spec: &NetworkSpec, output: &[f64], batch: &Batch) -> (f64, Vec<f64>) {
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let out_dim = spec.head.output_dim();
    let mut d_out = vec![0.0; output.len()];
    let mut total = 0.0;
    match (spec.head, batch.targets()) {
        (Head::SoftmaxXent { .. }, Targets::Classes(labels)) => {
            for ((row, d_row), &y) in output
                .chunks_exact(out_dim)
                .zip(d_out.chunks_exact_mut(out_dim))
                .zip(labels)
            {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let log_z = max + sum.ln();
                total += log_z - row[y];
                for (d, v) in d_row.iter_mut().zip(row) {
                    *d = (v - log_z).exp() * inv_n;
                }
                d_row[y] -= inv_n;
            }
        }
        (Head::Mse { .. }, Targets::Values(t)) => {
            for ((o, d), y) in output.iter().zip(d_out.iter_mut()).zip(t) {
                let e = o - y;
                total += 0.5 * e * e;
                *d = e * inv_n;
            }
        }
        _ => unreachable!("checked by Batch::check_against"),
    }
    (total * inv_n, d_out)
}

/// Loss and flat gradient, optionally with per-layer input scaling.
pub fn loss_and_grad_raw(
    spec: &NetworkSpec,
    w: &ParamVector,
    batch: &Batch,
    scales: Option<&InputScales>,
) -> Result<(f64, Vec<f64>)> {
    check_params(spec, w)?;
    batch.check_against(spec)?;
    let layout = w.layout();
    let values = w.values();
    let n = batch.len();
    let pass = run_forward(spec, values, layout, batch.inputs(), n, scales, true)?;
    let (loss, mut delta) = head_loss(spec, &pass.output, batch);
    if !loss.is_finite() {
        return Err(Error::numeric("loss"));
    }

    let mut grad = vec![0.0; values.len()];
    for layer in layout.layers().iter().rev() {
        let cache = &pass.caches[layer.id];
        let (in_dim, out_dim) = (layer.shape.in_dim, layer.shape.out_dim);

        // `delta` holds dL/d(layer output); turn it into dL/d(pre-activation).
        if let Some(h) = spec.hidden.get(layer.id) {
            if h.layer_norm {
                let norm_range = layer.norm();
                let gain = &values[norm_range.start..norm_range.start + out_dim];
                let (g_gain, g_shift) = grad[norm_range].split_at_mut(out_dim);
                let inv_d = 1.0 / out_dim as f64;
                for (r, d_row) in delta.chunks_exact_mut(out_dim).enumerate() {
                    let xh = &cache.xhat[r * out_dim..(r + 1) * out_dim];
                    let mut mean_dx = 0.0;
                    let mut mean_dx_x = 0.0;
                    for c in 0..out_dim {
                        g_gain[c] += d_row[c] * xh[c];
                        g_shift[c] += d_row[c];
                        let dx = d_row[c] * gain[c];
                        mean_dx += dx;
                        mean_dx_x += dx * xh[c];
                    }
                    mean_dx *= inv_d;
                    mean_dx_x *= inv_d;
                    let is = cache.inv_std[r];
                    for c in 0..out_dim {
                        let dx = d_row[c] * gain[c];
                        d_row[c] = is * (dx - mean_dx - xh[c] * mean_dx_x);
                    }
                }
            }
            if h.activation == Activation::Relu {
                for (d, &z) in delta.iter_mut().zip(&cache.pre) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
        }

        let weights = &values[layer.weights()];
        let w_range = layer.weights();
        let b_range = layer.bias();
        {
            let g_w = &mut grad[w_range];
            for (d_row, a_row) in delta
                .chunks_exact(out_dim)
                .zip(cache.input.chunks_exact(in_dim))
            {
                for (o, &d) in d_row.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let g_row = &mut g_w[o * in_dim..(o + 1) * in_dim];
                    for (g, a) in g_row.iter_mut().zip(a_row) {
                        *g += d * a;
                    }
                }
            }
        }
        {
            let g_b = &mut grad[b_range];
            for d_row in delta.chunks_exact(out_dim) {
                for (g, d) in g_b.iter_mut().zip(d_row) {
                    *g += d;
                }
            }
        }
        if layer.id == 0 {
            break;
        }
        let mut d_in = vec![0.0; n * in_dim];
        for (d_row, di_row) in delta
            .chunks_exact(out_dim)
            .zip(d_in.chunks_exact_mut(in_dim))
        {
            for (o, &d) in d_row.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let w_row = &weights[o * in_dim..(o + 1) * in_dim];
                for (x, wv) in di_row.iter_mut().zip(w_row) {
                    *x += d * wv;
                }
            }
        }
        if let Some(Some(s)) = scales.and_then(|s| s.get(layer.id)) {
            for row in d_in.chunks_exact_mut(in_dim) {
                for (x, f) in row.iter_mut().zip(s) {
                    *x *= f;
                }
            }
        }
        delta = d_in;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("gradient"));
    }
    Ok((loss, grad))
}

/// Index of the largest output per row.
pub fn predict(
    spec: &NetworkSpec,
    w: &ParamVector,
    inputs: &[f64],
    n: usize,
) -> Result<Vec<usize>> {
    let out_dim = spec.head.output_dim();
    let mut preds = Vec::with_capacity(n);
    const CHUNK: usize = 512;
    let d = spec.input_dim;
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        check_params(spec, w)?;
        let out = run_forward(
            spec,
            w.values(),
            w.layout(),
            &inputs[start * d..end * d],
            end - start,
            None,
            false,
        )?
        .output;
        preds.extend(out.chunks_exact(out_dim).map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        }));
    }
    Ok(preds)
}

pub fn accuracy(
    spec: &NetworkSpec,
    w: &ParamVector,
    inputs: &[f64],
    labels: &[usize],
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::config("accuracy on an empty split"));
    }
    let preds = predict(spec, w, inputs, labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Denominator floor for the relative error used by gradient checks.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Coordinates to probe: a few from every (layer, category) pair, then random
/// fill up to `count` (or every coordinate if there are fewer).
pub fn grad_check_coordinates<R: Rng + ?Sized>(
    layout: &ParamLayout,
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    let total = layout.total_len();
    if total <= count {
        return (0..total).collect();
    }
    let mut picked = std::collections::BTreeSet::new();
    for layer in layout.layers() {
        for range in [layer.weights(), layer.bias(), layer.norm()] {
            if range.is_empty() {
                continue;
            }
            let len = range.len();
            for k in sample(rng, len, len.min(4)) {
                picked.insert(range.start + k);
            }
        }
    }
    while picked.len() < count {
        picked.insert(rng.random_range(0..total));
    }
    picked.into_iter().collect()
}

/// Max relative error of `analytic` against central differences of the loss.
pub fn compare_gradient(
    spec: &NetworkSpec,
    w: &ParamVector,
    batch: &Batch,
    analytic: &[f64],
    coords: &[usize],
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::config("finite-difference step must be > 0"));
    }
    let mut worst: f64 = 0.0;
    let mut probe = w.clone();
    for &i in coords {
        let orig = w.values()[i];
        probe.values_mut()[i] = orig + h;
        let lp = loss(spec, &probe, batch)?;
        probe.values_mut()[i] = orig - h;
        let lm = loss(spec, &probe, batch)?;
        probe.values_mut()[i] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Max relative error of the analytic gradient over at least 200 sampled coordinates.
pub fn grad_check<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    w: &ParamVector,
    batch: &Batch,
    h: f64,
    rng: &mut R,
) -> Result<f64> {
    let (_, grad) = loss_and_grad(spec, w, batch)?;
    let coords = grad_check_coordinates(w.layout(), 200, rng);
    compare_gradient(spec, w, batch, grad.values(), &coords, h)
}

/// Categories covered by a coordinate set; for diagnostics in tests.
pub fn covered_categories(layout: &ParamLayout, coords: &[usize]) -> Vec<(usize, ParamCategory)> {
    let mut out: Vec<_> = coords
        .iter()
        .filter_map(|&i| layout.locate(i).ok())
        .collect();
    out.sort_by_key(|&(l, c)| (l, c as u8));
    out.dedup();
    out
}

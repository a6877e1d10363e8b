//! Classification models over flat parameter vectors.
//!
//! Two model families are provided: plain softmax regression
//! (`hidden_dim == 0`) and a one-hidden-layer ReLU network. Both are
//! differentiated by hand and operate on `f64` throughout, so identical
//! inputs produce bitwise-identical losses and gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Shape and regularization of a classification model.
///
/// `hidden_dim == 0` selects softmax regression; anything larger inserts one
/// ReLU hidden layer of that width. `weight_decay` is the coupled-L2
/// coefficient applied to weight matrices (never to biases) inside the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub hidden_dim: usize,
    #[serde(default)]
    pub weight_decay: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.input_dim < 1 {
            bad.push(format!(
                "model.input_dim: must be >= 1, got {}",
                self.input_dim
            ));
        }
        if self.num_classes < 2 {
            bad.push(format!(
                "model.num_classes: must be >= 2, got {}",
                self.num_classes
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            bad.push(format!(
                "model.weight_decay: must be finite and >= 0, got {}",
                self.weight_decay
            ));
        }
        Error::check_config(bad)
    }

    /// Ordered segments of the flat parameter vector for this spec.
    pub fn layout(&self) -> ParamLayout {
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push =
            |name: &'static str, len: usize, is_bias: bool, fan_in: usize, fan_out: usize| {
                segments.push(Segment {
                    name,
                    offset,
                    len,
                    is_bias,
                    fan_in,
                    fan_out,
                });
                offset += len;
            };
        if self.hidden_dim == 0 {
            push(
                "w",
                self.input_dim * self.num_classes,
                false,
                self.input_dim,
                self.num_classes,
            );
            push(
                "b",
                self.num_classes,
                true,
                self.input_dim,
                self.num_classes,
            );
        } else {
            push(
                "w1",
                self.input_dim * self.hidden_dim,
                false,
                self.input_dim,
                self.hidden_dim,
            );
            push("b1", self.hidden_dim, true, self.input_dim, self.hidden_dim);
            push(
                "w2",
                self.hidden_dim * self.num_classes,
                false,
                self.hidden_dim,
                self.num_classes,
            );
            push(
                "b2",
                self.num_classes,
                true,
                self.hidden_dim,
                self.num_classes,
            );
        }
        ParamLayout {
            segments,
            total: offset,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().total
    }
}

/// One named (weights or bias) segment of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
    pub is_bias: bool,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Flat model parameter vector; layout is given by the owning `ModelSpec`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self -= scale * delta`.
    pub fn step(&mut self, scale: f64, delta: &WeightDelta) {
        debug_assert_eq!(self.values.len(), delta.values.len());
        for (w, d) in self.values.iter_mut().zip(&delta.values) {
            *w -= scale * d;
        }
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ModelParams) -> WeightDelta {
        debug_assert_eq!(self.values.len(), other.values.len());
        WeightDelta {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// A parameter update with the same layout as the `ModelParams` it applies to.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDelta {
    pub values: Vec<f64>,
}

impl WeightDelta {
    pub fn zeros(len: usize) -> Self {
        WeightDelta {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    /// `self += scale * other`.
    pub fn scaled_add(&mut self, scale: f64, other: &WeightDelta) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A minibatch of examples, row-major features plus integer labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
    pub input_dim: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate_for(&self, spec: &ModelSpec) -> Result<()> {
        if self.input_dim != spec.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "batch input_dim {} does not match model input_dim {}",
                self.input_dim, spec.input_dim
            )));
        }
        if self.is_empty() {
            return Err(Error::InvalidData(
                "batch must contain at least one example".into(),
            ));
        }
        if self.features.len() != self.labels.len() * self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "batch has {} feature values for {} examples of dim {}",
                self.features.len(),
                self.labels.len(),
                self.input_dim
            )));
        }
        if let Some(&l) = self
            .labels
            .iter()
            .find(|&&l| l as usize >= spec.num_classes)
        {
            return Err(Error::InvalidData(format!(
                "label {} out of range for {} classes",
                l, spec.num_classes
            )));
        }
        Ok(())
    }
}

fn check_params(spec: &ModelSpec, params: &ModelParams) -> Result<()> {
    let expected = spec.num_params();
    if params.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "parameter vector has length {}, model expects {}",
            params.len(),
            expected
        )));
    }
    Ok(())
}

/// Draws initial parameters: weights uniform in `[-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))` per layer, biases zero.
/// Deterministic for a given `(spec, seed)`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let layout = spec.layout();
    let mut values = vec![0.0; layout.total()];
    let mut stream = rng::stream(seed);
    for seg in layout.segments() {
        if seg.is_bias {
            continue;
        }
        let bound = (6.0 / (seg.fan_in + seg.fan_out) as f64).sqrt();
        for v in &mut values[seg.offset..seg.offset + seg.len] {
            *v = stream.random_range(-bound..bound);
        }
    }
    Ok(ModelParams { values })
}

/// Per-example forward pass results kept around for the backward pass.
struct Forward {
    logits: Vec<f64>,     // n x num_classes
    hidden_pre: Vec<f64>, // n x hidden_dim (empty for linear models)
    hidden: Vec<f64>,     // n x hidden_dim (empty for linear models)
}

fn forward(spec: &ModelSpec, params: &ModelParams, features: &[f64], n: usize) -> Forward {
    let d = spec.input_dim;
    let k = spec.num_classes;
    let p = &params.values;
    if spec.hidden_dim == 0 {
        let (w, b) = (&p[..d * k], &p[d * k..]);
        let mut logits = vec![0.0; n * k];
        for row in 0..n {
            let x = &features[row * d..(row + 1) * d];
            let out = &mut logits[row * k..(row + 1) * k];
            out.copy_from_slice(b);
            for (i, &xi) in x.iter().enumerate() {
                let wrow = &w[i * k..(i + 1) * k];
                for (o, &wv) in out.iter_mut().zip(wrow) {
                    *o += xi * wv;
                }
            }
        }
        Forward {
            logits,
            hidden_pre: Vec::new(),
            hidden: Vec::new(),
        }
    } else {
        let h = spec.hidden_dim;
        let layout = spec.layout();
        let seg = |name: &str| {
            let s = layout.segments().iter().find(|s| s.name == name).unwrap();
            &p[s.offset..s.offset + s.len]
        };
        let (w1, b1, w2, b2) = (seg("w1"), seg("b1"), seg("w2"), seg("b2"));
        let mut hidden_pre = vec![0.0; n * h];
        let mut hidden = vec![0.0; n * h];
        let mut logits = vec![0.0; n * k];
        for row in 0..n {
            let x = &features[row * d..(row + 1) * d];
            let pre = &mut hidden_pre[row * h..(row + 1) * h];
            pre.copy_from_slice(b1);
            for (i, &xi) in x.iter().enumerate() {
                let wrow = &w1[i * h..(i + 1) * h];
                for (o, &wv) in pre.iter_mut().zip(wrow) {
                    *o += xi * wv;
                }
            }
            let act = &mut hidden[row * h..(row + 1) * h];
            for (a, &v) in act.iter_mut().zip(pre.iter()) {
                *a = if v > 0.0 { v } else { 0.0 };
            }
            let out = &mut logits[row * k..(row + 1) * k];
            out.copy_from_slice(b2);
            for (j, &hj) in act.iter().enumerate() {
                let wrow = &w2[j * k..(j + 1) * k];
                for (o, &wv) in out.iter_mut().zip(wrow) {
                    *o += hj * wv;
                }
            }
        }
        Forward {
            logits,
            hidden_pre,
            hidden,
        }
    }
}

/// Mean softmax cross-entropy over `logits`, and in-place conversion of
/// `logits` into d(loss)/d(logits). Uses the max-shifted log-sum-exp form.
fn softmax_loss_backward(logits: &mut [f64], labels: &[u8], k: usize) -> f64 {
    let n = labels.len();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    for (row, &label) in labels.iter().enumerate() {
        let l = &mut logits[row * k..(row + 1) * k];
        let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in l.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        loss += z.ln() - l[label as usize].ln();
        let inv_z = 1.0 / z;
        for (idx, v) in l.iter_mut().enumerate() {
            let p = *v * inv_z;
            *v = (p - if idx == label as usize { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    loss * inv_n
}

/// Loss and exact gradient on one batch.
///
/// Loss is mean cross-entropy plus `weight_decay/2 * ||weights||^2`, with the
/// decay taken over weight matrices only.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &Batch,
) -> Result<(f64, WeightDelta)> {
    spec.validate()?;
    check_params(spec, params)?;
    batch.validate_for(spec)?;

    let n = batch.len();
    let d = spec.input_dim;
    let k = spec.num_classes;
    let lambda = spec.weight_decay;
    let p = &params.values;
    let mut grad = vec![0.0; p.len()];

    let mut fwd = forward(spec, params, &batch.features, n);
    let mut loss = softmax_loss_backward(&mut fwd.logits, &batch.labels, k);
    let dlogits = &fwd.logits;

    if spec.hidden_dim == 0 {
        let w_len = d * k;
        let (gw, gb) = grad.split_at_mut(w_len);
        for row in 0..n {
            let x = &batch.features[row * d..(row + 1) * d];
            let dl = &dlogits[row * k..(row + 1) * k];
            for (i, &xi) in x.iter().enumerate() {
                let grow = &mut gw[i * k..(i + 1) * k];
                for (g, &dv) in grow.iter_mut().zip(dl) {
                    *g += xi * dv;
                }
            }
            for (g, &dv) in gb.iter_mut().zip(dl) {
                *g += dv;
            }
        }
        if lambda > 0.0 {
            let w = &p[..w_len];
            for (g, &wv) in gw.iter_mut().zip(w) {
                *g += lambda * wv;
            }
            loss += 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
        }
    } else {
        let h = spec.hidden_dim;
        let layout = spec.layout();
        let segs: Vec<_> = layout.segments().to_vec();
        let range = |name: &str| {
            let s = segs.iter().find(|s| s.name == name).unwrap();
            s.offset..s.offset + s.len
        };
        let (r_w1, r_b1, r_w2, r_b2) = (range("w1"), range("b1"), range("w2"), range("b2"));

        let mut dhidden_pre = vec![0.0; h];
        for row in 0..n {
            let x = &batch.features[row * d..(row + 1) * d];
            let act = &fwd.hidden[row * h..(row + 1) * h];
            let pre = &fwd.hidden_pre[row * h..(row + 1) * h];
            let dl = &dlogits[row * k..(row + 1) * k];

            // Second layer: gw2 += hidden^T dlogits, gb2 += dlogits.
            for (j, &hj) in act.iter().enumerate() {
                let grow = &mut grad[r_w2.start + j * k..r_w2.start + (j + 1) * k];
                for (g, &dv) in grow.iter_mut().zip(dl) {
                    *g += hj * dv;
                }
            }
            for (g, &dv) in grad[r_b2.clone()].iter_mut().zip(dl) {
                *g += dv;
            }

            // Backprop into the hidden layer through the ReLU.
            let w2 = &p[r_w2.clone()];
            for j in 0..h {
                let mut acc = 0.0;
                if pre[j] > 0.0 {
                    let wrow = &w2[j * k..(j + 1) * k];
                    for (&wv, &dv) in wrow.iter().zip(dl) {
                        acc += wv * dv;
                    }
                }
                dhidden_pre[j] = acc;
            }

            for (i, &xi) in x.iter().enumerate() {
                let grow = &mut grad[r_w1.start + i * h..r_w1.start + (i + 1) * h];
                for (g, &dv) in grow.iter_mut().zip(&dhidden_pre) {
                    *g += xi * dv;
                }
            }
            for (g, &dv) in grad[r_b1.clone()].iter_mut().zip(&dhidden_pre) {
                *g += dv;
            }
        }
        if lambda > 0.0 {
            for r in [r_w1, r_w2] {
                let w = &p[r.clone()];
                for (g, &wv) in grad[r.clone()].iter_mut().zip(w) {
                    *g += lambda * wv;
                }
                loss += 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
            }
        }
    }

    Ok((loss, WeightDelta { values: grad }))
}

/// Argmax with ties broken toward the lowest class index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (idx, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = idx;
        }
    }
    best
}

/// Accuracy and mean cross-entropy of `params` on a dataset.
///
/// The returned loss excludes the weight-decay term; it is a data metric,
/// not the training objective.
pub fn evaluate(spec: &ModelSpec, params: &ModelParams, dataset: &Dataset) -> Result<(f64, f64)> {
    spec.validate()?;
    check_params(spec, params)?;
    if dataset.is_empty() {
        return Err(Error::InvalidData(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    if dataset.input_dim() != spec.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "dataset input_dim {} does not match model input_dim {}",
            dataset.input_dim(),
            spec.input_dim
        )));
    }
    if dataset.num_classes() > spec.num_classes {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} classes, model outputs {}",
            dataset.num_classes(),
            spec.num_classes
        )));
    }

    let k = spec.num_classes;
    let n = dataset.len();
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    // Evaluate in chunks to bound the logits buffer on large test sets.
    const CHUNK: usize = 512;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let rows = end - start;
        let feats = dataset.feature_rows(start, end);
        let fwd = forward(spec, params, feats, rows);
        for row in 0..rows {
            let logits = &fwd.logits[row * k..(row + 1) * k];
            let label = dataset.label(start + row) as usize;
            if argmax(logits) == label {
                correct += 1;
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|&v| (v - m).exp()).sum();
            loss_sum += z.ln() + m - logits[label];
        }
        start = end;
    }
    Ok((correct as f64 / n as f64, loss_sum / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn linear_spec(d: usize, k: usize, lambda: f64) -> ModelSpec {
        ModelSpec {
            input_dim: d,
            num_classes: k,
            hidden_dim: 0,
            weight_decay: lambda,
        }
    }

    fn random_batch(spec: &ModelSpec, n: usize, seed: u64) -> Batch {
        let mut stream = rng::stream(seed);
        Batch {
            features: (0..n * spec.input_dim)
                .map(|_| stream.random_range(-1.0..1.0))
                .collect(),
            labels: (0..n)
                .map(|_| stream.random_range(0..spec.num_classes as u32) as u8)
                .collect(),
            input_dim: spec.input_dim,
        }
    }

    /// Central-difference gradient of the full loss; the independent oracle
    /// for hand-written backprop.
    fn numerical_grad(spec: &ModelSpec, params: &ModelParams, batch: &Batch, h: f64) -> Vec<f64> {
        let mut grad = vec![0.0; params.len()];
        let mut probe = params.clone();
        for (i, slot) in grad.iter_mut().enumerate() {
            let orig = probe.values[i];
            probe.values[i] = orig + h;
            let (up, _) = loss_and_grad(spec, &probe, batch).unwrap();
            probe.values[i] = orig - h;
            let (down, _) = loss_and_grad(spec, &probe, batch).unwrap();
            probe.values[i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        grad
    }

    #[test]
    fn init_is_deterministic() {
        let spec = linear_spec(6, 4, 0.0);
        let a = init_params(&spec, 7).unwrap();
        let b = init_params(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c = init_params(&spec, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn linear_layout_length() {
        let spec = linear_spec(4, 3, 0.0);
        assert_eq!(spec.num_params(), 4 * 3 + 3);
        assert_eq!(init_params(&spec, 0).unwrap().len(), 15);
    }

    #[test]
    fn mlp_layout_length() {
        let spec = ModelSpec {
            input_dim: 4,
            num_classes: 3,
            hidden_dim: 5,
            weight_decay: 0.0,
        };
        assert_eq!(spec.num_params(), 4 * 5 + 5 + 5 * 3 + 3);
    }

    #[test]
    fn init_biases_are_zero() {
        let spec = ModelSpec {
            input_dim: 3,
            num_classes: 4,
            hidden_dim: 2,
            weight_decay: 0.0,
        };
        let params = init_params(&spec, 11).unwrap();
        for seg in spec.layout().segments().iter().filter(|s| s.is_bias) {
            assert!(params.values[seg.offset..seg.offset + seg.len]
                .iter()
                .all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_mean_is_statistically_centered() {
        // 1000 x 100 weights = 1e5 draws from U[-a, a); sigma = a / sqrt(3).
        let spec = linear_spec(1000, 100, 0.0);
        let params = init_params(&spec, 123).unwrap();
        let w = &params.values[..1000 * 100];
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let bound = (6.0 / 1100.0_f64).sqrt();
        let sigma = bound / 3.0_f64.sqrt();
        assert!(
            mean.abs() < 3.0 * sigma / (w.len() as f64).sqrt(),
            "mean {mean} too far from 0"
        );
    }

    #[test]
    fn zero_params_give_log_k_loss() {
        let spec = linear_spec(5, 10, 0.0);
        let params = ModelParams {
            values: vec![0.0; spec.num_params()],
        };
        let batch = random_batch(&spec, 16, 3);
        let (loss, _) = loss_and_grad(&spec, &params, &batch).unwrap();
        assert!((loss - 10.0_f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn gradient_matches_central_differences_on_small_instance() {
        let spec = linear_spec(4, 3, 0.0);
        let params = init_params(&spec, 42).unwrap();
        let batch = random_batch(&spec, 6, 43);
        let (_, grad) = loss_and_grad(&spec, &params, &batch).unwrap();
        let numeric = numerical_grad(&spec, &params, &batch, 1e-5);
        let max_diff = grad
            .values
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-6, "max abs diff {max_diff}");
    }

    #[test]
    fn gradient_matches_central_differences_with_hidden_layer_and_decay() {
        let spec = ModelSpec {
            input_dim: 5,
            num_classes: 4,
            hidden_dim: 6,
            weight_decay: 0.01,
        };
        let params = init_params(&spec, 9).unwrap();
        let batch = random_batch(&spec, 8, 10);
        let (_, grad) = loss_and_grad(&spec, &params, &batch).unwrap();
        let numeric = numerical_grad(&spec, &params, &batch, 1e-5);
        for (a, n) in grad.values.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1.0);
            assert!(rel < 1e-5, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn weight_decay_skips_biases() {
        let spec = linear_spec(4, 3, 0.004);
        let spec_plain = linear_spec(4, 3, 0.0);
        let params = init_params(&spec, 5).unwrap();
        let batch = random_batch(&spec, 4, 6);
        let (_, with_decay) = loss_and_grad(&spec, &params, &batch).unwrap();
        let (_, without) = loss_and_grad(&spec_plain, &params, &batch).unwrap();
        let layout = spec.layout();
        for seg in layout.segments() {
            for i in seg.offset..seg.offset + seg.len {
                let contribution = with_decay.values[i] - without.values[i];
                if seg.is_bias {
                    assert_eq!(contribution, 0.0, "decay leaked into bias at {i}");
                } else {
                    let expected = 0.004 * params.values[i];
                    assert!((contribution - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cross_entropy_term_is_nonnegative() {
        for seed in 0..20 {
            let spec = linear_spec(3, 4, 0.0);
            let params = init_params(&spec, seed).unwrap();
            let batch = random_batch(&spec, 5, seed + 100);
            let (loss, _) = loss_and_grad(&spec, &params, &batch).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn loss_and_grad_is_bitwise_deterministic() {
        let spec = ModelSpec {
            input_dim: 7,
            num_classes: 5,
            hidden_dim: 4,
            weight_decay: 0.004,
        };
        let params = init_params(&spec, 21).unwrap();
        let batch = random_batch(&spec, 9, 22);
        let (l1, g1) = loss_and_grad(&spec, &params, &batch).unwrap();
        let (l2, g2) = loss_and_grad(&spec, &params, &batch).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }

    #[test]
    fn shifting_all_logits_leaves_loss_unchanged() {
        // Adding a constant to every bias shifts each example's logits by
        // that constant; softmax losses must not move.
        let spec = linear_spec(4, 3, 0.0);
        let mut params = init_params(&spec, 31).unwrap();
        let batch = random_batch(&spec, 1, 32);
        let (before, _) = loss_and_grad(&spec, &params, &batch).unwrap();
        let bias_seg = spec.layout().segments()[1].clone();
        for v in &mut params.values[bias_seg.offset..bias_seg.offset + bias_seg.len] {
            *v += 17.25;
        }
        let (after, _) = loss_and_grad(&spec, &params, &batch).unwrap();
        assert!((before - after).abs() < 1e-12, "{before} vs {after}");
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let spec = linear_spec(4, 3, 0.0);
        let params = init_params(&spec, 1).unwrap();
        let mut batch = random_batch(&spec, 2, 2);
        batch.input_dim = 5;
        assert!(loss_and_grad(&spec, &params, &batch).is_err());

        let short = ModelParams {
            values: vec![0.0; 3],
        };
        let ok_batch = random_batch(&spec, 2, 2);
        assert!(loss_and_grad(&spec, &short, &ok_batch).is_err());
    }

    fn tiny_dataset(features: Vec<f64>, labels: Vec<u8>, d: usize, k: usize) -> Dataset {
        Dataset::new(features, labels, d, k, Split::Test).unwrap()
    }

    #[test]
    fn evaluate_degenerate_predictor() {
        // Bias strongly favors class 0; dataset is all label 0.
        let spec = linear_spec(2, 3, 0.0);
        let mut params = ModelParams {
            values: vec![0.0; spec.num_params()],
        };
        params.values[2 * 3] = 50.0; // first bias entry
        let data = tiny_dataset(vec![0.5; 8], vec![0; 4], 2, 3);
        let (acc, _) = evaluate(&spec, &params, &data).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn evaluate_uniform_logits_scores_chance_on_balanced_data() {
        let spec = linear_spec(2, 10, 0.0);
        let params = ModelParams {
            values: vec![0.0; spec.num_params()],
        };
        let n = 100;
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let data = tiny_dataset(vec![0.25; n * 2], labels, 2, 10);
        let (acc, loss) = evaluate(&spec, &params, &data).unwrap();
        // Uniform logits tie everywhere; ties resolve to class 0, which is
        // exactly one tenth of a balanced set.
        assert_eq!(acc, 0.1);
        assert!((loss - 10.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_single_correct_example() {
        let spec = linear_spec(2, 3, 0.0);
        let mut params = ModelParams {
            values: vec![0.0; spec.num_params()],
        };
        params.values[2 * 3 + 1] = 4.0; // favor class 1
        let data = tiny_dataset(vec![1.0, -1.0], vec![1], 2, 3);
        let (acc, _) = evaluate(&spec, &params, &data).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn evaluate_rejects_empty_dataset() {
        let spec = linear_spec(2, 3, 0.0);
        let params = ModelParams {
            values: vec![0.0; spec.num_params()],
        };
        let data = Dataset::new(Vec::new(), Vec::new(), 2, 3, Split::Test).unwrap();
        assert!(evaluate(&spec, &params, &data).is_err());
    }

    #[test]
    fn validate_reports_every_violation() {
        let spec = ModelSpec {
            input_dim: 0,
            num_classes: 1,
            hidden_dim: 0,
            weight_decay: -1.0,
        };
        let err = spec.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("input_dim"));
        assert!(msg.contains("num_classes"));
        assert!(msg.contains("weight_decay"));
    }
}

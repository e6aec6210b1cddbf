use ndarray::{Array2, ArrayView2};

use super::{DenseParams, LayerSpec, Mask, NnetError, OutputHead};

/// Logistic function, evaluated without overflow on either tail.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Largest `σ(x)(1 - σ(x))` over an even grid of `n_samples` points on `[-50, 50]`.
pub fn sigmoid_lipschitz_check(n_samples: usize) -> f64 {
    let n = n_samples.max(2);
    (0..n)
        .map(|i| {
            let x = -50.0 + 100.0 * i as f64 / (n - 1) as f64;
            let s = sigmoid(x);
            s * (1.0 - s)
        })
        .fold(0.0, f64::max)
}

fn slice(w: &Array2<f64>) -> &[f64] {
    w.as_slice().expect("parameter matrices are kept in standard layout")
}

/// Activations per layer for one input: `acts[0] = x`, hidden layers hold sigmoid outputs,
/// the last entry holds output logits.
pub(crate) fn forward_trace(params: &DenseParams, mask: Option<&Mask>, x: &[f64], acts: &mut Vec<Vec<f64>>) {
    let n_layers = params.weights.len();
    acts.resize_with(n_layers + 1, Vec::new);
    acts[0].clear();
    acts[0].extend_from_slice(x);
    for i in 0..n_layers {
        let w = &params.weights[i];
        let (rows, cols) = w.dim();
        let ws = slice(w);
        let keep = mask.map(|m| m.keep[i].as_slice().expect("standard layout"));
        let (prev, rest) = acts.split_at_mut(i + 1);
        let input = &prev[i];
        let out = &mut rest[0];
        out.clear();
        for r in 0..rows {
            let row = &ws[r * cols..(r + 1) * cols];
            let mut z = params.biases[i][r];
            match keep {
                Some(k) => {
                    let krow = &k[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        if krow[c] {
                            z += row[c] * input[c];
                        }
                    }
                }
                None => {
                    for c in 0..cols {
                        z += row[c] * input[c];
                    }
                }
            }
            out.push(if i + 1 < n_layers { sigmoid(z) } else { z });
        }
    }
}

fn output_from_logits(head: OutputHead, logits: &[f64]) -> Vec<f64> {
    match head {
        OutputHead::SigmoidBce => logits.iter().map(|&z| sigmoid(z)).collect(),
        OutputHead::SoftmaxCe => {
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        }
    }
}

/// Network output with effective weights `weights ⊙ keep`: a probability for the
/// sigmoid head, a distribution over classes for the softmax head.
pub fn forward(spec: &LayerSpec, params: &DenseParams, mask: &Mask, x: &[f64]) -> Result<Vec<f64>, NnetError> {
    if x.len() != spec.inputs() {
        return Err(NnetError::Dimension(format!(
            "input has {} features, network expects {}",
            x.len(),
            spec.inputs()
        )));
    }
    params.check_shapes(spec)?;
    mask.check(spec)?;
    Ok(forward_unchecked(spec, params, Some(mask), x))
}

pub(crate) fn forward_unchecked(spec: &LayerSpec, params: &DenseParams, mask: Option<&Mask>, x: &[f64]) -> Vec<f64> {
    let mut acts = Vec::new();
    forward_trace(params, mask, x, &mut acts);
    output_from_logits(spec.output_head, acts.last().expect("at least one layer"))
}

/// Per-sample loss from logits and dL/dlogits written into `dz`.
fn loss_and_delta(head: OutputHead, logits: &[f64], label: usize, dz: &mut Vec<f64>) -> f64 {
    dz.clear();
    match head {
        OutputHead::SigmoidBce => {
            let z = logits[0];
            let y = if label == 1 { 1.0 } else { 0.0 };
            dz.push(sigmoid(z) - y);
            z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
        }
        OutputHead::SoftmaxCe => {
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|&z| (z - m).exp()).sum();
            let lse = m + sum.ln();
            for (j, &z) in logits.iter().enumerate() {
                let p = (z - lse).exp();
                dz.push(if j == label { p - 1.0 } else { p });
            }
            lse - logits[label]
        }
    }
}

/// Mean loss over all rows of `features`.
pub fn loss(spec: &LayerSpec, params: &DenseParams, mask: Option<&Mask>, features: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let mut acts = Vec::new();
    let mut dz = Vec::new();
    let mut total = 0.0;
    for (row, &label) in features.rows().into_iter().zip(labels) {
        let x = row.as_slice().expect("standard layout rows");
        forward_trace(params, mask, x, &mut acts);
        total += loss_and_delta(spec.output_head, acts.last().expect("layers"), label, &mut dz);
    }
    total / labels.len() as f64
}

/// Batch-averaged gradients of the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub loss: f64,
}

/// Backpropagation over the rows `batch` of `features`. Gradients of pruned
/// connections are zero.
pub fn gradients(
    spec: &LayerSpec,
    params: &DenseParams,
    mask: Option<&Mask>,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    batch: &[usize],
) -> Gradients {
    let n_layers = spec.n_layers();
    let mut gw: Vec<Array2<f64>> = params.weights.iter().map(|w| Array2::zeros(w.dim())).collect();
    let mut gb: Vec<Vec<f64>> = params.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut acts = Vec::new();
    let mut delta = Vec::new();
    let mut next_delta = Vec::new();
    let mut total = 0.0;

    for &s in batch {
        let x = features.row(s);
        let x = x.as_slice().expect("standard layout rows");
        forward_trace(params, mask, x, &mut acts);
        total += loss_and_delta(spec.output_head, &acts[n_layers], labels[s], &mut delta);

        for i in (0..n_layers).rev() {
            let (rows, cols) = params.weights[i].dim();
            let input = &acts[i];
            {
                let g = gw[i].as_slice_mut().expect("standard layout");
                for r in 0..rows {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    let grow = &mut g[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        grow[c] += d * input[c];
                    }
                }
            }
            for r in 0..rows {
                gb[i][r] += delta[r];
            }
            if i > 0 {
                let ws = slice(&params.weights[i]);
                let keep = mask.map(|m| m.keep[i].as_slice().expect("standard layout"));
                next_delta.clear();
                next_delta.resize(cols, 0.0);
                for r in 0..rows {
                    let d = delta[r];
                    let row = &ws[r * cols..(r + 1) * cols];
                    match keep {
                        Some(k) => {
                            let krow = &k[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                if krow[c] {
                                    next_delta[c] += row[c] * d;
                                }
                            }
                        }
                        None => {
                            for c in 0..cols {
                                next_delta[c] += row[c] * d;
                            }
                        }
                    }
                }
                for (c, nd) in next_delta.iter_mut().enumerate() {
                    let a = input[c];
                    *nd *= a * (1.0 - a);
                }
                std::mem::swap(&mut delta, &mut next_delta);
            }
        }
    }

    let scale = 1.0 / batch.len() as f64;
    for (g, w) in gw.iter_mut().enumerate() {
        w.mapv_inplace(|v| v * scale);
        if let Some(m) = mask {
            w.zip_mut_with(&m.keep[g], |v, &k| {
                if !k {
                    *v = 0.0;
                }
            });
        }
    }
    for b in gb.iter_mut().flatten() {
        *b *= scale;
    }
    Gradients {
        weights: gw,
        biases: gb,
        loss: total * scale,
    }
}

impl DenseParams {
    pub(crate) fn check_shapes(&self, spec: &LayerSpec) -> Result<(), NnetError> {
        if self.weights.len() != spec.n_layers()
            || self.biases.len() != spec.n_layers()
            || (0..spec.n_layers()).any(|i| self.weights[i].dim() != spec.weight_shape(i) || self.biases[i].len() != spec.sizes[i + 1])
        {
            return Err(NnetError::Dimension("parameters do not match layer spec".into()));
        }
        Ok(())
    }
}

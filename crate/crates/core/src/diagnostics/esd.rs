use nalgebra::DMatrix;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DiagnosticsError;

/// Layers whose alpha falls outside this band are flagged in reports.
pub const WELL_TRAINED_BAND: (f64, f64) = (2.0, 6.0);

/// Eigenvalues of `W Wᵀ / N` with `N` the larger dimension, ascending. The
/// smaller Gram matrix is decomposed; the larger one only adds zeros.
pub fn esd(w: &Array2<f64>) -> Result<Vec<f64>, DiagnosticsError> {
    let (rows, cols) = w.dim();
    if rows == 0 || cols == 0 {
        return Err(DiagnosticsError::Empty);
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFinite);
    }
    let m = DMatrix::from_fn(rows, cols, |i, j| w[(i, j)]);
    let n = rows.max(cols) as f64;
    let gram = if rows <= cols { &m * m.transpose() } else { m.transpose() * &m } / n;
    let mut eig: Vec<f64> = gram
        .symmetric_eigenvalues()
        .iter()
        .map(|&l| if (-1e-10..0.0).contains(&l) { 0.0 } else { l })
        .collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub xmin: f64,
    pub ks_distance: f64,
    pub n_tail: usize,
    /// Fewer than 5 points above `xmin`.
    pub low_tail: bool,
}

/// Continuous power-law MLE with the cutoff chosen by minimum KS distance.
/// Every distinct value leaving at least two tail points is a candidate cutoff.
pub fn fit_power_law_samples(values: &[f64]) -> Result<PowerLawFit, DiagnosticsError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFinite);
    }
    let mut x: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    if x.len() < 10 {
        return Err(DiagnosticsError::TooFewValues { found: x.len(), needed: 10 });
    }
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let logs: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    // suffix sums of ln x for O(1) alpha per candidate
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + logs[i];
    }
    let mut best: Option<PowerLawFit> = None;
    let mut i = 0;
    while i + 2 <= n {
        if i > 0 && x[i] == x[i - 1] {
            i += 1;
            continue;
        }
        let xmin = x[i];
        let tail = n - i;
        let s = suffix[i] - tail as f64 * logs[i];
        if s > 0.0 {
            let alpha = 1.0 + tail as f64 / s;
            let mut ks: f64 = 0.0;
            for (r, &v) in x[i..].iter().enumerate() {
                let model = 1.0 - (v / xmin).powf(1.0 - alpha);
                let lo = r as f64 / tail as f64;
                let hi = (r + 1) as f64 / tail as f64;
                ks = ks.max((model - lo).abs()).max((hi - model).abs());
            }
            if best.as_ref().is_none_or(|b| ks < b.ks_distance) {
                best = Some(PowerLawFit {
                    alpha,
                    xmin,
                    ks_distance: ks,
                    n_tail: tail,
                    low_tail: tail < 5,
                });
            }
        }
        i += 1;
    }
    best.ok_or(DiagnosticsError::TooFewValues { found: 0, needed: 2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsdReport {
    /// 1-based weight layer.
    pub layer: usize,
    pub eigenvalues: Vec<f64>,
    pub alpha: f64,
    pub xmin: f64,
    pub lambda_max: f64,
    /// `alpha * log10(lambda_max)`.
    pub alpha_w: f64,
    pub ks_distance: f64,
    pub n_tail: usize,
    pub low_tail: bool,
    /// Alpha outside [`WELL_TRAINED_BAND`].
    pub out_of_band: bool,
    /// Heuristic: the element-shuffled matrix has an eigenvalue above twice
    /// the Marchenko-Pastur edge.
    pub correlation_trap: bool,
}

/// Upper Marchenko-Pastur edge for i.i.d. entries of variance `var` and
/// aspect ratio `q = min/max <= 1`, under the `1/N` normalization of [`esd`].
pub fn marchenko_pastur_edges(var: f64, q: f64) -> (f64, f64) {
    let s = q.sqrt();
    (var * (1.0 - s).powi(2), var * (1.0 + s).powi(2))
}

pub fn correlation_trap(w: &Array2<f64>, seed: u64) -> Result<bool, DiagnosticsError> {
    let (rows, cols) = w.dim();
    let mut vals: Vec<f64> = w.iter().copied().collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    vals.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let shuffled = Array2::from_shape_vec((rows, cols), vals).expect("same element count");
    let eig = esd(&shuffled)?;
    let q = rows.min(cols) as f64 / rows.max(cols) as f64;
    let (_, edge) = marchenko_pastur_edges(var, q);
    Ok(eig.last().is_some_and(|&l| l > 2.0 * edge))
}

/// Spectrum, power-law tail fit, and correlation-trap flag for one layer.
pub fn layer_report(layer: usize, w: &Array2<f64>, seed: u64) -> Result<EsdReport, DiagnosticsError> {
    let eigenvalues = esd(w)?;
    let fit = fit_power_law_samples(&eigenvalues)?;
    let lambda_max = *eigenvalues.last().expect("nonempty");
    Ok(EsdReport {
        layer,
        alpha: fit.alpha,
        xmin: fit.xmin,
        lambda_max,
        alpha_w: fit.alpha * lambda_max.log10(),
        ks_distance: fit.ks_distance,
        n_tail: fit.n_tail,
        low_tail: fit.low_tail,
        out_of_band: !(WELL_TRAINED_BAND.0..=WELL_TRAINED_BAND.1).contains(&fit.alpha),
        correlation_trap: correlation_trap(w, seed)?,
        eigenvalues,
    })
}

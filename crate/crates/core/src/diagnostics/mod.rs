//! Post-training diagnostics: layer spectra with power-law tail fits, Kernel
//! SHAP feature importance and its consistency across models, and the output
//! gap between a dense and a sparse network.

mod esd;
mod shap;

use ndarray::Array2;
use thiserror::Error;

use crate::data::{stratified_subsample, Dataset};
use crate::nnet::{forward, DenseParams, LayerSpec, Mask, NnetError};

pub use esd::{
    correlation_trap, esd, fit_power_law_samples, layer_report, marchenko_pastur_edges, EsdReport, PowerLawFit,
    WELL_TRAINED_BAND,
};
pub use shap::{average_ranks, consistency, explain, kernel_shap, ConsistencyScore, ShapOptions, ShapReport, ShapValues};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("input is empty")]
    Empty,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("need at least {needed} positive values, found {found}")]
    TooFewValues { found: usize, needed: usize },
    #[error("kernel SHAP system is singular; increase n_samples")]
    Singular,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Nnet(#[from] NnetError),
}

/// Alias matching the ESD report vocabulary.
pub fn fit_power_law(eigenvalues: &[f64]) -> Result<PowerLawFit, DiagnosticsError> {
    fit_power_law_samples(eigenvalues)
}

/// Spectral report for every weight matrix with at least 10 eigenvalues;
/// smaller layers are skipped.
pub fn network_esd(params: &DenseParams, seed: u64) -> Result<Vec<EsdReport>, DiagnosticsError> {
    let mut out = Vec::new();
    for (i, w) in params.weights.iter().enumerate() {
        if w.nrows().min(w.ncols()) < 10 {
            log::info!("layer {} has fewer than 10 eigenvalues; no spectral fit", i + 1);
            continue;
        }
        out.push(layer_report(i + 1, w, seed.wrapping_add(i as u64))?);
    }
    Ok(out)
}

/// Up to `n` training rows chosen by stratified subsampling.
pub fn shap_background(train: &Dataset, n: usize, seed: u64) -> Array2<f64> {
    let idx = stratified_subsample(train, n.min(train.n_samples()), seed);
    train.subset(&idx).features
}

/// SHAP importance of a (possibly masked) network over `samples`.
pub fn network_shap(
    spec: &LayerSpec,
    params: &DenseParams,
    mask: &Mask,
    background: &Array2<f64>,
    samples: &Array2<f64>,
    opts: &ShapOptions,
) -> Result<ShapReport, DiagnosticsError> {
    params.check(spec)?;
    mask.check(spec)?;
    let f = |x: &[f64]| forward(spec, params, mask, x).expect("shapes checked");
    explain(&f, spec.outputs(), background, samples, opts)
}

/// `max_x ||f_sparse(x) - f_dense(x)||_2` over the rows of `inputs`.
pub fn epsilon_closeness(
    spec: &LayerSpec,
    dense: (&DenseParams, &Mask),
    sparse: (&DenseParams, &Mask),
    inputs: &Array2<f64>,
) -> Result<f64, DiagnosticsError> {
    dense.0.check(spec)?;
    sparse.0.check(spec)?;
    let mut gap: f64 = 0.0;
    for row in inputs.rows() {
        let x = row.to_vec();
        let a = forward(spec, dense.0, dense.1, &x)?;
        let b = forward(spec, sparse.0, sparse.1, &x)?;
        let d = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        gap = gap.max(d);
    }
    Ok(gap)
}

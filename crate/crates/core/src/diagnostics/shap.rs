//! Kernel SHAP with background averaging and the additivity constraint
//! enforced by elimination.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DiagnosticsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapOptions {
    /// Coalition budget when features exceed `exact_max_features`.
    pub n_samples: usize,
    pub exact_max_features: usize,
    pub seed: u64,
}

impl Default for ShapOptions {
    fn default() -> Self {
        Self {
            n_samples: 2048,
            exact_max_features: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapValues {
    /// Expected output over the background.
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub n_coalitions: usize,
    pub exact: bool,
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of one coalition of size `s` out of `m`.
fn kernel_weight(m: usize, s: usize) -> f64 {
    (m - 1) as f64 / (binom(m, s) * s as f64 * (m - s) as f64)
}

/// Mean model output with features in `coalition` taken from `x` and the rest
/// from each background row.
fn coalition_value(f: &(dyn Fn(&[f64]) -> f64 + Sync), background: &Array2<f64>, x: &[f64], coalition: &[bool], buf: &mut Vec<f64>) -> f64 {
    let mut total = 0.0;
    for row in background.rows() {
        buf.clear();
        buf.extend(row.iter().zip(x).zip(coalition).map(|((&b, &xi), &on)| if on { xi } else { b }));
        total += f(buf);
    }
    total / background.nrows() as f64
}

/// Coalitions and their regression weights. Whole coalition sizes are
/// enumerated (paired `s` with `m - s`) while the budget allows; the rest of
/// the budget is drawn from the kernel distribution over the remaining sizes.
fn coalitions(m: usize, exact: bool, budget: usize, rng: &mut ChaCha8Rng) -> BTreeMap<Vec<bool>, f64> {
    let mut out = BTreeMap::new();
    let mut remaining = budget;
    let mut done_sizes = vec![false; m];
    for s in 1..=m / 2 {
        let paired = s != m - s;
        let count = binom(m, s) * if paired { 2.0 } else { 1.0 };
        if !exact && count > remaining as f64 {
            break;
        }
        for size in if paired { vec![s, m - s] } else { vec![s] } {
            let w = kernel_weight(m, size);
            for mask in combinations(m, size) {
                out.insert(mask, w);
            }
            done_sizes[size] = true;
        }
        remaining = remaining.saturating_sub(count as usize);
    }
    let open: Vec<usize> = (1..m).filter(|&s| !done_sizes[s]).collect();
    if open.is_empty() || remaining == 0 {
        return out;
    }
    let mass: Vec<f64> = open.iter().map(|&s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
    let total: f64 = mass.iter().sum();
    let each = total / remaining as f64;
    for _ in 0..remaining {
        let mut u = rng.random::<f64>() * total;
        let mut size = *open.last().expect("nonempty");
        for (&s, &p) in open.iter().zip(&mass) {
            if u < p {
                size = s;
                break;
            }
            u -= p;
        }
        let mut mask = vec![false; m];
        for i in sample(rng, m, size) {
            mask[i] = true;
        }
        *out.entry(mask).or_insert(0.0) += each;
    }
    out
}

fn combinations(m: usize, k: usize) -> Vec<Vec<bool>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut mask = vec![false; m];
        for &i in &idx {
            mask[i] = true;
        }
        out.push(mask);
        let Some(i) = (0..k).rev().find(|&i| idx[i] < m - k + i) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// SHAP values of `f` at `x`. With at most `opts.exact_max_features`
/// features every coalition is used and the result is the exact Shapley value.
pub fn kernel_shap(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    background: &Array2<f64>,
    x: &[f64],
    opts: &ShapOptions,
) -> Result<ShapValues, DiagnosticsError> {
    let m = x.len();
    if background.nrows() == 0 {
        return Err(DiagnosticsError::Empty);
    }
    if background.ncols() != m {
        return Err(DiagnosticsError::InvalidParam(format!(
            "background has {} features, sample has {m}",
            background.ncols()
        )));
    }
    let mut buf = Vec::with_capacity(m);
    let base_value = coalition_value(f, background, x, &vec![false; m], &mut buf);
    let full = coalition_value(f, background, x, &vec![true; m], &mut buf);
    if m == 1 {
        return Ok(ShapValues {
            base_value,
            phi: vec![full - base_value],
            n_coalitions: 0,
            exact: true,
        });
    }
    let exact = m <= opts.exact_max_features;
    if !exact && opts.n_samples < 2 * m + 2 {
        return Err(DiagnosticsError::InvalidParam(format!(
            "n_samples {} must be at least {}",
            opts.n_samples,
            2 * m + 2
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let coal = coalitions(m, exact, opts.n_samples, &mut rng);

    // phi_{m-1} = (full - base) - sum of the others, so regress on m - 1 unknowns.
    let rows = coal.len();
    let mut a = DMatrix::zeros(rows, m - 1);
    let mut b = DVector::zeros(rows);
    for (r, (mask, &w)) in coal.iter().enumerate() {
        let sw = w.sqrt();
        let v = coalition_value(f, background, x, mask, &mut buf);
        let z_last = f64::from(u8::from(mask[m - 1]));
        for i in 0..m - 1 {
            a[(r, i)] = sw * (f64::from(u8::from(mask[i])) - z_last);
        }
        b[r] = sw * (v - base_value - z_last * (full - base_value));
    }
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * max_sv.max(f64::MIN_POSITIVE) {
        return Err(DiagnosticsError::Singular);
    }
    let sol = svd.solve(&b, 0.0).map_err(|_| DiagnosticsError::Singular)?;
    let mut phi: Vec<f64> = sol.iter().copied().collect();
    phi.push((full - base_value) - phi.iter().sum::<f64>());
    Ok(ShapValues {
        base_value,
        phi,
        n_coalitions: rows,
        exact,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapReport {
    /// Mean |SHAP| per feature over explained samples and outputs.
    pub importance: Vec<f64>,
    /// `values[sample][output][feature]`.
    pub values: Vec<Vec<Vec<f64>>>,
    pub background_size: usize,
    pub n_coalitions: usize,
    pub exact: bool,
}

/// Explain each row of `samples` for every output of a vector-valued model.
pub fn explain(
    f: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    n_outputs: usize,
    background: &Array2<f64>,
    samples: &Array2<f64>,
    opts: &ShapOptions,
) -> Result<ShapReport, DiagnosticsError> {
    if samples.nrows() == 0 {
        return Err(DiagnosticsError::Empty);
    }
    let n_features = samples.ncols();
    let per_sample: Vec<(Vec<Vec<f64>>, usize, bool)> = (0..samples.nrows())
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = samples.row(i).to_vec();
            let mut outs = Vec::with_capacity(n_outputs);
            let mut info = (0, true);
            for j in 0..n_outputs {
                let fj = |z: &[f64]| f(z)[j];
                let sv = kernel_shap(&fj, background, &x, opts)?;
                info = (sv.n_coalitions, sv.exact);
                outs.push(sv.phi);
            }
            Ok((outs, info.0, info.1))
        })
        .collect::<Result<_, DiagnosticsError>>()?;
    let mut importance = vec![0.0; n_features];
    for (outs, _, _) in &per_sample {
        for phi in outs {
            for (acc, p) in importance.iter_mut().zip(phi) {
                *acc += p.abs();
            }
        }
    }
    let denom = (per_sample.len() * n_outputs) as f64;
    importance.iter_mut().for_each(|v| *v /= denom);
    let (n_coalitions, exact) = (per_sample[0].1, per_sample[0].2);
    Ok(ShapReport {
        importance,
        values: per_sample.into_iter().map(|(v, _, _)| v).collect(),
        background_size: background.nrows(),
        n_coalitions,
        exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScore {
    pub spearman_rho: f64,
    pub topk_overlap: f64,
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

fn top_k(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Spearman correlation and top-3 overlap of two importance vectors. A
/// constant vector has no ranking and scores rho = 0.
pub fn consistency(a: &[f64], b: &[f64]) -> Result<ConsistencyScore, DiagnosticsError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(DiagnosticsError::InvalidParam(format!(
            "importance vectors must have equal length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let k = 3.min(a.len());
    let ta = top_k(a, k);
    let tb = top_k(b, k);
    let shared = ta.iter().filter(|i| tb.contains(i)).count();
    Ok(ConsistencyScore {
        spearman_rho: pearson(&average_ranks(a), &average_ranks(b)),
        topk_overlap: shared as f64 / k as f64,
    })
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, Normalization, NormalizationKind};

/// A train/test partition. Normalization statistics come from `train` only.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

fn indices_by_class(data: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); data.n_classes];
    for (i, &l) in data.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

/// Stratified split. Each class contributes `round(count * test_fraction)` test samples.
pub fn split(data: &Dataset, test_fraction: f64, seed: u64, normalization: NormalizationKind) -> Result<Split, DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidParam(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class, mut idx) in indices_by_class(data).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(DataError::ClassTooSmall {
                class,
                count: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
        test_idx.extend_from_slice(&idx[..n_test]);
        train_idx.extend_from_slice(&idx[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let mut train = data.subset(&train_idx);
    let mut test = data.subset(&test_idx);
    let norm = Normalization::fit(normalization, &train.features);
    norm.apply(&mut train.features);
    norm.apply(&mut test.features);
    train.normalization = Some(norm.clone());
    test.normalization = Some(norm);
    Ok(Split { train, test })
}

/// Deterministic stratified subsample of at most `n` rows, class proportions preserved
/// as closely as rounding allows. Returned indices are ascending.
pub fn stratified_subsample(data: &Dataset, n: usize, seed: u64) -> Vec<usize> {
    let total = data.n_samples();
    if n >= total {
        return (0..total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(n);
    let by_class = indices_by_class(data);
    // largest-remainder apportionment so the quotas sum to exactly n
    let quotas: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * n as f64 / total as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut remaining = n - alloc.iter().sum::<usize>();
    for &c in &order {
        if remaining == 0 {
            break;
        }
        if alloc[c] < by_class[c].len() {
            alloc[c] += 1;
            remaining -= 1;
        }
    }
    for (c, mut idx) in by_class.into_iter().enumerate() {
        idx.shuffle(&mut rng);
        picked.extend_from_slice(&idx[..alloc[c].min(idx.len())]);
    }
    picked.sort_unstable();
    picked
}

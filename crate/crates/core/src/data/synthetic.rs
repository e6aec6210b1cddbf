//! Deterministic generators for the oracles used throughout the test suite.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Radius-truncated isotropic Gaussian blobs with centers `2 * radius + margin` apart
    /// (all in units of `sigma`), so classes are linearly separable with the given margin.
    Blobs {
        n_per_class: usize,
        n_classes: usize,
        n_features: usize,
        sigma: f64,
        radius: f64,
        margin: f64,
    },
    Xor {
        n_per_quadrant: usize,
        noise: f64,
    },
    LogisticMapSeries {
        r: f64,
        n: usize,
        x0: f64,
    },
    HenonSeries {
        a: f64,
        b: f64,
        n: usize,
        discard: usize,
    },
    ParetoSamples {
        alpha: f64,
        xmin: f64,
        n: usize,
    },
    /// `x` white noise, `y_t = ar * y_{t-1} + coupling * x_{t-1} + noise * e_t`.
    CoupledVarPair {
        n: usize,
        ar: f64,
        coupling: f64,
        noise: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticData {
    Dataset(Dataset),
    Series(Vec<f64>),
    Pair { x: Vec<f64>, y: Vec<f64> },
}

pub fn synthetic(kind: &SyntheticKind, seed: u64) -> Result<SyntheticData, DataError> {
    Ok(match *kind {
        SyntheticKind::Blobs {
            n_per_class,
            n_classes,
            n_features,
            sigma,
            radius,
            margin,
        } => SyntheticData::Dataset(blobs(n_per_class, n_classes, n_features, sigma, radius, margin, seed)?),
        SyntheticKind::Xor { n_per_quadrant, noise } => SyntheticData::Dataset(xor(n_per_quadrant, noise, seed)?),
        SyntheticKind::LogisticMapSeries { r, n, x0 } => SyntheticData::Series(logistic_map_series(r, n, x0)?),
        SyntheticKind::HenonSeries { a, b, n, discard } => SyntheticData::Series(henon_series(a, b, n, discard)?),
        SyntheticKind::ParetoSamples { alpha, xmin, n } => SyntheticData::Series(pareto_samples(alpha, xmin, n, seed)?),
        SyntheticKind::CoupledVarPair { n, ar, coupling, noise } => {
            let (x, y) = coupled_var_pair(n, ar, coupling, noise, seed)?;
            SyntheticData::Pair { x, y }
        }
    })
}

fn invalid(msg: impl Into<String>) -> DataError {
    DataError::InvalidParam(msg.into())
}

pub fn blobs(
    n_per_class: usize,
    n_classes: usize,
    n_features: usize,
    sigma: f64,
    radius: f64,
    margin: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n_per_class == 0 || n_classes < 2 || n_features == 0 {
        return Err(invalid("blobs need >= 1 sample per class, >= 2 classes, >= 1 feature"));
    }
    if !(sigma > 0.0 && radius > 0.0 && margin >= 0.0) {
        return Err(invalid("blobs need sigma > 0, radius > 0, margin >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let separation = (2.0 * radius + margin) * sigma;
    // Centers on a regular simplex-like layout: class c sits on axis (c mod d), and
    // classes sharing an axis alternate sign. Pairwise distances are >= separation.
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|c| {
            let mut center = vec![0.0; n_features];
            if n_features == 1 {
                center[0] = c as f64 * separation;
            } else {
                let axis = c % n_features;
                let rank = (c / n_features) as f64 + 1.0;
                let sign = if (c / n_features).is_multiple_of(2) { 1.0 } else { -1.0 };
                center[axis] = sign * rank * separation;
            }
            center
        })
        .collect();
    let n = n_per_class * n_classes;
    let mut features = Array2::zeros((n, n_features));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for _ in 0..n_per_class {
        for (c, center) in centers.iter().enumerate() {
            loop {
                let offset: Vec<f64> = (0..n_features).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = offset.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm <= radius {
                    for j in 0..n_features {
                        features[[row, j]] = center[j] + sigma * offset[j];
                    }
                    break;
                }
            }
            labels.push(c);
            row += 1;
        }
    }
    Dataset::new(features, labels, n_classes)
}

pub fn xor(n_per_quadrant: usize, noise: f64, seed: u64) -> Result<Dataset, DataError> {
    if n_per_quadrant == 0 || noise < 0.0 {
        return Err(invalid("xor needs n_per_quadrant >= 1 and noise >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((4 * n_per_quadrant, 2));
    let mut labels = Vec::with_capacity(4 * n_per_quadrant);
    let quadrants = [(-1.0, -1.0, 0), (1.0, 1.0, 0), (-1.0, 1.0, 1), (1.0, -1.0, 1)];
    let mut row = 0;
    for _ in 0..n_per_quadrant {
        for &(cx, cy, label) in &quadrants {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            features[[row, 0]] = cx + noise * dx;
            features[[row, 1]] = cy + noise * dy;
            labels.push(label);
            row += 1;
        }
    }
    Dataset::new(features, labels, 2)
}

/// Orbit of `x_{t+1} = r x_t (1 - x_t)` starting at `x0` (included).
pub fn logistic_map_series(r: f64, n: usize, x0: f64) -> Result<Vec<f64>, DataError> {
    if !(0.0..=4.0).contains(&r) || !(0.0 < x0 && x0 < 1.0) || n == 0 {
        return Err(invalid("logistic map needs r in [0, 4], x0 in (0, 1), n >= 1"));
    }
    let mut out = Vec::with_capacity(n);
    let mut x = x0;
    for _ in 0..n {
        out.push(x);
        x = r * x * (1.0 - x);
    }
    Ok(out)
}

/// `x` component of the Hénon map from (0.1, 0.1) after `discard` transient steps.
pub fn henon_series(a: f64, b: f64, n: usize, discard: usize) -> Result<Vec<f64>, DataError> {
    if n == 0 {
        return Err(invalid("henon series needs n >= 1"));
    }
    let (mut x, mut y) = (0.1_f64, 0.1_f64);
    let mut out = Vec::with_capacity(n);
    for t in 0..n + discard {
        if t >= discard {
            out.push(x);
        }
        let nx = 1.0 - a * x * x + y;
        y = b * x;
        x = nx;
        if !x.is_finite() {
            return Err(invalid("henon orbit diverged"));
        }
    }
    Ok(out)
}

/// Continuous power law with density `p(x) ∝ x^{-alpha}` for `x >= xmin`, by inverse CDF.
pub fn pareto_samples(alpha: f64, xmin: f64, n: usize, seed: u64) -> Result<Vec<f64>, DataError> {
    if !(alpha > 1.0 && xmin > 0.0) || n == 0 {
        return Err(invalid("pareto samples need alpha > 1, xmin > 0, n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random();
            xmin * (1.0 - u).powf(-1.0 / (alpha - 1.0))
        })
        .collect())
}

pub fn coupled_var_pair(n: usize, ar: f64, coupling: f64, noise: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>), DataError> {
    if n < 2 || noise < 0.0 {
        return Err(invalid("coupled pair needs n >= 2 and noise >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut y = vec![0.0; n];
    y[0] = noise * rng.sample::<f64, _>(StandardNormal);
    for t in 1..n {
        let e: f64 = rng.sample(StandardNormal);
        y[t] = ar * y[t - 1] + coupling * x[t - 1] + noise * e;
    }
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_orbit_is_deterministic_and_bounded() {
        let a = logistic_map_series(4.0, 2000, 0.2).unwrap();
        let b = logistic_map_series(4.0, 2000, 0.2).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&x| x > 0.0 && x < 1.0));
        assert_eq!(a[0], 0.2);
        assert!((a[1] - 0.64).abs() < 1e-15);
    }

    #[test]
    fn henon_stays_on_attractor() {
        let xs = henon_series(1.4, 0.3, 5000, 100).unwrap();
        assert!(xs.iter().all(|x| x.abs() < 1.5));
    }

    #[test]
    fn pareto_respects_xmin() {
        let xs = pareto_samples(2.5, 1.0, 1000, 1).unwrap();
        assert!(xs.iter().all(|&x| x >= 1.0));
    }

    #[test]
    fn blobs_respect_truncation_radius() {
        let ds = blobs(50, 3, 4, 0.5, 2.0, 2.0, 11).unwrap();
        assert_eq!(ds.n_samples(), 150);
        assert_eq!(ds.class_counts(), vec![50, 50, 50]);
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(logistic_map_series(5.0, 10, 0.2).is_err());
        assert!(pareto_samples(0.5, 1.0, 10, 0).is_err());
        assert!(blobs(10, 1, 2, 1.0, 2.0, 2.0, 0).is_err());
        assert!(matches!(
            synthetic(&SyntheticKind::Xor { n_per_quadrant: 0, noise: 0.1 }, 0),
            Err(DataError::InvalidParam(_))
        ));
    }

    #[test]
    fn dispatcher_matches_direct_calls() {
        let via = synthetic(&SyntheticKind::CoupledVarPair { n: 50, ar: 0.2, coupling: 0.9, noise: 0.1 }, 5).unwrap();
        let (x, y) = coupled_var_pair(50, 0.2, 0.9, 0.1, 5).unwrap();
        assert_eq!(via, SyntheticData::Pair { x, y });
    }
}

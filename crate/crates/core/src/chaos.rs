//! Largest Lyapunov exponent of short scalar series.
//!
//! The main estimator is Rosenstein's nearest-neighbour divergence method on a
//! delay embedding. A direct two-point estimator is provided for difference
//! series, where the perturbation magnitude itself is the divergence.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{ConnectionId, WindowedSeries};

#[derive(Debug, Error)]
pub enum ChaosError {
    #[error("series of length {len} is too short (needs at least {needed})")]
    TooShort { len: usize, needed: usize },
    #[error("series is constant")]
    Degenerate,
    #[error("only {found} reference points have a valid neighbour, need {needed}")]
    InsufficientData { found: usize, needed: usize },
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("perturbation magnitude is zero at window {0}")]
    ZeroMagnitude(&'static str),
    #[error("invalid embedding config: {0}")]
    InvalidConfig(String),
    #[error("connection {0} has no analyzable window")]
    Unanalyzable(ConnectionId),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub delay: usize,
    /// Neighbours closer than this many steps in time are excluded.
    pub theiler_window: usize,
    /// Inclusive range of divergence steps used for the slope fit.
    pub fit_range: (usize, usize),
    pub min_neighbors: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            delay: 1,
            theiler_window: 10,
            fit_range: (1, 8),
            min_neighbors: 5,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), ChaosError> {
        if self.dim == 0 || self.delay == 0 {
            return Err(ChaosError::InvalidConfig("dim and delay must be >= 1".into()));
        }
        if self.fit_range.1 <= self.fit_range.0 {
            return Err(ChaosError::InvalidConfig(format!(
                "fit_range {:?} must have k_max > k_min",
                self.fit_range
            )));
        }
        if self.min_neighbors == 0 {
            return Err(ChaosError::InvalidConfig("min_neighbors must be >= 1".into()));
        }
        Ok(())
    }

    /// Shortest series the estimator accepts.
    pub fn min_len(&self) -> usize {
        let span = (self.dim - 1) * self.delay;
        (2 * (span + self.min_neighbors)).max(span + self.fit_range.1 + self.theiler_window + self.min_neighbors + 1)
    }
}

/// Delay vectors `(x_t, x_{t+tau}, ..., x_{t+(m-1)tau})`.
pub fn delay_embed(series: &[f64], dim: usize, delay: usize) -> Result<Vec<Vec<f64>>, ChaosError> {
    if dim == 0 || delay == 0 {
        return Err(ChaosError::InvalidConfig("dim and delay must be >= 1".into()));
    }
    let span = (dim - 1) * delay;
    if series.len() < span + 1 {
        return Err(ChaosError::TooShort {
            len: series.len(),
            needed: span + 1,
        });
    }
    Ok((0..series.len() - span)
        .map(|t| (0..dim).map(|i| series[t + i * delay]).collect())
        .collect())
}

fn is_constant(series: &[f64]) -> bool {
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = lo.abs().max(hi.abs());
    hi - lo <= 4.0 * f64::EPSILON * scale
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Ordinary least-squares slope of `ys` against `xs`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Mean log divergence `<ln d_j(k)>` for `k = 0..=k_max`.
pub fn divergence_curve(series: &[f64], cfg: &EmbeddingConfig) -> Result<Vec<f64>, ChaosError> {
    cfg.validate()?;
    if series.iter().any(|v| !v.is_finite()) {
        return Err(ChaosError::NonFinite);
    }
    let needed = cfg.min_len();
    if series.len() < needed {
        return Err(ChaosError::TooShort {
            len: series.len(),
            needed,
        });
    }
    if is_constant(series) {
        return Err(ChaosError::Degenerate);
    }
    let points = delay_embed(series, cfg.dim, cfg.delay)?;
    let k_max = cfg.fit_range.1;
    // Reference points and neighbours must both be followable for k_max steps.
    let usable = points.len() - k_max;

    let mut sums = vec![0.0; k_max + 1];
    let mut counts = vec![0usize; k_max + 1];
    let mut refs = 0usize;
    for j in 0..usable {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..usable {
            if i.abs_diff(j) <= cfg.theiler_window {
                continue;
            }
            let d = dist(&points[j], &points[i]);
            if d > 0.0 && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let Some((i, _)) = best else { continue };
        refs += 1;
        for k in 0..=k_max {
            let d = dist(&points[j + k], &points[i + k]);
            if d > 0.0 {
                sums[k] += d.ln();
                counts[k] += 1;
            }
        }
    }
    let (k_min, _) = cfg.fit_range;
    let thin = counts[k_min..=k_max].iter().copied().min().unwrap_or(0);
    if refs < cfg.min_neighbors || thin < cfg.min_neighbors {
        return Err(ChaosError::InsufficientData {
            found: refs.min(thin),
            needed: cfg.min_neighbors,
        });
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect())
}

/// Rosenstein estimate in nats per sample: slope of the divergence curve over
/// `cfg.fit_range`.
pub fn rosenstein_le(series: &[f64], cfg: &EmbeddingConfig) -> Result<f64, ChaosError> {
    let curve = divergence_curve(series, cfg)?;
    let (k_min, k_max) = cfg.fit_range;
    let xs: Vec<f64> = (k_min..=k_max).map(|k| k as f64).collect();
    Ok(slope(&xs, &curve[k_min..=k_max]))
}

/// `ln(|x_end| / |x_start|) / (W - 1)` over one window of a difference series.
pub fn direct_divergence_le(window: &[f64]) -> Result<f64, ChaosError> {
    if window.len() < 2 {
        return Err(ChaosError::TooShort {
            len: window.len(),
            needed: 2,
        });
    }
    let start = window[0].abs();
    let end = window[window.len() - 1].abs();
    if !start.is_finite() || !end.is_finite() {
        return Err(ChaosError::NonFinite);
    }
    if start == 0.0 {
        return Err(ChaosError::ZeroMagnitude("start"));
    }
    if end == 0.0 {
        return Err(ChaosError::ZeroMagnitude("end"));
    }
    Ok((end / start).ln() / (window.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum LeEstimator {
    Rosenstein(EmbeddingConfig),
    Direct,
}

impl Default for LeEstimator {
    fn default() -> Self {
        LeEstimator::Rosenstein(EmbeddingConfig::default())
    }
}

impl LeEstimator {
    pub fn estimate(&self, series: &[f64]) -> Result<f64, ChaosError> {
        match self {
            LeEstimator::Rosenstein(cfg) => rosenstein_le(series, cfg),
            LeEstimator::Direct => direct_divergence_le(series),
        }
    }

    /// Reject configs no window of length `w` could satisfy.
    pub fn check_window(&self, w: usize) -> Result<(), ChaosError> {
        let needed = match self {
            LeEstimator::Rosenstein(cfg) => {
                cfg.validate()?;
                cfg.min_len()
            }
            LeEstimator::Direct => 2,
        };
        if w < needed {
            return Err(ChaosError::InvalidConfig(format!(
                "window length {w} is below the estimator minimum {needed}"
            )));
        }
        Ok(())
    }
}

/// One exponent per window. Windows the estimator cannot handle (constant,
/// too few neighbours, zero magnitude) are recorded as 0 and flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSeries {
    pub connection: ConnectionId,
    pub values: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl LambdaSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_degenerate(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

pub fn windowed_le(ws: &WindowedSeries, cfg: &EmbeddingConfig) -> Result<LambdaSeries, ChaosError> {
    windowed_estimate(ws, &LeEstimator::Rosenstein(cfg.clone()))
}

pub fn windowed_estimate(ws: &WindowedSeries, estimator: &LeEstimator) -> Result<LambdaSeries, ChaosError> {
    estimator.check_window(ws.window_len)?;
    let mut values = Vec::with_capacity(ws.n_windows());
    let mut degenerate = Vec::with_capacity(ws.n_windows());
    for w in &ws.windows {
        match estimator.estimate(w) {
            Ok(l) if l.is_finite() => {
                values.push(l);
                degenerate.push(false);
            }
            Ok(_)
            | Err(ChaosError::Degenerate | ChaosError::InsufficientData { .. } | ChaosError::ZeroMagnitude(_)) => {
                values.push(0.0);
                degenerate.push(true);
            }
            Err(e) => return Err(e),
        }
    }
    if degenerate.iter().all(|&d| d) {
        return Err(ChaosError::Unanalyzable(ws.source));
    }
    Ok(LambdaSeries {
        connection: ws.source,
        values,
        degenerate,
    })
}

/// CSV with columns `layer,to,from,window_index,lambda,degenerate`.
pub fn write_lambda_csv<'a>(mut w: impl Write, series: impl IntoIterator<Item = &'a LambdaSeries>) -> Result<(), ChaosError> {
    writeln!(w, "layer,to,from,window_index,lambda,degenerate")?;
    for s in series {
        let c = s.connection;
        for (k, (l, d)) in s.values.iter().zip(&s.degenerate).enumerate() {
            writeln!(w, "{},{},{},{},{},{}", c.layer, c.to, c.from, k, l, u8::from(*d))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::window;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn logistic(n: usize, x0: f64) -> Vec<f64> {
        let mut x = x0;
        (0..n)
            .map(|_| {
                let v = x;
                x = 4.0 * x * (1.0 - x);
                v
            })
            .collect()
    }

    #[test]
    fn embed_examples() {
        let p = delay_embed(&[1.0, 2.0, 3.0, 4.0], 2, 1).unwrap();
        assert_eq!(p, vec![vec![1.0, 2.0], vec![2.0, 3.0], vec![3.0, 4.0]]);
        let s = [5.0, 6.0, 7.0];
        assert_eq!(delay_embed(&s, 1, 1).unwrap(), vec![vec![5.0], vec![6.0], vec![7.0]]);
        assert_eq!(delay_embed(&vec![0.0; 200], 3, 2).unwrap().len(), 196);
        assert!(matches!(delay_embed(&[1.0, 2.0], 3, 1), Err(ChaosError::TooShort { .. })));
    }

    #[test]
    fn direct_estimator_examples() {
        let exp: Vec<f64> = (0..200).map(|t| 1e-6 * (0.1 * t as f64).exp()).collect();
        assert_abs_diff_eq!(direct_divergence_le(&exp).unwrap(), 0.1, epsilon = 1e-9);
        assert_eq!(direct_divergence_le(&[3.0; 50]).unwrap(), 0.0);
        let halving: Vec<f64> = (0..30).map(|t| 0.5f64.powi(t)).collect();
        assert_abs_diff_eq!(direct_divergence_le(&halving).unwrap(), -std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(matches!(direct_divergence_le(&[0.0, 1.0]), Err(ChaosError::ZeroMagnitude(_))));
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(
            rosenstein_le(&[0.25; 200], &EmbeddingConfig::default()),
            Err(ChaosError::Degenerate)
        ));
    }

    #[test]
    fn ramp_has_no_positive_exponent() {
        let ramp: Vec<f64> = (0..200).map(|t| t as f64 * 0.01).collect();
        match rosenstein_le(&ramp, &EmbeddingConfig::default()) {
            Ok(l) => assert!(l <= 1e-9, "ramp gave {l}"),
            Err(ChaosError::Degenerate | ChaosError::InsufficientData { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn pure_exponential_matches_direct_estimator() {
        let exp: Vec<f64> = (0..200).map(|t| 1e-6 * (0.1 * t as f64).exp()).collect();
        let r = rosenstein_le(&exp, &EmbeddingConfig::default()).unwrap();
        let d = direct_divergence_le(&exp).unwrap();
        assert!((r - d).abs() < 0.05, "rosenstein {r}, direct {d}");
    }

    #[test]
    fn windowed_logistic_segments_near_ln2() {
        let cfg = EmbeddingConfig {
            dim: 2,
            fit_range: (0, 3),
            ..EmbeddingConfig::default()
        };
        let ws = window(ConnectionId::FIRST, &logistic(1000, 0.3), 200).unwrap();
        let ls = windowed_le(&ws, &cfg).unwrap();
        assert_eq!(ls.len(), 5);
        for l in &ls.values {
            assert!((l - std::f64::consts::LN_2).abs() < 0.15, "window lambda {l}");
        }
    }

    #[test]
    fn masked_connection_is_unanalyzable() {
        let ws = window(ConnectionId::FIRST, &[0.0; 1000], 200).unwrap();
        assert!(matches!(
            windowed_le(&ws, &EmbeddingConfig::default()),
            Err(ChaosError::Unanalyzable(c)) if c == ConnectionId::FIRST
        ));
    }

    #[test]
    fn partially_degenerate_windows_are_flagged() {
        let mut v = logistic(400, 0.2);
        v[200..].fill(0.5);
        let ws = window(ConnectionId::FIRST, &v, 200).unwrap();
        let ls = windowed_le(&ws, &EmbeddingConfig::default()).unwrap();
        assert_eq!(ls.degenerate, vec![false, true]);
        assert_eq!(ls.values[1], 0.0);
    }

    #[test]
    fn short_window_config_is_rejected() {
        let ws = window(ConnectionId::FIRST, &logistic(40, 0.2), 20).unwrap();
        assert!(matches!(
            windowed_le(&ws, &EmbeddingConfig::default()),
            Err(ChaosError::InvalidConfig(_))
        ));
    }

    #[test]
    fn lambda_csv_layout() {
        let s = LambdaSeries {
            connection: ConnectionId::new(2, 1, 3),
            values: vec![0.5, 0.0],
            degenerate: vec![false, true],
        };
        let mut buf = Vec::new();
        write_lambda_csv(&mut buf, [&s]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "layer,to,from,window_index,lambda,degenerate\n2,1,3,0,0.5,0\n2,1,3,1,0,1\n"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn scale_and_shift_invariance(x0 in 0.05f64..0.95, c in 0.01f64..100.0, shift in -10.0f64..10.0) {
            let s = logistic(200, x0);
            let cfg = EmbeddingConfig::default();
            let base = rosenstein_le(&s, &cfg).unwrap();
            let scaled: Vec<f64> = s.iter().map(|v| c * v).collect();
            let shifted: Vec<f64> = s.iter().map(|v| v + shift).collect();
            prop_assert!((rosenstein_le(&scaled, &cfg).unwrap() - base).abs() < 1e-9);
            prop_assert!((rosenstein_le(&shifted, &cfg).unwrap() - base).abs() < 1e-9);
        }
    }
}

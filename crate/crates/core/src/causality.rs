//! Bivariate Granger causality from a connection's exponent series to the
//! misclassification series.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::chaos::LambdaSeries;
use crate::trajectory::ConnectionId;

#[derive(Debug, Error)]
pub enum CausalityError {
    #[error("design matrix has {rows} rows and {cols} columns; need rows >= cols")]
    Underdetermined { rows: usize, cols: usize },
    #[error("design matrix is rank deficient")]
    Rank,
    #[error("inputs contain non-finite values")]
    NonFinite,
    #[error("series lengths differ: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("series of length {len} is shorter than the minimum {min}")]
    TooShort { len: usize, min: usize },
    #[error("invalid Granger config: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LagSelection {
    Fixed { p: usize },
    Bic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrangerConfig {
    pub max_lag: usize,
    pub lag_selection: LagSelection,
    pub alpha: f64,
    /// Shortest series that is tested at all. Lag 1 needs 5 points for one
    /// residual degree of freedom.
    pub min_series_len: usize,
}

impl Default for GrangerConfig {
    fn default() -> Self {
        Self {
            max_lag: 4,
            lag_selection: LagSelection::Bic,
            alpha: 0.05,
            min_series_len: 5,
        }
    }
}

impl GrangerConfig {
    pub fn validate(&self) -> Result<(), CausalityError> {
        if self.max_lag == 0 {
            return Err(CausalityError::InvalidConfig("max_lag must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CausalityError::InvalidConfig(format!("alpha {} must be in (0, 1)", self.alpha)));
        }
        if let LagSelection::Fixed { p } = self.lag_selection {
            if p == 0 {
                return Err(CausalityError::InvalidConfig("fixed lag must be >= 1".into()));
            }
        }
        if self.min_series_len < 5 {
            return Err(CausalityError::InvalidConfig("min_series_len must be >= 5".into()));
        }
        Ok(())
    }
}

/// Largest lag that leaves at least one residual degree of freedom for a
/// series of length `t`: `(t - p) - (2p + 1) >= 1`.
pub fn lag_cap(t: usize) -> usize {
    t.saturating_sub(2) / 3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrangerFlag {
    /// x or y is constant; reported as non-causal.
    Degenerate,
    /// Collinear lags; reported as non-causal.
    RankDeficient,
    /// The requested lag did not fit the series length and was reduced.
    LagShrunk,
    /// Every exponent window was degenerate; reported as non-causal.
    Unanalyzable,
}

impl GrangerFlag {
    fn as_str(self) -> &'static str {
        match self {
            GrangerFlag::Degenerate => "degenerate",
            GrangerFlag::RankDeficient => "rank_deficient",
            GrangerFlag::LagShrunk => "lag_shrunk",
            GrangerFlag::Unanalyzable => "unanalyzable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrangerResult {
    pub connection: ConnectionId,
    pub lag_used: usize,
    pub f_stat: f64,
    pub p_value: f64,
    pub causal: bool,
    pub dof: (usize, usize),
    pub flags: Vec<GrangerFlag>,
}

impl GrangerResult {
    /// Non-causal placeholder for series that could not be tested.
    pub fn non_causal(connection: ConnectionId, flag: GrangerFlag) -> Self {
        Self {
            connection,
            lag_used: 0,
            f_stat: 0.0,
            p_value: 1.0,
            causal: false,
            dof: (0, 0),
            flags: vec![flag],
        }
    }

    pub fn has_flag(&self, flag: GrangerFlag) -> bool {
        self.flags.contains(&flag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub rss: f64,
}

/// Least squares via Householder QR. Rank is judged from the diagonal of R.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit, CausalityError> {
    let (rows, cols) = x.shape();
    if rows < cols || cols == 0 {
        return Err(CausalityError::Underdetermined { rows, cols });
    }
    if y.len() != rows {
        return Err(CausalityError::LengthMismatch { x: rows, y: y.len() });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(CausalityError::NonFinite);
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let col_scale = (0..cols).map(|j| x.column(j).norm()).fold(0.0, f64::max);
    let tol = 1e-10 * col_scale.max(f64::MIN_POSITIVE);
    if (0..cols).any(|i| r[(i, i)].abs() <= tol) {
        return Err(CausalityError::Rank);
    }
    let qty = qr.q().transpose() * y;
    let coefficients = r.solve_upper_triangular(&qty).ok_or(CausalityError::Rank)?;
    let resid = y - x * &coefficients;
    Ok(OlsFit {
        rss: resid.norm_squared(),
        coefficients,
    })
}

/// Upper tail of the F(d1, d2) distribution via the regularized incomplete beta.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

fn is_constant(v: &[f64]) -> bool {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs())
}

/// Rows `start..t` of `[1, y_{t-1..t-p}, x_{t-1..t-p}]`; `x` omitted when `None`.
fn design(y: &[f64], x: Option<&[f64]>, p: usize, start: usize) -> (DMatrix<f64>, DVector<f64>) {
    let n = y.len() - start;
    let cols = 1 + p + x.map_or(0, |_| p);
    let mut m = DMatrix::zeros(n, cols);
    for (r, t) in (start..y.len()).enumerate() {
        m[(r, 0)] = 1.0;
        for l in 1..=p {
            m[(r, l)] = y[t - l];
            if let Some(x) = x {
                m[(r, p + l)] = x[t - l];
            }
        }
    }
    (m, DVector::from_column_slice(&y[start..]))
}

fn check_pair(x: &[f64], y: &[f64], cfg: &GrangerConfig) -> Result<(), CausalityError> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(CausalityError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < cfg.min_series_len {
        return Err(CausalityError::TooShort {
            len: x.len(),
            min: cfg.min_series_len,
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(CausalityError::NonFinite);
    }
    Ok(())
}

/// Lag for the test. In BIC mode every candidate is fitted on the same sample
/// (rows `max_lag..T`) so the criteria are comparable. `max_lag` is reduced
/// to [`lag_cap`] when the series is too short, with a warning.
pub fn select_lag(x: &[f64], y: &[f64], cfg: &GrangerConfig) -> Result<usize, CausalityError> {
    check_pair(x, y, cfg)?;
    let cap = lag_cap(x.len());
    let requested = match cfg.lag_selection {
        LagSelection::Fixed { p } => p,
        LagSelection::Bic => cfg.max_lag,
    };
    let max_lag = if requested > cap {
        log::debug!("lag {requested} does not fit a series of length {}; using {cap}", x.len());
        cap
    } else {
        requested
    };
    if let LagSelection::Fixed { .. } = cfg.lag_selection {
        return Ok(max_lag);
    }
    let n = (x.len() - max_lag) as f64;
    let mut best = (1usize, f64::INFINITY);
    for p in 1..=max_lag {
        let (m, v) = design(y, Some(x), p, max_lag);
        let fit = match ols_fit(&m, &v) {
            Ok(f) => f,
            Err(CausalityError::Rank) => continue,
            Err(e) => return Err(e),
        };
        let k = (2 * p + 1) as f64;
        let bic = n * (fit.rss.max(f64::MIN_POSITIVE) / n).ln() + k * n.ln();
        if bic < best.1 {
            best = (p, bic);
        }
    }
    Ok(best.0)
}

/// Does `x` Granger-cause `y`? Constant or collinear inputs yield a flagged
/// non-causal result rather than an error.
pub fn granger_test(connection: ConnectionId, x: &[f64], y: &[f64], cfg: &GrangerConfig) -> Result<GrangerResult, CausalityError> {
    check_pair(x, y, cfg)?;
    if is_constant(x) || is_constant(y) {
        return Ok(GrangerResult::non_causal(connection, GrangerFlag::Degenerate));
    }
    let requested = match cfg.lag_selection {
        LagSelection::Fixed { p } => p,
        LagSelection::Bic => cfg.max_lag,
    };
    let p = select_lag(x, y, cfg)?;
    let mut flags = Vec::new();
    if requested > lag_cap(x.len()) {
        flags.push(GrangerFlag::LagShrunk);
    }
    let (mr, v) = design(y, None, p, p);
    let (mu, _) = design(y, Some(x), p, p);
    let (restricted, unrestricted) = match (ols_fit(&mr, &v), ols_fit(&mu, &v)) {
        (Ok(r), Ok(u)) => (r, u),
        (Err(CausalityError::Rank), _) | (_, Err(CausalityError::Rank)) => {
            let mut res = GrangerResult::non_causal(connection, GrangerFlag::RankDeficient);
            res.lag_used = p;
            res.flags.extend(flags);
            return Ok(res);
        }
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    let d1 = p;
    let d2 = (x.len() - p) - (2 * p + 1);
    let rss_u = unrestricted.rss;
    let rss_r = restricted.rss.max(rss_u);
    let f_stat = if rss_u > 0.0 {
        ((rss_r - rss_u) / d1 as f64) / (rss_u / d2 as f64)
    } else if rss_r > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let p_value = f_sf(f_stat, d1 as f64, d2 as f64);
    Ok(GrangerResult {
        connection,
        lag_used: p,
        f_stat,
        p_value,
        causal: p_value < cfg.alpha,
        dof: (d1, d2),
        flags,
    })
}

/// Test every exponent series against `misclassification`, in parallel.
pub fn granger_sweep(
    lambdas: &[LambdaSeries],
    misclassification: &[f64],
    cfg: &GrangerConfig,
) -> Result<Vec<GrangerResult>, CausalityError> {
    lambdas
        .par_iter()
        .map(|l| granger_test(l.connection, &l.values, misclassification, cfg))
        .collect()
}

/// CSV with columns `layer,to,from,lag,f_stat,p_value,causal,flags`; flags are
/// `|`-separated.
pub fn write_granger_csv<'a>(mut w: impl Write, results: impl IntoIterator<Item = &'a GrangerResult>) -> Result<(), CausalityError> {
    writeln!(w, "layer,to,from,lag,f_stat,p_value,causal,flags")?;
    for r in results {
        let flags: Vec<&str> = r.flags.iter().map(|f| f.as_str()).collect();
        let c = r.connection;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            c.layer,
            c.to,
            c.from,
            r.lag_used,
            r.f_stat,
            r.p_value,
            u8::from(r.causal),
            flags.join("|")
        )?;
    }
    Ok(())
}

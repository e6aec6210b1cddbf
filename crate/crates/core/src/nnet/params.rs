use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LayerSpec, NnetError, TrainConfig};
use crate::trajectory::ConnectionId;

/// Weight initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InitScheme {
    /// `U[-k / sqrt(max(fan_out, fan_in)), +k / sqrt(max(fan_out, fan_in))]`.
    Uniform { k: f64 },
    /// `N(0, sigma^2)`.
    Gaussian { sigma: f64 },
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Uniform { k: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl DenseParams {
    pub fn zeros(spec: &LayerSpec) -> Self {
        Self {
            weights: (0..spec.n_layers()).map(|i| Array2::zeros(spec.weight_shape(i))).collect(),
            biases: spec.sizes[1..].iter().map(|&h| vec![0.0; h]).collect(),
        }
    }

    pub fn check(&self, spec: &LayerSpec) -> Result<(), NnetError> {
        if self.weights.len() != spec.n_layers() || self.biases.len() != spec.n_layers() {
            return Err(NnetError::Dimension(format!(
                "{} weight layers / {} bias layers for a {}-layer spec",
                self.weights.len(),
                self.biases.len(),
                spec.n_layers()
            )));
        }
        for i in 0..spec.n_layers() {
            if self.weights[i].dim() != spec.weight_shape(i) || self.biases[i].len() != spec.sizes[i + 1] {
                return Err(NnetError::Dimension(format!(
                    "layer {} has weights {:?} and {} biases, spec wants {:?}",
                    i + 1,
                    self.weights[i].dim(),
                    self.biases[i].len(),
                    spec.weight_shape(i)
                )));
            }
        }
        if self
            .weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(NnetError::Dimension("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn weight(&self, c: ConnectionId) -> f64 {
        self.weights[c.layer - 1][(c.to - 1, c.from - 1)]
    }

    pub fn weight_mut(&mut self, c: ConnectionId) -> &mut f64 {
        &mut self.weights[c.layer - 1][(c.to - 1, c.from - 1)]
    }

    /// Zero every weight the mask prunes.
    pub fn apply_mask(&mut self, mask: &Mask) {
        for (w, keep) in self.weights.iter_mut().zip(&mask.keep) {
            w.zip_mut_with(keep, |v, &k| {
                if !k {
                    *v = 0.0;
                }
            });
        }
    }

    pub fn n_weights(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }
}

/// Binary keep/prune matrices, one per weight matrix.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Mask {
    pub keep: Vec<Array2<bool>>,
}

impl Mask {
    pub fn full(spec: &LayerSpec) -> Self {
        Self {
            keep: (0..spec.n_layers())
                .map(|i| Array2::from_elem(spec.weight_shape(i), true))
                .collect(),
        }
    }

    pub fn check(&self, spec: &LayerSpec) -> Result<(), NnetError> {
        if self.keep.len() != spec.n_layers()
            || self.keep.iter().enumerate().any(|(i, k)| k.dim() != spec.weight_shape(i))
        {
            return Err(NnetError::Dimension("mask shape does not match layer spec".into()));
        }
        Ok(())
    }

    pub fn is_kept(&self, c: ConnectionId) -> bool {
        self.keep[c.layer - 1][(c.to - 1, c.from - 1)]
    }

    pub fn set(&mut self, c: ConnectionId, keep: bool) {
        self.keep[c.layer - 1][(c.to - 1, c.from - 1)] = keep;
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().map(|k| k.iter().filter(|&&b| b).count()).sum()
    }

    pub fn pruned(&self) -> usize {
        self.keep.iter().map(|k| k.iter().filter(|&&b| !b).count()).sum()
    }
}

/// Initial parameters; biases start at zero. Depends only on `(spec, cfg.seed, cfg.init)`.
pub fn init_params(spec: &LayerSpec, cfg: &TrainConfig) -> Result<DenseParams, NnetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = DenseParams::zeros(spec);
    for (i, w) in params.weights.iter_mut().enumerate() {
        match cfg.init {
            InitScheme::Uniform { k } => {
                let (rows, cols) = spec.weight_shape(i);
                let bound = k / (rows.max(cols) as f64).sqrt();
                if !(bound > 0.0 && bound.is_finite()) {
                    return Err(NnetError::InvalidConfig(format!("uniform init constant {k} must be > 0")));
                }
                w.mapv_inplace(|_| rng.random_range(-bound..=bound));
            }
            InitScheme::Gaussian { sigma } => {
                let normal = Normal::new(0.0, sigma)
                    .map_err(|e| NnetError::InvalidConfig(format!("gaussian init sigma {sigma}: {e}")))?;
                w.mapv_inplace(|_| normal.sample(&mut rng));
            }
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64, init: InitScheme) -> TrainConfig {
        TrainConfig {
            seed,
            init,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = LayerSpec::new(vec![4, 8, 1]).unwrap();
        let a = init_params(&spec, &cfg(3, InitScheme::default())).unwrap();
        let b = init_params(&spec, &cfg(3, InitScheme::default())).unwrap();
        assert_eq!(a, b);
        let c = init_params(&spec, &cfg(4, InitScheme::default())).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_entries_respect_fan_bound() {
        let spec = LayerSpec::new(vec![4, 8, 1]).unwrap();
        let p = init_params(&spec, &cfg(0, InitScheme::default())).unwrap();
        let bound = 1.0 / 8f64.sqrt();
        assert!(p.weights[0].iter().all(|v| v.abs() <= bound));
        assert!(p.weights[1].iter().all(|v| v.abs() <= bound));
        assert!(p.biases.iter().flatten().all(|&b| b == 0.0));
    }

    #[test]
    fn cancer_architecture_has_sixty_weights() {
        let spec = LayerSpec::new(vec![9, 6, 1]).unwrap();
        let p = init_params(&spec, &cfg(0, InitScheme::default())).unwrap();
        assert_eq!(p.n_weights(), 60);
        p.check(&spec).unwrap();
    }

    #[test]
    fn gaussian_init_has_requested_spread() {
        let spec = LayerSpec::new(vec![100, 100, 2]).unwrap();
        let p = init_params(&spec, &cfg(1, InitScheme::Gaussian { sigma: 0.5 })).unwrap();
        let w = &p.weights[0];
        let mean = w.mean().unwrap();
        let sd = (w.mapv(|v| (v - mean).powi(2)).mean().unwrap()).sqrt();
        assert!(mean.abs() < 0.02);
        assert!((sd - 0.5).abs() < 0.02);
    }

    #[test]
    fn mask_counts_and_application() {
        let spec = LayerSpec::new(vec![2, 2, 1]).unwrap();
        let mut p = init_params(&spec, &cfg(0, InitScheme::default())).unwrap();
        let mut m = Mask::full(&spec);
        let c = ConnectionId::new(1, 2, 1);
        m.set(c, false);
        assert_eq!(m.kept(), 5);
        assert_eq!(m.pruned(), 1);
        p.apply_mask(&m);
        assert_eq!(p.weight(c), 0.0);
    }
}

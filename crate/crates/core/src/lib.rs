//! Chaos- and causality-driven pruning of small multilayer perceptrons.
//!
//! The pipeline trains a dense sigmoid MLP while recording every connection's
//! weight at every SGD iteration, replays the same training with a tiny
//! perturbation on the first weight, and estimates windowed largest Lyapunov
//! exponents of the per-connection difference series. Connections whose
//! exponent series Granger-causes the per-window misclassification rate are
//! pruned, and the masked network is retrained from the original
//! initialization.
//!
//! Modules, roughly bottom-up:
//!
//! - [`nnet`]: deterministic MLP, mask-aware SGD, evaluation, checkpoint files.
//! - [`data`]: CSV / IDX loaders, stratified splits, synthetic generators.
//! - [`trajectory`]: weight trajectory stores, perturbed replay, windowing.
//! - [`chaos`]: delay embedding and Rosenstein-style Lyapunov estimation.
//! - [`causality`]: OLS and the nested-model Granger F-test.
//! - [`pruning`]: masks from causality results and the random/magnitude baselines.
//! - [`diagnostics`]: spectral power-law fits, Kernel SHAP, closeness checks.

pub mod causality;
pub mod chaos;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod nnet;
pub mod pruning;
pub mod trajectory;

pub use error::{Error, Result};

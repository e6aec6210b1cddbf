use thiserror::Error;

use crate::causality::CausalityError;
use crate::chaos::ChaosError;
use crate::data::DataError;
use crate::diagnostics::DiagnosticsError;
use crate::nnet::NnetError;
use crate::pruning::PruningError;
use crate::trajectory::TrajectoryError;

/// Crate-level error, wrapping the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Chaos(#[from] ChaosError),
    #[error(transparent)]
    Causality(#[from] CausalityError),
    #[error(transparent)]
    Pruning(#[from] PruningError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

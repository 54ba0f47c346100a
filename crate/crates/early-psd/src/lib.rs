//! Estimation of per-source early power spectral densities and relative early
//! transfer functions (RETFs) from multichannel STFT-domain correlation
//! matrices.
//!
//! The crate provides two estimators operating on a rank-N early correlation
//! matrix: a Frobenius-norm least-squares solver with a non-negativity
//! constraint ([`conventional`]) and a square-root solver that alternates an
//! orthogonal Procrustes step with a closed-form PSD-square-root step
//! ([`procrustes`]). The early matrix itself is obtained from a GEVD-based
//! subspace front end ([`subspace`]), and the square-root solution feeds a
//! gated recursive RETF update ([`retf`]). Supporting modules cover dense
//! complex decompositions ([`linalg`]), model-based scenario generation
//! ([`scene`]), evaluation metrics ([`metrics`]) and STFT/audio I/O
//! ([`stft`], [`wav`], [`rir`]).

pub mod conventional;
pub mod linalg;
pub mod metrics;
pub mod procrustes;
pub mod retf;
pub mod rir;
pub mod scene;
pub mod stft;
pub mod subspace;
pub mod types;
pub mod wav;

pub use linalg::HermitianMatrix;
pub use types::{EarlySqrt, PsdVector, RetfMatrix};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Dense complex matrix used throughout the crate.
pub type CMat = DMatrix<Complex64>;
/// Dense complex column vector.
pub type CVec = DVector<Complex64>;
/// Dense real column vector.
pub type RVec = DVector<f64>;

/// Errors produced by the estimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input violated a documented precondition (non-finite entries,
    /// dimension mismatch, empty input, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A nominally positive definite matrix could not be factorized, even
    /// after the jitter rescue.
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    /// The normal equations of the conventional estimator are singular
    /// (e.g. duplicated RETF columns at spatial-aliasing frequencies).
    #[error("singular normal equations")]
    SingularNormalEquations,
    /// A reference quantity required by a metric is identically zero.
    #[error("invalid reference: {0}")]
    InvalidReference(String),
    /// Audio/file I/O failure.
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

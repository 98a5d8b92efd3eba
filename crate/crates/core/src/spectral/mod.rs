//! Fourier-space vector fields on T³: Leray projection, Bessel–Sobolev norms,
//! and dealiased pseudospectral products.

mod fft;
mod field;
mod grid;
mod ops;
mod oracle;
mod random;

use thiserror::Error;

pub use fft::{to_physical_pair, to_spectral_pair};
pub use field::{Coeff3, SpectralTensorField, SpectralVectorField};
pub use grid::{GridSpec, Wavevector};
pub use ops::{
    leray_project, leray_project_in_place, nonlinear_term, product_inequality_ratio,
    projected_divergence, pseudospectral_product, sobolev_norm, to_physical, transport_term,
    TransportField, DIVERGENCE_TOL,
};
pub use oracle::{
    brute_force_convolution, brute_force_nonlinear, brute_force_transport, MAX_ORACLE_MODES,
};
pub use random::{random_field, random_solenoidal_field, single_shell_field};

pub(crate) use ops::{constant_transport, project_mode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("grid must have an even number of modes per axis >= 4, got {0}")]
    InvalidGrid(usize),
    #[error("grid mismatch: {left} vs {right} modes per axis")]
    GridMismatch { left: usize, right: usize },
    #[error("coefficient vector has length {found}, grid needs {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("mode {0:?} lies outside the retained cube")]
    ModeOutOfRange(Wavevector),
    #[error("transport field is not divergence-free (worst per-mode defect {0:e})")]
    NotDivergenceFree(f64),
    #[error("zero input field")]
    ZeroInput,
    #[error("brute-force oracle limited to N <= {max}, got {modes}")]
    GridTooLarge { modes: usize, max: usize },
}

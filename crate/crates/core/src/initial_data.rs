//! Initial data families, rescaled to `‖u₀‖_{H^{1/2}} = ε₀`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{random_solenoidal_field, sobolev_norm, GridSpec, SpectralVectorField};

/// Key offset separating data streams from noise streams of the same seed.
const DATA_KEY: u64 = 0x9E37_79B9_7F4A_7C15;

/// Relative weight of the random perturbation in the mixed family.
const MIXED_PERTURBATION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFamily {
    Zero,
    /// `(cos x₃, 0, 0)` up to scaling.
    Shear,
    /// Randomized-phase divergence-free field with `|û_k| ∝ (1+|k|²)^{-1}`.
    Random,
    /// Shear plus a random perturbation of relative size 0.3.
    Mixed,
}

impl DataFamily {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" => Some(Self::Zero),
            "shear" => Some(Self::Shear),
            "random" => Some(Self::Random),
            "mixed" => Some(Self::Mixed),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Shear => "shear",
            Self::Random => "random",
            Self::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("eps0 must be finite and nonnegative, got {0}")]
    InvalidSize(f64),
}

fn data_rng(base_seed: u64, substream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(base_seed.wrapping_add(DATA_KEY));
    rng.set_stream(substream);
    rng
}

fn unit_shear(grid: GridSpec) -> SpectralVectorField {
    SpectralVectorField::shear(grid, 1, Complex64::new(0.5, 0.0)).expect("|k| = 1 is retained")
}

fn rescale(u: SpectralVectorField, eps0: f64) -> SpectralVectorField {
    let n = sobolev_norm(&u, 0.5);
    u.scaled(eps0 / n)
}

/// Sample `substream` of the family, exactly divergence- and average-free up
/// to rounding, with `‖u₀‖_{H^{1/2}} = ε₀`.
pub fn initial_data(
    grid: GridSpec,
    family: DataFamily,
    eps0: f64,
    base_seed: u64,
    substream: u64,
) -> Result<SpectralVectorField, DataError> {
    if !(eps0 >= 0.0 && eps0.is_finite()) {
        return Err(DataError::InvalidSize(eps0));
    }
    if eps0 == 0.0 || family == DataFamily::Zero {
        return Ok(SpectralVectorField::zeros(grid));
    }
    let u = match family {
        DataFamily::Zero => unreachable!(),
        DataFamily::Shear => unit_shear(grid),
        DataFamily::Random => random_solenoidal_field(grid, 2.0, &mut data_rng(base_seed, substream)),
        DataFamily::Mixed => {
            let shear = rescale(unit_shear(grid), 1.0);
            let pert = random_solenoidal_field(grid, 2.0, &mut data_rng(base_seed, substream));
            let mut u = shear;
            u.axpy(MIXED_PERTURBATION, &rescale(pert, 1.0))
                .expect("same grid");
            u
        }
    };
    Ok(rescale(u, eps0))
}

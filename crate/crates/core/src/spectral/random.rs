use num_complex::Complex64;
use rand::Rng;

use super::field::SpectralVectorField;
use super::grid::{k_norm2, GridSpec};
use super::ops::leray_project_in_place;

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box–Muller, cosine branch only
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Real (Hermitian) field with i.i.d. complex Gaussian coefficients of
/// amplitude `(1+|k|²)^{-decay/2}`. Not projected.
pub fn random_field<R: Rng + ?Sized>(grid: GridSpec, decay: f64, rng: &mut R) -> SpectralVectorField {
    let mut u = SpectralVectorField::zeros(grid);
    for i in 0..grid.len() {
        let j = grid.conjugate_index(i);
        if j <= i {
            continue;
        }
        let k = grid.wavevector(i);
        let amp = (1.0 + k_norm2(k)).powf(-0.5 * decay);
        let mut c = [Complex64::new(0.0, 0.0); 3];
        for z in &mut c {
            *z = Complex64::new(gaussian(rng), gaussian(rng)) * amp;
        }
        u.set_mode_pair(k, c).expect("retained mode");
    }
    u
}

/// Divergence- and average-free random field.
pub fn random_solenoidal_field<R: Rng + ?Sized>(
    grid: GridSpec,
    decay: f64,
    rng: &mut R,
) -> SpectralVectorField {
    let mut u = random_field(grid, decay, rng);
    leray_project_in_place(&mut u);
    u
}

/// Random divergence-free field supported on a single shell `|k|² = shell`.
pub fn single_shell_field<R: Rng + ?Sized>(grid: GridSpec, shell: i64, rng: &mut R) -> SpectralVectorField {
    let mut u = random_solenoidal_field(grid, 0.0, rng);
    for (i, c) in u.coeffs_mut().iter_mut().enumerate() {
        if k_norm2(grid.wavevector(i)) as i64 != shell {
            *c = [Complex64::new(0.0, 0.0); 3];
        }
    }
    u
}

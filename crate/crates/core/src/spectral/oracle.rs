//! Exact convolution sums used to check the pseudospectral products.

use num_complex::Complex64;

use super::field::{SpectralTensorField, SpectralVectorField};
use super::ops::{project_mode, projected_divergence, TransportField};
use super::SpectralError;

/// Largest grid accepted by the `O(K⁶)` oracles.
pub const MAX_ORACLE_MODES: usize = 8;

fn guard(u: &SpectralVectorField, v: &SpectralVectorField) -> Result<(), SpectralError> {
    u.check_grid(v)?;
    let n = u.grid().modes_per_axis();
    if n > MAX_ORACLE_MODES {
        return Err(SpectralError::GridTooLarge {
            modes: n,
            max: MAX_ORACLE_MODES,
        });
    }
    Ok(())
}

/// Exact truncated convolution `Σ_{p+q=k} û_i(p) v̂_j(q)` on the retained cube.
pub fn brute_force_convolution(
    u: &SpectralVectorField,
    v: &SpectralVectorField,
) -> Result<SpectralTensorField, SpectralError> {
    guard(u, v)?;
    let grid = u.grid();
    let mut out = SpectralTensorField::zeros(grid);
    for (p_idx, up) in u.coeffs().iter().enumerate() {
        let p = grid.wavevector(p_idx);
        for (q_idx, vq) in v.coeffs().iter().enumerate() {
            let q = grid.wavevector(q_idx);
            let k = [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
            let Some(k_idx) = grid.index(k) else { continue };
            let t = &mut out.coeffs_mut()[k_idx];
            for i in 0..3 {
                for j in 0..3 {
                    t[i][j] += up[i] * vq[j];
                }
            }
        }
    }
    Ok(out)
}

/// `P ∇·(u ⊗ v)` through the exact convolution.
pub fn brute_force_nonlinear(
    u: &SpectralVectorField,
    v: &SpectralVectorField,
) -> Result<SpectralVectorField, SpectralError> {
    Ok(projected_divergence(&brute_force_convolution(u, v)?))
}

/// `P((b·∇)u)` through the exact convolution `Σ_{p+q=k} (b̂(p)·iq) û(q)`.
pub fn brute_force_transport(
    b: &TransportField,
    u: &SpectralVectorField,
) -> Result<SpectralVectorField, SpectralError> {
    let grid = u.grid();
    let bf = match b {
        TransportField::Constant(beta) => {
            let mut f = SpectralVectorField::zeros(grid);
            f.coeffs_mut()[grid.zero_index()] = beta.map(|x| Complex64::new(x, 0.0));
            f
        }
        TransportField::Field(f) => f.clone(),
    };
    guard(&bf, u)?;
    let mut out = SpectralVectorField::zeros(grid);
    for (p_idx, bp) in bf.coeffs().iter().enumerate() {
        let p = grid.wavevector(p_idx);
        for (q_idx, uq) in u.coeffs().iter().enumerate() {
            let q = grid.wavevector(q_idx);
            let k = [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
            let Some(k_idx) = grid.index(k) else { continue };
            let bdq = bp[0] * q[0] as f64 + bp[1] * q[1] as f64 + bp[2] * q[2] as f64;
            let ibdq = Complex64::new(-bdq.im, bdq.re);
            let c = &mut out.coeffs_mut()[k_idx];
            for i in 0..3 {
                c[i] += ibdq * uq[i];
            }
        }
    }
    for (m, c) in out.coeffs_mut().iter_mut().enumerate() {
        project_mode(grid.wavevector(m), c);
    }
    Ok(out)
}

use num_complex::Complex64;

use super::fft::{to_physical_pair, to_spectral_pair};
use super::field::{mode_energy, Coeff3, SpectralTensorField, SpectralVectorField};
use super::grid::{k_dot, k_norm2, GridSpec};
use super::SpectralError;

/// Per-mode divergence tolerance used to accept transport fields.
pub const DIVERGENCE_TOL: f64 = 1e-10;

/// Advecting field `b` of the transport term.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportField {
    Constant([f64; 3]),
    Field(SpectralVectorField),
}

/// Projects a single mode onto `k^⊥`; the zero mode is removed.
#[inline]
pub(crate) fn project_mode(k: [i64; 3], c: &mut Coeff3) {
    let kk = k_norm2(k);
    if kk == 0.0 {
        *c = [Complex64::new(0.0, 0.0); 3];
        return;
    }
    let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
    let dot = (c[0] * kf[0] + c[1] * kf[1] + c[2] * kf[2]) / kk;
    for d in 0..3 {
        c[d] -= dot * kf[d];
    }
}

/// Average-free Leray projection: `û_k − k (k·û_k)/|k|²`, with `û_0 = 0`.
pub fn leray_project(u: &SpectralVectorField) -> SpectralVectorField {
    let mut out = u.clone();
    leray_project_in_place(&mut out);
    out
}

pub fn leray_project_in_place(u: &mut SpectralVectorField) {
    let grid = u.grid();
    for (i, c) in u.coeffs_mut().iter_mut().enumerate() {
        project_mode(grid.wavevector(i), c);
    }
}

/// Bessel–Sobolev norm `sqrt(Σ_k (1+|k|²)^s |û_k|²)`.
pub fn sobolev_norm(u: &SpectralVectorField, s: f64) -> f64 {
    let grid = u.grid();
    u.coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| (1.0 + k_norm2(grid.wavevector(i))).powf(s) * mode_energy(c))
        .sum::<f64>()
        .sqrt()
}

fn component(u: &SpectralVectorField, d: usize) -> Vec<Complex64> {
    u.coeffs().iter().map(|c| c[d]).collect()
}

/// Physical values of the three components of `u`.
pub fn to_physical(u: &SpectralVectorField) -> [Vec<f64>; 3] {
    let g = u.grid();
    let (p0, p1) = to_physical_pair(g, &component(u, 0), Some(&component(u, 1)));
    let (p2, _) = to_physical_pair(g, &component(u, 2), None);
    [p0, p1, p2]
}

/// Forward-transforms a list of real physical fields, two per transform.
fn to_spectral_many(grid: GridSpec, fields: &[Vec<f64>]) -> Vec<Vec<Complex64>> {
    let mut out = Vec::with_capacity(fields.len());
    for chunk in fields.chunks(2) {
        if let [a, b] = chunk {
            let (sa, sb) = to_spectral_pair(grid, a, b);
            out.push(sa);
            out.push(sb);
        } else {
            let zeros = vec![0.0; chunk[0].len()];
            out.push(to_spectral_pair(grid, &chunk[0], &zeros).0);
        }
    }
    out
}

/// Dealiased pseudospectral product, entry `(i, j)` = `(u_i v_j)^` on the
/// retained modes.
pub fn pseudospectral_product(
    u: &SpectralVectorField,
    v: &SpectralVectorField,
) -> Result<SpectralTensorField, SpectralError> {
    u.check_grid(v)?;
    let grid = u.grid();
    let same = std::ptr::eq(u, v) || u == v;
    let pu = to_physical(u);
    let mut out = SpectralTensorField::zeros(grid);
    if same {
        let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        let prods: Vec<Vec<f64>> = pairs
            .iter()
            .map(|&(i, j)| pu[i].iter().zip(&pu[j]).map(|(a, b)| a * b).collect())
            .collect();
        let spec = to_spectral_many(grid, &prods);
        for (p, &(i, j)) in pairs.iter().enumerate() {
            for (m, t) in out.coeffs_mut().iter_mut().enumerate() {
                t[i][j] = spec[p][m];
                t[j][i] = spec[p][m];
            }
        }
    } else {
        let pv = to_physical(v);
        let mut prods = Vec::with_capacity(9);
        for i in 0..3 {
            for j in 0..3 {
                prods.push(pu[i].iter().zip(&pv[j]).map(|(a, b)| a * b).collect::<Vec<f64>>());
            }
        }
        let spec = to_spectral_many(grid, &prods);
        for i in 0..3 {
            for j in 0..3 {
                for (m, t) in out.coeffs_mut().iter_mut().enumerate() {
                    t[i][j] = spec[3 * i + j][m];
                }
            }
        }
    }
    Ok(out)
}

/// `P ∇·W` for a tensor `W_{ij} = (u_i v_j)^`, with `(∇·W)_i = Σ_j ∂_j W_{ji}`.
pub fn projected_divergence(w: &SpectralTensorField) -> SpectralVectorField {
    let grid = w.grid();
    let mut out = SpectralVectorField::zeros(grid);
    for (m, c) in out.coeffs_mut().iter_mut().enumerate() {
        let k = grid.wavevector(m);
        let t = &w.coeffs()[m];
        for i in 0..3 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, kj) in k.iter().enumerate() {
                acc += t[j][i] * *kj as f64;
            }
            // multiply by i
            c[i] = Complex64::new(-acc.im, acc.re);
        }
        project_mode(k, c);
    }
    out
}

/// `P ∇·(u ⊗ v)`, which equals `P (u·∇) v` for divergence-free `u`.
pub fn nonlinear_term(
    u: &SpectralVectorField,
    v: &SpectralVectorField,
) -> Result<SpectralVectorField, SpectralError> {
    Ok(projected_divergence(&pseudospectral_product(u, v)?))
}

fn check_divergence_free(b: &SpectralVectorField) -> Result<(), SpectralError> {
    if b.is_divergence_free(DIVERGENCE_TOL) {
        Ok(())
    } else {
        Err(SpectralError::NotDivergenceFree(b.divergence_defect()))
    }
}

/// `P((b·∇) u)`. Constant `b` is the exact multiplier `i (b·k) û_k`;
/// a spectral `b` goes through the dealiased physical-space product.
pub fn transport_term(
    b: &TransportField,
    u: &SpectralVectorField,
) -> Result<SpectralVectorField, SpectralError> {
    match b {
        TransportField::Constant(beta) => Ok(constant_transport(*beta, u)),
        TransportField::Field(bf) => {
            u.check_grid(bf)?;
            check_divergence_free(bf)?;
            Ok(field_transport(bf, u))
        }
    }
}

pub(crate) fn constant_transport(beta: [f64; 3], u: &SpectralVectorField) -> SpectralVectorField {
    let grid = u.grid();
    let mut out = u.clone();
    for (m, c) in out.coeffs_mut().iter_mut().enumerate() {
        let k = grid.wavevector(m);
        let s = k_dot(k, beta);
        for z in c.iter_mut() {
            *z = Complex64::new(-z.im * s, z.re * s);
        }
        project_mode(k, c);
    }
    out
}

fn field_transport(b: &SpectralVectorField, u: &SpectralVectorField) -> SpectralVectorField {
    let grid = u.grid();
    let pb = to_physical(b);
    // ∂_j u_i for all (i, j), packed two per transform
    let mut grads: Vec<Vec<Complex64>> = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            grads.push(
                u.coeffs()
                    .iter()
                    .enumerate()
                    .map(|(m, c)| {
                        let kj = grid.wavevector(m)[j] as f64;
                        Complex64::new(-c[i].im * kj, c[i].re * kj)
                    })
                    .collect(),
            );
        }
    }
    let mut phys: Vec<Vec<f64>> = Vec::with_capacity(9);
    for pair in grads.chunks(2) {
        let (a, bb) = to_physical_pair(grid, &pair[0], pair.get(1).map(|v| v.as_slice()));
        phys.push(a);
        if pair.len() == 2 {
            phys.push(bb);
        }
    }
    let npts = pb[0].len();
    let mut prods = vec![vec![0.0; npts]; 3];
    for (i, prod) in prods.iter_mut().enumerate() {
        for j in 0..3 {
            let g = &phys[3 * i + j];
            for x in 0..npts {
                prod[x] += pb[j][x] * g[x];
            }
        }
    }
    let spec = to_spectral_many(grid, &prods);
    let mut out = SpectralVectorField::zeros(grid);
    for (m, c) in out.coeffs_mut().iter_mut().enumerate() {
        *c = [spec[0][m], spec[1][m], spec[2][m]];
        project_mode(grid.wavevector(m), c);
    }
    out
}

/// Empirical constant of the product estimate
/// `‖u⊗v‖_{H^{1/2}} / (‖u‖_{H^{1/2}}‖v‖_{H^{3/2}} + ‖v‖_{H^{1/2}}‖u‖_{H^{3/2}})`.
pub fn product_inequality_ratio(
    u: &SpectralVectorField,
    v: &SpectralVectorField,
) -> Result<f64, SpectralError> {
    u.check_grid(v)?;
    if u.is_zero() || v.is_zero() {
        return Err(SpectralError::ZeroInput);
    }
    let num = pseudospectral_product(u, v)?.sobolev_norm(0.5);
    let den = sobolev_norm(u, 0.5) * sobolev_norm(v, 1.5) + sobolev_norm(v, 0.5) * sobolev_norm(u, 1.5);
    Ok(num / den)
}

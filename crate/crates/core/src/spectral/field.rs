use num_complex::Complex64;

use super::grid::{k_norm2, GridSpec, Wavevector};
use super::SpectralError;

/// Complex 3-vector of Fourier coefficients at one mode.
pub type Coeff3 = [Complex64; 3];

const ZERO3: Coeff3 = [Complex64::new(0.0, 0.0); 3];

/// Truncated Fourier representation of a real 3-component field on T³.
///
/// `u(x) = Σ_k û_k e^{ik·x}` over the retained cube, so that
/// `‖u‖²_{L²} = Σ_k |û_k|²` with the normalized torus measure.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralVectorField {
    grid: GridSpec,
    coeffs: Vec<Coeff3>,
}

impl SpectralVectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            coeffs: vec![ZERO3; grid.len()],
        }
    }

    /// Builds a field mode by mode. The closure is evaluated on every retained
    /// wavevector; Hermitian symmetry is the caller's responsibility.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(Wavevector) -> Coeff3) -> Self {
        let coeffs = grid.wavevectors().map(&mut f).collect();
        Self { grid, coeffs }
    }

    pub fn from_coeffs(grid: GridSpec, coeffs: Vec<Coeff3>) -> Result<Self, SpectralError> {
        if coeffs.len() != grid.len() {
            return Err(SpectralError::LengthMismatch {
                expected: grid.len(),
                found: coeffs.len(),
            });
        }
        Ok(Self { grid, coeffs })
    }

    /// Unidirectional shear `(f(x₃), 0, 0)` carried by the modes `±(0,0,k₃)`
    /// with `û(0,0,k₃) = (amplitude, 0, 0)`.
    pub fn shear(grid: GridSpec, k3: i64, amplitude: Complex64) -> Result<Self, SpectralError> {
        let mut u = Self::zeros(grid);
        u.set_mode_pair([0, 0, k3], [amplitude, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)])?;
        Ok(u)
    }

    /// Gradient `∇q` of a scalar with coefficients `q̂_k` (indexed like the grid).
    pub fn gradient_of(grid: GridSpec, scalar: &[Complex64]) -> Result<Self, SpectralError> {
        if scalar.len() != grid.len() {
            return Err(SpectralError::LengthMismatch {
                expected: grid.len(),
                found: scalar.len(),
            });
        }
        Ok(Self::from_fn(grid, |k| {
            let q = scalar[grid.index(k).expect("retained")];
            let iq = Complex64::new(-q.im, q.re);
            [iq * k[0] as f64, iq * k[1] as f64, iq * k[2] as f64]
        }))
    }

    #[inline]
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    #[inline]
    pub fn coeffs(&self) -> &[Coeff3] {
        &self.coeffs
    }

    #[inline]
    pub fn coeffs_mut(&mut self) -> &mut [Coeff3] {
        &mut self.coeffs
    }

    pub fn mode(&self, k: Wavevector) -> Option<Coeff3> {
        self.grid.index(k).map(|i| self.coeffs[i])
    }

    /// Sets `û(k) = c` and `û(-k) = conj(c)`.
    pub fn set_mode_pair(&mut self, k: Wavevector, c: Coeff3) -> Result<(), SpectralError> {
        let i = self.grid.index(k).ok_or(SpectralError::ModeOutOfRange(k))?;
        let j = self.grid.conjugate_index(i);
        if i == j {
            self.coeffs[i] = c.map(|z| Complex64::new(z.re, 0.0));
        } else {
            self.coeffs[i] = c;
            self.coeffs[j] = c.map(|z| z.conj());
        }
        Ok(())
    }

    pub(crate) fn check_grid(&self, other: &Self) -> Result<(), SpectralError> {
        if self.grid != other.grid {
            return Err(SpectralError::GridMismatch {
                left: self.grid.modes_per_axis(),
                right: other.grid.modes_per_axis(),
            });
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for c in &mut self.coeffs {
            for z in c.iter_mut() {
                *z *= alpha;
            }
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<(), SpectralError> {
        self.check_grid(other)?;
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            for d in 0..3 {
                a[d] += b[d] * alpha;
            }
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self, SpectralError> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self, SpectralError> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs
            .iter()
            .all(|c| c.iter().all(|z| z.re == 0.0 && z.im == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs
            .iter()
            .all(|c| c.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }

    /// `Σ_k w_k |û_k|²` for a per-mode weight table.
    #[inline]
    pub fn weighted_energy(&self, weights: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(weights)
            .map(|(c, w)| w * mode_energy(c))
            .sum()
    }

    /// Squared L² norm, `Σ_k |û_k|²`.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(mode_energy).sum()
    }

    /// Real L² inner product `(u, v) = Σ_k Re(û_k · conj(v̂_k))`.
    pub fn inner(&self, other: &Self) -> Result<f64, SpectralError> {
        self.check_grid(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (0..3).map(|d| (a[d] * b[d].conj()).re).sum::<f64>())
            .sum())
    }

    /// Weighted inner product `Σ_k w_k Re(û_k · conj(v̂_k))`.
    pub fn weighted_inner(&self, other: &Self, weights: &[f64]) -> Result<f64, SpectralError> {
        self.check_grid(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .zip(weights)
            .map(|((a, b), w)| w * (0..3).map(|d| (a[d] * b[d].conj()).re).sum::<f64>())
            .sum())
    }

    /// Largest deviation from `û(-k) = conj(û(k))`, relative to the largest
    /// coefficient modulus.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self
            .coeffs
            .iter()
            .flat_map(|c| c.iter().map(|z| z.norm()))
            .fold(0.0_f64, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.coeffs.len() {
            let j = self.grid.conjugate_index(i);
            for d in 0..3 {
                worst = worst.max((self.coeffs[i][d] - self.coeffs[j][d].conj()).norm());
            }
        }
        worst / scale
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.hermitian_defect() <= rel_tol
    }

    pub fn is_average_free(&self) -> bool {
        self.coeffs[self.grid.zero_index()]
            .iter()
            .all(|z| z.re == 0.0 && z.im == 0.0)
    }

    /// Worst per-mode ratio `|k·û_k| / (|k| |û_k|)` over nonzero modes.
    pub fn divergence_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (i, c) in self.coeffs.iter().enumerate() {
            let k = self.grid.wavevector(i);
            let kk = k_norm2(k);
            let amp = mode_energy(c).sqrt();
            if kk == 0.0 || amp == 0.0 {
                continue;
            }
            let div = c[0] * k[0] as f64 + c[1] * k[1] as f64 + c[2] * k[2] as f64;
            worst = worst.max(div.norm() / (kk.sqrt() * amp));
        }
        worst
    }

    /// Per-mode divergence-free check `|k·û_k| <= tol |û_k|`.
    pub fn is_divergence_free(&self, tol: f64) -> bool {
        self.coeffs.iter().enumerate().all(|(i, c)| {
            let k = self.grid.wavevector(i);
            let div = c[0] * k[0] as f64 + c[1] * k[1] as f64 + c[2] * k[2] as f64;
            div.norm() <= tol * mode_energy(c).sqrt()
        })
    }

    /// Projects coefficients onto exact Hermitian symmetry.
    pub fn symmetrize(&mut self) {
        for i in 0..self.coeffs.len() {
            let j = self.grid.conjugate_index(i);
            if j < i {
                continue;
            }
            for d in 0..3 {
                let avg = (self.coeffs[i][d] + self.coeffs[j][d].conj()) * 0.5;
                self.coeffs[i][d] = avg;
                self.coeffs[j][d] = avg.conj();
            }
        }
    }
}

#[inline]
pub(crate) fn mode_energy(c: &Coeff3) -> f64 {
    c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr()
}

/// Fourier coefficients of a 3×3 tensor field, entry `(i, j)` holding
/// `(u_i v_j)^`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTensorField {
    grid: GridSpec,
    coeffs: Vec<[Coeff3; 3]>,
}

impl SpectralTensorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            coeffs: vec![[ZERO3; 3]; grid.len()],
        }
    }

    #[inline]
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    #[inline]
    pub fn coeffs(&self) -> &[[Coeff3; 3]] {
        &self.coeffs
    }

    #[inline]
    pub fn coeffs_mut(&mut self) -> &mut [[Coeff3; 3]] {
        &mut self.coeffs
    }

    /// Root-sum-square of the nine componentwise `H^s` norms.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let w = self.grid.bessel_weights(s);
        self.coeffs
            .iter()
            .zip(&w)
            .map(|(t, w)| w * t.iter().map(mode_energy).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Largest entrywise difference relative to the largest entry of `self`.
    pub fn relative_difference(&self, other: &Self) -> f64 {
        let scale = self
            .coeffs
            .iter()
            .flat_map(|t| t.iter().flat_map(|r| r.iter().map(|z| z.norm())))
            .fold(0.0_f64, f64::max);
        let diff = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .flat_map(|(a, b)| {
                (0..3).flat_map(move |i| (0..3).map(move |j| (a[i][j] - b[i][j]).norm()))
            })
            .fold(0.0_f64, f64::max);
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_mode_pair_is_hermitian() {
        let g = GridSpec::new(8).unwrap();
        let mut u = SpectralVectorField::zeros(g);
        u.set_mode_pair(
            [1, -2, 0],
            [
                Complex64::new(1.0, 2.0),
                Complex64::new(0.5, -0.25),
                Complex64::new(0.0, 3.0),
            ],
        )
        .unwrap();
        assert_eq!(u.hermitian_defect(), 0.0);
        assert!(u.set_mode_pair([3, 0, 0], ZERO3).is_err());
    }

    #[test]
    fn shear_is_divergence_and_average_free() {
        let g = GridSpec::new(8).unwrap();
        let u = SpectralVectorField::shear(g, 1, Complex64::new(0.0, -0.5)).unwrap();
        assert!(u.is_average_free());
        assert!(u.is_divergence_free(1e-14));
        assert!((u.energy() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = SpectralVectorField::zeros(GridSpec::new(8).unwrap());
        let b = SpectralVectorField::zeros(GridSpec::new(16).unwrap());
        assert!(matches!(a.sub(&b), Err(SpectralError::GridMismatch { .. })));
    }
}

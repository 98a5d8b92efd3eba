//! Truncated Fourier lattice on the 2π-periodic torus.

use serde::{Deserialize, Serialize};

use super::SpectralError;

/// Wavevector on the integer lattice.
pub type Wavevector = [i64; 3];

/// Physical grid of `N³` points and the retained mode cube `|k_i| <= K_d`.
///
/// `K_d` is the largest integer with `3 K_d < N`, so quadratic products of
/// retained modes never alias back onto the retained cube. For `N` not
/// divisible by three this is `floor(N/3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    modes_per_axis: usize,
    dealias_cut: usize,
}

impl GridSpec {
    pub fn new(modes_per_axis: usize) -> Result<Self, SpectralError> {
        if modes_per_axis < 4 || !modes_per_axis.is_multiple_of(2) {
            return Err(SpectralError::InvalidGrid(modes_per_axis));
        }
        let dealias_cut = (modes_per_axis - 1) / 3;
        Ok(Self {
            modes_per_axis,
            dealias_cut,
        })
    }

    #[inline]
    pub fn modes_per_axis(&self) -> usize {
        self.modes_per_axis
    }

    #[inline]
    pub fn dealias_cut(&self) -> usize {
        self.dealias_cut
    }

    /// Side length `2 K_d + 1` of the retained cube.
    #[inline]
    pub fn side(&self) -> usize {
        2 * self.dealias_cut + 1
    }

    /// Number of retained modes.
    #[inline]
    pub fn len(&self) -> usize {
        let s = self.side();
        s * s * s
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Compact index of a wavevector, `None` if it lies outside the cube.
    #[inline]
    pub fn index(&self, k: Wavevector) -> Option<usize> {
        let kd = self.dealias_cut as i64;
        if k.iter().any(|&c| c.abs() > kd) {
            return None;
        }
        let s = self.side();
        let a = (k[0] + kd) as usize;
        let b = (k[1] + kd) as usize;
        let c = (k[2] + kd) as usize;
        Some((a * s + b) * s + c)
    }

    #[inline]
    pub fn wavevector(&self, idx: usize) -> Wavevector {
        let s = self.side();
        let kd = self.dealias_cut as i64;
        let c = (idx % s) as i64 - kd;
        let b = ((idx / s) % s) as i64 - kd;
        let a = (idx / (s * s)) as i64 - kd;
        [a, b, c]
    }

    /// Index of `-k`. The cube is symmetric, so this is a reflection of the
    /// compact index.
    #[inline]
    pub fn conjugate_index(&self, idx: usize) -> usize {
        self.len() - 1 - idx
    }

    /// Index of the zero mode.
    #[inline]
    pub fn zero_index(&self) -> usize {
        self.len() / 2
    }

    pub fn wavevectors(&self) -> impl Iterator<Item = Wavevector> + '_ {
        (0..self.len()).map(move |i| self.wavevector(i))
    }

    /// Offset of mode `k` in the row-major `N³` transform buffer.
    #[inline]
    pub(crate) fn buffer_offset(&self, k: Wavevector) -> usize {
        let n = self.modes_per_axis as i64;
        let w = |c: i64| c.rem_euclid(n) as usize;
        let n = self.modes_per_axis;
        (w(k[0]) * n + w(k[1])) * n + w(k[2])
    }

    /// Squared modulus `|k|²` per compact index.
    pub fn k_squared(&self) -> Vec<f64> {
        self.wavevectors()
            .map(|k| (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64)
            .collect()
    }

    /// Bessel weights `(1 + |k|²)^s` per compact index.
    pub fn bessel_weights(&self, s: f64) -> Vec<f64> {
        self.k_squared()
            .into_iter()
            .map(|k2| (1.0 + k2).powf(s))
            .collect()
    }
}

#[inline]
pub(crate) fn k_dot(k: Wavevector, v: [f64; 3]) -> f64 {
    k[0] as f64 * v[0] + k[1] as f64 * v[1] + k[2] as f64 * v[2]
}

#[inline]
pub(crate) fn k_norm2(k: Wavevector) -> f64 {
    (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64
}

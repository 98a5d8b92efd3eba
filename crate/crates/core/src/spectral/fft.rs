//! 3D transforms between retained Fourier modes and the physical `N³` grid.
//!
//! Two real fields are packed into one complex transform in both directions.
//! Line transforms are pruned to the rows that touch the retained cube.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::GridSpec;

struct Plan {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    line: Vec<Complex64>,
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Plan>> = RefCell::new(HashMap::new());
}

fn with_plan<R>(n: usize, f: impl FnOnce(&mut Plan) -> R) -> R {
    PLANS.with(|cell| {
        let mut plans = cell.borrow_mut();
        let plan = plans.entry(n).or_insert_with(|| {
            let mut planner = FftPlanner::new();
            let fwd = planner.plan_fft_forward(n);
            let inv = planner.plan_fft_inverse(n);
            let len = fwd
                .get_inplace_scratch_len()
                .max(inv.get_inplace_scratch_len());
            Plan {
                fwd,
                inv,
                scratch: vec![Complex64::new(0.0, 0.0); len],
                line: vec![Complex64::new(0.0, 0.0); n],
            }
        });
        f(plan)
    })
}

/// Buffer rows (per axis) that intersect the retained cube.
fn retained_rows(grid: GridSpec) -> Vec<usize> {
    let n = grid.modes_per_axis();
    let kd = grid.dealias_cut() as i64;
    (-kd..=kd).map(|k| k.rem_euclid(n as i64) as usize).collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Direction {
    Forward,
    Inverse,
}

fn transform_line(plan: &mut Plan, buf: &mut [Complex64], start: usize, stride: usize, dir: Direction) {
    let n = plan.line.len();
    for (i, v) in plan.line.iter_mut().enumerate() {
        *v = buf[start + i * stride];
    }
    let fft = match dir {
        Direction::Forward => &plan.fwd,
        Direction::Inverse => &plan.inv,
    };
    fft.process_with_scratch(&mut plan.line, &mut plan.scratch);
    for i in 0..n {
        buf[start + i * stride] = plan.line[i];
    }
}

/// Inverse transform of data supported on the retained cube.
fn inverse_pruned(grid: GridSpec, buf: &mut [Complex64]) {
    let n = grid.modes_per_axis();
    let rows = retained_rows(grid);
    with_plan(n, |plan| {
        // axis 2: only (a, b) rows carrying data
        for &a in &rows {
            for &b in &rows {
                transform_line(plan, buf, (a * n + b) * n, 1, Direction::Inverse);
            }
        }
        // axis 1: only planes a carrying data
        for &a in &rows {
            for c in 0..n {
                transform_line(plan, buf, a * n * n + c, n, Direction::Inverse);
            }
        }
        // axis 0: everything
        for b in 0..n {
            for c in 0..n {
                transform_line(plan, buf, b * n + c, n * n, Direction::Inverse);
            }
        }
    });
}

/// Forward transform whose output is only read on the retained cube.
fn forward_pruned(grid: GridSpec, buf: &mut [Complex64]) {
    let n = grid.modes_per_axis();
    let rows = retained_rows(grid);
    with_plan(n, |plan| {
        for b in 0..n {
            for c in 0..n {
                transform_line(plan, buf, b * n + c, n * n, Direction::Forward);
            }
        }
        for &a in &rows {
            for c in 0..n {
                transform_line(plan, buf, a * n * n + c, n, Direction::Forward);
            }
        }
        for &a in &rows {
            for &b in &rows {
                transform_line(plan, buf, (a * n + b) * n, 1, Direction::Forward);
            }
        }
    });
}

/// Physical values of two real fields given their retained coefficients.
///
/// `second` may be `None`, in which case the second output is all zeros.
pub fn to_physical_pair(
    grid: GridSpec,
    first: &[Complex64],
    second: Option<&[Complex64]>,
) -> (Vec<f64>, Vec<f64>) {
    let n = grid.modes_per_axis();
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n * n];
    for (idx, k) in grid.wavevectors().enumerate() {
        let a = first[idx];
        let b = second.map_or(Complex64::new(0.0, 0.0), |s| s[idx]);
        // a + i b
        buf[grid.buffer_offset(k)] = Complex64::new(a.re - b.im, a.im + b.re);
    }
    inverse_pruned(grid, &mut buf);
    let re = buf.iter().map(|z| z.re).collect();
    let im = buf.iter().map(|z| z.im).collect();
    (re, im)
}

/// Retained, normalized coefficients of two real physical fields.
pub fn to_spectral_pair(
    grid: GridSpec,
    first: &[f64],
    second: &[f64],
) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = grid.modes_per_axis();
    let norm = 1.0 / (n * n * n) as f64;
    let mut buf: Vec<Complex64> = first
        .iter()
        .zip(second)
        .map(|(&a, &b)| Complex64::new(a, b))
        .collect();
    forward_pruned(grid, &mut buf);
    let len = grid.len();
    let mut out_a = Vec::with_capacity(len);
    let mut out_b = Vec::with_capacity(len);
    for (idx, k) in grid.wavevectors().enumerate() {
        let z = buf[grid.buffer_offset(k)];
        let neg = grid.wavevector(grid.conjugate_index(idx));
        let zc = buf[grid.buffer_offset(neg)].conj();
        let a = (z + zc) * 0.5;
        let d = (z - zc) * 0.5;
        // (z - conj(z_-k)) / (2i)
        let b = Complex64::new(d.im, -d.re);
        out_a.push(a * norm);
        out_b.push(b * norm);
    }
    (out_a, out_b)
}

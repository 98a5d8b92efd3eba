//! Shear data `(a cos x₃, 0, 0)` under `b = (0,0,β)`: the nonlinearity
//! vanishes and the scheme acts on the single mode by
//! `a ↦ e^{−dt}(1 + iβ dW) a`, which the tests replay independently.

use num_complex::Complex64;

use snse_core::dynamics::{run_path, CutoffConfig, Mode, Stepper, StepperConfig, DEFAULT_C_STAB};
use snse_core::noise::{make_constant_transport, sample_path, NoisePath};
use snse_core::spectral::{GridSpec, SpectralVectorField};

fn stepper(n: usize, dt: f64, beta: f64, mode: Mode) -> Stepper {
    Stepper::new(
        StepperConfig::new(dt, mode, GridSpec::new(n).unwrap(), make_constant_transport([0.0, 0.0, beta]), DEFAULT_C_STAB)
            .unwrap(),
    )
}

#[test]
fn single_mode_recursion_is_reproduced() {
    let (dt, beta) = (0.01, 0.3);
    let g = GridSpec::new(8).unwrap();
    let a0 = Complex64::new(0.004, -0.002);
    let u0 = SpectralVectorField::shear(g, 1, a0).unwrap();
    let noise = sample_path(5, 2, 2.0, dt).unwrap();
    for mode in [Mode::Raw, Mode::Truncated] {
        let traj = run_path(&u0, &stepper(8, dt, beta, mode), &CutoffConfig::new(0.2).unwrap(), &noise, true).unwrap();
        let mut a = a0;
        for (n, dw) in noise.increments.iter().enumerate() {
            a *= (-dt).exp() * Complex64::new(1.0, beta * dw);
            let u = &traj.fields[n + 1];
            let got = u.mode([0, 0, 1]).unwrap();
            assert!((got[0] - a).norm() <= 1e-15 * a.norm().max(1e-300) + 1e-18, "step {n}: {} vs {a}", got[0]);
            assert!(got[1].norm() == 0.0 && got[2].norm() == 0.0);
            // everything else stays exactly zero
            let off: f64 = u.energy() - 2.0 * got[0].norm_sqr();
            assert!(off.abs() <= 1e-30);
        }
    }
}

#[test]
fn zero_increments_give_heat_decay_despite_transport() {
    let g = GridSpec::new(8).unwrap();
    let a = Complex64::new(0.01, 0.0);
    let u0 = SpectralVectorField::shear(g, 2, a).unwrap();
    let traj = run_path(
        &u0,
        &stepper(8, 0.01, 0.5, Mode::Truncated),
        &CutoffConfig::new(0.2).unwrap(),
        &NoisePath::zero(1.0, 0.01).unwrap(),
        true,
    )
    .unwrap();
    let end = traj.final_field().unwrap().mode([0, 0, 2]).unwrap()[0];
    assert!((end - a * (-4.0f64).exp()).norm() <= 1e-14 * a.norm());
}

#[test]
fn h12_norm_record_matches_the_mode() {
    let g = GridSpec::new(8).unwrap();
    let a0 = Complex64::new(0.01, 0.0);
    let u0 = SpectralVectorField::shear(g, 1, a0).unwrap();
    let noise = sample_path(1, 0, 0.5, 0.01).unwrap();
    let traj = run_path(&u0, &stepper(8, 0.01, 0.1, Mode::Truncated), &CutoffConfig::new(0.2).unwrap(), &noise, true)
        .unwrap();
    for (rec, u) in traj.records.iter().zip(&traj.fields) {
        let a = u.mode([0, 0, 1]).unwrap()[0];
        // two modes ±e₃ with weight (1+1)^{1/2}
        let expect = (2.0 * 2f64.sqrt() * a.norm_sqr()).sqrt();
        assert!((rec.h12_norm - expect).abs() <= 1e-15);
    }
}

mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{doubling_system, sin4pi};
use selfcon_core::modes::{coefficient_vector, function_from_coefficients};
use selfcon_core::periodic::hilbert_distance;
use selfcon_core::response::{response_sweep, Linearization, ResponseConfig};
use selfcon_core::system::{CouplingKernel, TensorTerm, TensorTrigKernel, Trig};
use selfcon_core::transfer::random_cone_density;
use selfcon_core::{ConeParams, Density, ExpandingMap, FixedPointConfig, PeriodicFn, SelfConsistentSystem};

fn perturbed_system(kernel: Arc<dyn CouplingKernel>, n: usize) -> SelfConsistentSystem {
    SelfConsistentSystem::new(ExpandingMap::perturbed_linear(2, 0.05).unwrap(), kernel, n).unwrap()
}

#[test]
fn invariant_density_matches_power_iteration_on_p() {
    let n = 128;
    let system = perturbed_system(Arc::new(TensorTrigKernel::zero()), n);
    let rho = system.solve_fixed_density(0.0, &FixedPointConfig::default()).unwrap().rho;

    let p = system.operator_matrix_p().unwrap();
    let m = p.max_mode();
    let mut v = DVector::from_element(p.size(), Complex64::new(0.0, 0.0));
    v[p.index(0)] = Complex64::new(1.0, 0.0);
    v[p.index(1)] = Complex64::new(0.3, 0.1);
    v[p.index(-1)] = Complex64::new(0.3, -0.1);
    for _ in 0..300 {
        v = p.complex() * &v;
        let mass = v[p.index(0)];
        v /= mass;
    }
    let oracle = function_from_coefficients(&v, n).unwrap();
    assert_eq!(coefficient_vector(&rho, m).len(), v.len());
    assert!(rho.sup_distance(&oracle) < 1e-9, "{}", rho.sup_distance(&oracle));
    // genuinely non-uniform
    assert!(rho.sup_distance(&PeriodicFn::constant(1.0, n).unwrap()) > 1e-3);
}

#[test]
fn fixed_point_rate_for_doubling_sin4pi() {
    let system = doubling_system(sin4pi(), 256);
    let cfg = FixedPointConfig::default();
    let r = system.solve_fixed_density(0.02, &cfg).unwrap();
    assert!(r.final_residual <= cfg.tolerance);
    assert!(r.contraction_rate(cfg.tolerance).unwrap() < 0.6);
    assert!(r.rho.min_value() > 0.0);
    assert!((r.rho.integral() - 1.0).abs() < 1e-12);
}

#[test]
fn contraction_probe_examples() {
    let cone = ConeParams::new(4.0).unwrap();
    let uncoupled = doubling_system(Arc::new(TensorTrigKernel::zero()), 128);
    let base = uncoupled.contraction_probe(0.0, cone, 20, 3).unwrap();
    assert_eq!(base.hilbert_ratios.len() + base.skipped, 20);
    assert!(base.max_hilbert_ratio() <= 0.9, "{}", base.max_hilbert_ratio());

    // L_t = P for h ≡ 0, so the same seed gives the same ratios at any t
    for t in [-0.3, 0.1] {
        let other = uncoupled.contraction_probe(t, cone, 20, 3).unwrap();
        assert_eq!(other.hilbert_ratios, base.hilbert_ratios);
    }

    // brute-force Hilbert distance of one image pair against the probe's first ratio
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let phi = random_cone_density(&mut rng, 128, 1.0, 3).unwrap();
    let psi = random_cone_density(&mut rng, 128, 1.5, 3).unwrap();
    let before = hilbert_distance(&phi, &psi, cone).unwrap();
    let after = hilbert_distance(&uncoupled.apply(0.0, &phi).unwrap(), &uncoupled.apply(0.0, &psi).unwrap(), cone).unwrap();
    assert!(after / before <= 0.9);
}

#[test]
fn linearized_matrix_has_rho_as_unit_eigenvector() {
    let n = 128;
    let system = doubling_system(sin4pi(), n);
    for t in [0.0, 0.015] {
        let rho = system.solve_fixed_density(t, &FixedPointConfig::default()).unwrap().rho;
        let lin = Linearization::new(&system, t, rho.clone()).unwrap();
        let mat = lin.linearized_matrix().unwrap();
        let c = coefficient_vector(&rho, mat.max_mode());
        let image = mat.apply(&c);
        let err = (&image - &c).iter().fold(0.0f64, |a, z| a.max(z.norm()));
        assert!(err < 1e-9, "t={t}: {err}");
        // mass preservation: unit (0, 0) entry, and the rest of the mode-0 row vanishes up
        // to aliasing roundoff of near-Nyquist inputs
        assert!((mat.entry(0, 0) - 1.0).norm() < 1e-12);
        for k in -(mat.max_mode() as i64)..=(mat.max_mode() as i64) {
            let expect = if k == 0 { 1.0 } else { 0.0 };
            assert!((mat.entry(0, k) - expect).norm() < 1e-11);
        }
        let mut moduli: Vec<f64> = mat.eigenvalues().iter().map(|z| z.norm()).collect();
        moduli.sort_by(|a, b| b.total_cmp(a));
        assert!((moduli[0] - 1.0).abs() < 1e-9);
        assert!(moduli[1] < 0.9, "no spectral gap at t={t}: {}", moduli[1]);
        if t == 0.0 {
            let p = system.operator_matrix_p().unwrap();
            assert!((mat.complex() - p.complex()).iter().all(|z| z.norm() < 1e-12));
        }
    }
}

#[test]
fn kappa_matrix_examples() {
    let n = 64;
    let zero = doubling_system(Arc::new(TensorTrigKernel::zero()), n);
    let rho = zero.solve_fixed_density(0.05, &FixedPointConfig::default()).unwrap().rho;
    let k = Linearization::new(&zero, 0.05, rho).unwrap().kappa_matrix().unwrap();
    assert!(k.complex().iter().all(|z| z.norm() == 0.0));

    let system = doubling_system(sin4pi(), n);
    let lin = Linearization::new(&system, 0.0, Density::uniform(n).unwrap()).unwrap();
    let k = lin.kappa_matrix().unwrap();
    let m = k.max_mode() as i64;
    for j in -m..=m {
        assert!(k.entry(0, j).norm() < 1e-12);
    }
    // column 0 holds P(4π cos 4πx) = 4π cos 2πx
    let col: DVector<Complex64> = k.complex().column(k.index(0)).into_owned();
    let image = function_from_coefficients(&col, n).unwrap();
    let expect = PeriodicFn::sample(|x| 4.0 * PI * (2.0 * PI * x).cos(), n).unwrap();
    assert!(image.sup_distance(&expect) < 1e-10);
}

#[test]
fn kappa_and_response_are_mean_zero() {
    let n = 128;
    let kernel = Arc::new(TensorTrigKernel::new(vec![
        TensorTerm {
            coeff: 1.0,
            x_mode: 1,
            x_trig: Trig::Cos,
            y_mode: 1,
            y_trig: Trig::Cos,
        },
        TensorTerm {
            coeff: 0.5,
            x_mode: 2,
            x_trig: Trig::Sin,
            y_mode: 0,
            y_trig: Trig::Cos,
        },
    ]));
    let system = perturbed_system(kernel, n);
    let cfg = FixedPointConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for t in [-0.03, 0.0, 0.02] {
        let rho = system.solve_fixed_density(t, &cfg).unwrap().rho;
        let lin = Linearization::new(&system, t, rho).unwrap();
        for _ in 0..3 {
            let g = random_cone_density(&mut rng, n, 2.0, 3).unwrap();
            assert!(lin.kappa(&g).unwrap().integral().abs() < 1e-12);
        }
        let (v, res) = lin.linear_response().unwrap();
        assert!(v.integral().abs() < 1e-12);
        assert!(res <= 1e-10);
    }
}

#[test]
fn derivative_of_p_t_matches_finite_differences() {
    // d/ds P Q_{s,ρ(s)} φ at s = t̂ for φ = ρ(t̂) equals −P[Κ(ρ) + t̂ Κ(∂_tρ)]
    let n = 128;
    let system = doubling_system(sin4pi(), n);
    let cfg = FixedPointConfig::default();
    let t_hat = 0.01;
    let rho = system.solve_fixed_density(t_hat, &cfg).unwrap().rho;
    let lin = Linearization::new(&system, t_hat, rho.clone()).unwrap();
    let (drho, _) = lin.linear_response().unwrap();
    let kappa_sum = &lin.kappa(&rho).unwrap() + &(&lin.kappa(&drho).unwrap() * t_hat);
    let predicted = system.transfer_p(&kappa_sum).unwrap().scale(-1.0);

    let delta = 1e-4;
    let side = |s: f64| {
        let rho_s = system.solve_fixed_density(s, &cfg).unwrap().rho;
        system.transfer_p(&system.apply_q(s, &rho_s, &rho).unwrap()).unwrap()
    };
    let fd = &(&side(t_hat + delta) - &side(t_hat - delta)) * (0.5 / delta);
    let err = fd.sup_distance(&predicted);
    assert!(err < 1e-3 * predicted.sup_norm(), "{err} vs {}", predicted.sup_norm());
}

#[test]
fn sweep_symmetry_and_taylor_residual() {
    let n = 128;
    // f odd, h even under (x, y) → (−x, −y): ρ(−t)(x) = ρ(t)(−x)
    let even = Arc::new(TensorTrigKernel::new(vec![
        TensorTerm {
            coeff: 1.0,
            x_mode: 1,
            x_trig: Trig::Cos,
            y_mode: 1,
            y_trig: Trig::Cos,
        },
        TensorTerm {
            coeff: 0.5,
            x_mode: 1,
            x_trig: Trig::Sin,
            y_mode: 2,
            y_trig: Trig::Sin,
        },
    ]));
    let system = perturbed_system(even, n);
    let rows = response_sweep(&system, &[0.02, -0.02], &ResponseConfig::default());
    assert_eq!(rows[0].t, -0.02);
    let minus = &rows[0].report.as_ref().unwrap().rho;
    let plus = &rows[1].report.as_ref().unwrap().rho;
    let reflected = PeriodicFn::sample(|x| plus.eval_at(1.0 - x), n).unwrap();
    assert!(minus.sup_distance(&reflected) < 1e-9);
    assert!(minus.sup_distance(plus) > 1e-4);

    // h odd under the reflection: ρ(t) is itself even
    let system = doubling_system(sin4pi(), n);
    let rho = system.solve_fixed_density(0.02, &FixedPointConfig::default()).unwrap().rho;
    let reflected = PeriodicFn::sample(|x| rho.eval_at(1.0 - x), n).unwrap();
    assert!(rho.sup_distance(&reflected) < 1e-9);

    // ρ(t) − 1 − t ∂_tρ(0) is O(t²): doubling t at least quadruples the residual on the
    // coarse grid (the cubic term is already sizeable at 0.02), and quadruples it to
    // within 20% once t is small
    let grid = [-0.02, -0.01, -0.005, -0.0025, 0.0, 0.0025, 0.005, 0.01, 0.02];
    let rows = response_sweep(&system, &grid, &ResponseConfig::default());
    let d0 = rows[4].report.as_ref().unwrap().drho.clone();
    let one = PeriodicFn::constant(1.0, n).unwrap();
    let residual = |i: usize| {
        let r = rows[i].report.as_ref().unwrap();
        r.rho.sup_distance(&(&one + &(&d0 * r.t_hat)))
    };
    for (small, large) in [(7, 8), (1, 0)] {
        let ratio = residual(large) / residual(small);
        assert!((3.2..8.0).contains(&ratio), "coarse ratio {ratio}");
    }
    for (small, large) in [(5, 6), (3, 2)] {
        let ratio = residual(large) / residual(small);
        assert!((3.2..4.8).contains(&ratio), "fine ratio {ratio}");
    }
    assert!(rows.iter().all(|r| r.error.is_none()));
}

#[test]
fn sweep_records_failures_per_point() {
    let system = doubling_system(sin4pi(), 64);
    let rows = response_sweep(&system, &[0.0, 0.5], &ResponseConfig::default());
    assert!(rows[0].report.is_some());
    assert!(rows[1].report.is_none());
    assert!(rows[1].error.as_ref().unwrap().contains("diffeomorphism"));
}

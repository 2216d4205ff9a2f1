use std::f64::consts::PI;

use selfcon_core::bounds::{
    check_expansion_condition, derivative_sups, jet_compose, jet_inverse, jet_product, DerivativeJet, JetField,
};
use selfcon_core::system::{expansion_condition_value, PerturbedLinear};
use selfcon_core::{ExpandingMap, PeriodicFn};

/// Dense scan of `N (max|f''|/min|f'|³ + 1/min|f'|²)` from the closed-form derivatives.
fn brute_force_condition(degree: u32, alpha: f64) -> f64 {
    let w = 2.0 * PI;
    let (mut min_d1, mut max_d2) = (f64::INFINITY, 0.0f64);
    let n = 200_000;
    for i in 0..n {
        let x = i as f64 / n as f64;
        min_d1 = min_d1.min((degree as f64 + alpha * w * (w * x).cos()).abs());
        max_d2 = max_d2.max((alpha * w * w * (w * x).sin()).abs());
    }
    degree as f64 * (max_d2 / min_d1.powi(3) + 1.0 / min_d1.powi(2))
}

#[test]
fn expansion_condition_for_linear_maps() {
    let tripling = ExpandingMap::perturbed_linear(3, 0.0).unwrap();
    assert!((check_expansion_condition(&tripling) - 1.0 / 3.0).abs() < 1e-14);
    assert!((check_expansion_condition(&ExpandingMap::doubling()) - 0.5).abs() < 1e-14);
}

#[test]
fn expansion_condition_matches_dense_scan() {
    for (degree, alpha) in [(2, 0.3), (2, 0.05), (3, 0.1), (4, -0.2), (5, 0.5)] {
        let exact = brute_force_condition(degree, alpha);
        let got = expansion_condition_value(&PerturbedLinear { degree, alpha });
        assert!((got - exact).abs() <= 1e-6 * exact, "N={degree} α={alpha}: {got} vs {exact}");
        if let Ok(map) = ExpandingMap::perturbed_linear(degree, alpha) {
            assert!((check_expansion_condition(&map) - got).abs() <= 1e-6 * got);
        }
    }
    // 2 - 0.6π is barely expanding and the distortion term dominates
    assert!(expansion_condition_value(&PerturbedLinear { degree: 2, alpha: 0.3 }) > 1.0);
}

#[test]
fn spectral_jets_match_closed_form() {
    let k = 3.0;
    let w = 2.0 * PI * k;
    let f = PeriodicFn::sample(|x| (w * x).sin() + 0.5, 64).unwrap();
    let field = JetField::new(&f);
    for i in 0..37 {
        let x = i as f64 / 37.0;
        let jet = field.jet(x);
        let exact = [
            (w * x).sin() + 0.5,
            w * (w * x).cos(),
            -w * w * (w * x).sin(),
            -w.powi(3) * (w * x).cos(),
            w.powi(4) * (w * x).sin(),
        ];
        for (order, (a, b)) in jet.d.iter().zip(&exact).enumerate() {
            assert!((a - b).abs() < 1e-9 * w.powi(order as i32).max(1.0), "x={x} order={order}");
        }
    }
    let sups = derivative_sups(&f).unwrap();
    assert!((sups[0] - 1.5).abs() < 1e-2);
    for order in 1..5 {
        assert!((sups[order] / w.powi(order as i32) - 1.0).abs() < 1e-2, "order {order}");
    }
}

#[test]
fn composition_follows_chain_rule_to_fourth_order() {
    for i in 0..20 {
        let x = -1.0 + 0.13 * i as f64;
        let (s, c) = x.sin_cos();
        let inner = DerivativeJet::new(x, [s, c, -s, -c, s]);
        let e = s.exp();
        let outer = DerivativeJet::new(s, [e; 5]);
        let h = jet_compose(&outer, &inner);
        let exact = [
            e,
            c * e,
            (c * c - s) * e,
            (c.powi(3) - 3.0 * s * c - c) * e,
            (c.powi(4) - 6.0 * s * c * c - 4.0 * c * c + 3.0 * s * s + s) * e,
        ];
        for k in 0..5 {
            assert!((h.d[k] - exact[k]).abs() < 1e-12 * (1.0 + exact[k].abs()), "x={x} k={k}");
        }
    }
}

#[test]
fn product_follows_leibniz_rule() {
    // x² · e^x at x0
    let x0 = 0.7f64;
    let e = x0.exp();
    let a = DerivativeJet::new(x0, [x0 * x0, 2.0 * x0, 2.0, 0.0, 0.0]);
    let b = DerivativeJet::new(x0, [e; 5]);
    let p = jet_product(&a, &b);
    let poly = |k: f64| x0 * x0 + 2.0 * k * x0 + k * (k - 1.0);
    for k in 0..5 {
        let exact = poly(k as f64) * e;
        assert!((p.d[k] - exact).abs() < 1e-12 * exact.abs());
    }
}

#[test]
fn inverse_jet_matches_lagrange_inversion() {
    for i in 0..25 {
        let x = i as f64 / 25.0;
        let a = 0.1;
        let w = 2.0 * PI;
        let d1 = 1.0 + a * w * (w * x).cos();
        let d2 = -a * w * w * (w * x).sin();
        let d3 = -a * w.powi(3) * (w * x).cos();
        let d4 = a * w.powi(4) * (w * x).sin();
        let phi = DerivativeJet::new(x, [x + a * (w * x).sin(), d1, d2, d3, d4]);
        let inv = jet_inverse(&phi).unwrap();
        let exact = [
            x,
            1.0 / d1,
            -d2 / d1.powi(3),
            (3.0 * d2 * d2 - d1 * d3) / d1.powi(5),
            (-15.0 * d2.powi(3) + 10.0 * d1 * d2 * d3 - d1 * d1 * d4) / d1.powi(7),
        ];
        assert!((inv.at - phi.d[0]).abs() < 1e-15);
        for k in 0..5 {
            assert!((inv.d[k] - exact[k]).abs() < 1e-11 * (1.0 + exact[k].abs()), "x={x} k={k}");
        }
    }
    let flat = DerivativeJet::new(0.0, [0.0, 0.0, 1.0, 0.0, 0.0]);
    assert!(jet_inverse(&flat).is_err());
}

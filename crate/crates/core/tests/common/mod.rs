#![allow(dead_code)]

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use selfcon_core::system::{CouplingKernel, ExpandingMap, TensorTrigKernel, Trig};
use selfcon_core::SelfConsistentSystem;

/// Finite-difference weights `w[k][j]` for the `k`-th derivative at `x0` from the
/// nodes `xs` (Fornberg's recursion).
pub fn fornberg_weights(x0: f64, xs: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Value and derivatives 1..=4 of `f` at `x` from a centered 13-point stencil of spacing `h`.
pub fn fd_jet(f: impl Fn(f64) -> f64, x: f64, h: f64) -> [f64; 5] {
    let xs: Vec<f64> = (-6..=6).map(|i| x + i as f64 * h).collect();
    let w = fornberg_weights(x, &xs, 4);
    let vals: Vec<f64> = xs.iter().map(|&s| f(s)).collect();
    let mut out = [0.0; 5];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = w[k].iter().zip(&vals).map(|(a, b)| a * b).sum();
    }
    out
}

/// Jet of `f` at `x` by finite differences: order 1 from values of `f`, orders 2..=4
/// from values of its first derivative `df` (17-point centered stencils, spacing `h`).
/// Differencing `df` instead of `f` keeps roundoff at `ε/h³` for the fourth derivative.
pub fn fd_jet_via_derivative(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, x: f64, h: f64) -> [f64; 5] {
    let xs: Vec<f64> = (-8..=8).map(|i| x + i as f64 * h).collect();
    let w = fornberg_weights(x, &xs, 3);
    let apply = |k: usize, vals: &[f64]| -> f64 { w[k].iter().zip(vals).map(|(a, b)| a * b).sum() };
    let fv: Vec<f64> = xs.iter().map(|&s| f(s)).collect();
    let dv: Vec<f64> = xs.iter().map(|&s| df(s)).collect();
    [f(x), apply(1, &fv), apply(1, &dv), apply(2, &dv), apply(3, &dv)]
}

/// `c0 + Σ a_k cos 2πkx + b_k sin 2πkx` with closed-form derivatives.
#[derive(Clone, Debug)]
pub struct TrigPoly {
    pub c0: f64,
    pub ab: Vec<(f64, f64)>,
}

impl TrigPoly {
    pub fn random<R: Rng>(rng: &mut R, modes: usize, scale: f64) -> Self {
        Self {
            c0: rng.random_range(-1.0..1.0),
            ab: (1..=modes)
                .map(|k| {
                    let w = scale / (k * k) as f64;
                    (w * rng.random_range(-1.0..1.0), w * rng.random_range(-1.0..1.0))
                })
                .collect(),
        }
    }

    pub fn deriv(&self, x: f64, order: u32) -> f64 {
        let mut s = if order == 0 { self.c0 } else { 0.0 };
        for (i, &(a, b)) in self.ab.iter().enumerate() {
            let w = 2.0 * PI * (i + 1) as f64;
            let shift = order as f64 * PI / 2.0;
            s += w.powi(order as i32) * (a * (w * x + shift).cos() + b * (w * x + shift).sin());
        }
        s
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.deriv(x, 0)
    }

    pub fn jet(&self, x: f64) -> [f64; 5] {
        [0, 1, 2, 3, 4].map(|k| self.deriv(x, k))
    }

    /// `Σ 2πk (|a_k| + |b_k|)`, an upper bound for the first derivative.
    pub fn slope_bound(&self) -> f64 {
        self.ab
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| 2.0 * PI * (i + 1) as f64 * (a.abs() + b.abs()))
            .sum()
    }
}

pub fn sin4pi() -> Arc<dyn CouplingKernel> {
    Arc::new(TensorTrigKernel::x_only(1.0, 2, Trig::Sin))
}

pub fn doubling_system(kernel: Arc<dyn CouplingKernel>, n: usize) -> SelfConsistentSystem {
    SelfConsistentSystem::new(ExpandingMap::doubling(), kernel, n).unwrap()
}

/// Writes straight to the process stderr so the line survives test output capture.
pub fn verdict(label: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{label}: {status} | {detail}");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_reproduces_polynomial_derivatives() {
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let w = fornberg_weights(0.0, &xs, 2);
        // classic five-point second derivative
        let expect = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w[2].iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        let jet = fd_jet(|x| x.powi(4), 0.5, 0.1);
        let exact = [0.0625, 0.5, 3.0, 12.0, 24.0];
        for k in 0..5 {
            assert!((jet[k] - exact[k]).abs() < 1e-8, "{k}: {}", jet[k]);
        }
    }
}

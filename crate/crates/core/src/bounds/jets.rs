//! Fourth-order derivative jets: products, compositions and inverses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::periodic::PeriodicFn;

pub const JET_ORDER: usize = 4;

/// Value and first four derivatives of a function at the point `at`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeJet {
    pub at: f64,
    pub d: [f64; JET_ORDER + 1],
}

impl DerivativeJet {
    pub fn new(at: f64, d: [f64; JET_ORDER + 1]) -> Self {
        Self { at, d }
    }

    pub fn constant(at: f64, c: f64) -> Self {
        Self::new(at, [c, 0.0, 0.0, 0.0, 0.0])
    }

    /// Jet of `x ↦ x` at `at`.
    pub fn identity(at: f64) -> Self {
        Self::new(at, [at, 1.0, 0.0, 0.0, 0.0])
    }

    /// Spectral derivatives of a periodic function evaluated at `x`.
    pub fn from_periodic(f: &PeriodicFn, x: f64) -> Self {
        JetField::new(f).jet(x)
    }

    pub fn value(&self) -> f64 {
        self.d[0]
    }

    /// `Σ_k |d_k|`, the pointwise contribution to a `C⁴` norm.
    pub fn abs_sum(&self) -> f64 {
        self.d.iter().map(|v| v.abs()).sum()
    }
}

/// Spectral derivatives of a periodic function, precomputed for repeated jet evaluation.
#[derive(Clone, Debug)]
pub struct JetField {
    derivatives: Vec<PeriodicFn>,
}

impl JetField {
    pub fn new(f: &PeriodicFn) -> Self {
        Self {
            derivatives: (0..=JET_ORDER as u32).map(|k| f.derivative(k)).collect(),
        }
    }

    pub fn jet(&self, x: f64) -> DerivativeJet {
        let mut d = [0.0; JET_ORDER + 1];
        for (slot, f) in d.iter_mut().zip(&self.derivatives) {
            *slot = f.eval_at(x);
        }
        DerivativeJet::new(x, d)
    }
}

/// Leibniz rule through order four.
pub fn jet_product(a: &DerivativeJet, b: &DerivativeJet) -> DerivativeJet {
    let (f, g) = (&a.d, &b.d);
    DerivativeJet::new(
        a.at,
        [
            f[0] * g[0],
            f[1] * g[0] + f[0] * g[1],
            f[2] * g[0] + 2.0 * f[1] * g[1] + f[0] * g[2],
            f[3] * g[0] + 3.0 * f[2] * g[1] + 3.0 * f[1] * g[2] + f[0] * g[3],
            f[4] * g[0] + 4.0 * f[3] * g[1] + 6.0 * f[2] * g[2] + 4.0 * f[1] * g[3] + f[0] * g[4],
        ],
    )
}

/// Jet of `outer ∘ inner` at `inner.at`; `outer` must be taken at `inner.value()`.
pub fn jet_compose(outer: &DerivativeJet, inner: &DerivativeJet) -> DerivativeJet {
    let g = &outer.d;
    let u = &inner.d;
    let (u1, u2, u3, u4) = (u[1], u[2], u[3], u[4]);
    DerivativeJet::new(
        inner.at,
        [
            g[0],
            g[1] * u1,
            g[2] * u1 * u1 + g[1] * u2,
            g[3] * u1.powi(3) + 3.0 * g[2] * u1 * u2 + g[1] * u3,
            g[4] * u1.powi(4)
                + 6.0 * g[3] * u1 * u1 * u2
                + g[2] * (3.0 * u2 * u2 + 4.0 * u1 * u3)
                + g[1] * u4,
        ],
    )
}

/// Jet of `Φ⁻¹` at `y = Φ(x)` from the jet of `Φ` at `x`.
pub fn jet_inverse(phi: &DerivativeJet) -> Result<DerivativeJet> {
    let [x_image, p1, p2, p3, p4] = phi.d;
    if p1 == 0.0 || !p1.is_finite() {
        return Err(Error::Jet(format!("first derivative {p1} at {}", phi.at)));
    }
    Ok(DerivativeJet::new(
        x_image,
        [
            phi.at,
            1.0 / p1,
            -p2 / p1.powi(3),
            (3.0 * p2 * p2 - p1 * p3) / p1.powi(5),
            (-p1 * p1 * p4 + 10.0 * p1 * p2 * p3 - 15.0 * p2.powi(3)) / p1.powi(7),
        ],
    ))
}

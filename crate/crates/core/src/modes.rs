//! Matrices of linear operators on the Fourier modes `|k| <= m`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::Result;
use crate::periodic::PeriodicFn;

/// Operator matrix in the exponential basis `e^{2πikx}`, `k = −m..=m`
/// (row/column index `k + m`), together with the same operator in the real
/// basis `1, cos 2πx, sin 2πx, cos 4πx, ...`.
#[derive(Clone, Debug)]
pub struct ModeMatrix {
    max_mode: usize,
    complex: DMatrix<Complex64>,
    real: DMatrix<f64>,
}

impl ModeMatrix {
    /// Column `k` holds the coefficients of `op(e^{2πikx})`. The operator must
    /// map real functions to real functions; it is applied to `cos` and `sin`.
    pub fn assemble<F>(resolution: usize, op: F) -> Result<Self>
    where
        F: Fn(&PeriodicFn) -> Result<PeriodicFn> + Sync,
    {
        let m = resolution / 2 - 1;
        let size = 2 * m + 1;
        let outputs: Vec<(Option<PeriodicFn>, Option<PeriodicFn>)> = (0..=m)
            .into_par_iter()
            .map(|k| -> Result<_> {
                let w = 2.0 * PI * k as f64;
                let c = op(&PeriodicFn::sample(|x| (w * x).cos(), resolution)?)?;
                let s = if k == 0 {
                    None
                } else {
                    Some(op(&PeriodicFn::sample(|x| (w * x).sin(), resolution)?)?)
                };
                Ok((Some(c), s))
            })
            .collect::<Result<_>>()?;

        let mut complex = DMatrix::<Complex64>::zeros(size, size);
        let mut real = DMatrix::<f64>::zeros(size, size);
        let i = Complex64::new(0.0, 1.0);
        for (k, (c, s)) in outputs.iter().enumerate() {
            let c = c.as_ref().expect("cosine output always present");
            for l in -(m as i64)..=(m as i64) {
                let row = (l + m as i64) as usize;
                let cc = c.coefficient(l);
                match s {
                    None => complex[(row, m)] = cc,
                    Some(s) => {
                        let sc = s.coefficient(l);
                        complex[(row, m + k)] = cc + i * sc;
                        complex[(row, m - k)] = cc - i * sc;
                    }
                }
            }
            let cols: Vec<(usize, &PeriodicFn)> = match s {
                None => vec![(0, c)],
                Some(s) => vec![(2 * k - 1, c), (2 * k, s)],
            };
            for (col, f) in cols {
                let coords = real_coordinates(f, m);
                real.set_column(col, &coords);
            }
        }
        Ok(Self {
            max_mode: m,
            complex,
            real,
        })
    }

    pub fn max_mode(&self) -> usize {
        self.max_mode
    }

    pub fn size(&self) -> usize {
        2 * self.max_mode + 1
    }

    pub fn index(&self, k: i64) -> usize {
        (k + self.max_mode as i64) as usize
    }

    /// Coefficient of mode `out` in the image of mode `input`.
    pub fn entry(&self, out: i64, input: i64) -> Complex64 {
        self.complex[(self.index(out), self.index(input))]
    }

    pub fn complex(&self) -> &DMatrix<Complex64> {
        &self.complex
    }

    pub fn real_basis(&self) -> &DMatrix<f64> {
        &self.real
    }

    /// Rows and columns of the nonzero modes.
    pub fn mean_zero_block(&self) -> DMatrix<Complex64> {
        let m = self.max_mode;
        self.complex.clone().remove_row(m).remove_column(m)
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.real.clone().schur().complex_eigenvalues().iter().cloned().collect()
    }

    /// Largest eigenvalue modulus of the operator restricted to mean-zero modes.
    pub fn mean_zero_spectral_radius(&self) -> f64 {
        let block = self.real.clone().remove_row(0).remove_column(0);
        block
            .schur()
            .complex_eigenvalues()
            .iter()
            .fold(0.0, |acc, z| acc.max(z.norm()))
    }

    pub fn apply(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        &self.complex * v
    }
}

/// Coordinates of a real function in the basis `1, cos 2πx, sin 2πx, ...` up to mode `m`.
pub fn real_coordinates(f: &PeriodicFn, m: usize) -> DVector<f64> {
    let mut v = DVector::<f64>::zeros(2 * m + 1);
    v[0] = f.coefficient(0).re;
    for l in 1..=m {
        let c = f.coefficient(l as i64);
        v[2 * l - 1] = 2.0 * c.re;
        v[2 * l] = -2.0 * c.im;
    }
    v
}

/// Coefficients of modes `−m..=m` (index `k + m`).
pub fn coefficient_vector(f: &PeriodicFn, m: usize) -> DVector<Complex64> {
    DVector::from_iterator(
        2 * m + 1,
        (-(m as i64)..=(m as i64)).map(|k| f.coefficient(k)),
    )
}

/// Inverse of [`coefficient_vector`]; the Hermitian part is used so the result is real.
pub fn function_from_coefficients(v: &DVector<Complex64>, resolution: usize) -> Result<PeriodicFn> {
    let m = (v.len() - 1) / 2;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); resolution];
    for k in -(m as i64)..=(m as i64) {
        let a = v[(k + m as i64) as usize];
        let b = v[(-k + m as i64) as usize].conj();
        coeffs[k.rem_euclid(resolution as i64) as usize] = 0.5 * (a + b);
    }
    PeriodicFn::from_coefficients(&coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_and_derivative_operators() {
        let id = ModeMatrix::assemble(16, |f| Ok(f.clone())).unwrap();
        let size = id.size();
        for r in 0..size {
            for c in 0..size {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(id.complex()[(r, c)].re, expect, epsilon = 1e-14);
                assert_abs_diff_eq!(id.complex()[(r, c)].im, 0.0, epsilon = 1e-14);
                assert_abs_diff_eq!(id.real_basis()[(r, c)], expect, epsilon = 1e-14);
            }
        }
        let d = ModeMatrix::assemble(16, |f| Ok(f.derivative(1))).unwrap();
        let e = d.entry(3, 3);
        assert_abs_diff_eq!(e.im, 6.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(d.entry(-2, -2).im, -4.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn coefficient_vector_roundtrip() {
        let f = PeriodicFn::sample(|x| (2.0 * PI * x).sin().exp(), 32).unwrap();
        let v = coefficient_vector(&f, 15);
        let g = function_from_coefficients(&v, 32).unwrap();
        // only the Nyquist mode is lost
        assert!(g.sup_distance(&f) <= 2.0 * f.coefficient(16).norm() + 1e-14);
    }
}

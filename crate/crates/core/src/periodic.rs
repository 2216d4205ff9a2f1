//! Smooth real periodic functions on the unit circle.
//!
//! A [`PeriodicFn`] stores `n` equispaced samples `values[j] = f(j/n)` together
//! with their discrete Fourier coefficients `c_k = (1/n) Σ_j values[j] e^{-2πijk/n}`.
//! Everything else (differentiation, evaluation off the grid, products) goes
//! through the trigonometric interpolant
//!
//! ```text
//! f(x) = c_0 + 2 Re Σ_{0<k<n/2} c_k e^{2πikx} + c_{n/2} cos(πnx).
//! ```
//!
//! Sup-norms are grid maxima, which undershoot the true supremum by O(n⁻²)
//! for smooth functions.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::io::Write;
use std::ops::{Add, Deref, Mul, Neg, Sub};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_RESOLUTION: usize = 16;
pub const DEFAULT_RESOLUTION: usize = 256;

/// Relative magnitude below which Fourier modes are skipped when evaluating
/// off the grid. This is at the level of FFT roundoff.
const EVAL_CUTOFF: f64 = 1e-16;

/// Above this resolution the Hilbert alpha enumerates a strided subset of pairs.
pub const HILBERT_EXACT_LIMIT: usize = 512;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn check_resolution(n: usize) -> Result<()> {
    if n >= MIN_RESOLUTION && n.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::InvalidResolution(n))
    }
}

fn dft(values: &[f64]) -> Vec<Complex64> {
    let n = values.len();
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n).process(&mut buf));
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

fn inverse_dft_real(coeffs: &[Complex64]) -> Vec<f64> {
    let n = coeffs.len();
    let mut buf = coeffs.to_vec();
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n).process(&mut buf));
    buf.into_iter().map(|c| c.re).collect()
}

/// Signed wavenumber of DFT index `idx` for length `n` (Nyquist reported as +n/2).
#[inline]
pub fn wavenumber(idx: usize, n: usize) -> i64 {
    if idx <= n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

/// Circle distance between two points of [0,1).
#[inline]
pub fn circle_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

#[derive(Clone, Debug)]
pub struct PeriodicFn {
    values: Vec<f64>,
    coeffs: Vec<Complex64>,
    band: usize,
}

impl PeriodicFn {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        check_resolution(values.len())?;
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(j));
        }
        let coeffs = dft(&values);
        let band = effective_band(&coeffs);
        Ok(Self {
            values,
            coeffs,
            band,
        })
    }

    /// Builds the function whose DFT is `coeffs` (imaginary parts of the
    /// synthesized samples are discarded).
    pub fn from_coefficients(coeffs: &[Complex64]) -> Result<Self> {
        check_resolution(coeffs.len())?;
        Self::from_values(inverse_dft_real(coeffs))
    }

    pub fn sample(f: impl Fn(f64) -> f64, resolution: usize) -> Result<Self> {
        check_resolution(resolution)?;
        let h = 1.0 / resolution as f64;
        Self::from_values((0..resolution).map(|j| f(j as f64 * h)).collect())
    }

    pub fn constant(c: f64, resolution: usize) -> Result<Self> {
        Self::from_values(vec![c; resolution])
    }

    pub fn zero(resolution: usize) -> Result<Self> {
        Self::constant(0.0, resolution)
    }

    pub fn resolution(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Coefficients in FFT order (index `k` for `k <= n/2`, `n + k` for `k < 0`).
    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient of the mode `k`, zero if `|k| > n/2`.
    pub fn coefficient(&self, k: i64) -> Complex64 {
        let n = self.resolution() as i64;
        if k.abs() > n / 2 {
            return Complex64::new(0.0, 0.0);
        }
        self.coeffs[k.rem_euclid(n) as usize]
    }

    pub fn grid_point(&self, j: usize) -> f64 {
        j as f64 / self.resolution() as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.resolution()).map(|j| self.grid_point(j)).collect()
    }

    /// Spectral derivative: mode `k` is multiplied by `(2πik)^order`.
    pub fn derivative(&self, order: u32) -> PeriodicFn {
        if order == 0 {
            return self.clone();
        }
        let n = self.resolution();
        let coeffs: Vec<Complex64> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(idx, &c)| {
                if idx == n / 2 && order % 2 == 1 {
                    return Complex64::new(0.0, 0.0);
                }
                let k = wavenumber(idx, n) as f64;
                c * Complex64::new(0.0, 2.0 * PI * k).powu(order)
            })
            .collect();
        Self::from_coefficients(&coeffs).expect("resolution already validated")
    }

    /// Trapezoidal rule on the circle (the mean of the samples).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.resolution() as f64
    }

    /// Value of the trigonometric interpolant. Exact at grid points.
    pub fn eval_at(&self, x: f64) -> f64 {
        let n = self.resolution();
        let x = x.rem_euclid(1.0);
        let s = x * n as f64;
        if s.fract() == 0.0 {
            return self.values[(s as usize) % n];
        }
        let half = n / 2;
        let z = Complex64::from_polar(1.0, 2.0 * PI * x);
        let mut zk = z;
        let mut sum = self.coeffs[0].re;
        for k in 1..self.band.min(half - 1) + 1 {
            sum += 2.0 * (self.coeffs[k] * zk).re;
            zk *= z;
        }
        if self.band >= half {
            sum += self.coeffs[half].re * (PI * n as f64 * x).cos();
        }
        sum
    }

    pub fn eval_many(&self, xs: &[f64]) -> Vec<f64> {
        xs.par_iter().map(|&x| self.eval_at(x)).collect()
    }

    /// Trigonometric interpolation onto a grid of `resolution` points. Upsampling
    /// is exact; downsampling keeps modes `|k| < m/2` plus the cosine part of `m/2`.
    pub fn resample(&self, resolution: usize) -> Result<PeriodicFn> {
        check_resolution(resolution)?;
        let n = self.resolution();
        if resolution == n {
            return Ok(self.clone());
        }
        let m = resolution;
        let mut out = vec![Complex64::new(0.0, 0.0); m];
        if m > n {
            for idx in 0..n {
                let k = wavenumber(idx, n);
                if idx == n / 2 {
                    let half = self.coeffs[idx] * 0.5;
                    out[(n / 2) as usize] += half;
                    out[m - n / 2] += half;
                } else {
                    out[k.rem_euclid(m as i64) as usize] += self.coeffs[idx];
                }
            }
        } else {
            for (idx, slot) in out.iter_mut().enumerate() {
                let k = wavenumber(idx, m);
                *slot = if idx == m / 2 {
                    self.coefficient(k) + self.coefficient(-k)
                } else {
                    self.coefficient(k)
                };
            }
        }
        PeriodicFn::from_coefficients(&out)
    }

    fn combine_dealiased(&self, other: &PeriodicFn, op: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let n = self.resolution();
        if other.resolution() != n {
            return Err(Error::ResolutionMismatch(n, other.resolution()));
        }
        let a = self.resample(2 * n)?;
        let b = other.resample(2 * n)?;
        let fine: Vec<f64> = a.values.iter().zip(&b.values).map(|(&u, &v)| op(u, v)).collect();
        PeriodicFn::from_values(fine)?.resample(n)
    }

    /// Product evaluated on the doubled grid and truncated back.
    pub fn product(&self, other: &PeriodicFn) -> Result<PeriodicFn> {
        self.combine_dealiased(other, |u, v| u * v)
    }

    /// Quotient evaluated on the doubled grid and truncated back.
    pub fn quotient(&self, other: &PeriodicFn) -> Result<PeriodicFn> {
        self.combine_dealiased(other, |u, v| u / v)
    }

    /// Pointwise map on the grid (collocation, no dealiasing).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<PeriodicFn> {
        PeriodicFn::from_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> PeriodicFn {
        self.map(|v| c * v).expect("scaling keeps samples finite")
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_distance(&self, other: &PeriodicFn) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `‖f‖_{C^k} = Σ_{i≤k} sup|f^{(i)}|`, sups taken over the grid.
    pub fn ck_norm(&self, k: u32) -> f64 {
        (0..=k).map(|i| self.derivative(i).sup_norm()).sum()
    }

    /// Grid supremum of `|f'/f|`, the smallest `a` with `f ∈ V_a` up to discretization.
    pub fn log_lip_constant(&self) -> Result<f64> {
        let min = self.min_value();
        if !(min > 0.0) {
            return Err(Error::ConeMembership(format!(
                "non-positive sample (min = {min:.3e})"
            )));
        }
        let d = self.derivative(1);
        Ok(self
            .values
            .iter()
            .zip(d.values())
            .fold(0.0, |m, (v, dv)| m.max((dv / v).abs())))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,value")?;
        for (j, v) in self.values.iter().enumerate() {
            writeln!(w, "{:?},{:?}", self.grid_point(j), v)?;
        }
        Ok(())
    }
}

fn effective_band(coeffs: &[Complex64]) -> usize {
    let n = coeffs.len();
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.norm()));
    if scale == 0.0 {
        return 0;
    }
    let cutoff = EVAL_CUTOFF * scale;
    (1..=n / 2)
        .rev()
        .find(|&k| coeffs[k].norm() > cutoff || coeffs[n - k].norm() > cutoff)
        .unwrap_or(0)
}

impl PartialEq for PeriodicFn {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

#[derive(Serialize, Deserialize)]
struct PeriodicFnRepr {
    resolution: usize,
    values: Vec<f64>,
}

impl Serialize for PeriodicFn {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PeriodicFnRepr {
            resolution: self.resolution(),
            values: self.values.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PeriodicFn {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PeriodicFnRepr::deserialize(d)?;
        if repr.values.len() != repr.resolution {
            return Err(serde::de::Error::custom(format!(
                "resolution {} but {} values",
                repr.resolution,
                repr.values.len()
            )));
        }
        PeriodicFn::from_values(repr.values).map_err(serde::de::Error::custom)
    }
}

impl<'a> Add for &'a PeriodicFn {
    type Output = PeriodicFn;
    fn add(self, rhs: Self) -> PeriodicFn {
        assert_eq!(self.resolution(), rhs.resolution(), "resolution mismatch");
        let v = self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect();
        PeriodicFn::from_values(v).expect("sum of finite samples")
    }
}

impl<'a> Sub for &'a PeriodicFn {
    type Output = PeriodicFn;
    fn sub(self, rhs: Self) -> PeriodicFn {
        assert_eq!(self.resolution(), rhs.resolution(), "resolution mismatch");
        let v = self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect();
        PeriodicFn::from_values(v).expect("difference of finite samples")
    }
}

impl<'a> Mul<f64> for &'a PeriodicFn {
    type Output = PeriodicFn;
    fn mul(self, rhs: f64) -> PeriodicFn {
        self.scale(rhs)
    }
}

impl<'a> Neg for &'a PeriodicFn {
    type Output = PeriodicFn;
    fn neg(self) -> PeriodicFn {
        self.scale(-1.0)
    }
}

/// Probability density on the circle: non-negative samples with unit integral.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Density(PeriodicFn);

pub const DENSITY_MASS_TOL: f64 = 1e-12;

impl Density {
    pub fn new(f: PeriodicFn) -> Result<Self> {
        let mass = f.integral();
        if (mass - 1.0).abs() > DENSITY_MASS_TOL {
            return Err(Error::InvalidDensity(format!("integral {mass}")));
        }
        if f.min_value() < 0.0 {
            return Err(Error::InvalidDensity(format!("negative sample {}", f.min_value())));
        }
        Ok(Density(f))
    }

    /// Divides by the integral. Rejects non-positive mass and clearly negative samples.
    pub fn normalize(f: PeriodicFn) -> Result<Self> {
        let mass = f.integral();
        if !(mass > 0.0) {
            return Err(Error::InvalidDensity(format!("integral {mass}")));
        }
        let scaled = f.scale(1.0 / mass);
        let floor = -1e-10 * scaled.sup_norm();
        if scaled.min_value() < floor {
            return Err(Error::InvalidDensity(format!(
                "negative sample {}",
                scaled.min_value()
            )));
        }
        Ok(Density(scaled))
    }

    pub fn uniform(resolution: usize) -> Result<Self> {
        Ok(Density(PeriodicFn::constant(1.0, resolution)?))
    }

    pub fn as_fn(&self) -> &PeriodicFn {
        &self.0
    }

    pub fn into_fn(self) -> PeriodicFn {
        self.0
    }
}

impl Deref for Density {
    type Target = PeriodicFn;
    fn deref(&self) -> &PeriodicFn {
        &self.0
    }
}

impl<'de> Deserialize<'de> for Density {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = PeriodicFn::deserialize(d)?;
        Density::new(f).map_err(serde::de::Error::custom)
    }
}

/// Parameter of the log-Lipschitz cone `V_a = {φ > 0 : φ(x)/φ(y) ≤ e^{a|x−y|}}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeParams {
    a: f64,
}

impl ConeParams {
    pub fn new(a: f64) -> Result<Self> {
        if a.is_finite() && a > 0.0 {
            Ok(Self { a })
        } else {
            Err(Error::config("cone_a", format!("must be finite and > 0, got {a}")))
        }
    }

    /// `a = max(4·loglip(reference), 4)`.
    pub fn default_for(reference: &PeriodicFn) -> Result<Self> {
        let lip = reference.log_lip_constant()?;
        Self::new((4.0 * lip).max(4.0))
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn contains(&self, f: &PeriodicFn) -> bool {
        matches!(f.log_lip_constant(), Ok(l) if l < self.a)
    }

    fn require(&self, f: &PeriodicFn, which: &str) -> Result<()> {
        let lip = f.log_lip_constant()?;
        if lip < self.a {
            Ok(())
        } else {
            Err(Error::ConeMembership(format!(
                "{which}: log-Lipschitz constant {lip:.4} >= a = {:.4}",
                self.a
            )))
        }
    }
}

/// `α_a(first, second) = inf { second(x)/first(x), (e^{a|x−y|} second(x) − second(y)) / (e^{a|x−y|} first(x) − first(y)) }`
/// over grid points `x` and ordered pairs `x ≠ y`. Pairs with a non-positive
/// denominator are skipped.
pub fn hilbert_alpha(first: &PeriodicFn, second: &PeriodicFn, cone: ConeParams) -> Result<f64> {
    let n = first.resolution();
    let stride = if n <= HILBERT_EXACT_LIMIT { 1 } else { n / HILBERT_EXACT_LIMIT };
    hilbert_alpha_strided(first, second, cone, stride)
}

/// As [`hilbert_alpha`], enumerating only partners `y` whose index is a multiple of `stride`.
pub fn hilbert_alpha_strided(
    first: &PeriodicFn,
    second: &PeriodicFn,
    cone: ConeParams,
    stride: usize,
) -> Result<f64> {
    let n = first.resolution();
    if second.resolution() != n {
        return Err(Error::ResolutionMismatch(n, second.resolution()));
    }
    cone.require(first, "first argument")?;
    cone.require(second, "second argument")?;
    let stride = stride.max(1);
    let growth: Vec<f64> = (0..n)
        .map(|off| (cone.a() * off.min(n - off) as f64 / n as f64).exp())
        .collect();
    let p = first.values();
    let q = second.values();
    let alpha = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut m = q[i] / p[i];
            for j in (0..n).step_by(stride) {
                if j == i {
                    continue;
                }
                let e = growth[(i + n - j) % n];
                let den = e * p[i] - p[j];
                if den > 0.0 {
                    m = m.min((e * q[i] - q[j]) / den);
                }
            }
            m
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(alpha)
}

/// Hilbert projective distance `θ_a(φ,ψ) = −log(α_a(φ,ψ) α_a(ψ,φ))`.
pub fn hilbert_distance(phi: &PeriodicFn, psi: &PeriodicFn, cone: ConeParams) -> Result<f64> {
    let a = hilbert_alpha(phi, psi, cone)?;
    let b = hilbert_alpha(psi, phi, cone)?;
    Ok((-(a * b).ln()).max(0.0))
}

//! Dynamical ingredients: the expanding circle map, the coupling kernel, the
//! mean field `A_ψ(x) = ∫ h(x,y) ψ(y) dy`, and the coupling diffeomorphism
//! `Φ_{t,ψ}(x) = x + t A_ψ(x)`.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::periodic::PeriodicFn;

/// Highest derivative order exposed by maps and kernels.
pub const MAX_DERIVATIVE: u32 = 5;

const EXTREMA_GRID: usize = 1 << 14;
const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-12;

/// A smooth degree-`N` circle map given by its lift to the real line.
pub trait CircleMap: Send + Sync + Debug {
    /// Lift `F` with `F(x + 1) = F(x) + degree`.
    fn lift(&self, x: f64) -> f64;
    /// `order`-th derivative of the lift, `1 <= order <= MAX_DERIVATIVE`.
    fn derivative(&self, x: f64, order: u32) -> f64;
    fn degree(&self) -> u32;
}

/// `f(x) = N x + α sin(2πx) mod 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedLinear {
    pub degree: u32,
    pub alpha: f64,
}

impl CircleMap for PerturbedLinear {
    fn lift(&self, x: f64) -> f64 {
        self.degree as f64 * x + self.alpha * (2.0 * PI * x).sin()
    }

    fn derivative(&self, x: f64, order: u32) -> f64 {
        let w = 2.0 * PI;
        let pert = self.alpha * w.powi(order as i32) * (w * x + order as f64 * PI / 2.0).sin();
        if order == 1 {
            self.degree as f64 + pert
        } else {
            pert
        }
    }

    fn degree(&self) -> u32 {
        self.degree
    }
}

/// Sampled extrema of the derivatives of a circle map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapExtrema {
    /// `min |f'|`.
    pub min_abs_d1: f64,
    /// `max |f^{(k)}|` at index `k - 1`, `k = 1..=5`.
    pub max_abs: [f64; 5],
}

impl MapExtrema {
    /// Scan on a 2^14 grid, then one parabolic polish step around each extremum.
    pub fn measure(map: &dyn CircleMap) -> Self {
        let mut max_abs = [0.0; 5];
        for (i, slot) in max_abs.iter_mut().enumerate() {
            let g = |x: f64| map.derivative(x, i as u32 + 1).abs();
            *slot = polished_extremum(&g, true);
        }
        let g = |x: f64| map.derivative(x, 1).abs();
        let min_abs_d1 = polished_extremum(&g, false);
        Self {
            min_abs_d1,
            max_abs,
        }
    }

    pub fn max_abs(&self, order: u32) -> f64 {
        self.max_abs[order as usize - 1]
    }
}

/// Grid extremum of a periodic function refined by one Newton step on its
/// derivative, with derivatives estimated from the three neighbouring samples.
fn polished_extremum(g: &(dyn Fn(f64) -> f64 + Sync), maximize: bool) -> f64 {
    let n = EXTREMA_GRID;
    let h = 1.0 / n as f64;
    let samples: Vec<f64> = (0..n).into_par_iter().map(|j| g(j as f64 * h)).collect();
    let better = |a: f64, b: f64| if maximize { a > b } else { a < b };
    let mut best = 0;
    for j in 1..n {
        if better(samples[j], samples[best]) {
            best = j;
        }
    }
    let (l, c, r) = (
        samples[(best + n - 1) % n],
        samples[best],
        samples[(best + 1) % n],
    );
    let curvature = l - 2.0 * c + r;
    if curvature == 0.0 {
        return c;
    }
    let shift = 0.5 * (l - r) / curvature;
    if shift.abs() > 1.0 {
        return c;
    }
    let polished = g((best as f64 + shift) * h);
    if better(polished, c) {
        polished
    } else {
        c
    }
}

/// An orientation-preserving uniformly expanding circle map with its certified
/// (sampled) expansion bound `ω = min |f'| > 1`.
#[derive(Clone, Debug)]
pub struct ExpandingMap {
    inner: Arc<dyn CircleMap>,
    extrema: MapExtrema,
    lift_at_zero: f64,
}

impl ExpandingMap {
    pub fn new(inner: Arc<dyn CircleMap>) -> Result<Self> {
        let degree = inner.degree();
        if degree == 0 {
            return Err(Error::NotExpanding("degree 0".into()));
        }
        let lift_at_zero = inner.lift(0.0);
        let span = inner.lift(1.0) - lift_at_zero;
        if (span - degree as f64).abs() > 1e-9 {
            return Err(Error::NotExpanding(format!(
                "lift(1) - lift(0) = {span}, expected degree {degree}"
            )));
        }
        let extrema = MapExtrema::measure(inner.as_ref());
        let min_d1 = (0..1024)
            .map(|j| inner.derivative(j as f64 / 1024.0, 1))
            .fold(f64::INFINITY, f64::min);
        if min_d1 <= 0.0 {
            return Err(Error::NotExpanding(
                "orientation-reversing or critical map".into(),
            ));
        }
        if extrema.min_abs_d1 <= 1.0 {
            return Err(Error::NotExpanding(format!(
                "min |f'| = {} <= 1",
                extrema.min_abs_d1
            )));
        }
        Ok(Self {
            inner,
            extrema,
            lift_at_zero,
        })
    }

    pub fn perturbed_linear(degree: u32, alpha: f64) -> Result<Self> {
        Self::new(Arc::new(PerturbedLinear { degree, alpha }))
    }

    pub fn doubling() -> Self {
        Self::perturbed_linear(2, 0.0).expect("doubling map is expanding")
    }

    pub fn degree(&self) -> u32 {
        self.inner.degree()
    }

    pub fn omega(&self) -> f64 {
        self.extrema.min_abs_d1
    }

    pub fn extrema(&self) -> &MapExtrema {
        &self.extrema
    }

    pub fn circle_map(&self) -> &dyn CircleMap {
        self.inner.as_ref()
    }

    pub fn lift(&self, x: f64) -> f64 {
        self.inner.lift(x)
    }

    pub fn derivative(&self, x: f64, order: u32) -> f64 {
        self.inner.derivative(x, order)
    }

    /// `f(x) mod 1`.
    pub fn apply(&self, x: f64) -> f64 {
        self.inner.lift(x).rem_euclid(1.0)
    }

    /// The `N` preimages of `y` in `[0,1)`, in increasing order.
    pub fn inverse_branches(&self, y: f64) -> Result<Vec<f64>> {
        let n = self.degree();
        let base = self.lift_at_zero;
        let offset = (y - base).rem_euclid(1.0);
        (0..n)
            .map(|i| {
                let target = base + offset + i as f64;
                self.solve_branch(target, (offset + i as f64) / n as f64)
            })
            .collect()
    }

    /// Safeguarded Newton for `lift(x) = target` on `[0,1]`, where the lift is increasing.
    fn solve_branch(&self, target: f64, seed: f64) -> Result<f64> {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut x = seed.clamp(0.0, 1.0);
        let mut residual = f64::INFINITY;
        for _ in 0..NEWTON_MAX_ITER {
            let g = self.inner.lift(x) - target;
            residual = g.abs();
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if residual <= 1e-15 * (1.0 + target.abs()) {
                break;
            }
            let mut next = x - g / self.inner.derivative(x, 1);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() < 1e-17 {
                x = next;
                residual = (self.inner.lift(x) - target).abs();
                break;
            }
            x = next;
        }
        if residual > NEWTON_TOL {
            return Err(Error::NonConvergence {
                context: format!("inverse branch for lift value {target}"),
                iterations: NEWTON_MAX_ITER,
                residual,
                history: vec![],
            });
        }
        Ok(if x >= 1.0 { x - 1.0 } else { x })
    }
}

/// Left side of the expansion/distortion condition, `N (max|f''|/ω³ + 1/ω²)`,
/// for any smooth circle map (expanding or not). Expanding maps with value
/// below one satisfy the standing assumption.
pub fn expansion_condition_value(map: &dyn CircleMap) -> f64 {
    let ext = MapExtrema::measure(map);
    let omega = ext.min_abs_d1;
    map.degree() as f64 * (ext.max_abs(2) / omega.powi(3) + 1.0 / omega.powi(2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trig {
    Sin,
    Cos,
}

impl Trig {
    /// `d^order/dx^order` of `sin(2πkx)` or `cos(2πkx)`.
    pub fn eval(self, mode: u32, x: f64, order: u32) -> f64 {
        if mode == 0 {
            return match (self, order) {
                (Trig::Cos, 0) => 1.0,
                _ => 0.0,
            };
        }
        let w = 2.0 * PI * mode as f64;
        let phase = w * x + order as f64 * PI / 2.0;
        let base = match self {
            Trig::Sin => phase.sin(),
            Trig::Cos => phase.cos(),
        };
        w.powi(order as i32) * base
    }
}

/// The interaction `h(x, y)`, periodic in both arguments.
pub trait CouplingKernel: Send + Sync + Debug {
    fn eval(&self, x: f64, y: f64) -> f64;
    /// `∂₁^order h(x, y)`, `order <= MAX_DERIVATIVE`.
    fn d1(&self, x: f64, y: f64, order: u32) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorTerm {
    pub coeff: f64,
    pub x_mode: u32,
    pub x_trig: Trig,
    pub y_mode: u32,
    pub y_trig: Trig,
}

/// `h(x,y) = Σ c · trig(2πk x) · trig(2πl y)`. No terms means `h ≡ 0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TensorTrigKernel {
    pub terms: Vec<TensorTerm>,
}

impl TensorTrigKernel {
    pub fn new(terms: Vec<TensorTerm>) -> Self {
        Self { terms }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// `h(x,y) = c · trig(2πk x)`, independent of `y`.
    pub fn x_only(coeff: f64, mode: u32, trig: Trig) -> Self {
        Self::new(vec![TensorTerm {
            coeff,
            x_mode: mode,
            x_trig: trig,
            y_mode: 0,
            y_trig: Trig::Cos,
        }])
    }
}

impl CouplingKernel for TensorTrigKernel {
    fn eval(&self, x: f64, y: f64) -> f64 {
        self.d1(x, y, 0)
    }

    fn d1(&self, x: f64, y: f64, order: u32) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * t.x_trig.eval(t.x_mode, x, order) * t.y_trig.eval(t.y_mode, y, 0))
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferenceTerm {
    pub coeff: f64,
    pub mode: u32,
    pub trig: Trig,
}

/// `h(x,y) = g(y − x)` with `g` a trigonometric polynomial.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DifferenceKernel {
    pub terms: Vec<DifferenceTerm>,
}

impl DifferenceKernel {
    pub fn new(terms: Vec<DifferenceTerm>) -> Self {
        Self { terms }
    }
}

impl CouplingKernel for DifferenceKernel {
    fn eval(&self, x: f64, y: f64) -> f64 {
        self.d1(x, y, 0)
    }

    fn d1(&self, x: f64, y: f64, order: u32) -> f64 {
        let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
        sign * self
            .terms
            .iter()
            .map(|t| t.coeff * t.trig.eval(t.mode, y - x, order))
            .sum::<f64>()
    }
}

/// Serializable kernel description used by configs and bindings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    TensorTrig {
        #[serde(default)]
        coefficients: Vec<TensorTerm>,
    },
    Difference {
        #[serde(default)]
        coefficients: Vec<DifferenceTerm>,
    },
}

impl KernelSpec {
    pub fn build(&self) -> Arc<dyn CouplingKernel> {
        match self {
            KernelSpec::TensorTrig { coefficients } => {
                Arc::new(TensorTrigKernel::new(coefficients.clone()))
            }
            KernelSpec::Difference { coefficients } => {
                Arc::new(DifferenceKernel::new(coefficients.clone()))
            }
        }
    }
}

/// Serializable map description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MapSpec {
    PerturbedLinear { degree: u32, alpha: f64 },
}

impl MapSpec {
    pub fn build(&self) -> Result<ExpandingMap> {
        match *self {
            MapSpec::PerturbedLinear { degree, alpha } => ExpandingMap::perturbed_linear(degree, alpha),
        }
    }
}

/// Sampled suprema `K_i = sup |∂₁^i h|`, `i = 0..=5`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBounds {
    pub sup: [f64; 6],
}

impl KernelBounds {
    pub fn measure(kernel: &dyn CouplingKernel) -> Self {
        const G: usize = 256;
        let mut sup = [0.0; 6];
        for (order, slot) in sup.iter_mut().enumerate() {
            *slot = (0..G * G)
                .into_par_iter()
                .map(|idx| {
                    let (i, j) = (idx / G, idx % G);
                    kernel.d1(i as f64 / G as f64, j as f64 / G as f64, order as u32).abs()
                })
                .reduce(|| 0.0, f64::max);
        }
        Self { sup }
    }

    pub fn k(&self, order: u32) -> f64 {
        self.sup[order as usize]
    }
}

/// Quadrature matrix `h(x_j, y_l) / n` for the mean field on a fixed grid.
#[derive(Clone, Debug)]
pub struct MeanFieldOperator {
    resolution: usize,
    weights: Vec<f64>,
}

impl MeanFieldOperator {
    pub fn new(kernel: &dyn CouplingKernel, resolution: usize) -> Result<Self> {
        PeriodicFn::zero(resolution)?;
        let n = resolution;
        let h = 1.0 / n as f64;
        let weights = (0..n * n)
            .into_par_iter()
            .map(|idx| kernel.eval((idx / n) as f64 * h, (idx % n) as f64 * h) * h)
            .collect();
        Ok(Self {
            resolution,
            weights,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn apply(&self, psi: &PeriodicFn) -> Result<PeriodicFn> {
        let n = self.resolution;
        if psi.resolution() != n {
            return Err(Error::ResolutionMismatch(n, psi.resolution()));
        }
        let v = psi.values();
        let out = (0..n)
            .into_par_iter()
            .map(|j| {
                self.weights[j * n..(j + 1) * n]
                    .iter()
                    .zip(v)
                    .map(|(w, p)| w * p)
                    .sum()
            })
            .collect();
        PeriodicFn::from_values(out)
    }
}

/// `A_ψ(x_j) = (1/n) Σ_l h(x_j, y_l) ψ(y_l)`.
pub fn mean_field(kernel: &dyn CouplingKernel, psi: &PeriodicFn) -> Result<PeriodicFn> {
    MeanFieldOperator::new(kernel, psi.resolution())?.apply(psi)
}

/// `Φ(x) = x + t A(x)` together with the spectral derivatives of `A`.
#[derive(Clone, Debug)]
pub struct CoupledDiffeo {
    t: f64,
    meanfield: PeriodicFn,
    meanfield_d: [PeriodicFn; 3],
}

impl CoupledDiffeo {
    /// Checks `min_grid (1 + t A') > 0`.
    pub fn new(t: f64, meanfield: PeriodicFn) -> Result<Self> {
        let d1 = meanfield.derivative(1);
        let d2 = meanfield.derivative(2);
        let d3 = meanfield.derivative(3);
        let min_derivative = 1.0
            + d1
                .values()
                .iter()
                .map(|&v| t * v)
                .fold(f64::INFINITY, f64::min);
        if !(min_derivative > 0.0) {
            return Err(Error::DiffeoViolation { t, min_derivative });
        }
        Ok(Self {
            t,
            meanfield,
            meanfield_d: [d1, d2, d3],
        })
    }

    pub fn identity(resolution: usize) -> Result<Self> {
        Self::new(0.0, PeriodicFn::zero(resolution)?)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn meanfield(&self) -> &PeriodicFn {
        &self.meanfield
    }

    /// `A^{(order)}` for `order` in 1..=3.
    pub fn meanfield_derivative(&self, order: u32) -> &PeriodicFn {
        &self.meanfield_d[order as usize - 1]
    }

    /// `1 + t A'` on the grid.
    pub fn derivative_fn(&self) -> PeriodicFn {
        self.meanfield_d[0]
            .map(|v| 1.0 + self.t * v)
            .expect("finite derivative samples")
    }

    pub fn min_derivative(&self) -> f64 {
        self.derivative_fn().min_value()
    }

    pub fn forward(&self, x: f64) -> f64 {
        x + self.t * self.meanfield.eval_at(x)
    }

    /// `Φ^{(order)}(x)` for `order` in 1..=3.
    pub fn deriv(&self, x: f64, order: u32) -> f64 {
        let base = self.t * self.meanfield_d[order as usize - 1].eval_at(x);
        if order == 1 {
            1.0 + base
        } else {
            base
        }
    }

    /// Newton iteration on `x + tA(x) − y` seeded at `y`.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        let mut x = y;
        let mut residual = 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let g = self.forward(x) - y;
            residual = g.abs();
            if residual <= 1e-15 {
                return Ok(x);
            }
            let step = g / self.deriv(x, 1);
            x -= step;
            if step.abs() <= 1e-16 {
                residual = (self.forward(x) - y).abs();
                if residual <= NEWTON_TOL {
                    return Ok(x);
                }
            }
        }
        residual = residual.min((self.forward(x) - y).abs());
        if residual <= NEWTON_TOL {
            return Ok(x);
        }
        Err(Error::NonConvergence {
            context: format!("coupling diffeomorphism inverse at y = {y}"),
            iterations: NEWTON_MAX_ITER,
            residual,
            history: vec![],
        })
    }

    /// `Φ⁻¹` at every point of the grid of the given resolution.
    pub fn inverse_on_grid(&self, resolution: usize) -> Result<Vec<f64>> {
        let h = 1.0 / resolution as f64;
        (0..resolution)
            .into_par_iter()
            .map(|j| self.inverse(j as f64 * h))
            .collect()
    }
}

/// Assembles `Φ_{t,ψ}` for the kernel and density.
pub fn make_diffeo(kernel: &dyn CouplingKernel, psi: &PeriodicFn, t: f64) -> Result<CoupledDiffeo> {
    CoupledDiffeo::new(t, mean_field(kernel, psi)?)
}

/// `F_{t,ψ}(x) = f(Φ_{t,ψ}(x)) mod 1`.
pub fn coupled_map(map: &ExpandingMap, diffeo: &CoupledDiffeo, x: f64) -> f64 {
    map.apply(diffeo.forward(x))
}

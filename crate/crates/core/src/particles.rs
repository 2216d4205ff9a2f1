//! Finite ensembles `x_i ← f(x_i + (ε/M) Σ_j h(x_i, x_j))` and their distance to
//! the self-consistent invariant density.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::periodic::{Density, PeriodicFn};
use crate::system::{CouplingKernel, ExpandingMap};
use crate::transfer::{FixedPointConfig, SelfConsistentSystem};

/// Identifier of the pseudo-random generator recorded in reports.
pub const RNG_ALGORITHM: &str = "chacha8/rand_chacha-0.9";
pub const DEFAULT_BINS: usize = 1024;
/// Ensembles at least this large step in binned mode unless told otherwise.
pub const BINNED_THRESHOLD: usize = 10_000;
/// Nodes of the piecewise-linear CDF used by [`empirical_distance`].
pub const CDF_NODES: usize = 4096;
/// Relative magnitude below which Fourier modes of the binned field are dropped.
const FIELD_MODE_CUTOFF: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub epsilon: f64,
    pub step_count: u64,
    pub rng_seed: u64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,index,position")?;
        for (i, x) in self.positions.iter().enumerate() {
            writeln!(w, "{},{},{:?}", self.step_count, i, x)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub enum InitialDistribution<'a> {
    Uniform,
    Density(&'a Density),
}

/// Cumulative distribution `F(x) = ∫_0^x ρ` of the trigonometric interpolant of a density.
#[derive(Clone, Debug)]
pub struct DensityCdf {
    mean: f64,
    /// `(k, c_k / (2πik))` for the retained modes `k ≥ 1`.
    modes: Vec<(f64, Complex64)>,
    rho: PeriodicFn,
}

impl DensityCdf {
    pub fn new(rho: &Density) -> Self {
        let n = rho.resolution() as i64;
        let scale = rho.coefficients().iter().fold(0.0f64, |m, c| m.max(c.norm()));
        let modes = (1..n / 2)
            .filter_map(|k| {
                let c = rho.coefficient(k);
                (c.norm() > 1e-16 * scale)
                    .then(|| (k as f64, c / Complex64::new(0.0, 2.0 * PI * k as f64)))
            })
            .collect();
        Self {
            mean: rho.coefficient(0).re,
            modes,
            rho: rho.as_fn().clone(),
        }
    }

    /// `F(x)` for `x ∈ [0, 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        let mut s = self.mean * x;
        for &(k, c) in &self.modes {
            let e = Complex64::from_polar(1.0, 2.0 * PI * k * x) - 1.0;
            s += 2.0 * (c * e).re;
        }
        s
    }

    /// `F⁻¹(u)` by safeguarded Newton.
    pub fn quantile(&self, u: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut x = u;
        for _ in 0..100 {
            let g = self.eval(x) - u;
            if g.abs() < 1e-15 {
                break;
            }
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.rho.eval_at(x);
            let newton = x - g / d;
            x = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-16 {
                break;
            }
        }
        x.clamp(0.0, 1.0 - f64::EPSILON)
    }
}

/// I.i.d. samples from the initial distribution (inverse CDF for densities).
pub fn ensemble_init(m: usize, seed: u64, epsilon: f64, initial: InitialDistribution) -> Result<ParticleEnsemble> {
    if m == 0 {
        return Err(Error::config("particles.m", "ensemble needs at least one particle"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniforms: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    let positions = match initial {
        InitialDistribution::Uniform => uniforms,
        InitialDistribution::Density(rho) => {
            let cdf = DensityCdf::new(rho);
            uniforms.par_iter().map(|&u| cdf.quantile(u)).collect()
        }
    };
    Ok(ParticleEnsemble {
        positions,
        epsilon,
        step_count: 0,
        rng_seed: seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepMode {
    Exact,
    Binned { n_bins: usize },
}

impl StepMode {
    /// Binned with the default bin count for large ensembles, exact otherwise.
    pub fn auto(m: usize) -> Self {
        if m >= BINNED_THRESHOLD {
            StepMode::Binned { n_bins: DEFAULT_BINS }
        } else {
            StepMode::Exact
        }
    }
}

/// Kernel values `h(x_j, b/n_bins)` for the binned field on a `resolution` grid.
#[derive(Clone, Debug)]
pub struct BinnedField {
    resolution: usize,
    n_bins: usize,
    table: Vec<f64>,
}

impl BinnedField {
    pub fn new(kernel: &dyn CouplingKernel, resolution: usize, n_bins: usize) -> Result<Self> {
        PeriodicFn::zero(resolution)?;
        if n_bins == 0 {
            return Err(Error::config("particles.n_bins", "must be positive"));
        }
        let table = (0..resolution * n_bins)
            .into_par_iter()
            .map(|idx| {
                let (j, b) = (idx / n_bins, idx % n_bins);
                kernel.eval(j as f64 / resolution as f64, b as f64 / n_bins as f64)
            })
            .collect();
        Ok(Self {
            resolution,
            n_bins,
            table,
        })
    }

    /// Cloud-in-cell weights of the empirical measure on the bin nodes.
    pub fn deposit(&self, positions: &[f64]) -> Vec<f64> {
        let nb = self.n_bins;
        let mut w = vec![0.0; nb];
        let unit = 1.0 / positions.len() as f64;
        for &x in positions {
            let s = x * nb as f64;
            let b = s.floor();
            let frac = s - b;
            let b = (b as usize) % nb;
            w[b] += unit * (1.0 - frac);
            w[(b + 1) % nb] += unit * frac;
        }
        w
    }

    /// Mean field of the empirical measure on the grid, low-passed to significant modes.
    pub fn field(&self, positions: &[f64]) -> Result<PeriodicFn> {
        let w = self.deposit(positions);
        let nb = self.n_bins;
        let values = (0..self.resolution)
            .into_par_iter()
            .map(|j| self.table[j * nb..(j + 1) * nb].iter().zip(&w).map(|(h, m)| h * m).sum())
            .collect();
        let f = PeriodicFn::from_values(values)?;
        let scale = f.coefficients().iter().fold(0.0f64, |m, c| m.max(c.norm()));
        let coeffs: Vec<Complex64> = f
            .coefficients()
            .iter()
            .map(|&c| if c.norm() > FIELD_MODE_CUTOFF * scale { c } else { Complex64::new(0.0, 0.0) })
            .collect();
        PeriodicFn::from_coefficients(&coeffs)
    }
}

fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(1.0);
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// `(1/M) Σ_j h(x_i, x_j)` for every particle, `O(M²)`. The sum runs over the sorted
/// positions so the result does not depend on particle labels, bit for bit.
pub fn exact_field(kernel: &dyn CouplingKernel, positions: &[f64]) -> Vec<f64> {
    let inv = 1.0 / positions.len() as f64;
    let mut sorted = positions.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    positions
        .par_iter()
        .map(|&x| sorted.iter().map(|&y| kernel.eval(x, y)).sum::<f64>() * inv)
        .collect()
}

/// One step of the coupled ensemble. `binned` is required for [`StepMode::Binned`]
/// and must match its bin count.
pub fn ensemble_step(
    e: &ParticleEnsemble,
    map: &ExpandingMap,
    kernel: &dyn CouplingKernel,
    mode: StepMode,
    binned: Option<&BinnedField>,
) -> Result<ParticleEnsemble> {
    let eps = e.epsilon;
    let field: Vec<f64> = if eps == 0.0 {
        vec![0.0; e.len()]
    } else {
        match mode {
            StepMode::Exact => exact_field(kernel, &e.positions),
            StepMode::Binned { n_bins } => {
                let owned;
                let bf = match binned {
                    Some(b) if b.n_bins == n_bins => b,
                    _ => {
                        owned = BinnedField::new(kernel, crate::periodic::DEFAULT_RESOLUTION, n_bins)?;
                        &owned
                    }
                };
                bf.field(&e.positions)?.eval_many(&e.positions)
            }
        }
    };
    let positions = e
        .positions
        .par_iter()
        .zip(&field)
        .map(|(&x, &a)| wrap(map.apply(x + eps * a)))
        .collect();
    Ok(ParticleEnsemble {
        positions,
        epsilon: eps,
        step_count: e.step_count + 1,
        rng_seed: e.rng_seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EmpiricalDistance {
    /// Wasserstein-1 distance on the circle.
    pub w1: f64,
    /// `sup |F_M − F_ρ|` on `[0, 1)`.
    pub ks: f64,
    /// Kuiper statistic `max(F_M − F_ρ) + max(F_ρ − F_M)`.
    pub kuiper: f64,
}

/// `∫ |g − c|` over a piece of length `len` on which `g` is linear from `u` to `v`.
fn linear_abs_integral(u: f64, v: f64, c: f64, len: f64) -> f64 {
    let (a, b) = (u - c, v - c);
    if a * b >= 0.0 {
        len * (0.5 * (a + b)).abs()
    } else {
        len * (a * a + b * b) / (2.0 * (a - b).abs())
    }
}

/// Circle W₁ between the empirical measure and `ρ`: `min_c ∫ |F_M − F_ρ − c|`.
/// `F_ρ` is taken piecewise linear between the [`CDF_NODES`] grid and the particles.
pub fn empirical_distance(e: &ParticleEnsemble, rho: &Density) -> EmpiricalDistance {
    distance_to_cdf(&e.positions, &DensityCdf::new(rho))
}

pub fn distance_to_cdf(positions: &[f64], cdf: &DensityCdf) -> EmpiricalDistance {
    let m = positions.len();
    let mut xs = positions.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let f_particles: Vec<f64> = xs.par_iter().map(|&x| cdf.eval(x)).collect();
    let f_nodes: Vec<f64> = (0..=CDF_NODES)
        .into_par_iter()
        .map(|j| cdf.eval(j as f64 / CDF_NODES as f64))
        .collect();

    // merged breakpoints: (x, F_ρ(x), number of particles at or left of x)
    let mut pts: Vec<(f64, f64, usize)> = Vec::with_capacity(m + CDF_NODES + 1);
    let (mut i, mut j) = (0, 0);
    while i < m || j <= CDF_NODES {
        let node_x = j as f64 / CDF_NODES as f64;
        if j <= CDF_NODES && (i >= m || node_x < xs[i]) {
            pts.push((node_x, f_nodes[j], i));
            j += 1;
        } else {
            pts.push((xs[i], f_particles[i], i + 1));
            i += 1;
        }
    }
    // pieces where G = F_M − F_ρ is linear
    let inv_m = 1.0 / m as f64;
    let pieces: Vec<(f64, f64, f64)> = pts
        .windows(2)
        .filter(|w| w[1].0 > w[0].0)
        .map(|w| {
            let level = w[0].2 as f64 * inv_m;
            (level - w[0].1, level - w[1].1, w[1].0 - w[0].0)
        })
        .collect();

    let mut ks = 0.0f64;
    let (mut above, mut below) = (0.0f64, 0.0f64);
    for (k, (&x, &f)) in xs.iter().zip(&f_particles).enumerate() {
        let _ = x;
        let left = k as f64 * inv_m - f;
        let right = (k + 1) as f64 * inv_m - f;
        ks = ks.max(left.abs()).max(right.abs());
        above = above.max(right).max(left);
        below = below.max(-left).max(-right);
    }

    // median of G under Lebesgue measure minimizes ∫|G − c|
    let mass_below = |c: f64| -> f64 {
        pieces
            .iter()
            .map(|&(u, v, len)| {
                let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
                if c <= lo {
                    0.0
                } else if c >= hi {
                    len
                } else {
                    len * (c - lo) / (hi - lo)
                }
            })
            .sum()
    };
    let (mut lo, mut hi) = pieces
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &(u, v, _)| (l.min(u).min(v), h.max(u).max(v)));
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass_below(mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    let w1 = pieces.iter().map(|&(u, v, len)| linear_abs_integral(u, v, c, len)).sum();
    EmpiricalDistance {
        w1,
        ks,
        kuiper: above + below,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub m: usize,
    pub seed: u64,
    pub burn_in: u64,
    pub horizon: u64,
    /// Sampling interval of the distance series after burn-in.
    pub sample_every: u64,
    /// `None` picks [`StepMode::auto`].
    pub mode: Option<StepMode>,
    pub histogram_bins: usize,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        Self {
            m: 1000,
            seed: 0,
            burn_in: 200,
            horizon: 1000,
            sample_every: 10,
            mode: None,
            histogram_bins: 64,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DistanceSample {
    pub step: u64,
    pub w1: f64,
    pub ks: f64,
    pub kuiper: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
    pub empirical_density: f64,
    /// Mass of `ρ` in the bin divided by its width.
    pub rho_density: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsistencyReport {
    pub epsilon: f64,
    pub m: usize,
    pub seed: u64,
    pub rng: String,
    pub mode: StepMode,
    pub burn_in: u64,
    pub horizon: u64,
    pub fixed_point_residual: f64,
    pub samples: Vec<DistanceSample>,
    pub mean_w1: f64,
    pub mean_ks: f64,
    pub histogram: Vec<HistogramBin>,
    #[serde(skip)]
    pub rho: Option<Density>,
    #[serde(skip)]
    pub final_ensemble: Option<ParticleEnsemble>,
}

pub fn histogram(positions: &[f64], cdf: &DensityCdf, bins: usize) -> Vec<HistogramBin> {
    let mut counts = vec![0usize; bins];
    for &x in positions {
        counts[((x * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let width = 1.0 / bins as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| {
            let (left, right) = (b as f64 * width, (b + 1) as f64 * width);
            HistogramBin {
                left,
                right,
                count,
                empirical_density: count as f64 / (positions.len() as f64 * width),
                rho_density: (cdf.eval(right) - cdf.eval(left)) / width,
            }
        })
        .collect()
}

/// Runs the ensemble from uniform initial positions next to the fixed-point solve for
/// `ρ(ε)`, sampling the distance every `sample_every` steps after burn-in.
pub fn thermodynamic_consistency_run(
    system: &SelfConsistentSystem,
    epsilon: f64,
    config: &ParticleConfig,
    fixed_point: &FixedPointConfig,
) -> Result<ConsistencyReport> {
    let mode = config.mode.unwrap_or_else(|| StepMode::auto(config.m));
    let binned = match mode {
        StepMode::Binned { n_bins } => Some(BinnedField::new(system.kernel(), system.resolution(), n_bins)?),
        StepMode::Exact => None,
    };
    let run_burn_in = || -> Result<ParticleEnsemble> {
        let mut e = ensemble_init(config.m, config.seed, epsilon, InitialDistribution::Uniform)?;
        for _ in 0..config.burn_in {
            e = ensemble_step(&e, system.map(), system.kernel(), mode, binned.as_ref())?;
        }
        Ok(e)
    };
    let (fixed, burned) = rayon::join(|| system.solve_fixed_density(epsilon, fixed_point), run_burn_in);
    let fixed = fixed?;
    let mut e = burned?;
    let cdf = DensityCdf::new(&fixed.rho);
    let every = config.sample_every.max(1);
    let mut samples = Vec::new();
    for s in 0..=config.horizon {
        if s > 0 {
            e = ensemble_step(&e, system.map(), system.kernel(), mode, binned.as_ref())?;
        }
        if s % every == 0 {
            let d = distance_to_cdf(&e.positions, &cdf);
            samples.push(DistanceSample {
                step: e.step_count,
                w1: d.w1,
                ks: d.ks,
                kuiper: d.kuiper,
            });
        }
    }
    let count = samples.len() as f64;
    Ok(ConsistencyReport {
        epsilon,
        m: config.m,
        seed: config.seed,
        rng: RNG_ALGORITHM.to_string(),
        mode,
        burn_in: config.burn_in,
        horizon: config.horizon,
        fixed_point_residual: fixed.final_residual,
        mean_w1: samples.iter().map(|s| s.w1).sum::<f64>() / count,
        mean_ks: samples.iter().map(|s| s.ks).sum::<f64>() / count,
        histogram: histogram(&e.positions, &cdf, config.histogram_bins.max(1)),
        samples,
        rho: Some(fixed.rho),
        final_ensemble: Some(e),
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{DifferenceKernel, DifferenceTerm, TensorTrigKernel, Trig};

    #[test]
    fn init_is_reproducible_and_in_range() {
        let a = ensemble_init(4, 11, 0.0, InitialDistribution::Uniform).unwrap();
        let b = ensemble_init(4, 11, 0.0, InitialDistribution::Uniform).unwrap();
        assert_eq!(a, b);
        assert!(a.positions.iter().all(|&x| (0.0..1.0).contains(&x)));
        assert_eq!(ensemble_init(1, 0, 0.0, InitialDistribution::Uniform).unwrap().len(), 1);
        assert!(ensemble_init(0, 0, 0.0, InitialDistribution::Uniform).is_err());
    }

    #[test]
    fn cdf_and_quantile_invert() {
        let rho = Density::normalize(PeriodicFn::sample(|x| 1.0 + 0.5 * (2.0 * PI * x).sin(), 64).unwrap()).unwrap();
        let cdf = DensityCdf::new(&rho);
        for x in [0.0, 0.1, 0.5, 0.77] {
            let exact = x + 0.5 * (1.0 - (2.0 * PI * x).cos()) / (2.0 * PI);
            assert!((cdf.eval(x) - exact).abs() < 1e-14);
            assert!((cdf.quantile(exact) - x).abs() < 1e-12);
        }
        assert!((cdf.eval(1.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_particle_and_uncoupled_steps() {
        let map = ExpandingMap::doubling();
        let k = TensorTrigKernel::x_only(1.0, 2, Trig::Sin);
        let e = ParticleEnsemble {
            positions: vec![0.3],
            epsilon: 0.05,
            step_count: 0,
            rng_seed: 0,
        };
        let next = ensemble_step(&e, &map, &k, StepMode::Exact, None).unwrap();
        let expect = wrap(2.0 * (0.3 + 0.05 * (4.0 * PI * 0.3).sin()));
        assert!((next.positions[0] - expect).abs() < 1e-15);

        let e = ensemble_init(16, 3, 0.0, InitialDistribution::Uniform).unwrap();
        let next = ensemble_step(&e, &map, &k, StepMode::Exact, None).unwrap();
        for (a, b) in e.positions.iter().zip(&next.positions) {
            assert_eq!(*b, map.apply(*a));
        }
    }

    #[test]
    fn binned_field_matches_exact_for_difference_kernel() {
        let k = DifferenceKernel::new(vec![DifferenceTerm {
            coeff: 1.0,
            mode: 1,
            trig: Trig::Cos,
        }]);
        let e = ensemble_init(2000, 5, 0.1, InitialDistribution::Uniform).unwrap();
        let exact = exact_field(&k, &e.positions);
        let bf = BinnedField::new(&k, 64, 1024).unwrap();
        let binned = bf.field(&e.positions).unwrap().eval_many(&e.positions);
        let err = exact.iter().zip(&binned).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        // cloud-in-cell error is O(n_bins^-2)
        assert!(err < (2.0 * PI / 1024.0).powi(2), "{err}");
    }

    #[test]
    fn equispaced_particles_against_uniform() {
        let m = 100;
        let rho = Density::uniform(64).unwrap();
        let e = ParticleEnsemble {
            positions: (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect(),
            epsilon: 0.0,
            step_count: 0,
            rng_seed: 0,
        };
        let d = empirical_distance(&e, &rho);
        // midpoints: W1 = 1/(4M) exactly
        assert!((d.w1 - 0.25 / m as f64).abs() < 1e-12, "{}", d.w1);
        assert!(d.w1 <= 0.5 / m as f64);
        assert!((d.ks - 0.5 / m as f64).abs() < 1e-12);
    }

    #[test]
    fn w1_is_rotation_invariant_on_the_circle() {
        // all mass at one point against uniform: min_c ∫|1{x≥a} − x − c| = 1/4
        let rho = Density::uniform(64).unwrap();
        for a in [0.0, 0.3, 0.9] {
            let e = ParticleEnsemble {
                positions: vec![a],
                epsilon: 0.0,
                step_count: 0,
                rng_seed: 0,
            };
            assert!((empirical_distance(&e, &rho).w1 - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn log_log_slope_of_power_law() {
        let x = [1e3, 1e4, 1e5];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y) + 0.5).abs() < 1e-12);
    }
}

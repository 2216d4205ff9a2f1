//! Transfer operators `P`, `Q_{t,ψ}`, the self-consistent operator
//! `L_t φ = P Q_{t,φ} φ`, its fixed-point solver and cone diagnostics.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::ModeMatrix;
use crate::periodic::{hilbert_distance, ConeParams, Density, PeriodicFn};
use crate::system::{CoupledDiffeo, CouplingKernel, ExpandingMap, MeanFieldOperator};

/// `P` discretized on a fixed grid: for each grid point `y_j` the branch
/// preimages `x_{j,i}` and weights `1/|f'(x_{j,i})|`.
#[derive(Clone, Debug)]
pub struct TransferOperator {
    resolution: usize,
    degree: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl TransferOperator {
    pub fn new(map: &ExpandingMap, resolution: usize) -> Result<Self> {
        PeriodicFn::zero(resolution)?;
        let degree = map.degree() as usize;
        let branches: Vec<Vec<f64>> = (0..resolution)
            .into_par_iter()
            .map(|j| map.inverse_branches(j as f64 / resolution as f64))
            .collect::<Result<_>>()?;
        let points: Vec<f64> = branches.into_iter().flatten().collect();
        let weights = points
            .iter()
            .map(|&x| 1.0 / map.derivative(x, 1).abs())
            .collect();
        Ok(Self {
            resolution,
            degree,
            points,
            weights,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// `(Pφ)(y_j) = Σ_i φ(x_{j,i}) / |f'(x_{j,i})|`.
    pub fn apply(&self, phi: &PeriodicFn) -> Result<PeriodicFn> {
        if phi.resolution() != self.resolution {
            return Err(crate::Error::ResolutionMismatch(self.resolution, phi.resolution()));
        }
        let vals = phi.eval_many(&self.points);
        let out = vals
            .chunks(self.degree)
            .zip(self.weights.chunks(self.degree))
            .map(|(v, w)| v.iter().zip(w).map(|(a, b)| a * b).sum())
            .collect();
        PeriodicFn::from_values(out)
    }
}

/// `transfer_P(map, φ)` without caching the branch table.
pub fn transfer_p(map: &ExpandingMap, phi: &PeriodicFn) -> Result<PeriodicFn> {
    TransferOperator::new(map, phi.resolution())?.apply(phi)
}

/// `Q_{t,ψ}φ = (φ / Φ') ∘ Φ⁻¹` for a prepared diffeomorphism; `inverse_points`
/// are `Φ⁻¹` at the grid points.
pub fn apply_q_with(diffeo: &CoupledDiffeo, inverse_points: &[f64], phi: &PeriodicFn) -> Result<PeriodicFn> {
    let w = phi.quotient(&diffeo.derivative_fn())?;
    PeriodicFn::from_values(w.eval_many(inverse_points))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FixedPointConfig {
    pub tolerance: f64,
    pub max_iter: usize,
    /// Number of leading iterations for which successive Hilbert-distance ratios are recorded.
    pub hilbert_samples: usize,
    /// Cone for the Hilbert diagnostics; `None` picks [`ConeParams::default_for`] of the result.
    pub cone: Option<ConeParams>,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iter: 500,
            hilbert_samples: 8,
            cone: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FixedPointReport {
    pub t: f64,
    pub rho: Density,
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    /// `‖L_t ρ − ρ‖_∞` of the returned density.
    pub final_residual: f64,
    pub hilbert_contraction_samples: Vec<f64>,
    pub log_lip_history: Vec<f64>,
    pub cone_a: f64,
}

impl FixedPointReport {
    /// Median ratio of successive residuals over the geometric phase
    /// (residuals above `100 · tolerance`).
    pub fn contraction_rate(&self, tolerance: f64) -> Option<f64> {
        let r = &self.residual_history;
        let mut ratios: Vec<f64> = r
            .windows(2)
            .filter(|w| w[1] > 100.0 * tolerance && w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect();
        if ratios.is_empty() {
            return None;
        }
        ratios.sort_by(|a, b| a.total_cmp(b));
        Some(ratios[ratios.len() / 2])
    }
}

/// The map, kernel and grid with the precomputed pieces of `L_t`.
#[derive(Clone, Debug)]
pub struct SelfConsistentSystem {
    map: ExpandingMap,
    kernel: Arc<dyn CouplingKernel>,
    p: TransferOperator,
    meanfield: MeanFieldOperator,
}

impl SelfConsistentSystem {
    pub fn new(map: ExpandingMap, kernel: Arc<dyn CouplingKernel>, resolution: usize) -> Result<Self> {
        let p = TransferOperator::new(&map, resolution)?;
        let meanfield = MeanFieldOperator::new(kernel.as_ref(), resolution)?;
        Ok(Self {
            map,
            kernel,
            p,
            meanfield,
        })
    }

    pub fn resolution(&self) -> usize {
        self.p.resolution()
    }

    pub fn map(&self) -> &ExpandingMap {
        &self.map
    }

    pub fn kernel(&self) -> &dyn CouplingKernel {
        self.kernel.as_ref()
    }

    pub fn kernel_arc(&self) -> Arc<dyn CouplingKernel> {
        Arc::clone(&self.kernel)
    }

    pub fn transfer_operator(&self) -> &TransferOperator {
        &self.p
    }

    pub fn mean_field(&self, psi: &PeriodicFn) -> Result<PeriodicFn> {
        self.meanfield.apply(psi)
    }

    pub fn make_diffeo(&self, psi: &PeriodicFn, t: f64) -> Result<CoupledDiffeo> {
        CoupledDiffeo::new(t, self.mean_field(psi)?)
    }

    pub fn transfer_p(&self, phi: &PeriodicFn) -> Result<PeriodicFn> {
        self.p.apply(phi)
    }

    /// `Q_{t,ψ} φ`.
    pub fn apply_q(&self, t: f64, psi: &PeriodicFn, phi: &PeriodicFn) -> Result<PeriodicFn> {
        let d = self.make_diffeo(psi, t)?;
        let inv = d.inverse_on_grid(self.resolution())?;
        apply_q_with(&d, &inv, phi)
    }

    /// `L_t φ = P Q_{t,φ} φ` without renormalization.
    pub fn apply_raw(&self, t: f64, phi: &PeriodicFn) -> Result<PeriodicFn> {
        self.p.apply(&self.apply_q(t, phi, phi)?)
    }

    /// `L_t φ`, renormalized to unit mass.
    pub fn apply(&self, t: f64, phi: &Density) -> Result<Density> {
        Density::normalize(self.apply_raw(t, phi)?)
    }

    /// Iterates `φ_{n+1} = L_t φ_n` from the uniform density.
    pub fn solve_fixed_density(&self, t: f64, config: &FixedPointConfig) -> Result<FixedPointReport> {
        self.solve_from(t, Density::uniform(self.resolution())?, config)
    }

    pub fn solve_from(&self, t: f64, init: Density, config: &FixedPointConfig) -> Result<FixedPointReport> {
        let mut phi = init;
        let mut residuals = Vec::new();
        let mut log_lips = Vec::new();
        let mut early = vec![phi.clone()];
        let mut converged = false;
        for _ in 0..config.max_iter {
            let next = self.apply(t, &phi)?;
            let r = next.sup_distance(&phi);
            residuals.push(r);
            log_lips.push(next.log_lip_constant().unwrap_or(f64::NAN));
            if early.len() <= config.hilbert_samples + 1 {
                early.push(next.clone());
            }
            phi = next;
            if r < config.tolerance {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                context: format!("fixed density at t = {t}"),
                iterations: residuals.len(),
                residual: residuals.last().copied().unwrap_or(f64::NAN),
                history: residuals,
            });
        }
        let check = self.apply(t, &phi)?;
        let final_residual = check.sup_distance(&phi);
        if final_residual > 10.0 * config.tolerance {
            return Err(Error::NonConvergence {
                context: format!("a-posteriori fixed-point check at t = {t}"),
                iterations: residuals.len(),
                residual: final_residual,
                history: residuals,
            });
        }
        let cone = match config.cone {
            Some(c) => c,
            None => ConeParams::default_for(&phi)?,
        };
        let hilbert = hilbert_ratios(&early, cone);
        Ok(FixedPointReport {
            t,
            iterations: residuals.len(),
            residual_history: residuals,
            final_residual,
            hilbert_contraction_samples: hilbert,
            log_lip_history: log_lips,
            cone_a: cone.a(),
            rho: phi,
        })
    }

    /// For `trials` random pairs of distinct densities in `V_a`, the ratios
    /// `θ_a(L_tφ, L_tψ) / θ_a(φ, ψ)` and `loglip(L_tφ) / a`.
    pub fn contraction_probe(&self, t: f64, cone: ConeParams, trials: usize, seed: u64) -> Result<ContractionProbe> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.resolution();
        let mut probe = ContractionProbe::default();
        for _ in 0..trials {
            let (la, lb) = (rng.random_range(0.3..0.9), rng.random_range(0.3..0.9));
            let phi = random_cone_density(&mut rng, n, cone.a() * la, 4)?;
            let psi = random_cone_density(&mut rng, n, cone.a() * lb, 4)?;
            let before = hilbert_distance(&phi, &psi, cone)?;
            if before <= 1e-12 {
                probe.skipped += 1;
                continue;
            }
            let (lphi, lpsi) = (self.apply(t, &phi)?, self.apply(t, &psi)?);
            match hilbert_distance(&lphi, &lpsi, cone) {
                Ok(after) => probe.hilbert_ratios.push(after / before),
                Err(Error::ConeMembership(_)) => {
                    probe.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            for (src, img) in [(&phi, &lphi), (&psi, &lpsi)] {
                probe.log_lip_image_ratios.push(img.log_lip_constant()? / cone.a());
                probe.log_lip_pairs.push((src.log_lip_constant()?, img.log_lip_constant()?));
            }
        }
        Ok(probe)
    }

    /// Matrix of `P` on the modes `|k| <= resolution/2 − 1`.
    pub fn operator_matrix_p(&self) -> Result<ModeMatrix> {
        ModeMatrix::assemble(self.resolution(), |f| self.p.apply(f))
    }
}

fn hilbert_ratios(iterates: &[Density], cone: ConeParams) -> Vec<f64> {
    let dists: Vec<Option<f64>> = iterates
        .windows(2)
        .map(|w| hilbert_distance(&w[0], &w[1], cone).ok())
        .collect();
    dists
        .windows(2)
        .filter_map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) if a > 1e-10 && b > 0.0 => Some(b / a),
            _ => None,
        })
        .collect()
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ContractionProbe {
    pub hilbert_ratios: Vec<f64>,
    /// `loglip(L_tφ)/a` for every sampled density.
    pub log_lip_image_ratios: Vec<f64>,
    /// `(loglip φ, loglip L_tφ)`.
    pub log_lip_pairs: Vec<(f64, f64)>,
    pub skipped: usize,
}

impl ContractionProbe {
    pub fn max_hilbert_ratio(&self) -> f64 {
        self.hilbert_ratios.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_log_lip_ratio(&self) -> f64 {
        self.log_lip_image_ratios.iter().cloned().fold(0.0, f64::max)
    }
}

/// Normalized `exp(g)` with `g` a random trigonometric polynomial of `modes`
/// modes with coefficients decaying like `1/k²`, scaled so that the
/// log-Lipschitz constant (grid sup of `|g'|`) equals `log_lip`.
pub fn random_cone_density<R: Rng>(rng: &mut R, resolution: usize, log_lip: f64, modes: u32) -> Result<Density> {
    let coeffs: Vec<(f64, f64)> = (0..modes)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let g = PeriodicFn::sample(
        |x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(i, (a, b))| {
                    let k = (i + 1) as f64;
                    let w = 2.0 * PI * k * x;
                    (a * w.cos() + b * w.sin()) / (k * k)
                })
                .sum()
        },
        resolution,
    )?;
    let slope = g.derivative(1).sup_norm();
    let scale = if slope > 0.0 { log_lip / slope } else { 0.0 };
    Density::normalize(g.map(|v| (scale * v).exp())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{DifferenceKernel, DifferenceTerm, TensorTrigKernel, Trig};
    use approx::assert_abs_diff_eq;

    fn doubling_system(kernel: Arc<dyn CouplingKernel>, n: usize) -> SelfConsistentSystem {
        SelfConsistentSystem::new(ExpandingMap::doubling(), kernel, n).unwrap()
    }

    fn sin4x() -> Arc<dyn CouplingKernel> {
        Arc::new(TensorTrigKernel::x_only(1.0, 2, Trig::Sin))
    }

    fn cos_n(k: f64, n: usize) -> PeriodicFn {
        PeriodicFn::sample(|x| (2.0 * PI * k * x).cos(), n).unwrap()
    }

    #[test]
    fn transfer_p_doubling_closed_forms() {
        let m = ExpandingMap::doubling();
        let one = PeriodicFn::constant(1.0, 64).unwrap();
        assert!(transfer_p(&m, &one).unwrap().sup_distance(&one) < 1e-15);
        assert!(transfer_p(&m, &cos_n(1.0, 64)).unwrap().sup_norm() < 1e-12);
        let out = transfer_p(&m, &cos_n(2.0, 64)).unwrap();
        assert!(out.sup_distance(&cos_n(1.0, 64)) < 1e-12);
    }

    #[test]
    fn apply_q_degenerate_cases() {
        let n = 64;
        let sys = doubling_system(sin4x(), n);
        let phi = PeriodicFn::sample(|x| 1.0 + 0.3 * (2.0 * PI * x).sin(), n).unwrap();
        let psi = Density::uniform(n).unwrap();
        let q = sys.apply_q(0.0, &psi, &phi).unwrap();
        assert!(q.sup_distance(&phi) < 1e-14);

        let diff: Arc<dyn CouplingKernel> = Arc::new(DifferenceKernel::new(vec![DifferenceTerm {
            coeff: 1.0,
            mode: 1,
            trig: Trig::Sin,
        }]));
        let sys = doubling_system(diff, n);
        let q = sys.apply_q(0.1, &psi, &phi).unwrap();
        assert!(q.sup_distance(&phi) < 1e-13);
    }

    #[test]
    fn self_consistent_apply_examples() {
        let n = 64;
        let sys = doubling_system(sin4x(), n);
        let one = Density::uniform(n).unwrap();
        assert!(sys.apply(0.0, &one).unwrap().sup_distance(&one) < 1e-15);
        let phi = Density::new(PeriodicFn::sample(|x| 1.0 + 0.5 * (4.0 * PI * x).cos(), n).unwrap())
            .unwrap();
        let out = sys.apply(0.0, &phi).unwrap();
        let expect = PeriodicFn::sample(|x| 1.0 + 0.5 * (2.0 * PI * x).cos(), n).unwrap();
        assert!(out.sup_distance(&expect) < 1e-12);
        // t = 0 degenerates to P
        let p = sys.transfer_p(&phi).unwrap();
        assert!(out.sup_distance(&p) < 1e-15);
    }

    #[test]
    fn fixed_point_t0_doubling() {
        let sys = doubling_system(sin4x(), 64);
        let rep = sys.solve_fixed_density(0.0, &FixedPointConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.rho.sup_distance(&PeriodicFn::constant(1.0, 64).unwrap()) < 1e-12);
    }

    #[test]
    fn fixed_point_nonconvergence_reports_history() {
        let sys = doubling_system(sin4x(), 64);
        let cfg = FixedPointConfig {
            max_iter: 3,
            tolerance: 1e-15,
            ..Default::default()
        };
        match sys.solve_fixed_density(0.02, &cfg) {
            Err(Error::NonConvergence { history, .. }) => assert_eq!(history.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn diffeo_violation_propagates() {
        let k: Arc<dyn CouplingKernel> = Arc::new(TensorTrigKernel::x_only(1.0, 1, Trig::Sin));
        let sys = doubling_system(k, 64);
        let err = sys.solve_fixed_density(0.2, &FixedPointConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DiffeoViolation { .. }));
    }

    #[test]
    fn operator_matrix_doubling() {
        let sys = doubling_system(sin4x(), 32);
        let p = sys.operator_matrix_p().unwrap();
        assert_abs_diff_eq!(p.entry(0, 0).re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.entry(1, 2).re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.entry(-1, -2).re, 1.0, epsilon = 1e-12);
        for k in [1i64, 3, 5, -7] {
            for l in -15..=15 {
                assert!(p.entry(l, k).norm() < 1e-12);
            }
        }
        // nilpotent on mean-zero modes; Jordan chains spread roundoff to ~eps^(1/4)
        assert!(p.mean_zero_spectral_radius() < 1e-3);
    }

    #[test]
    fn random_cone_density_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_cone_density(&mut rng, 128, 2.5, 4).unwrap();
        assert_abs_diff_eq!(d.log_lip_constant().unwrap(), 2.5, epsilon = 1e-9);
        assert_abs_diff_eq!(d.integral(), 1.0, epsilon = 1e-14);
    }
}

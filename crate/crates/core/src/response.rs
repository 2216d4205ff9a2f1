//! Linearization of `L_t` at its fixed density and the linear response
//! `∂_t ρ`, with a central-difference oracle.

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::modes::{coefficient_vector, function_from_coefficients, ModeMatrix};
use crate::periodic::{Density, PeriodicFn};
use crate::system::CoupledDiffeo;
use crate::transfer::{apply_q_with, FixedPointConfig, SelfConsistentSystem};

/// Fixed-point residual above which a density is not accepted as `ρ(t)`.
pub const FIXED_POINT_ASSERT_TOL: f64 = 1e-9;
/// Pivot ratio `min|U_ii| / max|U_ii|` below which the response system is declared singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

/// Pieces of `P_t = P Q_{t,ρ}` and `Κ_t` frozen at a fixed density.
pub struct Linearization<'a> {
    system: &'a SelfConsistentSystem,
    t: f64,
    rho: Density,
    diffeo: CoupledDiffeo,
    inverse_points: Vec<f64>,
}

impl<'a> Linearization<'a> {
    pub fn new(system: &'a SelfConsistentSystem, t: f64, rho: Density) -> Result<Self> {
        let residual = system.apply(t, &rho)?.sup_distance(&rho);
        if residual >= FIXED_POINT_ASSERT_TOL {
            return Err(Error::NonConvergence {
                context: format!("linearization at t = {t}: density is not a fixed point"),
                iterations: 0,
                residual,
                history: vec![residual],
            });
        }
        let diffeo = system.make_diffeo(&rho, t)?;
        let inverse_points = diffeo.inverse_on_grid(system.resolution())?;
        Ok(Self {
            system,
            t,
            rho,
            diffeo,
            inverse_points,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn rho(&self) -> &Density {
        &self.rho
    }

    /// `P_t φ = P(Q_{t,ρ} φ)` with the diffeomorphism frozen at `ρ`.
    pub fn apply_p_t(&self, phi: &PeriodicFn) -> Result<PeriodicFn> {
        self.system
            .transfer_p(&apply_q_with(&self.diffeo, &self.inverse_points, phi)?)
    }

    /// `Κ_t(g) = (((ρ/Φ') A_g) ∘ Φ⁻¹)'`.
    pub fn kappa(&self, g: &PeriodicFn) -> Result<PeriodicFn> {
        let ag = self.system.mean_field(g)?;
        let w = self.rho.quotient(&self.diffeo.derivative_fn())?.product(&ag)?;
        Ok(PeriodicFn::from_values(w.eval_many(&self.inverse_points))?.derivative(1))
    }

    pub fn linearized_matrix(&self) -> Result<ModeMatrix> {
        ModeMatrix::assemble(self.system.resolution(), |f| self.apply_p_t(f))
    }

    /// Matrix of `g ↦ P(Κ_t g)`.
    pub fn kappa_matrix(&self) -> Result<ModeMatrix> {
        ModeMatrix::assemble(self.system.resolution(), |g| self.system.transfer_p(&self.kappa(g)?))
    }

    /// Solves `(I − P_t + t·PΚ_t) v = −PΚ_t(ρ)` on the mean-zero modes.
    pub fn linear_response(&self) -> Result<(PeriodicFn, f64)> {
        let pt = self.linearized_matrix()?;
        let pk = self.kappa_matrix()?;
        let size = pt.size();
        let mut system = -pt.complex().clone();
        system += pk.complex() * Complex64::new(self.t, 0.0);
        for i in 0..size {
            system[(i, i)] += 1.0;
        }
        let rhs_fn = self.system.transfer_p(&self.kappa(&self.rho)?)?;
        let rhs = -coefficient_vector(&rhs_fn, pt.max_mode());
        solve_mean_zero(&system, &rhs, pt.max_mode(), self.system.resolution(), self.t)
    }
}

/// Solves the system with mode 0 removed and re-inserts a zero mean.
fn solve_mean_zero(
    system: &nalgebra::DMatrix<Complex64>,
    rhs: &DVector<Complex64>,
    m: usize,
    resolution: usize,
    t: f64,
) -> Result<(PeriodicFn, f64)> {
    let a = system.clone().remove_row(m).remove_column(m);
    let b = rhs.clone().remove_row(m);
    let lu = a.clone().lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].norm()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let pivot_ratio = if max > 0.0 { min / max } else { 0.0 };
    if !(pivot_ratio > SINGULAR_PIVOT_RATIO) {
        return Err(Error::SingularSystem { t, pivot_ratio });
    }
    let v = lu.solve(&b).ok_or(Error::SingularSystem { t, pivot_ratio })?;
    let residual = (&a * &v - &b).iter().fold(0.0, |acc: f64, z| acc.max(z.norm()));
    let full = v.insert_row(m, Complex64::new(0.0, 0.0));
    Ok((function_from_coefficients(&full, resolution)?, residual))
}

/// The `t = 0` response `−(1 − P)⁻¹ P (ρ A_ρ)'` computed without the coupled operators.
pub fn linear_response_t0(system: &SelfConsistentSystem, rho0: &Density) -> Result<(PeriodicFn, f64)> {
    let residual = system.transfer_p(rho0)?.sup_distance(rho0);
    if residual >= FIXED_POINT_ASSERT_TOL {
        return Err(Error::NonConvergence {
            context: "response at t = 0: density is not invariant under P".into(),
            iterations: 0,
            residual,
            history: vec![residual],
        });
    }
    let p = system.operator_matrix_p()?;
    let mut a = -p.complex().clone();
    for i in 0..p.size() {
        a[(i, i)] += 1.0;
    }
    let flux = rho0.product(&system.mean_field(rho0)?)?.derivative(1);
    let rhs = -coefficient_vector(&system.transfer_p(&flux)?, p.max_mode());
    solve_mean_zero(&a, &rhs, p.max_mode(), system.resolution(), 0.0)
}

/// `(ρ(t+δ) − ρ(t−δ)) / 2δ` from two independent fixed-point solves.
pub fn fd_response_oracle(
    system: &SelfConsistentSystem,
    t_hat: f64,
    delta: f64,
    config: &FixedPointConfig,
) -> Result<PeriodicFn> {
    let (plus, minus) = rayon::join(
        || system.solve_fixed_density(t_hat + delta, config),
        || system.solve_fixed_density(t_hat - delta, config),
    );
    Ok(&(&*plus?.rho - &*minus?.rho) * (0.5 / delta))
}

#[derive(Clone, Debug, Serialize)]
pub struct ResponseConfig {
    pub fixed_point: FixedPointConfig,
    pub fd_delta: f64,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        Self {
            fixed_point: FixedPointConfig::default(),
            fd_delta: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResponseReport {
    pub t_hat: f64,
    pub rho: Density,
    pub drho: PeriodicFn,
    pub fd_drho: PeriodicFn,
    pub fd_delta: f64,
    pub sup_error: f64,
    pub solver_residual: f64,
}

/// Fixed point, response formula and finite-difference oracle at `t_hat`.
pub fn response_report(system: &SelfConsistentSystem, t_hat: f64, config: &ResponseConfig) -> Result<ResponseReport> {
    let fixed = system.solve_fixed_density(t_hat, &config.fixed_point)?;
    let lin = Linearization::new(system, t_hat, fixed.rho)?;
    let (drho, solver_residual) = lin.linear_response()?;
    let fd_drho = fd_response_oracle(system, t_hat, config.fd_delta, &config.fixed_point)?;
    Ok(ResponseReport {
        t_hat,
        sup_error: drho.sup_distance(&fd_drho),
        rho: lin.rho,
        drho,
        fd_drho,
        fd_delta: config.fd_delta,
        solver_residual,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub t: f64,
    pub report: Option<ResponseReport>,
    pub error: Option<String>,
    /// `‖ρ(t_next) − ρ(t) − ∂_tρ(t)·(t_next − t)‖_∞` against the next successful grid point.
    pub taylor_residual: Option<f64>,
}

/// Response at every `t` in the grid; failures are recorded per point.
pub fn response_sweep(system: &SelfConsistentSystem, t_grid: &[f64], config: &ResponseConfig) -> Vec<SweepRow> {
    let mut ts = t_grid.to_vec();
    ts.sort_by(|a, b| a.total_cmp(b));
    let mut rows: Vec<SweepRow> = ts
        .par_iter()
        .map(|&t| match response_report(system, t, config) {
            Ok(r) => SweepRow {
                t,
                report: Some(r),
                error: None,
                taylor_residual: None,
            },
            Err(e) => SweepRow {
                t,
                report: None,
                error: Some(e.to_string()),
                taylor_residual: None,
            },
        })
        .collect();
    let ok: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].report.is_some()).collect();
    for w in ok.windows(2) {
        let (a, b) = (rows[w[0]].report.as_ref().unwrap(), rows[w[1]].report.as_ref().unwrap());
        let dt = b.t_hat - a.t_hat;
        let predicted = &*a.rho + &(&a.drho * dt);
        let res = b.rho.sup_distance(&predicted);
        rows[w[0]].taylor_residual = Some(res);
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{CouplingKernel, ExpandingMap, TensorTrigKernel, Trig};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn system(kernel: TensorTrigKernel, n: usize) -> SelfConsistentSystem {
        let k: Arc<dyn CouplingKernel> = Arc::new(kernel);
        SelfConsistentSystem::new(ExpandingMap::doubling(), k, n).unwrap()
    }

    #[test]
    fn kappa_closed_form_at_t0() {
        let sys = system(TensorTrigKernel::x_only(1.0, 2, Trig::Sin), 64);
        let lin = Linearization::new(&sys, 0.0, Density::uniform(64).unwrap()).unwrap();
        let one = PeriodicFn::constant(1.0, 64).unwrap();
        let k = lin.kappa(&one).unwrap();
        let expect = PeriodicFn::sample(|x| 4.0 * PI * (4.0 * PI * x).cos(), 64).unwrap();
        assert!(k.sup_distance(&expect) < 1e-11);
        assert!(k.integral().abs() < 1e-12);
    }

    #[test]
    fn kappa_matrix_mode_zero_column() {
        let sys = system(TensorTrigKernel::x_only(1.0, 2, Trig::Sin), 32);
        let lin = Linearization::new(&sys, 0.0, Density::uniform(32).unwrap()).unwrap();
        let pk = lin.kappa_matrix().unwrap();
        // P(4π cos 4πx) = 4π cos 2πx
        assert!((pk.entry(1, 0).re - 2.0 * PI).abs() < 1e-10);
        assert!((pk.entry(-1, 0).re - 2.0 * PI).abs() < 1e-10);
        for k in -15..=15 {
            assert!(pk.entry(0, k).norm() < 1e-12);
        }
    }

    #[test]
    fn response_closed_forms() {
        let sys = system(TensorTrigKernel::x_only(1.0, 2, Trig::Sin), 64);
        let lin = Linearization::new(&sys, 0.0, Density::uniform(64).unwrap()).unwrap();
        let (v, res) = lin.linear_response().unwrap();
        let expect = PeriodicFn::sample(|x| -4.0 * PI * (2.0 * PI * x).cos(), 64).unwrap();
        assert!(v.sup_distance(&expect) < 1e-10);
        assert!(res < 1e-10);

        let sys = system(TensorTrigKernel::x_only(1.0, 1, Trig::Sin), 64);
        let lin = Linearization::new(&sys, 0.0, Density::uniform(64).unwrap()).unwrap();
        assert!(lin.linear_response().unwrap().0.sup_norm() < 1e-12);
    }

    #[test]
    fn rejects_non_fixed_density() {
        let sys = system(TensorTrigKernel::x_only(1.0, 2, Trig::Sin), 32);
        let rho = Density::uniform(32).unwrap();
        assert!(matches!(
            Linearization::new(&sys, 0.05, rho),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn sweep_single_point() {
        let sys = system(TensorTrigKernel::x_only(1.0, 2, Trig::Sin), 32);
        let rows = response_sweep(&sys, &[0.0], &ResponseConfig::default());
        assert_eq!(rows.len(), 1);
        let r = rows[0].report.as_ref().unwrap();
        let (v, _) = linear_response_t0(&sys, &r.rho).unwrap();
        assert!(r.drho.sup_distance(&v) < 1e-12);
    }
}

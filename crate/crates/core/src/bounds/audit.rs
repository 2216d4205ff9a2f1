//! Checks of the `C⁴` product, composition and inverse norm inequalities on
//! random trigonometric samples. `‖g‖_{C⁴} = Σ_{i≤4} sup|g^{(i)}|`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::jets::{jet_compose, jet_inverse, DerivativeJet, JetField};
use super::derivative_sups;
use crate::error::Result;
use crate::periodic::PeriodicFn;
use crate::system::CoupledDiffeo;

const PRODUCT_CONSTANT: f64 = 16.0;
const INVERSE_CONSTANT: f64 = 23.0;
const BASE_RESOLUTION: usize = 64;
const JET_POINTS: usize = 1024;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditSamples {
    pub products: usize,
    pub compositions: usize,
    pub inverses: usize,
    /// Number of Fourier modes of each random sample.
    pub modes: u32,
    pub seed: u64,
}

impl Default for AuditSamples {
    fn default() -> Self {
        Self {
            products: 200,
            compositions: 200,
            inverses: 200,
            modes: 3,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Counterexample {
    pub sample: usize,
    pub ratio: f64,
    /// Coefficients `(c_0, a_1, b_1, a_2, ...)` of each function in the sample.
    pub functions: Vec<Vec<f64>>,
}

/// Ratios `lhs / rhs` of one inequality over all samples.
#[derive(Clone, Debug, Default, Serialize)]
pub struct InequalityAudit {
    pub samples: usize,
    pub violations: usize,
    pub max_ratio: f64,
    pub counterexamples: Vec<Counterexample>,
}

impl InequalityAudit {
    fn from_ratios(ratios: Vec<(f64, Vec<Vec<f64>>)>) -> Self {
        let mut audit = InequalityAudit {
            samples: ratios.len(),
            ..Default::default()
        };
        for (i, (r, functions)) in ratios.into_iter().enumerate() {
            audit.max_ratio = audit.max_ratio.max(r);
            if !(r <= 1.0) {
                audit.violations += 1;
                audit.counterexamples.push(Counterexample {
                    sample: i,
                    ratio: r,
                    functions,
                });
            }
        }
        audit
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NormAudit {
    pub product: InequalityAudit,
    pub composition: InequalityAudit,
    pub inverse: InequalityAudit,
}

impl NormAudit {
    pub fn total_violations(&self) -> usize {
        self.product.violations + self.composition.violations + self.inverse.violations
    }
}

fn random_coeffs<R: Rng>(rng: &mut R, modes: u32, scale: f64) -> Vec<f64> {
    let mut c = vec![rng.random_range(-1.0..1.0)];
    for k in 1..=modes {
        let w = scale / (k * k) as f64;
        c.push(w * rng.random_range(-1.0..1.0));
        c.push(w * rng.random_range(-1.0..1.0));
    }
    c
}

fn trig_fn(coeffs: &[f64], with_mean: bool) -> Result<PeriodicFn> {
    PeriodicFn::sample(
        |x| {
            let mut s = if with_mean { coeffs[0] } else { 0.0 };
            for (k, ab) in coeffs[1..].chunks(2).enumerate() {
                let w = 2.0 * PI * (k + 1) as f64 * x;
                s += ab[0] * w.cos() + ab[1] * w.sin();
            }
            s
        },
        BASE_RESOLUTION,
    )
}

fn c4(f: &PeriodicFn) -> Result<f64> {
    Ok(derivative_sups(f)?.iter().sum())
}

/// `‖x + p‖_{C⁴}` for the lift of a perturbed identity, sup taken over `[0, 1]`.
fn lift_c4(p: &PeriodicFn) -> Result<f64> {
    let s = derivative_sups(p)?;
    let fine = p.resample(p.resolution() * super::SUP_REFINE)?;
    let m = fine.resolution();
    let value = (0..=m)
        .map(|j| {
            let x = j as f64 / m as f64;
            (x + fine.values()[j % m]).abs()
        })
        .fold(0.0, f64::max);
    let slope = fine.derivative(1).values().iter().map(|v| (1.0 + v).abs()).fold(0.0, f64::max);
    Ok(value + slope + s[2] + s[3] + s[4])
}

fn jet_points() -> impl Iterator<Item = f64> {
    (0..JET_POINTS).map(|j| j as f64 / JET_POINTS as f64)
}

fn lift_jet(p: &JetField, x: f64) -> DerivativeJet {
    let mut j = p.jet(x);
    j.d[0] += x;
    j.d[1] += 1.0;
    j
}

fn product_ratio(a: &[f64], b: &[f64]) -> Result<f64> {
    let (f, g) = (trig_fn(a, true)?, trig_fn(b, true)?);
    Ok(c4(&f.product(&g)?)? / (PRODUCT_CONSTANT * c4(&f)? * c4(&g)?))
}

fn composition_ratio(outer: &[f64], inner: &[f64]) -> Result<f64> {
    let f = trig_fn(outer, true)?;
    let p = trig_fn(inner, true)?;
    let (fj, pj) = (JetField::new(&f), JetField::new(&p));
    let mut sups = [0.0f64; 5];
    for x in jet_points() {
        let inner_jet = lift_jet(&pj, x);
        let outer_jet = fj.jet(inner_jet.value());
        let c = jet_compose(&outer_jet, &inner_jet);
        for k in 0..5 {
            sups[k] = sups[k].max(c.d[k].abs());
        }
    }
    let psi = lift_c4(&p)?;
    let growth = (1..=4).map(|l| psi.powi(l)).fold(0.0, f64::max);
    Ok(sups.iter().sum::<f64>() / (c4(&f)? * growth))
}

fn inverse_ratio(coeffs: &[f64]) -> Result<f64> {
    let q = trig_fn(coeffs, true)?;
    let diffeo = CoupledDiffeo::new(1.0, q.clone())?;
    let mut sups = [0.0f64; 5];
    sups[0] = diffeo.inverse(0.0)?.abs().max(diffeo.inverse(1.0)?.abs());
    let mut min_slope = f64::INFINITY;
    let qj = JetField::new(&q);
    for x in jet_points() {
        let jet = lift_jet(&qj, x);
        min_slope = min_slope.min(jet.d[1].abs());
        let inv = jet_inverse(&jet)?;
        for k in 1..5 {
            sups[k] = sups[k].max(inv.d[k].abs());
        }
    }
    let fine = q.resample(q.resolution() * super::SUP_REFINE)?.derivative(1);
    min_slope = min_slope.min(fine.values().iter().map(|v| (1.0 + v).abs()).fold(f64::INFINITY, f64::min));
    let norm = lift_c4(&q)?;
    let dist = (1..=7).map(|k| min_slope.powi(-k)).fold(0.0, f64::max);
    let growth = (1..=3).map(|l| norm.powi(l)).fold(0.0, f64::max);
    Ok(sups.iter().sum::<f64>() / (INVERSE_CONSTANT * dist * growth))
}

/// Draws the samples and evaluates both sides of the three inequalities.
/// Violations are reported, not raised.
pub fn norm_inequality_audit(samples: &AuditSamples) -> Result<NormAudit> {
    let mut rng = ChaCha8Rng::seed_from_u64(samples.seed);
    let m = samples.modes;
    let products: Vec<(Vec<f64>, Vec<f64>)> = (0..samples.products)
        .map(|_| (random_coeffs(&mut rng, m, 1.0), random_coeffs(&mut rng, m, 1.0)))
        .collect();
    let compositions: Vec<(Vec<f64>, Vec<f64>)> = (0..samples.compositions)
        .map(|_| (random_coeffs(&mut rng, m, 1.0), random_coeffs(&mut rng, m, 0.05)))
        .collect();
    let inverses: Vec<Vec<f64>> = (0..samples.inverses)
        .map(|_| {
            let mut c = random_coeffs(&mut rng, m, 1.0);
            c[0] *= 0.1;
            // scale so that sup|q'| <= 0.8 and x + q stays a diffeomorphism
            let slope: f64 = c[1..]
                .chunks(2)
                .enumerate()
                .map(|(k, ab)| 2.0 * PI * (k + 1) as f64 * (ab[0].abs() + ab[1].abs()))
                .sum();
            let target = rng.random_range(0.05..0.8);
            for v in &mut c[1..] {
                *v *= target / slope;
            }
            c
        })
        .collect();

    let product = products
        .par_iter()
        .map(|(a, b)| Ok((product_ratio(a, b)?, vec![a.clone(), b.clone()])))
        .collect::<Result<Vec<_>>>()?;
    let composition = compositions
        .par_iter()
        .map(|(a, b)| Ok((composition_ratio(a, b)?, vec![a.clone(), b.clone()])))
        .collect::<Result<Vec<_>>>()?;
    let inverse = inverses
        .par_iter()
        .map(|c| Ok((inverse_ratio(c)?, vec![c.clone()])))
        .collect::<Result<Vec<_>>>()?;
    Ok(NormAudit {
        product: InequalityAudit::from_ratios(product),
        composition: InequalityAudit::from_ratios(composition),
        inverse: InequalityAudit::from_ratios(inverse),
    })
}

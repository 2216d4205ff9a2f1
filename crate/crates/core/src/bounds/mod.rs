//! Quantitative hypotheses: the expansion condition, Lasota–Yorke constants
//! `σ_k`, `R_k^{(j)}` of the self-consistent operator, the invariant-set
//! constants `C_k`, and the derivative-jet calculus with its norm audit.

mod audit;
mod jets;

pub use audit::{norm_inequality_audit, AuditSamples, InequalityAudit, NormAudit};
pub use jets::{jet_compose, jet_inverse, jet_product, DerivativeJet, JetField, JET_ORDER};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::periodic::{Density, PeriodicFn};
use crate::system::{ExpandingMap, KernelBounds};
use crate::transfer::{random_cone_density, SelfConsistentSystem};

/// Highest derivative order controlled by the Lasota–Yorke chain.
pub const LY_ORDERS: usize = 4;

/// `N (max|f''|/ω³ + 1/ω²)`; the map satisfies the standing assumption when this is below one.
pub fn check_expansion_condition(map: &ExpandingMap) -> f64 {
    let omega = map.omega();
    map.degree() as f64 * (map.extrema().max_abs(2) / omega.powi(3) + 1.0 / omega.powi(2))
}

/// `c · p^{p_pow} · Π_i (F^{(i+2)})^{d_pow[i]} · φ^{(phi_order)}` with `p = 1/F'`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LyTerm {
    pub coeff: f64,
    pub p_pow: u32,
    pub d_pow: [u32; 4],
    pub phi_order: u32,
}

/// Symbolic expansion of `(d/dy)^k` of `Σ (φ/F') ∘ F_i⁻¹`, written on one branch
/// as `D^k(pφ)` with `D u = p u'`, `p' = −F'' p²`.
pub fn ly_expansion(k: u32) -> Vec<LyTerm> {
    type Key = (u32, [u32; 4], u32);
    let mut terms: BTreeMap<Key, f64> = BTreeMap::new();
    terms.insert((1, [0; 4], 0), 1.0);
    for _ in 0..k {
        let mut next: BTreeMap<Key, f64> = BTreeMap::new();
        let mut push = |key: Key, c: f64| *next.entry(key).or_insert(0.0) += c;
        for (&(pp, dp, j), &c) in &terms {
            // D multiplies by p, hence the +1 on every p power below
            if pp > 0 {
                let mut d = dp;
                d[0] += 1;
                push((pp + 2, d, j), -(pp as f64) * c);
            }
            for i in 0..4 {
                if dp[i] > 0 {
                    assert!(i < 3, "expansion needs F^(6)");
                    let mut d = dp;
                    d[i] -= 1;
                    d[i + 1] += 1;
                    push((pp + 1, d, j), dp[i] as f64 * c);
                }
            }
            push((pp + 1, dp, j + 1), c);
        }
        terms = next.into_iter().filter(|(_, c)| *c != 0.0).collect();
    }
    terms
        .into_iter()
        .map(|((p_pow, d_pow, phi_order), coeff)| LyTerm {
            coeff,
            p_pow,
            d_pow,
            phi_order,
        })
        .collect()
}

/// Bounds on the derivatives of `F_{t,φ} = f ∘ Φ_{t,φ}` uniform over densities `φ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FBounds {
    /// Lower bound `ω (1 − K_1|t|)` on `|F'|`.
    pub min_abs_d1: f64,
    /// Upper bounds on `|F^{(j)}|`, `j = 2..=5`.
    pub max_abs: [f64; 4],
}

impl FBounds {
    /// Faà di Bruno with `|Φ'| ≤ 1 + K_1|t|`, `|Φ^{(l)}| ≤ K_l|t|`.
    pub fn new(map: &ExpandingMap, kernel: &KernelBounds, t: f64) -> Self {
        let t = t.abs();
        let mut x = [0.0; 6];
        x[1] = 1.0 + kernel.k(1) * t;
        for l in 2..=5 {
            x[l] = kernel.k(l as u32) * t;
        }
        let mut max_abs = [0.0; 4];
        for j in 2..=5usize {
            max_abs[j - 2] = (1..=j)
                .map(|i| map.extrema().max_abs(i as u32) * bell(j, i, &x))
                .sum();
        }
        Self {
            min_abs_d1: map.omega() * (1.0 - kernel.k(1) * t),
            max_abs,
        }
    }

    pub fn max_abs(&self, order: u32) -> f64 {
        self.max_abs[order as usize - 2]
    }
}

/// Partial Bell polynomial `B_{n,k}(x_1, x_2, ...)`; `x[0]` is unused.
fn bell(n: usize, k: usize, x: &[f64]) -> f64 {
    if n == 0 && k == 0 {
        return 1.0;
    }
    if n == 0 || k == 0 {
        return 0.0;
    }
    (1..=n + 1 - k)
        .map(|i| binomial(n - 1, i - 1) * x[i] * bell(n - i, k - 1, x))
        .sum()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Clone, Debug, Serialize)]
pub struct LyReport {
    pub t: f64,
    pub sigma: [f64; 4],
    /// `R_1`; `R_2^{(1)}, R_2^{(2)}`; ... where `R_k^{(j)}` multiplies `‖φ^{(k−j)}‖`
    /// and `R_k^{(k)}` is the constant term.
    pub remainders: Vec<Vec<f64>>,
    /// Smallest `C_k` satisfying the sequential selection inequalities, when admissible.
    pub c_bounds: Option<[f64; 4]>,
    pub admissible: bool,
    pub assum_value: f64,
    pub f_bounds: FBounds,
    pub kernel_bounds: [f64; 6],
}

impl LyReport {
    /// `C'_k = max(floor, rule_k(C'_1..C'_{k−1}))`, which still satisfy every selection inequality.
    pub fn c_bounds_with_floor(&self, floor: f64) -> Option<[f64; 4]> {
        self.admissible.then(|| select_c(&self.sigma, &self.remainders, floor))
    }

    /// `σ_k ‖φ^{(k)}‖ + Σ_j R_k^{(j)} ‖φ^{(k−j)}‖ + R_k^{(k)}` for derivative sups `norms[i] = ‖φ^{(i)}‖`.
    pub fn ly_bound(&self, k: usize, norms: &[f64; 5]) -> f64 {
        let r = &self.remainders[k - 1];
        let mut s = self.sigma[k - 1] * norms[k] + r[k - 1];
        for j in 1..k {
            s += r[j - 1] * norms[k - j];
        }
        s
    }
}

fn select_c(sigma: &[f64; 4], remainders: &[Vec<f64>], floor: f64) -> [f64; 4] {
    let mut c = [0.0; 4];
    for k in 1..=LY_ORDERS {
        let r = &remainders[k - 1];
        let mut num = r[k - 1];
        for j in 1..k {
            num += r[j - 1] * c[k - j - 1];
        }
        c[k - 1] = (num / (1.0 - sigma[k - 1])).max(floor);
    }
    c
}

/// Lasota–Yorke constants of `L_t` from the expansion of `D^k(φ/F')`, each monomial
/// bounded with [`FBounds`]. `kernel` holds the measured suprema `K_i`.
pub fn ly_report(map: &ExpandingMap, kernel: &KernelBounds, t: f64) -> LyReport {
    let fb = FBounds::new(map, kernel, t);
    let n = map.degree() as f64;
    let p_max = if fb.min_abs_d1 > 0.0 { 1.0 / fb.min_abs_d1 } else { f64::INFINITY };
    let mut sigma = [0.0; 4];
    let mut remainders = Vec::with_capacity(LY_ORDERS);
    for k in 1..=LY_ORDERS {
        let mut a = vec![0.0; k + 1];
        for term in ly_expansion(k as u32) {
            let mut b = term.coeff.abs() * p_max.powi(term.p_pow as i32);
            for (i, &e) in term.d_pow.iter().enumerate() {
                if e > 0 {
                    b *= fb.max_abs[i].powi(e as i32);
                }
            }
            a[term.phi_order as usize] += b;
        }
        // ‖φ‖ ≤ 1 + ‖φ'‖ for densities
        let mut r = vec![0.0; k];
        if k == 1 {
            sigma[0] = n * (a[1] + a[0]);
            r[0] = n * a[0];
        } else {
            sigma[k - 1] = n * a[k];
            for j in 1..=k - 2 {
                r[j - 1] = n * a[k - j];
            }
            r[k - 2] = n * (a[1] + a[0]);
            r[k - 1] = n * a[0];
        }
        remainders.push(r);
    }
    let admissible = sigma.iter().all(|s| *s < 1.0) && p_max.is_finite();
    let c_bounds = admissible.then(|| select_c(&sigma, &remainders, 0.0));
    LyReport {
        t,
        sigma,
        remainders,
        c_bounds,
        admissible,
        assum_value: check_expansion_condition(map),
        f_bounds: fb,
        kernel_bounds: kernel.sup,
    }
}

/// [`ly_report`] that fails with `Inadmissible` when some `σ_k ≥ 1`.
pub fn ly_constants(map: &ExpandingMap, kernel: &KernelBounds, t: f64) -> Result<LyReport> {
    let report = ly_report(map, kernel, t);
    if report.admissible {
        Ok(report)
    } else {
        Err(Error::Inadmissible {
            t,
            sigma: report.sigma,
        })
    }
}

/// Refinement factor of the grid on which derivative sups are measured.
pub const SUP_REFINE: usize = 16;

/// `‖f^{(i)}‖`, `i = 0..=4`, from the interpolant on a refined grid.
pub fn derivative_sups(f: &PeriodicFn) -> Result<[f64; 5]> {
    let fine = f.resample(f.resolution() * SUP_REFINE)?;
    let mut out = [0.0; 5];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = fine.derivative(i as u32).sup_norm();
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct LyProbe {
    pub t: f64,
    /// Constants defining the sampled set `C_C`.
    pub c_used: [f64; 4],
    /// `σ_1‖φ'‖ + R_1 − ‖(L_tφ)'‖` per sample.
    pub ly1_slack: Vec<f64>,
    /// `max_φ ‖(L_tφ)^{(k)}‖ / C_k`.
    pub invariance_ratio: [f64; 4],
    /// `max_φ ‖(L_tφ)^{(k)}‖ / (LY bound of order k)`.
    pub ly_ratio: [f64; 4],
}

impl LyProbe {
    pub fn min_ly1_slack(&self) -> f64 {
        self.ly1_slack.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Applies `L_t` to random densities of `C_C` (built with [`LyReport::c_bounds_with_floor`])
/// and compares derivative sups with the Lasota–Yorke bounds.
pub fn ly_empirical_probe(
    system: &SelfConsistentSystem,
    report: &LyReport,
    samples: usize,
    floor: f64,
    seed: u64,
) -> Result<LyProbe> {
    let t = report.t;
    let c = report.c_bounds_with_floor(floor).ok_or(Error::Inadmissible {
        t,
        sigma: report.sigma,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = system.resolution();
    let mut probe = LyProbe {
        t,
        c_used: c,
        ly1_slack: Vec::with_capacity(samples),
        invariance_ratio: [0.0; 4],
        ly_ratio: [0.0; 4],
    };
    for _ in 0..samples {
        let lip = rng.random_range(0.5..3.0);
        let g = random_cone_density(&mut rng, n, lip, 4)?;
        let gs = derivative_sups(&g)?;
        let s_max = (1..=4).map(|i| c[i - 1] / gs[i]).fold(1.0, f64::min);
        let s = s_max * rng.random_range(0.2..1.0);
        let phi = Density::new(g.map(|v| 1.0 - s + s * v)?)?;
        let norms = derivative_sups(&phi)?;
        let image = derivative_sups(&*system.apply(t, &phi)?)?;
        probe.ly1_slack.push(report.ly_bound(1, &norms) - image[1]);
        for k in 1..=LY_ORDERS {
            let inv = image[k] / c[k - 1];
            let ly = image[k] / report.ly_bound(k, &norms);
            probe.invariance_ratio[k - 1] = probe.invariance_ratio[k - 1].max(inv);
            probe.ly_ratio[k - 1] = probe.ly_ratio[k - 1].max(ly);
        }
    }
    Ok(probe)
}

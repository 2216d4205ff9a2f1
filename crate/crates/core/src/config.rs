//! TOML experiment configuration.
//!
//! ```toml
//! resolution = 256
//! t = 0.02
//! t_grid = [-0.02, 0.0, 0.02]
//!
//! [map]
//! type = "perturbed_linear"
//! degree = 2
//! alpha = 0.0
//!
//! [kernel]
//! type = "tensor_trig"
//! coefficients = [{ coeff = 1.0, x_mode = 2, x_trig = "sin", y_mode = 0, y_trig = "cos" }]
//!
//! [fixed_point]   # tolerance, max_iter, cone_a, hilbert_samples
//! [response]      # fd_delta
//! [particles]     # m, seed, burn_in, horizon, sample_every, mode, n_bins, histogram_bins
//! [audit]         # products, compositions, inverses, modes, seed, ly_samples, ly_floor
//! ```
//!
//! Every key is optional except `map` and `kernel`; unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::bounds::AuditSamples;
use crate::error::{Error, Result};
use crate::particles::{ParticleConfig, StepMode, DEFAULT_BINS};
use crate::periodic::{ConeParams, DEFAULT_RESOLUTION};
use crate::response::ResponseConfig;
use crate::system::{CouplingKernel, ExpandingMap, KernelSpec, MapSpec};
use crate::transfer::{FixedPointConfig, SelfConsistentSystem};

const MAX_RESOLUTION: usize = 1 << 16;
const MAX_ABS_T: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSection {
    pub tolerance: f64,
    pub max_iter: usize,
    pub cone_a: Option<f64>,
    pub hilbert_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSection {
    pub m: usize,
    pub seed: u64,
    pub burn_in: u64,
    pub horizon: u64,
    pub sample_every: u64,
    /// `"auto"`, `"exact"` or `"binned"`.
    pub mode: String,
    pub n_bins: usize,
    pub histogram_bins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSection {
    pub products: usize,
    pub compositions: usize,
    pub inverses: usize,
    pub modes: u32,
    pub seed: u64,
    pub ly_samples: usize,
    pub ly_floor: f64,
}

/// Fully resolved and validated configuration; embedded in every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub resolution: usize,
    pub t: f64,
    pub t_grid: Vec<f64>,
    pub out: Option<PathBuf>,
    pub map: MapSpec,
    pub kernel: KernelSpec,
    pub fixed_point: FixedPointSection,
    pub fd_delta: f64,
    pub particles: ParticleSection,
    pub audit: AuditSection,
}

struct Reader<'a> {
    table: &'a Table,
    prefix: &'static str,
    allowed: &'static [&'static str],
}

impl<'a> Reader<'a> {
    fn new(table: &'a Table, prefix: &'static str, allowed: &'static [&'static str]) -> Result<Self> {
        for k in table.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::config(Self::join(prefix, k), "unknown key"));
            }
        }
        Ok(Self { table, prefix, allowed })
    }

    fn join(prefix: &str, key: &str) -> String {
        if prefix.is_empty() {
            key.to_string()
        } else {
            format!("{prefix}.{key}")
        }
    }

    fn key(&self, k: &str) -> String {
        debug_assert!(self.allowed.contains(&k));
        Self::join(self.prefix, k)
    }

    fn f64(&self, k: &str, default: f64, lo: f64, hi: f64) -> Result<f64> {
        let v = match self.table.get(k) {
            None => default,
            Some(Value::Float(x)) => *x,
            Some(Value::Integer(i)) => *i as f64,
            Some(_) => return Err(Error::config(self.key(k), "expected a number")),
        };
        check_range(&self.key(k), v, lo, hi)?;
        Ok(v)
    }

    fn opt_f64(&self, k: &str, lo: f64, hi: f64) -> Result<Option<f64>> {
        self.table.get(k).map(|_| self.f64(k, 0.0, lo, hi)).transpose()
    }

    fn int(&self, k: &str, default: u64, lo: u64, hi: u64) -> Result<u64> {
        let v = match self.table.get(k) {
            None => default,
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(Value::Integer(_)) => return Err(Error::config(self.key(k), "must be non-negative")),
            Some(_) => return Err(Error::config(self.key(k), "expected an integer")),
        };
        if v < lo || v > hi {
            return Err(Error::config(self.key(k), format!("{v} outside [{lo}, {hi}]")));
        }
        Ok(v)
    }

    fn string(&self, k: &str, default: &str) -> Result<String> {
        match self.table.get(k) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(Error::config(self.key(k), "expected a string")),
        }
    }

    fn section(&self, k: &str) -> Result<Option<&'a Table>> {
        match self.table.get(k) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(t)),
            Some(_) => Err(Error::config(self.key(k), "expected a table")),
        }
    }
}

fn check_range(key: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !v.is_finite() || v < lo || v > hi {
        return Err(Error::config(key, format!("{v} outside [{lo:e}, {hi:e}]")));
    }
    Ok(())
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v <= 0.0 {
        return Err(Error::config(key, "must be positive"));
    }
    Ok(())
}

static EMPTY: std::sync::LazyLock<Table> = std::sync::LazyLock::new(Table::new);

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let root: Table = s.parse().map_err(|e: toml::de::Error| {
            Error::config("<file>", e.message().to_string())
        })?;
        let top = Reader::new(
            &root,
            "",
            &[
                "resolution",
                "t",
                "t_grid",
                "out",
                "map",
                "kernel",
                "fixed_point",
                "response",
                "particles",
                "audit",
            ],
        )?;

        let resolution = top.int("resolution", DEFAULT_RESOLUTION as u64, 16, MAX_RESOLUTION as u64)? as usize;
        if !resolution.is_power_of_two() {
            return Err(Error::config("resolution", format!("{resolution} is not a power of two")));
        }
        let t = top.f64("t", 0.0, -MAX_ABS_T, MAX_ABS_T)?;
        let t_grid = match root.get("t_grid") {
            None => vec![t],
            Some(Value::Array(a)) => {
                if a.is_empty() || a.len() > 10_000 {
                    return Err(Error::config("t_grid", "needs between 1 and 10000 entries"));
                }
                a.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let x = v
                            .as_float()
                            .or_else(|| v.as_integer().map(|i| i as f64))
                            .ok_or_else(|| Error::config(format!("t_grid[{i}]"), "expected a number"))?;
                        check_range(&format!("t_grid[{i}]"), x, -MAX_ABS_T, MAX_ABS_T)?;
                        Ok(x)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            Some(_) => return Err(Error::config("t_grid", "expected an array")),
        };
        let out = match root.get("out") {
            None => None,
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => return Err(Error::config("out", "expected a string")),
        };

        let map: MapSpec = root
            .get("map")
            .ok_or_else(|| Error::config("map", "missing"))?
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("map", e.message().to_string()))?;
        let MapSpec::PerturbedLinear { degree, alpha } = map;
        if !(2..=64).contains(&degree) {
            return Err(Error::config("map.degree", format!("{degree} outside [2, 64]")));
        }
        check_range("map.alpha", alpha, -1e3, 1e3)?;
        map.build().map_err(|e| Error::config("map", e.to_string()))?;

        let kernel: KernelSpec = root
            .get("kernel")
            .ok_or_else(|| Error::config("kernel", "missing"))?
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("kernel", e.message().to_string()))?;
        validate_kernel(&kernel, resolution)?;

        let fp_table = top.section("fixed_point")?.unwrap_or(&EMPTY);
        let fp = Reader::new(fp_table, "fixed_point", &["tolerance", "max_iter", "cone_a", "hilbert_samples"])?;
        let fixed_point = FixedPointSection {
            tolerance: fp.f64("tolerance", 1e-12, 0.0, 1.0)?,
            max_iter: fp.int("max_iter", 500, 1, 1_000_000)? as usize,
            cone_a: fp.opt_f64("cone_a", 0.0, 1e6)?,
            hilbert_samples: fp.int("hilbert_samples", 8, 0, 10_000)? as usize,
        };
        positive("fixed_point.tolerance", fixed_point.tolerance)?;
        if let Some(a) = fixed_point.cone_a {
            positive("fixed_point.cone_a", a)?;
        }

        let resp_table = top.section("response")?.unwrap_or(&EMPTY);
        let resp = Reader::new(resp_table, "response", &["fd_delta"])?;
        let fd_delta = resp.f64("fd_delta", 1e-4, 0.0, 0.5)?;
        positive("response.fd_delta", fd_delta)?;

        let p_table = top.section("particles")?.unwrap_or(&EMPTY);
        let p = Reader::new(
            p_table,
            "particles",
            &["m", "seed", "burn_in", "horizon", "sample_every", "mode", "n_bins", "histogram_bins"],
        )?;
        let particles = ParticleSection {
            m: p.int("m", 1000, 1, 10_000_000)? as usize,
            seed: p.int("seed", 0, 0, i64::MAX as u64)?,
            burn_in: p.int("burn_in", 200, 0, 10_000_000)?,
            horizon: p.int("horizon", 1000, 0, 10_000_000)?,
            sample_every: p.int("sample_every", 10, 1, 10_000_000)?,
            mode: p.string("mode", "auto")?,
            n_bins: p.int("n_bins", DEFAULT_BINS as u64, 2, 1 << 22)? as usize,
            histogram_bins: p.int("histogram_bins", 64, 1, 100_000)? as usize,
        };
        if !["auto", "exact", "binned"].contains(&particles.mode.as_str()) {
            return Err(Error::config(
                "particles.mode",
                format!("'{}' is not one of auto, exact, binned", particles.mode),
            ));
        }

        let a_table = top.section("audit")?.unwrap_or(&EMPTY);
        let a = Reader::new(
            a_table,
            "audit",
            &["products", "compositions", "inverses", "modes", "seed", "ly_samples", "ly_floor"],
        )?;
        let audit = AuditSection {
            products: a.int("products", 200, 0, 1_000_000)? as usize,
            compositions: a.int("compositions", 200, 0, 1_000_000)? as usize,
            inverses: a.int("inverses", 200, 0, 1_000_000)? as usize,
            modes: a.int("modes", 3, 1, 8)? as u32,
            seed: a.int("seed", 7, 0, i64::MAX as u64)?,
            ly_samples: a.int("ly_samples", 50, 0, 100_000)? as usize,
            ly_floor: a.f64("ly_floor", 10.0, 0.0, 1e6)?,
        };

        Ok(Self {
            resolution,
            t,
            t_grid,
            out,
            map,
            kernel,
            fixed_point,
            fd_delta,
            particles,
            audit,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn with_resolution(mut self, n: usize) -> Result<Self> {
        if !(16..=MAX_RESOLUTION).contains(&n) || !n.is_power_of_two() {
            return Err(Error::config("--resolution", format!("{n} is not a power of two in [16, {MAX_RESOLUTION}]")));
        }
        validate_kernel(&self.kernel, n)?;
        self.resolution = n;
        Ok(self)
    }

    /// Overrides `t`; a grid that was only the old `t` follows it.
    pub fn with_t(mut self, t: f64) -> Result<Self> {
        check_range("--t", t, -MAX_ABS_T, MAX_ABS_T)?;
        if self.t_grid == [self.t] {
            self.t_grid = vec![t];
        }
        self.t = t;
        Ok(self)
    }

    pub fn build_map(&self) -> Result<ExpandingMap> {
        self.map.build()
    }

    pub fn build_kernel(&self) -> Arc<dyn CouplingKernel> {
        self.kernel.build()
    }

    pub fn build_system(&self) -> Result<SelfConsistentSystem> {
        SelfConsistentSystem::new(self.build_map()?, self.build_kernel(), self.resolution)
    }

    pub fn fixed_point_config(&self) -> Result<FixedPointConfig> {
        Ok(FixedPointConfig {
            tolerance: self.fixed_point.tolerance,
            max_iter: self.fixed_point.max_iter,
            hilbert_samples: self.fixed_point.hilbert_samples,
            cone: self.fixed_point.cone_a.map(ConeParams::new).transpose()?,
        })
    }

    pub fn response_config(&self) -> Result<ResponseConfig> {
        Ok(ResponseConfig {
            fixed_point: self.fixed_point_config()?,
            fd_delta: self.fd_delta,
        })
    }

    pub fn particle_config(&self) -> ParticleConfig {
        let p = &self.particles;
        ParticleConfig {
            m: p.m,
            seed: p.seed,
            burn_in: p.burn_in,
            horizon: p.horizon,
            sample_every: p.sample_every,
            mode: match p.mode.as_str() {
                "exact" => Some(StepMode::Exact),
                "binned" => Some(StepMode::Binned { n_bins: p.n_bins }),
                _ if p.m >= crate::particles::BINNED_THRESHOLD => Some(StepMode::Binned { n_bins: p.n_bins }),
                _ => Some(StepMode::Exact),
            },
            histogram_bins: p.histogram_bins,
        }
    }

    pub fn audit_samples(&self) -> AuditSamples {
        AuditSamples {
            products: self.audit.products,
            compositions: self.audit.compositions,
            inverses: self.audit.inverses,
            modes: self.audit.modes,
            seed: self.audit.seed,
        }
    }
}

fn validate_kernel(kernel: &KernelSpec, resolution: usize) -> Result<()> {
    let limit = (resolution / 4) as u32;
    let check_mode = |key: String, mode: u32| -> Result<()> {
        if mode > limit {
            return Err(Error::config(key, format!("mode {mode} exceeds resolution/4 = {limit}")));
        }
        Ok(())
    };
    match kernel {
        KernelSpec::TensorTrig { coefficients } => {
            for (i, c) in coefficients.iter().enumerate() {
                check_range(&format!("kernel.coefficients[{i}].coeff"), c.coeff, -1e6, 1e6)?;
                check_mode(format!("kernel.coefficients[{i}].x_mode"), c.x_mode)?;
                check_mode(format!("kernel.coefficients[{i}].y_mode"), c.y_mode)?;
            }
        }
        KernelSpec::Difference { coefficients } => {
            for (i, c) in coefficients.iter().enumerate() {
                check_range(&format!("kernel.coefficients[{i}].coeff"), c.coeff, -1e6, 1e6)?;
                check_mode(format!("kernel.coefficients[{i}].mode"), c.mode)?;
            }
        }
    }
    Ok(())
}

//! Batch front end: `selfcon <command> --config FILE [--out DIR] [--resolution N] [--t VALUE]`.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 numerical failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::bounds::{check_expansion_condition, ly_empirical_probe, ly_report, norm_inequality_audit};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::particles::thermodynamic_consistency_run;
use crate::periodic::PeriodicFn;
use crate::response::{response_report, response_sweep};
use crate::system::KernelBounds;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "selfcon", version, about = "Self-consistent transfer operators of coupled circle maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for the invariant density at `t`.
    FixedPoint(Common),
    /// Response formula against finite differences at `t`.
    Response(Common),
    /// Response over `t_grid`.
    Sweep(Common),
    /// Finite ensemble against the invariant density at `t`.
    Particles(Common),
    /// Expansion condition, Lasota-Yorke constants and C⁴ norm inequalities.
    Audit(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (defaults to `out` in the config, then `./out`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    resolution: Option<usize>,
    #[arg(long, value_name = "VALUE", allow_negative_numbers = true)]
    t: Option<f64>,
}

/// Parses `args` (including the program name) and runs one command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (name, common) = match &cli.command {
        Command::FixedPoint(c) => ("fixed-point", c),
        Command::Response(c) => ("response", c),
        Command::Sweep(c) => ("sweep", c),
        Command::Particles(c) => ("particles", c),
        Command::Audit(c) => ("audit", c),
    };
    let config = match resolve_config(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("selfcon {name}: {e}");
            return EXIT_CONFIG;
        }
    };
    let out = common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    if let Err(e) = fs::create_dir_all(&out) {
        eprintln!("selfcon {name}: cannot create {}: {e}", out.display());
        return EXIT_CONFIG;
    }
    let result = match &cli.command {
        Command::FixedPoint(_) => cmd_fixed_point(&config, &out),
        Command::Response(_) => cmd_response(&config, &out),
        Command::Sweep(_) => cmd_sweep(&config, &out),
        Command::Particles(_) => cmd_particles(&config, &out),
        Command::Audit(_) => cmd_audit(&config, &out),
    };
    match result {
        Ok(code) => code,
        Err(e) if e.is_numerical() => {
            eprintln!("selfcon {name}: {e}");
            let diag = json!({ "command": name, "config": config, "error": diagnostic(&e) });
            match write_json(&out.join("error.json"), &diag) {
                Ok(()) => EXIT_NUMERICAL,
                Err(io) => {
                    eprintln!("selfcon {name}: {io}");
                    EXIT_NUMERICAL
                }
            }
        }
        Err(e) => {
            eprintln!("selfcon {name}: {e}");
            EXIT_CONFIG
        }
    }
}

fn resolve_config(c: &Common) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&c.config)?;
    if let Some(n) = c.resolution {
        config = config.with_resolution(n)?;
    }
    if let Some(t) = c.t {
        config = config.with_t(t)?;
    }
    Ok(config)
}

/// Machine-readable description of a numerical failure.
pub fn diagnostic(e: &Error) -> Value {
    let detail = match e {
        Error::DiffeoViolation { t, min_derivative } => {
            json!({ "kind": "diffeo_violation", "t": t, "min_derivative": min_derivative })
        }
        Error::NonConvergence {
            context,
            iterations,
            residual,
            history,
        } => json!({
            "kind": "non_convergence",
            "context": context,
            "iterations": iterations,
            "residual": residual,
            "history": history,
        }),
        Error::SingularSystem { t, pivot_ratio } => {
            json!({ "kind": "singular_system", "t": t, "pivot_ratio": pivot_ratio })
        }
        Error::Inadmissible { t, sigma } => json!({ "kind": "inadmissible", "t": t, "sigma": sigma }),
        Error::ConeMembership(m) => json!({ "kind": "cone_membership", "detail": m }),
        Error::NotExpanding(m) => json!({ "kind": "not_expanding", "detail": m }),
        other => json!({ "kind": "other", "detail": other.to_string() }),
    };
    json!({ "message": e.to_string(), "detail": detail })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_columns(path: &Path, header: &[&str], columns: &[&PeriodicFn]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "x,{}", header.join(","))?;
    let n = columns[0].resolution();
    for j in 0..n {
        write!(w, "{:?}", columns[0].grid_point(j))?;
        for c in columns {
            write!(w, ",{:?}", c.values()[j])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn cmd_fixed_point(config: &ExperimentConfig, out: &Path) -> Result<i32> {
    let system = config.build_system()?;
    let report = system.solve_fixed_density(config.t, &config.fixed_point_config()?)?;
    let rate = report.contraction_rate(config.fixed_point.tolerance);
    write_json(
        &out.join("fixed_point.json"),
        &json!({ "command": "fixed-point", "config": config, "contraction_rate": rate, "report": report }),
    )?;
    write_columns(&out.join("rho.csv"), &["rho"], &[&report.rho])?;
    Ok(EXIT_OK)
}

fn cmd_response(config: &ExperimentConfig, out: &Path) -> Result<i32> {
    let system = config.build_system()?;
    let report = response_report(&system, config.t, &config.response_config()?)?;
    write_json(
        &out.join("response.json"),
        &json!({ "command": "response", "config": config, "report": report }),
    )?;
    write_columns(
        &out.join("response.csv"),
        &["rho", "drho_formula", "drho_fd"],
        &[&report.rho, &report.drho, &report.fd_drho],
    )?;
    Ok(EXIT_OK)
}

fn cmd_sweep(config: &ExperimentConfig, out: &Path) -> Result<i32> {
    let system = config.build_system()?;
    let rows = response_sweep(&system, &config.t_grid, &config.response_config()?);

    let mut summary = BufWriter::new(File::create(out.join("sweep.csv"))?);
    writeln!(
        summary,
        "t,status,sup_error,solver_residual,taylor_residual,rho_min,rho_max,drho_sup"
    )?;
    let mut profiles = BufWriter::new(File::create(out.join("sweep_profiles.csv"))?);
    writeln!(profiles, "t,x,rho,drho_formula,drho_fd")?;
    let mut json_rows = Vec::with_capacity(rows.len());
    for row in &rows {
        match &row.report {
            Some(r) => {
                writeln!(
                    summary,
                    "{:?},ok,{:?},{:?},{},{:?},{:?},{:?}",
                    row.t,
                    r.sup_error,
                    r.solver_residual,
                    fmt_opt(row.taylor_residual),
                    r.rho.min_value(),
                    r.rho.max_value(),
                    r.drho.sup_norm()
                )?;
                for j in 0..r.rho.resolution() {
                    writeln!(
                        profiles,
                        "{:?},{:?},{:?},{:?},{:?}",
                        row.t,
                        r.rho.grid_point(j),
                        r.rho.values()[j],
                        r.drho.values()[j],
                        r.fd_drho.values()[j]
                    )?;
                }
                json_rows.push(json!({
                    "t": row.t,
                    "status": "ok",
                    "sup_error": r.sup_error,
                    "solver_residual": r.solver_residual,
                    "taylor_residual": row.taylor_residual,
                }));
            }
            None => {
                writeln!(summary, "{:?},failed,,,,,,", row.t)?;
                json_rows.push(json!({ "t": row.t, "status": "failed", "error": row.error }));
            }
        }
    }
    summary.flush()?;
    profiles.flush()?;
    write_json(
        &out.join("sweep.json"),
        &json!({ "command": "sweep", "config": config, "rows": json_rows }),
    )?;
    let failed = rows.iter().filter(|r| r.report.is_none()).count();
    Ok(if failed == 0 { EXIT_OK } else { EXIT_NUMERICAL })
}

fn cmd_particles(config: &ExperimentConfig, out: &Path) -> Result<i32> {
    let system = config.build_system()?;
    let report = thermodynamic_consistency_run(
        &system,
        config.t,
        &config.particle_config(),
        &config.fixed_point_config()?,
    )?;
    write_json(
        &out.join("particles.json"),
        &json!({ "command": "particles", "config": config, "report": report }),
    )?;
    let mut h = BufWriter::new(File::create(out.join("histogram.csv"))?);
    writeln!(h, "left,right,count,empirical_density,rho_density")?;
    for b in &report.histogram {
        writeln!(
            h,
            "{:?},{:?},{},{:?},{:?}",
            b.left, b.right, b.count, b.empirical_density, b.rho_density
        )?;
    }
    h.flush()?;
    let mut d = BufWriter::new(File::create(out.join("distances.csv"))?);
    writeln!(d, "step,w1,ks,kuiper")?;
    for s in &report.samples {
        writeln!(d, "{},{:?},{:?},{:?}", s.step, s.w1, s.ks, s.kuiper)?;
    }
    d.flush()?;
    if let Some(e) = &report.final_ensemble {
        let mut w = BufWriter::new(File::create(out.join("snapshot.csv"))?);
        e.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(EXIT_OK)
}

fn cmd_audit(config: &ExperimentConfig, out: &Path) -> Result<i32> {
    let system = config.build_system()?;
    let map = system.map();
    let assum_value = check_expansion_condition(map);
    let kb = KernelBounds::measure(system.kernel());
    let ly = ly_report(map, &kb, config.t);
    let probe = if ly.admissible && config.audit.ly_samples > 0 {
        Some(ly_empirical_probe(
            &system,
            &ly,
            config.audit.ly_samples,
            config.audit.ly_floor,
            config.audit.seed,
        )?)
    } else {
        None
    };
    let norms = norm_inequality_audit(&config.audit_samples())?;
    write_json(
        &out.join("audit.json"),
        &json!({
            "command": "audit",
            "config": config,
            "assum_value": assum_value,
            "expansion_condition_holds": assum_value < 1.0,
            "lasota_yorke": ly,
            "lasota_yorke_probe": probe,
            "norm_inequalities": norms,
        }),
    )?;
    Ok(if assum_value < 1.0 && ly.admissible {
        EXIT_OK
    } else {
        EXIT_NUMERICAL
    })
}

//! Flat-file outputs of a run.
//!
//! Every CSV value is written with 17 significant digits so that two runs of
//! the same configuration produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::cli::run::RunReport;
use crate::entropy::EntropyWeights;
use crate::error::{Error, Result};
use crate::oracle::{preset, solve_riemann};
use crate::state::{eos_energy_from_pressure, Primitive};

/// Bumped whenever a column or file layout changes.
pub const SCHEMA_VERSION: u32 = 1;

pub const FIELDS_HEADER: &str = "x,rho,u,p,e,eta";
pub const DIAG_HEADER: &str = "step,time,dt,mass,energy,conserved,global_entropy,max_entropy_residual,cfl_entropy_dt";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|source| Error::Io { path: path.clone(), source })?;
    Ok(path)
}

fn field_row(out: &mut String, x: f64, q: Primitive<f64>, e: f64, weights: &EntropyWeights<f64>) {
    let eta = if q.rho > 0.0 && e > 0.0 { weights.eta(q.rho, e) } else { f64::NAN };
    let _ = writeln!(out, "{},{},{},{},{},{}", num(x), num(q.rho), num(q.u), num(q.p), num(e), num(eta));
}

/// Cells whose centers lie in the measurement window.
fn window_cells(report: &RunReport) -> impl Iterator<Item = usize> + '_ {
    let (a, b) = report.config.problem.window;
    (0..report.grid.n_cells).filter(move |&k| {
        let x = report.grid.cell_centers[k];
        x >= a && x <= b
    })
}

/// `fields.csv`: the computed state, velocity averaged to cell centers.
pub fn fields_csv(report: &RunReport) -> String {
    let gamma = report.config.scheme.gamma;
    let weights = EntropyWeights { gamma };
    let s = &report.final_state;
    let mut out = format!("{FIELDS_HEADER}\n");
    for k in window_cells(report) {
        let q = Primitive::new(s.rho[k], 0.5 * (s.u[k] + s.u[k + 1]), s.p[k]);
        field_row(&mut out, report.grid.cell_centers[k], q, s.e[k], &weights);
    }
    out
}

/// `exact.csv`: the exact solution at the abscissae of `fields.csv`.
pub fn exact_csv(report: &RunReport) -> String {
    let gamma = report.config.scheme.gamma;
    let weights = EntropyWeights { gamma };
    let mut out = format!("{FIELDS_HEADER}\n");
    for k in window_cells(report) {
        let x = report.grid.cell_centers[k];
        let q = report.exact_at(x).unwrap_or(Primitive::new(f64::NAN, f64::NAN, f64::NAN));
        let e = eos_energy_from_pressure(q.rho, q.p, gamma).unwrap_or(f64::NAN);
        field_row(&mut out, x, q, e, &weights);
    }
    out
}

pub fn diag_csv(report: &RunReport) -> String {
    let mut out = format!("{DIAG_HEADER}\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            num(r.time),
            num(r.dt),
            num(r.mass),
            num(r.energy),
            num(r.conserved),
            opt(r.global_entropy),
            opt(r.max_entropy_residual),
            opt(r.cfl_entropy_dt),
        );
    }
    out
}

/// `audit.txt`: remainder bounds and run summary as `key value` lines.
pub fn audit_txt(report: &RunReport) -> String {
    let mut out = format!("schema {SCHEMA_VERSION}\n");
    let cfg = &report.config;
    let _ = writeln!(out, "problem {}", cfg.problem.name);
    let _ = writeln!(out, "scheme {:?}", cfg.scheme.scheme);
    let _ = writeln!(out, "reconstruction {:?}", cfg.scheme.reconstruction);
    let _ = writeln!(out, "corrective_source {}", cfg.scheme.corrective_source);
    let _ = writeln!(out, "n_cells {}", report.grid.n_cells);
    let _ = writeln!(out, "final_time {}", num(report.final_state.time));
    let _ = writeln!(out, "steps {}", report.steps);
    let _ = writeln!(out, "restarts {}", report.restarts);
    let _ = writeln!(out, "rejected_steps {}", report.rejected_steps);
    let _ = writeln!(out, "max_picard_iters {}", report.max_picard_iters);
    let _ = writeln!(out, "l1_error {}", num(report.l1_error));
    let _ = writeln!(out, "linf_error {}", num(report.linf_error));
    let _ = writeln!(out, "mass_drift {}", num(report.mass_drift));
    let _ = writeln!(out, "energy_drift {}", num(report.energy_drift));
    if let Some(d) = &report.diagnostics {
        let n = &d.norms;
        let _ = writeln!(out, "bv_time_rho {}", num(n.bv_time_rho));
        let _ = writeln!(out, "bv_time_e {}", num(n.bv_time_e));
        let _ = writeln!(out, "bv_space_rho {}", num(n.bv_space_rho));
        let _ = writeln!(out, "bv_space_e {}", num(n.bv_space_e));
        let _ = writeln!(out, "m_bound {}", num(n.m_bound));
        let _ = writeln!(out, "dual_norm_surrogate {}", num(d.dual_norm_surrogate));
        for a in &d.audits {
            let verdict = if a.holds() { "ok" } else { "VIOLATED" };
            let _ = writeln!(
                out,
                "audit {} measured {} bound {} ratio {} {verdict}",
                a.name,
                num(a.measured),
                num(a.bound),
                num(a.ratio())
            );
        }
    }
    match &report.failure {
        Some(msg) => {
            let _ = writeln!(out, "failure {msg}");
        }
        None => out.push_str("failure none\n"),
    }
    out
}

/// `plot.gp-data`: one two-column block per quantity, blocks separated by two
/// blank lines so that gnuplot can address them with `index`.
pub fn plot_data(report: &RunReport) -> String {
    let s = &report.final_state;
    let cells: Vec<usize> = window_cells(report).collect();
    let x = |k: usize| report.grid.cell_centers[k];
    let mut blocks: Vec<(&str, Vec<(f64, f64)>)> = vec![
        ("rho", cells.iter().map(|&k| (x(k), s.rho[k])).collect()),
        ("u", cells.iter().map(|&k| (x(k), 0.5 * (s.u[k] + s.u[k + 1]))).collect()),
        ("p", cells.iter().map(|&k| (x(k), s.p[k])).collect()),
        ("e", cells.iter().map(|&k| (x(k), s.e[k])).collect()),
    ];
    if report.exact.is_some() {
        let exact: Vec<(f64, f64)> =
            cells.iter().map(|&k| (x(k), report.exact_at(x(k)).map_or(f64::NAN, |q| q.rho))).collect();
        blocks.push(("rho_exact", exact));
    }
    if report.rows.iter().any(|r| r.global_entropy.is_some()) {
        let series = report.rows.iter().filter_map(|r| r.global_entropy.map(|g| (r.time, g))).collect();
        blocks.push(("global_entropy", series));
    }
    let mut out = String::new();
    for (i, (name, pts)) in blocks.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = writeln!(out, "# {name}");
        for (a, b) in pts {
            let _ = writeln!(out, "{} {}", num(*a), num(*b));
        }
    }
    out
}

/// Write all output files into `dir`, creating it if needed.
pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let files = [
        ("fields.csv", fields_csv(report)),
        ("exact.csv", exact_csv(report)),
        ("diag.csv", diag_csv(report)),
        ("audit.txt", audit_txt(report)),
        ("plot.gp-data", plot_data(report)),
    ];
    files.iter().map(|(name, body)| write_file(dir, name, body)).collect()
}

/// Exact solution of a preset at its end time, sampled at `samples` evenly
/// spaced points of the measurement window, as `x,rho,u,p,e` CSV.
pub fn riemann_table(name: &str, samples: usize) -> Result<String> {
    let p = preset::<f64>(name).ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
    if samples < 2 {
        return Err(Error::Config(format!("samples must be at least 2, got {samples}")));
    }
    let sol = solve_riemann(p.left, p.right, p.gamma)?;
    let mut out = String::from("x,rho,u,p,e\n");
    let (a, b) = p.window;
    for i in 0..samples {
        let x = a + (b - a) * i as f64 / (samples - 1) as f64;
        let q = sol.sample((x - p.x0) / p.end_time);
        let e = eos_energy_from_pressure(q.rho, q.p, p.gamma)?;
        let _ = writeln!(out, "{},{},{},{},{}", num(x), num(q.rho), num(q.u), num(q.p), num(e));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::RunConfig;
    use crate::cli::run::run_case;
    use crate::state::SchemeKind;

    fn sod_report(n: usize) -> RunReport {
        let cfg = RunConfig::from_preset("sod", n, SchemeKind::PressureCorrection).unwrap();
        run_case(&cfg).unwrap()
    }

    #[test]
    fn fields_row_count_and_header() {
        let r = sod_report(40);
        let text = fields_csv(&r);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(FIELDS_HEADER));
        assert_eq!(lines.count(), 40);
        assert_eq!(exact_csv(&r).lines().count(), 41);
    }

    #[test]
    fn uniform_state_gives_constant_columns() {
        let mut cfg = RunConfig::from_preset("sod", 16, SchemeKind::Explicit).unwrap();
        cfg.problem.right = cfg.problem.left;
        let r = run_case(&cfg).unwrap();
        let text = fields_csv(&r);
        let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
        for col in 1..6 {
            assert!(rows.iter().all(|row| row[col] == rows[0][col]), "column {col}");
        }
    }

    #[test]
    fn values_carry_seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn audit_starts_with_schema_line() {
        let r = sod_report(20);
        let a = audit_txt(&r);
        assert!(a.starts_with("schema 1\n"));
        assert!(a.contains("failure none"));
        assert!(a.contains("audit "));
    }

    #[test]
    fn plot_blocks_are_named() {
        let r = sod_report(20);
        let p = plot_data(&r);
        for name in ["# rho", "# u", "# p", "# e", "# rho_exact", "# global_entropy"] {
            assert!(p.contains(name), "{name}");
        }
    }

    #[test]
    fn riemann_table_sod_star_pressure() {
        let t = riemann_table("sod", 101).unwrap();
        assert_eq!(t.lines().count(), 102);
        // x = 0.6 sits between the contact and the shock at t = 0.2
        let row: Vec<f64> = t.lines().nth(61).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert!((row[0] - 0.6).abs() < 1e-12);
        assert!((row[3] - 0.30313).abs() < 1e-4);
        assert!(riemann_table("nope", 10).is_err());
    }

    #[test]
    fn write_outputs_reports_path_on_failure() {
        let r = sod_report(10);
        let dir = std::env::temp_dir().join(format!("se-out-{}", std::process::id()));
        let files = write_outputs(&r, &dir).unwrap();
        assert_eq!(files.len(), 5);
        let blocker = dir.join("fields.csv").join("sub");
        let err = write_outputs(&r, &blocker).unwrap_err();
        assert!(err.to_string().contains("fields.csv"));
        fs::remove_dir_all(&dir).unwrap();
    }
}

//! Time loop, step control and run summaries.

use std::time::{Duration, Instant};

use crate::cli::config::RunConfig;
use crate::entropy::{DiagnosticsAccumulator, DiagnosticsReport, EntropyWeights, TimeLevel};
use crate::error::{Error, Result};
use crate::flux::{dual_density, FluxSet};
use crate::grid::{build_uniform_grid, mesh_metrics, Grid};
use crate::oracle::{solve_riemann, RiemannSolution};
use crate::scheme_exp::{advective_dt_limit, step_explicit};
use crate::scheme_pc::{step_pc, PcHistory};
use crate::state::{init_riemann, internal_energy, kinetic_energy, totals, Primitive, SchemeKind, State};

/// Halvings of a rejected pressure-correction step before the run aborts.
const MAX_STEP_HALVINGS: usize = 8;
/// Restarts of an explicit run with a smaller constant step.
const MAX_RESTARTS: usize = 30;

/// One row of the diagnostics time series.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub mass: f64,
    /// Internal plus dual kinetic energy at the new level.
    pub energy: f64,
    /// The energy functional the scheme conserves exactly (see README).
    pub conserved: f64,
    pub global_entropy: Option<f64>,
    pub max_entropy_residual: Option<f64>,
    pub residual_scale: Option<f64>,
    pub cfl_entropy_dt: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub grid: Grid<f64>,
    pub initial: State<f64>,
    pub final_state: State<f64>,
    pub exact: Option<RiemannSolution<f64>>,
    pub diagnostics: Option<DiagnosticsReport<f64>>,
    pub rows: Vec<StepRow>,
    /// `sum |K| |rho_K - rho_exact(x_K)|` over the cells of the window.
    pub l1_error: f64,
    pub linf_error: f64,
    /// Largest per-step relative change of total mass.
    pub mass_drift: f64,
    /// Largest per-step relative change of the conserved energy functional.
    pub energy_drift: f64,
    pub steps: usize,
    /// Explicit runs restarted with a smaller constant step.
    pub restarts: usize,
    /// Pressure-correction steps retried with half the step.
    pub rejected_steps: usize,
    pub max_picard_iters: usize,
    pub snapshots: Vec<State<f64>>,
    pub wall_clock: Duration,
    /// Set when a step failed; the report then describes the last good state.
    pub failure: Option<String>,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    /// Exact solution at a point and the time of the final state.
    pub fn exact_at(&self, x: f64) -> Option<Primitive<f64>> {
        exact_at(self.exact.as_ref(), &self.config, &self.initial, &self.grid, x, self.final_state.time)
    }
}

fn exact_at(
    exact: Option<&RiemannSolution<f64>>,
    cfg: &RunConfig,
    initial: &State<f64>,
    grid: &Grid<f64>,
    x: f64,
    t: f64,
) -> Option<Primitive<f64>> {
    let sol = exact?;
    if t > 0.0 {
        Some(sol.sample((x - cfg.problem.x0) / t))
    } else {
        let k = grid.locate(x);
        Some(Primitive::new(initial.rho[k], 0.5 * (initial.u[k] + initial.u[k + 1]), initial.p[k]))
    }
}

/// Density errors over the cells whose centers lie in the window.
pub fn density_errors(report_grid: &Grid<f64>, state: &State<f64>, window: (f64, f64), exact: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut l1 = 0.0;
    let mut linf: f64 = 0.0;
    for k in 0..report_grid.n_cells {
        let x = report_grid.cell_centers[k];
        if x < window.0 || x > window.1 {
            continue;
        }
        let d = (state.rho[k] - exact(x)).abs();
        l1 += report_grid.cell_measure(k) * d;
        linf = linf.max(d);
    }
    (l1, linf)
}

/// Everything recorded while stepping.
struct Trace<'a> {
    cfg: &'a RunConfig,
    grid: &'a Grid<f64>,
    acc: Option<DiagnosticsAccumulator<f64>>,
    rows: Vec<StepRow>,
    snapshots: Vec<State<f64>>,
    pending: Vec<f64>,
    mass0: f64,
    last_conserved: Option<f64>,
    conserved0: f64,
    mass_drift: f64,
    energy_drift: f64,
    steps: usize,
    max_picard_iters: usize,
    rejected_steps: usize,
}

impl<'a> Trace<'a> {
    fn new(cfg: &'a RunConfig, grid: &'a Grid<f64>, initial: &State<f64>) -> Result<Self> {
        let acc = if cfg.output.entropy {
            let level = match cfg.scheme.scheme {
                SchemeKind::PressureCorrection => TimeLevel::Implicit,
                SchemeKind::Explicit => TimeLevel::Explicit,
            };
            let q = cfg.scheme.stabilization.map_or(2.0, |s| s.q);
            let w = EntropyWeights::new(cfg.scheme.gamma)?;
            Some(DiagnosticsAccumulator::new(initial, grid, w, cfg.scheme.end_time, level, q))
        } else {
            None
        };
        let mut pending: Vec<f64> = cfg.output.snapshots.clone();
        pending.sort_by(f64::total_cmp);
        let mut trace = Trace {
            cfg,
            grid,
            acc,
            rows: Vec::new(),
            snapshots: Vec::new(),
            pending,
            mass0: totals(initial, grid).0,
            last_conserved: None,
            conserved0: 0.0,
            mass_drift: 0.0,
            energy_drift: 0.0,
            steps: 0,
            max_picard_iters: 0,
            rejected_steps: 0,
        };
        trace.take_snapshots(initial);
        Ok(trace)
    }

    fn take_snapshots(&mut self, s: &State<f64>) {
        let slack = 1e-12 * self.cfg.scheme.end_time.max(1.0);
        while let Some(&t) = self.pending.first() {
            if s.time + slack >= t {
                self.snapshots.push(s.clone());
                self.pending.remove(0);
            } else {
                break;
            }
        }
    }

    fn record(&mut self, old: &State<f64>, new: &State<f64>, flux: &FluxSet<f64>, dt: f64, conserved: f64) {
        self.steps += 1;
        let (m_old, _) = totals(old, self.grid);
        let (mass, energy) = totals(new, self.grid);
        self.mass_drift = self.mass_drift.max(((mass - m_old) / self.mass0).abs());
        match self.last_conserved {
            Some(prev) => {
                self.energy_drift = self.energy_drift.max(((conserved - prev) / self.conserved0).abs());
            }
            None => self.conserved0 = conserved.abs().max(f64::MIN_POSITIVE),
        }
        self.last_conserved = Some(conserved);
        let diag = self.acc.as_mut().map(|a| a.record_step(old, new, flux, dt).0);
        let last = new.time + 1e-12 * self.cfg.scheme.end_time >= self.cfg.scheme.end_time;
        if self.steps % self.cfg.output.cadence == 0 || last {
            self.rows.push(StepRow {
                step: self.steps,
                time: new.time,
                dt,
                mass,
                energy,
                conserved,
                global_entropy: diag.as_ref().map(|d| d.global_entropy),
                max_entropy_residual: diag.as_ref().map(|d| d.max_entropy_residual),
                residual_scale: diag.as_ref().map(|d| d.residual_scale),
                cfl_entropy_dt: diag.as_ref().map(|d| d.cfl_entropy_dt),
            });
        }
        self.take_snapshots(new);
    }
}

enum Outcome {
    Done(State<f64>),
    Failed(State<f64>, String),
    /// The explicit guard tripped; restart with a step below `required`.
    Restart(f64),
}

fn run_explicit(trace: &mut Trace<'_>, initial: &State<f64>, dt_target: f64) -> Outcome {
    let cfg = &trace.cfg.scheme;
    let grid = trace.grid;
    let n_steps = (cfg.end_time / dt_target).ceil().max(1.0) as usize;
    let dt = cfg.end_time / n_steps as f64;
    let mut state = initial.clone();
    let mut source = vec![0.0; grid.n_cells];
    let mut stab_removed = 0.0;
    for step in 0..n_steps {
        match step_explicit(&state, &source, grid, dt, cfg) {
            Ok((mut next, rec)) => {
                next.time = (step + 1) as f64 * dt;
                let ke_old = kinetic_energy(&dual_density(&state.rho, grid), &state.u, grid);
                let conserved = internal_energy(&next, grid) + ke_old + stab_removed;
                stab_removed += rec.stabilization_energy;
                trace.record(&state, &next, &rec.flux, dt, conserved);
                source = rec.s;
                state = next;
            }
            Err(Error::Cfl { required, .. }) => return Outcome::Restart(required),
            Err(e) => return Outcome::Failed(state, e.to_string()),
        }
    }
    Outcome::Done(state)
}

fn run_pressure_correction(trace: &mut Trace<'_>, initial: &State<f64>) -> Outcome {
    let cfg = &trace.cfg.scheme;
    let grid = trace.grid;
    let end = cfg.end_time;
    let mut state = initial.clone();
    let mut history: Option<PcHistory<f64>> = None;
    let mut r2_sum = 0.0;
    while state.time < end * (1.0 - 1e-14) {
        let mut dt = cfg.cfl_fraction * advective_dt_limit(&state, grid, cfg.gamma);
        if !(dt > 0.0 && dt.is_finite()) {
            dt = end - state.time;
        }
        let mut attempt = 0;
        let (next, rec, new_history) = loop {
            if state.time + dt >= end * (1.0 - 1e-14) {
                dt = end - state.time;
            }
            let hist = history.clone().unwrap_or_else(|| PcHistory::bootstrap(&state, grid, dt, cfg));
            match step_pc(&hist, &state, grid, dt, cfg) {
                Ok(r) => break r,
                Err(e @ (Error::NoConvergence { .. } | Error::Numerical(_))) => {
                    attempt += 1;
                    trace.rejected_steps += 1;
                    if attempt > MAX_STEP_HALVINGS {
                        return Outcome::Failed(state, e.to_string());
                    }
                    dt *= 0.5;
                }
                Err(e) => return Outcome::Failed(state, e.to_string()),
            }
        };
        let mut next = next;
        if (next.time - end).abs() <= 1e-12 * end {
            next.time = end;
        }
        r2_sum += dt * rec.r2;
        let conserved =
            internal_energy(&next, grid) + kinetic_energy(&dual_density(&state.rho, grid), &next.u, grid) + r2_sum;
        trace.max_picard_iters = trace.max_picard_iters.max(rec.picard_iters);
        trace.record(&state, &next, &rec.flux, dt, conserved);
        history = Some(new_history);
        state = next;
    }
    Outcome::Done(state)
}

/// Advance the configured problem to its end time.
///
/// Configuration and setup problems are errors; a failing step ends the run
/// early and is reported in [`RunReport::failure`].
pub fn run_case(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let clock = Instant::now();
    let p = &cfg.problem;
    let gamma = cfg.scheme.gamma;
    let grid = build_uniform_grid(p.domain.0, p.domain.1, cfg.total_cells())?;
    let initial = init_riemann(&grid, p.left, p.right, p.x0, gamma)?;
    let exact = solve_riemann(p.left, p.right, gamma).ok();

    let mut restarts = 0;
    let mut dt_target = cfg.scheme.cfl_fraction * advective_dt_limit(&initial, &grid, gamma);
    let (trace, final_state, failure) = loop {
        let mut trace = Trace::new(cfg, &grid, &initial)?;
        if !(cfg.scheme.end_time > 0.0) {
            break (trace, initial.clone(), None);
        }
        let outcome = match cfg.scheme.scheme {
            SchemeKind::Explicit => run_explicit(&mut trace, &initial, dt_target),
            SchemeKind::PressureCorrection => run_pressure_correction(&mut trace, &initial),
        };
        match outcome {
            Outcome::Done(s) => break (trace, s, None),
            Outcome::Failed(s, msg) => break (trace, s, Some(msg)),
            Outcome::Restart(required) => {
                restarts += 1;
                if restarts > MAX_RESTARTS {
                    let msg = format!("explicit step still above the stability limit after {MAX_RESTARTS} restarts");
                    break (Trace::new(cfg, &grid, &initial)?, initial.clone(), Some(msg));
                }
                dt_target = 0.9 * required;
            }
        }
    };

    let t = final_state.time;
    let (l1_error, linf_error) = match exact.as_ref() {
        Some(_) => density_errors(&grid, &final_state, p.window, |x| {
            exact_at(exact.as_ref(), cfg, &initial, &grid, x, t).map_or(f64::NAN, |q| q.rho)
        }),
        None => (f64::NAN, f64::NAN),
    };
    let Trace { acc, rows, snapshots, mass_drift, energy_drift, steps, max_picard_iters, rejected_steps, .. } = trace;
    let diagnostics = acc.filter(|_| steps > 0).map(|a| {
        let mut report = a.finish(&final_state, &mesh_metrics(&grid));
        if !cfg.output.audits {
            report.audits.clear();
        }
        report
    });
    Ok(RunReport {
        config: cfg.clone(),
        grid,
        initial,
        final_state,
        exact,
        diagnostics,
        rows,
        l1_error,
        linf_error,
        mass_drift,
        energy_drift,
        steps,
        restarts,
        rejected_steps,
        max_picard_iters,
        snapshots,
        wall_clock: clock.elapsed(),
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sod(kind: SchemeKind, n: usize) -> RunConfig {
        let mut cfg = RunConfig::from_preset("sod", n, kind).unwrap();
        cfg.output.entropy = false;
        cfg.output.audits = false;
        cfg
    }

    #[test]
    fn zero_end_time_echoes_the_initial_state() {
        let mut cfg = sod(SchemeKind::Explicit, 20);
        cfg.scheme.end_time = 0.0;
        let r = run_case(&cfg).unwrap();
        assert_eq!(r.final_state, r.initial);
        assert_eq!(r.steps, 0);
        assert_eq!(r.l1_error, 0.0);
    }

    #[test]
    fn runs_land_on_the_end_time() {
        for kind in [SchemeKind::Explicit, SchemeKind::PressureCorrection] {
            let r = run_case(&sod(kind, 50)).unwrap();
            assert!(r.succeeded());
            assert_eq!(r.final_state.time, 0.2);
            assert!(r.l1_error < 0.05, "{kind:?}: {}", r.l1_error);
        }
    }

    #[test]
    fn explicit_restarts_keep_a_constant_step() {
        let r = run_case(&sod(SchemeKind::Explicit, 50)).unwrap();
        // the star region is faster than the initial data, so the first attempt trips the guard
        assert!(r.restarts >= 1);
        let dt0 = r.rows[0].dt;
        assert!(r.rows.iter().all(|row| row.dt == dt0));
        assert!(r.energy_drift < 1e-12);
    }

    #[test]
    fn identical_configs_give_identical_results() {
        let cfg = sod(SchemeKind::PressureCorrection, 40);
        let a = run_case(&cfg).unwrap();
        let b = run_case(&cfg).unwrap();
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn density_error_of_identical_fields_is_zero() {
        let g = build_uniform_grid(0.0, 1.0, 10).unwrap();
        let s = init_riemann(&g, Primitive::new(2.0, 0.0, 1.0), Primitive::new(2.0, 0.0, 1.0), 0.5, 1.4).unwrap();
        assert_eq!(density_errors(&g, &s, (0.0, 1.0), |_| 2.0), (0.0, 0.0));
        let (l1, linf) = density_errors(&g, &s, (0.0, 1.0), |_| 1.5);
        assert!((l1 - 0.5).abs() < 1e-15 && linf == 0.5);
    }

    #[test]
    fn snapshots_are_taken_at_requested_times() {
        let mut cfg = sod(SchemeKind::PressureCorrection, 40);
        cfg.output.snapshots = vec![0.0, 0.1, 0.2];
        let r = run_case(&cfg).unwrap();
        assert_eq!(r.snapshots.len(), 3);
        assert_eq!(r.snapshots[0].time, 0.0);
        assert!(r.snapshots[1].time >= 0.1 - 1e-12);
        assert_eq!(r.snapshots[2].time, 0.2);
    }
}

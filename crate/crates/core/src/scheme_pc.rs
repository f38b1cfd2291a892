//! Semi-implicit pressure-correction scheme.
//!
//! A step first predicts the velocity on the dual mesh with implicit upwind
//! convection driven by the fluxes of the previous mass update and a
//! pressure gradient weighted by `zeta = sqrt(rho_dual^n / rho_dual^{n-1})`.
//! The correction then couples the velocity correction, the upwind mass
//! balance, the internal energy balance and the equation of state. With
//! upwind face values the internal energy balance only involves the pressure,
//! so the coupled problem reduces to a nonlinear tridiagonal system in `p`,
//! solved by damped Newton iterations; density and energy follow from one
//! linear mass solve. MUSCL face values are handled by an outer
//! defect-correction loop around that solve.
//!
//! The source of the internal energy balance is the kinetic energy
//! remainder of the prediction, so that internal plus kinetic energy is
//! conserved up to a telescoping pressure term.

use crate::entropy::Phi;
use crate::error::{Error, Result};
use crate::flux::{assemble_mass_fluxes, dual_density, mass_residual, reconstruct, FluxSet};
use crate::grid::Grid;
use crate::kinetic::{dispatch, upwind_dissipation, wall_strips};
use crate::real::Real;
use crate::state::{Reconstruction, SchemeConfig, State};
use crate::tridiag;

/// Density of the previous time level and the step that led from it to the
/// current one.
#[derive(Debug, Clone, PartialEq)]
pub struct PcHistory<T: Real> {
    pub prev_rho: Vec<T>,
    pub dt_prev: T,
}

impl<T: Real> PcHistory<T> {
    pub fn new(prev_rho: Vec<T>, dt_prev: T) -> Self {
        PcHistory { prev_rho, dt_prev }
    }

    /// History for the first step. The previous density is recovered by
    /// running the mass balance backwards over `dt` with the initial fluxes,
    /// so that the dual mass balance also holds at start-up. If that would
    /// produce a non-positive density, the current one is reused.
    pub fn bootstrap(state: &State<T>, grid: &Grid<T>, dt: T, cfg: &SchemeConfig<T>) -> Self {
        let f = assemble_mass_fluxes(state, grid, cfg.reconstruction, cfg.gamma).f_primal;
        let back: Vec<T> = (0..grid.n_cells)
            .map(|k| state.rho[k] + dt / grid.cell_measure(k) * (f[k + 1] - f[k]))
            .collect();
        if back.iter().all(|&r| r > T::zero()) {
            PcHistory { prev_rho: back, dt_prev: dt }
        } else {
            PcHistory { prev_rho: state.rho.clone(), dt_prev: dt }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T: Real> {
    pub u_tilde: Vec<T>,
    /// Pressure-gradient weight per face; 1 on the walls.
    pub zeta: Vec<T>,
    /// Kinetic energy remainder of the prediction per cell (nonnegative).
    pub source: Vec<T>,
    pub rho_dual_prev: Vec<T>,
    pub rho_dual: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcStepRecord<T: Real> {
    pub u_tilde: Vec<T>,
    pub zeta: Vec<T>,
    /// Corrective source applied in the internal energy balance.
    pub s: Vec<T>,
    /// Residual evaluations of the pressure solve, over all outer passes.
    pub picard_iters: usize,
    /// Final relative residual of the coupled correction system.
    pub picard_residual: T,
    /// `sum_i (dt / 2|D_i|) (dp'_i^2 / rho_dual^n_i - dp^n_i^2 / rho_dual^{n-1}_i)`;
    /// `dt` times this is the telescoping pressure term of the energy budget.
    pub r2: T,
    /// Mass fluxes of the new state.
    pub flux: FluxSet<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionReport<T: Real> {
    pub picard_iters: usize,
    pub picard_residual: T,
}

/// `R1_i = rho_dual_prev_i (u_tilde_i - u_prev_i)^2 / (2 dt)` on each interior
/// face, with `½ |D_i| R1_i` given to each neighbouring cell, as a density.
pub fn corrective_source_pc<T: Real>(
    u_tilde: &[T],
    u_prev: &[T],
    rho_dual_prev: &[T],
    grid: &Grid<T>,
    dt: T,
) -> Vec<T> {
    let n = grid.n_cells;
    let mut face = vec![T::zero(); n + 1];
    for i in grid.interior_faces() {
        let d = u_tilde[i] - u_prev[i];
        face[i] = grid.dual_measure(i) * rho_dual_prev[i] * d * d / (T::two() * dt);
    }
    dispatch(&face, (T::zero(), T::zero()), grid)
}

/// Implicit upwind prediction of the velocity.
///
/// The convection operator is assembled in the form obtained after
/// subtracting `u_tilde` times the dual mass balance. The two forms agree
/// whenever that balance holds; this one is an M-matrix even when it does
/// not, which happens on the first step if no positive previous density is
/// consistent with the initial fluxes.
pub fn predict_velocity<T: Real>(
    history: &PcHistory<T>,
    state: &State<T>,
    grid: &Grid<T>,
    dt: T,
    cfg: &SchemeConfig<T>,
) -> Result<Prediction<T>> {
    let n = grid.n_cells;
    if history.prev_rho.len() != n || state.n_cells() != n {
        return Err(Error::Precondition("history and state must match the grid".into()));
    }
    if !(dt > T::zero()) || !(history.dt_prev > T::zero()) {
        return Err(Error::Precondition("time steps must be positive".into()));
    }
    let rho_dual = dual_density(&state.rho, grid);
    let rho_dual_prev = dual_density(&history.prev_rho, grid);
    let flux = assemble_mass_fluxes(state, grid, cfg.reconstruction, cfg.gamma);
    // the dual mass balance holds over dt_prev; rescale so it holds over dt
    let ratio = history.dt_prev / dt;
    let g: Vec<T> = flux.f_dual.iter().map(|&v| v * ratio).collect();
    let zeta: Vec<T> = (0..=n)
        .map(|i| if grid.is_boundary_face(i) { T::one() } else { (rho_dual[i] / rho_dual_prev[i]).sqrt() })
        .collect();

    let mut u_tilde = vec![T::zero(); n + 1];
    if n >= 2 {
        let m = n - 1;
        let mut diag = vec![T::zero(); m];
        let mut lower = vec![T::zero(); m.saturating_sub(1)];
        let mut upper = vec![T::zero(); m.saturating_sub(1)];
        let mut rhs = vec![T::zero(); m];
        for i in grid.interior_faces() {
            let j = i - 1;
            let d = grid.dual_measure(i);
            let (gr, gl) = (g[i], g[i - 1]);
            diag[j] = d / dt * rho_dual_prev[i] + gr.neg_part() + gl.max(T::zero());
            if gr < T::zero() && i + 1 < n {
                upper[j] = gr;
            }
            if gl >= T::zero() && i > 1 {
                lower[j - 1] = -gl;
            }
            rhs[j] = d / dt * rho_dual_prev[i] * state.u[i] - zeta[i] * (state.p[i] - state.p[i - 1]);
        }
        let sol = tridiag::solve(lower, diag, upper, rhs)?;
        u_tilde[1..n].copy_from_slice(&sol);
    }

    let source = if cfg.corrective_source {
        let r1 = corrective_source_pc(&u_tilde, &state.u, &rho_dual_prev, grid, dt);
        let mut face = vec![T::zero(); n + 1];
        for i in grid.interior_faces() {
            face[i] = upwind_dissipation(u_tilde[i], &u_tilde, &g, i);
        }
        let rest = dispatch(&face, wall_strips(&u_tilde, &g), grid);
        r1.iter().zip(&rest).map(|(&a, &b)| a + b).collect()
    } else {
        vec![T::zero(); n]
    };
    Ok(Prediction { u_tilde, zeta, source, rho_dual_prev, rho_dual })
}

/// Frozen data of the pressure equation.
struct PressureSystem<'a, T: Real> {
    grid: &'a Grid<T>,
    state: &'a State<T>,
    pred: &'a Prediction<T>,
    dt: T,
    gamma: T,
    /// `dt / (rho_dual^n |D|)` per face, zero on the walls.
    c: Vec<T>,
    /// Face energy-density defect of the reconstruction (zero for upwind).
    d_e: Vec<T>,
}

impl<T: Real> PressureSystem<'_, T> {
    fn velocity(&self, p: &[T]) -> Vec<T> {
        let n = self.grid.n_cells;
        let mut u = vec![T::zero(); n + 1];
        for i in self.grid.interior_faces() {
            let dp_old = self.state.p[i] - self.state.p[i - 1];
            u[i] = self.pred.u_tilde[i] - self.c[i] * ((p[i] - p[i - 1]) - self.pred.zeta[i] * dp_old);
        }
        u
    }

    fn upwind_p(p: &[T], u: &[T], i: usize) -> (T, bool) {
        if u[i] >= T::zero() {
            (p[i - 1], true)
        } else {
            (p[i], false)
        }
    }

    /// Internal energy residual per cell and the corrected velocity.
    fn residual(&self, p: &[T]) -> (Vec<T>, Vec<T>) {
        let n = self.grid.n_cells;
        let g1 = self.gamma - T::one();
        let u = self.velocity(p);
        let q: Vec<T> = (0..=n)
            .map(|i| {
                if self.grid.is_boundary_face(i) {
                    T::zero()
                } else {
                    let (pu, _) = Self::upwind_p(p, &u, i);
                    pu * u[i] / g1 + u[i] * self.d_e[i]
                }
            })
            .collect();
        let r = (0..n)
            .map(|k| {
                let h = self.grid.cell_measure(k);
                h / (self.dt * g1) * (p[k] - self.state.p[k]) + q[k + 1] - q[k] + p[k] * (u[k + 1] - u[k])
                    - h * self.pred.source[k]
            })
            .collect();
        (r, u)
    }

    /// Corrected velocity and energy flux on one face.
    fn face(&self, p: &[T], i: usize) -> (T, T) {
        if self.grid.is_boundary_face(i) {
            return (T::zero(), T::zero());
        }
        let dp_old = self.state.p[i] - self.state.p[i - 1];
        let u = self.pred.u_tilde[i] - self.c[i] * ((p[i] - p[i - 1]) - self.pred.zeta[i] * dp_old);
        let pu = if u >= T::zero() { p[i - 1] } else { p[i] };
        (u, pu * u / (self.gamma - T::one()) + u * self.d_e[i])
    }

    fn cell_residual(&self, p: &[T], k: usize) -> T {
        let h = self.grid.cell_measure(k);
        let (ul, ql) = self.face(p, k);
        let (ur, qr) = self.face(p, k + 1);
        h / (self.dt * (self.gamma - T::one())) * (p[k] - self.state.p[k]) + qr - ql + p[k] * (ur - ul)
            - h * self.pred.source[k]
    }

    /// One forward and one backward nonlinear Gauss-Seidel sweep. Each cell
    /// residual divided by its own pressure increases with that pressure and
    /// has a unique root, found by bracketing in `ln p`.
    fn gauss_seidel_sweep(&self, p: &mut [T]) {
        let n = self.grid.n_cells;
        for k in (0..n).chain((0..n).rev()) {
            let y0 = p[k].ln();
            let f = |y: T, p: &mut [T]| {
                p[k] = y.exp();
                self.cell_residual(p, k) / p[k]
            };
            let f0 = f(y0, p);
            if f0 == T::zero() {
                continue;
            }
            // expand until the sign changes
            let dir = if f0 > T::zero() { -T::one() } else { T::one() };
            let (mut a, mut fa) = (y0, f0);
            let mut width = T::one();
            let mut b = y0;
            let mut fb = f0;
            for _ in 0..12 {
                b = a + dir * width;
                fb = f(b, p);
                if (fb > T::zero()) != (f0 > T::zero()) || !fb.is_finite() {
                    break;
                }
                a = b;
                fa = fb;
                width = width * T::two();
            }
            if !fb.is_finite() || (fb > T::zero()) == (f0 > T::zero()) {
                p[k] = y0.exp();
                continue;
            }
            // Illinois false position
            let mut side = 0;
            for _ in 0..80 {
                let c = (a * fb - b * fa) / (fb - fa);
                if (b - a).abs() <= T::lit(1e-14) * (T::one() + c.abs()) {
                    break;
                }
                let fc = f(c, p);
                if fc == T::zero() {
                    a = c;
                    b = c;
                    break;
                }
                if (fc > T::zero()) == (fb > T::zero()) {
                    b = c;
                    fb = fc;
                    if side == -1 {
                        fa = fa * T::half();
                    }
                    side = -1;
                } else {
                    a = c;
                    fa = fc;
                    if side == 1 {
                        fb = fb * T::half();
                    }
                    side = 1;
                }
            }
            p[k] = (T::half() * (a + b)).exp();
        }
    }

    fn scale(&self, p: &[T]) -> T {
        let g1 = self.gamma - T::one();
        (0..self.grid.n_cells).fold(T::min_positive_value(), |m, k| {
            let h = self.grid.cell_measure(k);
            m.max(h * self.state.p[k].max(p[k]) / (self.dt * g1)).max(h * self.pred.source[k])
        })
    }

    fn jacobian(&self, p: &[T], u: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let n = self.grid.n_cells;
        let g1 = self.gamma - T::one();
        // derivatives of the face energy flux with respect to its left and right pressure
        let mut dq_left = vec![T::zero(); n + 1];
        let mut dq_right = vec![T::zero(); n + 1];
        for i in self.grid.interior_faces() {
            let (pu, from_left) = Self::upwind_p(p, u, i);
            let c = self.c[i];
            let (own_l, own_r) = if from_left { (u[i], T::zero()) } else { (T::zero(), u[i]) };
            dq_left[i] = (own_l + pu * c) / g1 + self.d_e[i] * c;
            dq_right[i] = (own_r - pu * c) / g1 - self.d_e[i] * c;
        }
        let mut diag = vec![T::zero(); n];
        let mut lower = vec![T::zero(); n - 1];
        let mut upper = vec![T::zero(); n - 1];
        for k in 0..n {
            let h = self.grid.cell_measure(k);
            diag[k] = h / (self.dt * g1) + dq_left[k + 1] - dq_right[k]
                + (u[k + 1] - u[k])
                + p[k] * (self.c[k + 1] + self.c[k]);
            if k + 1 < n {
                upper[k] = dq_right[k + 1] - p[k] * self.c[k + 1];
            }
            if k > 0 {
                lower[k - 1] = -dq_left[k] - p[k] * self.c[k];
            }
        }
        (lower, diag, upper)
    }
}

const LINE_SEARCH_HALVINGS: usize = 30;
/// Symmetric sweeps run whenever a Newton step finds no descent.
const GAUSS_SEIDEL_SWEEPS: usize = 4;

fn norm2<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x)
}

fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// Damped Newton iterations on the pressure. The energy residual of each
/// cell is divided by its pressure, which makes it increasing in that
/// pressure and unbounded below as it vanishes, and the unknown is `ln p`,
/// which keeps every iterate positive. Iterates down to `tol`; a solve that
/// stalls at rounding level is still accepted below `cfg.picard_tol`.
/// Returns the pressure, the corrected velocity, the residual evaluations
/// used and the final relative residual.
fn solve_pressure<T: Real>(
    sys: &PressureSystem<'_, T>,
    p0: Vec<T>,
    tol: T,
    cfg: &SchemeConfig<T>,
) -> Result<(Vec<T>, Vec<T>, usize, T)> {
    let n = sys.grid.n_cells;
    let scaled = |r: &[T], p: &[T]| -> Vec<T> { r.iter().zip(p).map(|(&a, &b)| a / b).collect() };
    let mut p = p0;
    let (mut r, mut u) = sys.residual(&p);
    let mut evals = 1;
    let max_log_step = T::two();
    for _ in 0..cfg.picard_max_iter {
        let rel = max_abs(&r) / sys.scale(&p);
        if rel <= tol {
            return Ok((p, u, evals, rel));
        }
        let gk = scaled(&r, &p);
        let (mut lower, mut diag, mut upper) = sys.jacobian(&p, &u);
        for k in 0..n {
            diag[k] = diag[k] - gk[k];
            if k + 1 < n {
                upper[k] = upper[k] / p[k] * p[k + 1];
            }
            if k > 0 {
                lower[k - 1] = lower[k - 1] / p[k] * p[k - 1];
            }
        }
        let step = tridiag::solve(lower, diag, upper, gk.iter().map(|&v| -v).collect())?;
        let largest = max_abs(&step);
        let base = norm2(&gk);
        let mut lambda = if largest > max_log_step { max_log_step / largest } else { T::one() };
        let mut accepted = false;
        for _ in 0..LINE_SEARCH_HALVINGS {
            let trial: Vec<T> = p.iter().zip(&step).map(|(&a, &b)| a * (lambda * b).exp()).collect();
            let (rt, ut) = sys.residual(&trial);
            evals += 1;
            if norm2(&scaled(&rt, &trial)) < base {
                p = trial;
                r = rt;
                u = ut;
                accepted = true;
                break;
            }
            lambda = lambda * T::half();
        }
        if !accepted || lambda < T::lit(0.25) {
            // Newton is far from its region of fast convergence; relax cell by cell
            let current = if accepted { norm2(&scaled(&r, &p)) } else { base };
            let mut trial = p.clone();
            for _ in 0..GAUSS_SEIDEL_SWEEPS {
                sys.gauss_seidel_sweep(&mut trial);
                evals += 1;
            }
            let (rt, ut) = sys.residual(&trial);
            evals += 1;
            if norm2(&scaled(&rt, &trial)) < current {
                p = trial;
                r = rt;
                u = ut;
            } else if !accepted {
                break;
            }
        }
    }
    let rel = max_abs(&r) / sys.scale(&p);
    if rel <= cfg.picard_tol {
        return Ok((p, u, evals, rel));
    }
    Err(Error::NoConvergence { iterations: evals, residual: rel.f64() })
}

/// Upwind mass balance with a given velocity and face density defect.
fn solve_mass<T: Real>(state: &State<T>, u: &[T], d_m: &[T], grid: &Grid<T>, dt: T) -> Result<Vec<T>> {
    let n = grid.n_cells;
    let mut diag = vec![T::zero(); n];
    let mut lower = vec![T::zero(); n - 1];
    let mut upper = vec![T::zero(); n - 1];
    let mut rhs = vec![T::zero(); n];
    for k in 0..n {
        let h = grid.cell_measure(k);
        let (ul, ur) = (u[k], u[k + 1]);
        diag[k] = h / dt + ur.max(T::zero()) + ul.neg_part();
        if k + 1 < n && ur < T::zero() {
            upper[k] = ur;
        }
        if k > 0 && ul >= T::zero() {
            lower[k - 1] = -ul;
        }
        rhs[k] = h / dt * state.rho[k] - ur * d_m[k + 1] + ul * d_m[k];
    }
    let rho = tridiag::solve(lower, diag, upper, rhs)?;
    if let Some(k) = rho.iter().position(|&r| !(r > T::zero())) {
        return Err(Error::Numerical(format!("mass update lost positivity in cell {k}")));
    }
    Ok(rho)
}

fn upwind_at<T: Real>(z: &[T], u: &[T], i: usize) -> T {
    if u[i] >= T::zero() {
        z[i - 1]
    } else {
        z[i]
    }
}

/// Coupled correction: velocity, density, internal energy and pressure of
/// the new time level.
pub fn correction_solve<T: Real>(
    state: &State<T>,
    pred: &Prediction<T>,
    grid: &Grid<T>,
    dt: T,
    cfg: &SchemeConfig<T>,
) -> Result<(State<T>, CorrectionReport<T>)> {
    let n = grid.n_cells;
    let gamma = cfg.gamma;
    let g1 = gamma - T::one();
    let c: Vec<T> = (0..=n)
        .map(|i| if grid.is_boundary_face(i) { T::zero() } else { dt / (pred.rho_dual[i] * grid.dual_measure(i)) })
        .collect();
    let mut sys = PressureSystem { grid, state, pred, dt, gamma, c, d_e: vec![T::zero(); n + 1] };
    let mut d_m = vec![T::zero(); n + 1];
    let mut p = state.p.clone();
    let mut evals = 0;
    // the limiter loop cannot settle below the accuracy of the inner solve
    let (outer, inner_tol) = match cfg.reconstruction {
        Reconstruction::Upwind => (1, cfg.picard_tol),
        Reconstruction::Muscl => (cfg.picard_max_iter, cfg.picard_tol * T::lit(1e-3)),
    };
    let mut defect = T::zero();
    for _ in 0..outer {
        let (p_new, u, it, rel) = solve_pressure(&sys, p, inner_tol, cfg)?;
        evals += it;
        p = p_new;
        let rho = solve_mass(state, &u, &d_m, grid, dt)?;
        let e: Vec<T> = (0..n).map(|k| p[k] / (g1 * rho[k])).collect();
        let next = State { rho, e, p: p.clone(), u, time: state.time + dt };
        if cfg.reconstruction == Reconstruction::Upwind {
            return Ok((next, CorrectionReport { picard_iters: evals, picard_residual: rel }));
        }
        let rho_face = reconstruct(&next.rho, &next.u, Reconstruction::Muscl, Phi::Rho);
        let e_face = reconstruct(&next.e, &next.u, Reconstruction::Muscl, Phi::Energy(gamma));
        let mut new_m = vec![T::zero(); n + 1];
        let mut new_e = vec![T::zero(); n + 1];
        for i in grid.interior_faces() {
            let ru = upwind_at(&next.rho, &next.u, i);
            let eu = upwind_at(&next.e, &next.u, i);
            new_m[i] = rho_face[i] - ru;
            new_e[i] = rho_face[i] * e_face[i] - ru * eu;
        }
        // residuals of the limited scheme at the current iterate
        let f: Vec<T> = (0..=n)
            .map(|i| if grid.is_boundary_face(i) { T::zero() } else { rho_face[i] * next.u[i] })
            .collect();
        let mass = relative_mass_residual_raw(&state.rho, &next.rho, &f, grid, dt);
        let energy_scale = sys.scale(&p);
        let q = |i: usize| next.u[i] * (new_e[i] - sys.d_e[i]);
        defect = (0..n).fold(mass, |m, k| m.max((q(k + 1) - q(k)).abs() / energy_scale));
        if defect <= cfg.picard_tol {
            return Ok((next, CorrectionReport { picard_iters: evals, picard_residual: rel.max(defect) }));
        }
        d_m = new_m;
        sys.d_e = new_e;
    }
    Err(Error::NoConvergence { iterations: evals, residual: defect.f64() })
}

/// One pressure-correction step. Returns the new state, the step record and
/// the history for the following step.
pub fn step_pc<T: Real>(
    history: &PcHistory<T>,
    state: &State<T>,
    grid: &Grid<T>,
    dt: T,
    cfg: &SchemeConfig<T>,
) -> Result<(State<T>, PcStepRecord<T>, PcHistory<T>)> {
    let pred = predict_velocity(history, state, grid, dt, cfg)?;
    let (next, report) = correction_solve(state, &pred, grid, dt, cfg)?;
    let mut r2 = T::zero();
    for i in grid.interior_faces() {
        let d = grid.dual_measure(i);
        let dp_new = next.p[i] - next.p[i - 1];
        let dp_old = state.p[i] - state.p[i - 1];
        r2 = r2 + dt / (T::two() * d) * (dp_new * dp_new / pred.rho_dual[i] - dp_old * dp_old / pred.rho_dual_prev[i]);
    }
    let flux = assemble_mass_fluxes(&next, grid, cfg.reconstruction, cfg.gamma);
    let record = PcStepRecord {
        u_tilde: pred.u_tilde,
        zeta: pred.zeta,
        s: pred.source,
        picard_iters: report.picard_iters,
        picard_residual: report.picard_residual,
        r2,
        flux,
    };
    let history = PcHistory { prev_rho: state.rho.clone(), dt_prev: dt };
    Ok((next, record, history))
}

/// Largest per-cell mass balance residual of a completed step, relative to
/// `|K| rho / dt + |F_L| + |F_R|`.
pub fn relative_mass_residual<T: Real>(old: &State<T>, new: &State<T>, flux: &FluxSet<T>, grid: &Grid<T>, dt: T) -> T {
    relative_mass_residual_raw(&old.rho, &new.rho, &flux.f_primal, grid, dt)
}

fn relative_mass_residual_raw<T: Real>(old: &[T], new: &[T], f: &[T], grid: &Grid<T>, dt: T) -> T {
    let r = mass_residual(old, new, f, grid, dt);
    (0..grid.n_cells).fold(T::zero(), |m, k| {
        let scale = grid.cell_measure(k) / dt * old[k].max(new[k]) + f[k].abs() + f[k + 1].abs();
        m.max(r[k].abs() / scale)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_uniform_grid;
    use crate::scheme_exp::advective_dt_limit;
    use crate::state::{init_riemann, internal_energy, kinetic_energy, totals, Primitive, SchemeKind};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg() -> SchemeConfig<f64> {
        SchemeConfig::new(SchemeKind::PressureCorrection)
    }

    fn rest(n: usize) -> (Grid<f64>, State<f64>) {
        let g = build_uniform_grid(0.0, 1.0, n).unwrap();
        let a = Primitive::new(1.0, 0.0, 1.0);
        let s = init_riemann(&g, a, a, 0.5, 1.4).unwrap();
        (g, s)
    }

    fn sod(n: usize) -> (Grid<f64>, State<f64>) {
        let g = build_uniform_grid(0.0, 1.0, n).unwrap();
        let s = init_riemann(&g, Primitive::new(1.0, 0.0, 1.0), Primitive::new(0.125, 0.0, 0.1), 0.5, 1.4).unwrap();
        (g, s)
    }

    #[test]
    fn rest_state_is_a_fixed_point() {
        let (g, s) = rest(10);
        let h = PcHistory::bootstrap(&s, &g, 1e-2, &cfg());
        let (next, rec, _) = step_pc(&h, &s, &g, 1e-2, &cfg()).unwrap();
        assert_eq!(next.rho, s.rho);
        assert_eq!(next.p, s.p);
        assert_eq!(next.u, s.u);
        assert!(rec.s.iter().all(|&v| v == 0.0));
        assert!(rec.zeta.iter().all(|&z| z == 1.0));
        assert_eq!(rec.picard_iters, 1);
    }

    #[test]
    fn zeta_is_the_root_of_the_density_ratio() {
        let (g, mut s) = rest(6);
        s.rho = vec![4.0; 6];
        s.close(1.4);
        let h = PcHistory::new(vec![1.0; 6], 1e-3);
        let pred = predict_velocity(&h, &s, &g, 1e-3, &cfg()).unwrap();
        for i in 1..6 {
            assert_relative_eq!(pred.zeta[i], 2.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn single_face_prediction_by_hand() {
        // one unknown: (|D|/dt) rho u = -(p_R - p_L), |D| = 0.5
        let g = build_uniform_grid(0.0, 1.0, 2).unwrap();
        let s = init_riemann(&g, Primitive::new(1.0, 0.0, 2.0), Primitive::new(1.0, 0.0, 1.0), 0.5, 1.4).unwrap();
        let h = PcHistory::bootstrap(&s, &g, 0.01, &cfg());
        let pred = predict_velocity(&h, &s, &g, 0.01, &cfg()).unwrap();
        assert_relative_eq!(pred.u_tilde[1], 0.02, max_relative = 1e-14);
        assert_eq!(pred.zeta[1], 1.0);
    }

    #[test]
    fn corrective_source_by_hand() {
        // unit cells, rho_dual = 2, du = 0.1, dt = 0.01: face value 1.0 split in halves
        let g = build_uniform_grid(0.0, 2.0, 2).unwrap();
        let s = corrective_source_pc(&[0.0, 0.1, 0.0], &[0.0, 0.0, 0.0], &[2.0, 2.0, 2.0], &g, 0.01);
        assert_relative_eq!(s[0], 0.5, max_relative = 1e-14);
        assert_relative_eq!(s[1], 0.5, max_relative = 1e-14);
        let z = corrective_source_pc(&[0.0, 0.3, 0.0], &[0.0, 0.3, 0.0], &[2.0, 2.0, 2.0], &g, 0.01);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropping_the_source_zeroes_it() {
        let (g, s) = sod(40);
        let mut c = cfg();
        c.corrective_source = false;
        let h = PcHistory::bootstrap(&s, &g, 1e-3, &c);
        let (_, rec, _) = step_pc(&h, &s, &g, 1e-3, &c).unwrap();
        assert!(rec.s.iter().all(|&v| v == 0.0));
    }

    /// Runs `steps` steps and checks mass, positivity, the source sign and
    /// the energy budget `IE + KE(rho_dual^{n-1}, u^n) + sum dt R2`.
    fn run_and_check(c: &SchemeConfig<f64>, n: usize, steps: usize, cfl: f64) {
        let (g, mut s) = sod(n);
        let dt = cfl * advective_dt_limit(&s, &g, 1.4);
        let mut hist = PcHistory::bootstrap(&s, &g, dt, c);
        let (m0, _) = totals(&s, &g);
        let ke = |rho_prev: &[f64], u: &[f64]| kinetic_energy(&dual_density(rho_prev, &g), u, &g);
        let w0 = internal_energy(&s, &g) + ke(&hist.prev_rho, &s.u);
        let mut acc = 0.0;
        for step in 0..steps {
            let (next, rec, h2) = step_pc(&hist, &s, &g, dt, c).unwrap();
            assert!(next.min_density() > 0.0 && next.min_energy() > 0.0, "step {step}");
            assert!(rec.s.iter().all(|&v| v >= 0.0));
            assert!(rec.zeta.iter().all(|&z| z > 0.0));
            assert!(relative_mass_residual(&s, &next, &rec.flux, &g, dt) <= c.picard_tol);
            let (m, _) = totals(&next, &g);
            assert!(((m - m0) / m0).abs() < 1e-12);
            acc += dt * rec.r2;
            let w = internal_energy(&next, &g) + ke(&s.rho, &next.u) + acc;
            let tol = c.picard_tol * (step + 1) as f64 * w0 * 10.0;
            assert!((w - w0).abs() <= tol.max(1e-12 * w0), "step {step}: drift {}", (w - w0) / w0);
            hist = h2;
            s = next;
        }
    }

    #[test]
    fn sod_upwind_keeps_positivity_mass_and_energy() {
        run_and_check(&cfg(), 100, 50, 0.5);
    }

    #[test]
    fn sod_upwind_large_steps() {
        run_and_check(&cfg(), 100, 10, 5.0);
    }

    #[test]
    fn sod_muscl_keeps_positivity_mass_and_energy() {
        let mut c = cfg();
        c.reconstruction = Reconstruction::Muscl;
        run_and_check(&c, 100, 50, 0.5);
    }

    #[test]
    fn kinetic_energy_identity_per_dual_cell() {
        // u_tilde times the prediction equation splits into a kinetic energy
        // balance and the remainder; each term is evaluated independently here
        let (g, s0) = sod(30);
        let c = cfg();
        let dt = 0.5 * advective_dt_limit(&s0, &g, 1.4);
        let h0 = PcHistory::bootstrap(&s0, &g, dt, &c);
        let (s, _, hist) = step_pc(&h0, &s0, &g, dt, &c).unwrap();
        let pred = predict_velocity(&hist, &s, &g, dt, &c).unwrap();
        let f = assemble_mass_fluxes(&s, &g, Reconstruction::Upwind, 1.4).f_primal;
        let gd: Vec<f64> = (0..30).map(|k| 0.5 * (f[k] + f[k + 1])).collect();
        let rd: Vec<f64> = (0..=30).map(|i| if i == 0 { s.rho[0] } else if i == 30 { s.rho[29] } else { 0.5 * (s.rho[i - 1] + s.rho[i]) }).collect();
        let rp: Vec<f64> = (0..=30)
            .map(|i| if i == 0 { hist.prev_rho[0] } else if i == 30 { hist.prev_rho[29] } else { 0.5 * (hist.prev_rho[i - 1] + hist.prev_rho[i]) })
            .collect();
        let ut = &pred.u_tilde;
        let up = |k: usize| if gd[k] >= 0.0 { ut[k] } else { ut[k + 1] };
        let d = g.cell_width;
        for i in 1..30 {
            let zeta = (rd[i] / rp[i]).sqrt();
            let grad = zeta * (s.p[i] - s.p[i - 1]);
            let eq = d / dt * (rd[i] * ut[i] - rp[i] * s.u[i]) + gd[i] * up(i) - gd[i - 1] * up(i - 1) + grad;
            assert!(eq.abs() < 1e-10 * (d / dt * rd[i] * ut[i].abs() + grad.abs() + 1.0));
            let ke_time = d / (2.0 * dt) * (rd[i] * ut[i] * ut[i] - rp[i] * s.u[i] * s.u[i]);
            let ke_flux = 0.5 * gd[i] * up(i) * up(i) - 0.5 * gd[i - 1] * up(i - 1) * up(i - 1);
            let r1 = d / (2.0 * dt) * rp[i] * (ut[i] - s.u[i]).powi(2);
            let diss = -0.5 * gd[i] * (ut[i] - up(i)).powi(2) + 0.5 * gd[i - 1] * (ut[i] - up(i - 1)).powi(2);
            let mass = d / dt * (rd[i] - rp[i]) + gd[i] - gd[i - 1];
            let lhs = ut[i] * eq;
            let rhs = ke_time + ke_flux + grad * ut[i] + r1 + diss + 0.5 * ut[i] * ut[i] * mass;
            let scale = ke_time.abs() + ke_flux.abs() + (grad * ut[i]).abs() + r1 + diss.abs() + 1e-300;
            assert!((lhs - rhs).abs() <= 1e-11 * scale, "face {i}: {} vs {}", lhs, rhs);
            assert!(mass.abs() < 1e-11 * (d / dt * rd[i]));
        }
    }

    #[test]
    fn pressure_jacobian_matches_finite_differences() {
        let (g, s) = sod(8);
        let c = cfg();
        let dt = 3.0 * advective_dt_limit(&s, &g, 1.4);
        let h = PcHistory::bootstrap(&s, &g, dt, &c);
        let pred = predict_velocity(&h, &s, &g, dt, &c).unwrap();
        let cc: Vec<f64> = (0..=8).map(|i| if i == 0 || i == 8 { 0.0 } else { dt / (pred.rho_dual[i] * g.dual_measure(i)) }).collect();
        let sys = PressureSystem { grid: &g, state: &s, pred: &pred, dt, gamma: 1.4, c: cc, d_e: (0..9).map(|i| 0.01 * i as f64).collect() };
        // an arbitrary positive pressure, with a nonzero reconstruction defect
        let p: Vec<f64> = (0..8).map(|k| 0.5 + 0.1 * k as f64).collect();
        let (r, u) = sys.residual(&p);
        let (lo, di, up) = sys.jacobian(&p, &u);
        for j in 0..8 {
            let mut q = p.clone();
            q[j] += 1e-7;
            let (r2, _) = sys.residual(&q);
            for k in 0..8 {
                let fd = (r2[k] - r[k]) / 1e-7;
                let an = if k == j { di[k] } else if k + 1 == j { up[k] } else if j + 1 == k { lo[j] } else { 0.0 };
                assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "J[{k}][{j}]: {fd} vs {an}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn positivity_at_ten_times_the_advective_step(
            cells in proptest::collection::vec((0.1f64..5.0, 0.1f64..5.0), 4..24),
            vel in proptest::collection::vec(-2.0f64..2.0, 24),
            frac in 0.1f64..10.0,
        ) {
            let n = cells.len();
            let g = build_uniform_grid(0.0, 1.0, n).unwrap();
            let mut u: Vec<f64> = vel[..=n].to_vec();
            u[0] = 0.0;
            u[n] = 0.0;
            let mut s = State {
                rho: cells.iter().map(|c| c.0).collect(),
                e: cells.iter().map(|c| c.1).collect(),
                p: vec![0.0; n],
                u,
                time: 0.0,
            };
            s.close(1.4);
            let c = cfg();
            let dt = frac * advective_dt_limit(&s, &g, 1.4);
            let h = PcHistory::bootstrap(&s, &g, dt, &c);
            let (next, rec, _) = step_pc(&h, &s, &g, dt, &c).unwrap();
            prop_assert!(next.min_density() > 0.0);
            prop_assert!(next.min_energy() > 0.0);
            prop_assert!(rec.s.iter().all(|&v| v >= 0.0));
        }
    }
}

//! Explicit segregated scheme.
//!
//! One step updates, in this order: density with time-`n` upwind (or
//! limited) fluxes; internal energy with the same fluxes, the time-`n`
//! pressure work and the corrective source; pressure through the equation of
//! state; velocity on the dual mesh with time-`n` upwind convection and the
//! new pressure gradient.
//!
//! The corrective source is lagged by one step: the kinetic energy remainder
//! of the momentum update of step `n` feeds the internal energy balance of
//! step `n + 1`, where it meets the matching pressure work. With a constant
//! time step, `IE^{n+1} + KE^n` is then conserved exactly.

use crate::error::{Error, Result};
use crate::flux::{assemble_mass_fluxes, dual_density, FluxSet};
use crate::grid::{mesh_metrics, Grid};
use crate::kinetic::{dispatch, dual_upwind, upwind_dissipation, wall_strips};
use crate::real::Real;
use crate::state::{SchemeConfig, Stabilization, State};

#[derive(Debug, Clone, PartialEq)]
pub struct ExpStepRecord<T: Real> {
    /// Kinetic energy remainder of this step's momentum update, per cell;
    /// it is the source of the next step.
    pub s: Vec<T>,
    /// Source applied in this step's internal energy balance.
    pub applied_source: Vec<T>,
    /// `dt` over the advective limit.
    pub cfl_used: T,
    /// Kinetic energy removed by the stabilization term.
    pub stabilization_energy: T,
    /// Time-`n` fluxes used by the mass and energy updates.
    pub flux: FluxSet<T>,
}

/// `min |K| / max (|u| + c)` over cells.
pub fn advective_dt_limit<T: Real>(state: &State<T>, grid: &Grid<T>, gamma: T) -> T {
    let c = state.sound_speed(gamma);
    let mut best = T::infinity();
    for k in 0..grid.n_cells {
        let speed = state.u[k].abs().max(state.u[k + 1].abs()) + c[k];
        if speed > T::zero() {
            best = best.min(grid.cell_measure(k) / speed);
        }
    }
    best
}

/// `h_M^alpha (g_i - g_{i-1})` with `g_k = |Du_k|^{q-2} Du_k`, `Du_k = (u_{k+1} - u_k)/|K|`.
pub fn stabilization_term<T: Real>(u: &[T], grid: &Grid<T>, q: T, alpha: T) -> Result<Vec<T>> {
    let stab = Stabilization::new(q, alpha)?;
    let n = grid.n_cells;
    let scale = mesh_metrics(grid).h_m.powf(stab.alpha);
    let g: Vec<T> = (0..n)
        .map(|k| {
            let du = (u[k + 1] - u[k]) / grid.cell_measure(k);
            if du == T::zero() {
                T::zero()
            } else {
                du.abs().powf(stab.q - T::two()) * du
            }
        })
        .collect();
    Ok((0..=n)
        .map(|i| if grid.is_boundary_face(i) { T::zero() } else { scale * (g[i] - g[i - 1]) })
        .collect())
}

/// Per-cell kinetic energy remainder of an explicit momentum update from
/// `state_old` (velocity `u^n`) to `u_new`, excluding stabilization.
pub fn corrective_source_explicit<T: Real>(
    state_old: &State<T>,
    u_new: &[T],
    flux: &FluxSet<T>,
    grid: &Grid<T>,
    dt: T,
) -> Vec<T> {
    let n = grid.n_cells;
    let g = &flux.f_dual;
    let u = &state_old.u;
    let mut face = vec![T::zero(); n + 1];
    for i in grid.interior_faces() {
        let d = u_new[i] - u[i];
        face[i] = grid.dual_measure(i) / (T::two() * dt) * flux.rho_dual[i] * d * d
            + upwind_dissipation(u_new[i], u, g, i);
    }
    dispatch(&face, wall_strips(u, g), grid)
}

/// One explicit step. `source` is the remainder returned by the previous
/// step (zeros for the first one).
pub fn step_explicit<T: Real>(
    state: &State<T>,
    source: &[T],
    grid: &Grid<T>,
    dt: T,
    cfg: &SchemeConfig<T>,
) -> Result<(State<T>, ExpStepRecord<T>)> {
    let n = grid.n_cells;
    let gamma = cfg.gamma;
    if source.len() != n || state.n_cells() != n {
        return Err(Error::Precondition("state and source must match the grid".into()));
    }
    if !(dt > T::zero()) {
        return Err(Error::Precondition(format!("time step must be positive, got {dt}")));
    }
    let limit = advective_dt_limit(state, grid, gamma);
    let required = cfg.cfl_fraction * limit;
    if dt > required * (T::one() + T::lit(1e-12)) {
        return Err(Error::Cfl { dt: dt.f64(), required: required.f64() });
    }

    let flux = assemble_mass_fluxes(state, grid, cfg.reconstruction, gamma);
    let f = &flux.f_primal;
    let applied: Vec<T> = if cfg.corrective_source { source.to_vec() } else { vec![T::zero(); n] };

    let mut next = state.clone();
    next.time = state.time + dt;
    for k in 0..n {
        let r = dt / grid.cell_measure(k);
        let rho = state.rho[k] - r * (f[k + 1] - f[k]);
        let energy_flux = f[k + 1] * flux.e_face[k + 1] - f[k] * flux.e_face[k];
        let work = state.p[k] * (state.u[k + 1] - state.u[k]);
        let rho_e = state.rho[k] * state.e[k] - r * (energy_flux + work) + dt * applied[k];
        if !(rho > T::zero()) || !(rho_e > T::zero()) {
            return Err(Error::Numerical(format!(
                "explicit update lost positivity in cell {k} (rho = {rho}, rho e = {rho_e})"
            )));
        }
        next.rho[k] = rho;
        next.e[k] = rho_e / rho;
    }
    next.close(gamma);

    let stab = match cfg.stabilization {
        Some(s) => Some(stabilization_term(&state.u, grid, s.q, s.alpha)?),
        None => None,
    };
    let rho_dual_new = dual_density(&next.rho, grid);
    let g = &flux.f_dual;
    for i in grid.interior_faces() {
        let d = grid.dual_measure(i);
        let conv = g[i] * dual_upwind(&state.u, g, i) - g[i - 1] * dual_upwind(&state.u, g, i - 1);
        let mut rhs = d / dt * flux.rho_dual[i] * state.u[i] - conv - (next.p[i] - next.p[i - 1]);
        if let Some(s) = &stab {
            rhs = rhs + s[i];
        }
        next.u[i] = rhs / (d / dt * rho_dual_new[i]);
    }
    next.u[0] = T::zero();
    next.u[n] = T::zero();

    let stabilization_energy = match &stab {
        Some(s) => -dt * (0..=n).fold(T::zero(), |acc, i| acc + next.u[i] * s[i]),
        None => T::zero(),
    };
    let s = corrective_source_explicit(state, &next.u, &flux, grid, dt);
    let record = ExpStepRecord { s, applied_source: applied, cfl_used: dt / limit, stabilization_energy, flux };
    Ok((next, record))
}

//! Discrete unknowns at one time level, the ideal-gas closure and global totals.

use crate::error::{Error, Result};
use crate::flux::dual_density;
use crate::grid::Grid;
use crate::real::Real;

/// Cell unknowns `rho`, `e`, `p` and rightward face velocity `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct State<T: Real> {
    pub rho: Vec<T>,
    pub e: Vec<T>,
    pub p: Vec<T>,
    pub u: Vec<T>,
    pub time: T,
}

/// Primitive triple used for Riemann data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive<T: Real> {
    pub rho: T,
    pub u: T,
    pub p: T,
}

impl<T: Real> Primitive<T> {
    pub fn new(rho: T, u: T, p: T) -> Self {
        Primitive { rho, u, p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    PressureCorrection,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reconstruction {
    Upwind,
    Muscl,
}

/// Nonlinear momentum stabilization `h^alpha * Delta_q u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stabilization<T: Real> {
    pub q: T,
    pub alpha: T,
}

impl<T: Real> Stabilization<T> {
    pub fn new(q: T, alpha: T) -> Result<Self> {
        if !(q >= T::two()) {
            return Err(Error::Config(format!("stabilization exponent q must be >= 2, got {q}")));
        }
        if !(alpha > T::zero()) {
            return Err(Error::Config(format!("stabilization exponent alpha must be > 0, got {alpha}")));
        }
        if !(alpha < q - T::one()) {
            return Err(Error::Config(format!(
                "stabilization requires alpha < q - 1, got q = {q}, alpha = {alpha}"
            )));
        }
        Ok(Stabilization { q, alpha })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig<T: Real> {
    pub gamma: T,
    pub scheme: SchemeKind,
    pub reconstruction: Reconstruction,
    pub cfl_fraction: T,
    pub end_time: T,
    pub stabilization: Option<Stabilization<T>>,
    pub picard_tol: T,
    pub picard_max_iter: usize,
    /// When false the corrective source in the internal energy balance is dropped.
    pub corrective_source: bool,
}

impl<T: Real> SchemeConfig<T> {
    pub fn new(scheme: SchemeKind) -> Self {
        SchemeConfig {
            gamma: T::lit(1.4),
            scheme,
            reconstruction: Reconstruction::Upwind,
            cfl_fraction: T::half(),
            end_time: T::zero(),
            stabilization: None,
            picard_tol: T::lit(1e-10),
            picard_max_iter: 100,
            corrective_source: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > T::one()) {
            return Err(Error::Config(format!("gamma must exceed 1, got {}", self.gamma)));
        }
        if !(self.cfl_fraction > T::zero() && self.cfl_fraction <= T::one()) {
            return Err(Error::Config(format!("cfl fraction must lie in (0, 1], got {}", self.cfl_fraction)));
        }
        if !(self.end_time >= T::zero()) {
            return Err(Error::Config(format!("end time must be non-negative, got {}", self.end_time)));
        }
        if !(self.picard_tol > T::zero()) || self.picard_max_iter == 0 {
            return Err(Error::Config("pressure iteration needs a positive tolerance and iteration cap".into()));
        }
        if let Some(s) = self.stabilization {
            Stabilization::new(s.q, s.alpha)?;
        }
        Ok(())
    }
}

/// `p = (gamma - 1) rho e`.
pub fn eos_pressure<T: Real>(rho: T, e: T, gamma: T) -> Result<T> {
    if !(rho > T::zero()) || !(e > T::zero()) || !(gamma > T::one()) {
        return Err(Error::Domain(format!(
            "pressure needs rho > 0, e > 0, gamma > 1; got rho = {rho}, e = {e}, gamma = {gamma}"
        )));
    }
    Ok((gamma - T::one()) * rho * e)
}

/// `e = p / ((gamma - 1) rho)`.
pub fn eos_energy_from_pressure<T: Real>(rho: T, p: T, gamma: T) -> Result<T> {
    if !(rho > T::zero()) {
        return Err(Error::Domain(format!("energy needs rho > 0, got {rho}")));
    }
    if !(p >= T::zero()) || !(gamma > T::one()) {
        return Err(Error::Domain(format!("energy needs p >= 0 and gamma > 1; got p = {p}, gamma = {gamma}")));
    }
    Ok(p / ((gamma - T::one()) * rho))
}

/// Piecewise constant Riemann data with the jump at `x0`.
pub fn init_riemann<T: Real>(
    grid: &Grid<T>,
    left: Primitive<T>,
    right: Primitive<T>,
    x0: T,
    gamma: T,
) -> Result<State<T>> {
    if !(x0 > grid.domain_left && x0 < grid.domain_right) {
        return Err(Error::Config(format!(
            "discontinuity position {x0} lies outside ({}, {})",
            grid.domain_left, grid.domain_right
        )));
    }
    for (side, s) in [("left", left), ("right", right)] {
        if !(s.rho > T::zero()) || !(s.p > T::zero()) {
            return Err(Error::Config(format!("{side} state needs positive density and pressure")));
        }
    }
    let mut rho = Vec::with_capacity(grid.n_cells);
    let mut e = Vec::with_capacity(grid.n_cells);
    let mut p = Vec::with_capacity(grid.n_cells);
    for &x in &grid.cell_centers {
        let s = if x < x0 { left } else { right };
        let ek = eos_energy_from_pressure(s.rho, s.p, gamma)?;
        rho.push(s.rho);
        e.push(ek);
        p.push(eos_pressure(s.rho, ek, gamma)?);
    }
    let u = grid
        .face_positions
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if grid.is_boundary_face(i) {
                T::zero()
            } else if x < x0 {
                left.u
            } else if x > x0 {
                right.u
            } else {
                T::half() * (left.u + right.u)
            }
        })
        .collect();
    Ok(State { rho, e, p, u, time: T::zero() })
}

impl<T: Real> State<T> {
    pub fn n_cells(&self) -> usize {
        self.rho.len()
    }

    /// Recompute `p` from `rho` and `e`.
    pub fn close(&mut self, gamma: T) {
        for k in 0..self.rho.len() {
            self.p[k] = (gamma - T::one()) * self.rho[k] * self.e[k];
        }
    }

    pub fn min_density(&self) -> T {
        self.rho.iter().fold(T::infinity(), |m, &v| m.min(v))
    }

    pub fn min_energy(&self) -> T {
        self.e.iter().fold(T::infinity(), |m, &v| m.min(v))
    }

    pub fn is_positive(&self) -> bool {
        self.rho.iter().chain(self.e.iter()).all(|&v| v > T::zero() && v.is_finite())
    }

    /// Sound speed `sqrt(gamma p / rho)` per cell.
    pub fn sound_speed(&self, gamma: T) -> Vec<T> {
        self.rho.iter().zip(&self.p).map(|(&r, &p)| (gamma * p.max(T::zero()) / r).sqrt()).collect()
    }

    /// Face velocity averaged to cell centers (output only).
    pub fn cell_velocity(&self) -> Vec<T> {
        self.u.windows(2).map(|w| T::half() * (w[0] + w[1])).collect()
    }
}

/// Internal energy `sum |K| rho e`.
pub fn internal_energy<T: Real>(state: &State<T>, grid: &Grid<T>) -> T {
    (0..grid.n_cells).fold(T::zero(), |acc, k| acc + grid.cell_measure(k) * state.rho[k] * state.e[k])
}

/// Dual kinetic energy `sum ½ |D| rho_D u²` for a given dual density.
pub fn kinetic_energy<T: Real>(rho_dual: &[T], u: &[T], grid: &Grid<T>) -> T {
    (0..grid.n_faces()).fold(T::zero(), |acc, i| {
        acc + T::half() * grid.dual_measure(i) * rho_dual[i] * u[i] * u[i]
    })
}

/// Total mass and total energy (internal plus dual kinetic).
pub fn totals<T: Real>(state: &State<T>, grid: &Grid<T>) -> (T, T) {
    let mass = (0..grid.n_cells).fold(T::zero(), |acc, k| acc + grid.cell_measure(k) * state.rho[k]);
    let rho_dual = dual_density(&state.rho, grid);
    let energy = internal_energy(state, grid) + kinetic_energy(&rho_dual, &state.u, grid);
    (mass, energy)
}

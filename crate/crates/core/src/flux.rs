//! Face reconstruction of density and internal energy, primal mass fluxes and
//! the dual-mesh density and flux used by momentum convection.
//!
//! All face arrays have `n_cells + 1` entries; the wall entries carry a zero
//! flux and the adjacent cell value. Dual fluxes are stored per cell: entry
//! `k` is the flux through the dual face located at the center of cell `k`.

use crate::entropy::{x_kl, Phi};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::real::Real;
use crate::state::{Reconstruction, State};

#[derive(Debug, Clone, PartialEq)]
pub struct FluxSet<T: Real> {
    pub rho_face: Vec<T>,
    pub e_face: Vec<T>,
    pub f_primal: Vec<T>,
    pub rho_dual: Vec<T>,
    pub f_dual: Vec<T>,
    pub reconstruction: Reconstruction,
}

/// `z_K` when `u_face >= 0`, else `z_L`.
pub fn upwind_face_value<T: Real>(z_k: T, z_l: T, u_face: T) -> T {
    if u_face >= T::zero() {
        z_k
    } else {
        z_l
    }
}

pub fn minmod<T: Real>(a: T, b: T) -> T {
    if a * b <= T::zero() {
        T::zero()
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Limited linear reconstruction from the upwind cell, clamped between the
/// upwind value and `z_kl`.
///
/// `stencil` holds the cells `(i-2, i-1, i, i+1)` around face `i`; a missing
/// neighbour at a wall is replaced by the nearest cell value.
pub fn muscl_face_value<T: Real>(stencil: [T; 4], u_face: T, z_kl: T) -> T {
    let [zm, zk, zl, zp] = stencil;
    let (upwind, candidate) = if u_face >= T::zero() {
        (zk, zk + T::half() * minmod(zk - zm, zl - zk))
    } else {
        (zl, zl - T::half() * minmod(zl - zk, zp - zl))
    };
    let (lo, hi) = if upwind <= z_kl { (upwind, z_kl) } else { (z_kl, upwind) };
    candidate.max(lo).min(hi)
}

/// Volume-weighted dual density; a wall face takes its adjacent cell value.
pub fn dual_density<T: Real>(rho: &[T], grid: &Grid<T>) -> Vec<T> {
    let n = grid.n_cells;
    (0..=n)
        .map(|i| {
            if i == 0 {
                rho[0]
            } else if i == n {
                rho[n - 1]
            } else {
                let (hk, hl) = (grid.cell_measure(i - 1), grid.cell_measure(i));
                (hk * rho[i - 1] + hl * rho[i]) / (T::two() * grid.dual_measure(i))
            }
        })
        .collect()
}

/// Dual flux at each cell center: mean of the cell's two primal fluxes.
pub fn dual_fluxes<T: Real>(f_primal: &[T]) -> Vec<T> {
    f_primal.windows(2).map(|w| T::half() * (w[0] + w[1])).collect()
}

fn padded<T: Real>(z: &[T], i: usize) -> [T; 4] {
    let n = z.len();
    let k = z[i - 1];
    let l = z[i];
    let m = if i >= 2 { z[i - 2] } else { k };
    let p = if i + 1 < n { z[i + 1] } else { l };
    [m, k, l, p]
}

/// Face values of one cell field for every face.
pub fn reconstruct<T: Real>(z: &[T], u: &[T], reconstruction: Reconstruction, phi: Phi<T>) -> Vec<T> {
    let n = z.len();
    (0..=n)
        .map(|i| {
            if i == 0 {
                z[0]
            } else if i == n {
                z[n - 1]
            } else {
                match reconstruction {
                    Reconstruction::Upwind => upwind_face_value(z[i - 1], z[i], u[i]),
                    Reconstruction::Muscl => {
                        let zkl = x_kl(phi, z[i - 1], z[i]);
                        muscl_face_value(padded(z, i), u[i], zkl)
                    }
                }
            }
        })
        .collect()
}

/// `F_i = rho_face_i u_i`, zero on the walls.
pub fn primal_fluxes<T: Real>(rho_face: &[T], u: &[T]) -> Vec<T> {
    let n = u.len() - 1;
    (0..=n)
        .map(|i| if i == 0 || i == n { T::zero() } else { rho_face[i] * u[i] })
        .collect()
}

pub fn assemble_mass_fluxes<T: Real>(
    state: &State<T>,
    grid: &Grid<T>,
    reconstruction: Reconstruction,
    gamma: T,
) -> FluxSet<T> {
    let rho_face = reconstruct(&state.rho, &state.u, reconstruction, Phi::Rho);
    let e_face = reconstruct(&state.e, &state.u, reconstruction, Phi::Energy(gamma));
    let f_primal = primal_fluxes(&rho_face, &state.u);
    let f_dual = dual_fluxes(&f_primal);
    FluxSet {
        rho_face,
        e_face,
        rho_dual: dual_density(&state.rho, grid),
        f_primal,
        f_dual,
        reconstruction,
    }
}

/// Discrete mass balance residual per cell: `(|K|/dt)(rho' - rho) + F_R - F_L`.
pub fn mass_residual<T: Real>(rho_old: &[T], rho_new: &[T], f_primal: &[T], grid: &Grid<T>, dt: T) -> Vec<T> {
    (0..grid.n_cells)
        .map(|k| grid.cell_measure(k) / dt * (rho_new[k] - rho_old[k]) + f_primal[k + 1] - f_primal[k])
        .collect()
}

/// Mass balance on each dual cell with the dual density and flux built from
/// `flux_old`; vanishes when the primal mass balance holds.
pub fn dual_mass_balance_residual<T: Real>(
    flux_old: &FluxSet<T>,
    state_old: &State<T>,
    state_new: &State<T>,
    grid: &Grid<T>,
    dt: T,
) -> Result<Vec<T>> {
    let n = grid.n_cells;
    if state_old.n_cells() != n || state_new.n_cells() != n || flux_old.f_dual.len() != n {
        return Err(Error::Precondition("states and fluxes must match the grid".into()));
    }
    let old = dual_density(&state_old.rho, grid);
    let new = dual_density(&state_new.rho, grid);
    let g = &flux_old.f_dual;
    Ok((0..=n)
        .map(|i| {
            let right = if i < n { g[i] } else { T::zero() };
            let left = if i > 0 { g[i - 1] } else { T::zero() };
            grid.dual_measure(i) / dt * (new[i] - old[i]) + right - left
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_uniform_grid;
    use proptest::prelude::*;

    fn state(rho: Vec<f64>, u: Vec<f64>) -> State<f64> {
        let n = rho.len();
        State { e: vec![1.0; n], p: rho.iter().map(|r| 0.4 * r).collect(), rho, u, time: 0.0 }
    }

    #[test]
    fn upwind_examples() {
        assert_eq!(upwind_face_value(2.0, 5.0, 1.0), 2.0);
        assert_eq!(upwind_face_value(2.0, 5.0, -1.0), 5.0);
        assert_eq!(upwind_face_value(2.0, 5.0, 0.0), 2.0);
    }

    #[test]
    fn muscl_constant_stencil() {
        assert_eq!(muscl_face_value([3.0; 4], 1.0, 3.0), 3.0);
        assert_eq!(muscl_face_value([3.0; 4], -1.0, 3.0), 3.0);
    }

    #[test]
    fn muscl_clamps_to_admissible_interval() {
        // candidate 1 + 0.5 * minmod(1, 4) = 1.5, interval [1, 1.2]
        assert_eq!(muscl_face_value([0.0, 1.0, 5.0, 6.0], 1.0, 1.2), 1.2);
        // negative velocity: candidate 5 - 0.5 * minmod(4, 1) = 4.5, interval [4.8, 5]
        assert_eq!(muscl_face_value([0.0, 1.0, 5.0, 6.0], -1.0, 4.8), 4.8);
    }

    #[test]
    fn muscl_linear_data_gives_the_midpoint() {
        // values at cell centers x = 0.5, 1.5, 2.5, 3.5 of z = x; face at x = 2
        let stencil: [f64; 4] = [0.5, 1.5, 2.5, 3.5];
        let zkl = x_kl(Phi::Square, 1.5, 2.5);
        assert_eq!(zkl, 2.0);
        for u in [1.0, -1.0] {
            let v = muscl_face_value(stencil, u, zkl);
            assert!((v - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn muscl_at_extremum_falls_back_to_upwind() {
        assert_eq!(muscl_face_value([1.0, 3.0, 2.0, 2.5], 1.0, 2.5), 3.0);
    }

    #[test]
    fn uniform_advection_flux() {
        let g = build_uniform_grid(0.0, 1.0, 5).unwrap();
        let s = state(vec![1.0; 5], vec![0.0, 0.7, 0.7, 0.7, 0.7, 0.0]);
        let f = assemble_mass_fluxes(&s, &g, Reconstruction::Upwind, 1.4);
        assert_eq!(f.f_primal, vec![0.0, 0.7, 0.7, 0.7, 0.7, 0.0]);
        let m = assemble_mass_fluxes(&s, &g, Reconstruction::Muscl, 1.4);
        assert_eq!(m.f_primal, f.f_primal);
    }

    #[test]
    fn rest_gives_zero_fluxes() {
        let g = build_uniform_grid(0.0, 1.0, 3).unwrap();
        let s = state(vec![1.0, 2.0, 3.0], vec![0.0; 4]);
        let f = assemble_mass_fluxes(&s, &g, Reconstruction::Upwind, 1.4);
        assert!(f.f_primal.iter().chain(&f.f_dual).all(|&v| v == 0.0));
    }

    #[test]
    fn two_cell_flux() {
        let g = build_uniform_grid(0.0, 1.0, 2).unwrap();
        let s = state(vec![1.0, 2.0], vec![0.0, 3.0, 0.0]);
        let f = assemble_mass_fluxes(&s, &g, Reconstruction::Upwind, 1.4);
        assert_eq!(f.f_primal[1], 3.0);
        assert_eq!(f.f_dual, vec![1.5, 1.5]);
        assert_eq!(f.rho_dual, vec![1.0, 1.5, 2.0]);
    }

    #[test]
    fn mismatched_states_leave_a_dual_residual() {
        let g = build_uniform_grid(0.0, 1.0, 4).unwrap();
        let old = state(vec![1.0; 4], vec![0.0, 1.0, 1.0, 1.0, 0.0]);
        let new = state(vec![1.0, 1.1, 1.0, 1.0], old.u.clone());
        let f = assemble_mass_fluxes(&old, &g, Reconstruction::Upwind, 1.4);
        let r = dual_mass_balance_residual(&f, &old, &new, &g, 0.01).unwrap();
        assert!(r.iter().any(|v| v.abs() > 1.0));
    }

    fn face_velocity(raw: &[f64]) -> Vec<f64> {
        let mut u = raw.to_vec();
        u[0] = 0.0;
        let n = u.len() - 1;
        u[n] = 0.0;
        u
    }

    proptest! {
        #[test]
        fn dual_balance_follows_primal_balance(
            cells in proptest::collection::vec((0.1f64..10.0, 0.1f64..5.0, -3.0f64..3.0), 3..40),
            dt in 1e-4f64..1e-2,
            muscl in any::<bool>(),
        ) {
            let n = cells.len();
            let g = build_uniform_grid(0.0, 1.0, n).unwrap();
            let mut raw: Vec<f64> = cells.iter().map(|c| c.2).collect();
            raw.push(0.0);
            let u = face_velocity(&raw);
            let old = State {
                rho: cells.iter().map(|c| c.0).collect(),
                e: cells.iter().map(|c| c.1).collect(),
                p: cells.iter().map(|c| 0.4 * c.0 * c.1).collect(),
                u,
                time: 0.0,
            };
            let recon = if muscl { Reconstruction::Muscl } else { Reconstruction::Upwind };
            let f = assemble_mass_fluxes(&old, &g, recon, 1.4);
            let mut new = old.clone();
            for k in 0..n {
                new.rho[k] = old.rho[k] - dt / g.cell_measure(k) * (f.f_primal[k + 1] - f.f_primal[k]);
            }
            let r = dual_mass_balance_residual(&f, &old, &new, &g, dt).unwrap();
            let rho_max = old.rho.iter().fold(0.0f64, |m, v| m.max(*v));
            let f_max = f.f_primal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = f_max + rho_max * g.cell_width / dt;
            for v in r {
                prop_assert!(v.abs() <= 1e-12 * scale);
            }
            let m_old: f64 = old.rho.iter().sum();
            let m_new: f64 = new.rho.iter().sum();
            prop_assert!((m_new - m_old).abs() <= 1e-13 * m_old * n as f64);
        }

        #[test]
        fn face_values_stay_in_the_neighbour_hull(
            cells in proptest::collection::vec((1e-3f64..1e3, 1e-3f64..1e3, -5.0f64..5.0), 2..30),
            muscl in any::<bool>(),
        ) {
            let n = cells.len();
            let g = build_uniform_grid(0.0, 1.0, n).unwrap();
            let mut raw: Vec<f64> = cells.iter().map(|c| c.2).collect();
            raw.push(0.0);
            let s = State {
                rho: cells.iter().map(|c| c.0).collect(),
                e: cells.iter().map(|c| c.1).collect(),
                p: cells.iter().map(|c| 0.4 * c.0 * c.1).collect(),
                u: face_velocity(&raw),
                time: 0.0,
            };
            let recon = if muscl { Reconstruction::Muscl } else { Reconstruction::Upwind };
            let f = assemble_mass_fluxes(&s, &g, recon, 1.4);
            for i in 1..n {
                for (z, face) in [(&s.rho, f.rho_face[i]), (&s.e, f.e_face[i])] {
                    let lo = z[i - 1].min(z[i]);
                    let hi = z[i - 1].max(z[i]);
                    prop_assert!(face >= lo && face <= hi);
                }
                prop_assert_eq!(f.f_primal[i], f.rho_face[i] * s.u[i]);
            }
            prop_assert_eq!(f.f_primal[0], 0.0);
            prop_assert_eq!(f.f_primal[n], 0.0);
        }

        #[test]
        fn muscl_with_upwind_candidate_is_upwind(zk in 0.1f64..10.0, zl in 0.1f64..10.0, u in -1.0f64..1.0) {
            // a stencil whose far neighbours make the limited slope vanish
            let stencil = if u >= 0.0 { [zk + (zl - zk), zk, zl, zl] } else { [zk, zk, zl, zl + (zk - zl)] };
            let zkl = x_kl(Phi::Rho, zk, zl);
            prop_assert_eq!(muscl_face_value(stencil, u, zkl), upwind_face_value(zk, zl, u));
        }
    }
}

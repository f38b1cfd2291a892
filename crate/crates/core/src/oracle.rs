//! Ground truth: exact Riemann solver for the ideal gas, Rankine-Hugoniot
//! residuals, named Riemann presets and a brute-force check of the discrete
//! renormalisation identity of the convection operator.

use crate::entropy::Phi;
use crate::error::{Error, Result};
use crate::flux::{mass_residual, FluxSet};
use crate::grid::Grid;
use crate::real::Real;
use crate::state::Primitive;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wave {
    Shock,
    Rarefaction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiemannSolution<T: Real> {
    pub left: Primitive<T>,
    pub right: Primitive<T>,
    pub gamma: T,
    pub p_star: T,
    pub u_star: T,
    pub left_wave: Wave,
    pub right_wave: Wave,
    pub rho_star_left: T,
    pub rho_star_right: T,
    pub newton_iterations: usize,
}

fn sound<T: Real>(s: Primitive<T>, gamma: T) -> T {
    (gamma * s.p / s.rho).sqrt()
}

/// Pressure function of one side and its derivative.
fn side_function<T: Real>(p: T, s: Primitive<T>, gamma: T) -> (T, T) {
    let g1 = gamma - T::one();
    let gp = gamma + T::one();
    if p > s.p {
        let a = T::two() / (gp * s.rho);
        let b = g1 / gp * s.p;
        let q = (a / (p + b)).sqrt();
        ((p - s.p) * q, q * (T::one() - (p - s.p) / (T::two() * (b + p))))
    } else {
        let c = sound(s, gamma);
        let z = g1 / (T::two() * gamma);
        let ratio = p / s.p;
        (
            T::two() * c / g1 * (ratio.powf(z) - T::one()),
            T::one() / (s.rho * c) * ratio.powf(-(gp / (T::two() * gamma))),
        )
    }
}

/// Star-region solution of the Riemann problem.
pub fn solve_riemann<T: Real>(left: Primitive<T>, right: Primitive<T>, gamma: T) -> Result<RiemannSolution<T>> {
    for (side, s) in [("left", left), ("right", right)] {
        if !(s.rho > T::zero()) || !(s.p > T::zero()) {
            return Err(Error::Domain(format!("{side} Riemann state needs positive density and pressure")));
        }
    }
    if !(gamma > T::one()) {
        return Err(Error::Domain(format!("gamma must exceed 1, got {gamma}")));
    }
    let g1 = gamma - T::one();
    let (cl, cr) = (sound(left, gamma), sound(right, gamma));
    let du = right.u - left.u;
    let margin = T::two() / g1 * (cl + cr) - du;
    if margin <= T::zero() {
        return Err(Error::Vacuum { deficit: (-margin).f64() });
    }
    let f = |p: T| {
        let (fl, dl) = side_function(p, left, gamma);
        let (fr, dr) = side_function(p, right, gamma);
        (fl + fr + du, dl + dr)
    };

    let z = g1 / (T::two() * gamma);
    let guess = ((cl + cr - T::half() * g1 * du) / (cl / left.p.powf(z) + cr / right.p.powf(z))).powf(T::one() / z);
    let mut lo = T::lit(1e-10);
    let mut hi = T::lit(10.0) * left.p.max(right.p);
    while f(hi).0 < T::zero() {
        hi = hi * T::lit(10.0);
        if !hi.is_finite() {
            return Err(Error::Numerical("no upper bracket for the star pressure".into()));
        }
    }
    if f(lo).0 > T::zero() {
        return Err(Error::Numerical("star pressure below the lower bracket".into()));
    }
    let mut p = if guess > lo && guess < hi { guess } else { T::half() * (lo + hi) };
    let tol = T::lit(1e-14);
    let mut iterations = 0;
    for it in 1..=200 {
        iterations = it;
        let (fp, dp) = f(p);
        if fp == T::zero() {
            break;
        }
        if fp < T::zero() {
            lo = p;
        } else {
            hi = p;
        }
        let newton = p - fp / dp;
        let next = if newton > lo && newton < hi && dp > T::zero() { newton } else { T::half() * (lo + hi) };
        let change = (next - p).abs() / (T::half() * (next + p));
        p = next;
        if change < tol {
            break;
        }
    }
    let (fl, _) = side_function(p, left, gamma);
    let (fr, _) = side_function(p, right, gamma);
    let u_star = T::half() * (left.u + right.u) + T::half() * (fr - fl);
    let gr = g1 / (gamma + T::one());
    let star_density = |s: Primitive<T>| {
        let ratio = p / s.p;
        if p > s.p {
            s.rho * (ratio + gr) / (gr * ratio + T::one())
        } else {
            s.rho * ratio.powf(T::one() / gamma)
        }
    };
    Ok(RiemannSolution {
        left,
        right,
        gamma,
        p_star: p,
        u_star,
        left_wave: if p > left.p { Wave::Shock } else { Wave::Rarefaction },
        right_wave: if p > right.p { Wave::Shock } else { Wave::Rarefaction },
        rho_star_left: star_density(left),
        rho_star_right: star_density(right),
        newton_iterations: iterations,
    })
}

impl<T: Real> RiemannSolution<T> {
    /// Speed of the left shock, or of the left rarefaction head.
    pub fn left_wave_speed(&self) -> T {
        let (s, g) = (self.left, self.gamma);
        let c = sound(s, g);
        match self.left_wave {
            Wave::Shock => {
                let r = self.p_star / s.p;
                s.u - c * ((g + T::one()) / (T::two() * g) * r + (g - T::one()) / (T::two() * g)).sqrt()
            }
            Wave::Rarefaction => s.u - c,
        }
    }

    /// Speed of the right shock, or of the right rarefaction head.
    pub fn right_wave_speed(&self) -> T {
        let (s, g) = (self.right, self.gamma);
        let c = sound(s, g);
        match self.right_wave {
            Wave::Shock => {
                let r = self.p_star / s.p;
                s.u + c * ((g + T::one()) / (T::two() * g) * r + (g - T::one()) / (T::two() * g)).sqrt()
            }
            Wave::Rarefaction => s.u + c,
        }
    }

    pub fn contact_speed(&self) -> T {
        self.u_star
    }

    /// Self-similar solution at `xi = x / t`.
    pub fn sample(&self, xi: T) -> Primitive<T> {
        let g = self.gamma;
        let g1 = g - T::one();
        let gp = g + T::one();
        let two = T::two();
        if xi <= self.u_star {
            let s = self.left;
            let c = sound(s, g);
            match self.left_wave {
                Wave::Shock => {
                    if xi <= self.left_wave_speed() {
                        s
                    } else {
                        Primitive::new(self.rho_star_left, self.u_star, self.p_star)
                    }
                }
                Wave::Rarefaction => {
                    let c_star = c * (self.p_star / s.p).powf(g1 / (two * g));
                    if xi <= s.u - c {
                        s
                    } else if xi >= self.u_star - c_star {
                        Primitive::new(self.rho_star_left, self.u_star, self.p_star)
                    } else {
                        let k = two / gp + g1 / (gp * c) * (s.u - xi);
                        Primitive::new(
                            s.rho * k.powf(two / g1),
                            two / gp * (c + g1 / two * s.u + xi),
                            s.p * k.powf(two * g / g1),
                        )
                    }
                }
            }
        } else {
            let s = self.right;
            let c = sound(s, g);
            match self.right_wave {
                Wave::Shock => {
                    if xi >= self.right_wave_speed() {
                        s
                    } else {
                        Primitive::new(self.rho_star_right, self.u_star, self.p_star)
                    }
                }
                Wave::Rarefaction => {
                    let c_star = c * (self.p_star / s.p).powf(g1 / (two * g));
                    if xi >= s.u + c {
                        s
                    } else if xi <= self.u_star + c_star {
                        Primitive::new(self.rho_star_right, self.u_star, self.p_star)
                    } else {
                        let k = two / gp - g1 / (gp * c) * (s.u - xi);
                        Primitive::new(
                            s.rho * k.powf(two / g1),
                            two / gp * (-c + g1 / two * s.u + xi),
                            s.p * k.powf(two * g / g1),
                        )
                    }
                }
            }
        }
    }
}

/// Exact solution of the Riemann problem sampled at `xi = x / t`.
pub fn exact_riemann<T: Real>(left: Primitive<T>, right: Primitive<T>, gamma: T, xi: T) -> Result<Primitive<T>> {
    Ok(solve_riemann(left, right, gamma)?.sample(xi))
}

fn conserved<T: Real>(s: Primitive<T>, gamma: T) -> ([T; 3], [T; 3]) {
    let energy = s.p / (gamma - T::one()) + T::half() * s.rho * s.u * s.u;
    (
        [s.rho, s.rho * s.u, energy],
        [s.rho * s.u, s.rho * s.u * s.u + s.p, s.u * (energy + s.p)],
    )
}

/// `s [U] - [f(U)]` for mass, momentum and total energy.
pub fn rankine_hugoniot_residual<T: Real>(left: Primitive<T>, right: Primitive<T>, s: T, gamma: T) -> [T; 3] {
    let (ul, fl) = conserved(left, gamma);
    let (ur, fr) = conserved(right, gamma);
    [0, 1, 2].map(|i| s * (ur[i] - ul[i]) - (fr[i] - fl[i]))
}

/// Named Riemann problem with its domain and time.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset<T: Real> {
    pub name: &'static str,
    pub left: Primitive<T>,
    pub right: Primitive<T>,
    pub gamma: T,
    pub x0: T,
    pub end_time: T,
    pub domain: (T, T),
    /// Sub-interval on which errors against the exact solution are measured.
    pub window: (T, T),
}

pub const PRESET_NAMES: [&str; 2] = ["sod", "toro-test5"];

/// Presets by name: `"sod"` and `"toro-test5"`.
///
/// The two-shock problem runs on a padded domain so that the waves reflected
/// by the walls stay outside `[0, 1]` until the final time.
pub fn preset<T: Real>(name: &str) -> Option<Preset<T>> {
    let l = T::lit;
    match name {
        "sod" => Some(Preset {
            name: "sod",
            left: Primitive::new(l(1.0), l(0.0), l(1.0)),
            right: Primitive::new(l(0.125), l(0.0), l(0.1)),
            gamma: l(1.4),
            x0: l(0.5),
            end_time: l(0.2),
            domain: (l(0.0), l(1.0)),
            window: (l(0.0), l(1.0)),
        }),
        "toro-test5" => Some(Preset {
            name: "toro-test5",
            left: Primitive::new(l(5.99924), l(19.5975), l(460.894)),
            right: Primitive::new(l(5.99242), l(-6.19633), l(46.0950)),
            gamma: l(1.4),
            x0: l(0.4),
            end_time: l(0.035),
            domain: (l(-1.2), l(1.6)),
            window: (l(0.0), l(1.0)),
        }),
        _ => None,
    }
}

/// One cell of [`convection_identity_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityBracket<T: Real> {
    /// `phi'(z') C_K(z) - [(|K|/dt)(rho' phi(z') - rho phi(z)) + sum F phi(z_sigma)]`
    pub remainder: T,
    /// `sum F [phi(z'_K) - phi(z_sigma) + phi'(z'_K)(z_sigma - z'_K)]`
    pub face_terms: T,
    /// Admissible range of `remainder - face_terms`.
    pub lo: T,
    pub hi: T,
    /// Magnitude of the largest term, for rounding tolerances.
    pub scale: T,
}

impl<T: Real> IdentityBracket<T> {
    pub fn time_part(&self) -> T {
        self.remainder - self.face_terms
    }

    pub fn holds(&self, rel_tol: T) -> bool {
        let slack = rel_tol * self.scale;
        let v = self.time_part();
        v >= self.lo - slack && v <= self.hi + slack
    }
}

/// Evaluate every term of the renormalised convection identity per cell.
///
/// The time part of the remainder equals `½ (|K|/dt) rho phi''(xi) (z' - z)^2`
/// for some `xi` between `z` and `z'`; the bracket spans the extreme values of
/// `phi''` over that interval. Face values of `z` are upwinded with the sign
/// of the mass flux.
#[allow(clippy::too_many_arguments)]
pub fn convection_identity_check<T: Real>(
    rho_old: &[T],
    rho_new: &[T],
    z_old: &[T],
    z_new: &[T],
    flux: &FluxSet<T>,
    grid: &Grid<T>,
    dt: T,
    phi: Phi<T>,
) -> Result<Vec<IdentityBracket<T>>> {
    let n = grid.n_cells;
    let f = &flux.f_primal;
    let mass = mass_residual(rho_old, rho_new, f, grid, dt);
    for k in 0..n {
        let scale = grid.cell_measure(k) / dt * rho_old[k].abs().max(rho_new[k].abs()) + f[k].abs() + f[k + 1].abs();
        if mass[k].abs() > T::lit(1e-10) * scale {
            return Err(Error::Precondition(format!(
                "densities do not satisfy the mass balance in cell {k} (residual {})",
                mass[k]
            )));
        }
    }
    let z_face: Vec<T> = (0..=n)
        .map(|i| {
            // wall fluxes vanish; any admissible value keeps phi finite there
            if i == 0 {
                z_new[0]
            } else if i == n {
                z_new[n - 1]
            } else if f[i] >= T::zero() {
                z_new[i - 1]
            } else {
                z_new[i]
            }
        })
        .collect();
    Ok((0..n)
        .map(|k| {
            let hk = grid.cell_measure(k) / dt;
            let (zo, zn) = (z_old[k], z_new[k]);
            let d1 = phi.d1(zn);
            let conv = hk * (rho_new[k] * zn - rho_old[k] * zo) + f[k + 1] * z_face[k + 1] - f[k] * z_face[k];
            let cons_time = hk * (rho_new[k] * phi.value(zn) - rho_old[k] * phi.value(zo));
            let cons_face = f[k + 1] * phi.value(z_face[k + 1]) - f[k] * phi.value(z_face[k]);
            let remainder = d1 * conv - (cons_time + cons_face);
            let face_term = |sign: T, fi: T, zs: T| sign * fi * (phi.value(zn) - phi.value(zs) + d1 * (zs - zn));
            let face_terms = face_term(T::one(), f[k + 1], z_face[k + 1]) + face_term(-T::one(), f[k], z_face[k]);
            let amp = T::half() * hk * rho_old[k] * (zn - zo) * (zn - zo);
            let (c1, c2) = (phi.d2(zo), phi.d2(zn));
            // phi'' is monotone for every weight provided, so its extremes sit at the ends
            let (lo, hi) = (amp * c1.min(c2), amp * c1.max(c2));
            let scale = [
                (d1 * conv).abs(),
                cons_time.abs(),
                cons_face.abs(),
                (hk * rho_new[k] * phi.value(zn)).abs(),
                (hk * rho_old[k] * phi.value(zo)).abs(),
                (f[k + 1] * phi.value(z_face[k + 1])).abs(),
                (f[k] * phi.value(z_face[k])).abs(),
            ]
            .into_iter()
            .fold(T::zero(), |m, v| m.max(v));
            IdentityBracket { remainder, face_terms, lo, hi, scale }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::assemble_mass_fluxes;
    use crate::grid::build_uniform_grid;
    use crate::state::{Reconstruction, State};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn prim(rho: f64, u: f64, p: f64) -> Primitive<f64> {
        Primitive::new(rho, u, p)
    }

    #[test]
    fn sod_star_state() {
        let s = solve_riemann(prim(1.0, 0.0, 1.0), prim(0.125, 0.0, 0.1), 1.4).unwrap();
        assert!((s.p_star - 0.30313).abs() < 1e-5);
        assert!((s.u_star - 0.92745).abs() < 1e-5);
        assert_eq!(s.left_wave, Wave::Rarefaction);
        assert_eq!(s.right_wave, Wave::Shock);
        assert!((s.rho_star_left - 0.42632).abs() < 1e-5);
        assert!((s.rho_star_right - 0.26557).abs() < 1e-5);
    }

    #[test]
    fn two_shock_star_state() {
        let p: Preset<f64> = preset("toro-test5").unwrap();
        let s = solve_riemann(p.left, p.right, p.gamma).unwrap();
        assert_eq!((s.left_wave, s.right_wave), (Wave::Shock, Wave::Shock));
        assert!((s.p_star - 1691.64).abs() < 0.01);
        assert!((s.u_star - 8.68975).abs() < 1e-4);
        assert!((s.rho_star_left - 14.2823).abs() < 1e-3);
        assert!((s.rho_star_right - 31.0426).abs() < 1e-3);
        assert!(s.left_wave_speed() > 0.7 && s.left_wave_speed() < 0.9);
        assert!((s.right_wave_speed() - 12.25).abs() < 0.01);
    }

    #[test]
    fn far_field_is_unperturbed() {
        let l = prim(1.0, 0.0, 1.0);
        let r = prim(0.125, 0.0, 0.1);
        assert_eq!(exact_riemann(l, r, 1.4, -10.0).unwrap(), l);
        assert_eq!(exact_riemann(l, r, 1.4, 10.0).unwrap(), r);
    }

    #[test]
    fn vacuum_is_reported() {
        let r = solve_riemann(prim(1.0, -10.0, 0.4), prim(1.0, 10.0, 0.4), 1.4);
        assert!(matches!(r, Err(Error::Vacuum { .. })));
    }

    #[test]
    fn rh_trivial_cases() {
        let r = rankine_hugoniot_residual(prim(1.0, 0.0, 1.0), prim(0.3, 0.0, 1.0), 0.0, 1.4);
        assert_eq!(r, [0.0, 0.0, 0.0]);
        let a = prim(2.0, 1.3, 0.7);
        assert_eq!(rankine_hugoniot_residual(a, a, 5.0, 1.4), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn mach_three_shock_satisfies_jump_conditions() {
        // right-moving shock into gas at rest built from the normal-shock relations
        let g: f64 = 1.4;
        let (rho0, p0) = (1.0, 1.0);
        let c0 = (g * p0 / rho0).sqrt();
        let m: f64 = 3.0;
        let s = m * c0;
        let rho1 = rho0 * (g + 1.0) * m * m / ((g - 1.0) * m * m + 2.0);
        let p1 = p0 * (2.0 * g * m * m - (g - 1.0)) / (g + 1.0);
        let u1 = s * (1.0 - rho0 / rho1);
        let r = rankine_hugoniot_residual(prim(rho1, u1, p1), prim(rho0, 0.0, p0), s, g);
        let scale = p1 * s;
        assert!(r.iter().all(|v| v.abs() <= 1e-12 * scale), "{r:?}");
    }

    #[test]
    fn exact_shocks_satisfy_jump_conditions() {
        let p: Preset<f64> = preset("toro-test5").unwrap();
        let s = solve_riemann(p.left, p.right, p.gamma).unwrap();
        let star_l = prim(s.rho_star_left, s.u_star, s.p_star);
        let star_r = prim(s.rho_star_right, s.u_star, s.p_star);
        let rl = rankine_hugoniot_residual(p.left, star_l, s.left_wave_speed(), p.gamma);
        let rr = rankine_hugoniot_residual(star_r, p.right, s.right_wave_speed(), p.gamma);
        for v in rl.iter().chain(&rr) {
            assert!(v.abs() <= 1e-9 * s.p_star * 12.0, "{v}");
        }
    }

    #[test]
    fn rarefaction_preserves_riemann_invariant() {
        let l = prim(1.0, 0.0, 1.0);
        let s = solve_riemann(l, prim(0.125, 0.0, 0.1), 1.4).unwrap();
        let c = |q: Primitive<f64>| (1.4 * q.p / q.rho).sqrt();
        let inv = |q: Primitive<f64>| q.u + 2.0 * c(q) / 0.4;
        let entropy = |q: Primitive<f64>| q.p / q.rho.powf(1.4);
        for j in 0..50 {
            let xi = -1.18 + j as f64 * 1.1 / 50.0;
            let q = s.sample(xi);
            assert_relative_eq!(inv(q), inv(l), max_relative = 1e-12);
            assert_relative_eq!(entropy(q), entropy(l), max_relative = 1e-12);
        }
    }

    #[test]
    fn identity_with_constant_z() {
        let g = build_uniform_grid(0.0, 1.0, 5).unwrap();
        let st = State {
            rho: vec![1.0, 2.0, 1.5, 0.5, 1.0],
            e: vec![1.0; 5],
            p: vec![0.4; 5],
            u: vec![0.0, 0.3, -0.2, 0.5, 0.1, 0.0],
            time: 0.0,
        };
        let f = assemble_mass_fluxes(&st, &g, Reconstruction::Upwind, 1.4);
        let dt = 0.01;
        let rho_new: Vec<f64> =
            (0..5).map(|k| st.rho[k] - dt / 0.2 * (f.f_primal[k + 1] - f.f_primal[k])).collect();
        let z = vec![0.7; 5];
        let rows = convection_identity_check(&st.rho, &rho_new, &z, &z, &f, &g, dt, Phi::Rho).unwrap();
        for r in rows {
            assert!(r.remainder.abs() < 1e-12 && r.face_terms.abs() < 1e-12, "{r:?}");
            assert_eq!((r.lo, r.hi), (0.0, 0.0));
        }
        let z_new = vec![0.1, 0.9, 0.3, 0.4, 0.8];
        let rows = convection_identity_check(&st.rho, &rho_new, &z, &z_new, &f, &g, dt, Phi::Linear).unwrap();
        for r in rows {
            assert_eq!((r.lo, r.hi), (0.0, 0.0));
            assert!(r.time_part().abs() < 1e-12 * r.scale.max(1.0));
        }
        let bad = vec![5.0; 5];
        assert!(matches!(
            convection_identity_check(&st.rho, &bad, &z, &z, &f, &g, dt, Phi::Rho),
            Err(Error::Precondition(_))
        ));
    }

    proptest! {
        #[test]
        fn equal_states_are_returned(rho in 0.01f64..100.0, u in -10.0f64..10.0, p in 0.01f64..100.0, xi in -50.0f64..50.0) {
            let a = prim(rho, u, p);
            let q = exact_riemann(a, a, 1.4, xi).unwrap();
            prop_assert!((q.rho - rho).abs() <= 1e-10 * rho);
            prop_assert!((q.u - u).abs() <= 1e-10 * (u.abs() + (1.4 * p / rho).sqrt()));
            prop_assert!((q.p - p).abs() <= 1e-10 * p);
        }

        #[test]
        fn sampled_states_are_positive(
            rl in 1e-3f64..1e3, pl in 1e-3f64..1e3, rr in 1e-3f64..1e3, pr in 1e-3f64..1e3,
            xi in -100.0f64..100.0,
        ) {
            let q = exact_riemann(prim(rl, 0.0, pl), prim(rr, 0.0, pr), 1.4, xi).unwrap();
            prop_assert!(q.rho > 0.0 && q.p > 0.0);
        }
    }
}

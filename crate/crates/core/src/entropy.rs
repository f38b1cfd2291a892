//! Entropy pair, tangent-intersection points, admissible face intervals,
//! entropy residuals, discrete norms, entropy time-step limits and audits of
//! the remainder bounds.
//!
//! The entropy is `eta(rho, e) = rho ln rho - rho ln(e) / (gamma - 1)`, built
//! from the convex weights `phi_rho(z) = z ln z` and `phi_e(z) = -ln(z) / (gamma - 1)`.

use crate::error::{Error, Result};
use crate::flux::{assemble_mass_fluxes, FluxSet};
use crate::grid::{Grid, MeshMetrics};
use crate::real::Real;
use crate::state::{totals, Reconstruction, State};

/// Convex weight functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phi<T: Real> {
    /// `z ln z`
    Rho,
    /// `-ln(z) / (gamma - 1)`
    Energy(T),
    /// `z^2`
    Square,
    /// `z`
    Linear,
}

impl<T: Real> Phi<T> {
    pub fn value(self, z: T) -> T {
        match self {
            Phi::Rho => z * z.ln(),
            Phi::Energy(g) => -z.ln() / (g - T::one()),
            Phi::Square => z * z,
            Phi::Linear => z,
        }
    }

    pub fn d1(self, z: T) -> T {
        match self {
            Phi::Rho => z.ln() + T::one(),
            Phi::Energy(g) => -T::one() / ((g - T::one()) * z),
            Phi::Square => T::two() * z,
            Phi::Linear => T::one(),
        }
    }

    pub fn d2(self, z: T) -> T {
        match self {
            Phi::Rho => T::one() / z,
            Phi::Energy(g) => T::one() / ((g - T::one()) * z * z),
            Phi::Square => T::two(),
            Phi::Linear => T::zero(),
        }
    }

    pub fn d3(self, z: T) -> T {
        match self {
            Phi::Rho => -T::one() / (z * z),
            Phi::Energy(g) => -T::two() / ((g - T::one()) * z * z * z),
            Phi::Square | Phi::Linear => T::zero(),
        }
    }
}

/// Below this relative half-width the tangent intersection comes from its
/// expansion about the midpoint; bisection there only resolves rounding noise.
const X_KL_SERIES_WIDTH: f64 = 1e-3;

/// Root of `f` in `[[a, b]]` by bisection down to adjacent floats.
///
/// Without a sign change (degenerate or rounding-dominated cases) the
/// midpoint is returned, which keeps the result inside the interval.
fn bisect<T: Real>(f: impl Fn(T) -> T, a: T, b: T) -> T {
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let mid = |lo: T, hi: T| lo + (hi - lo) * T::half();
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == T::zero() && fhi == T::zero() {
        return mid(lo, hi);
    }
    if flo == T::zero() {
        return lo;
    }
    if fhi == T::zero() {
        return hi;
    }
    if (flo > T::zero()) == (fhi > T::zero()) {
        return mid(lo, hi);
    }
    for _ in 0..400 {
        let m = mid(lo, hi);
        if m <= lo || m >= hi {
            break;
        }
        let fm = f(m);
        if fm == T::zero() {
            return m;
        }
        if (fm > T::zero()) == (flo > T::zero()) {
            lo = m;
            flo = fm;
        } else {
            hi = m;
        }
    }
    mid(lo, hi)
}

/// Abscissa where the tangents of `phi` at `x_k` and `x_l` meet.
pub fn x_kl<T: Real>(phi: Phi<T>, x_k: T, x_l: T) -> T {
    if x_k == x_l {
        return x_k;
    }
    if let Phi::Linear = phi {
        return T::half() * (x_k + x_l);
    }
    let m = T::half() * (x_k + x_l);
    let d = T::half() * (x_l - x_k);
    if d.abs() <= T::lit(X_KL_SERIES_WIDTH) * m.abs() {
        // the correction is even in d; the next term is O(d^4)
        return m + phi.d3(m) * d * d / (T::lit(3.0) * phi.d2(m));
    }
    let (pk, dk) = (phi.value(x_k), phi.d1(x_k));
    let (pl, dl) = (phi.value(x_l), phi.d1(x_l));
    bisect(|x| (pk + dk * (x - x_k)) - (pl + dl * (x - x_l)), x_k, x_l)
}

/// Mean-value point: `phi''(xi) (b - a) = phi'(b) - phi'(a)`.
pub fn mean_value_point<T: Real>(phi: Phi<T>, a: T, b: T) -> T {
    if a == b {
        return a;
    }
    let target = (phi.d1(b) - phi.d1(a)) / (b - a);
    bisect(|x| phi.d2(x) - target, a, b)
}

/// Taylor point about `a`: `½ phi''(xi) (b - a)^2 = phi(b) - phi(a) - phi'(a) (b - a)`.
pub fn taylor_point<T: Real>(phi: Phi<T>, a: T, b: T) -> T {
    if a == b {
        return a;
    }
    let d = b - a;
    let target = T::two() * (phi.value(b) - phi.value(a) - phi.d1(a) * d) / (d * d);
    bisect(|x| phi.d2(x) - target, a, b)
}

/// Closed interval between the upwind value and `z_kl`.
pub fn admissible_interval<T: Real>(z_k: T, z_l: T, z_kl: T, upwind_is_k: bool) -> Result<(T, T)> {
    if !(z_kl >= z_k.min(z_l) && z_kl <= z_k.max(z_l)) {
        return Err(Error::Internal(format!("tangent point {z_kl} lies outside [[{z_k}, {z_l}]]")));
    }
    let up = if upwind_is_k { z_k } else { z_l };
    Ok((up.min(z_kl), up.max(z_kl)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyWeights<T: Real> {
    pub gamma: T,
}

impl<T: Real> EntropyWeights<T> {
    pub fn new(gamma: T) -> Result<Self> {
        if !(gamma > T::one()) {
            return Err(Error::Config(format!("gamma must exceed 1, got {gamma}")));
        }
        Ok(EntropyWeights { gamma })
    }

    pub fn phi_rho(&self) -> Phi<T> {
        Phi::Rho
    }

    pub fn phi_e(&self) -> Phi<T> {
        Phi::Energy(self.gamma)
    }

    /// `eta` without argument checks.
    pub fn eta(&self, rho: T, e: T) -> T {
        Phi::Rho.value(rho) + rho * Phi::Energy(self.gamma).value(e)
    }
}

pub fn eta<T: Real>(rho: T, e: T, weights: &EntropyWeights<T>) -> Result<T> {
    if !(rho > T::zero()) || !(e > T::zero()) {
        return Err(Error::Domain(format!("entropy needs rho > 0 and e > 0, got rho = {rho}, e = {e}")));
    }
    Ok(weights.eta(rho, e))
}

/// `rho phi_rho'(rho) - phi_rho(rho) + phi_e'(e) p`, zero for the ideal gas.
pub fn entropy_compatibility_residual<T: Real>(rho: T, e: T, weights: &EntropyWeights<T>) -> T {
    let p = (weights.gamma - T::one()) * rho * e;
    rho * Phi::Rho.d1(rho) - Phi::Rho.value(rho) + weights.phi_e().d1(e) * p
}

/// Time level of the face values and velocities in the convection terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeLevel {
    Implicit,
    Explicit,
}

/// Per-cell `(|K|/dt)(eta' - eta) + sum_sigma eta_sigma u_{K,sigma}`.
///
/// Face entropies come from the reconstructed face values in `flux`; the
/// velocities are those of the new state for [`TimeLevel::Implicit`] and of
/// the old state otherwise.
pub fn entropy_residual_field<T: Real>(
    state_old: &State<T>,
    state_new: &State<T>,
    flux: &FluxSet<T>,
    grid: &Grid<T>,
    dt: T,
    weights: &EntropyWeights<T>,
    level: TimeLevel,
) -> Vec<T> {
    let n = grid.n_cells;
    let u = match level {
        TimeLevel::Implicit => &state_new.u,
        TimeLevel::Explicit => &state_old.u,
    };
    let face_flux: Vec<T> = (0..=n)
        .map(|i| {
            if grid.is_boundary_face(i) {
                T::zero()
            } else {
                weights.eta(flux.rho_face[i], flux.e_face[i]) * u[i]
            }
        })
        .collect();
    (0..n)
        .map(|k| {
            let d = weights.eta(state_new.rho[k], state_new.e[k]) - weights.eta(state_old.rho[k], state_old.e[k]);
            grid.cell_measure(k) / dt * d + face_flux[k + 1] - face_flux[k]
        })
        .collect()
}

/// `sum_K |K| eta_K`.
pub fn global_entropy<T: Real>(state: &State<T>, grid: &Grid<T>, weights: &EntropyWeights<T>) -> T {
    (0..grid.n_cells).fold(T::zero(), |acc, k| acc + grid.cell_measure(k) * weights.eta(state.rho[k], state.e[k]))
}

/// Compactly supported test functions `b((x - cx)/wx) b((t - ct)/wt)` with
/// `b(s) = exp(-1/(1 - s^2))`.
#[derive(Debug, Clone)]
pub struct BumpFamily<T: Real> {
    space: Vec<(T, T)>,
    time: Vec<(T, T)>,
    bump_slope_max: T,
}

fn bump<T: Real>(s: T) -> T {
    if s.abs() >= T::one() {
        T::zero()
    } else {
        (-T::one() / (T::one() - s * s)).exp()
    }
}

fn bump_slope<T: Real>(s: T) -> T {
    if s.abs() >= T::one() {
        T::zero()
    } else {
        let w = T::one() - s * s;
        bump(s) * (-T::two() * s / (w * w))
    }
}

impl<T: Real> BumpFamily<T> {
    pub const SPACE: [(f64, f64); 4] = [(0.5, 0.45), (0.3, 0.2), (0.7, 0.2), (0.5, 0.1)];
    pub const TIME: [(f64, f64); 4] = [(0.5, 0.49), (0.25, 0.24), (0.75, 0.24), (0.5, 0.2)];

    pub fn new(domain_left: T, length: T, end_time: T) -> Self {
        let space = Self::SPACE
            .iter()
            .map(|&(c, w)| (domain_left + T::lit(c) * length, T::lit(w) * length))
            .collect();
        let time = Self::TIME.iter().map(|&(c, w)| (T::lit(c) * end_time, T::lit(w) * end_time)).collect();
        let samples = 20_000;
        let bump_slope_max = (0..=samples)
            .map(|j| bump_slope(T::lit(-1.0 + 2.0 * j as f64 / samples as f64)).abs())
            .fold(T::zero(), |m, v| m.max(v));
        BumpFamily { space, time, bump_slope_max }
    }

    pub fn len(&self) -> usize {
        self.space.len() * self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn psi(&self, j: usize, x: T, t: T) -> T {
        let (cx, wx) = self.space[j % self.space.len()];
        let (ct, wt) = self.time[j / self.space.len()];
        if !(wt > T::zero()) {
            return T::zero();
        }
        bump((x - cx) / wx) * bump((t - ct) / wt)
    }

    /// Sup norm of the spatial derivative of test function `j`.
    pub fn grad_sup(&self, j: usize) -> T {
        let (_, wx) = self.space[j % self.space.len()];
        self.bump_slope_max / wx * bump(T::zero())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteNorms<T: Real> {
    pub bv_time: T,
    pub bv_space: T,
    pub dual_norm_surrogate: T,
}

/// Norms of a cell field given at levels `0..=N` with constant step `dt`.
///
/// The dual norm is the largest pairing over the bump family, normalised by
/// the gradient bound of each test function.
pub fn discrete_norms<T: Real>(field: &[Vec<T>], grid: &Grid<T>, dt: T) -> DiscreteNorms<T> {
    let mut bv_time = T::zero();
    let mut bv_space = T::zero();
    for (n, level) in field.iter().enumerate() {
        if let Some(next) = field.get(n + 1) {
            for k in 0..grid.n_cells {
                bv_time = bv_time + grid.cell_measure(k) * (next[k] - level[k]).abs();
            }
        }
        for k in 1..grid.n_cells {
            bv_space = bv_space + dt * (level[k] - level[k - 1]).abs();
        }
    }
    let levels = field.len().max(2) - 1;
    let end_time = dt * T::from_usize_lossy(levels);
    let bumps = BumpFamily::new(grid.domain_left, grid.length(), end_time);
    let mut best = T::zero();
    for j in 0..bumps.len() {
        let mut pairing = T::zero();
        for (n, level) in field.iter().enumerate() {
            let t = dt * T::from_usize_lossy(n);
            for k in 0..grid.n_cells {
                pairing = pairing + dt * grid.cell_measure(k) * level[k] * bumps.psi(j, grid.cell_centers[k], t);
            }
        }
        best = best.max(pairing.abs() / bumps.grad_sup(j));
    }
    DiscreteNorms { bv_time, bv_space, dual_norm_surrogate: best }
}

/// Largest step satisfying the density and energy entropy conditions.
///
/// Intermediate points: mean-value points between the two time levels,
/// Taylor points between neighbouring cells, and the Taylor point about the
/// new energy for the energy numerator.
pub fn entropy_cfl_dt<T: Real>(
    state: &State<T>,
    flux: &FluxSet<T>,
    state_next: &State<T>,
    grid: &Grid<T>,
    weights: &EntropyWeights<T>,
) -> T {
    let n = grid.n_cells;
    let pr = weights.phi_rho();
    let pe = weights.phi_e();
    let mut best = T::infinity();
    for k in 0..n {
        let rho_mid = mean_value_point(pr, state.rho[k], state_next.rho[k]);
        let e_mid = mean_value_point(pe, state.e[k], state_next.e[k]);
        let mut den_rho = T::zero();
        let mut den_e = T::zero();
        // (neighbour, u_{K,sigma}, F_{K,sigma}) for the two faces
        let mut faces = [None, None];
        if k + 1 < n {
            faces[0] = Some((k + 1, state.u[k + 1], flux.f_primal[k + 1]));
        }
        if k > 0 {
            faces[1] = Some((k - 1, -state.u[k], -flux.f_primal[k]));
        }
        for (l, u_ks, f_ks) in faces.into_iter().flatten() {
            let u_in = u_ks.neg_part();
            let f_in = f_ks.neg_part();
            if u_in > T::zero() {
                let rho_edge = taylor_point(pr, state.rho[k], state.rho[l]);
                den_rho = den_rho + pr.d2(rho_mid).powi(2) / pr.d2(rho_edge) * u_in;
            }
            if f_in > T::zero() {
                let e_edge = taylor_point(pe, state.e[k], state.e[l]);
                den_e = den_e + pe.d2(e_mid).powi(2) / pe.d2(e_edge) * f_in;
            }
        }
        if den_rho > T::zero() {
            best = best.min(grid.cell_measure(k) / den_rho);
        }
        if den_e > T::zero() {
            let e_half = taylor_point(pe, state_next.e[k], state.e[k]);
            best = best.min(pe.d2(e_half) * grid.cell_measure(k) * state_next.rho[k] / den_e);
        }
    }
    best
}

/// Face remainder term `delta phi` seen from the cell with value `z_own`.
fn delta_phi<T: Real>(phi: Phi<T>, z_own: T, z_other: T, z_face: T) -> T {
    let z_kl = x_kl(phi, z_own, z_other);
    phi.value(z_own) - phi.value(z_face)
        + phi.d1(z_own) * (z_kl - z_own)
        + T::half() * (phi.d1(z_own) + phi.d1(z_other)) * (z_face - z_kl)
}

/// Per-cell `|K| dR_m` and `|K| dR_e` of the face remainders.
pub fn face_remainders<T: Real>(
    state: &State<T>,
    flux: &FluxSet<T>,
    u: &[T],
    weights: &EntropyWeights<T>,
) -> (Vec<T>, Vec<T>) {
    let n = state.n_cells();
    let mut rm = vec![T::zero(); n];
    let mut re = vec![T::zero(); n];
    let (pr, pe) = (weights.phi_rho(), weights.phi_e());
    for i in 1..n {
        let (k, l) = (i - 1, i);
        let (rf, ef, f) = (flux.rho_face[i], flux.e_face[i], flux.f_primal[i]);
        rm[k] = rm[k] + delta_phi(pr, state.rho[k], state.rho[l], rf) * u[i];
        rm[l] = rm[l] - delta_phi(pr, state.rho[l], state.rho[k], rf) * u[i];
        re[k] = re[k] + delta_phi(pe, state.e[k], state.e[l], ef) * f;
        re[l] = re[l] - delta_phi(pe, state.e[l], state.e[k], ef) * f;
    }
    (rm, re)
}

/// One named remainder audit.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundAudit<T: Real> {
    pub name: &'static str,
    pub measured: T,
    pub bound: T,
}

impl<T: Real> BoundAudit<T> {
    /// `measured / bound`, with `0/0 = 0`.
    pub fn ratio(&self) -> T {
        if self.measured == T::zero() {
            T::zero()
        } else {
            self.measured / self.bound
        }
    }

    pub fn holds(&self) -> bool {
        self.measured <= self.bound
    }
}

/// Norms and measured remainder aggregates of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunNorms<T: Real> {
    pub bv_time_rho: T,
    pub bv_time_e: T,
    pub bv_space_rho: T,
    pub bv_space_e: T,
    /// `||u||_{L^q(W^{1,q})}` and the same with the conjugate exponent.
    pub velocity_norm_q: T,
    pub velocity_norm_q_conjugate: T,
    pub q: T,
    pub m_bound: T,
    pub max_dt: T,
    pub measured_delta_rm: T,
    pub measured_delta_re: T,
    pub measured_face_remainder: T,
    pub measured_time_remainder: T,
    pub measured_upwind_remainder: T,
}

/// Right sides of the remainder estimates next to the measured aggregates.
pub fn theorem_bound_audit<T: Real>(
    norms: &RunNorms<T>,
    weights: &EntropyWeights<T>,
    metrics: &MeshMetrics<T>,
) -> Vec<BoundAudit<T>> {
    let m = norms.m_bound.max(T::one());
    let three = T::lit(3.0);
    let dphi_rho = Phi::Rho.d1(m).abs().max(Phi::Rho.d1(T::one() / m).abs());
    let dphi_e = weights.phi_e().d1(m).abs().max(weights.phi_e().d1(T::one() / m).abs());
    // phi'' of both weights is decreasing, so its maximum on [1/M, M] sits at 1/M
    let d2phi_rho = Phi::Rho.d2(T::one() / m);
    let d2phi_e = weights.phi_e().d2(T::one() / m);
    let h = metrics.h_m;
    let q = norms.q;
    let fc = T::from_usize_lossy(metrics.f_m) * metrics.c_m;
    let upwind = |vel: T| {
        fc * m.powf((T::two() * q - T::one()) / q)
            * d2phi_rho
            * norms.bv_time_rho.powf(T::one() / q)
            * vel
            * norms.max_dt.powf(T::one() / q)
    };
    vec![
        BoundAudit {
            name: "mass_face_remainder",
            measured: norms.measured_delta_rm,
            bound: three * m * dphi_rho * norms.bv_space_rho * h,
        },
        BoundAudit {
            name: "energy_face_remainder",
            measured: norms.measured_delta_re,
            bound: three * m * m * dphi_e * norms.bv_space_e * h,
        },
        BoundAudit {
            name: "face_remainder",
            measured: norms.measured_face_remainder,
            bound: three * m * (dphi_rho * norms.bv_space_rho + m * dphi_e * norms.bv_space_e) * h,
        },
        BoundAudit {
            name: "time_remainder",
            measured: norms.measured_time_remainder,
            bound: m * m * (d2phi_rho * norms.bv_time_rho + d2phi_e * norms.bv_time_e) * norms.max_dt
                / metrics.h_underline_m,
        },
        BoundAudit {
            name: "upwind_remainder_conjugate_norm",
            measured: norms.measured_upwind_remainder,
            bound: upwind(norms.velocity_norm_q_conjugate),
        },
        BoundAudit {
            name: "upwind_remainder_q_norm",
            measured: norms.measured_upwind_remainder,
            bound: upwind(norms.velocity_norm_q),
        },
    ]
}

/// Scalars recorded for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics<T: Real> {
    pub time: T,
    pub dt: T,
    pub mass: T,
    pub energy: T,
    pub global_entropy: T,
    pub max_entropy_residual: T,
    /// `(min |K| / dt) max |eta|` over both levels.
    pub residual_scale: T,
    pub cfl_entropy_dt: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport<T: Real> {
    pub initial: StepDiagnostics<T>,
    pub steps: Vec<StepDiagnostics<T>>,
    pub norms: RunNorms<T>,
    pub dual_norm_surrogate: T,
    pub audits: Vec<BoundAudit<T>>,
}

/// Streams run diagnostics step by step so that no cell-by-time array is kept.
#[derive(Debug, Clone)]
pub struct DiagnosticsAccumulator<T: Real> {
    weights: EntropyWeights<T>,
    grid: Grid<T>,
    level: TimeLevel,
    q: T,
    bumps: BumpFamily<T>,
    bv_time: [T; 2],
    bv_space: [T; 2],
    m_bound: T,
    velocity_sums: [T; 2],
    pair_rm: Vec<T>,
    pair_re: Vec<T>,
    time_remainder: T,
    upwind_remainder: T,
    max_dt: T,
    last_dt: T,
    initial: StepDiagnostics<T>,
    steps: Vec<StepDiagnostics<T>>,
}

impl<T: Real> DiagnosticsAccumulator<T> {
    pub fn new(
        initial: &State<T>,
        grid: &Grid<T>,
        weights: EntropyWeights<T>,
        end_time: T,
        level: TimeLevel,
        q: T,
    ) -> Self {
        let bumps = BumpFamily::new(grid.domain_left, grid.length(), end_time);
        let (mass, energy) = totals(initial, grid);
        let first = StepDiagnostics {
            time: initial.time,
            dt: T::zero(),
            mass,
            energy,
            global_entropy: global_entropy(initial, grid, &weights),
            max_entropy_residual: T::zero(),
            residual_scale: T::zero(),
            cfl_entropy_dt: T::infinity(),
        };
        let n = bumps.len();
        let mut acc = DiagnosticsAccumulator {
            weights,
            grid: grid.clone(),
            level,
            q,
            bumps,
            bv_time: [T::zero(); 2],
            bv_space: [T::zero(); 2],
            m_bound: T::one(),
            velocity_sums: [T::zero(); 2],
            pair_rm: vec![T::zero(); n],
            pair_re: vec![T::zero(); n],
            time_remainder: T::zero(),
            upwind_remainder: T::zero(),
            max_dt: T::zero(),
            last_dt: T::zero(),
            initial: first,
            steps: Vec::new(),
        };
        acc.update_bound(initial);
        acc
    }

    fn update_bound(&mut self, s: &State<T>) {
        let mut m = self.m_bound;
        for k in 0..s.n_cells() {
            m = m.max(s.rho[k]).max(T::one() / s.rho[k]).max(s.e[k]).max(T::one() / s.e[k]);
        }
        for &u in &s.u {
            m = m.max(u.abs());
        }
        self.m_bound = m;
    }

    fn add_level(&mut self, s: &State<T>, dt: T) {
        let g = &self.grid;
        let q_conj = self.q / (self.q - T::one());
        for k in 1..g.n_cells {
            self.bv_space[0] = self.bv_space[0] + dt * (s.rho[k] - s.rho[k - 1]).abs();
            self.bv_space[1] = self.bv_space[1] + dt * (s.e[k] - s.e[k - 1]).abs();
        }
        for k in 0..g.n_cells {
            let hk = g.cell_measure(k);
            let du = ((s.u[k + 1] - s.u[k]) / hk).abs();
            self.velocity_sums[0] = self.velocity_sums[0] + dt * hk * T::two() * du.powf(self.q);
            self.velocity_sums[1] = self.velocity_sums[1] + dt * hk * T::two() * du.powf(q_conj);
        }
    }

    /// Record the step `old -> new`; `flux` holds the face values and mass
    /// fluxes the scheme used at the level of this accumulator. Returns the
    /// step scalars and the per-cell entropy residual.
    pub fn record_step(
        &mut self,
        old: &State<T>,
        new: &State<T>,
        flux: &FluxSet<T>,
        dt: T,
    ) -> (StepDiagnostics<T>, Vec<T>) {
        let w = self.weights;
        let grid = self.grid.clone();
        let g = &grid;
        let residual = entropy_residual_field(old, new, flux, g, dt, &w, self.level);
        let mut eta_max = T::zero();
        for k in 0..g.n_cells {
            eta_max = eta_max.max(w.eta(old.rho[k], old.e[k]).abs()).max(w.eta(new.rho[k], new.e[k]).abs());
        }
        let h_min = g.cell_measures().iter().fold(T::infinity(), |m, &v| m.min(v));
        let upwind_old = assemble_mass_fluxes(old, g, Reconstruction::Upwind, w.gamma);
        let (mass, energy) = totals(new, g);
        let diag = StepDiagnostics {
            time: new.time,
            dt,
            mass,
            energy,
            global_entropy: global_entropy(new, g, &w),
            max_entropy_residual: residual.iter().fold(T::neg_infinity(), |m, &v| m.max(v)),
            residual_scale: h_min / dt * eta_max,
            cfl_entropy_dt: entropy_cfl_dt(old, &upwind_old, new, g, &w),
        };

        for k in 0..g.n_cells {
            let hk = g.cell_measure(k);
            self.bv_time[0] = self.bv_time[0] + hk * (new.rho[k] - old.rho[k]).abs();
            self.bv_time[1] = self.bv_time[1] + hk * (new.e[k] - old.e[k]).abs();
        }
        self.add_level(old, dt);
        self.update_bound(new);

        let (level_state, u, t) = match self.level {
            TimeLevel::Implicit => (new, &new.u, new.time),
            TimeLevel::Explicit => (old, &old.u, old.time),
        };
        let (rm, re) = face_remainders(level_state, flux, u, &w);
        for j in 0..self.bumps.len() {
            let mut sm = T::zero();
            let mut se = T::zero();
            for k in 0..g.n_cells {
                let psi = self.bumps.psi(j, g.cell_centers[k], t);
                sm = sm + rm[k] * psi;
                se = se + re[k] * psi;
            }
            self.pair_rm[j] = self.pair_rm[j] + dt * sm;
            self.pair_re[j] = self.pair_re[j] + dt * se;
        }

        let (pr, pe) = (w.phi_rho(), w.phi_e());
        let f = &flux.f_primal;
        for k in 0..g.n_cells {
            let div_f = f[k + 1] - f[k];
            let e_flux = f[k + 1] * (flux.e_face[k + 1] - old.e[k]) - f[k] * (flux.e_face[k] - old.e[k]);
            let r2 = (pr.d1(new.rho[k]) - pr.d1(old.rho[k])) * div_f
                + (pe.d1(new.e[k]) - pe.d1(old.e[k])) * e_flux;
            self.time_remainder = self.time_remainder + dt * r2.abs();
            let rho_mid = mean_value_point(pr, old.rho[k], new.rho[k]);
            let r01 = pr.d2(rho_mid) * (new.rho[k] - old.rho[k]) * old.rho[k] * (old.u[k + 1] - old.u[k]);
            self.upwind_remainder = self.upwind_remainder + dt * r01.abs();
        }
        self.max_dt = self.max_dt.max(dt);
        self.last_dt = dt;
        self.steps.push(diag.clone());
        (diag, residual)
    }

    pub fn steps(&self) -> &[StepDiagnostics<T>] {
        &self.steps
    }

    pub fn finish(mut self, final_state: &State<T>, metrics: &MeshMetrics<T>) -> DiagnosticsReport<T> {
        let dt = self.last_dt;
        self.add_level(final_state, dt);
        let surrogate = |pairs: &[T], other: Option<&[T]>| {
            (0..self.bumps.len()).fold(T::zero(), |best, j| {
                let v = pairs[j] + other.map_or(T::zero(), |o| o[j]);
                best.max(v.abs() / self.bumps.grad_sup(j))
            })
        };
        let q_conj = self.q / (self.q - T::one());
        let norms = RunNorms {
            bv_time_rho: self.bv_time[0],
            bv_time_e: self.bv_time[1],
            bv_space_rho: self.bv_space[0],
            bv_space_e: self.bv_space[1],
            velocity_norm_q: self.velocity_sums[0].powf(T::one() / self.q),
            velocity_norm_q_conjugate: self.velocity_sums[1].powf(T::one() / q_conj),
            q: self.q,
            m_bound: self.m_bound,
            max_dt: self.max_dt,
            measured_delta_rm: surrogate(&self.pair_rm, None),
            measured_delta_re: surrogate(&self.pair_re, None),
            measured_face_remainder: surrogate(&self.pair_rm, Some(&self.pair_re)),
            measured_time_remainder: self.time_remainder,
            measured_upwind_remainder: self.upwind_remainder,
        };
        let audits = theorem_bound_audit(&norms, &self.weights, metrics);
        DiagnosticsReport {
            initial: self.initial,
            steps: self.steps,
            dual_norm_surrogate: norms.measured_face_remainder,
            norms,
            audits,
        }
    }
}

//! Kinetic energy bookkeeping of the upwind momentum convection on the dual
//! mesh: per dual cell remainders and their dispatch to primal cells.

use crate::grid::Grid;
use crate::real::Real;

/// Upwind value at the dual face located at the center of cell `k`.
pub(crate) fn dual_upwind<T: Real>(u: &[T], g: &[T], k: usize) -> T {
    if g[k] >= T::zero() {
        u[k]
    } else {
        u[k + 1]
    }
}

/// `-½ G_R (u_i - u_R)^2 + ½ G_L (u_i - u_L)^2` at interior face `i`, with
/// upwind values taken from `u_src`.
pub(crate) fn upwind_dissipation<T: Real>(u_i: T, u_src: &[T], g: &[T], i: usize) -> T {
    let ur = dual_upwind(u_src, g, i);
    let ul = dual_upwind(u_src, g, i - 1);
    -T::half() * g[i] * (u_i - ur) * (u_i - ur) + T::half() * g[i - 1] * (u_i - ul) * (u_i - ul)
}

/// Kinetic energy carried through the two outermost dual faces, which the
/// wall dual cells do not absorb. Both values are nonnegative.
pub(crate) fn wall_strips<T: Real>(u_src: &[T], g: &[T]) -> (T, T) {
    let n = g.len();
    let left = T::half() * g[0].neg_part() * u_src[1] * u_src[1];
    let right = T::half() * g[n - 1].max(T::zero()) * u_src[n - 1] * u_src[n - 1];
    (left, right)
}

/// Cell source densities from per-face integrated remainders: half of each
/// interior value to each neighbour, wall strips entirely to the wall cell.
pub(crate) fn dispatch<T: Real>(face: &[T], strips: (T, T), grid: &Grid<T>) -> Vec<T> {
    let n = grid.n_cells;
    let mut w = vec![T::zero(); n];
    for i in 1..n {
        let half = T::half() * face[i];
        w[i - 1] = w[i - 1] + half;
        w[i] = w[i] + half;
    }
    w[0] = w[0] + strips.0;
    w[n - 1] = w[n - 1] + strips.1;
    (0..n).map(|k| w[k] / grid.cell_measure(k)).collect()
}

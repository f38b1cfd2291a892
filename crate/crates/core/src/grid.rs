//! One-dimensional primal mesh with its staggered dual mesh.
//!
//! Face `i` sits at `face_positions[i]` and separates cell `i - 1` (left)
//! from cell `i` (right). Faces `0` and `n_cells` lie on the walls. The dual
//! cell of an interior face spans the two adjacent half-cells; the dual cell
//! of a wall face is the single adjacent half-cell.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T: Real> {
    pub domain_left: T,
    pub domain_right: T,
    pub n_cells: usize,
    pub cell_centers: Vec<T>,
    pub face_positions: Vec<T>,
    pub cell_width: T,
    widths: Vec<T>,
    dual: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshMetrics<T: Real> {
    pub h_m: T,
    pub h_underline_m: T,
    pub c_m: T,
    pub f_m: usize,
}

/// Uniform partition of `[domain_left, domain_right]` into `n_cells` cells.
pub fn build_uniform_grid<T: Real>(domain_left: T, domain_right: T, n_cells: usize) -> Result<Grid<T>> {
    if !(domain_right > domain_left) || !(domain_right - domain_left).is_finite() {
        return Err(Error::Config(format!(
            "domain length must be positive, got [{domain_left}, {domain_right}]"
        )));
    }
    if n_cells < 2 {
        return Err(Error::Config(format!("at least 2 cells are required, got {n_cells}")));
    }
    let n = T::from_usize_lossy(n_cells);
    let width = (domain_right - domain_left) / n;
    let face_positions: Vec<T> = (0..=n_cells)
        .map(|i| {
            if i == n_cells {
                domain_right
            } else {
                domain_left + (domain_right - domain_left) * T::from_usize_lossy(i) / n
            }
        })
        .collect();
    Ok(Grid::from_faces(face_positions, width))
}

impl<T: Real> Grid<T> {
    fn from_faces(face_positions: Vec<T>, cell_width: T) -> Self {
        let n_cells = face_positions.len() - 1;
        let widths: Vec<T> = face_positions.windows(2).map(|w| w[1] - w[0]).collect();
        let cell_centers = face_positions.windows(2).map(|w| T::half() * (w[0] + w[1])).collect();
        let dual = (0..=n_cells)
            .map(|i| {
                let left = if i > 0 { widths[i - 1] } else { T::zero() };
                let right = if i < n_cells { widths[i] } else { T::zero() };
                T::half() * (left + right)
            })
            .collect();
        Grid {
            domain_left: face_positions[0],
            domain_right: face_positions[n_cells],
            n_cells,
            cell_centers,
            face_positions,
            cell_width,
            widths,
            dual,
        }
    }

    pub fn n_faces(&self) -> usize {
        self.n_cells + 1
    }

    /// `|K|`.
    pub fn cell_measure(&self, k: usize) -> T {
        self.widths[k]
    }

    pub fn cell_measures(&self) -> &[T] {
        &self.widths
    }

    /// `|D_σ|`; half a cell for wall faces.
    pub fn dual_measure(&self, i: usize) -> T {
        self.dual[i]
    }

    pub fn dual_measures(&self) -> &[T] {
        &self.dual
    }

    pub fn is_boundary_face(&self, i: usize) -> bool {
        i == 0 || i == self.n_cells
    }

    pub fn interior_faces(&self) -> std::ops::Range<usize> {
        1..self.n_cells
    }

    /// Dual cell extent `(left, right)` of face `i`.
    pub fn dual_cell(&self, i: usize) -> (T, T) {
        let left = if i > 0 { self.cell_centers[i - 1] } else { self.domain_left };
        let right = if i < self.n_cells { self.cell_centers[i] } else { self.domain_right };
        (left, right)
    }

    pub fn length(&self) -> T {
        self.domain_right - self.domain_left
    }

    /// Index of the cell containing `x`, clamped to the mesh.
    pub fn locate(&self, x: T) -> usize {
        let idx = self.face_positions.partition_point(|&f| f <= x);
        idx.saturating_sub(1).min(self.n_cells - 1)
    }
}

/// Regularity quantities of the mesh in their general form (face measure 1 in 1D).
pub fn mesh_metrics<T: Real>(grid: &Grid<T>) -> MeshMetrics<T> {
    let face = T::one();
    let mut h_m = T::zero();
    let mut h_underline = T::infinity();
    let mut c_m = T::zero();
    for k in 0..grid.n_cells {
        let hk = grid.cell_measure(k);
        h_m = h_m.max(hk);
        h_underline = h_underline.min(hk / (face + face));
        c_m = c_m.max((face + face) * hk / hk);
    }
    MeshMetrics { h_m, h_underline_m: h_underline, c_m, f_m: 2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn four_cells_on_unit_interval() {
        let g = build_uniform_grid(0.0, 1.0, 4).unwrap();
        assert_eq!(g.cell_centers, vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(g.cell_width, 0.25);
        assert_eq!(g.n_faces(), 5);
        assert!(g.is_boundary_face(0) && g.is_boundary_face(4) && !g.is_boundary_face(2));
    }

    #[test]
    fn two_cells_have_one_interior_face() {
        let g = build_uniform_grid(0.0, 1.0, 2).unwrap();
        assert_eq!(g.interior_faces().collect::<Vec<_>>(), vec![1]);
        assert_eq!(g.face_positions[1], 0.5);
        assert_eq!(g.dual_cell(1), (0.25, 0.75));
        assert_eq!(g.dual_measure(1), 0.5);
    }

    #[test]
    fn width_for_two_thousand_cells() {
        let g = build_uniform_grid(0.0, 1.0, 2000).unwrap();
        assert_relative_eq!(g.cell_width, 5e-4, max_relative = 1e-15);
        let m = mesh_metrics(&g);
        assert_relative_eq!(m.h_m, 5e-4, max_relative = 1e-12);
        assert_eq!(m.f_m, 2);
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(matches!(build_uniform_grid(1.0, 1.0, 4), Err(Error::Config(_))));
        assert!(matches!(build_uniform_grid(1.0, 0.0, 4), Err(Error::Config(_))));
        assert!(matches!(build_uniform_grid(0.0, 1.0, 1), Err(Error::Config(_))));
    }

    #[test]
    fn metrics_of_uniform_grid() {
        let g = build_uniform_grid(0.0, 1.0, 4).unwrap();
        let m = mesh_metrics(&g);
        assert_eq!(m.h_m, 0.25);
        assert_eq!(m.h_underline_m, 0.125);
        assert_eq!(m.c_m, 2.0);
        assert_eq!(m.f_m, 2);
    }

    #[test]
    fn single_precision_grid() {
        let g = build_uniform_grid(0.0f32, 1.0, 4).unwrap();
        assert_eq!(g.cell_centers[1], 0.375f32);
    }

    #[test]
    fn locate_finds_containing_cell() {
        let g = build_uniform_grid(0.0, 1.0, 4).unwrap();
        assert_eq!(g.locate(0.0), 0);
        assert_eq!(g.locate(0.3), 1);
        assert_eq!(g.locate(0.999), 3);
        assert_eq!(g.locate(1.0), 3);
    }

    proptest! {
        #[test]
        fn dual_cells_tile_the_domain(l in -10.0f64..10.0, len in 0.01f64..50.0, n in 2usize..300) {
            let g = build_uniform_grid(l, l + len, n).unwrap();
            let total: f64 = g.dual_measures().iter().sum();
            prop_assert!((total - len).abs() <= 1e-12 * len * n as f64);
            prop_assert!(g.face_positions.windows(2).all(|w| w[1] > w[0]));
        }

        #[test]
        fn metrics_scale_with_the_domain(len in 0.01f64..50.0, lambda in 0.1f64..10.0, n in 2usize..200) {
            let a = mesh_metrics(&build_uniform_grid(0.0, len, n).unwrap());
            let b = mesh_metrics(&build_uniform_grid(0.0, lambda * len, n).unwrap());
            prop_assert!((b.h_m - lambda * a.h_m).abs() <= 1e-12 * b.h_m);
            prop_assert!((b.h_underline_m - lambda * a.h_underline_m).abs() <= 1e-12 * b.h_m);
            prop_assert!((a.c_m - 2.0).abs() < 1e-12 && (b.c_m - 2.0).abs() < 1e-12);
            prop_assert_eq!(a.f_m, b.f_m);
            prop_assert!(a.h_underline_m <= a.h_m);
        }
    }
}

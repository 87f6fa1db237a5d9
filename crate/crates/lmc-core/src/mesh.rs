//! Radial grid on `[0, R]` with exact `r^{N-1}`-weighted quadrature.
//!
//! The unknown of the whole crate is a per-cell slope field `v` (the discrete
//! `u'`); the profile `u` is recovered by integrating from `r = R` where the
//! Dirichlet condition `u(R) = 0` holds. Keeping the slopes as the primal
//! variable makes the area energy and the constraint `|u'| <= 1` separable
//! per cell, so the proximal step reduces to a scalar solve.
//!
//! Cell weights are exact antiderivative differences `(r_j^N - r_{j-1}^N)/N`,
//! not midpoint quadrature: sums of weighted squares of piecewise-constant
//! slopes are then exact integrals. Node (dual-cell) weights integrate
//! `r^{N-1}` between neighboring midpoints so that both weight families sum
//! to `R^N / N`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slopes within this distance of `±1` are treated as touching the gradient
/// constraint boundary.
pub const SLOPE_BOUND_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("dimension must be at least 3 (got {0})")]
    DimensionTooSmall(u32),
    #[error("radius must be positive (got {0})")]
    NonPositiveRadius(f64),
    #[error("at least one cell is required")]
    NoCells,
    #[error("grading exponent must be positive (got {0})")]
    BadGrading(f64),
    #[error("slope field has {got} cells, mesh has {want}")]
    SlopeLengthMismatch { got: usize, want: usize },
    #[error("profile has {got} nodes, mesh has {want}")]
    ProfileLengthMismatch { got: usize, want: usize },
    #[error("slope {value} at cell {cell} leaves the constraint set |v| <= 1")]
    SlopeOutOfRange { cell: usize, value: f64 },
    #[error("p-norm exponent must satisfy p >= 1 (got {0})")]
    BadExponent(f64),
}

/// Node placement on `[0, R]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Grading {
    Uniform,
    /// `r_j = R (j/M)^gamma`; `gamma > 1` clusters nodes at the origin where
    /// the weight `r^{N-1}` degenerates. `gamma = 1` reproduces `Uniform`.
    GradedAtOrigin { gamma: f64 },
}

/// Radial grid with exact weighted quadrature.
///
/// Nodes `0 = r_0 < r_1 < ... < r_M = R`; cell `j` spans `[r_j, r_{j+1}]`
/// (0-based, `M` cells, `M + 1` nodes).
#[derive(Debug, Clone)]
pub struct RadialMesh {
    dim: u32,
    radius: f64,
    nodes: Vec<f64>,
    cell_widths: Vec<f64>,
    cell_weights: Vec<f64>,
    node_weights: Vec<f64>,
}

fn pow_n(r: f64, n: u32) -> f64 {
    r.powi(n as i32)
}

impl RadialMesh {
    /// Build a mesh with `cells >= 1`. Dimension below 3 is rejected: the
    /// Hardy inequality that controls the `r^{N-3}` weight needs `N >= 3`.
    ///
    /// A single-cell mesh is degenerate but valid; tests use it because its
    /// quadrature is exact and hand-checkable.
    pub fn new(dim: u32, radius: f64, cells: usize, grading: Grading) -> Result<Self, MeshError> {
        if dim < 3 {
            return Err(MeshError::DimensionTooSmall(dim));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(MeshError::NonPositiveRadius(radius));
        }
        if cells == 0 {
            return Err(MeshError::NoCells);
        }
        let gamma = match grading {
            Grading::Uniform => 1.0,
            Grading::GradedAtOrigin { gamma } => {
                if !(gamma > 0.0) || !gamma.is_finite() {
                    return Err(MeshError::BadGrading(gamma));
                }
                gamma
            }
        };
        let m = cells;
        let mut nodes = Vec::with_capacity(m + 1);
        for j in 0..=m {
            let t = j as f64 / m as f64;
            let r = if gamma == 1.0 { radius * t } else { radius * t.powf(gamma) };
            nodes.push(r);
        }
        nodes[0] = 0.0;
        nodes[m] = radius;

        let n = dim;
        let cell_widths: Vec<f64> = (0..m).map(|j| nodes[j + 1] - nodes[j]).collect();
        let cell_weights: Vec<f64> = (0..m)
            .map(|j| (pow_n(nodes[j + 1], n) - pow_n(nodes[j], n)) / n as f64)
            .collect();

        // Dual cell of node i: [midpoint(i-1, i), midpoint(i, i+1)], with the
        // half cells at both ends. Exact integral of r^{N-1} over each.
        let mut node_weights = Vec::with_capacity(m + 1);
        for i in 0..=m {
            let lo = if i == 0 { 0.0 } else { 0.5 * (nodes[i - 1] + nodes[i]) };
            let hi = if i == m { radius } else { 0.5 * (nodes[i] + nodes[i + 1]) };
            node_weights.push((pow_n(hi, n) - pow_n(lo, n)) / n as f64);
        }

        Ok(Self { dim, radius, nodes, cell_widths, cell_weights, node_weights })
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn n_cells(&self) -> usize {
        self.cell_widths.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn cell_widths(&self) -> &[f64] {
        &self.cell_widths
    }

    /// Exact `∫_{cell j} r^{N-1} dr`.
    pub fn cell_weights(&self) -> &[f64] {
        &self.cell_weights
    }

    /// Exact `∫_{dual cell i} r^{N-1} dr`.
    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    /// Exact `∫_{dual cell i} r^{N-3} dr` (finite at the origin for `N >= 3`),
    /// the weight family used to probe the Hardy inequality.
    pub fn hardy_node_weights(&self) -> Vec<f64> {
        let m = self.n_cells();
        let p = self.dim - 2; // integrate r^{p-1}
        (0..=m)
            .map(|i| {
                let lo = if i == 0 { 0.0 } else { 0.5 * (self.nodes[i - 1] + self.nodes[i]) };
                let hi = if i == m {
                    self.radius
                } else {
                    0.5 * (self.nodes[i] + self.nodes[i + 1])
                };
                (pow_n(hi, p) - pow_n(lo, p)) / p as f64
            })
            .collect()
    }

    /// `<a, b>_H = Σ_j w_j a_j b_j` on raw per-cell slope vectors.
    pub fn h_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.n_cells());
        debug_assert_eq!(b.len(), self.n_cells());
        self.cell_weights
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    pub fn h_norm_sq_of(&self, slopes: &[f64]) -> f64 {
        self.h_inner(slopes, slopes)
    }

    /// Weighted `L^p` norm `(Σ_i ω_i |u_i|^p)^{1/p}` of nodal values.
    pub fn lp_norm_of(&self, node_values: &[f64], p: f64) -> Result<f64, MeshError> {
        if !(p >= 1.0) {
            return Err(MeshError::BadExponent(p));
        }
        if node_values.len() != self.n_nodes() {
            return Err(MeshError::ProfileLengthMismatch {
                got: node_values.len(),
                want: self.n_nodes(),
            });
        }
        let s: f64 = self
            .node_weights
            .iter()
            .zip(node_values.iter())
            .map(|(w, u)| w * u.abs().powf(p))
            .sum();
        Ok(s.powf(1.0 / p))
    }

    /// Integrate nodal samples against the dual-cell weights: `Σ_i ω_i g_i`.
    pub fn node_quadrature(&self, node_values: &[f64]) -> f64 {
        debug_assert_eq!(node_values.len(), self.n_nodes());
        self.node_weights.iter().zip(node_values.iter()).map(|(w, g)| w * g).sum()
    }
}

/// Per-cell slope values; the discrete unknown.
///
/// Fields built through [`SlopeField::new`] are certified members of the
/// constraint set `K` (`sup |v_j| <= 1`). [`SlopeField::new_unconstrained`]
/// admits arbitrary finite slopes and represents a generic element of the
/// weighted Sobolev space; norms and reconstruction still apply, but the
/// area energy is only finite on `K`.
#[derive(Debug, Clone)]
pub struct SlopeField {
    mesh: Arc<RadialMesh>,
    values: Vec<f64>,
}

impl SlopeField {
    /// A field in `K`. Values within `SLOPE_BOUND_TOL` of the bound are
    /// clamped onto it; anything farther out is rejected.
    pub fn new(mesh: Arc<RadialMesh>, mut values: Vec<f64>) -> Result<Self, MeshError> {
        if values.len() != mesh.n_cells() {
            return Err(MeshError::SlopeLengthMismatch {
                got: values.len(),
                want: mesh.n_cells(),
            });
        }
        for (j, v) in values.iter_mut().enumerate() {
            if !v.is_finite() || v.abs() > 1.0 + SLOPE_BOUND_TOL {
                return Err(MeshError::SlopeOutOfRange { cell: j, value: *v });
            }
            *v = v.clamp(-1.0, 1.0);
        }
        Ok(Self { mesh, values })
    }

    /// A raw slope vector, not necessarily in `K`.
    pub fn new_unconstrained(mesh: Arc<RadialMesh>, values: Vec<f64>) -> Result<Self, MeshError> {
        if values.len() != mesh.n_cells() {
            return Err(MeshError::SlopeLengthMismatch {
                got: values.len(),
                want: mesh.n_cells(),
            });
        }
        Ok(Self { mesh, values })
    }

    /// Constant slope `c` on every cell (`c = -1` gives the cone profile
    /// `u(r) = R - r` after reconstruction).
    pub fn constant(mesh: Arc<RadialMesh>, c: f64) -> Result<Self, MeshError> {
        let n = mesh.n_cells();
        Self::new(mesh, vec![c; n])
    }

    pub fn zero(mesh: Arc<RadialMesh>) -> Self {
        let n = mesh.n_cells();
        Self { mesh, values: vec![0.0; n] }
    }

    pub fn mesh(&self) -> &Arc<RadialMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn in_constraint_set(&self) -> bool {
        self.sup_abs() <= 1.0 + SLOPE_BOUND_TOL
    }

    /// `Σ_j w_j v_j^2`, exact for piecewise-constant slopes.
    pub fn h_norm_sq(&self) -> f64 {
        self.mesh.h_norm_sq_of(&self.values)
    }

    pub fn h_norm(&self) -> f64 {
        self.h_norm_sq().sqrt()
    }

    pub fn h_inner(&self, other: &SlopeField) -> f64 {
        self.mesh.h_inner(&self.values, &other.values)
    }

    /// Integrate slopes inward from `u(R) = 0`: `u_i = u_{i+1} - v_i Δr_i`.
    /// Linear in `v`, exact.
    pub fn reconstruct(&self) -> RadialProfile {
        let m = self.mesh.n_cells();
        let widths = self.mesh.cell_widths();
        let mut u = vec![0.0; m + 1];
        for i in (0..m).rev() {
            u[i] = u[i + 1] - self.values[i] * widths[i];
        }
        RadialProfile { mesh: Arc::clone(&self.mesh), values: u }
    }

    /// `a + t (b - a)` per cell; stays in `K` for `t ∈ [0, 1]` by convexity.
    pub fn lerp(a: &SlopeField, b: &SlopeField, t: f64) -> SlopeField {
        let values = a
            .values
            .iter()
            .zip(b.values.iter())
            .map(|(x, y)| x + t * (y - x))
            .collect();
        SlopeField { mesh: Arc::clone(&a.mesh), values }
    }

    /// Scale all slopes by `c`; shrinking (`|c| <= 1`) stays in `K`.
    pub fn scaled(&self, c: f64) -> SlopeField {
        SlopeField {
            mesh: Arc::clone(&self.mesh),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn sup_distance(&self, other: &SlopeField) -> f64 {
        let ua = self.reconstruct();
        let ub = other.reconstruct();
        ua.values
            .iter()
            .zip(ub.values.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Per-node values with `u(R) = 0`.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    mesh: Arc<RadialMesh>,
    values: Vec<f64>,
}

impl RadialProfile {
    /// Wrap nodal samples; the boundary node is forced to 0 (profiles live in
    /// the space of functions vanishing at `R`).
    pub fn from_node_values(mesh: Arc<RadialMesh>, mut values: Vec<f64>) -> Result<Self, MeshError> {
        if values.len() != mesh.n_nodes() {
            return Err(MeshError::ProfileLengthMismatch {
                got: values.len(),
                want: mesh.n_nodes(),
            });
        }
        let last = values.len() - 1;
        values[last] = 0.0;
        Ok(Self { mesh, values })
    }

    pub fn mesh(&self) -> &Arc<RadialMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn lp_norm(&self, p: f64) -> Result<f64, MeshError> {
        self.mesh.lp_norm_of(&self.values, p)
    }

    pub fn sup_distance(&self, other: &RadialProfile) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Difference quotients per cell. Values are clamped to `[-1, 1]` so that
    /// profiles sampled from trajectories with `|u'| < 1` stay in `K` despite
    /// rounding.
    pub fn slope_field(&self) -> SlopeField {
        let widths = self.mesh.cell_widths();
        let values: Vec<f64> = (0..self.mesh.n_cells())
            .map(|j| {
                let v = (self.values[j + 1] - self.values[j]) / widths[j];
                v.clamp(-1.0, 1.0)
            })
            .collect();
        SlopeField { mesh: Arc::clone(&self.mesh), values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mesh(n: u32, r: f64, m: usize) -> Arc<RadialMesh> {
        Arc::new(RadialMesh::new(n, r, m, Grading::Uniform).unwrap())
    }

    #[test]
    fn rejects_low_dimension() {
        assert!(RadialMesh::new(2, 1.0, 10, Grading::Uniform).is_err());
    }

    #[test]
    fn single_cell_weight_is_exact() {
        // N=3, R=1, one cell: ∫_0^1 r^2 dr = 1/3.
        let m = mesh(3, 1.0, 1);
        assert_eq!(m.cell_weights().len(), 1);
        assert!((m.cell_weights()[0] - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn cell_weights_telescope_to_rn_over_n() {
        for (n, r, m, want) in [
            (3, 2.0, 17, 8.0 / 3.0),
            (5, 1.0, 100, 0.2),
            (4, 1.5, 33, 1.5_f64.powi(4) / 4.0),
        ] {
            let mesh = mesh(n, r, m);
            let total: f64 = mesh.cell_weights().iter().sum();
            assert!((total - want).abs() < 1e-12 * want.max(1.0), "n={n} got {total}");
            let node_total: f64 = mesh.node_weights().iter().sum();
            assert!((node_total - want).abs() < 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn graded_mesh_clusters_at_origin_and_keeps_sums() {
        let g = RadialMesh::new(3, 1.0, 64, Grading::GradedAtOrigin { gamma: 2.0 }).unwrap();
        assert!(g.nodes()[1] < 1.0 / 64.0);
        let total: f64 = g.cell_weights().iter().sum();
        assert!((total - 1.0 / 3.0).abs() < 1e-14);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn reconstruct_constant_negative_slope_gives_cone() {
        // v ≡ -1 on R=1 reconstructs u(r) = 1 - r.
        let m = mesh(3, 1.0, 50);
        let v = SlopeField::constant(Arc::clone(&m), -1.0).unwrap();
        let u = v.reconstruct();
        for (r, ui) in m.nodes().iter().zip(u.values()) {
            assert!((ui - (1.0 - r)).abs() < 1e-14);
        }
        // Mirror: v ≡ +1 gives r - 1.
        let w = SlopeField::constant(Arc::clone(&m), 1.0).unwrap();
        let uw = w.reconstruct();
        for (a, b) in u.values().iter().zip(uw.values()) {
            assert!((a + b).abs() < 1e-14);
        }
    }

    #[test]
    fn h_norm_of_unit_slope_is_rn_over_n() {
        let m = mesh(4, 2.0, 40);
        let v = SlopeField::constant(Arc::clone(&m), 1.0).unwrap();
        let want = 2.0_f64.powi(4) / 4.0;
        assert!((v.h_norm_sq() - want).abs() < 1e-12);
        let z = SlopeField::zero(m);
        assert_eq!(z.h_norm_sq(), 0.0);
    }

    #[test]
    fn h_norm_of_parabola_slopes_matches_exact_integral() {
        // u(r) = 1 - r^2 has u' = -2r, not in K; ∫_0^1 r^2 (2r)^2 dr = 4/5.
        // Exact slopes are replaced by cell averages, so compare at the
        // quadrature order.
        let m = mesh(3, 1.0, 400);
        let slopes: Vec<f64> = (0..m.n_cells())
            .map(|j| {
                let a = m.nodes()[j];
                let b = m.nodes()[j + 1];
                -(a + b) // cell average of -2r
            })
            .collect();
        let v = SlopeField::new_unconstrained(Arc::clone(&m), slopes).unwrap();
        assert!((v.h_norm_sq() - 0.8).abs() < 1e-5);
    }

    #[test]
    fn lp_norm_examples() {
        let m = mesh(3, 1.0, 500);
        let ones = vec![1.0; m.n_nodes()];
        // u ≡ 1, p = 1: ∫_0^1 r^2 dr = 1/3 (boundary value is irrelevant to
        // the weight sums, so use the raw mesh quadrature).
        let n1 = m.lp_norm_of(&ones, 1.0).unwrap();
        assert!((n1 - 1.0 / 3.0).abs() < 1e-12);

        // u(r) = 1 - r, p = 2: sqrt(∫ r^2 (1-r)^2) = sqrt(1/30).
        let v = SlopeField::constant(Arc::clone(&m), -1.0).unwrap();
        let u = v.reconstruct();
        let n2 = u.lp_norm(2.0).unwrap();
        assert!((n2 - (1.0 / 30.0_f64).sqrt()).abs() < 1e-6);

        let z = SlopeField::zero(m).reconstruct();
        assert_eq!(z.lp_norm(2.0).unwrap(), 0.0);
    }

    #[test]
    fn lp_norm_refinement_converges_at_quadrature_order() {
        // Smooth profile u(r) = cos(pi r / 2); compare against a fine oracle.
        let exact = {
            let fine = mesh(3, 1.0, 1 << 14);
            let u: Vec<f64> =
                fine.nodes().iter().map(|r| (std::f64::consts::FRAC_PI_2 * r).cos()).collect();
            fine.lp_norm_of(&u, 2.0).unwrap()
        };
        let err = |cells: usize| {
            let m = mesh(3, 1.0, cells);
            let u: Vec<f64> =
                m.nodes().iter().map(|r| (std::f64::consts::FRAC_PI_2 * r).cos()).collect();
            (m.lp_norm_of(&u, 2.0).unwrap() - exact).abs()
        };
        let e1 = err(50);
        let e2 = err(100);
        assert!(e2 < e1 / 2.5, "refinement did not reduce error: {e1} -> {e2}");
    }

    #[test]
    fn slope_field_round_trip() {
        let m = mesh(3, 1.0, 30);
        let vals: Vec<f64> = (0..30).map(|j| ((j * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let v = SlopeField::new(Arc::clone(&m), vals.clone()).unwrap();
        let back = v.reconstruct().slope_field();
        for (a, b) in vals.iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constraint_validation() {
        let m = mesh(3, 1.0, 4);
        assert!(SlopeField::new(Arc::clone(&m), vec![0.0, 1.0, -1.0, 0.5]).is_ok());
        assert!(matches!(
            SlopeField::new(Arc::clone(&m), vec![0.0, 1.1, 0.0, 0.0]),
            Err(MeshError::SlopeOutOfRange { cell: 1, .. })
        ));
        assert!(SlopeField::new(Arc::clone(&m), vec![0.0; 3]).is_err());
    }

    proptest! {
        // Any field in K reconstructs to a profile bounded by R across
        // dimensions and gradings.
        #[test]
        fn profiles_from_k_are_bounded_by_radius(
            seed in 0u64..1000,
            n in 3u32..6,
            cells in 1usize..60,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let r = rng.gen_range(0.3..3.0);
            let mesh = Arc::new(RadialMesh::new(n, r, cells, Grading::Uniform).unwrap());
            let vals: Vec<f64> = (0..cells).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let v = SlopeField::new(Arc::clone(&mesh), vals).unwrap();
            let u = v.reconstruct();
            prop_assert!(u.sup_abs() <= r + 1e-12);
            prop_assert!(u.values().last().unwrap().abs() == 0.0);
        }
    }
}

//! The nonsmooth energy `I = Psi + F` in slope coordinates, its smooth-part
//! gradient, the proximal map of `Psi`, and the two residuals (prox
//! fixed-point gap and weak-form defect) used to certify critical points.
//!
//! `Psi(v) = Σ_j w_j (1 - sqrt(1 - v_j^2))` is exact given the exact cell
//! weights. The smooth part
//!
//! ```text
//! F(v) = -(lambda/q) Σ_i ω_i b_i |u_i^±|^q - Σ_i ω_i F̂^±(r_i, u_i),
//! ```
//!
//! uses dual-cell node quadrature, which keeps the gradient the exact adjoint
//! of the linear reconstruction `v -> u`: node loads flow back to cells by
//! prefix sums.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::mesh::{RadialMesh, SlopeField};
use crate::problem::{Branch, Nonlinearity, ProblemSpec};

/// Scalar optimality residual target of the per-cell prox solve.
pub const PROX_TOL: f64 = 1e-13;

/// A slope field this close to the constraint boundary makes the weak-form
/// integrand singular.
pub const SINGULAR_SLOPE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("slope field touches the constraint boundary (sup |v| = {sup}); \
             the weak-form integrand is singular")]
    SingularSlope { sup: f64 },
}

/// Symmetric tridiagonal Newton system in nodal coordinates: gradient plus
/// the diagonal and (upper = lower) off-diagonal of the Hessian.
#[derive(Debug, Clone)]
pub struct NodalSystem {
    pub grad: Vec<f64>,
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

/// Value of the energy split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    /// Area term `Σ_j w_j (1 - sqrt(1 - v_j^2))`, in `[‖v‖²/2, ‖v‖²]`.
    pub psi: f64,
    /// Concave term `(lambda/q) ∫ r^{N-1} b |u^±|^q`.
    pub q_term: f64,
    /// Superlinear term `∫ r^{N-1} F̂^±(r, u)`.
    pub f_term: f64,
    /// `psi - q_term - f_term`.
    pub total: f64,
}

/// Branch truncation of `f`: identity on the working range, linear ramp to
/// zero on one unit past `±R`, zero beyond and on the opposite sign
/// (`Positive`/`Negative`), or two-sided (`Full`).
pub fn truncated_f(nl: &Nonlinearity, branch: Branch, radius: f64, r: f64, s: f64) -> f64 {
    let ramp_up = |s: f64| -nl.eval(r, radius) * (s - radius - 1.0);
    let ramp_down = |s: f64| nl.eval(r, -radius) * (s + radius + 1.0);
    match branch {
        Branch::Positive => {
            if s < 0.0 || s >= radius + 1.0 {
                0.0
            } else if s <= radius {
                nl.eval(r, s)
            } else {
                ramp_up(s)
            }
        }
        Branch::Negative => {
            if s > 0.0 || s <= -radius - 1.0 {
                0.0
            } else if s >= -radius {
                nl.eval(r, s)
            } else {
                ramp_down(s)
            }
        }
        Branch::Full => {
            if s.abs() >= radius + 1.0 {
                0.0
            } else if s.abs() <= radius {
                nl.eval(r, s)
            } else if s > 0.0 {
                ramp_up(s)
            } else {
                ramp_down(s)
            }
        }
    }
}

/// Antiderivative `∫_0^s` of [`truncated_f`].
pub fn truncated_big_f(nl: &Nonlinearity, branch: Branch, radius: f64, r: f64, s: f64) -> f64 {
    let pos = |s: f64| -> f64 {
        if s <= 0.0 {
            0.0
        } else if s <= radius {
            nl.eval_integral(r, s)
        } else {
            let fr = nl.eval(r, radius);
            let base = nl.eval_integral(r, radius);
            if s < radius + 1.0 {
                base + fr * (1.0 - (s - radius - 1.0).powi(2)) / 2.0
            } else {
                base + fr / 2.0
            }
        }
    };
    let neg = |s: f64| -> f64 {
        if s >= 0.0 {
            0.0
        } else if s >= -radius {
            nl.eval_integral(r, s)
        } else {
            let fr = nl.eval(r, -radius);
            let base = nl.eval_integral(r, -radius);
            if s > -radius - 1.0 {
                base + fr * ((s + radius + 1.0).powi(2) - 1.0) / 2.0
            } else {
                base - fr / 2.0
            }
        }
    };
    match branch {
        Branch::Positive => pos(s),
        Branch::Negative => neg(s),
        Branch::Full => {
            if s >= 0.0 {
                pos(s)
            } else {
                neg(s)
            }
        }
    }
}

/// Solve `argmin_{v in [-1,1]} (1 - sqrt(1 - v^2)) + (v - z)^2 / (2 tau)`.
///
/// The interior optimality equation `v / sqrt(1 - v^2) + (v - z)/tau = 0` is
/// strictly monotone, so the root is unique and always interior. Safeguarded
/// Newton with a bisection fallback keeps the iterate inside the open
/// interval.
pub fn prox_scalar(z: f64, tau: f64) -> f64 {
    debug_assert!(tau > 0.0);
    if z == 0.0 {
        return 0.0;
    }
    let phi = |v: f64| v / (1.0 - v * v).sqrt();
    let dphi = |v: f64| (1.0 - v * v).powf(-1.5);
    let h = |v: f64| phi(v) + (v - z) / tau;

    let (mut lo, mut hi) = if z > 0.0 { (0.0, 1.0 - 1e-16) } else { (-1.0 + 1e-16, 0.0) };
    // smooth initial guess mapping R onto (-1, 1)
    let w = z / (1.0 + tau);
    let mut v = w / (1.0 + w * w).sqrt();
    v = v.clamp(lo + 1e-17, hi - 1e-17);
    let tol = PROX_TOL * (1.0 + z.abs() / tau);
    for _ in 0..80 {
        let hv = h(v);
        if hv.abs() <= tol {
            return v;
        }
        if hv > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let step = hv / (dphi(v) + 1.0 / tau);
        let mut next = v - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - v).abs() < 1e-18 && (hi - lo) < 1e-16 {
            return next;
        }
        v = next;
    }
    v
}

/// Per-cell prox of the area term; cell weights cancel between `Psi` and the
/// weighted metric, so the solve is the same scalar problem in every cell.
pub fn prox_psi(z: &[f64], tau: f64) -> Vec<f64> {
    z.iter().map(|&zj| prox_scalar(zj, tau)).collect()
}

/// Discrete energy of one problem instance on one mesh, with the weight `b`
/// pre-sampled at the nodes.
#[derive(Debug, Clone)]
pub struct EnergyModel {
    mesh: Arc<RadialMesh>,
    spec: ProblemSpec,
    b_nodes: Vec<f64>,
}

impl EnergyModel {
    pub fn new(mesh: Arc<RadialMesh>, spec: ProblemSpec) -> Self {
        let b_nodes = mesh.nodes().iter().map(|&r| spec.weight_b.eval(r)).collect();
        Self { mesh, spec, b_nodes }
    }

    pub fn mesh(&self) -> &Arc<RadialMesh> {
        &self.mesh
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn branch(&self) -> Branch {
        self.spec.branch
    }

    /// `(|u^±|^q, d/du |u^±|^q / q)` for the active branch.
    fn q_density_and_slope(&self, u: f64) -> (f64, f64) {
        let q = self.spec.q;
        match self.spec.branch {
            Branch::Positive => {
                let up = u.max(0.0);
                (up.powf(q), up.powf(q - 1.0))
            }
            Branch::Negative => {
                let um = (-u).max(0.0);
                (um.powf(q), -(um.powf(q - 1.0)))
            }
            Branch::Full => {
                let a = u.abs();
                let slope = if u == 0.0 { 0.0 } else { u.signum() * a.powf(q - 1.0) };
                (a.powf(q), slope)
            }
        }
    }

    fn f_trunc(&self, r: f64, s: f64) -> f64 {
        truncated_f(&self.spec.nonlinearity, self.spec.branch, self.spec.radius, r, s)
    }

    fn big_f_trunc(&self, r: f64, s: f64) -> f64 {
        truncated_big_f(&self.spec.nonlinearity, self.spec.branch, self.spec.radius, r, s)
    }

    /// Right-hand side density `lambda b(r) |u|^{q-2} u^± + f^±(r, u)`.
    pub fn rhs_density(&self, r: f64, b: f64, u: f64) -> f64 {
        let (_, slope) = self.q_density_and_slope(u);
        self.spec.lambda * b * slope + self.f_trunc(r, u)
    }

    /// Area term; `+inf` outside the constraint set.
    pub fn psi(&self, v: &SlopeField) -> f64 {
        if !v.in_constraint_set() {
            return f64::INFINITY;
        }
        self.mesh
            .cell_weights()
            .iter()
            .zip(v.values())
            .map(|(w, &vj)| {
                let t = (vj * vj).min(1.0);
                w * (1.0 - (1.0 - t).sqrt())
            })
            .sum()
    }

    pub fn breakdown(&self, v: &SlopeField) -> EnergyBreakdown {
        let psi = self.psi(v);
        let u = v.reconstruct();
        let nodes = self.mesh.nodes();
        let omega = self.mesh.node_weights();
        let mut q_term = 0.0;
        let mut f_term = 0.0;
        for i in 0..nodes.len() {
            let (dens, _) = self.q_density_and_slope(u.values()[i]);
            q_term += omega[i] * self.b_nodes[i] * dens;
            f_term += omega[i] * self.big_f_trunc(nodes[i], u.values()[i]);
        }
        q_term *= self.spec.lambda / self.spec.q;
        EnergyBreakdown { psi, q_term, f_term, total: psi - q_term - f_term }
    }

    pub fn total(&self, v: &SlopeField) -> f64 {
        self.breakdown(v).total
    }

    /// Euclidean partials `∂F/∂v_j` of the smooth part, via the adjoint of
    /// the reconstruction map: node loads, then prefix sums scaled by the
    /// cell widths.
    pub fn grad_smooth(&self, v: &SlopeField) -> Vec<f64> {
        let u = v.reconstruct();
        self.grad_smooth_of_profile(u.values())
    }

    fn grad_smooth_of_profile(&self, u: &[f64]) -> Vec<f64> {
        let nodes = self.mesh.nodes();
        let omega = self.mesh.node_weights();
        let widths = self.mesh.cell_widths();
        let m = self.mesh.n_cells();
        let lambda = self.spec.lambda;
        // load_i = ∂F/∂u_i; the boundary node is pinned and carries no load
        let mut prefix = 0.0;
        let mut g = vec![0.0; m];
        for j in 0..m {
            let i = j; // nodes 0..=j feed cell j; accumulate node j here
            let (_, slope) = self.q_density_and_slope(u[i]);
            let load = -omega[i] * (lambda * self.b_nodes[i] * slope + self.f_trunc(nodes[i], u[i]));
            prefix += load;
            g[j] = -widths[j] * prefix;
        }
        g
    }

    /// Gradient in the weighted metric (`grad_smooth` divided by the cell
    /// weights); this is the representative whose prox fixed points are
    /// exactly the discrete critical points.
    pub fn h_gradient(&self, v: &SlopeField) -> Vec<f64> {
        let mut g = self.grad_smooth(v);
        for (gj, w) in g.iter_mut().zip(self.mesh.cell_weights()) {
            *gj /= w;
        }
        g
    }

    /// One prox-gradient step `prox_{tau Psi}(v - tau grad_H F(v))`.
    pub fn prox_gradient_step(&self, v: &SlopeField, tau: f64) -> SlopeField {
        let g = self.h_gradient(v);
        let z: Vec<f64> = v.values().iter().zip(g.iter()).map(|(vj, gj)| vj - tau * gj).collect();
        let p = prox_psi(&z, tau);
        SlopeField::new(Arc::clone(&self.mesh), p).expect("prox output is interior to K")
    }

    /// Fixed-point gap `‖v - prox_{tau Psi}(v - tau grad_H F(v))‖_H / tau`.
    ///
    /// Zero (up to the scalar solver tolerance) exactly when the discrete
    /// first-order criticality inequality holds against every discrete
    /// direction: per cell the prox optimality condition at a fixed point is
    /// `-∂F/∂v_j ∈ w_j ∂ψ(v_j)`.
    pub fn criticality_residual(&self, v: &SlopeField, tau: f64) -> f64 {
        let p = self.prox_gradient_step(v, tau);
        let diff: Vec<f64> =
            v.values().iter().zip(p.values()).map(|(a, b)| a - b).collect();
        self.mesh.h_norm_sq_of(&diff).sqrt() / tau
    }

    /// Gradient of the full energy (area term included) in the weighted
    /// metric: `psi'(v_j) + (∂F/∂v_j)/w_j`. Meaningful at interior fields
    /// (`sup |v| < 1`), where the area term is smooth.
    pub fn total_h_gradient(&self, v: &SlopeField) -> Vec<f64> {
        let mut g = self.h_gradient(v);
        for (gj, &vj) in g.iter_mut().zip(v.values()) {
            *gj += vj / (1.0 - vj * vj).max(f64::MIN_POSITIVE).sqrt();
        }
        g
    }

    /// Action of the full-energy Hessian on a cell direction `d`, in the
    /// weighted metric. The area part is diagonal (`psi''(v_j) d_j`); the
    /// smooth part pushes node curvature loads through the reconstruction
    /// adjoint. The scalar `u`-derivative of the rhs density is taken by
    /// central differences: the concave term's second derivative is unbounded
    /// at `u = 0` and saddle refinement only needs an approximate action.
    pub fn hessian_vec_h(&self, v: &SlopeField, d: &[f64]) -> Vec<f64> {
        let mesh = &self.mesh;
        let m = mesh.n_cells();
        let widths = mesh.cell_widths();
        let weights = mesh.cell_weights();
        let omega = mesh.node_weights();
        let nodes = mesh.nodes();
        let u = v.reconstruct();
        let uv = u.values();
        // du = B d
        let mut du = vec![0.0; m + 1];
        for i in (0..m).rev() {
            du[i] = du[i + 1] - d[i] * widths[i];
        }
        let scale_u = 1e-3 * self.spec.radius;
        let mut prefix = 0.0;
        let mut out = vec![0.0; m];
        for j in 0..m {
            let i = j;
            let b = self.b_nodes[i];
            let delta = 1e-6 * scale_u.max(uv[i].abs());
            let curv = (self.rhs_density(nodes[i], b, uv[i] + delta)
                - self.rhs_density(nodes[i], b, uv[i] - delta))
                / (2.0 * delta);
            prefix += -omega[i] * curv * du[i];
            let smooth = -widths[j] * prefix;
            let vj = v.values()[j];
            let psi2 = (1.0 - vj * vj).max(f64::MIN_POSITIVE).powf(-1.5);
            out[j] = psi2 * d[j] + smooth / weights[j];
        }
        out
    }

    /// Gradient and tridiagonal Hessian of the full energy in nodal
    /// coordinates (free nodes `0..M-1`, boundary node pinned). The area term
    /// contributes the classic stiffness stencil with coefficient
    /// `w_j psi''(v_j) / Δr_j^2`; the smooth part is diagonal with the nodal
    /// curvature `-ω_i h2'(u_i)` (central differences in `u`).
    pub fn nodal_newton_system(&self, v: &SlopeField) -> NodalSystem {
        let mesh = &self.mesh;
        let m = mesh.n_cells();
        let widths = mesh.cell_widths();
        let weights = mesh.cell_weights();
        let omega = mesh.node_weights();
        let nodes = mesh.nodes();
        let u = v.reconstruct();
        let uv = u.values();
        let vv = v.values();
        let phi = |s: f64| s / (1.0 - s * s).max(f64::MIN_POSITIVE).sqrt();
        let phi_d = |s: f64| (1.0 - s * s).max(f64::MIN_POSITIVE).powf(-1.5);
        let scale_u = 1e-3 * self.spec.radius;

        let mut grad = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut off = vec![0.0; m - 1];
        for i in 0..m {
            let right = weights[i] * phi(vv[i]) / widths[i];
            let right_k = weights[i] * phi_d(vv[i]) / (widths[i] * widths[i]);
            let (left, left_k) = if i > 0 {
                (
                    weights[i - 1] * phi(vv[i - 1]) / widths[i - 1],
                    weights[i - 1] * phi_d(vv[i - 1]) / (widths[i - 1] * widths[i - 1]),
                )
            } else {
                (0.0, 0.0)
            };
            let b = self.b_nodes[i];
            let delta = 1e-6 * scale_u.max(uv[i].abs());
            let curv = (self.rhs_density(nodes[i], b, uv[i] + delta)
                - self.rhs_density(nodes[i], b, uv[i] - delta))
                / (2.0 * delta);
            grad[i] = left - right - omega[i] * self.rhs_density(nodes[i], b, uv[i]);
            diag[i] = left_k + right_k - omega[i] * curv;
            if i + 1 < m {
                off[i] = -right_k;
            }
        }
        NodalSystem { grad, diag, off }
    }

    /// Weak-form defect against hat test functions at interior nodes,
    /// normalized by the test-function energy norm. The right-hand side is
    /// integrated with 4-point Gauss cells (independent of the lumped node
    /// quadrature behind the energy), so the value measures genuine
    /// consistency with the differential equation rather than discrete
    /// optimality.
    pub fn weak_residual(&self, v: &SlopeField) -> Result<f64, EnergyError> {
        let sup = v.sup_abs();
        if sup >= 1.0 - SINGULAR_SLOPE_TOL {
            return Err(EnergyError::SingularSlope { sup });
        }
        // Gauss-Legendre, 4 points on [-1, 1]
        const GX: [f64; 4] = [
            -0.861_136_311_594_052_6,
            -0.339_981_043_584_856_3,
            0.339_981_043_584_856_3,
            0.861_136_311_594_052_6,
        ];
        const GW: [f64; 4] = [
            0.347_854_845_137_453_85,
            0.652_145_154_862_546_1,
            0.652_145_154_862_546_1,
            0.347_854_845_137_453_85,
        ];

        let mesh = &self.mesh;
        let nodes = mesh.nodes();
        let widths = mesh.cell_widths();
        let weights = mesh.cell_weights();
        let nm1 = (self.spec.dim - 1) as i32;
        let u = v.reconstruct();
        let uv = u.values();
        let vv = v.values();
        let m = mesh.n_cells();
        if m < 2 {
            return Ok(0.0);
        }

        let phi = |s: f64| s / (1.0 - s * s).sqrt();

        // ∫_cell r^{N-1} h2(r, u(r)) ψ(r) dr for the two hat pieces of each
        // cell: ψ rises 0 -> 1 (weight toward the right node) and falls
        // 1 -> 0 (left node).
        let mut rise = vec![0.0; m];
        let mut fall = vec![0.0; m];
        for j in 0..m {
            let (a, bnd) = (nodes[j], nodes[j + 1]);
            let half = 0.5 * (bnd - a);
            let mid = 0.5 * (a + bnd);
            let mut up = 0.0;
            let mut down = 0.0;
            for (x, w) in GX.iter().zip(GW.iter()) {
                let r = mid + half * x;
                let t = (r - a) / (bnd - a);
                let ur = uv[j] + (uv[j + 1] - uv[j]) * t;
                let h2 = self.rhs_density(r, self.spec.weight_b.eval(r), ur);
                let base = w * half * r.powi(nm1) * h2;
                up += base * t;
                down += base * (1.0 - t);
            }
            rise[j] = up;
            fall[j] = down;
        }

        let mut worst = 0.0_f64;
        for i in 1..m {
            // hat at node i: slope +1/Δr on cell i-1, -1/Δr on cell i
            let lhs = weights[i - 1] * phi(vv[i - 1]) / widths[i - 1]
                - weights[i] * phi(vv[i]) / widths[i];
            let rhs = rise[i - 1] + fall[i];
            let norm_sq = weights[i - 1] / (widths[i - 1] * widths[i - 1])
                + weights[i] / (widths[i] * widths[i]);
            worst = worst.max((lhs - rhs).abs() / norm_sq.sqrt());
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Grading;
    use crate::problem::WeightB;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn mesh(n: u32, r: f64, m: usize) -> Arc<RadialMesh> {
        Arc::new(RadialMesh::new(n, r, m, Grading::Uniform).unwrap())
    }

    fn desk_spec(branch: Branch) -> ProblemSpec {
        ProblemSpec {
            dim: 3,
            radius: 1.0,
            lambda: 1e-3,
            q: 1.5,
            weight_b: WeightB::Constant { value: 1.0 },
            nonlinearity: Nonlinearity::PurePower { a: 1120.0, theta: 5.0 },
            branch,
            gradient_term: None,
        }
    }

    fn random_k_field(mesh: &Arc<RadialMesh>, seed: u64, scale: f64) -> SlopeField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> =
            (0..mesh.n_cells()).map(|_| scale * rng.gen_range(-1.0..=1.0)).collect();
        SlopeField::new(Arc::clone(mesh), vals).unwrap()
    }

    #[test]
    fn positive_truncation_ramp() {
        let nl = Nonlinearity::PurePower { a: 3.0, theta: 5.0 };
        let f_at_r = nl.eval(0.0, 1.0);
        assert_eq!(truncated_f(&nl, Branch::Positive, 1.0, 0.3, -0.5), 0.0);
        assert_eq!(truncated_f(&nl, Branch::Positive, 1.0, 0.3, 2.0), 0.0);
        let mid = truncated_f(&nl, Branch::Positive, 1.0, 0.3, 1.5);
        assert!((mid - f_at_r / 2.0).abs() < 1e-14);
        // continuity across the ramp
        for (lo, hi) in [(1.0 - 1e-9, 1.0 + 1e-9), (2.0 - 1e-9, 2.0 + 1e-9)] {
            let a = truncated_f(&nl, Branch::Positive, 1.0, 0.0, lo);
            let b = truncated_f(&nl, Branch::Positive, 1.0, 0.0, hi);
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn truncated_antiderivative_matches_quadrature() {
        let nl = Nonlinearity::AsymmetricPower { a_plus: 2.0, a_minus: 5.0, theta: 5.0 };
        for branch in [Branch::Positive, Branch::Negative, Branch::Full] {
            for s_end in [-2.3, -1.4, -0.7, 0.4, 1.2, 1.9, 2.4] {
                // trapezoid oracle for ∫_0^s of the truncated f
                let steps = 200_000;
                let mut acc = 0.0;
                let h = s_end / steps as f64;
                for k in 0..steps {
                    let s0 = h * k as f64;
                    let s1 = h * (k + 1) as f64;
                    acc += 0.5
                        * (truncated_f(&nl, branch, 1.0, 0.2, s0)
                            + truncated_f(&nl, branch, 1.0, 0.2, s1))
                        * h;
                }
                let closed = truncated_big_f(&nl, branch, 1.0, 0.2, s_end);
                assert!(
                    (acc - closed).abs() < 1e-8,
                    "branch {branch:?} s {s_end}: {acc} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn psi_exact_values() {
        let m = mesh(3, 1.0, 25);
        let model = EnergyModel::new(Arc::clone(&m), desk_spec(Branch::Positive));
        assert_eq!(model.psi(&SlopeField::zero(Arc::clone(&m))), 0.0);
        let ones = SlopeField::constant(Arc::clone(&m), 1.0).unwrap();
        assert!((model.psi(&ones) - 1.0 / 3.0).abs() < 1e-14);
        let v = SlopeField::constant(Arc::clone(&m), 0.6).unwrap();
        assert!((model.psi(&v) - 1.0 / 15.0).abs() < 1e-14);
    }

    proptest! {
        // ‖v‖²/2 <= Psi(v) <= ‖v‖², exactly, for any field in K.
        #[test]
        fn psi_sandwich(seed in 0u64..500) {
            let m = mesh(3, 1.0, 64);
            let model = EnergyModel::new(Arc::clone(&m), desk_spec(Branch::Positive));
            let v = random_k_field(&m, seed, 1.0);
            let psi = model.psi(&v);
            let h2 = v.h_norm_sq();
            prop_assert!(psi >= 0.5 * h2 - 1e-15);
            prop_assert!(psi <= h2 + 1e-15);
        }

        // prox is nonexpansive cell by cell.
        #[test]
        fn prox_nonexpansive(z1 in -8.0..8.0f64, z2 in -8.0..8.0f64, tau in 0.05..4.0f64) {
            let p1 = prox_scalar(z1, tau);
            let p2 = prox_scalar(z2, tau);
            prop_assert!((p1 - p2).abs() <= (z1 - z2).abs() + 1e-15);
        }
    }

    #[test]
    fn energy_zero_at_origin_and_desk_cone_bound() {
        let m = mesh(3, 1.0, 4000);
        let model = EnergyModel::new(Arc::clone(&m), desk_spec(Branch::Positive));
        assert_eq!(model.total(&SlopeField::zero(Arc::clone(&m))), 0.0);

        // Cone profile u = 1 - r: psi = 1/3, f-term = 224 * B(3,6) = 4/3,
        // q-term = (lambda/q) ∫ r^2 (1-r)^1.5 dr. High-resolution Simpson
        // oracle for the q integral.
        let cone = SlopeField::constant(Arc::clone(&m), -1.0).unwrap();
        let bd = model.breakdown(&cone);
        assert!((bd.psi - 1.0 / 3.0).abs() < 1e-13);
        assert!((bd.f_term - 4.0 / 3.0).abs() < 2e-7, "f_term {}", bd.f_term);
        let simpson = {
            let n = 200_000;
            let h = 1.0 / n as f64;
            let f = |r: f64| r * r * (1.0 - r).max(0.0).powf(1.5);
            let mut s = f(0.0) + f(1.0);
            for k in 1..n {
                s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let want_q = 1e-3 / 1.5 * simpson;
        assert!((bd.q_term - want_q).abs() < 1e-9);
        assert!(bd.total <= -1.0, "cone energy must dip below -R^N, got {}", bd.total);
    }

    #[test]
    fn gradient_matches_directional_finite_differences() {
        let m = mesh(3, 1.0, 120);
        for branch in [Branch::Positive, Branch::Negative, Branch::Full] {
            let model = EnergyModel::new(Arc::clone(&m), desk_spec(branch));
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
            for trial in 0..20 {
                let v = random_k_field(&m, 100 + trial, 0.8);
                let d: Vec<f64> = (0..m.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let g = model.grad_smooth(&v);
                let pair: f64 = g.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
                let h = 1e-6;
                let shift = |sgn: f64| {
                    let vals: Vec<f64> = v
                        .values()
                        .iter()
                        .zip(d.iter())
                        .map(|(vj, dj)| vj + sgn * h * dj)
                        .collect();
                    let f = SlopeField::new_unconstrained(Arc::clone(&m), vals).unwrap();
                    let bd = model.breakdown(&f);
                    -(bd.q_term + bd.f_term)
                };
                let fd = (shift(1.0) - shift(-1.0)) / (2.0 * h);
                let scale = pair.abs().max(fd.abs()).max(1e-8);
                assert!(
                    (pair - fd).abs() / scale < 1e-6,
                    "branch {branch:?}: analytic {pair} vs fd {fd}"
                );
            }
        }
    }

    // Independent oracle: assemble the reconstruction matrix densely and push
    // the concave-term node loads through its transpose.
    #[test]
    fn gradient_matches_dense_adjoint_for_lambda_term() {
        let m = mesh(3, 1.0, 40);
        let mut spec = desk_spec(Branch::Positive);
        spec.nonlinearity = Nonlinearity::PurePower { a: 0.0, theta: 5.0 };
        let model = EnergyModel::new(Arc::clone(&m), spec.clone());
        let v = {
            // nonnegative profile: u >= 0 via v <= 0
            let vals: Vec<f64> = (0..40).map(|j| -0.3 - 0.2 * ((j as f64).sin().abs())).collect();
            SlopeField::new(Arc::clone(&m), vals).unwrap()
        };
        let u = v.reconstruct();
        let cells = m.n_cells();
        let mut bmat = vec![vec![0.0; cells]; cells + 1]; // u_i = Σ_j B[i][j] v_j
        for i in 0..cells {
            for j in i..cells {
                bmat[i][j] = -m.cell_widths()[j];
            }
        }
        let loads: Vec<f64> = (0..=cells)
            .map(|i| {
                let up = u.values()[i].max(0.0);
                -m.node_weights()[i] * spec.lambda * up.powf(spec.q - 1.0)
            })
            .collect();
        let dense: Vec<f64> = (0..cells)
            .map(|j| (0..=cells).map(|i| loads[i] * bmat[i][j]).sum())
            .collect();
        let fast = model.grad_smooth(&v);
        for (a, b) in dense.iter().zip(fast.iter()) {
            assert!((a - b).abs() < 1e-14 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn prox_scalar_cases() {
        assert_eq!(prox_scalar(0.0, 1.0), 0.0);
        // huge inputs stay strictly interior
        for z in [1e6, -1e6, 1e12] {
            let v = prox_scalar(z, 1.0);
            assert!(v.abs() < 1.0);
            assert!(v.abs() > 0.999);
        }
        // bisection oracle at z = 0.5, tau = 1
        let oracle = {
            let f = |v: f64| v / (1.0 - v * v).sqrt() + v - 0.5;
            let (mut lo, mut hi) = (0.0, 1.0 - 1e-16);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let v = prox_scalar(0.5, 1.0);
        assert!((v - oracle).abs() < 1e-12);
        let res = v / (1.0 - v * v).sqrt() + v - 0.5;
        assert!(res.abs() <= 1e-12);
    }

    #[test]
    fn hessian_action_matches_gradient_differences() {
        let m = mesh(3, 1.0, 60);
        let model = EnergyModel::new(Arc::clone(&m), desk_spec(Branch::Positive));
        let v = random_k_field(&m, 42, 0.6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let d: Vec<f64> = (0..m.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hv = model.hessian_vec_h(&v, &d);
        let eps = 1e-6;
        let shift = |sgn: f64| {
            let vals: Vec<f64> = v
                .values()
                .iter()
                .zip(d.iter())
                .map(|(vj, dj)| vj + sgn * eps * dj)
                .collect();
            let f = SlopeField::new(Arc::clone(&m), vals).unwrap();
            model.total_h_gradient(&f)
        };
        let gp = shift(1.0);
        let gm = shift(-1.0);
        for j in 0..m.n_cells() {
            let fd = (gp[j] - gm[j]) / (2.0 * eps);
            let scale = fd.abs().max(hv[j].abs()).max(1.0);
            assert!(
                (fd - hv[j]).abs() / scale < 1e-4,
                "cell {j}: analytic {} vs fd {fd}",
                hv[j]
            );
        }
    }

    #[test]
    fn nodal_gradient_matches_energy_differences() {
        let m = mesh(3, 1.0, 48);
        let model = EnergyModel::new(Arc::clone(&m), desk_spec(Branch::Positive));
        let v = random_k_field(&m, 3, 0.5);
        let sys = model.nodal_newton_system(&v);
        let u = v.reconstruct();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let delta: Vec<f64> = (0..m.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pair: f64 = sys.grad.iter().zip(delta.iter()).map(|(a, b)| a * b).sum();
        let h = 1e-7;
        let energy_at = |t: f64| {
            let mut un = u.values().to_vec();
            for (ui, di) in un.iter_mut().zip(delta.iter()) {
                *ui += t * di;
            }
            let slopes: Vec<f64> = (0..m.n_cells())
                .map(|j| (un[j + 1] - un[j]) / m.cell_widths()[j])
                .collect();
            model.total(&SlopeField::new_unconstrained(Arc::clone(&m), slopes).unwrap())
        };
        let fd = (energy_at(h) - energy_at(-h)) / (2.0 * h);
        let scale = pair.abs().max(fd.abs()).max(1e-6);
        assert!((pair - fd).abs() / scale < 1e-5, "nodal grad {pair} vs fd {fd}");
    }

    #[test]
    fn trivial_field_is_a_prox_fixed_point() {
        // u ≡ 0 solves the equation (f(r,0) = 0 and the concave term has
        // vanishing first variation at 0 since q > 1), so the residual
        // vanishes there; nontriviality is what separates it from the
        // certified solutions.
        let m = mesh(3, 1.0, 64);
        let model = EnergyModel::new(Arc::clone(&m), desk_spec(Branch::Positive));
        let z = SlopeField::zero(Arc::clone(&m));
        assert_eq!(model.criticality_residual(&z, 1.0), 0.0);
    }

    #[test]
    fn weak_residual_zero_at_zero_and_singular_guard() {
        let m = mesh(3, 1.0, 64);
        let model = EnergyModel::new(Arc::clone(&m), desk_spec(Branch::Positive));
        let z = SlopeField::zero(Arc::clone(&m));
        assert_eq!(model.weak_residual(&z).unwrap(), 0.0);
        let ones = SlopeField::constant(Arc::clone(&m), 1.0).unwrap();
        assert!(matches!(model.weak_residual(&ones), Err(EnergyError::SingularSlope { .. })));
    }

    #[test]
    fn branch_energies_agree_on_one_signed_profiles() {
        let m = mesh(3, 1.0, 80);
        let pos = EnergyModel::new(Arc::clone(&m), desk_spec(Branch::Positive));
        let full = EnergyModel::new(Arc::clone(&m), desk_spec(Branch::Full));
        let v = {
            let vals: Vec<f64> = (0..80).map(|j| -0.4 - 0.1 * ((j % 5) as f64 / 5.0)).collect();
            SlopeField::new(Arc::clone(&m), vals).unwrap()
        };
        assert!(v.reconstruct().min_value() >= 0.0);
        let a = pos.breakdown(&v);
        let b = full.breakdown(&v);
        assert!((a.total - b.total).abs() < 1e-14);
        assert!((pos.criticality_residual(&v, 1.0) - full.criticality_residual(&v, 1.0)).abs() < 1e-12);
    }
}

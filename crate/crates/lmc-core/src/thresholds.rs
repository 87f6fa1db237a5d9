//! Explicit constants and smallness conditions: discrete embedding constants
//! `C(N, p, R)`, the Gamma-ratio superlinearity condition, the mountain-pass
//! geometry thresholds `lambda_*`, `rho_±`, the local-minimum threshold
//! `lambda_**`, and the gradient-term Lipschitz conditions with the
//! contraction factor `k`.
//!
//! The embedding constants are suprema over the discrete space and therefore
//! lower bounds of the continuum constants; the report flags them as such.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::mesh::RadialMesh;
use crate::parallel::{map_indices, ExecMode};
use crate::problem::{GradientTermSpec, ProblemSpec};

const POWER_ITER_MAX: usize = 60_000;
const POWER_ITER_RTOL: f64 = 1e-14;
const ASCENT_ITER_MAX: usize = 4_000;
const ASCENT_STARTS: usize = 6;

#[derive(Debug, Error)]
pub enum ThresholdError {
    #[error("exponent p = {p} must lie in [1, 2N/(N-2)) = [1, {limit})")]
    ExponentOutOfRange { p: f64, limit: f64 },
    #[error("alpha = {alpha} must lie in (2, 2N/(N-2)) = (2, {limit})")]
    AlphaOutOfRange { alpha: f64, limit: f64 },
    #[error("q = {0} must lie in (1, 2)")]
    QOutOfRange(f64),
}

/// Critical Sobolev bound `2N/(N-2)`.
pub fn critical_exponent(dim: u32) -> f64 {
    2.0 * dim as f64 / (dim as f64 - 2.0)
}

/// `u = B v`: integrate slopes inward from the pinned boundary node.
fn reconstruct_raw(mesh: &RadialMesh, v: &[f64]) -> Vec<f64> {
    let widths = mesh.cell_widths();
    let m = mesh.n_cells();
    let mut u = vec![0.0; m + 1];
    for i in (0..m).rev() {
        u[i] = u[i + 1] - v[i] * widths[i];
    }
    u
}

/// `Bᵀ m` for a node vector `m`: prefix sums scaled by `-Δr_j`.
fn adjoint_raw(mesh: &RadialMesh, node_vec: &[f64]) -> Vec<f64> {
    let widths = mesh.cell_widths();
    let m = mesh.n_cells();
    let mut out = vec![0.0; m];
    let mut prefix = 0.0;
    for j in 0..m {
        prefix += node_vec[j];
        out[j] = -widths[j] * prefix;
    }
    out
}

/// Largest generalized eigenvalue of `(Bᵀ D B, W)`: the discrete supremum of
/// `Σ d_i u_i^2 / Σ w_j v_j^2`. Power iteration in the weighted metric.
fn power_ratio(mesh: &RadialMesh, node_diag: &[f64]) -> f64 {
    let m = mesh.n_cells();
    let weights = mesh.cell_weights();
    let mut v: Vec<f64> = (0..m).map(|j| -1.0 - 0.3 * (j as f64 / m as f64)).collect();
    let mut rho_prev = 0.0;
    for it in 0..POWER_ITER_MAX {
        let u = reconstruct_raw(mesh, &v);
        let loads: Vec<f64> = u.iter().zip(node_diag.iter()).map(|(ui, di)| di * ui).collect();
        let num: f64 = u.iter().zip(node_diag.iter()).map(|(ui, di)| di * ui * ui).sum();
        let den = mesh.h_norm_sq_of(&v);
        let rho = num / den;
        if it > 2 && (rho - rho_prev).abs() <= POWER_ITER_RTOL * rho.abs().max(1e-300) {
            return rho;
        }
        rho_prev = rho;
        let mut av = adjoint_raw(mesh, &loads);
        for (a, w) in av.iter_mut().zip(weights.iter()) {
            *a /= w;
        }
        let norm = mesh.h_norm_sq_of(&av).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for a in av.iter_mut() {
            *a /= norm;
        }
        v = av;
    }
    rho_prev
}

/// Projected gradient ascent on `J(v) = ‖u‖_p^p / ‖v‖_H^p` (scale invariant;
/// iterates are renormalized to the unit sphere of the weighted metric).
fn ascent_ratio(mesh: &RadialMesh, p: f64, seed: u64) -> f64 {
    let m = mesh.n_cells();
    let weights = mesh.cell_weights();
    let omega = mesh.node_weights();

    let eval = |v: &[f64]| -> f64 {
        let u = reconstruct_raw(mesh, v);
        let num: f64 = u.iter().zip(omega.iter()).map(|(ui, w)| w * ui.abs().powf(p)).sum();
        let den = mesh.h_norm_sq_of(v);
        num / den.powf(p / 2.0)
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    starts.push(vec![-1.0; m]);
    starts.push((0..m).map(|j| -(1.0 - j as f64 / m as f64)).collect());
    starts.push((0..m).map(|j| -((j as f64 + 0.5) / m as f64)).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while starts.len() < ASCENT_STARTS {
        starts.push((0..m).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }

    let best_of_start = |start: &Vec<f64>| -> f64 {
        let mut v = start.clone();
        let norm = mesh.h_norm_sq_of(&v).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        let mut best = eval(&v);
        let mut step = 0.5;
        let mut stale = 0usize;
        for _ in 0..ASCENT_ITER_MAX {
            let u = reconstruct_raw(mesh, &v);
            let norm_p: f64 =
                u.iter().zip(omega.iter()).map(|(ui, w)| w * ui.abs().powf(p)).sum();
            if norm_p == 0.0 {
                break;
            }
            let loads: Vec<f64> = u
                .iter()
                .zip(omega.iter())
                .map(|(ui, w)| {
                    if *ui == 0.0 {
                        0.0
                    } else {
                        w * p * ui.abs().powf(p - 1.0) * ui.signum() / norm_p
                    }
                })
                .collect();
            // gradient of log J in the weighted metric, on the unit sphere
            let mut grad = adjoint_raw(mesh, &loads);
            for ((gj, w), vj) in grad.iter_mut().zip(weights.iter()).zip(v.iter()) {
                *gj = *gj / w - p * vj;
            }
            let mut improved = false;
            for _ in 0..20 {
                let mut cand: Vec<f64> =
                    v.iter().zip(grad.iter()).map(|(vj, gj)| vj + step * gj).collect();
                let norm = mesh.h_norm_sq_of(&cand).sqrt();
                if norm == 0.0 {
                    break;
                }
                for x in cand.iter_mut() {
                    *x /= norm;
                }
                let val = eval(&cand);
                if val > best {
                    best = val;
                    v = cand;
                    step *= 1.4;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                stale += 1;
                if stale > 4 {
                    break;
                }
            } else {
                stale = 0;
            }
        }
        best
    };

    let results = crate::parallel::map_collect(ExecMode::auto(), &starts, best_of_start);
    results.into_iter().fold(0.0, f64::max)
}

/// Discrete estimate of the embedding constant `C(N, p, R)` in
/// `‖u‖_{N-1,p}^p <= C ‖u‖^p`. For `p = 2` this is a generalized eigenvalue
/// problem solved by power iteration; other exponents use multi-start
/// projected ascent. Either way the estimate is a certified lower bound of
/// the continuum constant, and the defining inequality holds for every
/// discrete `v` visited during estimation.
pub fn estimate_embedding_constant(
    mesh: &RadialMesh,
    p: f64,
    seed: u64,
) -> Result<f64, ThresholdError> {
    let limit = critical_exponent(mesh.dim());
    if !(p >= 1.0 && p < limit) {
        return Err(ThresholdError::ExponentOutOfRange { p, limit });
    }
    if p == 2.0 {
        Ok(power_ratio(mesh, mesh.node_weights()))
    } else {
        Ok(ascent_ratio(mesh, p, seed))
    }
}

/// Cross-check path for `p = 2`: the ascent estimate, which must agree with
/// the eigenvalue route.
pub fn estimate_embedding_constant_ascent(mesh: &RadialMesh, p: f64, seed: u64) -> f64 {
    ascent_ratio(mesh, p, seed)
}

/// Discrete supremum of the Hardy ratio `∫ r^{N-3} u^2 / ‖u‖^2`; bounded by
/// `4/(N-2)^2`.
pub fn estimate_hardy_ratio(mesh: &RadialMesh) -> f64 {
    power_ratio(mesh, &mesh.hardy_node_weights())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SuperlinearityCheck {
    pub holds: bool,
    /// `(1 + a2)/N - a1 R^theta Γ(N)Γ(theta+1)/Γ(N+theta+1)`; the condition
    /// is `lhs <= -1`.
    pub lhs: f64,
    pub gamma_ratio: f64,
    /// `-1 - lhs`; nonnegative when the condition holds.
    pub margin: f64,
}

/// Gamma-ratio superlinearity condition guaranteeing that the cone profile
/// pushes the energy to `-R^N` or below. Equality cases (the condition is
/// `lhs <= -1`) are accepted up to 1e-12 of floating-point slack.
pub fn check_superlinearity(dim: u32, theta: f64, a1: f64, a2: f64, radius: f64) -> SuperlinearityCheck {
    let n = dim as f64;
    let gamma_ratio = (ln_gamma(n) + ln_gamma(theta + 1.0) - ln_gamma(n + theta + 1.0)).exp();
    let lhs = (1.0 + a2) / n - a1 * radius.powf(theta) * gamma_ratio;
    SuperlinearityCheck { holds: lhs <= -1.0 + 1e-12, lhs, gamma_ratio, margin: -1.0 - lhs }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradientConditionCheck {
    pub l1: f64,
    pub l2: f64,
    pub c2: f64,
    /// `L1 C2 < 1/4` (strict).
    pub l1_ok: bool,
    /// `L2 sqrt(C2) < 1/2` (strict).
    pub l2_ok: bool,
    pub lip_ok: bool,
    /// Largest admissible lambda: `lambda (2R)^{q-2} q b1 C2 < 1/4`.
    pub lambda_bar: f64,
    pub lambda_small_enough: bool,
    /// Predicted contraction factor at the given lambda,
    /// `k = L2 sqrt(C2) / (1 - (lambda b1 (2R)^{q-2} q + L1) C2)`;
    /// `None` when the denominator is not positive.
    pub k: Option<f64>,
}

/// Evaluate the Lipschitz smallness conditions for the gradient term and the
/// contraction factor they predict.
pub fn check_gradient_conditions(
    g: &GradientTermSpec,
    c2: f64,
    lambda: f64,
    q: f64,
    b1: f64,
    radius: f64,
) -> GradientConditionCheck {
    let l1_ok = g.l1 * c2 < 0.25;
    let l2_ok = g.l2 * c2.sqrt() < 0.5;
    let scale = (2.0 * radius).powf(q - 2.0) * q * b1;
    let lambda_bar = 0.25 / (scale * c2);
    let lambda_small_enough = lambda < lambda_bar;
    let denom = 1.0 - (lambda * scale + g.l1) * c2;
    let k = if denom > 0.0 { Some(g.l2 * c2.sqrt() / denom) } else { None };
    GradientConditionCheck {
        l1: g.l1,
        l2: g.l2,
        c2,
        l1_ok,
        l2_ok,
        lip_ok: l1_ok && l2_ok,
        lambda_bar,
        lambda_small_enough,
        k,
    }
}

/// All explicit constants for one instance. The embedding constants are
/// discrete estimates (lower bounds of the true constants).
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdReport {
    pub dim: u32,
    pub radius: f64,
    pub lambda: f64,
    pub q: f64,
    /// Auxiliary exponent in `(2, 2N/(N-2))`; midpoint by default.
    pub alpha: f64,
    /// Raw embedding constants `C(N, 2, R)`, `C(N, q, R)`, `C(N, alpha, R)`.
    pub c2: f64,
    pub c_q: f64,
    pub c_alpha: f64,
    /// Derived coefficients: `d2 = C2`, `d_q = (b1/q) C_q`, `d_alpha = C_alpha`.
    pub d2: f64,
    pub d_q: f64,
    pub d_alpha: f64,
    /// `eps = 1/(4 d2)` exactly, so the quadratic coefficient is 3/8.
    pub eps: f64,
    /// Splitting constant with `|F(r,s)| <= (eps/2) s^2 + c_eps |s|^alpha`.
    pub c_eps: f64,
    pub t_lambda: f64,
    pub rho_minus: f64,
    pub rho_plus: f64,
    /// Annulus energy floor `rho_minus^2 / 8`.
    pub mp_floor: f64,
    pub lambda_star: f64,
    pub lambda_star_star: f64,
    pub lambda_below_star: bool,
    pub lambda_below_star_star: bool,
    /// Relative defect of the identity `rho_-(lambda_*, R) = rho_+(R)`.
    pub rho_identity_rel_err: f64,
    pub superlinearity: SuperlinearityCheck,
    pub hardy_ratio: f64,
    pub hardy_bound: f64,
    pub gradient: Option<GradientConditionCheck>,
    /// Embedding constants are discrete suprema, hence lower bounds.
    pub constants_are_discrete_lower_bounds: bool,
}

fn rho_minus_at(lambda: f64, q: f64, alpha: f64, d_q: f64, c_eps_d_alpha: f64) -> f64 {
    (lambda * (2.0 - q) * d_q / ((alpha - 2.0) * c_eps_d_alpha)).powf(1.0 / (alpha - q))
}

/// Compute every threshold for `spec` on `mesh`.
pub fn compute_thresholds(
    mesh: &RadialMesh,
    spec: &ProblemSpec,
    alpha: Option<f64>,
    seed: u64,
) -> Result<ThresholdReport, ThresholdError> {
    let n = spec.dim;
    let limit = critical_exponent(n);
    let alpha = alpha.unwrap_or(0.5 * (2.0 + limit));
    if !(alpha > 2.0 && alpha < limit) {
        return Err(ThresholdError::AlphaOutOfRange { alpha, limit });
    }
    let q = spec.q;
    if !(q > 1.0 && q < 2.0) {
        return Err(ThresholdError::QOutOfRange(q));
    }
    let radius = spec.radius;
    let (_, b1) = spec.weight_b.bounds();

    let c2 = estimate_embedding_constant(mesh, 2.0, seed)?;
    let c_q = estimate_embedding_constant(mesh, q, seed ^ 0x9e37_79b9)?;
    let c_alpha = estimate_embedding_constant(mesh, alpha, seed ^ 0x7f4a_7c15)?;
    let d2 = c2;
    let d_q = b1 / q * c_q;
    let d_alpha = c_alpha;
    let eps = 1.0 / (4.0 * d2);

    // Splitting constant per family: for theta >= alpha the power bound
    // |F| <= (g/theta) R^{theta-alpha} |s|^alpha already holds on |s| <= R;
    // otherwise split |s|^theta <= delta s^2 + delta^{-(alpha-theta)/(theta-2)} |s|^alpha
    // and spend half of eps on the quadratic piece.
    let growth = spec.nonlinearity.growth_ceiling();
    let theta = spec.nonlinearity.theta();
    let c_eps = if theta >= alpha {
        growth / theta * radius.powf(theta - alpha)
    } else {
        let delta = eps * theta / (2.0 * growth.max(f64::MIN_POSITIVE));
        growth / theta * delta.powf(-(alpha - theta) / (theta - 2.0))
    };

    let ced = c_eps * d_alpha;
    let t_lambda = rho_minus_at(spec.lambda, q, alpha, d_q, ced);
    let beta = (alpha - q).powf((alpha - q) / (alpha - 2.0))
        / ((2.0 - q).powf((2.0 - q) / (alpha - 2.0)) * (alpha - 2.0));
    let lambda_star = 0.25_f64.powf((alpha - q) / (alpha - 2.0))
        / (beta * d_q * ced.powf((2.0 - q) / (alpha - 2.0)));
    let rho_plus = ((2.0 - q) / (4.0 * c_eps * (alpha - q) * d_alpha)).powf(1.0 / (alpha - 2.0));
    let rho_minus = t_lambda;
    let identity = rho_minus_at(lambda_star, q, alpha, d_q, ced);
    let rho_identity_rel_err = ((identity - rho_plus) / rho_plus).abs();

    // lambda_**: largest lambda <= lambda_* with
    // lambda d_q rho_-^q + c_eps d_alpha rho_-^alpha <= R^N
    // (so the ball minimum stays above -R^N). The left side is increasing in
    // lambda, so bisection applies.
    let depth = |lambda: f64| -> f64 {
        let rho = rho_minus_at(lambda, q, alpha, d_q, ced);
        lambda * d_q * rho.powf(q) + ced * rho.powf(alpha)
    };
    let budget = radius.powi(n as i32);
    let lambda_star_star = if depth(lambda_star) <= budget {
        lambda_star
    } else {
        let (mut lo, mut hi) = (0.0, lambda_star);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if depth(mid) <= budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };

    let superlinearity = {
        let (a1, a2) = spec.nonlinearity.growth_floor();
        check_superlinearity(n, theta, a1, a2, radius)
    };

    let gradient = spec
        .gradient_term
        .as_ref()
        .map(|g| check_gradient_conditions(g, c2, spec.lambda, q, b1, radius));

    Ok(ThresholdReport {
        dim: n,
        radius,
        lambda: spec.lambda,
        q,
        alpha,
        c2,
        c_q,
        c_alpha,
        d2,
        d_q,
        d_alpha,
        eps,
        c_eps,
        t_lambda,
        rho_minus,
        rho_plus,
        mp_floor: rho_minus * rho_minus / 8.0,
        lambda_star,
        lambda_star_star,
        lambda_below_star: spec.lambda < lambda_star,
        lambda_below_star_star: spec.lambda < lambda_star_star,
        rho_identity_rel_err,
        superlinearity,
        hardy_ratio: estimate_hardy_ratio(mesh),
        hardy_bound: 4.0 / ((n as f64 - 2.0) * (n as f64 - 2.0)),
        gradient,
        constants_are_discrete_lower_bounds: true,
    })
}

/// Sample `count` random fields in the constraint set and report the worst
/// (largest) ratio `‖u‖_p^p / ‖v‖_H^p`; used by invariant suites to confirm
/// that an estimated constant dominates random probes.
pub fn probe_embedding_ratio(mesh: &RadialMesh, p: f64, count: usize, seed: u64) -> f64 {
    let omega = mesh.node_weights().to_vec();
    let worst = map_indices(ExecMode::auto(), count, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let v: Vec<f64> = (0..mesh.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = reconstruct_raw(mesh, &v);
        let num: f64 = u.iter().zip(omega.iter()).map(|(ui, w)| w * ui.abs().powf(p)).sum();
        let den = mesh.h_norm_sq_of(&v).powf(p / 2.0);
        num / den
    });
    worst.into_iter().fold(0.0, f64::max)
}

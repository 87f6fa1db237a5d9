//! Numerical mountain-pass searches.
//!
//! A discretized path with pinned endpoints is deformed downhill: each sweep
//! relaxes the maximum-energy node (and, at half budget, its neighbors) by
//! backtracked prox-gradient steps, then resamples the path to equal spacing
//! in the energy norm. The sagging path localizes the saddle; once the top
//! node's criticality residual is small the search hands over to a
//! gentlest-ascent refinement that walks the iterate onto the critical point:
//! the energy gradient is reflected along an estimated lowest-curvature
//! direction, which is tracked by power steps on the Hessian action.
//!
//! Two searches are built from this machinery: the saddle above the annulus
//! energy barrier (between the trivial solution and the deep global
//! minimizer), and the low-level saddle between the two small local minima of
//! the untruncated functional, reached from a path whose maximum energy is
//! already negative.

use std::sync::Arc;

use thiserror::Error;

use crate::certify::{certify, tol as ctol, Classification, CriticalPointCertificate};
use crate::energy::EnergyModel;
use crate::mesh::{RadialMesh, SlopeField};
use crate::problem::{Branch, Nonlinearity, ProblemSpec};
use crate::thresholds::{critical_exponent, ThresholdReport};

const STALL_SWEEPS: usize = 60;
const REFINE_STEP0: f64 = 1e-2;
const REFINE_STEP_MIN: f64 = 1e-14;
const CLAMP: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone)]
pub struct PathOptions {
    /// Number of path nodes including both endpoints.
    pub nodes: usize,
    pub max_sweeps: usize,
    /// Prox-gradient steps applied to the top node per sweep; neighbors get
    /// half as many.
    pub descent_steps: usize,
    pub criticality_tol: f64,
    /// Residual at the top node that triggers the saddle refinement.
    pub refine_switch: f64,
    pub max_refine_iters: usize,
    /// Optional energy-norm ball constraint on every path node.
    pub ball_radius: Option<f64>,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            nodes: 33,
            max_sweeps: 4_000,
            descent_steps: 10,
            criticality_tol: ctol::CRITICALITY,
            refine_switch: 1e-3,
            max_refine_iters: 60_000,
            ball_radius: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum MpError {
    #[error("path max {max_energy} fell to the endpoint level {endpoint_level} without locating \
             a critical point")]
    PathCollapse { max_energy: f64, endpoint_level: f64 },
    #[error("low path has nonnegative energy {value} at t = {t} (lambda too large for the \
             low-level saddle)")]
    PositiveMax { t: f64, value: f64 },
    #[error("located point coincides with an endpoint ({which})")]
    DegenerateToEndpoint { which: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("saddle refinement stalled at residual {residual:.3e}")]
    NonConvergence { residual: f64, best: Box<CriticalPointCertificate> },
}

/// Ordered list of slope fields with cached energies; endpoints never move.
#[derive(Debug, Clone)]
pub struct PathInState {
    pub fields: Vec<SlopeField>,
    pub energies: Vec<f64>,
    /// Arc radius chosen for the low-energy path, when applicable.
    pub arc_radius: Option<f64>,
}

impl PathInState {
    pub fn max_interior(&self) -> (usize, f64) {
        let mut k = 1;
        let mut e = f64::NEG_INFINITY;
        for i in 1..self.energies.len() - 1 {
            if self.energies[i] > e {
                e = self.energies[i];
                k = i;
            }
        }
        (k, e)
    }

    pub fn max_energy(&self) -> f64 {
        self.energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn project_ball(v: SlopeField, ball: Option<f64>) -> SlopeField {
    match ball {
        Some(rho) => {
            let n = v.h_norm();
            if n > rho {
                v.scaled(rho / n)
            } else {
                v
            }
        }
        None => v,
    }
}

/// `steps` backtracked prox-gradient steps; returns the relaxed field and its
/// energy.
fn relax(model: &EnergyModel, v: SlopeField, steps: usize, ball: Option<f64>) -> (SlopeField, f64) {
    let mesh = Arc::clone(model.mesh());
    let mut v = v;
    let mut energy = model.total(&v);
    let mut tau = 1.0;
    for _ in 0..steps {
        let g = model.h_gradient(&v);
        loop {
            let z: Vec<f64> =
                v.values().iter().zip(g.iter()).map(|(vj, gj)| vj - tau * gj).collect();
            let stepped = SlopeField::new(Arc::clone(&mesh), crate::energy::prox_psi(&z, tau))
                .expect("prox stays in K");
            let cand = project_ball(stepped, ball);
            let e = model.total(&cand);
            if e <= energy {
                v = cand;
                energy = e;
                tau = (tau * 1.5).min(1.0);
                break;
            }
            tau *= 0.5;
            if tau < 1e-14 {
                return (v, energy);
            }
        }
    }
    (v, energy)
}

/// Resample the polyline to equal spacing in the energy norm.
fn reparametrize(fields: &[SlopeField]) -> Vec<SlopeField> {
    let n = fields.len();
    let mut cum = vec![0.0; n];
    for i in 1..n {
        let d: Vec<f64> = fields[i]
            .values()
            .iter()
            .zip(fields[i - 1].values())
            .map(|(a, b)| a - b)
            .collect();
        cum[i] = cum[i - 1] + fields[0].mesh().h_norm_sq_of(&d).sqrt();
    }
    let total = cum[n - 1];
    if total == 0.0 {
        return fields.to_vec();
    }
    let mut out = Vec::with_capacity(n);
    out.push(fields[0].clone());
    let mut seg = 0usize;
    for k in 1..n - 1 {
        let target = total * k as f64 / (n - 1) as f64;
        while seg + 2 < n && cum[seg + 1] < target {
            seg += 1;
        }
        let span = (cum[seg + 1] - cum[seg]).max(1e-300);
        let t = (target - cum[seg]) / span;
        out.push(SlopeField::lerp(&fields[seg], &fields[seg + 1], t.clamp(0.0, 1.0)));
    }
    out.push(fields[n - 1].clone());
    out
}

struct DeformOutcome {
    top: SlopeField,
    tangent: Vec<f64>,
    max_energy: f64,
}

/// Deform the path downhill until the top node's residual crosses the
/// refinement switch, the maximum stalls, or the sweep budget runs out.
fn deform(
    model: &EnergyModel,
    mut fields: Vec<SlopeField>,
    opts: &PathOptions,
    collapse_floor: Option<f64>,
) -> Result<DeformOutcome, MpError> {
    let mut energies: Vec<f64> = fields.iter().map(|f| model.total(f)).collect();
    let mut stall = 0usize;
    let mut prev_max = f64::INFINITY;
    let n = fields.len();
    for _ in 0..opts.max_sweeps {
        let (k, _) = {
            let mut k = 1;
            let mut e = f64::NEG_INFINITY;
            for i in 1..n - 1 {
                if energies[i] > e {
                    e = energies[i];
                    k = i;
                }
            }
            (k, e)
        };
        for (idx, steps) in [
            (k, opts.descent_steps),
            (k.saturating_sub(1), opts.descent_steps / 2),
            ((k + 1).min(n - 2), opts.descent_steps / 2),
        ] {
            if idx == 0 || idx == n - 1 {
                continue;
            }
            let (field, e) = relax(model, fields[idx].clone(), steps, opts.ball_radius);
            fields[idx] = field;
            energies[idx] = e;
        }
        let resampled = reparametrize(&fields);
        let res_energies: Vec<f64> = resampled.iter().map(|f| model.total(f)).collect();
        let max_now = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let max_res = res_energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // resampling interpolates between nodes; keep it only when it does
        // not lift the maximum, so the path max never increases
        if max_res <= max_now + 1e-15 * (1.0 + max_now.abs()) {
            fields = resampled;
            energies = res_energies;
        }

        let (k, emax) = {
            let mut k = 1;
            let mut e = f64::NEG_INFINITY;
            for i in 1..n - 1 {
                if energies[i] > e {
                    e = energies[i];
                    k = i;
                }
            }
            (k, e)
        };
        if let Some(floor) = collapse_floor {
            if emax < floor {
                return Err(MpError::PathCollapse { max_energy: emax, endpoint_level: floor });
            }
        }
        let res = model.criticality_residual(&fields[k], 1.0);
        let done = res <= opts.refine_switch;
        let stalled = (prev_max - emax).abs() <= 1e-15 * (1.0 + emax.abs());
        stall = if stalled { stall + 1 } else { 0 };
        prev_max = emax;
        if done || stall >= STALL_SWEEPS {
            let tangent: Vec<f64> = fields[k + 1]
                .values()
                .iter()
                .zip(fields[k - 1].values())
                .map(|(a, b)| a - b)
                .collect();
            return Ok(DeformOutcome { top: fields[k].clone(), tangent, max_energy: emax });
        }
    }
    let (k, emax) = {
        let mut kk = 1;
        let mut e = f64::NEG_INFINITY;
        for i in 1..n - 1 {
            if energies[i] > e {
                e = energies[i];
                kk = i;
            }
        }
        (kk, e)
    };
    let tangent: Vec<f64> = fields[k + 1]
        .values()
        .iter()
        .zip(fields[k - 1].values())
        .map(|(a, b)| a - b)
        .collect();
    Ok(DeformOutcome { top: fields[k].clone(), tangent, max_energy: emax })
}

fn h_normalize(mesh: &RadialMesh, d: &mut [f64]) -> bool {
    let n = mesh.h_norm_sq_of(d).sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    for x in d.iter_mut() {
        *x /= n;
    }
    true
}

/// Solve a symmetric tridiagonal system with partial pivoting (the Newton
/// matrix at a saddle is indefinite, so plain elimination is not safe).
/// Returns `None` on numerical breakdown.
fn solve_tridiag_pivoting(diag: &[f64], off: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Some(Vec::new());
    }
    // band storage with one extra superdiagonal for pivoting fill-in
    let mut dl: Vec<f64> = off.to_vec();
    let mut d: Vec<f64> = diag.to_vec();
    let mut du: Vec<f64> = off.to_vec();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut b: Vec<f64> = rhs.to_vec();
    for i in 0..n - 1 {
        if d[i].abs() >= dl[i].abs() {
            if d[i] == 0.0 {
                return None;
            }
            let fact = dl[i] / d[i];
            d[i + 1] -= fact * du[i];
            b[i + 1] -= fact * b[i];
            if i + 2 < n {
                du2[i] = 0.0;
            }
        } else {
            // swap rows i and i+1
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            let tmp = d[i + 1];
            d[i + 1] = du[i] - fact * tmp;
            du[i] = tmp;
            if i + 2 < n {
                du2[i] = du[i + 1];
                du[i + 1] = -fact * du2[i];
            }
            b.swap(i, i + 1);
            b[i + 1] -= fact * b[i];
        }
        if !d[i].is_finite() {
            return None;
        }
    }
    if d[n - 1] == 0.0 || !d[n - 1].is_finite() {
        return None;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = b[n - 1] / d[n - 1];
    if n >= 2 {
        x[n - 2] = (b[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (b[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
    }
    Some(x)
}

/// Power steps on `mu I - H` push a vector toward the softest Hessian
/// direction (`mu` over-estimates the top of the spectrum).
fn softest_direction(
    model: &EnergyModel,
    v: &SlopeField,
    init: &[f64],
    iters: usize,
) -> Vec<f64> {
    let mesh = model.mesh();
    let mut d = init.to_vec();
    if !h_normalize(mesh, &mut d) {
        d = vec![1.0; mesh.n_cells()];
        h_normalize(mesh, &mut d);
    }
    let mut mu: f64 = 1.0;
    let mut probe = d.clone();
    for _ in 0..5 {
        let hp = model.hessian_vec_h(v, &probe);
        mu = mu.max(mesh.h_norm_sq_of(&hp).sqrt());
        probe = hp;
        if !h_normalize(mesh, &mut probe) {
            break;
        }
    }
    let mu = 1.5 * mu + 1.0;
    for _ in 0..iters {
        let hd = model.hessian_vec_h(v, &d);
        for (dj, hj) in d.iter_mut().zip(hd.iter()) {
            *dj = mu * *dj - hj;
        }
        if !h_normalize(mesh, &mut d) {
            break;
        }
    }
    d
}

/// Apply a nodal displacement and return the field, keeping slopes strictly
/// inside the constraint set and the iterate inside the ball.
fn apply_nodal_step(
    model: &EnergyModel,
    u: &[f64],
    delta: &[f64],
    t: f64,
    ball: Option<f64>,
) -> Option<SlopeField> {
    let mesh = model.mesh();
    let widths = mesh.cell_widths();
    let m = mesh.n_cells();
    let mut vals = Vec::with_capacity(m);
    for j in 0..m {
        let up = if j + 1 < m { u[j + 1] + t * delta[j + 1] } else { 0.0 };
        let lo = u[j] + t * delta[j];
        let slope = (up - lo) / widths[j];
        if slope.abs() >= 1.0 {
            return None;
        }
        vals.push(slope);
    }
    Some(project_ball(SlopeField::new(Arc::clone(mesh), vals).ok()?, ball))
}

/// Saddle refinement: Newton on the nodal gradient (pivoted tridiagonal
/// solve) with reflected-gradient steps as globalizer when Newton is not
/// productive. `energy_floor` guards against sliding off the saddle into a
/// neighboring well.
fn refine_saddle(
    model: &EnergyModel,
    v0: SlopeField,
    dir0: Vec<f64>,
    opts: &PathOptions,
    energy_floor: Option<f64>,
) -> (SlopeField, f64, bool) {
    let mesh = Arc::clone(model.mesh());
    let mut v = v0;
    let mut res = model.criticality_residual(&v, 1.0);
    let mut dir = softest_direction(model, &v, &dir0, 30);
    let mut gad_step = REFINE_STEP0;
    let mut stalls = 0usize;
    let mut iters = 0usize;

    while iters < opts.max_refine_iters {
        iters += 1;
        if res <= opts.criticality_tol {
            return (v, res, true);
        }

        // Newton proposal
        let mut newton_accepted = false;
        let sys = model.nodal_newton_system(&v);
        if let Some(delta) = solve_tridiag_pivoting(
            &sys.diag,
            &sys.off,
            &sys.grad.iter().map(|g| -g).collect::<Vec<f64>>(),
        ) {
            let u = v.reconstruct();
            let mut t = 1.0;
            for _ in 0..30 {
                if let Some(cand) = apply_nodal_step(model, u.values(), &delta, t, opts.ball_radius)
                {
                    let ok_energy = match energy_floor {
                        Some(floor) => model.total(&cand) >= floor,
                        None => true,
                    };
                    let cand_res = model.criticality_residual(&cand, 1.0);
                    if ok_energy && cand_res < res {
                        v = cand;
                        res = cand_res;
                        newton_accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
        }
        if std::env::var_os("LMC_DEBUG_SADDLE").is_some() && iters % 50 == 1 {
            eprintln!(
                "refine iter {iters}: res {res:.3e} energy {:.6e} newton {newton_accepted}",
                model.total(&v)
            );
        }
        if newton_accepted {
            stalls = 0;
            continue;
        }

        // reflected-gradient fallback
        dir = softest_direction(model, &v, &dir, 4);
        let g = model.total_h_gradient(&v);
        let gd = mesh.h_inner(&g, &dir);
        let force: Vec<f64> = g.iter().zip(dir.iter()).map(|(gj, dj)| gj - 2.0 * gd * dj).collect();
        let mut accepted = false;
        while gad_step >= REFINE_STEP_MIN {
            let vals: Vec<f64> = v
                .values()
                .iter()
                .zip(force.iter())
                .map(|(vj, fj)| (vj - gad_step * fj).clamp(-CLAMP, CLAMP))
                .collect();
            let cand = project_ball(
                SlopeField::new(Arc::clone(&mesh), vals).expect("clamped into K"),
                opts.ball_radius,
            );
            let ok_energy = match energy_floor {
                Some(floor) => model.total(&cand) >= floor,
                None => true,
            };
            let cand_res = model.criticality_residual(&cand, 1.0);
            if ok_energy && cand_res < res {
                v = cand;
                res = cand_res;
                gad_step = (gad_step * 1.25).min(1.0);
                accepted = true;
                break;
            }
            gad_step *= 0.5;
        }
        if accepted {
            stalls = 0;
        } else {
            gad_step = REFINE_STEP0;
            dir = softest_direction(model, &v, &dir, 40);
            stalls += 1;
            if stalls > 3 {
                break;
            }
        }
    }
    (v, res, res <= opts.criticality_tol)
}

/// Saddle above the annulus barrier: deform a straight path from the trivial
/// field to `endpoint_b` (normally the global minimizer) and refine the top
/// node. Preconditions: lambda below the barrier threshold, both endpoint
/// energies nonpositive, and `endpoint_b` beyond the barrier radius.
pub fn mountain_pass(
    spec: &ProblemSpec,
    mesh: &Arc<RadialMesh>,
    branch: Branch,
    endpoint_b: &SlopeField,
    thresholds: &ThresholdReport,
    opts: &PathOptions,
) -> Result<CriticalPointCertificate, MpError> {
    let spec = spec.with_branch(branch);
    let model = EnergyModel::new(Arc::clone(mesh), spec);
    if !thresholds.lambda_below_star {
        return Err(MpError::Precondition(format!(
            "lambda = {} is not below lambda_* = {}",
            model.spec().lambda,
            thresholds.lambda_star
        )));
    }
    let eb = model.total(endpoint_b);
    if eb > 0.0 {
        return Err(MpError::Precondition(format!("far endpoint energy {eb} must be <= 0")));
    }
    let nb = endpoint_b.h_norm();
    if nb <= thresholds.rho_plus {
        return Err(MpError::Precondition(format!(
            "far endpoint norm {nb} does not clear the barrier radius {}",
            thresholds.rho_plus
        )));
    }

    let n = opts.nodes.max(5);
    let fields: Vec<SlopeField> =
        (0..n).map(|k| endpoint_b.scaled(k as f64 / (n - 1) as f64)).collect();
    let collapse_floor = Some(eb.max(0.0) + opts.criticality_tol);
    let outcome = deform(&model, reparametrize(&fields), opts, collapse_floor)?;
    let (field, residual, converged) =
        refine_saddle(&model, outcome.top, outcome.tangent, opts, collapse_floor);
    let cert = certify(
        field,
        &model,
        Classification::MountainPass,
        opts.criticality_tol,
        Some(thresholds.clone()),
    );
    if !converged {
        return Err(MpError::NonConvergence { residual, best: Box::new(cert) });
    }
    Ok(cert)
}

/// Slopes of the reference bump `(1 - r/R)^2`, used as the auxiliary plane
/// direction when the two minima are (anti)proportional.
fn aux_direction(mesh: &Arc<RadialMesh>) -> Vec<f64> {
    let r = mesh.radius();
    (0..mesh.n_cells())
        .map(|j| {
            let mid = 0.5 * (mesh.nodes()[j] + mesh.nodes()[j + 1]);
            -2.0 * (1.0 - mid / r) / r
        })
        .collect()
}

/// Glue `t v_+`, a circular arc in the plane spanned by the two minima, and
/// `t v_-` into a path from `v_+` to `v_-` whose maximum energy is negative.
/// The arc radius starts at half the small-ball radius and is bisected
/// downward until the whole path dips below zero.
pub fn build_low_energy_path(
    spec: &ProblemSpec,
    mesh: &Arc<RadialMesh>,
    v_plus: &SlopeField,
    v_minus: &SlopeField,
    thresholds: &ThresholdReport,
    opts: &PathOptions,
) -> Result<PathInState, MpError> {
    let model = EnergyModel::new(Arc::clone(mesh), spec.with_branch(Branch::Full));
    for (tag, v) in [("v_+", v_plus), ("v_-", v_minus)] {
        let res = model.criticality_residual(v, 1.0);
        if res > 10.0 * opts.criticality_tol {
            return Err(MpError::Precondition(format!(
                "{tag} is not critical for the untruncated energy (residual {res:.3e})"
            )));
        }
    }

    // orthonormal plane containing both minima
    let norm_p = v_plus.h_norm();
    let norm_m = v_minus.h_norm();
    if norm_p == 0.0 || norm_m == 0.0 {
        return Err(MpError::Precondition("a local minimum is trivial".to_string()));
    }
    let e1: Vec<f64> = v_plus.values().iter().map(|x| x / norm_p).collect();
    let proj = mesh.h_inner(v_minus.values(), &e1);
    let mut e2: Vec<f64> =
        v_minus.values().iter().zip(e1.iter()).map(|(x, e)| x - proj * e).collect();
    if mesh.h_norm_sq_of(&e2).sqrt() <= 1e-8 * norm_m {
        // (anti)proportional minima: any plane containing the line works
        e2 = aux_direction(mesh);
        let p = mesh.h_inner(&e2, &e1);
        for (x, e) in e2.iter_mut().zip(e1.iter()) {
            *x -= p * e;
        }
    }
    if !h_normalize(mesh, &mut e2) {
        return Err(MpError::Precondition("degenerate plane".to_string()));
    }
    let phi_minus = {
        let c1 = mesh.h_inner(v_minus.values(), &e1) / norm_m;
        let c2 = mesh.h_inner(v_minus.values(), &e2) / norm_m;
        c2.atan2(c1)
    };
    let phi_minus = if phi_minus == 0.0 { std::f64::consts::PI } else { phi_minus };

    let n = opts.nodes.max(7);
    let build = |eps2: f64| -> Option<Vec<SlopeField>> {
        let seg = n / 3;
        let mut fields = Vec::with_capacity(n);
        for k in 0..seg {
            // t from 1 down to eps2/‖v_+‖
            let t = 1.0 + (eps2 / norm_p - 1.0) * k as f64 / seg as f64;
            fields.push(v_plus.scaled(t));
        }
        let arc_nodes = n - 2 * seg;
        for k in 0..arc_nodes {
            let phi = phi_minus * k as f64 / (arc_nodes - 1) as f64;
            let vals: Vec<f64> = e1
                .iter()
                .zip(e2.iter())
                .map(|(a, b)| eps2 * (phi.cos() * a + phi.sin() * b))
                .collect();
            if vals.iter().any(|x| x.abs() > 1.0) {
                return None;
            }
            fields.push(SlopeField::new(Arc::clone(mesh), vals).ok()?);
        }
        for k in 1..=seg {
            let t = eps2 / norm_m + (1.0 - eps2 / norm_m) * k as f64 / seg as f64;
            fields.push(v_minus.scaled(t));
        }
        Some(fields)
    };

    let mut eps2 = 0.5 * thresholds.rho_minus.min(norm_p.min(norm_m));
    let mut last_positive: Option<(f64, f64)> = None;
    for _ in 0..60 {
        if let Some(fields) = build(eps2) {
            let energies: Vec<f64> = fields.iter().map(|f| model.total(f)).collect();
            let (imax, emax) = energies
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &e)| if e > acc.1 { (i, e) } else { acc });
            if emax < 0.0 {
                return Ok(PathInState { fields, energies, arc_radius: Some(eps2) });
            }
            last_positive = Some((imax as f64 / (fields.len() - 1) as f64, emax));
        }
        eps2 *= 0.5;
    }
    let (t, value) = last_positive.unwrap_or((0.5, 0.0));
    Err(MpError::PositiveMax { t, value })
}

/// Ball-constrained saddle search between the two small local minima of the
/// untruncated functional, started from the low-energy path. The located
/// point must stay strictly below zero energy and away from both endpoints
/// and the trivial solution.
pub fn find_seventh(
    spec: &ProblemSpec,
    mesh: &Arc<RadialMesh>,
    v_plus: &SlopeField,
    v_minus: &SlopeField,
    thresholds: &ThresholdReport,
    opts: &PathOptions,
) -> Result<CriticalPointCertificate, MpError> {
    // the near-even and C^1 growth conditions behind the low-level saddle
    // are family-checkable: asymmetric powers need theta > 4, and the
    // derivative growth exponent must stay subcritical
    let nl = &spec.nonlinearity;
    if !nl.asymmetry_exponent_ok() {
        return Err(MpError::Precondition(
            "asymmetric nonlinearity needs exponent > 4 for the low-level saddle".to_string(),
        ));
    }
    if matches!(nl, Nonlinearity::PurePower { .. } | Nonlinearity::AsymmetricPower { .. })
        && nl.theta() >= critical_exponent(spec.dim)
    {
        return Err(MpError::Precondition(format!(
            "derivative growth exponent {} is not subcritical (limit {})",
            nl.theta(),
            critical_exponent(spec.dim)
        )));
    }

    let mut opts = opts.clone();
    opts.ball_radius = Some(thresholds.rho_plus);
    let path = build_low_energy_path(spec, mesh, v_plus, v_minus, thresholds, &opts)?;
    let model = EnergyModel::new(Arc::clone(mesh), spec.with_branch(Branch::Full));
    let outcome = deform(&model, path.fields, &opts, None)?;
    let (field, residual, converged) =
        refine_saddle(&model, outcome.top, outcome.tangent, &opts, None);
    let cert = certify(
        field,
        &model,
        Classification::Seventh,
        opts.criticality_tol,
        Some(thresholds.clone()),
    );
    if !converged {
        return Err(MpError::NonConvergence { residual, best: Box::new(cert) });
    }
    let r = mesh.radius();
    for (tag, v) in [("v_+", v_plus), ("v_-", v_minus)] {
        if cert.field.sup_distance(v) <= ctol::DISTINCT_SUP_PER_RADIUS * r
            && (cert.energy.total - model.total(v)).abs() <= ctol::DISTINCT_ENERGY
        {
            return Err(MpError::DegenerateToEndpoint { which: tag.to_string() });
        }
    }
    if !cert.nontrivial() {
        return Err(MpError::DegenerateToEndpoint { which: "0".to_string() });
    }
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Grading;
    use crate::minimize::{minimize, minimize_in_ball, SolveOptions};
    use crate::problem::WeightB;
    use crate::thresholds::compute_thresholds;

    fn desk(lambda: f64) -> ProblemSpec {
        ProblemSpec {
            dim: 3,
            radius: 1.0,
            lambda,
            q: 1.5,
            weight_b: WeightB::Constant { value: 1.0 },
            nonlinearity: Nonlinearity::PurePower { a: 1120.0, theta: 5.0 },
            branch: Branch::Positive,
            gradient_term: None,
        }
    }

    fn mesh(m: usize) -> Arc<RadialMesh> {
        Arc::new(RadialMesh::new(3, 1.0, m, Grading::Uniform).unwrap())
    }

    #[test]
    fn saddle_above_barrier_on_desk_instance() {
        let mesh = mesh(160);
        let lambda = 0.2;
        let spec = desk(lambda);
        let thr = compute_thresholds(&mesh, &spec, None, 3).unwrap();
        let sopts = SolveOptions { random_starts: 2, ..Default::default() };
        let u_plus = minimize(&spec, &mesh, Branch::Positive, &sopts, Some(&thr)).unwrap();
        let w = mountain_pass(
            &spec,
            &mesh,
            Branch::Positive,
            &u_plus.field,
            &thr,
            &PathOptions::default(),
        )
        .unwrap();
        assert!(w.converged, "residual {}", w.criticality_residual);
        assert!(
            w.energy.total >= thr.mp_floor - 1e-8,
            "saddle level {} below annulus floor {}",
            w.energy.total,
            thr.mp_floor
        );
        assert!(w.energy.total > 0.0);
        assert!(w.classification_consistent);
        // strictly between the small well and the deep minimizer
        assert!(w.energy.total > u_plus.energy.total);
        assert!(w.sign_ok.unwrap());
        // the saddle differs from both endpoints
        assert!(w.distinct_from(&u_plus));
    }

    #[test]
    fn mirrored_saddles_for_odd_nonlinearity() {
        let mesh = mesh(120);
        let spec = desk(0.2);
        let thr = compute_thresholds(&mesh, &spec, None, 3).unwrap();
        let sopts = SolveOptions { random_starts: 1, ..Default::default() };
        let up = minimize(&spec, &mesh, Branch::Positive, &sopts, Some(&thr)).unwrap();
        let un = minimize(&spec, &mesh, Branch::Negative, &sopts, Some(&thr)).unwrap();
        let wp =
            mountain_pass(&spec, &mesh, Branch::Positive, &up.field, &thr, &PathOptions::default())
                .unwrap();
        let wn =
            mountain_pass(&spec, &mesh, Branch::Negative, &un.field, &thr, &PathOptions::default())
                .unwrap();
        assert!((wp.energy.total - wn.energy.total).abs() < 1e-7);
        let mirror_defect = wp
            .profile
            .values()
            .iter()
            .zip(wn.profile.values())
            .fold(0.0_f64, |m, (a, b)| m.max((a + b).abs()));
        assert!(mirror_defect < 1e-6, "mirror defect {mirror_defect}");
    }

    #[test]
    fn precondition_rejects_small_far_endpoint() {
        let mesh = mesh(60);
        let spec = desk(0.2);
        let thr = compute_thresholds(&mesh, &spec, None, 3).unwrap();
        let tiny = SlopeField::constant(Arc::clone(&mesh), -1e-3).unwrap();
        assert!(matches!(
            mountain_pass(&spec, &mesh, Branch::Positive, &tiny, &thr, &PathOptions::default()),
            Err(MpError::Precondition(_))
        ));
    }

    #[test]
    fn low_energy_path_stays_negative_on_desk_instance() {
        let mesh = mesh(160);
        let lambda = 0.3;
        let spec = desk(lambda);
        let thr = compute_thresholds(&mesh, &spec, None, 3).unwrap();
        let sopts = SolveOptions { random_starts: 2, ..Default::default() };
        let vp = minimize_in_ball(&spec, &mesh, Branch::Positive, thr.rho_plus, &sopts, Some(&thr))
            .unwrap();
        let vn = minimize_in_ball(&spec, &mesh, Branch::Negative, thr.rho_plus, &sopts, Some(&thr))
            .unwrap();
        let path =
            build_low_energy_path(&spec, &mesh, &vp.field, &vn.field, &thr, &PathOptions::default())
                .unwrap();
        assert!(path.max_energy() < 0.0);
        assert!(path.arc_radius.unwrap() > 0.0);
        // ray sampling: the glued segments keep negative energy
        let model = EnergyModel::new(Arc::clone(&mesh), spec.with_branch(Branch::Full));
        for t in [0.2, 0.4, 0.6, 0.8, 1.0] {
            assert!(model.total(&vp.field.scaled(t)) < 0.0, "ray energy at t={t}");
        }
        // endpoints pinned
        assert!(path.fields[0].sup_distance(&vp.field) < 1e-14);
        assert!(path.fields.last().unwrap().sup_distance(&vn.field) < 1e-14);
    }

    #[test]
    fn seventh_saddle_found_between_the_small_minima() {
        let mesh = mesh(160);
        let lambda = 0.3;
        let spec = desk(lambda);
        let thr = compute_thresholds(&mesh, &spec, None, 3).unwrap();
        let sopts = SolveOptions { random_starts: 2, ..Default::default() };
        let vp = minimize_in_ball(&spec, &mesh, Branch::Positive, thr.rho_plus, &sopts, Some(&thr))
            .unwrap();
        let vn = minimize_in_ball(&spec, &mesh, Branch::Negative, thr.rho_plus, &sopts, Some(&thr))
            .unwrap();
        let seventh =
            find_seventh(&spec, &mesh, &vp.field, &vn.field, &thr, &PathOptions::default())
                .unwrap();
        assert!(seventh.energy.total < 0.0);
        assert!(seventh.converged);
        assert!(seventh.nontrivial());
        assert!(seventh.distinct_from(&vp));
        assert!(seventh.distinct_from(&vn));
        // the low-level saddle sits above both minima
        assert!(seventh.energy.total >= vp.energy.total.max(vn.energy.total) - 1e-12);
    }
}

//! Critical-point search by proximal-gradient descent: the smooth part moves
//! forward, the area term and the slope constraint are absorbed exactly by
//! the per-cell prox. Backtracking is mandatory here: the concave term has no
//! global Lipschitz gradient near `u = 0` (its second derivative blows up for
//! `q < 2`), so no fixed step is safe.
//!
//! Multi-start covers the landscape: scaled cone fields up to the far corner
//! of the constraint set, small perturbations of the origin (the origin
//! itself is a prox fixed point - the trivial solution - so descent must be
//! seeded off it), and seeded random draws. Starts run in parallel and the
//! lowest certified energy wins deterministically.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::certify::{certify, Classification, CriticalPointCertificate};
use crate::energy::{prox_psi, EnergyModel};
use crate::mesh::SlopeField;
use crate::parallel::{map_collect, ExecMode};
use crate::problem::{Branch, ProblemSpec};
use crate::thresholds::ThresholdReport;

const ARMIJO: f64 = 1e-4;
const TAU_MIN: f64 = 1e-14;
const TAU_GROW: f64 = 1.3;
const RESIDUAL_CHECK_EVERY: usize = 8;

/// Step-size policy of the descent loop.
#[derive(Debug, Clone, Copy)]
pub enum StepPolicy {
    /// Fixed prox-gradient step (no safeguard; test use only).
    Fixed(f64),
    /// Halve from `tau0` until the step achieves an energy decrease of at
    /// least `ARMIJO / tau * ‖step‖²`; grow back after acceptance.
    Backtracking { tau0: f64 },
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub step: StepPolicy,
    pub max_iters: usize,
    pub criticality_tol: f64,
    /// Extra random starts on top of the deterministic ones.
    pub random_starts: usize,
    /// Optional energy-norm ball constraint, enforced by radial rescaling of
    /// the slope field after each step.
    pub ball_radius: Option<f64>,
    pub seed: u64,
    pub exec: ExecMode,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            step: StepPolicy::Backtracking { tau0: 1.0 },
            max_iters: 120_000,
            criticality_tol: crate::certify::tol::CRITICALITY,
            random_starts: 4,
            ball_radius: None,
            seed: 0x5eed_0001,
            exec: ExecMode::auto(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("descent did not reach the criticality tolerance within the iteration budget \
             (best residual {residual:.3e})")]
    NonConvergence { residual: f64, best: Box<CriticalPointCertificate> },
    #[error("every descent run jammed on the ball boundary (radius {radius})")]
    BallViolation { radius: f64 },
    #[error("problem validation failed: {0}")]
    InvalidSpec(#[from] crate::problem::SpecError),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
}

/// Raw outcome of one descent run.
#[derive(Debug, Clone)]
pub struct DescentRun {
    pub field: SlopeField,
    pub energy: f64,
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
    /// Step landed outside the ball and was rescaled back at the final
    /// iterate: the constraint is active and the interior residual is not
    /// meaningful on its own.
    pub boundary_active: bool,
    pub start_tag: String,
}

/// Backtracked prox-gradient descent from `v0` until the fixed-point residual
/// at unit step drops below tolerance.
pub fn descend(model: &EnergyModel, v0: SlopeField, opts: &SolveOptions, tag: &str) -> DescentRun {
    let mesh = Arc::clone(model.mesh());
    let mut v = match opts.ball_radius {
        Some(rho) => project_ball(&v0, rho),
        None => v0,
    };
    let mut energy = model.total(&v);
    let (mut tau, backtrack) = match opts.step {
        StepPolicy::Fixed(t) => (t, false),
        StepPolicy::Backtracking { tau0 } => (tau0, true),
    };
    let tau0 = tau;
    let mut boundary_active = false;
    let mut iters = 0;
    let mut residual;

    while iters < opts.max_iters {
        iters += 1;
        let g = model.h_gradient(&v);
        let mut accepted = false;
        loop {
            let z: Vec<f64> =
                v.values().iter().zip(g.iter()).map(|(vj, gj)| vj - tau * gj).collect();
            let stepped = SlopeField::new(Arc::clone(&mesh), prox_psi(&z, tau))
                .expect("prox output stays in K");
            let (cand, rescaled) = match opts.ball_radius {
                Some(rho) => {
                    let n = stepped.h_norm();
                    if n > rho {
                        (stepped.scaled(rho / n), true)
                    } else {
                        (stepped, false)
                    }
                }
                None => (stepped, false),
            };
            let cand_energy = model.total(&cand);
            let diff: Vec<f64> =
                v.values().iter().zip(cand.values()).map(|(a, b)| a - b).collect();
            let move_sq = mesh.h_norm_sq_of(&diff);
            if !backtrack || cand_energy <= energy - ARMIJO / tau * move_sq {
                boundary_active = rescaled;
                v = cand;
                energy = cand_energy;
                accepted = true;
                break;
            }
            tau *= 0.5;
            if tau < TAU_MIN {
                break;
            }
        }
        if accepted && backtrack {
            tau = (tau * TAU_GROW).min(tau0);
        }
        let check_now = !accepted || iters % RESIDUAL_CHECK_EVERY == 0;
        if check_now {
            residual = model.criticality_residual(&v, 1.0);
            if residual <= opts.criticality_tol {
                return DescentRun {
                    field: v,
                    energy,
                    residual,
                    iters,
                    converged: true,
                    boundary_active,
                    start_tag: tag.to_string(),
                };
            }
            if !accepted {
                // step size exhausted and still above tolerance
                break;
            }
        }
    }
    residual = model.criticality_residual(&v, 1.0);
    DescentRun {
        field: v,
        energy,
        residual,
        iters,
        converged: residual <= opts.criticality_tol,
        boundary_active,
        start_tag: tag.to_string(),
    }
}

fn project_ball(v: &SlopeField, rho: f64) -> SlopeField {
    let n = v.h_norm();
    if n > rho {
        v.scaled(rho / n)
    } else {
        v.clone()
    }
}

/// Cone-shaped start `t * u-bar` for the branch (slopes `∓t`).
fn cone_start(mesh: &Arc<RadialMesh>, branch: Branch, t: f64) -> SlopeField {
    let sign = match branch {
        Branch::Negative => 1.0,
        _ => -1.0,
    };
    SlopeField::constant(Arc::clone(mesh), sign * t).expect("|t| <= 1")
}

use crate::mesh::RadialMesh;

/// Deterministic multi-start set for a minimization on `branch`.
fn build_starts(
    mesh: &Arc<RadialMesh>,
    branch: Branch,
    opts: &SolveOptions,
) -> Vec<(String, SlopeField)> {
    let mut starts = Vec::new();
    for t in [0.25, 0.5, 0.75, 1.0] {
        starts.push((format!("cone*{t}"), cone_start(mesh, branch, t)));
        if branch == Branch::Full {
            starts.push((format!("-cone*{t}"), cone_start(mesh, Branch::Negative, t)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    // perturbation of the origin: the trivial solution is a fixed point, so
    // nudge off it toward the branch sign
    let m = mesh.n_cells();
    let sign = match branch {
        Branch::Negative => 1.0,
        _ => -1.0,
    };
    let tiny: Vec<f64> = (0..m).map(|_| sign * rng.gen_range(0.0..1e-2)).collect();
    starts.push(("origin-perturbation".into(), SlopeField::new(Arc::clone(mesh), tiny).unwrap()));
    for k in 0..opts.random_starts {
        let vals: Vec<f64> = (0..m).map(|_| 0.5 * rng.gen_range(-1.0..1.0)).collect();
        starts.push((format!("random-{k}"), SlopeField::new(Arc::clone(mesh), vals).unwrap()));
    }
    if let Some(rho) = opts.ball_radius {
        starts = starts
            .into_iter()
            .map(|(tag, v)| (tag, project_ball(&v, rho)))
            .collect();
    }
    starts
}

fn pick_best(runs: Vec<DescentRun>) -> (Option<DescentRun>, Option<DescentRun>, bool) {
    let mut best_converged: Option<DescentRun> = None;
    let mut best_any: Option<DescentRun> = None;
    let mut all_boundary = true;
    for run in runs {
        if !(run.converged && run.boundary_active) {
            all_boundary = false;
        }
        let better = |cur: &Option<DescentRun>| match cur {
            Some(b) => run.energy < b.energy,
            None => true,
        };
        if run.converged && !run.boundary_active && better(&best_converged) {
            best_converged = Some(run.clone());
        }
        if better(&best_any) {
            best_any = Some(run);
        }
    }
    (best_converged, best_any, all_boundary)
}

/// Global minimization of the branch functional: multi-start descent, lowest
/// certified energy wins. Under the Gamma-ratio condition the winner sits at
/// or below the cone-field energy, hence at or below `-R^N`.
pub fn minimize(
    spec: &ProblemSpec,
    mesh: &Arc<RadialMesh>,
    branch: Branch,
    opts: &SolveOptions,
    thresholds: Option<&ThresholdReport>,
) -> Result<CriticalPointCertificate, SolveError> {
    let spec = spec.with_branch(branch);
    spec.validate(Some(mesh))?;
    let model = EnergyModel::new(Arc::clone(mesh), spec);
    minimize_model(&model, opts, Classification::GlobalMin, thresholds)
}

/// Minimization inside the energy-norm ball of radius `rho` (normally the
/// barrier radius `rho_+`): locates the small local minimum near the origin.
/// Runs that jam on the ball boundary lose to interior runs; if every run
/// jams, that is a `BallViolation`.
pub fn minimize_in_ball(
    spec: &ProblemSpec,
    mesh: &Arc<RadialMesh>,
    branch: Branch,
    radius: f64,
    opts: &SolveOptions,
    thresholds: Option<&ThresholdReport>,
) -> Result<CriticalPointCertificate, SolveError> {
    let spec = spec.with_branch(branch);
    spec.validate(Some(mesh))?;
    let model = EnergyModel::new(Arc::clone(mesh), spec);
    let mut opts = opts.clone();
    opts.ball_radius = Some(radius);
    minimize_model(&model, &opts, Classification::LocalMin, thresholds)
}

pub(crate) fn minimize_model(
    model: &EnergyModel,
    opts: &SolveOptions,
    classification: Classification,
    thresholds: Option<&ThresholdReport>,
) -> Result<CriticalPointCertificate, SolveError> {
    let starts = build_starts(model.mesh(), model.branch(), opts);
    let runs = map_collect(opts.exec, &starts, |(tag, v0)| {
        descend(model, v0.clone(), opts, tag)
    });
    let (best_converged, best_any, all_boundary) = pick_best(runs);
    if let Some(run) = best_converged {
        let mut cert =
            certify(run.field, model, classification, opts.criticality_tol, thresholds.cloned());
        cert.notes.push(format!("start: {}", run.start_tag));
        return Ok(cert);
    }
    if all_boundary {
        if let Some(rho) = opts.ball_radius {
            return Err(SolveError::BallViolation { radius: rho });
        }
    }
    let run = best_any.expect("at least one start");
    let mut cert =
        certify(run.field, model, classification, opts.criticality_tol, thresholds.cloned());
    cert.notes.push(format!("non-convergent best (start: {})", run.start_tag));
    Err(SolveError::NonConvergence { residual: run.residual, best: Box::new(cert) })
}

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("profile is not positive on an initial interval; the dip surgery does not apply")]
    NotApplicable,
}

/// Outcome of the sign-repair surgery.
#[derive(Debug, Clone)]
pub struct RepairOutcome {
    pub field: SlopeField,
    pub modified: bool,
    pub h_norm_before: f64,
    pub h_norm_after: f64,
    pub energy_before: f64,
    pub energy_after: f64,
}

impl RepairOutcome {
    pub fn energy_delta(&self) -> f64 {
        self.energy_after - self.energy_before
    }
}

/// Remove small negative dips from a profile that is positive near the
/// origin: flatten the run-up at the dip's depth, reflect the dip, and as a
/// last resort truncate to zero from the first sign change. Every move
/// shrinks or preserves each cell slope, so membership in the constraint set
/// and the energy-norm bound `‖out‖ <= ‖in‖` are exact; the energy change is
/// reported (for shallow dips and a near-even nonlinearity it is
/// nonpositive).
pub fn repair_sign(v: &SlopeField, spec: &ProblemSpec) -> Result<RepairOutcome, RepairError> {
    let mesh = Arc::clone(v.mesh());
    let model = EnergyModel::new(Arc::clone(&mesh), spec.with_branch(Branch::Full));
    let energy_before = model.total(v);
    let h_before = v.h_norm();

    let mut u = v.reconstruct().values().to_vec();
    if u.iter().all(|&x| x >= 0.0) {
        return Ok(RepairOutcome {
            field: v.clone(),
            modified: false,
            h_norm_before: h_before,
            h_norm_after: h_before,
            energy_before,
            energy_after: energy_before,
        });
    }
    if u[0] <= 0.0 {
        return Err(RepairError::NotApplicable);
    }

    let n = u.len();
    let mut guard = 0;
    while let Some(a) = u.iter().position(|&x| x < 0.0) {
        guard += 1;
        if guard > n {
            break;
        }
        // dip runs from a to the first nonnegative node after it (the pinned
        // boundary node closes any dip)
        let c = (a..n).find(|&i| u[i] >= 0.0).unwrap_or(n - 1);
        let rbar = (a..c).min_by(|&i, &j| u[i].partial_cmp(&u[j]).unwrap()).unwrap_or(a);
        let w1 = -u[rbar];
        // last node before the dip still at or above the dip depth
        let tau_idx = (0..a).rev().find(|&i| u[i] >= w1);
        match tau_idx {
            Some(t) => {
                for x in u.iter_mut().take(rbar).skip(t + 1) {
                    *x = w1;
                }
                for x in u.iter_mut().take(c).skip(rbar) {
                    *x = -*x;
                }
            }
            None => {
                // dip deeper than the remaining positive head: truncate to
                // zero from the first sign change
                let z = (1..n).find(|&i| u[i] <= 0.0).unwrap_or(n - 1);
                for x in u.iter_mut().skip(z) {
                    *x = 0.0;
                }
            }
        }
    }

    let widths = mesh.cell_widths();
    let slopes: Vec<f64> = (0..n - 1).map(|j| (u[j + 1] - u[j]) / widths[j]).collect();
    let field = SlopeField::new(Arc::clone(&mesh), slopes).expect("surgery shrinks slopes");
    let energy_after = model.total(&field);
    let h_after = field.h_norm();
    debug_assert!(h_after <= h_before + 1e-12);
    Ok(RepairOutcome {
        field,
        modified: true,
        h_norm_before: h_before,
        h_norm_after: h_after,
        energy_before,
        energy_after,
    })
}

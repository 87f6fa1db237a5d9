//! Critical-point certificates: every located field is packaged with its
//! energy breakdown, prox fixed-point residual, weak-form defect, constraint
//! margin, sign/monotonicity flags and a classification-consistency verdict.
//! Failures are recorded, never thrown; the certificate is the product.

use serde::Serialize;

use crate::energy::{EnergyBreakdown, EnergyModel};
use crate::mesh::{RadialProfile, SlopeField};
use crate::problem::Branch;
use crate::thresholds::ThresholdReport;

/// Certificate tolerances, shared across solvers and suites.
pub mod tol {
    /// Criticality residual accepted as "critical".
    pub const CRITICALITY: f64 = 1e-8;
    /// Allowed sign defect of one-signed profiles.
    pub const SIGN: f64 = 1e-10;
    /// Allowed monotonicity defect of the slopes of one-signed profiles.
    pub const MONOTONE: f64 = 1e-8;
    /// Two certificates are duplicates only if both their sup distance (per
    /// unit radius) and their energy gap fall below these.
    pub const DISTINCT_SUP_PER_RADIUS: f64 = 1e-4;
    pub const DISTINCT_ENERGY: f64 = 1e-8;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    GlobalMin,
    LocalMin,
    MountainPass,
    /// Low-level saddle between the two small local minima of the untruncated
    /// functional.
    Seventh,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Classification::GlobalMin => write!(f, "global-min"),
            Classification::LocalMin => write!(f, "local-min"),
            Classification::MountainPass => write!(f, "mountain-pass"),
            Classification::Seventh => write!(f, "seventh"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CriticalPointCertificate {
    pub classification: Classification,
    pub branch: Branch,
    pub field: SlopeField,
    pub profile: RadialProfile,
    pub energy: EnergyBreakdown,
    pub criticality_residual: f64,
    /// `None` when the weak-form integrand was singular (slope at the
    /// constraint boundary); the flag below records that case.
    pub weak_residual: Option<f64>,
    pub weak_residual_singular: bool,
    pub sup_slope: f64,
    /// `1 - sup |v|`; certified critical points keep this strictly positive.
    pub slope_margin: f64,
    pub h_norm: f64,
    pub sup_u: f64,
    pub u_at_origin: f64,
    /// One-signed branches: profile respects the branch sign up to `tol::SIGN`.
    pub sign_ok: Option<bool>,
    /// One-signed branches: slopes are one-signed up to `tol::MONOTONE`.
    pub monotone_ok: Option<bool>,
    /// Criticality residual within tolerance.
    pub converged: bool,
    /// Did the certificate pass the checks its classification implies?
    pub classification_consistent: bool,
    /// Energy at or below `-R^N` (expected of global minima under the
    /// Gamma-ratio condition).
    pub energy_below_minus_rn: bool,
    pub notes: Vec<String>,
    pub thresholds: Option<ThresholdReport>,
}

impl CriticalPointCertificate {
    /// Nontrivial means distinguishable from the zero solution by the shared
    /// sup-norm threshold.
    pub fn nontrivial(&self) -> bool {
        self.sup_u > tol::DISTINCT_SUP_PER_RADIUS * self.profile.mesh().radius()
    }

    /// Duplicate = indistinguishable in both sup distance and energy.
    pub fn duplicate_of(&self, other: &CriticalPointCertificate) -> bool {
        let r = self.profile.mesh().radius();
        self.profile.sup_distance(&other.profile) <= tol::DISTINCT_SUP_PER_RADIUS * r
            && (self.energy.total - other.energy.total).abs() <= tol::DISTINCT_ENERGY
    }

    pub fn distinct_from(&self, other: &CriticalPointCertificate) -> bool {
        !self.duplicate_of(other)
    }
}

/// Evaluate every check for `field` and assemble the certificate. Nothing is
/// skipped and nothing aborts: failed checks end up as `false` flags plus a
/// note.
pub fn certify(
    field: SlopeField,
    model: &EnergyModel,
    classification: Classification,
    criticality_tol: f64,
    thresholds: Option<ThresholdReport>,
) -> CriticalPointCertificate {
    let profile = field.reconstruct();
    let energy = model.breakdown(&field);
    let residual = model.criticality_residual(&field, 1.0);
    let (weak, singular) = match model.weak_residual(&field) {
        Ok(w) => (Some(w), false),
        Err(_) => (None, true),
    };
    let sup_slope = field.sup_abs();
    let branch = model.branch();
    let radius = model.spec().radius;
    let rn = radius.powi(model.spec().dim as i32);

    let (sign_ok, monotone_ok) = match branch {
        Branch::Positive => (
            Some(profile.min_value() >= -tol::SIGN),
            Some(field.values().iter().all(|&v| v <= tol::MONOTONE)),
        ),
        Branch::Negative => (
            Some(profile.max_value() <= tol::SIGN),
            Some(field.values().iter().all(|&v| v >= -tol::MONOTONE)),
        ),
        Branch::Full => (None, None),
    };

    let converged = residual <= criticality_tol;
    let sup_u = profile.sup_abs();
    let nontrivial = sup_u > tol::DISTINCT_SUP_PER_RADIUS * radius;
    let total = energy.total;
    let mut notes = Vec::new();

    let classification_consistent = match classification {
        Classification::GlobalMin => {
            if !nontrivial {
                notes.push("trivial profile rejected for global-min".to_string());
            }
            converged && nontrivial
        }
        Classification::LocalMin => {
            let in_window = total < 0.0 && total > -rn;
            if !in_window {
                notes.push(format!("local-min energy {total} outside (-R^N, 0)"));
            }
            converged && nontrivial && in_window
        }
        Classification::MountainPass => {
            let above_floor = match &thresholds {
                Some(t) => total >= t.mp_floor - criticality_tol,
                None => total > 0.0,
            };
            if !above_floor {
                notes.push(format!("mountain-pass energy {total} below the annulus floor"));
            }
            converged && nontrivial && above_floor
        }
        Classification::Seventh => {
            if !(total < 0.0) {
                notes.push(format!("seventh-solution energy {total} is not negative"));
            }
            converged && nontrivial && total < 0.0
        }
    };

    CriticalPointCertificate {
        classification,
        branch,
        energy,
        criticality_residual: residual,
        weak_residual: weak,
        weak_residual_singular: singular,
        sup_slope,
        slope_margin: 1.0 - sup_slope,
        h_norm: field.h_norm(),
        sup_u,
        u_at_origin: profile.values()[0],
        sign_ok,
        monotone_ok,
        converged,
        classification_consistent,
        energy_below_minus_rn: total <= -rn,
        notes,
        thresholds,
        profile,
        field,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchEntry {
    pub certificate: usize,
    pub root: usize,
    pub linf: f64,
}

/// Greedy minimal-distance matching between certificates and oracle root
/// profiles; duplicates among the certificates are collapsed first.
#[derive(Debug, Clone, Serialize)]
pub struct MatchTable {
    pub matches: Vec<MatchEntry>,
    pub unmatched_certificates: Vec<usize>,
    pub unmatched_roots: Vec<usize>,
    /// `(kept, dropped)` duplicate pairs collapsed before matching.
    pub collapsed: Vec<(usize, usize)>,
    pub tol_linf: f64,
}

pub fn cross_validate(
    certs: &[CriticalPointCertificate],
    roots: &[RadialProfile],
    tol_linf: f64,
) -> MatchTable {
    let mut active: Vec<usize> = Vec::new();
    let mut collapsed = Vec::new();
    for i in 0..certs.len() {
        if let Some(&kept) = active.iter().find(|&&k| certs[i].duplicate_of(&certs[k])) {
            collapsed.push((kept, i));
        } else {
            active.push(i);
        }
    }

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for &ci in &active {
        for (rj, root) in roots.iter().enumerate() {
            let d = certs[ci].profile.sup_distance(root);
            if d <= tol_linf {
                pairs.push((d, ci, rj));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut used_c = vec![false; certs.len()];
    let mut used_r = vec![false; roots.len()];
    let mut matches = Vec::new();
    for (d, ci, rj) in pairs {
        if !used_c[ci] && !used_r[rj] {
            used_c[ci] = true;
            used_r[rj] = true;
            matches.push(MatchEntry { certificate: ci, root: rj, linf: d });
        }
    }
    let unmatched_certificates =
        active.iter().copied().filter(|&ci| !used_c[ci]).collect();
    let unmatched_roots = (0..roots.len()).filter(|&rj| !used_r[rj]).collect();
    MatchTable { matches, unmatched_certificates, unmatched_roots, collapsed, tol_linf }
}

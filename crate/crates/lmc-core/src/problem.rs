//! Problem data: dimension, radius, the concave-term parameters `lambda` and
//! `q`, the weight `b`, the superlinear nonlinearity `f`, the branch
//! selector, and the optional gradient-dependent term `g(r, s, |u'|)`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::mesh::RadialMesh;

/// Which truncation of the nonlinearity drives the solve.
///
/// `Positive`/`Negative` force one-signed critical points; `Full` keeps both
/// signs active (used by the saddle search between the two small minima).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Positive,
    Negative,
    Full,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Positive => 1.0,
            Branch::Negative => -1.0,
            Branch::Full => 1.0,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Positive => write!(f, "positive"),
            Branch::Negative => write!(f, "negative"),
            Branch::Full => write!(f, "full"),
        }
    }
}

/// Weight `b(r)` with declared bounds `0 < b0 <= b(r) <= b1`.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightB {
    Constant { value: f64 },
    /// `b(r) = Σ coeffs[k] r^k` with declared bounds, checked by sampling.
    Polynomial { coeffs: Vec<f64>, b0: f64, b1: f64 },
}

impl WeightB {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            WeightB::Constant { value } => *value,
            WeightB::Polynomial { coeffs, .. } => {
                coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c)
            }
        }
    }

    /// Declared `(b0, b1)`.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            WeightB::Constant { value } => (*value, *value),
            WeightB::Polynomial { b0, b1, .. } => (*b0, *b1),
        }
    }
}

/// Custom scalar nonlinearity: `f` together with its antiderivative
/// `F(r, s) = ∫_0^s f(r, t) dt`, plus the declared constants used by the
/// growth condition and the threshold formulas.
#[derive(Clone)]
pub struct CustomNonlinearity {
    pub f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub big_f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    /// Superlinearity exponent (`theta > 2`).
    pub theta: f64,
    /// `F(r, s) >= a1 |s|^theta - a2` as declared.
    pub a1: f64,
    pub a2: f64,
    /// Declared coefficient with `|F(r, s)| <= (growth/theta) |s|^theta` on
    /// the working range; feeds the `c_eps` splitting constant.
    pub growth: f64,
}

impl fmt::Debug for CustomNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomNonlinearity")
            .field("theta", &self.theta)
            .field("a1", &self.a1)
            .field("a2", &self.a2)
            .field("growth", &self.growth)
            .finish()
    }
}

/// Built-in nonlinearity families.
#[derive(Debug, Clone)]
pub enum Nonlinearity {
    /// `f(r, s) = a |s|^{theta-2} s`, so `F = (a/theta) |s|^theta`.
    PurePower { a: f64, theta: f64 },
    /// `f = a_plus |s|^{theta-2} s^+ - a_minus |s|^{theta-2} s^-`; the odd
    /// power on each side with its own coefficient.
    AsymmetricPower { a_plus: f64, a_minus: f64, theta: f64 },
    Custom(CustomNonlinearity),
}

impl Nonlinearity {
    pub fn eval(&self, r: f64, s: f64) -> f64 {
        match self {
            Nonlinearity::PurePower { a, theta } => {
                if s == 0.0 {
                    0.0
                } else {
                    a * s.abs().powf(theta - 2.0) * s
                }
            }
            Nonlinearity::AsymmetricPower { a_plus, a_minus, theta } => {
                if s == 0.0 {
                    0.0
                } else {
                    let coeff = if s > 0.0 { *a_plus } else { *a_minus };
                    coeff * s.abs().powf(theta - 2.0) * s
                }
            }
            Nonlinearity::Custom(c) => (c.f)(r, s),
        }
    }

    /// `F(r, s) = ∫_0^s f(r, t) dt`.
    pub fn eval_integral(&self, r: f64, s: f64) -> f64 {
        match self {
            Nonlinearity::PurePower { a, theta } => a / theta * s.abs().powf(*theta),
            Nonlinearity::AsymmetricPower { a_plus, a_minus, theta } => {
                let coeff = if s >= 0.0 { *a_plus } else { *a_minus };
                coeff / theta * s.abs().powf(*theta)
            }
            Nonlinearity::Custom(c) => (c.big_f)(r, s),
        }
    }

    pub fn theta(&self) -> f64 {
        match self {
            Nonlinearity::PurePower { theta, .. }
            | Nonlinearity::AsymmetricPower { theta, .. } => *theta,
            Nonlinearity::Custom(c) => c.theta,
        }
    }

    /// `(a1, a2)` of the growth bound `F >= a1 |s|^theta - a2`.
    pub fn growth_floor(&self) -> (f64, f64) {
        match self {
            Nonlinearity::PurePower { a, theta } => (a / theta, 0.0),
            Nonlinearity::AsymmetricPower { a_plus, a_minus, theta } => {
                (a_plus.min(*a_minus) / theta, 0.0)
            }
            Nonlinearity::Custom(c) => (c.a1, c.a2),
        }
    }

    /// Coefficient `g` with `|F| <= (g/theta) |s|^theta`.
    pub fn growth_ceiling(&self) -> f64 {
        match self {
            Nonlinearity::PurePower { a, .. } => a.abs(),
            Nonlinearity::AsymmetricPower { a_plus, a_minus, .. } => a_plus.abs().max(a_minus.abs()),
            Nonlinearity::Custom(c) => c.growth,
        }
    }

    /// `|F(r,-s) - F(r,s)|` vanishes identically for symmetric families; the
    /// asymmetric family needs `theta > 4` for the near-even condition that
    /// the sign-repair surgery relies on.
    pub fn asymmetry_exponent_ok(&self) -> bool {
        match self {
            Nonlinearity::PurePower { .. } => true,
            Nonlinearity::AsymmetricPower { a_plus, a_minus, theta } => {
                a_plus == a_minus || *theta > 4.0
            }
            Nonlinearity::Custom(c) => c.theta > 4.0 || c.a1 == c.a2,
        }
    }
}

/// Custom gradient-dependent term `g(r, s, xi)` with antiderivative in `s`.
#[derive(Clone)]
pub struct CustomGradientTerm {
    pub g: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    pub big_g: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for CustomGradientTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomGradientTerm")
    }
}

#[derive(Debug, Clone)]
pub enum GradientTerm {
    /// `g(r, s, xi) = a |s|^{theta-2} s (1 + eta xi)`.
    PowerTilt { a: f64, theta: f64, eta: f64 },
    Custom(CustomGradientTerm),
}

/// Gradient term plus its declared Lipschitz constants (`l1` in `s`, `l2` in
/// `xi`) and growth parameters. The declarations are validated only from
/// below, by sampled difference quotients.
#[derive(Debug, Clone)]
pub struct GradientTermSpec {
    pub term: GradientTerm,
    pub l1: f64,
    pub l2: f64,
    pub theta: f64,
    pub a1: f64,
    pub a2: f64,
    /// `|G| <= (growth/theta)|s|^theta` over the admissible `xi` range.
    pub growth: f64,
}

impl GradientTermSpec {
    /// Tilted power term with Lipschitz constants derived from the closed
    /// form on `[0, R] x [-R, R] x [-1, 1]`:
    /// `sup |∂g/∂s| = a (theta-1) (1+|eta|) R^{theta-2}`,
    /// `sup |∂g/∂xi| = a |eta| R^{theta-1}`.
    pub fn power_tilt(a: f64, theta: f64, eta: f64, radius: f64) -> Self {
        let l1 = a.abs() * (theta - 1.0) * (1.0 + eta.abs()) * radius.powf(theta - 2.0);
        let l2 = a.abs() * eta.abs() * radius.powf(theta - 1.0);
        GradientTermSpec {
            term: GradientTerm::PowerTilt { a, theta, eta },
            l1,
            l2,
            theta,
            a1: a / theta * (1.0 - eta.abs()).max(0.0),
            a2: 0.0,
            growth: a.abs() * (1.0 + eta.abs()),
        }
    }

    pub fn eval(&self, r: f64, s: f64, xi: f64) -> f64 {
        match &self.term {
            GradientTerm::PowerTilt { a, theta, eta } => {
                if s == 0.0 {
                    0.0
                } else {
                    a * s.abs().powf(theta - 2.0) * s * (1.0 + eta * xi)
                }
            }
            GradientTerm::Custom(c) => (c.g)(r, s, xi),
        }
    }

    pub fn eval_integral(&self, r: f64, s: f64, xi: f64) -> f64 {
        match &self.term {
            GradientTerm::PowerTilt { a, theta, eta } => {
                a / theta * s.abs().powf(*theta) * (1.0 + eta * xi)
            }
            GradientTerm::Custom(c) => (c.big_g)(r, s, xi),
        }
    }

    /// Freeze `xi = |omega'(r)|` (piecewise constant per cell, read straight
    /// off the slope field) and expose the result as an ordinary
    /// nonlinearity. Node `i` reads the cell on its left; node 0 reads cell 0.
    pub fn frozen(&self, mesh: &Arc<RadialMesh>, omega_slopes: &[f64]) -> Nonlinearity {
        assert_eq!(omega_slopes.len(), mesh.n_cells());
        let xi: Arc<Vec<f64>> = Arc::new(omega_slopes.iter().map(|v| v.abs()).collect());
        let nodes: Arc<Vec<f64>> = Arc::new(mesh.nodes().to_vec());
        let lookup = move |xi: &[f64], nodes: &[f64], r: f64| -> f64 {
            // cell j covers (r_j, r_{j+1}]; clamp to the mesh range
            match nodes[1..].binary_search_by(|probe| probe.partial_cmp(&r).unwrap()) {
                Ok(j) => xi[j.min(xi.len() - 1)],
                Err(j) => xi[j.min(xi.len() - 1)],
            }
        };
        let spec_f = self.clone();
        let xi_f = Arc::clone(&xi);
        let nodes_f = Arc::clone(&nodes);
        let f = move |r: f64, s: f64| spec_f.eval(r, s, lookup(&xi_f, &nodes_f, r));
        let spec_big = self.clone();
        let big = move |r: f64, s: f64| spec_big.eval_integral(r, s, lookup(&xi, &nodes, r));
        let max_xi = omega_slopes.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let (a1, a2, growth) = match &self.term {
            GradientTerm::PowerTilt { a, eta, theta } => {
                // xi >= 0 along a frozen field, so the tilt factor lies in
                // [min(1, 1 + eta * max_xi), max(1, 1 + eta * max_xi)]
                let lo = (1.0 + eta.min(0.0) * max_xi).max(0.0);
                let hi = 1.0 + eta.max(0.0) * max_xi;
                (a / theta * lo, 0.0, a.abs() * hi)
            }
            GradientTerm::Custom(_) => (self.a1, self.a2, self.growth),
        };
        Nonlinearity::Custom(CustomNonlinearity {
            f: Arc::new(f),
            big_f: Arc::new(big),
            theta: self.theta,
            a1,
            a2,
            growth,
        })
    }
}

/// One fully specified problem instance.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    /// Space dimension `N >= 3`.
    pub dim: u32,
    /// Ball radius `R > 0`.
    pub radius: f64,
    /// Concave-term coefficient `lambda > 0`.
    pub lambda: f64,
    /// Concave exponent, `1 < q < 2`.
    pub q: f64,
    pub weight_b: WeightB,
    pub nonlinearity: Nonlinearity,
    pub branch: Branch,
    pub gradient_term: Option<GradientTermSpec>,
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("q must lie in (1, 2), got {0}")]
    BadQ(f64),
    #[error("lambda must be positive, got {0}")]
    BadLambda(f64),
    #[error("dimension must be at least 3, got {0}")]
    BadDim(u32),
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("theta must exceed 2, got {0}")]
    BadTheta(f64),
    #[error("weight bounds must satisfy 0 < b0 <= b1, got ({0}, {1})")]
    BadWeightBounds(f64, f64),
    #[error("weight leaves its declared bounds at r = {r}: b = {value}")]
    WeightOutOfBounds { r: f64, value: f64 },
}

/// Soft conditions that only void theoretical guarantees are reported as
/// warnings; structural violations are errors.
#[derive(Debug, Default, Clone, Serialize)]
pub struct ValidationReport {
    pub warnings: Vec<String>,
}

impl ProblemSpec {
    /// Structural checks plus sampled sign/limit conditions on `f` (and `g`).
    ///
    /// Degenerate test instances (e.g. `a = 0`, which breaks `s f(r,s) > 0`)
    /// pass with a warning so that reduced problems remain runnable.
    pub fn validate(&self, mesh: Option<&RadialMesh>) -> Result<ValidationReport, SpecError> {
        if self.dim < 3 {
            return Err(SpecError::BadDim(self.dim));
        }
        if !(self.radius > 0.0) {
            return Err(SpecError::BadRadius(self.radius));
        }
        if !(self.q > 1.0 && self.q < 2.0) {
            return Err(SpecError::BadQ(self.q));
        }
        if !(self.lambda > 0.0) {
            return Err(SpecError::BadLambda(self.lambda));
        }
        if !(self.nonlinearity.theta() > 2.0) {
            return Err(SpecError::BadTheta(self.nonlinearity.theta()));
        }
        let (b0, b1) = self.weight_b.bounds();
        if !(b0 > 0.0 && b0 <= b1) {
            return Err(SpecError::BadWeightBounds(b0, b1));
        }
        let mut report = ValidationReport::default();

        let sample_radii: Vec<f64> = match mesh {
            Some(m) => m.nodes().to_vec(),
            None => (0..=64).map(|i| self.radius * i as f64 / 64.0).collect(),
        };
        for &r in &sample_radii {
            let b = self.weight_b.eval(r);
            if b < b0 - 1e-12 * b0.abs() || b > b1 + 1e-12 * b1.abs() {
                return Err(SpecError::WeightOutOfBounds { r, value: b });
            }
        }

        // s f(r, s) > 0 away from 0, sampled.
        let mut sign_ok = true;
        let mut limit_sup: f64 = 0.0;
        for &r in sample_radii.iter().step_by((sample_radii.len() / 8).max(1)) {
            for k in 1..=16 {
                let s = self.radius * k as f64 / 16.0;
                for s in [s, -s] {
                    if s * self.nonlinearity.eval(r, s) <= 0.0 {
                        sign_ok = false;
                    }
                }
            }
            for k in 1..=6 {
                let s = self.radius * 10f64.powi(-(k as i32 + 2));
                limit_sup = limit_sup.max((self.nonlinearity.eval(r, s) / s).abs());
                limit_sup = limit_sup.max((self.nonlinearity.eval(r, -s) / s).abs());
            }
        }
        if !sign_ok {
            report
                .warnings
                .push("sampled s*f(r,s) <= 0 inside (0, R]: sign condition fails; \
                       multiplicity guarantees are void (test mode)"
                    .to_string());
        }
        if limit_sup > 1e-2 {
            report.warnings.push(format!(
                "f(r,s)/s does not vanish near s = 0 (sampled sup {limit_sup:.3e}); \
                 the superlinearity-at-zero condition looks violated"
            ));
        }

        if let Some(g) = &self.gradient_term {
            if !(g.theta > 2.0) {
                return Err(SpecError::BadTheta(g.theta));
            }
            let mut gsign_ok = true;
            let mut l1_seen: f64 = 0.0;
            let mut l2_seen: f64 = 0.0;
            for &r in sample_radii.iter().step_by((sample_radii.len() / 4).max(1)) {
                for xi in [0.0, 0.5, 1.0] {
                    for k in 1..=8 {
                        let s = self.radius * k as f64 / 8.0;
                        for s in [s, -s] {
                            if s * g.eval(r, s, xi) <= 0.0 {
                                gsign_ok = false;
                            }
                        }
                        let h = 1e-4 * self.radius;
                        l1_seen = l1_seen
                            .max(((g.eval(r, s + h, xi) - g.eval(r, s - h, xi)) / (2.0 * h)).abs());
                    }
                }
                for s in [0.25 * self.radius, 0.75 * self.radius] {
                    let h = 1e-4;
                    l2_seen = l2_seen
                        .max(((g.eval(r, s, 0.5 + h) - g.eval(r, s, 0.5 - h)) / (2.0 * h)).abs());
                }
            }
            if !gsign_ok {
                report.warnings.push("sampled s*g(r,s,xi) <= 0: gradient-term sign \
                     condition fails (test mode)".to_string());
            }
            // Lower-bound check only: sampling can never certify the
            // declared constants, it can only refute them.
            if l1_seen > g.l1 * (1.0 + 1e-6) + 1e-12 {
                report.warnings.push(format!(
                    "declared L1 = {:.6e} is below a sampled difference quotient {:.6e}",
                    g.l1, l1_seen
                ));
            }
            if l2_seen > g.l2 * (1.0 + 1e-6) + 1e-12 {
                report.warnings.push(format!(
                    "declared L2 = {:.6e} is below a sampled difference quotient {:.6e}",
                    g.l2, l2_seen
                ));
            }
        }
        Ok(report)
    }

    /// The instance with the opposite branch.
    pub fn with_branch(&self, branch: Branch) -> ProblemSpec {
        let mut p = self.clone();
        p.branch = branch;
        p
    }

    pub fn with_lambda(&self, lambda: f64) -> ProblemSpec {
        let mut p = self.clone();
        p.lambda = lambda;
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> ProblemSpec {
        ProblemSpec {
            dim: 3,
            radius: 1.0,
            lambda: 1e-3,
            q: 1.5,
            weight_b: WeightB::Constant { value: 1.0 },
            nonlinearity: Nonlinearity::PurePower { a: 1120.0, theta: 5.0 },
            branch: Branch::Positive,
            gradient_term: None,
        }
    }

    #[test]
    fn desk_instance_validates_clean() {
        let rep = desk().validate(None).unwrap();
        assert!(rep.warnings.is_empty(), "{:?}", rep.warnings);
    }

    #[test]
    fn degenerate_coefficient_warns_but_passes() {
        let mut p = desk();
        p.nonlinearity = Nonlinearity::PurePower { a: 0.0, theta: 5.0 };
        let rep = p.validate(None).unwrap();
        assert!(!rep.warnings.is_empty());
    }

    #[test]
    fn structural_violations_are_errors() {
        let mut p = desk();
        p.q = 2.5;
        assert!(p.validate(None).is_err());
        let mut p = desk();
        p.lambda = 0.0;
        assert!(p.validate(None).is_err());
        let mut p = desk();
        p.weight_b = WeightB::Polynomial { coeffs: vec![1.0, -2.0], b0: 0.5, b1: 1.0 };
        assert!(matches!(p.validate(None), Err(SpecError::WeightOutOfBounds { .. })));
    }

    #[test]
    fn asymmetric_power_integral_and_sign() {
        let f = Nonlinearity::AsymmetricPower { a_plus: 2.0, a_minus: 3.0, theta: 5.0 };
        assert!((f.eval(0.0, 0.5) - 2.0 * 0.5_f64.powi(4)).abs() < 1e-15);
        assert!((f.eval(0.0, -0.5) + 3.0 * 0.5_f64.powi(4)).abs() < 1e-15);
        assert!((f.eval_integral(0.0, -0.5) - 3.0 / 5.0 * 0.5_f64.powi(5)).abs() < 1e-15);
        assert!(!f.asymmetry_exponent_ok() == false);
        let g = Nonlinearity::AsymmetricPower { a_plus: 1.0, a_minus: 2.0, theta: 3.5 };
        assert!(!g.asymmetry_exponent_ok());
    }

    #[test]
    fn frozen_gradient_term_reads_cell_slopes() {
        use crate::mesh::{Grading, SlopeField};
        let mesh = std::sync::Arc::new(RadialMesh::new(3, 1.0, 4, Grading::Uniform).unwrap());
        let g = GradientTermSpec::power_tilt(1.0, 5.0, 1.0, 1.0);
        let omega =
            SlopeField::new(std::sync::Arc::clone(&mesh), vec![0.0, -0.5, 0.25, -1.0]).unwrap();
        let frozen = g.frozen(&mesh, omega.values());
        // Inside cell 1 (r in (0.25, 0.5]) the tilt factor is 1 + |-0.5|.
        let s = 0.3_f64;
        let want = 1.0 * s.powi(4) * 1.5;
        assert!((frozen.eval(0.4, s) - want).abs() < 1e-14);
        // xi = 0 freezes to the bare power term.
        let zero = SlopeField::zero(std::sync::Arc::clone(&mesh));
        let frozen0 = g.frozen(&mesh, zero.values());
        assert!((frozen0.eval(0.9, s) - s.powi(4)).abs() < 1e-14);
    }
}

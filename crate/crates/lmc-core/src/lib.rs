//! Solver library for radial Dirichlet problems driven by the mean curvature
//! operator of Lorentz-Minkowski space,
//!
//! ```text
//! -( r^{N-1} u' / sqrt(1 - u'^2) )' = r^{N-1} ( lambda b(r) |u|^{q-2} u + f(r, u) ),
//! u'(0) = u(R) = 0,
//! ```
//!
//! with a concave `lambda |u|^{q-2} u` term (`1 < q < 2`) and a superlinear
//! `f`. The energy is the nonsmooth functional `I = Psi + F` on the gradient
//! constraint set `K = { |u'| <= 1 }`, where `Psi(u) = ∫ r^{N-1} (1 -
//! sqrt(1 - u'^2))`. Critical points in the sense of Szulkin are located by
//! proximal-gradient descent (global and ball-constrained minima), by
//! numerical mountain-pass deformation (the saddle above the annulus energy
//! barrier, and a low-level saddle between the two small local minima), and
//! by a frozen-gradient fixed-point loop when `f` depends on `|u'|`.
//!
//! Every located critical point is cross-checked against an independent
//! shooting integrator for the radial ODE, and packaged into a certificate
//! carrying energy, criticality and weak-form residuals, sign/monotonicity
//! flags, and the explicit threshold constants (`lambda_*`, `rho_±`,
//! `lambda_**`, the contraction factor `k`, ...) that organize the
//! multiplicity structure.
//!
//! Data-parallel inner loops (multi-start descents, shooting scans, constant
//! estimation) run on rayon when the `parallel` feature is enabled (default)
//! and fall back to sequential iteration otherwise; see [`parallel`].

pub mod certify;
pub mod config;
pub mod energy;
pub mod grad_iter;
pub mod mesh;
pub mod minimize;
pub mod mountain;
pub mod parallel;
pub mod pipeline;
pub mod problem;
pub mod report;
pub mod shooting;
pub mod thresholds;



pub use certify::{certify, cross_validate, Classification, CriticalPointCertificate, MatchTable};
pub use energy::{EnergyBreakdown, EnergyError, EnergyModel};
pub use mesh::{Grading, MeshError, RadialMesh, RadialProfile, SlopeField};
pub use minimize::{minimize, minimize_in_ball, repair_sign, SolveError, SolveOptions};
pub use problem::{Branch, GradientTerm, GradientTermSpec, Nonlinearity, ProblemSpec, WeightB};
pub use shooting::{scan_and_count, shoot, ScanOutcome, ShootOptions, ShootingRecord};
pub use thresholds::{
    check_gradient_conditions, check_superlinearity, compute_thresholds, ThresholdError,
    ThresholdReport,
};

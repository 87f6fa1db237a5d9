use lmc_core::*;
use lmc_core::minimize::SolveOptions;
use lmc_core::mountain::{mountain_pass, PathOptions};
use std::sync::Arc;

fn main() {
    let mesh = Arc::new(RadialMesh::new(3, 1.0, 160, Grading::Uniform).unwrap());
    let lambda = 0.2;
    let spec = ProblemSpec {
        dim: 3, radius: 1.0, lambda, q: 1.5,
        weight_b: WeightB::Constant { value: 1.0 },
        nonlinearity: Nonlinearity::PurePower { a: 1120.0, theta: 5.0 },
        branch: Branch::Positive, gradient_term: None,
    };
    let thr = compute_thresholds(&mesh, &spec, None, 5).unwrap();
    let sopts = SolveOptions { random_starts: 2, ..Default::default() };
    let up = minimize(&spec, &mesh, Branch::Positive, &sopts, Some(&thr)).unwrap();
    eprintln!("u+ energy {:.6e} norm {:.4e} res {:.2e}", up.energy.total, up.h_norm, up.criticality_residual);
    let mut popts = PathOptions::default();
    popts.max_refine_iters = 2000;
    match mountain_pass(&spec, &mesh, Branch::Positive, &up.field, &thr, &popts) {
        Ok(w) => eprintln!("W+: E={:.6e} res={:.2e} sup_u={:.4e} norm={:.4e}", w.energy.total, w.criticality_residual, w.sup_u, w.h_norm),
        Err(e) => eprintln!("ERR: {e}"),
    }
}

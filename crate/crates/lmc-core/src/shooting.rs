//! Independent verification channel: integrate the radial ODE outward from
//! the origin and locate solutions by scanning the initial height.
//!
//! The integrated state is `(u, h)` with the flux `h = r^{N-1} u' /
//! sqrt(1 - u'^2)`, which stays bounded and smooth where `u'` itself would
//! make the equation singular; the slope is recovered through
//! `u' = h/r^{N-1} / sqrt(1 + (h/r^{N-1})^2)`, which lies in `(-1, 1)`
//! structurally, so the gradient constraint never needs enforcement. The
//! first step leaves `r = 0` by the series `u' ≈ -h2(0) r / N` implied by
//! the vanishing flux.
//!
//! The scan map `T(s) = u(R; s)` is continuous in the initial height; roots
//! of `T` are radial solutions. Scanning is embarrassingly parallel.

use std::sync::Arc;

use serde::Serialize;

use crate::energy::EnergyModel;
use crate::mesh::{RadialMesh, RadialProfile};
use crate::parallel::{map_collect, ExecMode};
use crate::problem::ProblemSpec;

/// Dormand-Prince 5(4) coefficients.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const B5: [f64; 7] =
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Debug, Clone)]
pub struct ShootOptions {
    /// First node leaves the origin at `r = r0_factor * R` via the series
    /// startup.
    pub r0_factor: f64,
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
    /// Refine roots until `|T| <= terminal_tol`.
    pub terminal_tol: f64,
    /// Roots closer than `distinct_factor * R` in initial height collapse.
    pub distinct_factor: f64,
    pub exec: ExecMode,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            r0_factor: 1e-6,
            atol: 1e-10,
            rtol: 1e-10,
            max_steps: 400_000,
            terminal_tol: 1e-10,
            distinct_factor: 1e-6,
            exec: ExecMode::auto(),
        }
    }
}

/// One trajectory of the shooting map.
#[derive(Debug, Clone, Serialize)]
pub struct ShootingRecord {
    /// Initial height `u(0)`.
    pub s: f64,
    /// Terminal value `T(s) = u(R; s)`.
    pub terminal: f64,
    pub reached_r: bool,
    /// `|u|` entered the cutoff region past `R + 1`.
    pub exceeded_truncation: bool,
    pub step_failure: bool,
    /// Trajectory crossed `u = 0` before `R` (the concave term is not
    /// Lipschitz there; crossings are integrable but flagged).
    pub touched_zero: bool,
    pub steps: usize,
    /// Largest `|h2|` sampled along the run; `|h(r)| <= sup|h2| r^N / N`.
    pub max_rhs_density: f64,
    pub max_abs_flux_ratio: f64,
}

struct Integrator<'a> {
    model: &'a EnergyModel,
    nm1: i32,
}

impl<'a> Integrator<'a> {
    fn new(model: &'a EnergyModel) -> Self {
        Integrator { model, nm1: (model.spec().dim - 1) as i32 }
    }

    fn slope(&self, r: f64, h: f64) -> f64 {
        let w = h / r.powi(self.nm1);
        w / (1.0 + w * w).sqrt()
    }

    fn rhs(&self, r: f64, y: [f64; 2]) -> [f64; 2] {
        let b = self.model.spec().weight_b.eval(r);
        let h2 = self.model.rhs_density(r, b, y[0]);
        [self.slope(r, y[1]), -r.powi(self.nm1) * h2]
    }

    /// Series startup values at `r0`: `u ≈ s - h2(0,s) r0^2/(2N)`,
    /// `h = -h2(0,s) r0^N / N`.
    fn startup(&self, s: f64, r0: f64) -> [f64; 2] {
        let n = self.model.spec().dim as f64;
        let b0 = self.model.spec().weight_b.eval(0.0);
        let h20 = self.model.rhs_density(0.0, b0, s);
        [s - h20 * r0 * r0 / (2.0 * n), -h20 * r0.powi(self.nm1 + 1) / n]
    }
}

/// Integrate one trajectory with initial height `s`; adaptive steps, no
/// profile capture. When `record_nodes` is given, steps are additionally
/// clamped to land exactly on those radii and `(u, u')` is recorded there.
fn integrate(
    model: &EnergyModel,
    s: f64,
    opts: &ShootOptions,
    record_nodes: Option<&[f64]>,
) -> (ShootingRecord, Vec<(f64, f64, f64)>) {
    let spec = model.spec();
    let radius = spec.radius;
    let ig = Integrator::new(model);
    let r0 = opts.r0_factor * radius;
    let mut r = r0;
    let mut y = ig.startup(s, r0);

    let mut samples = Vec::new();
    let mut node_iter = record_nodes.map(|nodes| nodes.iter().copied().peekable());
    if let Some(it) = node_iter.as_mut() {
        // nodes at or below the startup radius take the startup values
        while let Some(&rn) = it.peek() {
            if rn <= r {
                samples.push((rn, if rn == 0.0 { s } else { y[0] }, ig.slope(r0.max(rn), y[1])));
                it.next();
            } else {
                break;
            }
        }
    }

    let mut rec = ShootingRecord {
        s,
        terminal: y[0],
        reached_r: false,
        exceeded_truncation: false,
        step_failure: false,
        touched_zero: false,
        steps: 0,
        max_rhs_density: 0.0,
        max_abs_flux_ratio: 0.0,
    };

    let mut h_step = (radius - r0) / 64.0;
    let h_min = 1e-15 * radius;
    let mut err_prev: f64 = 1.0;

    while r < radius {
        if rec.steps >= opts.max_steps {
            rec.step_failure = true;
            break;
        }
        let mut clamped_to = None;
        let mut h_try = h_step.min(radius - r);
        if let Some(it) = node_iter.as_mut() {
            if let Some(&rn) = it.peek() {
                if r + h_try >= rn - 1e-15 * radius {
                    h_try = rn - r;
                    clamped_to = Some(rn);
                }
            }
        }
        if h_try <= 0.0 {
            if let Some(it) = node_iter.as_mut() {
                it.next();
            }
            continue;
        }

        let mut k = [[0.0f64; 2]; 7];
        k[0] = ig.rhs(r, y);
        for stage in 0..6 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(stage + 1) {
                ys[0] += h_try * A[stage][j] * kj[0];
                ys[1] += h_try * A[stage][j] * kj[1];
            }
            k[stage + 1] = ig.rhs(r + C[stage] * h_try, ys);
        }
        let mut y5 = y;
        let mut y4 = y;
        for (j, kj) in k.iter().enumerate() {
            y5[0] += h_try * B5[j] * kj[0];
            y5[1] += h_try * B5[j] * kj[1];
            y4[0] += h_try * B4[j] * kj[0];
            y4[1] += h_try * B4[j] * kj[1];
        }
        let mut err: f64 = 0.0;
        for i in 0..2 {
            let scale = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            err = err.max(((y5[i] - y4[i]) / scale).abs());
        }
        rec.steps += 1;

        if err <= 1.0 || h_try <= h_min {
            let crossed = y[0] > 0.0 && y5[0] <= 0.0;
            r += h_try;
            y = y5;
            if crossed {
                rec.touched_zero = true;
            }
            if y[0].abs() >= radius + 1.0 {
                rec.exceeded_truncation = true;
            }
            // sample |h2| at every stage radius so the flux bound uses a
            // tight running supremum
            for (i, kv) in k.iter().enumerate() {
                let rs = if i == 0 { r - h_try } else { r - h_try + C[i - 1] * h_try };
                if rs > 0.0 {
                    rec.max_rhs_density = rec.max_rhs_density.max(kv[1].abs() / rs.powi(ig.nm1));
                }
            }
            let bound = rec.max_rhs_density * r.powi(ig.nm1 + 1) / spec.dim as f64;
            if bound > 0.0 {
                rec.max_abs_flux_ratio = rec.max_abs_flux_ratio.max(y[1].abs() / bound);
            }
            if let Some(rn) = clamped_to {
                samples.push((rn, y[0], ig.slope(r.max(r0), y[1])));
                if let Some(it) = node_iter.as_mut() {
                    it.next();
                }
            }
            // PI-style growth limited by the previous error
            let fac = 0.9 * err.max(1e-10).powf(-0.2) * err_prev.max(1e-10).powf(0.04);
            h_step = h_try * fac.clamp(0.2, 5.0);
            err_prev = err.max(1e-10);
        } else {
            h_step = h_try * (0.9 * err.powf(-0.25)).clamp(0.1, 0.9);
            if h_step < h_min {
                rec.step_failure = true;
                break;
            }
        }
    }
    rec.reached_r = (r - radius).abs() <= 1e-12 * radius && !rec.step_failure;
    rec.terminal = y[0];
    (rec, samples)
}

/// Shoot one trajectory and report its terminal value and flags.
pub fn shoot(spec: &ProblemSpec, mesh: &Arc<RadialMesh>, s: f64, opts: &ShootOptions) -> ShootingRecord {
    let model = EnergyModel::new(Arc::clone(mesh), spec.clone());
    integrate(&model, s, opts, None).0
}

/// A refined root of the shooting map, resampled onto the mesh.
#[derive(Debug, Clone)]
pub struct ShootingRoot {
    pub s: f64,
    pub terminal: f64,
    pub profile: RadialProfile,
    pub record: ShootingRecord,
}

#[derive(Debug, Clone)]
pub struct ScanOutcome {
    /// `(s, T(s))` over the scan grid, in grid order.
    pub samples: Vec<(f64, f64)>,
    pub roots: Vec<ShootingRoot>,
    pub skipped_brackets: usize,
}

/// Mixed log + linear grid of initial heights for one sign. 512 points by
/// default covers both the tiny concave-term well and the deep superlinear
/// solutions.
pub fn default_scan_grid(radius: f64, negative: bool, count: usize) -> Vec<f64> {
    let half = count / 2;
    let mut grid: Vec<f64> = Vec::with_capacity(count);
    for i in 0..half {
        // log-spaced in [1e-7 R, R]
        let t = i as f64 / (half - 1).max(1) as f64;
        grid.push(radius * 10f64.powf(-7.0 * (1.0 - t)));
    }
    for i in 1..=(count - half) {
        grid.push(radius * i as f64 / (count - half) as f64);
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * radius);
    if negative {
        grid.iter().map(|s| -s).rev().collect()
    } else {
        grid
    }
}

/// Scan the initial-height grid, bracket the sign changes of `T(s)`, refine
/// each bracket by bisection to `|T| <= terminal_tol`, collapse nearby roots
/// and resample each surviving root onto the mesh. Brackets whose endpoints
/// came from failed integrations are skipped and counted.
pub fn scan_and_count(
    spec: &ProblemSpec,
    mesh: &Arc<RadialMesh>,
    grid: Option<&[f64]>,
    opts: &ShootOptions,
) -> ScanOutcome {
    let model = EnergyModel::new(Arc::clone(mesh), spec.clone());
    let own_grid;
    let grid: &[f64] = match grid {
        Some(g) => g,
        None => {
            own_grid = default_scan_grid(
                spec.radius,
                matches!(spec.branch, crate::problem::Branch::Negative),
                512,
            );
            &own_grid
        }
    };
    let records = map_collect(opts.exec, grid, |&s| integrate(&model, s, opts, None).0);
    let samples: Vec<(f64, f64)> = records.iter().map(|r| (r.s, r.terminal)).collect();

    let mut skipped = 0usize;
    let mut brackets = Vec::new();
    for w in records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.step_failure || b.step_failure {
            skipped += 1;
            continue;
        }
        if a.terminal == 0.0 {
            brackets.push((a.s, a.s));
        } else if a.terminal * b.terminal < 0.0 {
            brackets.push((a.s, b.s));
        }
    }
    if let Some(last) = records.last() {
        if !last.step_failure && last.terminal == 0.0 {
            brackets.push((last.s, last.s));
        }
    }

    let refined = map_collect(opts.exec, &brackets, |&(mut lo, mut hi)| {
        let mut t_lo = integrate(&model, lo, opts, None).0.terminal;
        if lo == hi || t_lo == 0.0 {
            return lo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let t_mid = integrate(&model, mid, opts, None).0.terminal;
            if t_mid.abs() <= opts.terminal_tol || (hi - lo).abs() <= 1e-15 * spec.radius.max(1.0) {
                return mid;
            }
            if t_lo * t_mid <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
                t_lo = t_mid;
            }
        }
        0.5 * (lo + hi)
    });

    let mut distinct: Vec<f64> = Vec::new();
    for s in refined {
        if distinct.iter().all(|&t| (s - t).abs() > opts.distinct_factor * spec.radius) {
            distinct.push(s);
        }
    }

    let roots = map_collect(opts.exec, &distinct, |&s| {
        let (record, samples) = integrate(&model, s, opts, Some(mesh.nodes()));
        let mut u: Vec<f64> = samples.iter().map(|(_, ui, _)| *ui).collect();
        u.resize(mesh.n_nodes(), 0.0);
        let profile = RadialProfile::from_node_values(Arc::clone(mesh), u)
            .expect("node-aligned integration yields one sample per node");
        ShootingRoot { s, terminal: record.terminal, profile, record }
    });

    ScanOutcome { samples, roots, skipped_brackets: skipped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Grading;
    use crate::problem::{Branch, Nonlinearity, ProblemSpec, WeightB};

    fn desk(lambda: f64, branch: Branch) -> ProblemSpec {
        ProblemSpec {
            dim: 3,
            radius: 1.0,
            lambda,
            q: 1.5,
            weight_b: WeightB::Constant { value: 1.0 },
            nonlinearity: Nonlinearity::PurePower { a: 1120.0, theta: 5.0 },
            branch,
            gradient_term: None,
        }
    }

    fn mesh(m: usize) -> Arc<RadialMesh> {
        Arc::new(RadialMesh::new(3, 1.0, m, Grading::Uniform).unwrap())
    }

    #[test]
    fn zero_height_stays_zero() {
        let mesh = mesh(50);
        let rec = shoot(&desk(1e-3, Branch::Positive), &mesh, 0.0, &ShootOptions::default());
        assert!(rec.reached_r);
        assert_eq!(rec.terminal, 0.0);
    }

    #[test]
    fn flux_bound_holds_along_trajectories() {
        let mesh = mesh(50);
        let opts = ShootOptions::default();
        for s in [0.1, 0.4, 0.8, 1.0] {
            let rec = shoot(&desk(1e-3, Branch::Positive), &mesh, s, &opts);
            assert!(rec.reached_r);
            assert!(
                rec.max_abs_flux_ratio <= 1.0 + 1e-6,
                "flux bound violated at s={s}: ratio {}",
                rec.max_abs_flux_ratio
            );
        }
    }

    #[test]
    fn trajectories_of_positive_solutions_decrease() {
        // pick a root and check u' < 0 beyond the origin
        let mesh = mesh(400);
        let spec = desk(0.05, Branch::Positive);
        let scan = scan_and_count(&spec, &mesh, None, &ShootOptions::default());
        assert!(!scan.roots.is_empty());
        for root in &scan.roots {
            let v = root.profile.slope_field();
            assert!(
                v.values().iter().all(|&x| x <= 1e-8),
                "root s={} not decreasing",
                root.s
            );
            assert!(root.terminal.abs() <= 1e-9);
        }
    }

    #[test]
    fn desk_instance_scan_finds_three_positive_roots() {
        let mesh = mesh(400);
        let spec = desk(0.05, Branch::Positive);
        let scan = scan_and_count(&spec, &mesh, None, &ShootOptions::default());
        assert!(
            scan.roots.len() >= 3,
            "expected at least 3 roots, got {:?}",
            scan.roots.iter().map(|r| r.s).collect::<Vec<_>>()
        );
        // weak residual of resampled roots stays small
        let model = EnergyModel::new(Arc::clone(&mesh), spec);
        for root in &scan.roots {
            let w = model.weak_residual(&root.profile.slope_field()).unwrap();
            assert!(w <= 1e-2, "weak residual {w} at s = {}", root.s);
        }
    }

    #[test]
    fn odd_nonlinearity_scan_is_mirror_symmetric() {
        let mesh = mesh(200);
        let pos = scan_and_count(
            &desk(0.05, Branch::Positive),
            &mesh,
            None,
            &ShootOptions::default(),
        );
        let neg = scan_and_count(
            &desk(0.05, Branch::Negative),
            &mesh,
            None,
            &ShootOptions::default(),
        );
        assert_eq!(pos.roots.len(), neg.roots.len());
        let mut neg_heights: Vec<f64> = neg.roots.iter().map(|r| -r.s).collect();
        neg_heights.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut pos_heights: Vec<f64> = pos.roots.iter().map(|r| r.s).collect();
        pos_heights.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in pos_heights.iter().zip(neg_heights.iter()) {
            assert!((a - b).abs() < 1e-8, "mirror roots differ: {a} vs {b}");
        }
    }

    #[test]
    fn no_nonlinearity_means_no_roots() {
        // test mode: a = 0 and negligible lambda term switched off by scanning
        // a problem whose rhs vanishes identically on the positive branch
        let mesh = mesh(100);
        let mut spec = desk(1e-12, Branch::Positive);
        spec.nonlinearity = Nonlinearity::PurePower { a: 0.0, theta: 5.0 };
        // with f = 0 and lambda ~ 0 the terminal map is essentially T(s) = s
        let scan = scan_and_count(&spec, &mesh, None, &ShootOptions::default());
        assert!(scan.roots.is_empty(), "roots: {:?}", scan.roots.len());
    }
}

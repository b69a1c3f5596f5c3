//! Numerical self-check run by `bhmc check`: finite differences,
//! self-concordance, Dikin containment, involution and energy order.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::barrier::{fault, Polytope};
use crate::baselines::sample_uniform_simplex;
use crate::diagnostics::mu_vector;
use crate::hamiltonian::{
    dp_h2, dx_h1, dx_h2, h1, h2, hamiltonian, phase_norm, sample_momentum, Gaussian, NormMode,
    PhasePoint, TargetPotential,
};
use crate::integrator::{
    involution_check, phi, proposal, LeapfrogConfig, ProposalConfig, ProposalStatus,
};
use crate::linalg::{dot, norm2, sub};
use crate::sampler::{chain_rng, ChainRng};

/// Deliberate bugs the self-check must catch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    TraceTermSign,
}

#[derive(Clone, Debug, Default)]
pub struct CheckOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub suite: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error statistic; for energy order, the fitted slope.
    pub worst: f64,
    pub threshold: String,
    pub seconds: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(CheckRow::passed)
    }

    /// Fixed-width pass/fail table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<18} {:>6} {:>8} {:>12} {:<22} {:>8}  result\n",
            "suite", "cases", "failures", "worst", "threshold", "seconds"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<18} {:>6} {:>8} {:>12.3e} {:<22} {:>8.3}  {}\n",
                r.suite,
                r.cases,
                r.failures,
                r.worst,
                r.threshold,
                r.seconds,
                if r.passed() { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

struct FaultGuard;

impl FaultGuard {
    fn install(fault: Option<Fault>) -> Self {
        fault::set_trace_sign_flip(fault == Some(Fault::TraceTermSign));
        FaultGuard
    }
}

impl Drop for FaultGuard {
    fn drop(&mut self) {
        fault::set_trace_sign_flip(false);
    }
}

pub fn run_checks(opts: &CheckOptions) -> CheckReport {
    let _guard = FaultGuard::install(opts.fault);
    let suites: [(&'static str, fn(u64) -> Suite); 5] = [
        ("finite_difference", finite_difference_suite),
        ("self_concordance", self_concordance_suite),
        ("dikin", dikin_suite),
        ("involution", involution_suite),
        ("energy_order", energy_order_suite),
    ];
    let rows = suites
        .iter()
        .map(|(name, f)| {
            let start = Instant::now();
            let s = f(opts.seed);
            CheckRow {
                suite: name,
                cases: s.cases,
                failures: s.failures,
                worst: s.worst,
                threshold: s.threshold,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    CheckReport { rows }
}

struct Suite {
    cases: usize,
    failures: usize,
    worst: f64,
    threshold: String,
}

pub const FD_REL_TOL: f64 = 1e-5;
/// Finite-difference points are drawn uniformly from the polytope shrunk
/// toward its centre by this factor. Closer to a face `g` becomes so
/// ill-conditioned that both sides of the comparison lose ~6 digits.
pub const FD_SHRINK: f64 = 0.95;

fn presets() -> [Polytope<f64>; 2] {
    [Polytope::hypercube(5, 0.5), Polytope::simplex(5)]
}

/// Uniform point of a preset shrunk toward its centre by `shrink`.
fn random_point(poly: &Polytope<f64>, rng: &mut ChainRng, shrink: f64) -> Vec<f64> {
    let d = poly.dim();
    match poly.kind() {
        crate::barrier::PolytopeKind::Simplex => {
            let c = 1.0 / (d as f64 + 1.0);
            let x: Vec<f64> = sample_uniform_simplex(d, rng);
            x.iter().map(|v| c + shrink * (v - c)).collect()
        }
        crate::barrier::PolytopeKind::Hypercube { half_width } => (0..d)
            .map(|_| shrink * half_width * (2.0 * rng.random::<f64>() - 1.0))
            .collect(),
        crate::barrier::PolytopeKind::General => unreachable!("presets only"),
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = norm2(a).max(norm2(b)).max(1e-8);
    norm2(&sub(a, b)) / scale
}

/// Central-difference gradient of `f` at `x` with step `eps`.
fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[j] += eps;
            lo[j] -= eps;
            (f(&hi) - f(&lo)) / (2.0 * eps)
        })
        .collect()
}

fn finite_difference_suite(seed: u64) -> Suite {
    let mut rng = chain_rng(seed);
    let mut worst = 0.0f64;
    let mut failures = 0;
    let mut cases = 0;
    for poly in presets() {
        let target = Gaussian::new(mu_vector(poly.dim()).unwrap());
        for _ in 0..100 {
            let x = random_point(&poly, &mut rng, FD_SHRINK);
            let Ok(ms) = poly.metric_state(&x) else {
                failures += 1;
                continue;
            };
            let eps = 1e-4 * ms.slack().iter().cloned().fold(f64::INFINITY, f64::min);
            let p = sample_momentum(&ms, &mut rng);
            let u: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
            let v: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
            let ms_at = |y: &[f64]| poly.metric_state(y).expect("FD step stays inside");

            let mut errs = Vec::new();
            let grad = poly.barrier_gradient(&x).unwrap();
            errs.push(rel_err(
                &grad,
                &fd_gradient(|y| poly.barrier_value(y).unwrap(), &x, eps),
            ));
            // metric as the Jacobian of the barrier gradient, column by column
            let g = ms.metric();
            for j in 0..x.len() {
                let col: Vec<f64> = (0..x.len()).map(|i| g[(i, j)]).collect();
                let fd = fd_gradient(|y| poly.barrier_gradient(y).unwrap()[j], &x, eps);
                errs.push(rel_err(&col, &fd));
            }
            errs.push(rel_err(
                &poly.trace_term(&ms),
                &fd_gradient(|y| ms_at(y).logdet(), &x, eps),
            ));
            errs.push(rel_err(
                &poly.metric_dirderiv(&ms, &u, &v),
                &fd_gradient(|y| dot(&u, &ms_at(y).metric().mul_vec(&v)), &x, eps),
            ));
            errs.push(rel_err(
                &dx_h1(&target, &poly, &ms),
                &fd_gradient(|y| h1(&target, &ms_at(y)), &x, eps),
            ));
            errs.push(rel_err(
                &dx_h2(&poly, &ms, &p),
                &fd_gradient(|y| h2(&ms_at(y), &p), &x, eps),
            ));
            let peps = 1e-4 * norm2(&p).max(1.0);
            errs.push(rel_err(&dp_h2(&ms, &p), &fd_gradient(|q| h2(&ms, q), &p, peps)));

            let e = errs.iter().cloned().fold(0.0, f64::max);
            cases += 1;
            worst = worst.max(e);
            if !(e <= FD_REL_TOL) {
                failures += 1;
            }
        }
    }
    Suite {
        cases,
        failures,
        worst,
        threshold: format!("rel err <= {FD_REL_TOL:e}"),
    }
}

fn random_direction(d: usize, rng: &mut ChainRng) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn self_concordance_suite(seed: u64) -> Suite {
    let mut rng = chain_rng(seed.wrapping_add(1));
    let mut worst = 0.0f64;
    let mut failures = 0;
    let mut cases = 0;
    for poly in presets() {
        let nu = poly.n_constraints() as f64;
        for _ in 0..500 {
            let x = random_point(&poly, &mut rng, 1.0);
            let ms = poly.metric_state(&x).unwrap();
            let h = random_direction(x.len(), &mut rng);
            let norm = ms.tangent_norm(&h);
            // D³φ[h,h,h] = hᵀ Dg[h,h]
            let third = dot(&h, &poly.metric_dirderiv(&ms, &h, &h));
            let first = dot(&poly.barrier_gradient(&x).unwrap(), &h);
            let r3 = third.abs() / (2.0 * norm.powi(3));
            let r1 = first.abs() / (nu.sqrt() * norm);
            let r = r3.max(r1);
            cases += 1;
            worst = worst.max(r);
            if r > 1.0 + 1e-10 {
                failures += 1;
            }
        }
    }
    Suite {
        cases,
        failures,
        worst,
        threshold: "ratio <= 1".into(),
    }
}

fn dikin_suite(seed: u64) -> Suite {
    let mut rng = chain_rng(seed.wrapping_add(2));
    let mut failures = 0;
    let mut cases = 0;
    let mut worst = 0.0f64;
    for poly in presets() {
        for _ in 0..500 {
            let x = random_point(&poly, &mut rng, 1.0);
            let ms = poly.metric_state(&x).unwrap();
            let h = random_direction(x.len(), &mut rng);
            let scale = 0.999 / ms.tangent_norm(&h);
            let y: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a + scale * b).collect();
            // fraction of the slack consumed, < 1 inside the polytope
            let used = poly
                .slack(&y)
                .iter()
                .zip(ms.slack())
                .map(|(sy, sx)| 1.0 - sy / sx)
                .fold(f64::NEG_INFINITY, f64::max);
            cases += 1;
            worst = worst.max(used);
            if !poly.contains(&y) {
                failures += 1;
            }
        }
    }
    Suite {
        cases,
        failures,
        worst,
        threshold: "feasible at radius 0.999".into(),
    }
}

pub const INVOLUTION_STEPS: [f64; 6] = [0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125];

fn involution_suite(seed: u64) -> Suite {
    let mut rng = chain_rng(seed.wrapping_add(3));
    let mut failures = 0;
    let mut cases = 0;
    let mut worst = 0.0f64;
    for poly in presets() {
        for _ in 0..50 {
            let x = random_point(&poly, &mut rng, 0.9);
            let ms = poly.metric_state(&x).unwrap();
            let z = PhasePoint::new(x, sample_momentum(&ms, &mut rng));
            cases += 1;
            let mut err = None;
            for h in INVOLUTION_STEPS {
                let cfg = LeapfrogConfig::new(h);
                let eta = 100.0 * cfg.fp_tol;
                let z1 = phi(&poly, &z, &cfg);
                if !involution_check(&poly, &z, &z1, &cfg, eta, NormMode::SelfConcordant).passed() {
                    continue;
                }
                let z1 = z1.point().expect("checked").clone();
                if let Some(z2) = phi(&poly, &z1, &cfg).point() {
                    let e = phase_norm(&ms, &sub(&z2.x, &z.x), &sub(&z2.p, &z.p));
                    err = Some(e / cfg.fp_tol);
                }
                break;
            }
            match err {
                Some(e) => {
                    worst = worst.max(e);
                    if e > 10.0 {
                        failures += 1;
                    }
                }
                None => failures += 1,
            }
        }
    }
    Suite {
        cases,
        failures,
        worst,
        threshold: "err/fp_tol <= 10".into(),
    }
}

/// Least-squares slope of `log e` against `log h`.
pub fn loglog_slope(h: &[f64], e: &[f64]) -> f64 {
    let lx: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

/// One-step energy errors at `h0, h0/2, h0/4, h0/8`, or `None` if any step fails.
pub fn energy_errors(
    target: &impl TargetPotential<f64>,
    poly: &Polytope<f64>,
    z: &PhasePoint<f64>,
    h0: f64,
) -> Option<[f64; 4]> {
    let ms = poly.metric_state(&z.x).ok()?;
    let h_start = hamiltonian(target, &ms, &z.p);
    let mut out = [0.0; 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let h = h0 / f64::powi(2.0, k as i32);
        let cfg = ProposalConfig {
            leapfrog: LeapfrogConfig::new(h),
            eta: 1e3,
            norm_mode: NormMode::SelfConcordant,
            check_involution: true,
        };
        let prop = proposal(target, poly, z, &cfg).ok()?;
        if prop.status != ProposalStatus::Moved {
            return None;
        }
        *slot = (hamiltonian(target, &prop.metric, &prop.point.p) - h_start).abs();
    }
    Some(out)
}

pub const ENERGY_SLOPE: (f64, f64) = (2.5, 3.5);

/// Mean one-step energy error over `points` at `h0, h0/2, h0/4, h0/8`.
/// `h0` is halved until every point integrates at every step; `None` if that
/// never happens above `1e-3`.
pub fn mean_energy_errors(
    target: &impl TargetPotential<f64>,
    poly: &Polytope<f64>,
    points: &[PhasePoint<f64>],
    mut h0: f64,
) -> Option<([f64; 4], [f64; 4])> {
    while h0 > 1e-3 {
        let errs: Option<Vec<[f64; 4]>> = points
            .iter()
            .map(|z| energy_errors(target, poly, z, h0))
            .collect();
        if let Some(errs) = errs {
            let mut mean = [0.0; 4];
            for e in &errs {
                for k in 0..4 {
                    mean[k] += e[k] / errs.len() as f64;
                }
            }
            let hs = [h0, h0 / 2.0, h0 / 4.0, h0 / 8.0];
            return Some((hs, mean));
        }
        h0 /= 2.0;
    }
    None
}

// Individual points can sit near a sign change of the leading error term,
// so the order is read off the mean error.
fn energy_order_suite(seed: u64) -> Suite {
    let mut rng = chain_rng(seed.wrapping_add(4));
    let poly = Polytope::hypercube(5, 0.5);
    let target = Gaussian::new(mu_vector(5).unwrap());
    let points: Vec<PhasePoint<f64>> = (0..20)
        .map(|_| {
            let x = random_point(&poly, &mut rng, 0.9);
            let ms = poly.metric_state(&x).unwrap();
            let p = sample_momentum(&ms, &mut rng);
            PhasePoint::new(x, p)
        })
        .collect();
    let (failures, worst) = match mean_energy_errors(&target, &poly, &points, 0.05) {
        Some((hs, errs)) => {
            let slope = loglog_slope(&hs, &errs);
            let ok = (ENERGY_SLOPE.0..=ENERGY_SLOPE.1).contains(&slope);
            (usize::from(!ok), slope)
        }
        None => (1, f64::NAN),
    };
    Suite {
        cases: points.len(),
        failures,
        worst,
        threshold: format!("slope in [{}, {}]", ENERGY_SLOPE.0, ENERGY_SLOPE.1),
    }
}

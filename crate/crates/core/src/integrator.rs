//! Numerical integrators for the split Hamiltonian.
//!
//! * [`half_kick`]: explicit Euler step of `H1` over `h/2`.
//! * [`leapfrog_step`]: generalized leapfrog (Störmer–Verlet) step of `H2`,
//!   solved by two fixed-point loops. Points where a loop fails form the
//!   complement of the integrator's domain.
//! * [`phi`]: `Φ_h = G_h ∘ s`, the numerical map that should be an involution.
//! * [`involution_check`]: verifies `Φ_h(Φ_h(z)) ≈ z` within a tolerance.
//! * [`proposal`]: `R_h^Φ = (s ∘ S_{h/2}) ∘ Φ_h ∘ (s ∘ S_{h/2})`.

use serde::{Deserialize, Serialize};

use crate::barrier::{MetricState, Polytope};
use crate::hamiltonian::{
    displacement_norm, dp_h2, dx_h1, dx_h2, NormMode, PhasePoint, TargetPotential,
};
use crate::linalg::sub;
use crate::scalar::Real;

/// What happens when a fixed-point loop exhausts its iteration budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedPointPolicy {
    /// Residual must drop below `fp_tol` within `max_iters` iterations.
    #[default]
    Converge,
    /// Keep the last iterate after `max_iters` iterations if it is feasible.
    Truncate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeapfrogConfig<T> {
    pub h: T,
    /// Fixed-point iteration budget `K`.
    pub max_iters: usize,
    /// Residual tolerance in the phase norm anchored at the start point.
    pub fp_tol: T,
    /// A residual above `blow_up` times the first residual counts as divergence.
    pub blow_up: T,
    pub policy: FixedPointPolicy,
}

impl<T: Real> LeapfrogConfig<T> {
    pub fn new(h: T) -> Self {
        Self {
            h,
            max_iters: 30,
            fp_tol: T::default_fp_tol(),
            blow_up: T::lit(1e6),
            policy: FixedPointPolicy::Converge,
        }
    }

    pub fn with_step(mut self, h: T) -> Self {
        self.h = h;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    MomentumFixedPoint,
    PositionFixedPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    InfeasibleIterate,
    NoConvergence,
    Diverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DomainFailure {
    pub stage: Stage,
    pub reason: FailureReason,
}

impl DomainFailure {
    fn new(stage: Stage, reason: FailureReason) -> Self {
        Self { stage, reason }
    }
}

/// Result of one application of the numerical integrator.
#[derive(Clone, Debug, PartialEq)]
pub enum IntegrationOutcome<T> {
    Ok(PhasePoint<T>),
    DomainFailure(DomainFailure),
}

impl<T> IntegrationOutcome<T> {
    pub fn is_ok(&self) -> bool {
        matches!(self, Self::Ok(_))
    }

    pub fn point(&self) -> Option<&PhasePoint<T>> {
        match self {
            Self::Ok(z) => Some(z),
            Self::DomainFailure(_) => None,
        }
    }
}

/// A successful leapfrog step with the by-products callers reuse.
#[derive(Clone, Debug)]
pub struct LeapfrogSolution<T> {
    pub point: PhasePoint<T>,
    /// Metric at the end position.
    pub metric: MetricState<T>,
    /// Solution `p^(1/2)` of the implicit momentum half-step.
    pub half_momentum: Vec<T>,
    pub momentum_iters: usize,
    pub position_iters: usize,
}

/// `S_{h/2}(x, p) = (x, p - h/2 ∂x H1(x))` with the metric at `x` supplied.
pub fn half_kick_at<T: Real>(
    target: &impl TargetPotential<T>,
    poly: &Polytope<T>,
    ms: &MetricState<T>,
    p: &[T],
    h: T,
) -> Vec<T> {
    let half = h * T::lit(0.5);
    p.iter()
        .zip(dx_h1(target, poly, ms))
        .map(|(&pi, gi)| pi - half * gi)
        .collect()
}

pub fn half_kick<T: Real>(
    target: &impl TargetPotential<T>,
    poly: &Polytope<T>,
    z: &PhasePoint<T>,
    h: T,
) -> Result<PhasePoint<T>, crate::barrier::BarrierError> {
    let ms = poly.metric_state(&z.x)?;
    Ok(PhasePoint::new(z.x.clone(), half_kick_at(target, poly, &ms, &z.p, h)))
}

pub fn flip<T: Real>(z: &PhasePoint<T>) -> PhasePoint<T> {
    z.flipped()
}

enum Step {
    Converged,
    Continue,
}

/// Tracks residuals of one fixed-point loop.
struct ResidualMonitor<T> {
    stage: Stage,
    first: Option<T>,
    tol: T,
    blow_up: T,
}

impl<T: Real> ResidualMonitor<T> {
    fn new(stage: Stage, cfg: &LeapfrogConfig<T>) -> Self {
        Self {
            stage,
            first: None,
            tol: cfg.fp_tol,
            blow_up: cfg.blow_up,
        }
    }

    fn observe(&mut self, residual: T) -> Result<Step, DomainFailure> {
        if !residual.is_finite() {
            return Err(DomainFailure::new(self.stage, FailureReason::Diverged));
        }
        if residual <= self.tol {
            return Ok(Step::Converged);
        }
        match self.first {
            None => self.first = Some(residual),
            Some(r0) if residual > self.blow_up * r0 => {
                return Err(DomainFailure::new(self.stage, FailureReason::Diverged))
            }
            Some(_) => {}
        }
        Ok(Step::Continue)
    }
}

/// One generalized-leapfrog step of `H2` from `z0`, returning the metric at the
/// end point and the solved half-step momentum.
pub fn leapfrog_solve<T: Real>(
    poly: &Polytope<T>,
    ms0: &MetricState<T>,
    p0: &[T],
    cfg: &LeapfrogConfig<T>,
) -> Result<LeapfrogSolution<T>, DomainFailure> {
    let half = cfg.h * T::lit(0.5);
    let x0 = ms0.x();

    // (i) p½ = p0 - h/2 ∂x H2(x0, p½)
    let mut q = p0.to_vec();
    let mut monitor = ResidualMonitor::new(Stage::MomentumFixedPoint, cfg);
    let mut momentum_iters = 0;
    let mut converged = false;
    while momentum_iters < cfg.max_iters {
        momentum_iters += 1;
        let force = dx_h2(poly, ms0, &q);
        let next: Vec<T> = p0.iter().zip(&force).map(|(&p, &f)| p - half * f).collect();
        let residual = ms0.cotangent_norm(&sub(&next, &q));
        q = next;
        if let Step::Converged = monitor.observe(residual)? {
            converged = true;
            break;
        }
    }
    if !converged {
        match cfg.policy {
            FixedPointPolicy::Converge => {
                return Err(DomainFailure::new(
                    Stage::MomentumFixedPoint,
                    FailureReason::NoConvergence,
                ))
            }
            FixedPointPolicy::Truncate if q.iter().all(|v| v.is_finite()) => {}
            FixedPointPolicy::Truncate => {
                return Err(DomainFailure::new(
                    Stage::MomentumFixedPoint,
                    FailureReason::Diverged,
                ))
            }
        }
    }
    let p_half = q;

    // (ii) x1 = x0 + h/2 [g(x0)⁻¹ p½ + g(x1)⁻¹ p½]
    let v0 = dp_h2(ms0, &p_half);
    let mut y = x0.to_vec();
    let mut ms_y: Option<MetricState<T>> = None;
    let mut monitor = ResidualMonitor::new(Stage::PositionFixedPoint, cfg);
    let mut position_iters = 0;
    let mut converged = false;
    let infeasible = DomainFailure::new(Stage::PositionFixedPoint, FailureReason::InfeasibleIterate);
    while position_iters < cfg.max_iters {
        position_iters += 1;
        let vy = match &ms_y {
            Some(ms) => dp_h2(ms, &p_half),
            None => v0.clone(),
        };
        let next: Vec<T> = x0
            .iter()
            .zip(v0.iter().zip(&vy))
            .map(|(&x, (&a, &b))| x + half * (a + b))
            .collect();
        let residual = ms0.tangent_norm(&sub(&next, &y));
        let step = monitor.observe(residual)?;
        ms_y = Some(poly.metric_state(&next).map_err(|_| infeasible)?);
        y = next;
        if let Step::Converged = step {
            converged = true;
            break;
        }
    }
    if !converged && cfg.policy == FixedPointPolicy::Converge {
        return Err(DomainFailure::new(
            Stage::PositionFixedPoint,
            FailureReason::NoConvergence,
        ));
    }
    let ms1 = ms_y.expect("position loop runs at least once");

    // (iii) p1 = p½ - h/2 ∂x H2(x1, p½)
    let force = dx_h2(poly, &ms1, &p_half);
    let p1: Vec<T> = p_half.iter().zip(&force).map(|(&p, &f)| p - half * f).collect();
    if p1.iter().any(|v| !v.is_finite()) {
        return Err(DomainFailure::new(Stage::PositionFixedPoint, FailureReason::Diverged));
    }
    Ok(LeapfrogSolution {
        point: PhasePoint::new(y, p1),
        metric: ms1,
        half_momentum: p_half,
        momentum_iters,
        position_iters,
    })
}

/// Generalized leapfrog step `G_h` solved numerically.
pub fn leapfrog_step<T: Real>(
    poly: &Polytope<T>,
    z0: &PhasePoint<T>,
    cfg: &LeapfrogConfig<T>,
) -> IntegrationOutcome<T> {
    let ms0 = match poly.metric_state(&z0.x) {
        Ok(ms) => ms,
        Err(_) => {
            return IntegrationOutcome::DomainFailure(DomainFailure::new(
                Stage::MomentumFixedPoint,
                FailureReason::InfeasibleIterate,
            ))
        }
    };
    match leapfrog_solve(poly, &ms0, &z0.p, cfg) {
        Ok(sol) => IntegrationOutcome::Ok(sol.point),
        Err(f) => IntegrationOutcome::DomainFailure(f),
    }
}

/// `Φ_h(x, p) = G_h(x, -p)`, with the metric at `x` supplied.
pub fn phi_at<T: Real>(
    poly: &Polytope<T>,
    ms: &MetricState<T>,
    p: &[T],
    cfg: &LeapfrogConfig<T>,
) -> Result<LeapfrogSolution<T>, DomainFailure> {
    let flipped: Vec<T> = p.iter().map(|&v| -v).collect();
    leapfrog_solve(poly, ms, &flipped, cfg)
}

/// Numerical map `Φ_h = G_h ∘ s`; its domain is the set of `Ok` outcomes.
pub fn phi<T: Real>(
    poly: &Polytope<T>,
    z0: &PhasePoint<T>,
    cfg: &LeapfrogConfig<T>,
) -> IntegrationOutcome<T> {
    leapfrog_step(poly, &z0.flipped(), cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvolutionFailure {
    /// `z0` is outside the integrator's domain.
    ForwardDomain,
    /// `Φ_h(z0)` is outside the integrator's domain.
    BackwardDomain,
    /// Round-trip error exceeds the tolerance.
    Tolerance,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InvolutionCheck<T> {
    Pass { err0: T, err1: T },
    Fail(InvolutionFailure),
}

impl<T> InvolutionCheck<T> {
    pub fn passed(&self) -> bool {
        matches!(self, Self::Pass { .. })
    }
}

/// Round-trip errors `‖z0 - w‖` anchored at `z0` and at `w`.
fn round_trip_errors<T: Real>(
    mode: NormMode,
    ms0: &MetricState<T>,
    z0: &PhasePoint<T>,
    ms_w: &MetricState<T>,
    w: &PhasePoint<T>,
) -> (T, T) {
    let dx = sub(&z0.x, &w.x);
    let dp = sub(&z0.p, &w.p);
    (
        displacement_norm(mode, ms0, &dx, &dp),
        displacement_norm(mode, ms_w, &dx, &dp),
    )
}

/// Involution checking step: `z1` must be in the domain of `Φ_h` and
/// `err0 + err1 ≤ η` where `err_k` measure `z0 - Φ_h(z1)` at both ends.
pub fn involution_check<T: Real>(
    poly: &Polytope<T>,
    z0: &PhasePoint<T>,
    z1: &IntegrationOutcome<T>,
    cfg: &LeapfrogConfig<T>,
    eta: T,
    mode: NormMode,
) -> InvolutionCheck<T> {
    let Some(z1) = z1.point() else {
        return InvolutionCheck::Fail(InvolutionFailure::ForwardDomain);
    };
    let (Ok(ms0), Ok(ms1)) = (poly.metric_state(&z0.x), poly.metric_state(&z1.x)) else {
        return InvolutionCheck::Fail(InvolutionFailure::ForwardDomain);
    };
    check_round_trip(poly, &ms0, z0, &ms1, z1, cfg, eta, mode)
}

#[allow(clippy::too_many_arguments)]
fn check_round_trip<T: Real>(
    poly: &Polytope<T>,
    ms0: &MetricState<T>,
    z0: &PhasePoint<T>,
    ms1: &MetricState<T>,
    z1: &PhasePoint<T>,
    cfg: &LeapfrogConfig<T>,
    eta: T,
    mode: NormMode,
) -> InvolutionCheck<T> {
    let back = match phi_at(poly, ms1, &z1.p, cfg) {
        Ok(sol) => sol,
        Err(_) => return InvolutionCheck::Fail(InvolutionFailure::BackwardDomain),
    };
    let (err0, err1) = round_trip_errors(mode, ms0, z0, &back.metric, &back.point);
    if err0 + err1 <= eta {
        InvolutionCheck::Pass { err0, err1 }
    } else {
        InvolutionCheck::Fail(InvolutionFailure::Tolerance)
    }
}

/// Settings shared by every proposal of a chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProposalConfig<T> {
    pub leapfrog: LeapfrogConfig<T>,
    /// Involution tolerance `η`.
    pub eta: T,
    pub norm_mode: NormMode,
    /// Run the involution checking step; `false` gives the unchecked ablation.
    pub check_involution: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProposalStatus {
    Moved,
    DomainFailure(DomainFailure),
    InvolutionRejected(InvolutionFailure),
}

/// Output of [`proposal`]: the new state, or the input state when the flow
/// was rejected.
#[derive(Clone, Debug)]
pub struct Proposal<T> {
    pub point: PhasePoint<T>,
    /// Metric at `point.x`.
    pub metric: MetricState<T>,
    pub status: ProposalStatus,
}

impl<T> Proposal<T> {
    pub fn accepted_flow(&self) -> bool {
        self.status == ProposalStatus::Moved
    }
}

/// Applies `R_h^Φ` to `z`, given the metric `ms` at `z.x`.
pub fn proposal_at<T: Real>(
    target: &impl TargetPotential<T>,
    poly: &Polytope<T>,
    ms: &MetricState<T>,
    z: &PhasePoint<T>,
    cfg: &ProposalConfig<T>,
) -> Proposal<T> {
    let h = cfg.leapfrog.h;
    let rejected = |status| Proposal {
        point: z.clone(),
        metric: ms.clone(),
        status,
    };
    // z⁰ = s ∘ S_{h/2}(z)
    let kicked = half_kick_at(target, poly, ms, &z.p, h);
    let z0 = PhasePoint::new(z.x.clone(), kicked.iter().map(|&v| -v).collect());

    let forward = match phi_at(poly, ms, &z0.p, &cfg.leapfrog) {
        Ok(sol) => sol,
        Err(f) => return rejected(ProposalStatus::DomainFailure(f)),
    };
    if cfg.check_involution {
        if let InvolutionCheck::Fail(reason) = check_round_trip(
            poly,
            ms,
            &z0,
            &forward.metric,
            &forward.point,
            &cfg.leapfrog,
            cfg.eta,
            cfg.norm_mode,
        ) {
            return rejected(ProposalStatus::InvolutionRejected(reason));
        }
    }
    // s ∘ S_{h/2}(z¹)
    let z1 = forward.point;
    let kicked = half_kick_at(target, poly, &forward.metric, &z1.p, h);
    Proposal {
        point: PhasePoint::new(z1.x, kicked.iter().map(|&v| -v).collect()),
        metric: forward.metric,
        status: ProposalStatus::Moved,
    }
}

/// `R_h^Φ(z)`; returns `z` itself when the flow is rejected.
pub fn proposal<T: Real>(
    target: &impl TargetPotential<T>,
    poly: &Polytope<T>,
    z: &PhasePoint<T>,
    cfg: &ProposalConfig<T>,
) -> Result<Proposal<T>, crate::barrier::BarrierError> {
    let ms = poly.metric_state(&z.x)?;
    Ok(proposal_at(target, poly, &ms, z, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{hamiltonian, sample_momentum, Gaussian, Uniform};
    use crate::linalg::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn half_line() -> Polytope<f64> {
        Polytope::new(Matrix::from_rows(&[vec![1.0]]).unwrap(), vec![0.0]).unwrap()
    }

    fn cfg(h: f64) -> LeapfrogConfig<f64> {
        LeapfrogConfig::new(h)
    }

    fn pcfg(h: f64, eta: f64) -> ProposalConfig<f64> {
        ProposalConfig {
            leapfrog: cfg(h),
            eta,
            norm_mode: NormMode::SelfConcordant,
            check_involution: true,
        }
    }

    #[test]
    fn half_kick_examples() {
        let cube = Polytope::<f64>::hypercube(3, 0.5);
        let z = PhasePoint::new(vec![0.0; 3], vec![1.0, 2.0, 3.0]);
        assert_eq!(half_kick(&Uniform, &cube, &z, 0.3).unwrap(), z);

        let line = half_line();
        let z = PhasePoint::new(vec![-1.0], vec![0.0]);
        let out = half_kick(&Uniform, &line, &z, 0.2).unwrap();
        assert!((out.p[0] + 0.1).abs() < 1e-15);

        let gauss = Gaussian::new(vec![0.0, 10.0, 5.0]);
        let z = PhasePoint::new(vec![0.1, 0.3, -0.2], vec![1.0, -2.0, 0.5]);
        let there = half_kick(&gauss, &cube, &z, 0.37).unwrap();
        let back = half_kick(&gauss, &cube, &there, -0.37).unwrap();
        for (a, b) in back.p.iter().zip(&z.p) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let z = PhasePoint::new(vec![0.1, 0.2], vec![1.0, -3.0]);
        assert_eq!(flip(&z).p, vec![-1.0, 3.0]);
        assert_eq!(flip(&flip(&z)), z);
        let rest = PhasePoint::new(vec![0.1], vec![0.0]);
        assert_eq!(flip(&rest).p[0], 0.0);
    }

    #[test]
    fn momentum_half_step_solves_quadratic() {
        let line = half_line();
        let ms = line.metric_state(&[-1.0]).unwrap();
        let sol = leapfrog_solve(&line, &ms, &[1.0], &cfg(0.1)).unwrap();
        // 0.05·(-1)·q² + q - 1 = 0
        let root = (-1.0 + 0.8f64.sqrt()) / (-0.1);
        assert!((sol.half_momentum[0] - root).abs() < 1e-8);
        assert!((sol.half_momentum[0] - 1.05573).abs() < 1e-5);
    }

    #[test]
    fn negative_discriminant_leaves_domain() {
        let line = half_line();
        let ms = line.metric_state(&[-1.0]).unwrap();
        let f = leapfrog_solve(&line, &ms, &[6.0], &cfg(0.1)).unwrap_err();
        assert_eq!(f.stage, Stage::MomentumFixedPoint);
        assert!(matches!(
            f.reason,
            FailureReason::NoConvergence | FailureReason::Diverged
        ));
    }

    #[test]
    fn zero_step_is_identity() {
        let cube = Polytope::<f64>::hypercube(3, 0.5);
        let z = PhasePoint::new(vec![0.1, -0.4, 0.2], vec![3.0, -1.0, 0.25]);
        assert_eq!(leapfrog_step(&cube, &z, &cfg(0.0)), IntegrationOutcome::Ok(z.clone()));
        assert_eq!(phi(&cube, &z, &cfg(0.0)), IntegrationOutcome::Ok(z.flipped()));
    }

    #[test]
    fn phi_composes_flip_and_leapfrog() {
        let line = half_line();
        let z0 = PhasePoint::new(vec![-1.0], vec![-1.0]);
        let a = phi(&line, &z0, &cfg(0.1));
        let b = leapfrog_step(&line, &PhasePoint::new(vec![-1.0], vec![1.0]), &cfg(0.1));
        assert_eq!(a, b);
        assert!(a.is_ok());
    }

    #[test]
    fn reverse_map_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cube = Polytope::<f64>::hypercube(5, 0.5);
        let c = cfg(0.05);
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-0.4..0.4)).collect();
            let ms = cube.metric_state(&x).unwrap();
            let z0 = PhasePoint::new(x, sample_momentum(&ms, &mut rng));
            let IntegrationOutcome::Ok(z1) = leapfrog_step(&cube, &z0, &c) else {
                continue;
            };
            let IntegrationOutcome::Ok(back) = leapfrog_step(&cube, &z1.flipped(), &c) else {
                panic!("reverse step left the domain");
            };
            let target = z0.flipped();
            let err = crate::hamiltonian::phase_norm(
                &ms,
                &sub(&back.x, &target.x),
                &sub(&back.p, &target.p),
            );
            assert!(err <= 10.0 * c.fp_tol, "err = {err:e}");
        }
    }

    #[test]
    fn involution_check_semantics() {
        let cube = Polytope::<f64>::hypercube(2, 0.5);
        let z0 = PhasePoint::new(vec![0.1, 0.2], vec![1.0, -0.5]);
        let c = cfg(0.05);
        let z1 = phi(&cube, &z0, &c);
        assert!(involution_check(&cube, &z0, &z1, &c, 1e-6, NormMode::SelfConcordant).passed());
        assert!(involution_check(&cube, &z0, &z1, &c, 1e-6, NormMode::Euclidean).passed());
        assert_eq!(
            involution_check(&cube, &z0, &z1, &c, 0.0, NormMode::SelfConcordant),
            InvolutionCheck::Fail(InvolutionFailure::Tolerance)
        );
        let failed = IntegrationOutcome::DomainFailure(DomainFailure::new(
            Stage::MomentumFixedPoint,
            FailureReason::NoConvergence,
        ));
        assert_eq!(
            involution_check(&cube, &z0, &failed, &c, 1.0, NormMode::SelfConcordant),
            InvolutionCheck::Fail(InvolutionFailure::ForwardDomain)
        );
        // exact round trip at h = 0
        let z1 = phi(&cube, &z0, &cfg(0.0));
        assert_eq!(
            involution_check(&cube, &z0, &z1, &cfg(0.0), 1e-300, NormMode::SelfConcordant),
            InvolutionCheck::Pass { err0: 0.0, err1: 0.0 }
        );
    }

    #[test]
    fn zero_step_proposal_is_momentum_flip() {
        let cube = Polytope::<f64>::hypercube(2, 0.5);
        let z = PhasePoint::new(vec![0.1, 0.2], vec![1.0, -0.5]);
        let out = proposal(&Uniform, &cube, &z, &pcfg(0.0, 1.0)).unwrap();
        assert!(out.accepted_flow());
        assert_eq!(out.point, z.flipped());
    }

    #[test]
    fn pathological_proposal_is_rejected() {
        let line = half_line();
        // z⁰ = s(S_{h/2}(z)) has momentum -(p - 0.05); φ flips it back to p - 0.05.
        let z = PhasePoint::new(vec![-1.0], vec![6.05]);
        let out = proposal(&Uniform, &line, &z, &pcfg(0.1, 1.0)).unwrap();
        assert!(!out.accepted_flow());
        assert_eq!(out.point, z);
        assert!(matches!(out.status, ProposalStatus::DomainFailure(_)));
    }

    #[test]
    fn small_step_proposal_nearly_conserves_energy() {
        let cube = Polytope::<f64>::hypercube(5, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-0.3..0.3)).collect();
        let ms = cube.metric_state(&x).unwrap();
        let z = PhasePoint::new(x, sample_momentum(&ms, &mut rng));
        let h0 = hamiltonian(&Uniform, &ms, &z.p);
        let out = proposal(&Uniform, &cube, &z, &pcfg(0.01, 1e-6)).unwrap();
        assert!(out.accepted_flow());
        let h1 = hamiltonian(&Uniform, &out.metric, &out.point.p);
        assert!((h1 - h0).abs() < 1e-4);
    }

    #[test]
    fn deterministic_outputs() {
        let cube = Polytope::<f64>::hypercube(3, 0.5);
        let z = PhasePoint::new(vec![0.2, -0.1, 0.4], vec![2.0, 1.0, -7.0]);
        let a = proposal(&Uniform, &cube, &z, &pcfg(0.1, 1.0)).unwrap();
        let b = proposal(&Uniform, &cube, &z, &pcfg(0.1, 1.0)).unwrap();
        assert_eq!(a.point, b.point);
        assert_eq!(a.status, b.status);
    }

    #[test]
    fn truncate_policy_keeps_unconverged_iterates() {
        let cube = Polytope::<f64>::hypercube(2, 0.5);
        let z = PhasePoint::new(vec![0.3, 0.1], vec![8.0, -3.0]);
        let mut c = cfg(0.2);
        c.max_iters = 2;
        let strict = leapfrog_step(&cube, &z, &c);
        c.policy = FixedPointPolicy::Truncate;
        let loose = leapfrog_step(&cube, &z, &c);
        assert!(!strict.is_ok());
        assert!(loose.is_ok());
    }
}

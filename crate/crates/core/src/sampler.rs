//! Barrier HMC chain driver with momentum refresh.
//!
//! One iteration: refresh the momentum, propose with `R_h^Φ` (optionally
//! guarded by the involution check), Metropolis filter on `H`, reverse the
//! momentum, refresh again.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{BarrierError, MetricState, Polytope};
use crate::hamiltonian::{
    hamiltonian, refresh_momentum, sample_momentum, NormMode, PhasePoint, RefreshRate,
    TargetPotential,
};
use crate::integrator::{
    proposal_at, FixedPointPolicy, LeapfrogConfig, ProposalConfig, ProposalStatus,
};
use crate::scalar::Real;

/// Random stream owned by one chain.
pub type ChainRng = ChaCha8Rng;

pub fn chain_rng(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("initial point is not strictly inside the polytope: {0}")]
    InfeasibleStart(BarrierError),
    #[error("invalid chain configuration: {0}")]
    Config(String),
}

/// Robbins–Monro adaptation of `log h` during burn-in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    pub target_accept: f64,
    pub rate_exponent: f64,
    /// Fraction of iterations spent adapting; `h` is frozen afterwards.
    pub burn_in: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            target_accept: 0.5,
            rate_exponent: 0.7,
            burn_in: 0.2,
        }
    }
}

pub const MIN_STEP: f64 = 1e-8;
pub const MAX_STEP: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig<T> {
    pub refresh: RefreshRate<T>,
    pub n_iter: usize,
    pub h0: T,
    /// Involution tolerance `η`.
    pub eta: T,
    pub max_iters: usize,
    pub fp_tol: T,
    pub blow_up: T,
    pub fixed_point: FixedPointPolicy,
    pub seed: u64,
    /// `false` skips the involution check.
    pub involution: bool,
    pub norm_mode: NormMode,
    pub adapt: Option<AdaptConfig>,
}

impl<T: Real> ChainConfig<T> {
    pub fn new(n_iter: usize, h0: T, eta: T, seed: u64) -> Self {
        let lf = LeapfrogConfig::new(h0);
        Self {
            refresh: RefreshRate::full(),
            n_iter,
            h0,
            eta,
            max_iters: lf.max_iters,
            fp_tol: lf.fp_tol,
            blow_up: lf.blow_up,
            fixed_point: FixedPointPolicy::Converge,
            seed,
            involution: true,
            norm_mode: NormMode::SelfConcordant,
            adapt: None,
        }
    }

    /// The unchecked variant: no involution step, fixed-point loops truncated
    /// at `max_iters` iterations.
    pub fn without_involution(mut self) -> Self {
        self.involution = false;
        self.fixed_point = FixedPointPolicy::Truncate;
        self
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let err = |m: &str| Err(SamplerError::Config(m.to_owned()));
        if self.n_iter == 0 {
            return err("iteration count must be at least 1");
        }
        if !(self.h0 > T::zero()) {
            return err("initial step size must be positive");
        }
        if !(self.eta > T::zero()) {
            return err("involution tolerance must be positive");
        }
        if self.max_iters == 0 {
            return err("fixed-point budget must be at least 1");
        }
        if !(self.fp_tol > T::zero()) {
            return err("fixed-point tolerance must be positive");
        }
        if let Some(a) = &self.adapt {
            if !(0.0..=1.0).contains(&a.burn_in) || !(0.0..1.0).contains(&a.target_accept) {
                return err("adaptation fractions must lie in [0, 1]");
            }
        }
        Ok(())
    }

    /// Number of adaptation iterations.
    pub fn burn_in(&self) -> usize {
        self.adapt
            .map_or(0, |a| (a.burn_in * self.n_iter as f64).floor() as usize)
    }

    pub fn proposal_config(&self, h: T) -> ProposalConfig<T> {
        ProposalConfig {
            leapfrog: LeapfrogConfig {
                h,
                max_iters: self.max_iters,
                fp_tol: self.fp_tol,
                blow_up: self.blow_up,
                policy: self.fixed_point,
            },
            eta: self.eta,
            norm_mode: self.norm_mode,
            check_involution: self.involution,
        }
    }
}

/// Trace of one iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainRecord<T> {
    /// Position after the iteration.
    pub x: Vec<T>,
    /// The chain moved: the flow was accepted and passed the Metropolis filter.
    pub accepted: bool,
    pub involution_rejected: bool,
    pub dom_failed: bool,
    /// The proposal energy was NaN or infinite.
    pub nonfinite: bool,
    pub h: T,
    /// `H` at the post-filter state.
    pub hamiltonian: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub n_samples: usize,
    pub acceptance_rate: f64,
    pub involution_rejection_rate: f64,
    pub dom_failure_rate: f64,
    pub final_h: f64,
    pub mean_x: Vec<f64>,
}

impl ChainStats {
    /// Summarizes `records[skip..]`; all records are used if none remain.
    pub fn from_records<T: Real>(records: &[ChainRecord<T>], skip: usize) -> Self {
        let kept = if skip < records.len() { &records[skip..] } else { records };
        let n = kept.len().max(1) as f64;
        let rate = |f: fn(&ChainRecord<T>) -> bool| kept.iter().filter(|r| f(r)).count() as f64 / n;
        let d = kept.first().map_or(0, |r| r.x.len());
        let mut mean_x = vec![0.0; d];
        for r in kept {
            for (m, v) in mean_x.iter_mut().zip(&r.x) {
                *m += v.as_f64();
            }
        }
        mean_x.iter_mut().for_each(|m| *m /= n);
        Self {
            n_samples: kept.len(),
            acceptance_rate: rate(|r| r.accepted),
            involution_rejection_rate: rate(|r| r.involution_rejected),
            dom_failure_rate: rate(|r| r.dom_failed),
            final_h: records.last().map_or(f64::NAN, |r| r.h.as_f64()),
            mean_x,
        }
    }
}

/// Metropolis filter `u ≤ min(1, exp(H_cur - H_prop))`.
///
/// A proposal energy of `-∞` is accepted; `+∞` and NaN are rejected.
pub fn mh_accept<T: Real>(h_prop: T, h_cur: T, u: T) -> bool {
    if h_prop.is_nan() || h_prop == T::infinity() {
        return false;
    }
    if h_prop == T::neg_infinity() {
        return true;
    }
    let ratio = (h_cur - h_prop).exp().min(T::one());
    u <= ratio
}

/// Robbins–Monro update `log h ← log h + n^(-κ) (1[accepted] - target)` for
/// `1 ≤ n ≤ burn_in`; later calls return `h` unchanged.
pub fn adapt_step_size<T: Real>(
    h: T,
    accepted: bool,
    n: usize,
    burn_in: usize,
    adapt: &AdaptConfig,
) -> T {
    if n == 0 || n > burn_in {
        return h;
    }
    let gain = (n as f64).powf(-adapt.rate_exponent);
    let signal = if accepted { 1.0 } else { 0.0 } - adapt.target_accept;
    let log_h = h.as_f64().ln() + gain * signal;
    T::lit(log_h.exp().clamp(MIN_STEP, MAX_STEP))
}

/// State carried between iterations.
#[derive(Clone, Debug)]
pub struct ChainState<T> {
    pub point: PhasePoint<T>,
    pub metric: MetricState<T>,
}

impl<T: Real> ChainState<T> {
    pub fn new(poly: &Polytope<T>, point: PhasePoint<T>) -> Result<Self, BarrierError> {
        let metric = poly.metric_state(&point.x)?;
        Ok(Self { point, metric })
    }
}

/// One iteration of the sampler at step size `h`.
pub fn bhmc_step<T: Real, R: Rng + ?Sized>(
    target: &impl TargetPotential<T>,
    poly: &Polytope<T>,
    state: ChainState<T>,
    cfg: &ProposalConfig<T>,
    beta: RefreshRate<T>,
    rng: &mut R,
) -> (ChainState<T>, ChainRecord<T>) {
    let ChainState { point, metric } = state;

    // Step 1
    let draw = sample_momentum(&metric, rng);
    let p_tilde = refresh_momentum(&point.p, &draw, beta);
    let current = PhasePoint::new(point.x, p_tilde);

    // Step 2
    let prop = proposal_at(target, poly, &metric, &current, cfg);
    let moved = prop.accepted_flow();

    // Step 3
    let h_cur = hamiltonian(target, &metric, &current.p);
    let h_prop = if moved {
        hamiltonian(target, &prop.metric, &prop.point.p)
    } else {
        h_cur
    };
    let u = T::lit(rng.random::<f64>());
    let accept = mh_accept(h_prop, h_cur, u);
    let (bar, bar_metric, energy) = if accept {
        (prop.point, prop.metric, h_prop)
    } else {
        (current, metric, h_cur)
    };

    // Step 4
    let reversed = bar.flipped();

    // Step 5
    let draw = sample_momentum(&bar_metric, rng);
    let p_next = refresh_momentum(&reversed.p, &draw, beta);
    let next = PhasePoint::new(reversed.x, p_next);

    let record = ChainRecord {
        x: next.x.clone(),
        accepted: moved && accept,
        involution_rejected: matches!(prop.status, ProposalStatus::InvolutionRejected(_)),
        dom_failed: matches!(prop.status, ProposalStatus::DomainFailure(_)),
        nonfinite: !h_prop.is_finite(),
        h: cfg.leapfrog.h,
        hamiltonian: energy,
    };
    (
        ChainState {
            point: next,
            metric: bar_metric,
        },
        record,
    )
}

/// A single chain that can be stepped incrementally.
pub struct Chain<'a, T, V> {
    target: &'a V,
    poly: &'a Polytope<T>,
    cfg: ChainConfig<T>,
    rng: ChainRng,
    state: Option<ChainState<T>>,
    h: T,
    iteration: usize,
    burn_in: usize,
}

impl<'a, T: Real, V: TargetPotential<T>> Chain<'a, T, V> {
    /// Starts at `x_init` with momentum drawn from `N(0, g(x_init))`.
    pub fn new(
        target: &'a V,
        poly: &'a Polytope<T>,
        cfg: ChainConfig<T>,
        x_init: &[T],
    ) -> Result<Self, SamplerError> {
        cfg.validate()?;
        let metric = poly
            .metric_state(x_init)
            .map_err(SamplerError::InfeasibleStart)?;
        let mut rng = chain_rng(cfg.seed);
        let p0 = sample_momentum(&metric, &mut rng);
        let point = PhasePoint::new(x_init.to_vec(), p0);
        Ok(Self {
            target,
            poly,
            h: cfg.h0,
            burn_in: cfg.burn_in(),
            cfg,
            rng,
            state: Some(ChainState { point, metric }),
            iteration: 0,
        })
    }

    pub fn state(&self) -> &ChainState<T> {
        self.state.as_ref().expect("state is always restored after a step")
    }

    pub fn step_size(&self) -> T {
        self.h
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn step(&mut self) -> ChainRecord<T> {
        let pcfg = self.cfg.proposal_config(self.h);
        let state = self.state.take().expect("state is always restored after a step");
        let (next, record) = bhmc_step(
            self.target,
            self.poly,
            state,
            &pcfg,
            self.cfg.refresh,
            &mut self.rng,
        );
        self.state = Some(next);
        self.iteration += 1;
        if let Some(adapt) = &self.cfg.adapt {
            self.h = adapt_step_size(self.h, record.accepted, self.iteration, self.burn_in, adapt);
        }
        record
    }
}

/// Runs `cfg.n_iter` iterations from `x_init`.
///
/// Statistics skip the adaptation window.
pub fn run_chain<T: Real, V: TargetPotential<T>>(
    target: &V,
    poly: &Polytope<T>,
    cfg: &ChainConfig<T>,
    x_init: &[T],
) -> Result<(Vec<ChainRecord<T>>, ChainStats), SamplerError> {
    let mut chain = Chain::new(target, poly, cfg.clone(), x_init)?;
    let records: Vec<_> = (0..cfg.n_iter).map(|_| chain.step()).collect();
    let stats = ChainStats::from_records(&records, chain.burn_in());
    Ok((records, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{Gaussian, Uniform};
    use crate::linalg::Matrix;

    fn cube2() -> Polytope<f64> {
        Polytope::hypercube(2, 0.5)
    }

    #[test]
    fn mh_filter_examples() {
        assert!(mh_accept(1.0, 1.0, 0.999_999));
        let ln2 = 2f64.ln();
        assert!(mh_accept(ln2, 0.0, 0.49));
        assert!(!mh_accept(ln2, 0.0, 0.51));
        assert!(mh_accept(f64::NEG_INFINITY, 0.0, 0.9));
        assert!(!mh_accept(f64::INFINITY, 0.0, 0.0));
        assert!(!mh_accept(f64::NAN, 0.0, 0.0));
        assert!(mh_accept(-5.0, 0.0, 0.999));
    }

    #[test]
    fn adaptation_direction_and_freeze() {
        let a = AdaptConfig::default();
        assert!(adapt_step_size(0.1, true, 1, 10, &a) > 0.1);
        assert!(adapt_step_size(0.1, false, 1, 10, &a) < 0.1);
        assert_eq!(adapt_step_size(0.1, true, 11, 10, &a), 0.1);
        assert_eq!(adapt_step_size(20.0f64, true, 1, 10, &a), MAX_STEP);

        let mut h = 0.3;
        let mut trace = Vec::new();
        for n in 1..=20_000 {
            h = adapt_step_size(h, n % 2 == 0, n, 20_000, &a);
            trace.push(h);
        }
        let late = &trace[19_000..];
        let spread = late.iter().cloned().fold(0.0, f64::max) - late.iter().cloned().fold(1.0, f64::min);
        assert!(spread < 0.01 * h);
    }

    #[test]
    fn full_refresh_forgets_momentum() {
        let poly = cube2();
        let cfg = ChainConfig::new(1, 0.1, 1.0, 3).proposal_config(0.1);
        let ms = poly.metric_state(&[0.1, -0.2]).unwrap();
        let a = ChainState {
            point: PhasePoint::new(vec![0.1, -0.2], vec![5.0, 5.0]),
            metric: ms.clone(),
        };
        let b = ChainState {
            point: PhasePoint::new(vec![0.1, -0.2], vec![-40.0, 2.0]),
            metric: ms,
        };
        let (sa, ra) = bhmc_step(&Uniform, &poly, a, &cfg, RefreshRate::full(), &mut chain_rng(9));
        let (sb, rb) = bhmc_step(&Uniform, &poly, b, &cfg, RefreshRate::full(), &mut chain_rng(9));
        assert_eq!(sa.point, sb.point);
        assert_eq!(ra, rb);
    }

    #[test]
    fn zero_step_never_moves() {
        let poly = cube2();
        let cfg = ChainConfig::new(1, 1.0, 1.0, 3).proposal_config(0.0);
        let x = vec![0.2, 0.3];
        let mut state = ChainState::new(&poly, PhasePoint::new(x.clone(), vec![1.0, 1.0])).unwrap();
        let mut rng = chain_rng(4);
        for _ in 0..20 {
            let (next, rec) = bhmc_step(&Uniform, &poly, state, &cfg, RefreshRate::full(), &mut rng);
            assert_eq!(rec.x, x);
            assert!(rec.accepted);
            state = next;
        }
    }

    #[test]
    fn pathological_state_records_domain_failure() {
        let line = Polytope::new(Matrix::from_rows(&[vec![1.0]]).unwrap(), vec![0.0]).unwrap();
        let cfg = ChainConfig::new(1, 0.1, 1.0, 0).proposal_config(0.1);
        // β small so the refreshed momentum stays near the pathological value 6.05
        let beta = RefreshRate::new(1e-12).unwrap();
        let state = ChainState::new(&line, PhasePoint::new(vec![-1.0], vec![6.05])).unwrap();
        let (next, rec) = bhmc_step(&Uniform, &line, state, &cfg, beta, &mut chain_rng(1));
        assert!(rec.dom_failed);
        assert!(!rec.accepted);
        assert_eq!(next.point.x, vec![-1.0]);
    }

    #[test]
    fn one_iteration_matches_manual_step() {
        let poly = cube2();
        let cfg = ChainConfig::new(1, 0.2, 1.0, 77);
        let x0 = [0.1, 0.0];
        let (records, _) = run_chain(&Uniform, &poly, &cfg, &x0).unwrap();
        let mut rng = chain_rng(77);
        let ms = poly.metric_state(&x0).unwrap();
        let p0 = sample_momentum(&ms, &mut rng);
        let state = ChainState { point: PhasePoint::new(x0.to_vec(), p0), metric: ms };
        let (_, rec) = bhmc_step(&Uniform, &poly, state, &cfg.proposal_config(0.2), cfg.refresh, &mut rng);
        assert_eq!(records, vec![rec]);
    }

    #[test]
    fn seeded_runs_are_identical_and_replayable() {
        let poly = Polytope::<f64>::hypercube(3, 0.5);
        let target = Gaussian::new(vec![0.0, 10.0, 5.0]);
        let mut cfg = ChainConfig::new(300, 0.1, 5.0, 12);
        cfg.adapt = Some(AdaptConfig::default());
        let (a, sa) = run_chain(&target, &poly, &cfg, &[0.0; 3]).unwrap();
        let (b, sb) = run_chain(&target, &poly, &cfg, &[0.0; 3]).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(ChainStats::from_records(&a, cfg.burn_in()), sa);
        assert!(a[cfg.burn_in()..].iter().all(|r| r.h == sa.final_h));
        for r in &a {
            assert!(!(r.involution_rejected && r.accepted));
            assert!(poly.contains(&r.x));
        }
        let rates = [sa.acceptance_rate, sa.involution_rejection_rate, sa.dom_failure_rate];
        assert!(rates.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let poly = cube2();
        let cfg = ChainConfig::new(10, 0.1, 1.0, 0);
        assert!(matches!(
            run_chain(&Uniform, &poly, &cfg, &[0.5, 0.0]),
            Err(SamplerError::InfeasibleStart(_))
        ));
        let bad = ChainConfig::new(0, 0.1, 1.0, 0);
        assert!(matches!(
            run_chain(&Uniform, &poly, &bad, &[0.0, 0.0]),
            Err(SamplerError::Config(_))
        ));
        let bad = ChainConfig::new(5, 0.1, 0.0, 0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn momentum_marginal_at_fixed_position() {
        // h = 0 freezes the position; the refreshed momenta are N(0, g(x)).
        let poly = cube2();
        let x = vec![0.3, -0.1];
        let ms = poly.metric_state(&x).unwrap();
        let cfg = ChainConfig::new(1, 1.0, 1.0, 0).proposal_config(0.0);
        let beta = RefreshRate::new(0.5).unwrap();
        let mut state = ChainState::new(&poly, PhasePoint::new(x.clone(), sample_momentum(&ms, &mut chain_rng(5)))).unwrap();
        let mut rng = chain_rng(6);
        let n = 50_000;
        let mut cov = [[0.0; 2]; 2];
        for _ in 0..n {
            let (next, _) = bhmc_step(&Uniform, &poly, state, &cfg, beta, &mut rng);
            let p = &next.point.p;
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += p[i] * p[j] / n as f64;
                }
            }
            state = next;
        }
        let g = ms.metric();
        for i in 0..2 {
            for j in 0..2 {
                let tol = 0.05 * (g[(i, i)] * g[(j, j)]).sqrt();
                assert!((cov[i][j] - g[(i, j)]).abs() < tol, "{i}{j}: {} vs {}", cov[i][j], g[(i, j)]);
            }
        }
    }
}

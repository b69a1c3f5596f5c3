//! Numerical Barrier Hamiltonian Monte Carlo (n-BHMC) on polytopes.
//!
//! Targets are densities `exp(-V(x))` restricted to `M = {x : Ax < b}`.
//! Positions evolve under Hamiltonian dynamics for the log-barrier Hessian
//! metric `g(x) = Aᵀ S(x)⁻² A`, discretized with an implicit generalized
//! leapfrog scheme whose fixed-point solves can fail. Each proposal is
//! therefore guarded by an involution check before the Metropolis filter,
//! which keeps the chain reversible.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`);
//! experiment drivers, baselines and diagnostics work in `f64`.
//!
//! ```
//! use bhmc::{hamiltonian::Uniform, sampler::{run_chain, ChainConfig}, Polytope64};
//!
//! let cube = Polytope64::hypercube(2, 0.5);
//! let cfg = ChainConfig::new(200, 0.2, 1.0, 7);
//! let (records, stats) = run_chain(&Uniform, &cube, &cfg, &[0.0, 0.0]).unwrap();
//! assert_eq!(records.len(), 200);
//! assert!(records.iter().all(|r| cube.contains(&r.x)));
//! assert!(stats.acceptance_rate > 0.0);
//! ```

pub mod barrier;
pub mod baselines;
pub mod diagnostics;
pub mod experiments;
pub mod hamiltonian;
pub mod integrator;
pub mod linalg;
pub mod sampler;
pub mod scalar;
pub mod selfcheck;

pub use scalar::Real;

pub type Polytope64 = barrier::Polytope<f64>;
pub type Polytope32 = barrier::Polytope<f32>;
pub type MetricState64 = barrier::MetricState<f64>;
pub type MetricState32 = barrier::MetricState<f32>;
pub type PhasePoint64 = hamiltonian::PhasePoint<f64>;
pub type PhasePoint32 = hamiltonian::PhasePoint<f32>;
pub type ChainConfig64 = sampler::ChainConfig<f64>;
pub type ChainConfig32 = sampler::ChainConfig<f32>;
pub type ChainRecord64 = sampler::ChainRecord<f64>;
pub type ChainRecord32 = sampler::ChainRecord<f32>;
pub type LeapfrogConfig64 = integrator::LeapfrogConfig<f64>;
pub type LeapfrogConfig32 = integrator::LeapfrogConfig<f32>;

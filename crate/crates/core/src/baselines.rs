//! Reference samplers used as ground truth: MALA on box-truncated targets and
//! independent Metropolis–Hastings with a uniform proposal on the simplex.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::barrier::Polytope;
use crate::hamiltonian::TargetPotential;
use crate::sampler::{chain_rng, mh_accept};
use crate::scalar::Real;

/// Langevin proposal convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalaParameterization {
    /// `y ~ N(x - (h/2)∇V(x), h I)`.
    HalfDrift,
    /// `y ~ N(x - h∇V(x), 2h I)`.
    FullDrift,
    /// `h` is the proposal standard deviation: `y ~ N(x - (h²/2)∇V(x), h² I)`.
    #[default]
    StdDev,
}

impl MalaParameterization {
    fn drift_and_variance(self, h: f64) -> (f64, f64) {
        match self {
            Self::HalfDrift => (0.5 * h, h),
            Self::FullDrift => (h, 2.0 * h),
            Self::StdDev => (0.5 * h * h, h * h),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MalaConfig {
    pub h: f64,
    pub n_iter: usize,
    pub seed: u64,
    #[serde(default)]
    pub parameterization: MalaParameterization,
}

impl Default for MalaConfig {
    fn default() -> Self {
        Self {
            h: 0.05,
            n_iter: 100_000,
            seed: 0,
            parameterization: MalaParameterization::StdDev,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImhConfig {
    pub n_iter: usize,
    pub seed: u64,
}

/// Log density of the Langevin kernel at `to` from `from`, up to a constant.
fn log_kernel<T: Real>(
    target: &impl TargetPotential<T>,
    from: &[T],
    to: &[T],
    drift: f64,
    var: f64,
) -> f64 {
    let grad = target.gradient(from);
    let sq: f64 = from
        .iter()
        .zip(to)
        .zip(&grad)
        .map(|((&f, &t), &g)| {
            let r = t.as_f64() - (f.as_f64() - drift * g.as_f64());
            r * r
        })
        .sum();
    -sq / (2.0 * var)
}

/// One MALA step targeting `exp(-V) 1_M`. Proposals outside `M` are rejected.
pub fn mala_step<T: Real, R: Rng + ?Sized>(
    target: &impl TargetPotential<T>,
    poly: &Polytope<T>,
    x: &[T],
    cfg: &MalaConfig,
    rng: &mut R,
) -> (Vec<T>, bool) {
    let (drift, var) = cfg.parameterization.drift_and_variance(cfg.h);
    let sd = var.sqrt();
    let grad = target.gradient(x);
    let y: Vec<T> = x
        .iter()
        .zip(&grad)
        .map(|(&xi, &gi)| {
            let z: f64 = rng.sample(StandardNormal);
            T::lit(xi.as_f64() - drift * gi.as_f64() + sd * z)
        })
        .collect();
    let u: f64 = rng.random();
    if !poly.contains(&y) {
        return (x.to_vec(), false);
    }
    let log_ratio = (target.value(x) - target.value(&y)).as_f64()
        + log_kernel(target, &y, x, drift, var)
        - log_kernel(target, x, &y, drift, var);
    if mh_accept(-log_ratio, 0.0, u) {
        (y, true)
    } else {
        (x.to_vec(), false)
    }
}

/// Runs MALA, calling `observe` with every state. Returns the acceptance rate.
pub fn run_mala<T: Real, V: TargetPotential<T>>(
    target: &V,
    poly: &Polytope<T>,
    cfg: &MalaConfig,
    x_init: &[T],
    mut observe: impl FnMut(&[T]),
) -> f64 {
    let mut rng = chain_rng(cfg.seed);
    let mut x = x_init.to_vec();
    let mut accepted = 0usize;
    for _ in 0..cfg.n_iter {
        let (next, acc) = mala_step(target, poly, &x, cfg, &mut rng);
        accepted += acc as usize;
        x = next;
        observe(&x);
    }
    accepted as f64 / cfg.n_iter.max(1) as f64
}

/// Uniform draw from the open simplex `{x > 0, Σx < 1}` via normalized
/// exponential spacings (a flat Dirichlet on `d + 1` coordinates).
pub fn sample_uniform_simplex<T: Real, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<T> {
    loop {
        let e: Vec<f64> = (0..=d).map(|_| rng.sample(Exp1)).collect();
        let total: f64 = e.iter().sum();
        let x: Vec<T> = e[..d].iter().map(|&v| T::lit(v / total)).collect();
        let sum: T = x.iter().copied().sum();
        if x.iter().all(|&v| v > T::zero()) && sum < T::one() {
            return x;
        }
    }
}

/// One independent MH step with a uniform proposal on the simplex.
pub fn imh_step<T: Real, R: Rng + ?Sized>(
    target: &impl TargetPotential<T>,
    x: &[T],
    rng: &mut R,
) -> (Vec<T>, bool) {
    let y: Vec<T> = sample_uniform_simplex(x.len(), rng);
    let u = T::lit(rng.random::<f64>());
    if mh_accept(target.value(&y), target.value(x), u) {
        (y, true)
    } else {
        (x.to_vec(), false)
    }
}

pub fn run_imh<T: Real, V: TargetPotential<T>>(
    target: &V,
    cfg: &ImhConfig,
    x_init: &[T],
    mut observe: impl FnMut(&[T]),
) -> f64 {
    let mut rng = chain_rng(cfg.seed);
    let mut x = x_init.to_vec();
    let mut accepted = 0usize;
    for _ in 0..cfg.n_iter {
        let (next, acc) = imh_step(target, &x, &mut rng);
        accepted += acc as usize;
        x = next;
        observe(&x);
    }
    accepted as f64 / cfg.n_iter.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{Gaussian, Uniform};

    #[test]
    fn infeasible_mala_proposals_are_rejected() {
        let poly = Polytope::<f64>::hypercube(2, 0.5);
        let cfg = MalaConfig { h: 100.0, ..Default::default() };
        let mut rng = chain_rng(1);
        let x = vec![0.0, 0.0];
        let mut rejected = 0;
        for _ in 0..200 {
            let (y, acc) = mala_step(&Uniform, &poly, &x, &cfg, &mut rng);
            if !acc {
                assert_eq!(y, x);
                rejected += 1;
            }
        }
        assert!(rejected > 190);
    }

    #[test]
    fn flat_target_interior_moves_always_accept() {
        let poly = Polytope::<f64>::hypercube(2, 100.0);
        let cfg = MalaConfig { h: 0.01, ..Default::default() };
        let mut rng = chain_rng(2);
        let mut x = vec![0.0, 0.0];
        for _ in 0..500 {
            let (y, acc) = mala_step(&Uniform, &poly, &x, &cfg, &mut rng);
            assert!(acc);
            x = y;
        }
    }

    #[test]
    fn mala_ratio_uses_both_kernels() {
        // Inside a huge box MALA samples the untruncated Gaussian.
        let poly = Polytope::<f64>::hypercube(1, 1e3);
        let target = Gaussian::new(vec![2.0]);
        let cfg = MalaConfig { h: 0.5, n_iter: 200_000, seed: 3, ..Default::default() };
        let (mut s1, mut s2) = (0.0, 0.0);
        run_mala(&target, &poly, &cfg, &[0.0], |x| {
            s1 += x[0];
            s2 += x[0] * x[0];
        });
        let n = cfg.n_iter as f64;
        let mean = s1 / n;
        let var = s2 / n - mean * mean;
        assert!((mean - 2.0).abs() < 0.05);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn uniform_simplex_moments() {
        let mut rng = chain_rng(4);
        let d = 4;
        let n = 100_000;
        let mut s1 = vec![0.0; d];
        let mut s2 = vec![0.0; d];
        for _ in 0..n {
            let x: Vec<f64> = sample_uniform_simplex(d, &mut rng);
            assert!(x.iter().all(|&v| v > 0.0) && x.iter().sum::<f64>() < 1.0);
            for i in 0..d {
                s1[i] += x[i];
                s2[i] += x[i] * x[i];
            }
        }
        let mean_exact = 1.0 / (d as f64 + 1.0);
        let var_exact = d as f64 / ((d as f64 + 1.0).powi(2) * (d as f64 + 2.0));
        for i in 0..d {
            let mean = s1[i] / n as f64;
            let var = s2[i] / n as f64 - mean * mean;
            assert!((mean - mean_exact).abs() < 3.0 * (var_exact / n as f64).sqrt() + 1e-4);
            assert!((var - var_exact).abs() < 0.03 * var_exact);
        }
        let one: Vec<f64> = sample_uniform_simplex(1, &mut rng);
        assert!(one[0] > 0.0 && one[0] < 1.0);
    }

    #[test]
    fn imh_with_flat_target_always_accepts() {
        let cfg = ImhConfig { n_iter: 1000, seed: 5 };
        let mut mean = [0.0; 3];
        let rate = run_imh(&Uniform, &cfg, &[0.25, 0.25, 0.25], |x: &[f64]| {
            for i in 0..3 {
                mean[i] += x[i] / 1000.0;
            }
        });
        assert_eq!(rate, 1.0);
        for m in mean {
            assert!((m - 0.25).abs() < 0.03);
        }
    }
}

//! Split Hamiltonian `H = H1 + H2` on the cotangent bundle of a polytope.
//!
//! `H1(x) = V(x) + ½ log det g(x)` carries the target and the volume
//! correction; `H2(x, p) = ½ pᵀ g(x)⁻¹ p` is the non-separable kinetic part.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::barrier::{MetricState, Polytope};
use crate::linalg::{dot, scale};
use crate::scalar::Real;

/// Position and momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint<T> {
    pub x: Vec<T>,
    pub p: Vec<T>,
}

impl<T: Real> PhasePoint<T> {
    pub fn new(x: Vec<T>, p: Vec<T>) -> Self {
        debug_assert_eq!(x.len(), p.len());
        Self { x, p }
    }

    /// Momentum flip `s(x, p) = (x, -p)`.
    pub fn flipped(&self) -> Self {
        Self {
            x: self.x.clone(),
            p: self.p.iter().map(|&v| -v).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.p).all(|v| v.is_finite())
    }
}

/// Potential `V` of a target density `exp(-V(x))` restricted to the polytope.
pub trait TargetPotential<T>: Send + Sync {
    fn value(&self, x: &[T]) -> T;
    fn gradient(&self, x: &[T]) -> Vec<T>;
}

/// Uniform target, `V ≡ 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Uniform;

impl<T: Real> TargetPotential<T> for Uniform {
    fn value(&self, _x: &[T]) -> T {
        T::zero()
    }

    fn gradient(&self, x: &[T]) -> Vec<T> {
        vec![T::zero(); x.len()]
    }
}

/// Isotropic unit-variance Gaussian, `V(x) = ½‖x - μ‖²`.
#[derive(Clone, Debug)]
pub struct Gaussian<T> {
    pub mean: Vec<T>,
}

impl<T: Real> Gaussian<T> {
    pub fn new(mean: Vec<T>) -> Self {
        Self { mean }
    }
}

impl<T: Real> TargetPotential<T> for Gaussian<T> {
    fn value(&self, x: &[T]) -> T {
        T::lit(0.5)
            * x.iter()
                .zip(&self.mean)
                .map(|(&a, &m)| (a - m) * (a - m))
                .sum::<T>()
    }

    fn gradient(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.mean).map(|(&a, &m)| a - m).collect()
    }
}

impl<T, V: TargetPotential<T> + ?Sized> TargetPotential<T> for &V {
    fn value(&self, x: &[T]) -> T {
        (**self).value(x)
    }

    fn gradient(&self, x: &[T]) -> Vec<T> {
        (**self).gradient(x)
    }
}

impl<T, V: TargetPotential<T> + ?Sized> TargetPotential<T> for Box<V> {
    fn value(&self, x: &[T]) -> T {
        (**self).value(x)
    }

    fn gradient(&self, x: &[T]) -> Vec<T> {
        (**self).gradient(x)
    }
}

/// Momentum refresh weight `β ∈ (0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefreshRate<T>(T);

impl<T: Real> RefreshRate<T> {
    pub fn new(beta: T) -> Option<Self> {
        (beta > T::zero() && beta <= T::one()).then_some(Self(beta))
    }

    pub fn full() -> Self {
        Self(T::one())
    }

    #[inline]
    pub fn get(self) -> T {
        self.0
    }
}

/// `H(x, p) = V(x) + ½ log det g(x) + ½ ‖p‖²_{g(x)⁻¹}`.
pub fn hamiltonian<T: Real>(
    target: &impl TargetPotential<T>,
    ms: &MetricState<T>,
    p: &[T],
) -> T {
    h1(target, ms) + h2(ms, p)
}

/// `H1(x) = V(x) + ½ log det g(x)`.
pub fn h1<T: Real>(target: &impl TargetPotential<T>, ms: &MetricState<T>) -> T {
    target.value(ms.x()) + T::lit(0.5) * ms.logdet()
}

/// `H2(x, p) = ½ ‖p‖²_{g(x)⁻¹}`.
pub fn h2<T: Real>(ms: &MetricState<T>, p: &[T]) -> T {
    let n = ms.cotangent_norm(p);
    T::lit(0.5) * n * n
}

/// `∂x H1 = ∇V + ½ g⁻¹ : Dg`. Does not depend on `p`.
pub fn dx_h1<T: Real>(
    target: &impl TargetPotential<T>,
    poly: &Polytope<T>,
    ms: &MetricState<T>,
) -> Vec<T> {
    let mut out = target.gradient(ms.x());
    let half = T::lit(0.5);
    for (o, t) in out.iter_mut().zip(poly.trace_term(ms)) {
        *o = *o + half * t;
    }
    out
}

/// `∂x H2 = -½ Dg[g⁻¹p, g⁻¹p]`.
pub fn dx_h2<T: Real>(poly: &Polytope<T>, ms: &MetricState<T>, p: &[T]) -> Vec<T> {
    let u = ms.solve(p);
    scale(-T::lit(0.5), &poly.metric_dirderiv(ms, &u, &u))
}

/// `∂p H2 = g⁻¹ p`.
pub fn dp_h2<T: Real>(ms: &MetricState<T>, p: &[T]) -> Vec<T> {
    ms.solve(p)
}

/// How displacements in phase space are measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// `‖dx‖_{g(x)} + ‖dp‖_{g(x)⁻¹}` anchored at a phase point.
    #[default]
    SelfConcordant,
    /// `‖dx‖₂ + ‖dp‖₂`.
    Euclidean,
}

/// `‖(dx, dp)‖_z = ‖dx‖_{g(x)} + ‖dp‖_{g(x)⁻¹}` with `ms` the metric at `z`.
pub fn phase_norm<T: Real>(ms: &MetricState<T>, dx: &[T], dp: &[T]) -> T {
    ms.tangent_norm(dx) + ms.cotangent_norm(dp)
}

/// Phase displacement measured under `mode`, anchored at `ms` when relevant.
pub fn displacement_norm<T: Real>(mode: NormMode, ms: &MetricState<T>, dx: &[T], dp: &[T]) -> T {
    match mode {
        NormMode::SelfConcordant => phase_norm(ms, dx, dp),
        NormMode::Euclidean => dot(dx, dx).sqrt() + dot(dp, dp).sqrt(),
    }
}

/// Draw `p ~ N(0, g(x))` as `L ξ` with `ξ` standard normal.
pub fn sample_momentum<T: Real, R: Rng + ?Sized>(ms: &MetricState<T>, rng: &mut R) -> Vec<T> {
    let xi: Vec<T> = (0..ms.x().len())
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    ms.cholesky().mul_lower(&xi)
}

/// `√(1-β) p + √β G`.
pub fn refresh_momentum<T: Real>(p: &[T], draw: &[T], beta: RefreshRate<T>) -> Vec<T> {
    let b = beta.get();
    if b == T::one() {
        return draw.to_vec();
    }
    let keep = (T::one() - b).sqrt();
    let fresh = b.sqrt();
    p.iter().zip(draw).map(|(&a, &g)| keep * a + fresh * g).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn half_line() -> Polytope<f64> {
        Polytope::new(Matrix::from_rows(&[vec![1.0]]).unwrap(), vec![0.0]).unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let cube = Polytope::<f64>::hypercube(2, 0.5);
        let ms = cube.metric_state(&[0.0, 0.0]).unwrap();
        let h = hamiltonian(&Uniform, &ms, &[0.0, 0.0]);
        assert!((h - 8f64.ln()).abs() < 1e-14);
        assert!((h - 2.0794415416798357).abs() < 1e-14);
        assert_eq!(h, 0.5 * ms.logdet());

        let gauss = Gaussian::new(vec![0.0, 0.0]);
        let h = hamiltonian(&gauss, &ms, &[1.0, 0.0]);
        assert!((h - (8f64.ln() + 0.0625)).abs() < 1e-14);
        assert!((h - 2.14194).abs() < 1e-5);
    }

    #[test]
    fn partial_derivative_examples() {
        let cube = Polytope::<f64>::hypercube(2, 0.5);
        let ms = cube.metric_state(&[0.0, 0.0]).unwrap();
        assert_eq!(dx_h1(&Uniform, &cube, &ms), vec![0.0, 0.0]);

        let line = half_line();
        let ms = line.metric_state(&[-1.0]).unwrap();
        assert_eq!(dx_h1(&Uniform, &line, &ms), vec![1.0]);
        // g = 1/x², u = x² p, ∂x H2 = x p², ∂p H2 = x² p
        assert_eq!(dx_h2(&line, &ms, &[1.0]), vec![-1.0]);
        assert_eq!(dp_h2(&ms, &[1.0]), vec![1.0]);
        let ms = line.metric_state(&[-2.0]).unwrap();
        assert!((dx_h2(&line, &ms, &[3.0])[0] - (-18.0)).abs() < 1e-12);
        assert!((dp_h2(&ms, &[3.0])[0] - 12.0).abs() < 1e-12);

        assert_eq!(dx_h2(&line, &ms, &[0.0]), vec![0.0]);
        assert_eq!(dp_h2(&ms, &[0.0]), vec![0.0]);
    }

    #[test]
    fn momentum_reversal_symmetry_is_exact() {
        let cube = Polytope::<f64>::hypercube(3, 0.5);
        let ms = cube.metric_state(&[0.1, -0.3, 0.42]).unwrap();
        let p = [1.3, -0.2, 4.0];
        let q: Vec<f64> = p.iter().map(|v| -v).collect();
        assert_eq!(dx_h2(&cube, &ms, &p), dx_h2(&cube, &ms, &q));
        let a = dp_h2(&ms, &p);
        let b = dp_h2(&ms, &q);
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(*u, -*v);
        }
    }

    #[test]
    fn phase_norm_examples() {
        let cube = Polytope::<f64>::hypercube(2, 0.5);
        let ms = cube.metric_state(&[0.0, 0.0]).unwrap();
        let n = phase_norm(&ms, &[1.0, 0.0], &[1.0, 0.0]);
        assert!((n - (8f64.sqrt() + 1.0 / 8f64.sqrt())).abs() < 1e-14);
        assert!((n - 3.18198).abs() < 1e-5);
        assert_eq!(phase_norm(&ms, &[0.0, 0.0], &[0.0, 0.0]), 0.0);
        let twice = phase_norm(&ms, &[2.0, 0.0], &[2.0, 0.0]);
        assert!((twice - 2.0 * n).abs() < 1e-14);
        assert_eq!(
            displacement_norm(NormMode::Euclidean, &ms, &[3.0, 4.0], &[0.0, 1.0]),
            6.0
        );
    }

    #[test]
    fn refresh_examples() {
        let p = [1.0, -2.0];
        let g = [0.5, 0.25];
        assert_eq!(refresh_momentum(&p, &g, RefreshRate::full()), g.to_vec());
        let half = RefreshRate::new(0.5).unwrap();
        let out = refresh_momentum(&g, &g, half);
        assert!((out[0] - 0.5f64.sqrt() * 2.0 * 0.5).abs() < 1e-15);
        assert!(RefreshRate::new(0.0).is_none());
        assert!(RefreshRate::new(1.5).is_none());
        assert!(RefreshRate::new(1.0).is_some());
    }

    #[test]
    fn momentum_covariance_matches_metric() {
        let cube = Polytope::<f64>::hypercube(2, 0.5);
        let ms = cube.metric_state(&[0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut cov = [[0.0; 2]; 2];
        let mut kinetic = 0.0;
        for _ in 0..n {
            let p = sample_momentum(&ms, &mut rng);
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += p[i] * p[j] / n as f64;
                }
            }
            kinetic += ms.cotangent_norm(&p).powi(2) / n as f64;
        }
        assert!((cov[0][0] - 8.0).abs() < 0.4);
        assert!((cov[1][1] - 8.0).abs() < 0.4);
        assert!(cov[0][1].abs() < 0.4);
        assert!((kinetic - 2.0).abs() < 3.0 * (2.0 * 2.0 / n as f64).sqrt());
    }

    #[test]
    fn momentum_is_seed_deterministic() {
        let cube = Polytope::<f64>::hypercube(3, 0.5);
        let ms = cube.metric_state(&[0.1, 0.2, -0.2]).unwrap();
        let a = sample_momentum(&ms, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_momentum(&ms, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_gradient_matches_value() {
        let g = Gaussian::new(vec![0.0, 10.0, 5.0]);
        let x: [f64; 3] = [0.1, -0.2, 0.3];
        let grad = g.gradient(&x);
        for j in 0..3 {
            let eps = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[j] += eps;
            xm[j] -= eps;
            let fd = (g.value(&xp) - g.value(&xm)) / (2.0 * eps);
            assert!((fd - grad[j]).abs() < 1e-6 * grad[j].abs().max(1.0));
        }
    }
}

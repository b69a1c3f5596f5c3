//! Polytopes `{x : Ax < b}` and the differential geometry of their
//! logarithmic barrier `φ(x) = -Σ log(b_i - a_i·x)`.
//!
//! The Hessian metric is `g(x) = Aᵀ S(x)⁻² A` with `S(x) = Diag(b - Ax)`.
//! Everything that needs `g(x)` takes a [`MetricState`], which caches the
//! slacks, the metric, its Cholesky factor and log-determinant at one point.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm2, Cholesky, Matrix};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BarrierError {
    #[error("point violates constraint {index} (slack {slack:e})")]
    Infeasible { index: usize, slack: f64 },
    #[error("metric is not positive definite")]
    CholeskyFailure,
    #[error("analytic centering did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("invalid polytope: {0}")]
    Invalid(String),
    #[error("failed to read polytope: {0}")]
    Io(String),
}

/// How the polytope was built. Presets know their exact center of mass.
#[derive(Clone, Debug, PartialEq)]
pub enum PolytopeKind<T> {
    Hypercube { half_width: T },
    Simplex,
    General,
}

/// Bounded polytope `{x ∈ Rᵈ : Ax < b}` with `A` of full column rank.
#[derive(Clone, Debug)]
pub struct Polytope<T> {
    a: Matrix<T>,
    b: Vec<T>,
    kind: PolytopeKind<T>,
}

/// On-disk polytope description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolytopeFile {
    pub d: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl<T: Real> Polytope<T> {
    /// Validates shapes and full column rank (through a Cholesky of `AᵀA`).
    ///
    /// Boundedness of the interior is not checked here; an unbounded input
    /// surfaces later as a centering failure.
    pub fn new(a: Matrix<T>, b: Vec<T>) -> Result<Self, BarrierError> {
        Self::with_kind(a, b, PolytopeKind::General)
    }

    fn with_kind(a: Matrix<T>, b: Vec<T>, kind: PolytopeKind<T>) -> Result<Self, BarrierError> {
        let (m, d) = (a.rows(), a.cols());
        if d == 0 {
            return Err(BarrierError::Invalid("dimension must be at least 1".into()));
        }
        if b.len() != m {
            return Err(BarrierError::Invalid(format!(
                "A has {m} rows but b has {} entries",
                b.len()
            )));
        }
        if m < d {
            return Err(BarrierError::Invalid(format!(
                "need at least d = {d} constraints, got {m}"
            )));
        }
        if a.to_rows().iter().flatten().chain(&b).any(|v| !v.is_finite()) {
            return Err(BarrierError::Invalid("non-finite coefficient".into()));
        }
        if Cholesky::new(&a.weighted_gram(&vec![T::one(); m])).is_none() {
            return Err(BarrierError::Invalid("A does not have full column rank".into()));
        }
        Ok(Self { a, b, kind })
    }

    /// The box `[-w, w]ᵈ` as `[I; -I] x < w·1`.
    pub fn hypercube(d: usize, half_width: T) -> Self {
        assert!(d >= 1 && half_width > T::zero());
        let mut a = Matrix::zeros(2 * d, d);
        for i in 0..d {
            a[(i, i)] = T::one();
            a[(d + i, i)] = -T::one();
        }
        Self::with_kind(a, vec![half_width; 2 * d], PolytopeKind::Hypercube { half_width })
            .expect("hypercube is a valid polytope")
    }

    /// The open standard simplex `{x > 0, Σx < 1}` as `[-I; 1ᵀ] x < (0, 1)`.
    pub fn simplex(d: usize) -> Self {
        assert!(d >= 1);
        let mut a = Matrix::zeros(d + 1, d);
        for i in 0..d {
            a[(i, i)] = -T::one();
            a[(d, i)] = T::one();
        }
        let mut b = vec![T::zero(); d + 1];
        b[d] = T::one();
        Self::with_kind(a, b, PolytopeKind::Simplex).expect("simplex is a valid polytope")
    }

    pub fn from_file_repr(file: &PolytopeFile) -> Result<Self, BarrierError> {
        if file.a.len() != file.m || file.b.len() != file.m {
            return Err(BarrierError::Invalid(format!(
                "declared m = {} but A has {} rows and b has {} entries",
                file.m,
                file.a.len(),
                file.b.len()
            )));
        }
        if let Some(bad) = file.a.iter().position(|r| r.len() != file.d) {
            return Err(BarrierError::Invalid(format!(
                "row {bad} of A has {} entries, expected d = {}",
                file.a[bad].len(),
                file.d
            )));
        }
        let rows: Vec<Vec<T>> = file
            .a
            .iter()
            .map(|r| r.iter().map(|&v| T::lit(v)).collect())
            .collect();
        let a = Matrix::from_rows(&rows)
            .ok_or_else(|| BarrierError::Invalid("ragged constraint matrix".into()))?;
        let a = if file.m == 0 { Matrix::zeros(0, file.d) } else { a };
        Self::new(a, file.b.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn from_json_str(s: &str) -> Result<Self, BarrierError> {
        let file: PolytopeFile =
            serde_json::from_str(s).map_err(|e| BarrierError::Invalid(e.to_string()))?;
        Self::from_file_repr(&file)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, BarrierError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| BarrierError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_file_repr(&self) -> PolytopeFile {
        PolytopeFile {
            d: self.dim(),
            m: self.n_constraints(),
            a: self
                .a
                .to_rows()
                .into_iter()
                .map(|r| r.into_iter().map(Real::as_f64).collect())
                .collect(),
            b: self.b.iter().map(|v| v.as_f64()).collect(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.a.cols()
    }

    #[inline]
    pub fn n_constraints(&self) -> usize {
        self.a.rows()
    }

    #[inline]
    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    #[inline]
    pub fn b(&self) -> &[T] {
        &self.b
    }

    #[inline]
    pub fn kind(&self) -> &PolytopeKind<T> {
        &self.kind
    }

    /// `b - Ax`; negative entries are returned as-is.
    pub fn slack(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.dim());
        (0..self.n_constraints())
            .map(|i| self.b[i] - dot(self.a.row(i), x))
            .collect()
    }

    /// Strict feasibility `Ax < b`.
    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim() && self.slack(x).iter().all(|&s| s > T::zero())
    }

    fn checked_slack(&self, x: &[T]) -> Result<Vec<T>, BarrierError> {
        let s = self.slack(x);
        match s.iter().position(|&si| !(si > T::zero())) {
            Some(index) => Err(BarrierError::Infeasible {
                index,
                slack: s[index].as_f64(),
            }),
            None => Ok(s),
        }
    }

    pub fn metric_state(&self, x: &[T]) -> Result<MetricState<T>, BarrierError> {
        let s = self.checked_slack(x)?;
        let inv_s: Vec<T> = s.iter().map(|&si| si.recip()).collect();
        let w: Vec<T> = inv_s.iter().map(|&v| v * v).collect();
        let g = self.a.weighted_gram(&w);
        let chol = Cholesky::new(&g).ok_or(BarrierError::CholeskyFailure)?;
        let logdet = chol.log_det();
        Ok(MetricState {
            x: x.to_vec(),
            s,
            inv_s,
            g,
            chol,
            logdet,
        })
    }

    /// `φ(x) = -Σ log s_i`.
    pub fn barrier_value(&self, x: &[T]) -> Result<T, BarrierError> {
        Ok(-self.checked_slack(x)?.into_iter().map(T::ln).sum::<T>())
    }

    /// `∇φ(x) = Aᵀ S⁻¹ 1`.
    pub fn barrier_gradient(&self, x: &[T]) -> Result<Vec<T>, BarrierError> {
        let s = self.checked_slack(x)?;
        let w: Vec<T> = s.iter().map(|&si| si.recip()).collect();
        Ok(self.a.tr_mul_vec(&w))
    }

    /// `Dg(x)[u, v] = 2 Aᵀ S⁻³ ((Au) ⊙ (Av))`, the third derivative of `φ`
    /// contracted twice. Symmetric and bilinear in `(u, v)`.
    pub fn metric_dirderiv(&self, ms: &MetricState<T>, u: &[T], v: &[T]) -> Vec<T> {
        let two = T::lit(2.0);
        let w: Vec<T> = (0..self.n_constraints())
            .map(|i| {
                let row = self.a.row(i);
                let r = ms.inv_s[i];
                two * (dot(row, u) * r) * (dot(row, v) * r) * r
            })
            .collect();
        self.a.tr_mul_vec(&w)
    }

    /// `g(x)⁻¹ : Dg(x)`, which equals `∇ log det g(x)`.
    ///
    /// Component `l` is `Σ_i 2 A_il σ_i / s_i` with leverage scores
    /// `σ_i = a_iᵀ g⁻¹ a_i / s_i²`, each obtained from one triangular solve.
    pub fn trace_term(&self, ms: &MetricState<T>) -> Vec<T> {
        let two = T::lit(2.0);
        let w: Vec<T> = (0..self.n_constraints())
            .map(|i| {
                let y = ms.chol.solve_lower(self.a.row(i));
                let r = ms.inv_s[i];
                let sigma = dot(&y, &y) * r * r;
                two * sigma * r
            })
            .collect();
        let mut t = self.a.tr_mul_vec(&w);
        if fault::trace_sign_flipped() {
            t.iter_mut().for_each(|v| *v = -*v);
        }
        t
    }

    /// Leverage scores `σ_i`; they sum to `d`.
    pub fn leverage_scores(&self, ms: &MetricState<T>) -> Vec<T> {
        (0..self.n_constraints())
            .map(|i| {
                let y = ms.chol.solve_lower(self.a.row(i));
                dot(&y, &y) * ms.inv_s[i] * ms.inv_s[i]
            })
            .collect()
    }

    /// Center used to initialize chains.
    ///
    /// Presets return their exact center of mass. General polytopes return the
    /// analytic center (the minimizer of `φ`), which is only a stand-in for
    /// the center of mass.
    pub fn analytic_center(&self) -> Result<Vec<T>, BarrierError> {
        match self.kind {
            PolytopeKind::Hypercube { .. } => Ok(vec![T::zero(); self.dim()]),
            PolytopeKind::Simplex => {
                let c = T::one() / T::from_usize(self.dim() + 1).unwrap();
                Ok(vec![c; self.dim()])
            }
            PolytopeKind::General => {
                let start = self.strictly_feasible_point()?;
                newton_center(self, start, |_| None)
            }
        }
    }

    /// Analytic center from Newton iterations regardless of the preset kind.
    pub fn newton_analytic_center(&self) -> Result<Vec<T>, BarrierError> {
        let start = self.strictly_feasible_point()?;
        newton_center(self, start, |_| None)
    }

    /// Phase-one search: barrier method on `{(x, t) : Ax - t < b, -1 < t < t0}`
    /// minimizing `t` until it turns negative.
    fn strictly_feasible_point(&self) -> Result<Vec<T>, BarrierError> {
        let d = self.dim();
        let m = self.n_constraints();
        let zero = vec![T::zero(); d];
        if self.contains(&zero) {
            return Ok(zero);
        }
        let worst = self
            .slack(&zero)
            .into_iter()
            .map(|s| -s)
            .fold(T::zero(), T::max);
        let t0 = worst + T::one();
        let mut a = Matrix::zeros(m + 2, d + 1);
        let mut b = Vec::with_capacity(m + 2);
        for i in 0..m {
            for j in 0..d {
                a[(i, j)] = self.a[(i, j)];
            }
            a[(i, d)] = -T::one();
            b.push(self.b[i]);
        }
        a[(m, d)] = -T::one();
        b.push(T::one());
        a[(m + 1, d)] = T::one();
        b.push(t0 + T::one());
        let aug = Polytope::new(a, b)?;

        let mut z = zero;
        z.push(t0);
        let mut weight = T::one();
        for _ in 0..60 {
            let w = weight;
            z = newton_center(&aug, z, move |grad: &mut Vec<T>| {
                let last = grad.len() - 1;
                grad[last] = grad[last] + w;
                Some(())
            })?;
            if z[d] < T::zero() {
                z.pop();
                if self.contains(&z) {
                    return Ok(z);
                }
            }
            weight = weight * T::lit(4.0);
        }
        Err(BarrierError::NoConvergence { iterations: 60 })
    }
}

const CENTER_MAX_ITERS: usize = 200;

/// Damped Newton on `φ(x) + cᵀx`; `linear` adds `c` to the gradient in place.
fn newton_center<T: Real>(
    poly: &Polytope<T>,
    mut x: Vec<T>,
    linear: impl Fn(&mut Vec<T>) -> Option<()>,
) -> Result<Vec<T>, BarrierError> {
    let tol = T::lit(1e-8).max(T::epsilon().sqrt());
    for _ in 0..CENTER_MAX_ITERS {
        let ms = poly.metric_state(&x)?;
        let mut grad = poly.a.tr_mul_vec(&ms.inv_s);
        linear(&mut grad);
        let step = ms.chol.solve(&grad);
        let decrement = dot(&grad, &step).max(T::zero()).sqrt();
        if decrement <= tol {
            return Ok(x);
        }
        let mut t = if decrement < T::lit(0.25) {
            T::one()
        } else {
            T::one() / (T::one() + decrement)
        };
        loop {
            let trial: Vec<T> = x.iter().zip(&step).map(|(&xi, &si)| xi - t * si).collect();
            if poly.contains(&trial) {
                x = trial;
                break;
            }
            t = t * T::lit(0.5);
            if t < T::epsilon() {
                return Err(BarrierError::NoConvergence {
                    iterations: CENTER_MAX_ITERS,
                });
            }
        }
    }
    Err(BarrierError::NoConvergence {
        iterations: CENTER_MAX_ITERS,
    })
}

/// Barrier geometry at one strictly feasible point.
#[derive(Clone, Debug)]
pub struct MetricState<T> {
    x: Vec<T>,
    s: Vec<T>,
    inv_s: Vec<T>,
    g: Matrix<T>,
    chol: Cholesky<T>,
    logdet: T,
}

impl<T: Real> MetricState<T> {
    #[inline]
    pub fn x(&self) -> &[T] {
        &self.x
    }

    #[inline]
    pub fn slack(&self) -> &[T] {
        &self.s
    }

    #[inline]
    pub fn metric(&self) -> &Matrix<T> {
        &self.g
    }

    #[inline]
    pub fn cholesky(&self) -> &Cholesky<T> {
        &self.chol
    }

    #[inline]
    pub fn logdet(&self) -> T {
        self.logdet
    }

    /// `g(x)⁻¹ p`.
    #[inline]
    pub fn solve(&self, p: &[T]) -> Vec<T> {
        self.chol.solve(p)
    }

    /// `‖v‖_{g(x)} = ‖Lᵀ v‖₂`.
    pub fn tangent_norm(&self, v: &[T]) -> T {
        norm2(&self.chol.mul_upper(v))
    }

    /// `‖p‖_{g(x)⁻¹} = ‖L⁻¹ p‖₂`.
    pub fn cotangent_norm(&self, p: &[T]) -> T {
        norm2(&self.chol.solve_lower(p))
    }

    /// `(‖v‖_{g(x)}, ‖p‖_{g(x)⁻¹})`.
    pub fn local_norms(&self, v: &[T], p: &[T]) -> (T, T) {
        (self.tangent_norm(v), self.cotangent_norm(p))
    }

    /// Smallest squared Cholesky pivot, a lower bound proxy on `λ_min(g)`.
    pub fn min_pivot_sq(&self) -> T {
        self.chol.diag().map(|p| p * p).fold(T::infinity(), T::min)
    }
}

/// Mutation hook used by the self-check to prove it catches a wrong
/// `trace_term`. The flag is per thread.
#[doc(hidden)]
pub mod fault {
    use std::cell::Cell;

    thread_local! {
        static TRACE_SIGN: Cell<bool> = const { Cell::new(false) };
    }

    pub fn set_trace_sign_flip(on: bool) {
        TRACE_SIGN.with(|f| f.set(on));
    }

    pub(crate) fn trace_sign_flipped() -> bool {
        TRACE_SIGN.with(|f| f.get())
    }
}

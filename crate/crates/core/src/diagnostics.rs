//! Estimators and exact references for the truncated-Gaussian experiments.

use serde::{Deserialize, Serialize};
use libm::erfc;
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("empty interval [{lo}, {hi}]")]
    Interval { lo: f64, hi: f64 },
}

/// Mean of the experiment target: `μ = 10/√(d-1) · (1 - e₁ + (√(d-1) - 1) e₂)`,
/// i.e. `μ₁ = 0`, `μ₂ = 10`, `μ_j = 10/√(d-1)` otherwise.
pub fn mu_vector(d: usize) -> Result<Vec<f64>, DiagnosticsError> {
    if d < 2 {
        return Err(DiagnosticsError::Dimension(d));
    }
    let c = 10.0 / ((d - 1) as f64).sqrt();
    let mut mu = vec![c; d];
    mu[0] = 0.0;
    mu[1] = 10.0;
    Ok(mu)
}

/// `⟨x, μ⟩`.
pub fn q_functional<T: Real>(x: &[T], mu: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), mu.len());
    x.iter().zip(mu).map(|(&a, &m)| a.as_f64() * m).sum()
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

fn normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / SQRT_2)
}

/// Mills ratio `R(u) = P(Z > u) / φ(u)` for `u ≥ 0`. Beyond `u = 8` the
/// continued fraction `1/(u + 1/(u + 2/(u + …)))` is used so that neither
/// tail probability has to be formed.
fn mills_ratio(u: f64) -> f64 {
    if u < 8.0 {
        return 0.5 * erfc(u / SQRT_2) / normal_pdf(u);
    }
    let mut acc = u;
    for k in (1..=120).rev() {
        acc = u + k as f64 / acc;
    }
    1.0 / acc
}

/// Mean of `N(μ, 1)` truncated to `[lo, hi]`.
pub fn truncated_normal_mean(mu: f64, lo: f64, hi: f64) -> Result<f64, DiagnosticsError> {
    if !(lo < hi) {
        return Err(DiagnosticsError::Interval { lo, hi });
    }
    let (a, b) = (lo - mu, hi - mu);
    if a >= 0.0 {
        return Ok(-truncated_normal_mean(-mu, -hi, -lo)?);
    }
    if b <= 0.0 {
        // both ends in the lower tail; factor φ(b) out of numerator and mass
        let r = (0.5 * (b * b - a * a)).exp();
        let shift = (r - 1.0) / (mills_ratio(-b) - r * mills_ratio(-a));
        return Ok((mu + shift).clamp(lo, hi));
    }
    let mass = normal_cdf(b) - normal_cdf(a);
    Ok((mu + (normal_pdf(a) - normal_pdf(b)) / mass).clamp(lo, hi))
}

/// Componentwise mean of `N(μ, I)` truncated to the box `[lo, hi]ᵈ`.
pub fn truncated_box_gaussian_mean(mu: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>, DiagnosticsError> {
    mu.iter().map(|&m| truncated_normal_mean(m, lo, hi)).collect()
}

/// Exact `Q* = Σ_j μ_j m(μ_j)` for the box-truncated Gaussian.
pub fn truncated_box_gaussian_q(mu: &[f64], lo: f64, hi: f64) -> Result<f64, DiagnosticsError> {
    Ok(truncated_box_gaussian_mean(mu, lo, hi)?
        .iter()
        .zip(mu)
        .map(|(m, u)| m * u)
        .sum())
}

/// Labelled scalar trace `f(x_n)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSeries {
    pub label: String,
    pub values: Vec<f64>,
}

impl FunctionalSeries {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self, DiagnosticsError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DiagnosticsError::NonFinite(i));
        }
        Ok(Self {
            label: label.into(),
            values,
        })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    pub fn ess(&self) -> Result<f64, DiagnosticsError> {
        ess(&self.values)
    }
}

pub const ESS_MIN_LEN: usize = 100;

/// Effective sample size `N / τ` with `τ = -1 + 2 Σ_m Γ_m`, where
/// `Γ_m = ρ_{2m} + ρ_{2m+1}` are summed while positive (Geyer's initial
/// positive sequence) and made non-increasing (initial monotone sequence).
///
/// `τ` is floored at `1 / log₁₀ N`, so strongly antithetic series report
/// `ESS > N`. A constant series has `ESS = N`.
pub fn ess<T: Real>(series: &[T]) -> Result<f64, DiagnosticsError> {
    let n = series.len();
    if n < ESS_MIN_LEN {
        return Err(DiagnosticsError::TooShort {
            need: ESS_MIN_LEN,
            got: n,
        });
    }
    let xs: Vec<f64> = series.iter().map(|v| v.as_f64()).collect();
    if let Some(i) = xs.iter().position(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFinite(i));
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = xs.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let c0 = autocov(0);
    if !(c0 > f64::EPSILON * f64::EPSILON * mean.abs().max(1.0).powi(2)) {
        return Ok(n as f64);
    }
    let rho = |lag: usize| autocov(lag) / c0;

    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 && lag > 0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        lag += 2;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / (n as f64).log10());
    Ok(n as f64 / tau)
}

/// Across-replicate summary with a normal 95% interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub means: Vec<f64>,
    pub pooled_mean: f64,
    pub std_error: f64,
    pub ci_half_width: f64,
}

pub fn replicate_ci(means: &[f64]) -> Result<ReplicateSummary, DiagnosticsError> {
    let r = means.len();
    if r < 2 {
        return Err(DiagnosticsError::TooShort { need: 2, got: r });
    }
    let pooled = means.iter().sum::<f64>() / r as f64;
    let var = means.iter().map(|m| (m - pooled).powi(2)).sum::<f64>() / (r - 1) as f64;
    let se = (var / r as f64).sqrt();
    Ok(ReplicateSummary {
        means: means.to_vec(),
        pooled_mean: pooled,
        std_error: se,
        ci_half_width: 1.96 * se,
    })
}

//! Replicated experiment drivers: bias of `Q̂` for the truncated-Gaussian
//! targets, and the involution-norm ablation on the square.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::Polytope;
use crate::baselines::{run_imh, run_mala, ImhConfig, MalaConfig, MalaParameterization};
use crate::diagnostics::{
    ess, mu_vector, q_functional, replicate_ci, truncated_box_gaussian_q, DiagnosticsError,
    ReplicateSummary,
};
use crate::hamiltonian::{Gaussian, NormMode, RefreshRate, Uniform};
use crate::integrator::FixedPointPolicy;
use crate::sampler::{run_chain, AdaptConfig, ChainConfig, ChainStats, SamplerError};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("invalid experiment configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Bhmc,
    BhmcNoInvolution,
    Mala,
    Imh,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Bhmc => "bhmc",
            Self::BhmcNoInvolution => "bhmc_no_involution",
            Self::Mala => "mala",
            Self::Imh => "imh",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Hypercube,
    Simplex,
}

impl Shape {
    pub fn polytope(self, d: usize) -> Polytope<f64> {
        match self {
            Self::Hypercube => Polytope::hypercube(d, 0.5),
            Self::Simplex => Polytope::simplex(d),
        }
    }

    /// Centre of mass, the starting point of every chain.
    pub fn center(self, d: usize) -> Vec<f64> {
        match self {
            Self::Hypercube => vec![0.0; d],
            Self::Simplex => vec![1.0 / (d as f64 + 1.0); d],
        }
    }
}

/// Involution tolerance used for the truncated-Gaussian experiments.
/// Dimensions other than 5 and 10 reuse the closest tabulated value.
pub fn default_eta(shape: Shape, d: usize) -> f64 {
    match (shape, d <= 7) {
        (Shape::Hypercube, true) => 5.0,
        (Shape::Hypercube, false) => 10.0,
        (Shape::Simplex, true) => 10.0,
        (Shape::Simplex, false) => 200.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasConfig {
    pub shape: Shape,
    pub d: usize,
    pub replicates: usize,
    pub n_iter: usize,
    pub seed: u64,
    pub beta: f64,
    pub h0: f64,
    pub eta: f64,
    pub max_iters: usize,
    pub fp_tol: f64,
    /// Fixed-point budget of the unchecked ablation.
    pub ablation_max_iters: usize,
    pub adapt: AdaptConfig,
    /// Reference chains run `reference_factor · n_iter` iterations.
    pub reference_factor: usize,
    pub run_reference: bool,
    pub mala_h: f64,
    pub mala_parameterization: MalaParameterization,
    /// Average over whole trajectories instead of dropping the first
    /// `adapt.burn_in` fraction.
    pub keep_burn_in: bool,
    /// Running-mean trace resolution, in iterations.
    pub trace_every: usize,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self::new(Shape::Hypercube, 5)
    }
}

impl BiasConfig {
    pub fn new(shape: Shape, d: usize) -> Self {
        Self {
            shape,
            d,
            replicates: 10,
            n_iter: 100_000,
            seed: 0,
            beta: 1.0,
            h0: 0.1,
            eta: default_eta(shape, d),
            max_iters: 30,
            fp_tol: 1e-10,
            ablation_max_iters: 5,
            adapt: AdaptConfig::default(),
            reference_factor: 10,
            run_reference: true,
            mala_h: 0.05,
            mala_parameterization: MalaParameterization::default(),
            keep_burn_in: false,
            trace_every: 1000,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let err = |m: &str| Err(ExperimentError::Config(m.to_owned()));
        if self.d < 2 {
            return err("dimension must be at least 2");
        }
        if self.replicates < 2 {
            return err("at least 2 replicates are needed for a confidence interval");
        }
        if self.n_iter == 0 || self.trace_every == 0 || self.reference_factor == 0 {
            return err("iteration counts must be positive");
        }
        if RefreshRate::new(self.beta).is_none() {
            return err("refresh rate must lie in (0, 1]");
        }
        if !(self.mala_h > 0.0) {
            return err("MALA step size must be positive");
        }
        if self.shape == Shape::Simplex && !self.run_reference {
            return err("the simplex experiment needs its IMH reference");
        }
        Ok(())
    }

    fn chain_config(&self, kind: SamplerKind, seed: u64) -> ChainConfig<f64> {
        let mut cfg = ChainConfig::new(self.n_iter, self.h0, self.eta, seed);
        cfg.refresh = RefreshRate::new(self.beta).unwrap_or_else(RefreshRate::full);
        cfg.max_iters = self.max_iters;
        cfg.fp_tol = self.fp_tol;
        cfg.adapt = Some(self.adapt);
        if kind == SamplerKind::BhmcNoInvolution {
            cfg = cfg.without_involution();
            cfg.max_iters = self.ablation_max_iters;
        }
        cfg
    }

    fn skip(&self, n: usize) -> usize {
        if self.keep_burn_in {
            0
        } else {
            (self.adapt.burn_in * n as f64).floor() as usize
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iter: usize,
    pub estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub n_iter: usize,
    pub q_mean: f64,
    pub ess: Option<f64>,
    pub acceptance_rate: f64,
    /// Only for the barrier samplers.
    pub chain_stats: Option<ChainStats>,
    pub wall_seconds: f64,
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerReport {
    pub sampler: SamplerKind,
    pub replicates: Vec<ReplicateResult>,
    pub summary: ReplicateSummary,
    /// `Q̂ - Q_ref`.
    pub bias: f64,
    /// `|Q̂ - Q_ref|` in units of the replicate standard error.
    pub bias_in_se: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    ClosedForm,
    Sampler(SamplerKind),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub config: BiasConfig,
    pub mu: Vec<f64>,
    pub reference_q: f64,
    pub reference_source: ReferenceSource,
    /// Closed-form `Q*`, available on the hypercube.
    pub oracle_q: Option<f64>,
    pub samplers: Vec<SamplerReport>,
}

impl BiasReport {
    pub fn sampler(&self, kind: SamplerKind) -> Option<&SamplerReport> {
        self.samplers.iter().find(|s| s.sampler == kind)
    }
}

/// Running mean of `Q` over the kept window, sampled every `every` iterations.
struct QAccumulator<'a> {
    mu: &'a [f64],
    skip: usize,
    every: usize,
    seen: usize,
    sum: f64,
    kept: usize,
    series: Option<Vec<f64>>,
    trace: Vec<TracePoint>,
}

impl<'a> QAccumulator<'a> {
    fn new(mu: &'a [f64], skip: usize, every: usize, keep_series: bool) -> Self {
        Self {
            mu,
            skip,
            every,
            seen: 0,
            sum: 0.0,
            kept: 0,
            series: keep_series.then(Vec::new),
            trace: Vec::new(),
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.seen += 1;
        if self.seen > self.skip {
            let q = q_functional(x, self.mu);
            self.sum += q;
            self.kept += 1;
            if let Some(s) = &mut self.series {
                s.push(q);
            }
        }
        if self.seen % self.every == 0 && self.kept > 0 {
            self.trace.push(TracePoint {
                iter: self.seen,
                estimate: self.sum / self.kept as f64,
            });
        }
    }

    fn mean(&self) -> f64 {
        self.sum / self.kept.max(1) as f64
    }
}

fn run_replicate(
    cfg: &BiasConfig,
    kind: SamplerKind,
    replicate: usize,
    mu: &[f64],
) -> Result<ReplicateResult, ExperimentError> {
    let seed = cfg.seed.wrapping_add(replicate as u64);
    let poly = cfg.shape.polytope(cfg.d);
    let x0 = cfg.shape.center(cfg.d);
    let target = Gaussian::new(mu.to_vec());
    let start = Instant::now();

    let (n_iter, acc, acceptance_rate, chain_stats) = match kind {
        SamplerKind::Bhmc | SamplerKind::BhmcNoInvolution => {
            let chain_cfg = cfg.chain_config(kind, seed);
            let (records, stats) = run_chain(&target, &poly, &chain_cfg, &x0)?;
            let mut acc = QAccumulator::new(mu, cfg.skip(cfg.n_iter), cfg.trace_every, true);
            for r in &records {
                acc.push(&r.x);
            }
            (cfg.n_iter, acc, stats.acceptance_rate, Some(stats))
        }
        SamplerKind::Mala => {
            let n = cfg.n_iter * cfg.reference_factor;
            let mala = MalaConfig {
                h: cfg.mala_h,
                n_iter: n,
                seed,
                parameterization: cfg.mala_parameterization,
            };
            let mut acc = QAccumulator::new(mu, cfg.skip(n), cfg.trace_every, false);
            let rate = run_mala(&target, &poly, &mala, &x0, |x| acc.push(x));
            (n, acc, rate, None)
        }
        SamplerKind::Imh => {
            let n = cfg.n_iter * cfg.reference_factor;
            let imh = ImhConfig { n_iter: n, seed };
            let mut acc = QAccumulator::new(mu, cfg.skip(n), cfg.trace_every, false);
            let rate = run_imh(&target, &imh, &x0, |x| acc.push(x));
            (n, acc, rate, None)
        }
    };
    let ess = match &acc.series {
        Some(s) if s.len() >= crate::diagnostics::ESS_MIN_LEN => Some(ess(s)?),
        _ => None,
    };
    Ok(ReplicateResult {
        replicate,
        seed,
        n_iter,
        q_mean: acc.mean(),
        ess,
        acceptance_rate,
        chain_stats,
        wall_seconds: start.elapsed().as_secs_f64(),
        trace: acc.trace,
    })
}

fn summarize(
    kind: SamplerKind,
    replicates: Vec<ReplicateResult>,
    reference_q: f64,
) -> Result<SamplerReport, ExperimentError> {
    let means: Vec<f64> = replicates.iter().map(|r| r.q_mean).collect();
    let summary = replicate_ci(&means)?;
    let bias = summary.pooled_mean - reference_q;
    let bias_in_se = if summary.std_error > 0.0 {
        bias.abs() / summary.std_error
    } else if bias == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(SamplerReport {
        sampler: kind,
        replicates,
        summary,
        bias,
        bias_in_se,
    })
}

/// Runs n-BHMC, the unchecked ablation and (optionally) the long reference
/// sampler for every replicate, in parallel over `(sampler, replicate)`.
pub fn bias_experiment(cfg: &BiasConfig) -> Result<BiasReport, ExperimentError> {
    cfg.validate()?;
    let mu = mu_vector(cfg.d)?;
    let reference_kind = match cfg.shape {
        Shape::Hypercube => SamplerKind::Mala,
        Shape::Simplex => SamplerKind::Imh,
    };
    let mut kinds = vec![SamplerKind::Bhmc, SamplerKind::BhmcNoInvolution];
    if cfg.run_reference {
        kinds.push(reference_kind);
    }
    let jobs: Vec<(SamplerKind, usize)> = kinds
        .iter()
        .flat_map(|&k| (0..cfg.replicates).map(move |r| (k, r)))
        .collect();
    let results: Vec<ReplicateResult> = jobs
        .par_iter()
        .map(|&(k, r)| run_replicate(cfg, k, r, &mu))
        .collect::<Result<_, _>>()?;

    let oracle_q = match cfg.shape {
        Shape::Hypercube => Some(truncated_box_gaussian_q(&mu, -0.5, 0.5)?),
        Shape::Simplex => None,
    };
    let mut grouped: Vec<(SamplerKind, Vec<ReplicateResult>)> = kinds
        .iter()
        .map(|&k| (k, Vec::with_capacity(cfg.replicates)))
        .collect();
    for ((k, _), res) in jobs.iter().zip(results) {
        if let Some(group) = grouped.iter_mut().find(|(g, _)| g == k) {
            group.1.push(res);
        }
    }

    let (reference_q, reference_source) = match oracle_q {
        Some(q) => (q, ReferenceSource::ClosedForm),
        None => {
            let (_, reps) = grouped
                .iter()
                .find(|(k, _)| *k == reference_kind)
                .ok_or_else(|| ExperimentError::Config("missing reference runs".into()))?;
            let mean = reps.iter().map(|r| r.q_mean).sum::<f64>() / reps.len() as f64;
            (mean, ReferenceSource::Sampler(reference_kind))
        }
    };
    let samplers = grouped
        .into_iter()
        .map(|(k, reps)| summarize(k, reps, reference_q))
        .collect::<Result<_, _>>()?;
    Ok(BiasReport {
        config: cfg.clone(),
        mu,
        reference_q,
        reference_source,
        oracle_q,
        samplers,
    })
}

/// One row of the running-mean trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub replicate: usize,
    pub sampler: SamplerKind,
    pub estimate: f64,
}

pub fn trace_rows(report: &BiasReport) -> Vec<TraceRow> {
    report
        .samplers
        .iter()
        .flat_map(|s| {
            s.replicates.iter().flat_map(move |r| {
                r.trace.iter().map(move |t| TraceRow {
                    iter: t.iter,
                    replicate: r.replicate,
                    sampler: s.sampler,
                    estimate: t.estimate,
                })
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormAblationConfig {
    pub half_width: f64,
    pub n_iter: usize,
    pub h: f64,
    pub eta: f64,
    pub max_iters: usize,
    /// Fixed-point tolerance. Round-trip errors are of this order, so it
    /// has to be comparable to `eta` for the norm to matter at all.
    pub fp_tol: f64,
    pub fixed_point: FixedPointPolicy,
    pub seed: u64,
}

impl Default for NormAblationConfig {
    fn default() -> Self {
        Self {
            half_width: 1.0,
            n_iter: 25_000,
            h: 0.8,
            eta: 1e-3,
            max_iters: 30,
            fp_tol: 1e-4,
            fixed_point: FixedPointPolicy::Converge,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormAblationRow {
    pub mode: NormMode,
    pub iter: usize,
    pub x: [f64; 2],
    pub accepted: bool,
    pub involution_rejected: bool,
    pub dom_failed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormModeSummary {
    pub mode: NormMode,
    pub stats: ChainStats,
    pub involution_rejections: usize,
    /// Mean `‖x‖∞` over accepted iterations.
    pub mean_inf_norm_accepted: f64,
    /// Mean `‖x‖∞` over involution-rejected iterations.
    pub mean_inf_norm_rejected: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormAblationReport {
    pub config: NormAblationConfig,
    pub modes: Vec<NormModeSummary>,
    #[serde(skip)]
    pub rows: Vec<NormAblationRow>,
}

impl NormAblationReport {
    pub fn mode(&self, mode: NormMode) -> Option<&NormModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Uniform target on `[-w, w]²` with fixed `(h, η)`, once per norm mode and
/// with the same seed.
pub fn norm_ablation(cfg: &NormAblationConfig) -> Result<NormAblationReport, ExperimentError> {
    if !(cfg.half_width > 0.0) {
        return Err(ExperimentError::Config("half width must be positive".into()));
    }
    let poly = Polytope::hypercube(2, cfg.half_width);
    let modes = [NormMode::SelfConcordant, NormMode::Euclidean];
    let runs: Vec<_> = modes
        .par_iter()
        .map(|&mode| {
            let mut chain = ChainConfig::new(cfg.n_iter, cfg.h, cfg.eta, cfg.seed);
            chain.norm_mode = mode;
            chain.max_iters = cfg.max_iters;
            chain.fp_tol = cfg.fp_tol;
            chain.fixed_point = cfg.fixed_point;
            run_chain(&Uniform, &poly, &chain, &[0.0, 0.0]).map(|r| (mode, r))
        })
        .collect::<Result<_, _>>()?;

    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    for (mode, (records, stats)) in runs {
        let (mut acc_sum, mut acc_n, mut rej_sum, mut rej_n) = (0.0, 0usize, 0.0, 0usize);
        for (i, r) in records.iter().enumerate() {
            if r.accepted {
                acc_sum += inf_norm(&r.x);
                acc_n += 1;
            } else if r.involution_rejected {
                rej_sum += inf_norm(&r.x);
                rej_n += 1;
            }
            rows.push(NormAblationRow {
                mode,
                iter: i + 1,
                x: [r.x[0], r.x[1]],
                accepted: r.accepted,
                involution_rejected: r.involution_rejected,
                dom_failed: r.dom_failed,
            });
        }
        let mean = |s: f64, n: usize| if n > 0 { s / n as f64 } else { f64::NAN };
        summaries.push(NormModeSummary {
            mode,
            stats,
            involution_rejections: rej_n,
            mean_inf_norm_accepted: mean(acc_sum, acc_n),
            mean_inf_norm_rejected: mean(rej_sum, rej_n),
        });
    }
    Ok(NormAblationReport {
        config: cfg.clone(),
        modes: summaries,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(shape: Shape) -> BiasConfig {
        BiasConfig {
            replicates: 2,
            n_iter: 400,
            reference_factor: 2,
            trace_every: 100,
            ..BiasConfig::new(shape, 3)
        }
    }

    #[test]
    fn eta_defaults() {
        assert_eq!(default_eta(Shape::Hypercube, 5), 5.0);
        assert_eq!(default_eta(Shape::Hypercube, 10), 10.0);
        assert_eq!(default_eta(Shape::Simplex, 5), 10.0);
        assert_eq!(default_eta(Shape::Simplex, 10), 200.0);
    }

    #[test]
    fn hypercube_report_uses_closed_form() {
        let report = bias_experiment(&small(Shape::Hypercube)).unwrap();
        let mu = mu_vector(3).unwrap();
        assert_eq!(report.oracle_q, Some(truncated_box_gaussian_q(&mu, -0.5, 0.5).unwrap()));
        assert_eq!(report.reference_source, ReferenceSource::ClosedForm);
        assert_eq!(report.samplers.len(), 3);
        let mala = report.sampler(SamplerKind::Mala).unwrap();
        assert_eq!(mala.replicates[0].n_iter, 800);
        let rows = trace_rows(&report);
        // the first reference row falls inside its 160-iteration burn-in
        assert_eq!(rows.len(), 2 * (4 + 4 + 7));
    }

    #[test]
    fn simplex_reference_is_imh() {
        let report = bias_experiment(&small(Shape::Simplex)).unwrap();
        assert_eq!(report.oracle_q, None);
        assert_eq!(report.reference_source, ReferenceSource::Sampler(SamplerKind::Imh));
        let imh = report.sampler(SamplerKind::Imh).unwrap();
        assert_eq!(imh.bias, imh.summary.pooled_mean - report.reference_q);
        assert!(imh.bias.abs() < 1e-12);
    }

    #[test]
    fn replicates_match_serial_runs() {
        let cfg = small(Shape::Hypercube);
        let report = bias_experiment(&cfg).unwrap();
        let mu = mu_vector(3).unwrap();
        let serial = run_replicate(&cfg, SamplerKind::Bhmc, 1, &mu).unwrap();
        let par = &report.sampler(SamplerKind::Bhmc).unwrap().replicates[1];
        assert_eq!(serial.q_mean, par.q_mean);
        assert_eq!(serial.trace, par.trace);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = small(Shape::Hypercube);
        cfg.replicates = 1;
        assert!(bias_experiment(&cfg).is_err());
        let mut cfg = small(Shape::Simplex);
        cfg.run_reference = false;
        assert!(bias_experiment(&cfg).is_err());
    }

    #[test]
    fn norm_ablation_rows_cover_both_modes() {
        let cfg = NormAblationConfig {
            n_iter: 300,
            ..Default::default()
        };
        let report = norm_ablation(&cfg).unwrap();
        assert_eq!(report.rows.len(), 600);
        for m in &report.modes {
            assert_eq!(m.stats.n_samples, 300);
        }
        assert!(report.mode(NormMode::Euclidean).is_some());
    }
}

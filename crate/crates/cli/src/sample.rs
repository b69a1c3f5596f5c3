//! `bhmc sample`: independent replicate chains of one sampler.

use std::path::Path;
use std::time::Instant;

use bhmc::baselines::{run_imh, run_mala, ImhConfig, MalaConfig};
use bhmc::barrier::Polytope;
use bhmc::diagnostics::{ess, q_functional, replicate_ci, ReplicateSummary};
use bhmc::experiments::SamplerKind;
use bhmc::hamiltonian::{Gaussian, RefreshRate, TargetPotential, Uniform};
use bhmc::sampler::{run_chain, ChainConfig, ChainStats};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::SampleConfig;
use crate::error::CliError;
use crate::output::{ensure_dir, fmt_f64, write_json, CsvOut, Meta};

enum AnyTarget {
    Uniform(Uniform),
    Gaussian(Gaussian<f64>),
}

impl TargetPotential<f64> for AnyTarget {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Uniform(t) => t.value(x),
            Self::Gaussian(t) => t.value(x),
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Uniform(t) => t.gradient(x),
            Self::Gaussian(t) => t.gradient(x),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ReplicateStats {
    pub replicate: usize,
    pub seed: u64,
    pub n_samples: usize,
    pub acceptance_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub involution_rejection_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dom_failure_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_h: Option<f64>,
    pub mean_x: Vec<f64>,
    pub functional_mean: f64,
    /// `None` when the kept window is too short.
    pub ess: Option<f64>,
}

struct ReplicateRun {
    samples: Vec<Vec<f64>>,
    stats: ReplicateStats,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub functional: ReplicateSummary,
    pub mean_x: Vec<ReplicateSummary>,
}

#[derive(Debug, Serialize)]
pub struct SampleStats {
    pub sampler: SamplerKind,
    /// `q` is `⟨x, mean⟩` for Gaussian targets, `x_1` otherwise.
    pub functional: &'static str,
    pub replicates: Vec<ReplicateStats>,
    /// Needs at least two replicates.
    pub summary: Option<Summary>,
}

fn chain_config(cfg: &SampleConfig, seed: u64) -> Result<ChainConfig<f64>, CliError> {
    let mut c = ChainConfig::new(cfg.n_iter, cfg.h0, cfg.eta.unwrap_or(10.0), seed);
    c.refresh = RefreshRate::new(cfg.beta)
        .ok_or_else(|| CliError::Config("beta must lie in (0, 1]".into()))?;
    c.max_iters = cfg.max_iters;
    c.fp_tol = cfg.fp_tol;
    c.blow_up = cfg.blow_up;
    c.fixed_point = cfg.fixed_point.unwrap_or_default();
    c.norm_mode = cfg.norm_mode;
    c.adapt = cfg.adapt;
    c.involution = cfg.sampler != SamplerKind::BhmcNoInvolution;
    c.validate()?;
    Ok(c)
}

fn run_replicate(
    cfg: &SampleConfig,
    poly: &Polytope<f64>,
    target: &AnyTarget,
    replicate: usize,
) -> Result<ReplicateRun, CliError> {
    let seed = cfg.seed.wrapping_add(replicate as u64);
    let x0 = cfg.x_init.clone().expect("resolved config has x_init");
    let burn_in = match (cfg.keep_burn_in, cfg.adapt) {
        (false, Some(a)) => (a.burn_in * cfg.n_iter as f64).floor() as usize,
        _ => 0,
    };
    let mut samples = Vec::with_capacity(cfg.n_iter);
    let (acceptance_rate, chain_stats) = match cfg.sampler {
        SamplerKind::Bhmc | SamplerKind::BhmcNoInvolution => {
            let (records, _) = run_chain(target, poly, &chain_config(cfg, seed)?, &x0)?;
            let stats = ChainStats::from_records(&records, burn_in);
            samples.extend(records.into_iter().map(|r| r.x));
            (stats.acceptance_rate, Some(stats))
        }
        SamplerKind::Mala => {
            if !poly.contains(&x0) {
                return Err(CliError::Config("x_init is not inside the polytope".into()));
            }
            let mc = MalaConfig {
                h: cfg.mala_h,
                n_iter: cfg.n_iter,
                seed,
                parameterization: cfg.mala_parameterization,
            };
            (run_mala(target, poly, &mc, &x0, |x| samples.push(x.to_vec())), None)
        }
        SamplerKind::Imh => {
            if !poly.contains(&x0) {
                return Err(CliError::Config("x_init is not inside the polytope".into()));
            }
            let ic = ImhConfig { n_iter: cfg.n_iter, seed };
            (run_imh(target, &ic, &x0, |x| samples.push(x.to_vec())), None)
        }
    };

    let kept = if burn_in < samples.len() { &samples[burn_in..] } else { &samples[..] };
    let series: Vec<f64> = match &cfg.mean {
        Some(mu) => kept.iter().map(|x| q_functional(x, mu)).collect(),
        None => kept.iter().map(|x| x[0]).collect(),
    };
    let d = x0.len();
    let mut mean_x = vec![0.0; d];
    for x in kept {
        mean_x.iter_mut().zip(x).for_each(|(m, v)| *m += v);
    }
    mean_x.iter_mut().for_each(|m| *m /= kept.len() as f64);
    let with_flow = cfg.sampler == SamplerKind::Bhmc;
    let stats = ReplicateStats {
        replicate,
        seed,
        n_samples: kept.len(),
        acceptance_rate,
        involution_rejection_rate: chain_stats
            .as_ref()
            .filter(|_| with_flow)
            .map(|s| s.involution_rejection_rate),
        dom_failure_rate: chain_stats.as_ref().map(|s| s.dom_failure_rate),
        final_h: chain_stats.as_ref().map(|s| s.final_h),
        mean_x,
        functional_mean: series.iter().sum::<f64>() / series.len() as f64,
        ess: ess(&series).ok(),
    };
    Ok(ReplicateRun { samples, stats })
}

pub fn run(cfg: &mut SampleConfig, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let poly = cfg.load_polytope()?;
    cfg.resolve(&poly)?;
    let cfg = &*cfg;
    let target = match &cfg.mean {
        Some(mu) => AnyTarget::Gaussian(Gaussian::new(mu.clone())),
        None => AnyTarget::Uniform(Uniform),
    };
    let runs: Vec<ReplicateRun> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, &poly, &target, r))
        .collect::<Result<_, _>>()?;

    ensure_dir(out)?;
    let d = poly.dim();
    let header: Vec<String> = ["replicate", "iter"]
        .into_iter()
        .map(String::from)
        .chain((1..=d).map(|i| format!("x_{i}")))
        .collect();
    let mut csv = CsvOut::create(out.join("samples.csv"), &header)?;
    for run in &runs {
        let rep = run.stats.replicate.to_string();
        for (i, x) in run.samples.iter().enumerate() {
            let mut row = Vec::with_capacity(d + 2);
            row.push(rep.clone());
            row.push((i + 1).to_string());
            row.extend(x.iter().map(|&v| fmt_f64(v)));
            csv.row(&row)?;
        }
    }
    csv.finish()?;

    let replicates: Vec<ReplicateStats> = runs.into_iter().map(|r| r.stats).collect();
    let summary = if replicates.len() >= 2 {
        let f: Vec<f64> = replicates.iter().map(|r| r.functional_mean).collect();
        let mean_x = (0..d)
            .map(|j| {
                let m: Vec<f64> = replicates.iter().map(|r| r.mean_x[j]).collect();
                replicate_ci(&m)
            })
            .collect::<Result<_, _>>()?;
        Some(Summary { functional: replicate_ci(&f)?, mean_x })
    } else {
        None
    };
    let stats = SampleStats {
        sampler: cfg.sampler,
        functional: if cfg.mean.is_some() { "q" } else { "x_1" },
        replicates,
        summary,
    };
    write_json(&out.join("stats.json"), &stats)?;
    write_json(
        &out.join("meta.json"),
        &Meta::new("sample", cfg, started.elapsed().as_secs_f64()),
    )?;

    println!("sampler {}  replicates {}  n_iter {}", cfg.sampler.name(), cfg.replicates, cfg.n_iter);
    for r in &stats.replicates {
        println!(
            "  replicate {:>3}  acceptance {:.3}  {} {:.6}  ess {}",
            r.replicate,
            r.acceptance_rate,
            stats.functional,
            r.functional_mean,
            r.ess.map_or("-".into(), |e| format!("{e:.1}"))
        );
    }
    if let Some(s) = &stats.summary {
        println!(
            "  pooled {} {:.6} ± {:.6} (95% CI half-width)",
            stats.functional, s.functional.pooled_mean, s.functional.ci_half_width
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

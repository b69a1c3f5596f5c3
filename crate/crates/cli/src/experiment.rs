//! `bhmc experiment`: the bias studies and the involution-norm ablation.

use std::path::Path;
use std::time::Instant;

use bhmc::experiments::{
    bias_experiment, norm_ablation, trace_rows, BiasConfig, BiasReport, NormAblationConfig, Shape,
};
use bhmc::hamiltonian::NormMode;
use clap::ValueEnum;
use serde_json::Value;

use crate::config::resolve_with;
use crate::error::CliError;
use crate::output::{ensure_dir, fmt_f64, write_json, CsvOut, Meta};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ExperimentName {
    HypercubeBias,
    SimplexBias,
    NormAblation,
}

impl ExperimentName {
    fn label(self) -> &'static str {
        match self {
            Self::HypercubeBias => "hypercube_bias",
            Self::SimplexBias => "simplex_bias",
            Self::NormAblation => "norm_ablation",
        }
    }
}

pub fn run(
    name: ExperimentName,
    d: Option<usize>,
    seed: Option<u64>,
    layer: &Value,
    out: &Path,
) -> Result<(), CliError> {
    match name {
        ExperimentName::HypercubeBias => bias(name, Shape::Hypercube, d, seed, layer, out),
        ExperimentName::SimplexBias => bias(name, Shape::Simplex, d, seed, layer, out),
        ExperimentName::NormAblation => {
            if d.is_some_and(|d| d != 2) {
                return Err(CliError::Config("the norm ablation runs on the square only".into()));
            }
            ablation(seed, layer, out)
        }
    }
}

fn bias(
    name: ExperimentName,
    shape: Shape,
    d: Option<usize>,
    seed: Option<u64>,
    layer: &Value,
    out: &Path,
) -> Result<(), CliError> {
    let started = Instant::now();
    let layer_d = match layer.get("d") {
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| CliError::Config("d must be a positive integer".into()))?
                as usize,
        ),
        None => None,
    };
    // Defaults depend on the dimension, so it is read before merging.
    let dim = d.or(layer_d).unwrap_or(5);
    let mut cfg: BiasConfig = resolve_with(&BiasConfig::new(shape, dim), layer)?;
    if cfg.shape != shape {
        return Err(CliError::Config(format!("{} fixes shape", name.label())));
    }
    cfg.d = dim;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = bias_experiment(&cfg)?;

    ensure_dir(out)?;
    let header: Vec<String> =
        ["iter", "replicate", "sampler", "estimate"].map(String::from).to_vec();
    let mut csv = CsvOut::create(out.join("trace.csv"), &header)?;
    for r in trace_rows(&report) {
        csv.row([
            r.iter.to_string(),
            r.replicate.to_string(),
            r.sampler.name().to_string(),
            fmt_f64(r.estimate),
        ])?;
    }
    csv.finish()?;

    let header: Vec<String> = [
        "sampler",
        "pooled_q",
        "std_error",
        "ci_half_width",
        "reference_q",
        "bias",
        "bias_in_se",
        "mean_acceptance",
        "mean_ess",
    ]
    .map(String::from)
    .to_vec();
    let mut csv = CsvOut::create(out.join("summary.csv"), &header)?;
    for row in summary_rows(&report) {
        csv.row(row.iter().map(String::as_str))?;
    }
    csv.finish()?;
    write_json(&out.join("stats.json"), &report)?;
    write_json(
        &out.join("meta.json"),
        &Meta::new(name.label(), &cfg, started.elapsed().as_secs_f64()),
    )?;

    println!(
        "{} d={} replicates={} n_iter={} reference Q={:.6} ({:?})",
        name.label(),
        cfg.d,
        cfg.replicates,
        cfg.n_iter,
        report.reference_q,
        report.reference_source
    );
    println!(
        "{:<20} {:>12} {:>10} {:>10} {:>10} {:>8} {:>8} {:>10}",
        "sampler", "pooled_q", "se", "ci_half", "bias", "bias/se", "accept", "ess"
    );
    for s in &report.samplers {
        let (acc, ess) = means(s);
        println!(
            "{:<20} {:>12.6} {:>10.6} {:>10.6} {:>10.6} {:>8.2} {:>8.3} {:>10.1}",
            s.sampler.name(),
            s.summary.pooled_mean,
            s.summary.std_error,
            s.summary.ci_half_width,
            s.bias,
            s.bias_in_se,
            acc,
            ess
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Mean acceptance and mean ESS over replicates; ESS is NaN if unavailable.
fn means(s: &bhmc::experiments::SamplerReport) -> (f64, f64) {
    let n = s.replicates.len() as f64;
    let acc = s.replicates.iter().map(|r| r.acceptance_rate).sum::<f64>() / n;
    let ess: Option<f64> = s.replicates.iter().map(|r| r.ess).sum();
    (acc, ess.map_or(f64::NAN, |e| e / n))
}

fn summary_rows(report: &BiasReport) -> Vec<Vec<String>> {
    report
        .samplers
        .iter()
        .map(|s| {
            let (acc, ess) = means(s);
            vec![
                s.sampler.name().to_string(),
                fmt_f64(s.summary.pooled_mean),
                fmt_f64(s.summary.std_error),
                fmt_f64(s.summary.ci_half_width),
                fmt_f64(report.reference_q),
                fmt_f64(s.bias),
                fmt_f64(s.bias_in_se),
                fmt_f64(acc),
                fmt_f64(ess),
            ]
        })
        .collect()
}

fn mode_name(m: NormMode) -> &'static str {
    match m {
        NormMode::SelfConcordant => "self_concordant",
        NormMode::Euclidean => "euclidean",
    }
}

fn ablation(seed: Option<u64>, layer: &Value, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg: NormAblationConfig = resolve_with(&NormAblationConfig::default(), layer)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = norm_ablation(&cfg)?;

    ensure_dir(out)?;
    let header: Vec<String> =
        ["mode", "iter", "x_1", "x_2", "accepted", "involution_rejected", "dom_failed"]
            .map(String::from)
            .to_vec();
    let mut csv = CsvOut::create(out.join("trace.csv"), &header)?;
    for r in &report.rows {
        csv.row([
            mode_name(r.mode).to_string(),
            r.iter.to_string(),
            fmt_f64(r.x[0]),
            fmt_f64(r.x[1]),
            r.accepted.to_string(),
            r.involution_rejected.to_string(),
            r.dom_failed.to_string(),
        ])?;
    }
    csv.finish()?;
    write_json(&out.join("stats.json"), &report)?;
    write_json(
        &out.join("meta.json"),
        &Meta::new("norm_ablation", &cfg, started.elapsed().as_secs_f64()),
    )?;

    println!(
        "norm_ablation n_iter={} h={} eta={} fp_tol={}",
        cfg.n_iter, cfg.h, cfg.eta, cfg.fp_tol
    );
    println!(
        "{:<16} {:>8} {:>12} {:>14} {:>14}",
        "mode", "accept", "inv_reject", "|x|inf accept", "|x|inf reject"
    );
    for m in &report.modes {
        println!(
            "{:<16} {:>8.3} {:>12.4} {:>14.4} {:>14.4}",
            mode_name(m.mode),
            m.stats.acceptance_rate,
            m.stats.involution_rejection_rate,
            m.mean_inf_norm_accepted,
            m.mean_inf_norm_rejected
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

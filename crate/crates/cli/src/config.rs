//! JSON configuration with `--set key.path=value` overrides.

use std::path::Path;

use bhmc::baselines::MalaParameterization;
use bhmc::barrier::{Polytope, PolytopeKind};
use bhmc::experiments::{default_eta, SamplerKind, Shape};
use bhmc::hamiltonian::NormMode;
use bhmc::integrator::FixedPointPolicy;
use bhmc::sampler::AdaptConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Uniform,
    /// Unit-variance Gaussian with mean `mean`.
    Gaussian,
    /// Unit-variance Gaussian with the experiment mean vector.
    ExperimentMu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub sampler: SamplerKind,
    /// `hypercube`, `simplex`, or the path of a polytope JSON file.
    pub polytope: String,
    /// Dimension of preset polytopes.
    pub d: usize,
    pub half_width: f64,
    pub target: TargetKind,
    pub mean: Option<Vec<f64>>,
    pub replicates: usize,
    pub n_iter: usize,
    pub seed: u64,
    pub beta: f64,
    pub h0: f64,
    /// Defaults to the tabulated value for presets and 10 otherwise.
    pub eta: Option<f64>,
    pub max_iters: usize,
    pub fp_tol: f64,
    pub blow_up: f64,
    /// Defaults to `converge`, or `truncate` for the unchecked ablation.
    pub fixed_point: Option<FixedPointPolicy>,
    pub norm_mode: NormMode,
    pub adapt: Option<AdaptConfig>,
    pub keep_burn_in: bool,
    /// Defaults to the centre of the polytope.
    pub x_init: Option<Vec<f64>>,
    pub mala_h: f64,
    pub mala_parameterization: MalaParameterization,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerKind::Bhmc,
            polytope: "hypercube".into(),
            d: 5,
            half_width: 0.5,
            target: TargetKind::Uniform,
            mean: None,
            replicates: 10,
            n_iter: 100_000,
            seed: 0,
            beta: 1.0,
            h0: 0.1,
            eta: None,
            max_iters: 30,
            fp_tol: 1e-10,
            blow_up: 1e6,
            fixed_point: None,
            norm_mode: NormMode::SelfConcordant,
            adapt: Some(AdaptConfig::default()),
            keep_burn_in: false,
            x_init: None,
            mala_h: 0.05,
            mala_parameterization: MalaParameterization::default(),
        }
    }
}

impl SampleConfig {
    pub fn load_polytope(&self) -> Result<Polytope<f64>, CliError> {
        match self.polytope.as_str() {
            "hypercube" => {
                if self.d == 0 || !(self.half_width > 0.0) {
                    return Err(CliError::Config("hypercube needs d >= 1 and half_width > 0".into()));
                }
                Ok(Polytope::hypercube(self.d, self.half_width))
            }
            "simplex" => {
                if self.d == 0 {
                    return Err(CliError::Config("simplex needs d >= 1".into()));
                }
                Ok(Polytope::simplex(self.d))
            }
            path => {
                if !Path::new(path).exists() {
                    return Err(CliError::Config(format!("polytope file {path} does not exist")));
                }
                Ok(Polytope::from_json_file(path)?)
            }
        }
    }

    /// Fills every defaulted field so the written config replays exactly.
    pub fn resolve(&mut self, poly: &Polytope<f64>) -> Result<(), CliError> {
        let d = poly.dim();
        self.d = d;
        if self.replicates == 0 {
            return Err(CliError::Config("replicates must be at least 1".into()));
        }
        if self.eta.is_none() {
            self.eta = Some(match poly.kind() {
                PolytopeKind::Hypercube { .. } => default_eta(Shape::Hypercube, d),
                PolytopeKind::Simplex => default_eta(Shape::Simplex, d),
                PolytopeKind::General => 10.0,
            });
        }
        if self.fixed_point.is_none() {
            self.fixed_point = Some(match self.sampler {
                SamplerKind::BhmcNoInvolution => FixedPointPolicy::Truncate,
                _ => FixedPointPolicy::Converge,
            });
        }
        match self.target {
            TargetKind::Gaussian => match &self.mean {
                Some(m) if m.len() == d => {}
                Some(m) => {
                    return Err(CliError::Config(format!(
                        "target mean has length {}, polytope dimension is {d}",
                        m.len()
                    )))
                }
                None => return Err(CliError::Config("gaussian target needs `mean`".into())),
            },
            TargetKind::ExperimentMu => self.mean = Some(bhmc::diagnostics::mu_vector(d)?),
            TargetKind::Uniform => self.mean = None,
        }
        if self.x_init.is_none() {
            self.x_init = Some(poly.analytic_center()?);
        }
        if self.sampler == SamplerKind::Imh && !matches!(poly.kind(), PolytopeKind::Simplex) {
            return Err(CliError::Config("imh proposes from the simplex; use polytope=simplex".into()));
        }
        Ok(())
    }
}

/// Recursively overlays `patch` on `base`; objects merge, anything else replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `key.path=value`. The value is parsed as JSON and falls back to
/// a plain string.
pub fn apply_set(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad key {key:?}")));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        cur = cur
            .as_object_mut()
            .expect("just made an object")
            .entry(part.to_string())
            .or_insert(Value::Null);
    }
    if !cur.is_object() {
        *cur = Value::Object(Map::new());
    }
    cur.as_object_mut()
        .expect("just made an object")
        .insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

/// User-supplied layers: the config file, then each `--set` in order.
pub fn user_layers(path: Option<&Path>, sets: &[String]) -> Result<Value, CliError> {
    let mut layer = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(CliError::io(p))?;
            serde_json::from_str(&text).map_err(CliError::json(p.display().to_string()))?
        }
        None => Value::Object(Map::new()),
    };
    if !layer.is_object() {
        return Err(CliError::Config("config file must hold a JSON object".into()));
    }
    for s in sets {
        apply_set(&mut layer, s)?;
    }
    Ok(layer)
}

/// Overlays `layer` on the serialized `defaults` and deserializes.
pub fn resolve_with<T: Serialize + DeserializeOwned>(defaults: &T, layer: &Value) -> Result<T, CliError> {
    let mut v = serde_json::to_value(defaults).map_err(CliError::json("defaults"))?;
    merge(&mut v, layer.clone());
    serde_json::from_value(v).map_err(CliError::json("config"))
}

//! Configuration files and flag/file/default resolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CliError, GlobalArgs};
use crate::cascade::Horizon;
use crate::fitting::{is_probability, param_names, FitConfig};
use crate::models::{CdSeizParams, ModelKind, ModelParams, SeizParams};

/// Contents of a `--config` TOML file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub fit: FitSection,
    pub build: BuildSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub substeps: Option<usize>,
    pub starts: Option<usize>,
    pub max_evals: Option<usize>,
    pub rate_cap: Option<f64>,
    pub n_upper_factor: Option<f64>,
    pub xtol: Option<f64>,
    pub ftol: Option<f64>,
    pub min_points: Option<usize>,
    pub bounds_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSection {
    pub strict: Option<bool>,
    pub min_size: Option<usize>,
    pub top_k: Option<usize>,
    pub horizon: Option<toml::Value>,
    pub bundle: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub model: Option<String>,
    pub n: Option<usize>,
    pub horizon: Option<u32>,
    pub agents: Option<u64>,
    pub i0: Option<Vec<u64>>,
    pub jitter: Option<f64>,
    /// Model parameters; `p` and `l` are arrays for CD-SEIZ.
    pub params: Option<toml::Table>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::input(format!("invalid config {}: {e}", path.display())))
    }
}

/// Fitting settings after precedence resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSettings {
    pub seed: u64,
    pub substeps: usize,
    pub starts: usize,
    pub max_evals: usize,
    pub rate_cap: f64,
    pub n_upper_factor: f64,
    pub xtol: f64,
    pub ftol: f64,
    pub min_points: usize,
    /// Explicit per-model bounds, keyed by model name.
    pub bounds: BTreeMap<String, Vec<[f64; 2]>>,
}

impl FitSettings {
    pub fn resolve(global: &GlobalArgs, file: &FileConfig) -> Result<Self, CliError> {
        let d = FitConfig::default();
        let f = &file.fit;
        let mut s = FitSettings {
            seed: global.seed.or(file.seed).unwrap_or(d.seed),
            substeps: global.substeps.or(f.substeps).unwrap_or(d.substeps),
            starts: global.starts.or(f.starts).unwrap_or(d.n_starts),
            max_evals: global.max_evals.or(f.max_evals).unwrap_or(d.max_evals),
            rate_cap: f.rate_cap.unwrap_or(d.rate_cap),
            n_upper_factor: f.n_upper_factor.unwrap_or(d.n_upper_factor),
            xtol: f.xtol.unwrap_or(d.xtol),
            ftol: f.ftol.unwrap_or(d.ftol),
            min_points: f.min_points.unwrap_or(d.min_points),
            bounds: BTreeMap::new(),
        };
        if let Some(path) = global.bounds_file.as_ref().or(f.bounds_file.as_ref()) {
            s.bounds = load_bounds(path, s.rate_cap)?;
        }
        for kind in ModelKind::ALL {
            s.fit_config(kind).validate()?;
        }
        Ok(s)
    }

    pub fn fit_config(&self, model: ModelKind) -> FitConfig {
        FitConfig {
            model,
            rate_cap: self.rate_cap,
            param_bounds: self.bounds.get(model.as_str()).cloned(),
            n_upper_factor: self.n_upper_factor,
            n_starts: self.starts,
            max_evals: self.max_evals,
            xtol: self.xtol,
            ftol: self.ftol,
            seed: self.seed,
            substeps: self.substeps,
            min_points: self.min_points,
        }
    }
}

/// Read a bounds file. Parameters a model section leaves out keep their
/// default range.
fn load_bounds(path: &Path, rate_cap: f64) -> Result<BTreeMap<String, Vec<[f64; 2]>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read bounds file {}: {e}", path.display())))?;
    let raw: BTreeMap<String, BTreeMap<String, [f64; 2]>> = serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("invalid bounds file {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (model, entries) in raw {
        let kind: ModelKind = model.parse().map_err(|e| CliError::input(format!("bounds file: {e}")))?;
        let names = &param_names(kind)[..kind.n_params()];
        for name in entries.keys() {
            if !names.contains(&name.as_str()) {
                return Err(CliError::input(format!("bounds file: {kind} has no parameter {name:?}")));
            }
        }
        let full = names
            .iter()
            .map(|name| match entries.get(*name) {
                Some(b) => *b,
                None if is_probability(name) => [0.0, 1.0],
                None => [0.0, rate_cap],
            })
            .collect();
        out.insert(kind.as_str().to_string(), full);
    }
    Ok(out)
}

/// Cascade-building settings after precedence resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildSettings {
    pub strict: bool,
    pub min_size: usize,
    pub top_k: usize,
    pub horizon: String,
    pub bundle: bool,
}

impl BuildSettings {
    pub fn resolve(args: &super::BuildArgs, file: &FileConfig) -> Result<(Self, Horizon), CliError> {
        let b = &file.build;
        let file_horizon = match &b.horizon {
            None => None,
            Some(toml::Value::String(s)) => Some(s.clone()),
            Some(toml::Value::Integer(h)) => Some(h.to_string()),
            Some(other) => return Err(CliError::input(format!("invalid build.horizon {other}"))),
        };
        let s = BuildSettings {
            strict: args.strict || b.strict.unwrap_or(false),
            min_size: args.min_size.or(b.min_size).unwrap_or(0),
            top_k: args.top_k.or(b.top_k).unwrap_or(usize::MAX),
            horizon: args.horizon.clone().or(file_horizon).unwrap_or_else(|| "auto".into()),
            bundle: args.bundle || b.bundle.unwrap_or(false),
        };
        let horizon = s.horizon.parse::<Horizon>().map_err(|e| CliError::input(e.to_string()))?;
        Ok((s, horizon))
    }
}

/// Synthetic-data settings after precedence resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSettings {
    pub seed: u64,
    pub n: usize,
    pub horizon: u32,
    pub agents: u64,
    pub i0: Vec<u64>,
    pub jitter: f64,
    pub params: ModelParams,
}

/// Parameters used when neither flags nor a config file supply them.
pub fn default_synth_params(kind: ModelKind) -> ModelParams {
    match kind {
        ModelKind::CdSeiz => ModelParams::CdSeiz(CdSeizParams {
            beta: 0.6,
            b: 0.2,
            rho: 0.1,
            epsilon: 0.1,
            p: [0.9, 0.3, 0.05],
            l: [0.5; 3],
        }),
        _ => ModelParams::Seiz(SeizParams { beta: 0.6, b: 0.2, rho: 0.1, epsilon: 0.1, p: 0.6, l: 0.5 }),
    }
}

fn default_i0(kind: ModelKind) -> Vec<u64> {
    match kind {
        ModelKind::CdSeiz => vec![5, 10, 20],
        _ => vec![5],
    }
}

impl SynthSettings {
    pub fn resolve(global: &GlobalArgs, args: &super::SynthArgs, file: &FileConfig) -> Result<Self, CliError> {
        let f = &file.synth;
        let kind = match (args.model, &f.model) {
            (Some(k), _) => k,
            (None, Some(name)) => name.parse().map_err(|e| CliError::input(format!("synth.model: {e}")))?,
            (None, None) => ModelKind::Seiz,
        };
        if kind == ModelKind::Sis {
            return Err(CliError::input("synthetic cascades need --model seiz or --model cdseiz"));
        }
        let params = match &f.params {
            None => default_synth_params(kind),
            Some(table) => {
                let value = toml::Value::Table(table.clone());
                let parsed = match kind {
                    ModelKind::CdSeiz => value.try_into::<CdSeizParams>().map(ModelParams::CdSeiz),
                    _ => value.try_into::<SeizParams>().map(ModelParams::Seiz),
                };
                parsed.map_err(|e| CliError::input(format!("synth.params for {kind}: {e}")))?
            }
        };
        Ok(SynthSettings {
            seed: global.seed.or(file.seed).unwrap_or(0),
            n: args.n.or(f.n).unwrap_or(10),
            horizon: args.horizon.or(f.horizon).unwrap_or(48),
            agents: args.agents.or(f.agents).unwrap_or(20_000),
            i0: args.i0.clone().or_else(|| f.i0.clone()).unwrap_or_else(|| default_i0(kind)),
            jitter: args.jitter.or(f.jitter).unwrap_or(0.0),
            params,
        })
    }

    pub fn synth_config(&self) -> crate::synth::SynthConfig {
        crate::synth::SynthConfig {
            params: self.params,
            n_agents: self.agents,
            i0: self.i0.clone(),
            horizon_hours: self.horizon,
            seed: self.seed,
            n_cascades: self.n,
            param_jitter: self.jitter,
            epoch: crate::synth::DEFAULT_EPOCH,
        }
    }
}

/// The settings a run actually used, echoed into its manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum EffectiveConfig {
    Build(BuildSettings),
    Fit { model: ModelKind, fit: FitSettings },
    Compare(FitSettings),
    Synth(SynthSettings),
    Report {},
}

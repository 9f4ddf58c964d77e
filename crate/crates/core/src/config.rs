//! Run specification files, named presets and command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{DataSource, SyntheticKind, SyntheticSpec, CELEBA_CROP_DEFAULT};
use crate::error::{Error, Result};
use crate::likelihood::{AisConfig, TransitionConfig};
use crate::metrics::EmbeddingConfig;
use crate::report::ReportConfig;
use crate::trainer::{Architecture, EvalConfig, TrainConfig, Variant};

/// Chunking of likelihood scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub chunk_size: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { chunk_size: 256 }
    }
}

/// Everything a command needs: data, training, likelihood scoring,
/// evaluation and reporting settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub data: DataSource,
    pub train: TrainConfig,
    pub ais: AisConfig,
    pub scoring: ScoringConfig,
    pub eval: EvalConfig,
    pub report: ReportConfig,
}

impl Default for RunSpec {
    fn default() -> Self {
        toy_spec(Variant::PMdgan)
    }
}

/// The synthetic dataset used by the toy presets.
pub fn toy_data_spec() -> SyntheticSpec {
    let mut s = SyntheticSpec::new(SyntheticKind::GaussianMixtureImages, 2000, (1, 8, 8), 1);
    s.hard_fraction = 0.15;
    s
}

fn toy_spec(variant: Variant) -> RunSpec {
    let mut train = TrainConfig::for_variant(variant);
    train.architecture = Architecture::Toy;
    train.toy_width = 64;
    train.latent_dim = 16;
    train.batch_size = 16;
    train.epochs = 400;
    train.checkpoint_every = 50;
    train.optimizer.lr = 1e-3;
    train.lr_decay.start_epoch = 200;
    train.controller.warmup_epochs = 50;
    train.controller.n_mc = 10_000;
    if variant != Variant::Mdgan {
        train.sampler.lambda_perc = 0.5;
        train.sampler.lambda_dist = 8.0;
    }
    RunSpec {
        data: DataSource::Synthetic { spec: toy_data_spec() },
        train,
        ais: AisConfig {
            sigma: 0.3,
            n_temps: 200,
            n_chains: 16,
            transition: TransitionConfig {
                step_size: 0.3,
                n_steps_per_temp: 4,
                ..Default::default()
            },
            ..Default::default()
        },
        scoring: ScoringConfig::default(),
        eval: EvalConfig {
            n_gen: 500,
            embedding: EmbeddingConfig::RawPca { d: 16, seed: 0 },
            ..Default::default()
        },
        report: ReportConfig::default(),
    }
}

/// Hyperparameters of the best configuration per dataset and variant:
/// `(lambda_cyc, lambda_perc, lambda_dist)`.
fn published_hyperparameters(dataset: &str, variant: Variant) -> (f64, f64, f64) {
    match (dataset, variant) {
        ("fmnist", Variant::Mdgan) => (9.0, 0.0, 0.0),
        ("fmnist", Variant::PMdgan) => (9.0, 0.0, 0.0),
        ("fmnist", Variant::PMdganMleq) => (5.0, 0.8, 8.0),
        ("fmnist", Variant::EpMdgan) => (3.0, 0.8, 4.0),
        (_, Variant::Mdgan) => (8.0, 0.0, 0.0),
        (_, Variant::PMdgan) => (7.0, 0.0, 0.0),
        (_, Variant::PMdganMleq) => (5.0, 0.5, 8.0),
        (_, Variant::EpMdgan) => (3.0, 0.5, 12.0),
    }
}

fn dataset_spec(dataset: &str, variant: Variant) -> RunSpec {
    let mut train = TrainConfig::for_variant(variant);
    let (cyc, perc, dist) = published_hyperparameters(dataset, variant);
    train.lambda_cyc = cyc;
    if variant.sampler_mode() != crate::equalizer::SamplerMode::Uniform {
        train.sampler.lambda_perc = perc;
        train.sampler.lambda_dist = dist;
    }
    RunSpec {
        data: DataSource::Named {
            name: dataset.to_string(),
            root: None,
            celeba_crop: CELEBA_CROP_DEFAULT,
        },
        train,
        ais: AisConfig::default(),
        scoring: ScoringConfig::default(),
        eval: EvalConfig::default(),
        report: ReportConfig::default(),
    }
}

fn variant_slug(v: Variant) -> String {
    v.name().replace('_', "-")
}

/// Every preset name.
pub fn preset_names() -> Vec<String> {
    let mut names = vec!["toy".to_string()];
    for d in ["toy", "cifar10", "fmnist", "celeba"] {
        for v in Variant::ALL {
            names.push(format!("{d}-{}", variant_slug(v)));
        }
    }
    names
}

/// Looks up a preset: `toy` or `<dataset>-<variant>` with dataset one of
/// `toy`, `cifar10`, `fmnist`, `celeba` and variant one of `mdgan`,
/// `p-mdgan`, `p-mdgan-mleq`, `ep-mdgan`.
pub fn preset(name: &str) -> Result<RunSpec> {
    if name == "toy" {
        return Ok(toy_spec(Variant::PMdgan));
    }
    for d in ["toy", "cifar10", "fmnist", "celeba"] {
        for v in Variant::ALL {
            if name == format!("{d}-{}", variant_slug(v)) {
                return Ok(if d == "toy" { toy_spec(v) } else { dataset_spec(d, v) });
            }
        }
    }
    Err(Error::config(
        "preset",
        format!("unknown preset `{name}`; available: {}", preset_names().join(", ")),
    ))
}

impl RunSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config("spec", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile { path: path.to_path_buf() });
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("spec", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.ais.validate()?;
        if self.scoring.chunk_size == 0 {
            return Err(Error::config("scoring.chunk_size", "must be at least 1"));
        }
        if self.eval.n_gen == 0 {
            return Err(Error::config("eval.n_gen", "must be at least 1"));
        }
        if self.eval.pr_k == 0 {
            return Err(Error::config("eval.pr_k", "must be at least 1"));
        }
        self.report.validate()
    }

    /// Applies `key=value`. `key` is a dotted path (`train.sampler.lambda_perc`)
    /// or a bare field name that occurs exactly once in the spec
    /// (`lambda_perc`). Values are parsed as TOML, falling back to a string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "overrides must have the form key=value"))?;
        let (key, raw) = (key.trim(), raw.trim());
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::config("spec", e.to_string()))?;
        let path = resolve_key(&root, key)?;
        let value = parse_value(raw);
        set_path(&mut root, &path, value, key)?;
        let updated: RunSpec = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(key, e.message().to_string()))?;
        *self = updated;
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn leaf_paths(v: &toml::Value, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    if let toml::Value::Table(t) = v {
        for (k, child) in t {
            prefix.push(k.clone());
            out.push(prefix.clone());
            leaf_paths(child, prefix, out);
            prefix.pop();
        }
    }
}

fn resolve_key(root: &toml::Value, key: &str) -> Result<Vec<String>> {
    let parts: Vec<String> = key.split('.').map(str::to_string).collect();
    if parts.len() > 1 {
        return Ok(parts);
    }
    let mut all = Vec::new();
    leaf_paths(root, &mut Vec::new(), &mut all);
    let matches: Vec<_> = all.into_iter().filter(|p| p.last().is_some_and(|l| l == key)).collect();
    match matches.len() {
        1 => Ok(matches.into_iter().next().expect("one match")),
        0 => Err(Error::config(key, "unknown key")),
        _ => Err(Error::config(
            key,
            format!(
                "ambiguous key; use one of {}",
                matches.iter().map(|p| p.join(".")).collect::<Vec<_>>().join(", ")
            ),
        )),
    }
}

fn set_path(root: &mut toml::Value, path: &[String], value: toml::Value, key: &str) -> Result<()> {
    let mut cur = root;
    for (i, part) in path.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{}` is not a table", path[..i].join("."))))?;
        if i + 1 == path.len() {
            let value = match (table.get(part), value) {
                (Some(toml::Value::Float(_)), toml::Value::Integer(n)) => toml::Value::Float(n as f64),
                (_, v) => v,
            };
            table.insert(part.clone(), value);
            return Ok(());
        }
        cur = table
            .entry(part.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Ok(())
}

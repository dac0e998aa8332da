//! Run configuration: presets, TOML files, environment overrides and flags.
//!
//! Resolution order, later sources winning key by key:
//!
//! 1. the preset (`desk` unless the file or `--preset` names another)
//! 2. the TOML config file
//! 3. environment variables `SEQUNLEARN_<SECTION>__<KEY>=<toml value>`,
//!    e.g. `SEQUNLEARN_PHASES__NEGATIVE__ALPHA=0.1`
//! 4. command-line flags
//!
//! The merged document is then deserialized strictly: unknown keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{generate_forget, generate_retain, split_train_val, CorpusSpec};
use crate::error::{Error, Result};
use crate::eval::ProbeSuite;
use crate::model::ModelConfig;
use crate::trainer::{Batching, Corpora, EarlyStop, Phase, PhaseConfig, PipelineConfig};

/// Prefix of environment overrides.
pub const ENV_PREFIX: &str = "SEQUNLEARN_";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Literal hyperparameters of the method description: lr 5e-5 / 1e-5,
    /// α = 0.001, batch 8, one ascent epoch.
    Paper,
    /// Scaled ascent and lengths so every effect is measurable in minutes.
    #[default]
    Desk,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected paper or desk)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub retain: CorpusSpec,
    pub forget: CorpusSpec,
    /// Share of the retain corpus held out for validation.
    pub val_fraction: f64,
    pub split_seed: u64,
    pub max_in: usize,
    pub max_out: usize,
    pub mask_prompt: bool,
}

impl DataConfig {
    pub fn batching(&self) -> Batching {
        Batching {
            max_in: self.max_in,
            max_out: self.max_out,
            mask_prompt: self.mask_prompt,
        }
    }

    /// Generates both corpora and splits the retain corpus.
    pub fn corpora(&self) -> Result<Corpora> {
        let retain = generate_retain(&self.retain)?;
        let forget = generate_forget(&self.forget)?;
        let (retain_train, retain_val) = split_train_val(&retain, self.val_fraction, self.split_seed)?;
        Ok(Corpora {
            retain_train,
            retain_val,
            forget,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasesConfig {
    /// Base-model training on retain + forget from a fresh initialization.
    pub pretrain: PhaseConfig,
    pub positive: PhaseConfig,
    pub negative: PhaseConfig,
    pub stabilize: PhaseConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub probe_seed: u64,
    pub max_new: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub workdir: PathBuf,
    /// Metrics log name inside the workdir.
    pub metrics: String,
}

/// Everything a command needs, fully resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Master seed: model initialization and every phase's batch order.
    pub seed: u64,
    pub model: ModelConfig,
    /// Second architecture for the capacity comparison.
    pub small_model: ModelConfig,
    pub data: DataConfig,
    pub phases: PhasesConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let batch = 8;
        let phases = match preset {
            Preset::Desk => PhasesConfig {
                pretrain: PhaseConfig::new(Phase::Pretrain, 1e-3, 16, batch),
                positive: PhaseConfig::new(Phase::Positive, 2e-4, 3, batch),
                negative: PhaseConfig::negative(1e-4, 0.05, 5, batch),
                stabilize: PhaseConfig::stabilize(1e-4, 5, batch, EarlyStop::default()),
            },
            Preset::Paper => PhasesConfig {
                pretrain: PhaseConfig::new(Phase::Pretrain, 1e-3, 16, batch),
                positive: PhaseConfig::new(Phase::Positive, 5e-5, 3, batch),
                negative: PhaseConfig::negative(1e-5, 0.001, 1, batch),
                stabilize: PhaseConfig::stabilize(5e-5, 5, batch, EarlyStop::default()),
            },
        };
        let (max_in, max_out) = match preset {
            Preset::Desk => (48, 48),
            Preset::Paper => (Batching::default().max_in, Batching::default().max_out),
        };
        let mut cfg = RunConfig {
            preset,
            seed: 0,
            model: ModelConfig::large(),
            small_model: ModelConfig::small(),
            data: DataConfig {
                retain: CorpusSpec::new(300, 1),
                forget: CorpusSpec::new(120, 2),
                val_fraction: 0.1,
                split_seed: 3,
                max_in,
                max_out,
                mask_prompt: true,
            },
            phases,
            eval: EvalConfig {
                probe_seed: 0,
                max_new: 48,
            },
            paths: PathsConfig {
                workdir: PathBuf::from(format!("runs/{preset}")),
                metrics: "metrics.jsonl".into(),
            },
        };
        cfg.apply_seed();
        cfg
    }

    /// Copies the master seed into the model and phase configs.
    fn apply_seed(&mut self) {
        self.model.seed = self.seed;
        self.small_model.seed = self.seed;
        let p = &mut self.phases;
        for (i, ph) in [&mut p.pretrain, &mut p.positive, &mut p.negative, &mut p.stabilize]
            .into_iter()
            .enumerate()
        {
            ph.seed = self.seed.wrapping_add(i as u64);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.small_model.validate()?;
        let b = self.data.batching();
        for m in [&self.model, &self.small_model] {
            if b.max_in + b.max_out > m.context_len {
                return Err(Error::Config(format!(
                    "max_in {} + max_out {} exceeds context length {}",
                    b.max_in, b.max_out, m.context_len
                )));
            }
        }
        if b.max_in < 2 || b.max_out < 2 {
            return Err(Error::Config("max_in and max_out must be at least 2".into()));
        }
        if !(self.data.val_fraction > 0.0 && self.data.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must be in (0, 1), got {}",
                self.data.val_fraction
            )));
        }
        for (spec, what) in [(&self.data.retain, "retain"), (&self.data.forget, "forget")] {
            if spec.n_examples == 0 {
                return Err(Error::Spec(format!("{what} corpus needs n_examples > 0")));
            }
        }
        let p = &self.phases;
        for (cfg, want) in [
            (&p.pretrain, Phase::Pretrain),
            (&p.positive, Phase::Positive),
            (&p.negative, Phase::Negative),
            (&p.stabilize, Phase::Stabilize),
        ] {
            if cfg.phase != want {
                return Err(Error::Phase(format!(
                    "phases.{} has phase = {}",
                    want.as_str(),
                    cfg.phase.as_str()
                )));
            }
            cfg.validate()?;
        }
        self.pipeline().validate()?;
        self.probe_suite()?;
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            positive: self.phases.positive.clone(),
            negative: self.phases.negative.clone(),
            stabilize: self.phases.stabilize.clone(),
            batching: self.data.batching(),
            max_new: self.eval.max_new,
        }
    }

    pub fn probe_suite(&self) -> Result<ProbeSuite> {
        // Sensitive probes name the people of the forget corpus.
        let mut tables = self.data.retain.clone();
        tables.names.clone_from(&self.data.forget.names);
        ProbeSuite::standard(&tables, self.eval.probe_seed)
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.paths.workdir.join(&self.paths.metrics)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Overrides that come from command-line flags.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub workdir: Option<PathBuf>,
}

/// Builds a validated [`RunConfig`] from an optional file, the process
/// environment and flag overrides.
pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let text = match file {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    resolve_with(text.as_deref(), std::env::vars(), overrides)
}

/// [`resolve`] with the file contents and environment supplied explicitly.
pub fn resolve_with(
    file: Option<&str>,
    env: impl IntoIterator<Item = (String, String)>,
    overrides: &Overrides,
) -> Result<RunConfig> {
    let mut layer = match file {
        Some(text) => text
            .parse::<Table>()
            .map_err(|e| Error::Config(format!("config file: {e}")))?,
        None => Table::new(),
    };
    let mut env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    env.sort();
    for (key, raw) in env {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(str::to_lowercase)
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(Error::Config(format!("malformed override variable {key}")));
        }
        set_path(&mut layer, &path, parse_scalar(&raw))?;
    }
    if let Some(p) = overrides.preset {
        layer.insert("preset".into(), Value::String(p.as_str().into()));
    }
    if let Some(s) = overrides.seed {
        let s = i64::try_from(s).map_err(|_| Error::Config(format!("seed {s} is too large")))?;
        layer.insert("seed".into(), Value::Integer(s));
    }
    if let Some(w) = &overrides.workdir {
        set_path(
            &mut layer,
            &["paths".into(), "workdir".into()],
            Value::String(w.to_string_lossy().into_owned()),
        )?;
    }

    let preset = match layer.get("preset") {
        None => Preset::default(),
        Some(Value::String(s)) => s.parse()?,
        Some(v) => return Err(Error::Config(format!("preset must be a string, got {v}"))),
    };
    let base = Table::try_from(RunConfig::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
    let mut merged = Value::Table(base);
    merge(&mut merged, Value::Table(layer));
    let mut cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.apply_seed();
    cfg.validate()?;
    Ok(cfg)
}

/// Interprets an override as a TOML value, falling back to a plain string.
fn parse_scalar(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut t = table;
    for key in parents {
        let entry = t.entry(key.clone()).or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key} is not a section")))?;
    }
    t.insert(last.clone(), value);
    Ok(())
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn presets_resolve_and_validate() {
        for p in [Preset::Desk, Preset::Paper] {
            let cfg = RunConfig::preset(p);
            cfg.validate().unwrap();
            let via = resolve_with(
                None,
                no_env(),
                &Overrides {
                    preset: Some(p),
                    ..Overrides::default()
                },
            )
            .unwrap();
            assert_eq!(via, cfg);
        }
        let paper = RunConfig::preset(Preset::Paper);
        assert_eq!(paper.phases.positive.lr, 5e-5);
        assert_eq!(paper.phases.negative.lr, 1e-5);
        assert_eq!(paper.phases.negative.alpha, 0.001);
        assert_eq!(paper.phases.negative.epochs, 1);
        assert_eq!(paper.phases.positive.batch_size, 8);
        let desk = RunConfig::preset(Preset::Desk);
        assert_eq!(desk.phases.negative.alpha, 0.05);
        assert_eq!(desk.phases.negative.lr, 1e-4);
        let es = desk.phases.stabilize.early_stop.unwrap();
        assert_eq!((es.patience, es.min_delta, desk.phases.stabilize.epochs), (2, 1e-3, 5));
    }

    #[test]
    fn file_then_env_then_flags() {
        let file = "preset = \"paper\"\nseed = 4\n[phases.negative]\nalpha = 0.2\nepochs = 2\n";
        let env = vec![
            ("SEQUNLEARN_PHASES__NEGATIVE__EPOCHS".to_string(), "3".to_string()),
            ("SEQUNLEARN_PATHS__METRICS".to_string(), "m.jsonl".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ];
        let flags = Overrides {
            seed: Some(9),
            workdir: Some("w".into()),
            ..Overrides::default()
        };
        let cfg = resolve_with(Some(file), env, &flags).unwrap();
        assert_eq!(cfg.preset, Preset::Paper);
        assert_eq!(cfg.phases.negative.alpha, 0.2);
        assert_eq!(cfg.phases.negative.epochs, 3);
        assert_eq!(cfg.phases.negative.lr, 1e-5);
        assert_eq!(cfg.paths.metrics, "m.jsonl");
        assert_eq!(cfg.paths.workdir, PathBuf::from("w"));
        assert_eq!((cfg.seed, cfg.model.seed, cfg.phases.negative.seed), (9, 9, 11));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        for text in [
            "[phases.negative]\nalpah = 0.1\n",
            "bogus = 1\n",
            "[model]\nn_heads = 5\n",
            "[phases.stabilize.early_stop]\npatience = 0\n",
            "[phases.positive]\nphase = \"negative\"\n",
            "[phases.negative]\nalpha = -1.0\n",
            "preset = \"huge\"\n",
            "[data]\nmax_in = 100\n",
        ] {
            assert!(resolve_with(Some(text), no_env(), &Overrides::default()).is_err(), "{text}");
        }
        let env = vec![("SEQUNLEARN_PHASES__NEGATIVE__NOPE".to_string(), "1".to_string())];
        assert!(resolve_with(None, env, &Overrides::default()).is_err());
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let cfg = RunConfig::preset(Preset::Desk);
        let text = cfg.to_toml().unwrap();
        assert_eq!(resolve_with(Some(&text), no_env(), &Overrides::default()).unwrap(), cfg);
    }
}

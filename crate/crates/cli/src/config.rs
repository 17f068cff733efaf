//! TOML configuration: sectioned or flat keys, `key=value` overrides, and a
//! resolved echo.
//!
//! ```toml
//! design = "hat"      # flat keys are routed to their section
//! n = 30
//!
//! [trainer]
//! eta = 0.4
//!
//! [experiments]
//! reps = 5
//! ```

use std::path::{Path, PathBuf};

use minstab_core::experiments::ExperimentConfig;
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    MissingFile(PathBuf),

    #[error("unknown key `{key}`")]
    UnknownKey { key: String },

    #[error("invalid value for `{key}`: {constraint}")]
    InvalidValue { key: String, constraint: String },

    #[error("malformed config: {0}")]
    Syntax(String),

    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

pub const DATASET_KEYS: &[&str] = &["design", "n", "sigma", "x_max", "data_seed", "path"];

pub const TRAIN_KEYS: &[&str] = &[
    "k",
    "eta",
    "max_steps",
    "log_every",
    "seed",
    "init",
    "stop_grad_norm",
    "steady_window",
    "steady_rel_tol",
    "diff_tol",
    "dslope_tol",
    "eigen_method",
    "beos_eps",
    "delta",
];

pub const EXPERIMENT_KEYS: &[&str] = &[
    "reps",
    "eta_grid",
    "n_grid",
    "interval",
    "eta_mode",
    "width_factor",
    "equal_time",
    "workers",
    "test_m",
    "test_seed",
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Dataset,
    Train,
    Experiment,
}

impl Section {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "dataset" => Some(Section::Dataset),
            "trainer" | "train" => Some(Section::Train),
            "experiments" | "experiment" => Some(Section::Experiment),
            _ => None,
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            Section::Dataset => DATASET_KEYS,
            Section::Train => TRAIN_KEYS,
            Section::Experiment => EXPERIMENT_KEYS,
        }
    }

    fn of_key(key: &str) -> Option<Self> {
        [Section::Dataset, Section::Train, Section::Experiment]
            .into_iter()
            .find(|s| s.keys().contains(&key))
    }
}

/// Canonical nested form with `dataset` and `train` subtables.
#[derive(Default)]
struct Layered {
    dataset: Table,
    train: Table,
    top: Table,
}

impl Layered {
    fn insert(&mut self, section: Option<Section>, key: &str, value: Value) -> Result<(), ConfigError> {
        let sec = match section {
            Some(s) if s.keys().contains(&key) => s,
            Some(s) => {
                let prefix = match s {
                    Section::Dataset => "dataset",
                    Section::Train => "trainer",
                    Section::Experiment => "experiments",
                };
                return Err(ConfigError::UnknownKey {
                    key: format!("{prefix}.{key}"),
                });
            }
            None => Section::of_key(key).ok_or_else(|| ConfigError::UnknownKey { key: key.into() })?,
        };
        let table = match sec {
            Section::Dataset => &mut self.dataset,
            Section::Train => &mut self.train,
            Section::Experiment => &mut self.top,
        };
        table.insert(key.into(), value);
        Ok(())
    }

    fn absorb(&mut self, doc: Table) -> Result<(), ConfigError> {
        for (key, value) in doc {
            match (Section::from_name(&key), value) {
                (Some(sec), Value::Table(t)) => {
                    for (k, v) in t {
                        self.insert(Some(sec), &k, v)?;
                    }
                }
                (_, value) => self.insert(None, &key, value)?,
            }
        }
        Ok(())
    }

    fn into_value(self) -> Value {
        let mut root = self.top;
        root.insert("dataset".into(), Value::Table(self.dataset));
        root.insert("train".into(), Value::Table(self.train));
        Value::Table(root)
    }
}

/// Value of an override: any TOML literal, else a bare string.
fn parse_literal(text: &str) -> Value {
    match format!("v = {text}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.into())),
        Err(_) => Value::String(text.into()),
    }
}

fn apply_override(layers: &mut Layered, spec: &str) -> Result<(), ConfigError> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Syntax(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let value = parse_literal(value.trim());
    match key.split_once('.') {
        Some((sec, k)) => {
            let section = Section::from_name(sec).ok_or_else(|| ConfigError::UnknownKey { key: key.into() })?;
            layers.insert(Some(section), k, value)
        }
        None => layers.insert(None, key, value),
    }
}

fn leaf(path: &str) -> String {
    path.rsplit('.').next().unwrap_or(path).to_string()
}

/// First word of a core validation message, which names the key.
fn key_of_message(msg: &str) -> String {
    msg.split_whitespace().next().unwrap_or("config").to_string()
}

/// Parse `text` plus overrides into a validated configuration.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
    let mut layers = Layered::default();
    layers.absorb(doc)?;
    for o in overrides {
        apply_override(&mut layers, o)?;
    }
    let value = layers.into_value();
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.inner().to_string();
        if let Some(rest) = msg.strip_prefix("unknown field `") {
            let field = rest.split('`').next().unwrap_or(rest);
            ConfigError::UnknownKey { key: field.into() }
        } else {
            ConfigError::InvalidValue {
                key: leaf(&path),
                constraint: msg,
            }
        }
    })?;
    cfg.validate().map_err(|e| match e {
        minstab_core::Error::InvalidConfig(msg) => ConfigError::InvalidValue {
            key: key_of_message(&msg),
            constraint: msg,
        },
        other => ConfigError::Syntax(other.to_string()),
    })?;
    Ok(cfg)
}

/// Read and resolve a config file; `None` starts from the defaults.
pub fn parse_config(file: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = match file {
        Some(p) if !p.exists() => return Err(ConfigError::MissingFile(p.to_path_buf())),
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    parse_config_str(&text, overrides)
}

/// Resolved configuration in sectioned TOML.
pub fn resolved_toml(cfg: &ExperimentConfig) -> String {
    let value = Value::try_from(cfg).expect("configuration serializes to TOML");
    let Value::Table(mut root) = value else {
        unreachable!("configuration is a table")
    };
    let mut out = Table::new();
    let dataset = root.remove("dataset");
    let train = root.remove("train");
    out.insert("experiments".into(), Value::Table(root));
    if let Some(d) = dataset {
        out.insert("dataset".into(), d);
    }
    if let Some(t) = train {
        out.insert("trainer".into(), t);
    }
    toml::to_string_pretty(&out).expect("configuration serializes to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_flat_file() {
        let cfg = parse_config_str(
            "design = \"hat\"\nn = 30\nsigma = 0.5\nk = 100\neta = 0.4\nseed = 1\n",
            &[],
        )
        .unwrap();
        assert_eq!(cfg.dataset.n, 30);
        assert_eq!(cfg.train.k, 100);
        assert_eq!(cfg.train.max_steps, 200_000);
        assert_eq!(cfg.reps, 5);
    }

    #[test]
    fn override_wins() {
        let cfg = parse_config_str("eta = 0.4", &["eta=0.01".into()]).unwrap();
        assert_eq!(cfg.train.eta, 0.01);
        let cfg = parse_config_str("", &["trainer.eta=0.2".into(), "eta_grid=[0.4, 0.1]".into()]).unwrap();
        assert_eq!(cfg.train.eta, 0.2);
        assert_eq!(cfg.eta_grid, vec![0.4, 0.1]);
    }

    #[test]
    fn negative_n_names_the_key() {
        match parse_config_str("n = -5", &[]) {
            Err(ConfigError::InvalidValue { key, .. }) => assert_eq!(key, "n"),
            other => panic!("{other:?}"),
        }
        match parse_config_str("[dataset]\nn = 1", &[]) {
            Err(ConfigError::InvalidValue { key, .. }) => assert_eq!(key, "n"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        match parse_config_str("learning_rate = 0.1", &[]) {
            Err(ConfigError::UnknownKey { key }) => assert_eq!(key, "learning_rate"),
            other => panic!("{other:?}"),
        }
        match parse_config_str("[trainer]\nn = 3", &[]) {
            Err(ConfigError::UnknownKey { key }) => assert_eq!(key, "trainer.n"),
            other => panic!("{other:?}"),
        }
        match parse_config_str("[interval]\nkind = \"explicit\"", &[]) {
            Err(ConfigError::UnknownKey { .. }) | Err(ConfigError::InvalidValue { .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resolved_echo_round_trips() {
        let cfg = parse_config_str(
            "[experiments]\ninterval = { kind = \"explicit\", lo = -0.25, hi = 0.25 }\n[trainer]\ninit = { kind = \"knot_uniform\", lo = -1.0, hi = 1.0 }",
            &[],
        )
        .unwrap();
        let echo = resolved_toml(&cfg);
        assert_eq!(parse_config_str(&echo, &[]).unwrap(), cfg);
    }
}

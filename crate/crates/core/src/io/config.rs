//! TOML experiment configuration.
//!
//! ```toml
//! [schedule]
//! kind = "cosine"          # required: "linear" | "cosine"
//! T = 200                  # required, >= 2
//!
//! [model]
//! arch = "unet"            # required: "unet" | "mlp"
//! base_channels = 16       # unet
//! time_dim = 64
//! activation = "silu"      # "silu" | "relu"
//! hidden = [128, 128]      # mlp
//!
//! [train]                  # optional, every key defaulted
//! batch_size = 8
//! steps = 2000
//! learning_rate = 1e-3
//! beta1 = 0.9
//! beta2 = 0.999
//! epsilon = 1e-8
//! checkpoint_interval = 0
//!
//! [seeds]                  # all required
//! master = 1               # model initialisation
//! train = 2                # batch sampling
//! sample = 3               # default sampling seed
//!
//! [paths]                  # relative to the config file
//! dataset = "data/manifest.json"   # required, must exist
//! guidance = "guidance.json"       # optional, must exist
//! output = "runs/golden"           # required
//!
//! [export]
//! windows = ["full", "lung", "bone", "soft-tissue"]
//! ```
//!
//! Parsing is strict: unknown sections and keys are errors, and every
//! violation is reported together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::denoiser::{Activation, Architecture, TrainConfig};
use crate::error::{Error, Result};
use crate::phantom::WindowPreset;
use crate::schedule::ScheduleKind;

use super::{read_bytes, resolve};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    #[serde(rename = "T")]
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Unet,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub arch: ModelKind,
    pub base_channels: usize,
    pub time_dim: usize,
    pub activation: Activation,
    pub hidden: Vec<usize>,
}

impl ModelSection {
    /// Concrete architecture for images of `shape`.
    pub fn architecture(&self, shape: (usize, usize)) -> Architecture {
        match self.arch {
            ModelKind::Unet => Architecture::Unet {
                width: shape.0,
                height: shape.1,
                base_channels: self.base_channels,
                time_dim: self.time_dim,
                activation: self.activation,
            },
            ModelKind::Mlp => Architecture::Mlp {
                input_dim: shape.0 * shape.1,
                hidden: self.hidden.clone(),
                time_dim: self.time_dim,
                activation: self.activation,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub checkpoint_interval: usize,
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            steps: self.steps,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            seed,
            checkpoint_interval: self.checkpoint_interval,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub train: u64,
    pub sample: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paths {
    pub dataset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance: Option<String>,
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSection {
    pub windows: Vec<WindowPreset>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub seeds: Seeds,
    pub paths: Paths,
    pub export: ExportSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn dataset_path(&self) -> PathBuf {
        resolve(&self.base_dir, &self.paths.dataset)
    }

    pub fn guidance_path(&self) -> Option<PathBuf> {
        self.paths.guidance.as_ref().map(|g| resolve(&self.base_dir, g))
    }

    pub fn output_dir(&self) -> PathBuf {
        resolve(&self.base_dir, &self.paths.output)
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.to_train_config(self.seeds.train)
    }

    /// Canonical TOML with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// Read and validate a config file.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Config(vec![format!("{} is not UTF-8", path.display())]))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

/// Validate config text, resolving relative paths against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    let mut v = Validator::default();
    v.allow(&root, "", &["schedule", "model", "train", "seeds", "paths", "export"]);

    let schedule = v.section(&root, "schedule", true);
    let model = v.section(&root, "model", true);
    let train = v.section(&root, "train", false);
    let seeds = v.section(&root, "seeds", true);
    let paths = v.section(&root, "paths", true);
    let export = v.section(&root, "export", false);

    v.allow(&schedule, "schedule", &["kind", "T"]);
    let kind = v.parsed::<ScheduleKind>(&schedule, "schedule", "kind", true);
    let steps = v.uint(&schedule, "schedule", "T", true);
    if let Some(t) = steps {
        if t < 2 {
            v.err(format!("schedule.T must be at least 2, got {t}"));
        }
    }

    v.allow(&model, "model", &["arch", "base_channels", "time_dim", "activation", "hidden"]);
    let arch = v.string(&model, "model", "arch", true).and_then(|s| match s.as_str() {
        "unet" => Some(ModelKind::Unet),
        "mlp" => Some(ModelKind::Mlp),
        other => {
            v.err(format!("model.arch must be \"unet\" or \"mlp\", got \"{other}\""));
            None
        }
    });
    let base_channels = v.uint(&model, "model", "base_channels", false).unwrap_or(16);
    let time_dim = v.uint(&model, "model", "time_dim", false).unwrap_or(64);
    let activation = v.string(&model, "model", "activation", false).map_or(Some(Activation::Silu), |s| {
        match s.as_str() {
            "silu" => Some(Activation::Silu),
            "relu" => Some(Activation::Relu),
            other => {
                v.err(format!("model.activation must be \"silu\" or \"relu\", got \"{other}\""));
                None
            }
        }
    });
    let hidden = v.uint_list(&model, "model", "hidden").unwrap_or_else(|| vec![128, 128]);
    if base_channels == 0 {
        v.err("model.base_channels must be positive".into());
    }
    if time_dim == 0 || time_dim % 2 != 0 {
        v.err(format!("model.time_dim must be even and positive, got {time_dim}"));
    }
    if arch == Some(ModelKind::Mlp) && (hidden.is_empty() || hidden.contains(&0)) {
        v.err("model.hidden must list positive widths".into());
    }

    v.allow(
        &train,
        "train",
        &["batch_size", "steps", "learning_rate", "beta1", "beta2", "epsilon", "checkpoint_interval"],
    );
    let d = TrainConfig::default();
    let train = TrainSection {
        batch_size: v.uint(&train, "train", "batch_size", false).unwrap_or(d.batch_size),
        steps: v.uint(&train, "train", "steps", false).unwrap_or(d.steps),
        learning_rate: v.float(&train, "train", "learning_rate").unwrap_or(d.learning_rate),
        beta1: v.float(&train, "train", "beta1").unwrap_or(d.beta1),
        beta2: v.float(&train, "train", "beta2").unwrap_or(d.beta2),
        epsilon: v.float(&train, "train", "epsilon").unwrap_or(d.epsilon),
        checkpoint_interval: v.uint(&train, "train", "checkpoint_interval", false).unwrap_or(0),
    };
    if let Err(Error::Config(errs)) = train.to_train_config(0).validate() {
        v.errors.extend(errs);
    }

    v.allow(&seeds, "seeds", &["master", "train", "sample"]);
    let master = v.uint(&seeds, "seeds", "master", true);
    let train_seed = v.uint(&seeds, "seeds", "train", true);
    let sample = v.uint(&seeds, "seeds", "sample", true);

    v.allow(&paths, "paths", &["dataset", "guidance", "output"]);
    let dataset = v.string(&paths, "paths", "dataset", true);
    let guidance = v.string(&paths, "paths", "guidance", false);
    let output = v.string(&paths, "paths", "output", true);
    for (key, p) in [("paths.dataset", &dataset), ("paths.guidance", &guidance)] {
        if let Some(p) = p {
            let full = resolve(base_dir, p);
            if !full.exists() {
                v.err(format!("{key}: {} does not exist", full.display()));
            }
        }
    }
    if output.as_deref() == Some("") {
        v.err("paths.output must not be empty".into());
    }

    v.allow(&export, "export", &["windows"]);
    let windows = match export.get("windows") {
        None => WindowPreset::ALL.to_vec(),
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|item| match item.as_str().map(str::parse::<WindowPreset>) {
                Some(Ok(w)) => Some(w),
                Some(Err(e)) => {
                    v.err(format!("export.windows: {e}"));
                    None
                }
                None => {
                    v.err("export.windows must contain strings".into());
                    None
                }
            })
            .collect(),
        Some(_) => {
            v.err("export.windows must be an array of window names".into());
            Vec::new()
        }
    };

    if !v.errors.is_empty() {
        return Err(Error::Config(v.errors));
    }
    Ok(ExperimentConfig {
        schedule: ScheduleSection {
            kind: kind.unwrap(),
            steps: steps.unwrap(),
        },
        model: ModelSection {
            arch: arch.unwrap(),
            base_channels,
            time_dim,
            activation: activation.unwrap(),
            hidden,
        },
        train,
        seeds: Seeds {
            master: master.unwrap() as u64,
            train: train_seed.unwrap() as u64,
            sample: sample.unwrap() as u64,
        },
        paths: Paths {
            dataset: dataset.unwrap(),
            guidance,
            output: output.unwrap(),
        },
        export: ExportSection { windows },
        base_dir: base_dir.to_path_buf(),
    })
}

#[derive(Default)]
struct Validator {
    errors: Vec<String>,
}

fn key_path(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

impl Validator {
    fn err(&mut self, msg: String) {
        self.errors.push(msg);
    }

    fn allow(&mut self, table: &Table, section: &str, known: &[&str]) {
        for k in table.keys() {
            if !known.contains(&k.as_str()) {
                self.err(format!("unknown key {}", key_path(section, k)));
            }
        }
    }

    fn section(&mut self, root: &Table, name: &str, required: bool) -> Table {
        match root.get(name) {
            Some(Value::Table(t)) => t.clone(),
            Some(_) => {
                self.err(format!("{name} must be a table"));
                Table::new()
            }
            None => {
                if required {
                    self.err(format!("missing required section {name}"));
                }
                Table::new()
            }
        }
    }

    fn present<'a>(&mut self, t: &'a Table, section: &str, key: &str, required: bool) -> Option<&'a Value> {
        let v = t.get(key);
        if v.is_none() && required {
            self.err(format!("missing required key {}", key_path(section, key)));
        }
        v
    }

    fn uint(&mut self, t: &Table, section: &str, key: &str, required: bool) -> Option<usize> {
        match self.present(t, section, key, required)? {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            other => {
                self.err(format!(
                    "{} must be a nonnegative integer, got {other}",
                    key_path(section, key)
                ));
                None
            }
        }
    }

    fn float(&mut self, t: &Table, section: &str, key: &str) -> Option<f64> {
        match self.present(t, section, key, false)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            other => {
                self.err(format!("{} must be a number, got {other}", key_path(section, key)));
                None
            }
        }
    }

    fn string(&mut self, t: &Table, section: &str, key: &str, required: bool) -> Option<String> {
        match self.present(t, section, key, required)? {
            Value::String(s) => Some(s.clone()),
            other => {
                self.err(format!("{} must be a string, got {other}", key_path(section, key)));
                None
            }
        }
    }

    fn parsed<T: std::str::FromStr>(&mut self, t: &Table, section: &str, key: &str, required: bool) -> Option<T>
    where
        T::Err: std::fmt::Display,
    {
        let s = self.string(t, section, key, required)?;
        match s.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.err(format!("{}: {e}", key_path(section, key)));
                None
            }
        }
    }

    fn uint_list(&mut self, t: &Table, section: &str, key: &str) -> Option<Vec<usize>> {
        match self.present(t, section, key, false)? {
            Value::Array(items) => {
                let out: Option<Vec<usize>> = items
                    .iter()
                    .map(|i| i.as_integer().filter(|v| *v >= 0).map(|v| v as usize))
                    .collect();
                if out.is_none() {
                    self.err(format!("{} must list nonnegative integers", key_path(section, key)));
                }
                out
            }
            other => {
                self.err(format!("{} must be an array, got {other}", key_path(section, key)));
                None
            }
        }
    }
}

//! `key = value` configuration files and ablation specs.
//!
//! ```text
//! # shared settings
//! epochs = 20
//! noise_std = 0.03
//!
//! [cell baseline]
//! attention = none
//! lambda = 0
//! ```
//!
//! Blank lines and `#` comments are ignored and later keys override earlier
//! ones. `[cell NAME]` sections are only meaningful in ablation specs, where
//! each cell starts from the shared settings above the first section.

use std::path::Path;

use crate::ablation::{AblationPlan, Cell};
use crate::attention::AttentionKind;
use crate::data::{Modulation, SyntheticConfig};
use crate::error::{Error, Result};
use crate::model::{FusionKind, ModelConfig};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// 1-based line number in the source text.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    /// `None` for the entries above the first header.
    pub name: Option<String>,
    pub line: usize,
    pub entries: Vec<Entry>,
}

/// Split `text` into sections of entries. Only syntax is checked here.
pub fn parse_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections = vec![Section {
        name: None,
        line: 0,
        entries: Vec::new(),
    }];
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(header) = content.strip_prefix('[') {
            let inner = header
                .strip_suffix(']')
                .ok_or_else(|| line_err(line, "unterminated section header"))?;
            let name = match inner.split_whitespace().collect::<Vec<_>>().as_slice() {
                ["cell", name] => name.to_string(),
                _ => return Err(line_err(line, format!("expected `[cell NAME]`, got `[{inner}]`"))),
            };
            sections.push(Section {
                name: Some(name),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| line_err(line, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(line_err(line, "empty key or value"));
        }
        sections.last_mut().expect("at least one section").entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    Ok(sections)
}

fn line_err(line: usize, message: impl Into<String>) -> Error {
    Error::ConfigLine {
        line,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Every setting a command can take, with the same defaults as the library.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub data: SyntheticConfig,
    /// `num_classes`, `frames`, channels and frame size are filled in from the
    /// dataset and sampler by [`Settings::model_config`].
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Seeds `0..seeds` for ablations.
    pub seeds: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            data: SyntheticConfig::default(),
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            seeds: 5,
        }
    }
}

/// Keys that describe the dataset; they cannot differ between ablation cells.
pub const DATA_KEYS: [&str; 16] = [
    "classes",
    "train_per_class",
    "test_per_class",
    "min_frames",
    "max_frames",
    "channels",
    "height",
    "width",
    "p_low",
    "low_range",
    "high_range",
    "noise_std",
    "blobs",
    "blob_sigma",
    "modulation",
    "data_seed",
];

pub const MODEL_KEYS: [&str; 11] = [
    "attention",
    "r",
    "heads",
    "layers",
    "token_dim",
    "mlp_dim",
    "aux",
    "fusion",
    "positional",
    "kernel_noise",
    "stage_widths",
];

pub const TRAIN_KEYS: [&str; 14] = [
    "epochs",
    "lr",
    "gamma",
    "batch_size",
    "seed",
    "lambda",
    "aux_weight",
    "ial_on_aux",
    "u",
    "v",
    "flip",
    "crop_pad",
    "seeds",
    "threads",
];

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?} as a number"))
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected on or off, got {v:?}")),
    }
}

fn pair(v: &str) -> std::result::Result<(f64, f64), String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok((num(a)?, num(b)?)),
        _ => Err(format!("expected `lo, hi`, got {v:?}")),
    }
}

fn list(v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(',').map(|s| num(s.trim())).collect()
}

fn modulation(v: &str) -> std::result::Result<Modulation, String> {
    match v {
        "raised-cosine" => Ok(Modulation::RaisedCosine),
        "constant" => Ok(Modulation::Constant),
        _ => Err(format!("unknown modulation {v:?} (expected raised-cosine or constant)")),
    }
}

impl Settings {
    /// Set one key. Unknown keys and malformed values are reported as a
    /// message for the caller to locate.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let (d, m, t) = (&mut self.data, &mut self.model, &mut self.train);
        match key {
            "classes" => d.num_classes = num(v)?,
            "train_per_class" => d.train_per_class = num(v)?,
            "test_per_class" => d.test_per_class = num(v)?,
            "min_frames" => d.min_frames = num(v)?,
            "max_frames" => d.max_frames = num(v)?,
            "channels" => d.channels = num(v)?,
            "height" => d.height = num(v)?,
            "width" => d.width = num(v)?,
            "p_low" => d.p_low = num(v)?,
            "low_range" => d.low_range = pair(v)?,
            "high_range" => d.high_range = pair(v)?,
            "noise_std" => d.noise_std = num(v)?,
            "blobs" => d.blobs = num(v)?,
            "blob_sigma" => d.blob_sigma = num(v)?,
            "modulation" => d.modulation = modulation(v)?,
            "data_seed" => d.seed = num(v)?,
            "attention" => m.attention = v.parse::<AttentionKind>().map_err(|e| e.to_string())?,
            "r" => m.reduction = num(v)?,
            "heads" => m.heads = num(v)?,
            "layers" => m.layers = num(v)?,
            "token_dim" => m.token_dim = num(v)?,
            "mlp_dim" => m.mlp_dim = num(v)?,
            "aux" => m.aux = flag(v)?,
            "fusion" => m.fusion = v.parse::<FusionKind>().map_err(|e| e.to_string())?,
            "positional" => m.positional = flag(v)?,
            "kernel_noise" => m.kernel_noise = num(v)?,
            "stage_widths" => m.stage_widths = list(v)?,
            "epochs" => t.epochs = num(v)?,
            "lr" => t.base_lr = num(v)?,
            "gamma" => t.gamma = num(v)?,
            "batch_size" => t.batch_size = num(v)?,
            "seed" => {
                t.seed = num(v)?;
                m.seed = t.seed;
            }
            "lambda" => t.loss.lambda = num(v)?,
            "aux_weight" => t.loss.aux_weight = num(v)?,
            "ial_on_aux" => t.loss.ial_on_aux = flag(v)?,
            "u" => t.u = num(v)?,
            "v" => t.v = num(v)?,
            "flip" => t.flip = flag(v)?,
            "crop_pad" => t.crop_pad = num(v)?,
            "seeds" => self.seeds = num(v)?,
            // Read by the command-line front end before any work starts.
            "threads" => {
                num::<usize>(v)?;
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn apply(&mut self, entries: &[Entry]) -> Result<()> {
        for e in entries {
            self.set(&e.key, &e.value).map_err(|m| line_err(e.line, m))?;
        }
        Ok(())
    }

    /// Settings from a plain config file; `[cell]` sections are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let sections = parse_sections(text)?;
        if let Some(s) = sections.get(1) {
            return Err(line_err(s.line, "sections are only allowed in ablation specs"));
        }
        let mut settings = Settings::default();
        settings.apply(&sections[0].entries)?;
        Ok(settings)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?)
    }

    /// The model for a dataset of `num_classes` classes and
    /// `[channels, height, width]` frames, sampling `u · v` frames per clip.
    pub fn model_config(&self, num_classes: usize, frame: [usize; 3]) -> ModelConfig {
        ModelConfig {
            num_classes,
            frames: self.train.u * self.train.v,
            in_channels: frame[0],
            height: frame[1],
            width: frame[2],
            ..self.model.clone()
        }
    }

    /// A [`Cell`] for the synthetic dataset described by `self.data`.
    pub fn cell(&self, name: &str) -> Cell {
        let d = &self.data;
        Cell {
            name: name.to_string(),
            model: self.model_config(d.num_classes, [d.channels, d.height, d.width]),
            train: self.train.clone(),
        }
    }
}

/// Parse an ablation spec: shared settings, then one `[cell NAME]` section
/// per configuration. Data keys may only appear in the shared part.
pub fn parse_ablation(text: &str) -> Result<AblationPlan> {
    parse_ablation_with(text, Settings::default())
}

/// Like [`parse_ablation`], starting from `base` instead of the defaults.
pub fn parse_ablation_with(text: &str, mut base: Settings) -> Result<AblationPlan> {
    let sections = parse_sections(text)?;
    base.apply(&sections[0].entries)?;
    let mut cells = Vec::new();
    for s in &sections[1..] {
        let name = s.name.clone().expect("headers carry names");
        if cells.iter().any(|c: &Cell| c.name == name) {
            return Err(line_err(s.line, format!("duplicate cell {name:?}")));
        }
        let mut settings = base.clone();
        for e in &s.entries {
            if DATA_KEYS.contains(&e.key.as_str()) || e.key == "seeds" {
                return Err(line_err(e.line, format!("{:?} must be set before the first cell", e.key)));
            }
        }
        settings.apply(&s.entries)?;
        let cell = settings.cell(&name);
        cell.model.validate()?;
        cell.train.validate()?;
        cells.push(cell);
    }
    if cells.is_empty() {
        return Err(Error::config("ablation spec defines no `[cell NAME]` sections"));
    }
    base.data.validate()?;
    Ok(AblationPlan {
        data: base.data,
        cells,
        seeds: (0..base.seeds as u64).collect(),
    })
}

pub fn load_ablation(path: &Path) -> Result<AblationPlan> {
    parse_ablation(&read(path)?)
}

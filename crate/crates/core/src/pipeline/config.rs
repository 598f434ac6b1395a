//! Run configuration: a TOML file with one table per component, plus
//! `key.path=value` overrides from the command line.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::text_encoder::TextEncoderConfig;
use crate::vgae::VgaeConfig;

/// Model variant. `Full` is the complete network; the others remove or
/// replace one part of the fusion block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    #[default]
    #[serde(rename = "full")]
    Full,
    /// No emoji input at all.
    N,
    /// Text-guided emoji unit removed; projected emoji features used as is.
    T,
    /// Emoji-guided text unit removed; projected text features used as is.
    E,
    /// Self-attention removed; projected text features used as is.
    #[serde(rename = "RA1")]
    Ra1,
    /// Text-guided emoji unit replaced by a projection of the raw emoji vectors.
    #[serde(rename = "RA2")]
    Ra2,
    /// Emoji-guided text unit replaced by a projection of the second LSTM layer.
    #[serde(rename = "RA3")]
    Ra3,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::Full,
        Ablation::N,
        Ablation::T,
        Ablation::E,
        Ablation::Ra1,
        Ablation::Ra2,
        Ablation::Ra3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::N => "N",
            Ablation::T => "T",
            Ablation::E => "E",
            Ablation::Ra1 => "RA1",
            Ablation::Ra2 => "RA2",
            Ablation::Ra3 => "RA3",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}; expected one of full, N, T, E, RA1, RA2, RA3")))
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Unlabeled posts, one per line, for the co-occurrence graph.
    pub corpus: PathBuf,
    /// Emoji sense inventory (JSON).
    pub inventory: PathBuf,
    /// Word vectors in the text table format.
    pub word_vectors: PathBuf,
    /// Labeled JSON-lines training posts.
    pub train: PathBuf,
    /// Labeled JSON-lines evaluation posts.
    pub test: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub min_pair_count: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { min_pair_count: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Let classifier gradients update the emoji embeddings.
    pub finetune_emoji: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-3,
            batch_size: 32,
            finetune_emoji: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub top_k: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { top_k: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub num_classes: usize,
    pub ablation: Ablation,
    pub paths: PathsConfig,
    pub graph: GraphConfig,
    pub vgae: VgaeConfig,
    pub text: TextEncoderConfig,
    pub fusion: FusionConfig,
    pub classifier: ClassifierConfig,
    pub training: TrainingConfig,
    pub cluster: ClusterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_classes: 2,
            ablation: Ablation::Full,
            paths: PathsConfig::default(),
            graph: GraphConfig::default(),
            vgae: VgaeConfig::default(),
            text: TextEncoderConfig::default(),
            fusion: FusionConfig::default(),
            classifier: ClassifierConfig::default(),
            training: TrainingConfig::default(),
            cluster: ClusterConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text, applies `overrides` (`section.key=value`) and
    /// validates. Unknown keys are errors.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let reference = toml::Table::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        check_known_keys(&value, &reference, "")?;
        for o in overrides {
            apply_override(&mut value, &reference, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve_against(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.training.batch_size == 0 {
            return fail("training.batch_size must be positive".into());
        }
        if !(self.training.lr > 0.0) || !(self.vgae.lr > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if self.vgae.hidden == 0 || self.vgae.latent == 0 || !self.vgae.latent.is_multiple_of(2) {
            return fail(format!(
                "vgae.hidden must be positive and vgae.latent positive and even, got {} and {}",
                self.vgae.hidden, self.vgae.latent
            ));
        }
        if self.text.hidden == 0 || self.text.max_len == 0 || !(self.text.pe_base > 0.0) {
            return fail("text.hidden, text.max_len and text.pe_base must be positive".into());
        }
        if self.fusion.d == 0 || self.fusion.d_ff == 0 {
            return fail("fusion.d and fusion.d_ff must be positive".into());
        }
        self.classifier.validate()
    }
}

impl PathsConfig {
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.inventory,
            &mut self.word_vectors,
            &mut self.train,
            &mut self.test,
            &mut self.output_dir,
        ] {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Returns `path` or a config error naming `key` when it is unset.
pub fn require_path<'a>(path: &'a Path, key: &str) -> Result<&'a Path> {
    if path.as_os_str().is_empty() {
        return Err(Error::Config(format!("{key} is not set")));
    }
    Ok(path)
}

fn check_known_keys(value: &toml::Table, reference: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in value {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (reference.get(k), v) {
            (None, _) => return Err(Error::Config(format!("unknown key {key}"))),
            (Some(toml::Value::Table(r)), toml::Value::Table(t)) => check_known_keys(t, r, &key)?,
            (Some(toml::Value::Table(_)), _) => return Err(Error::Config(format!("{key} must be a table"))),
            _ => {}
        }
    }
    Ok(())
}

fn apply_override(value: &mut toml::Table, reference: &toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut table = value;
    let mut reference = reference;
    for s in sections {
        reference = match reference.get(*s) {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        };
        table = match table
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("{s} must be a table"))),
        };
    }
    if matches!(reference.get(*last), None | Some(toml::Value::Table(_))) {
        return Err(Error::Config(format!("unknown key {key}")));
    }
    table.insert(last.to_string(), parse_scalar(raw.trim()));
    Ok(())
}

/// A TOML literal if `raw` parses as one, otherwise the bare string.
fn parse_scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

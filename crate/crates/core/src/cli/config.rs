//! Run configuration.
//!
//! TOML with `key = value` lines and `[section]` headers. Unknown keys are
//! rejected. Every key except `seed` and `model.dims` has a default:
//!
//! ```toml
//! seed = 1
//! out_dir = "run"
//!
//! [data]
//! source = "synthetic"      # or "idx" / "csv" with train/test paths
//! train_samples = 6000
//! test_samples = 2000
//! num_classes = 10
//! forget_class = 0
//!
//! [model]
//! dims = [784, 256, 128, 10]
//! pretrain_epochs = 4
//! pretrain_lr = 0.01
//!
//! [personalization]
//! samples = 3000
//! epochs = 1
//! lr = 0.005
//! trainable_layers = [1, 2]
//!
//! [unlearning]
//! fraction = 0.02
//! epsilon = 1e-6
//! target_layers = [0, 1]
//! scope = "with_outgoing"   # or "incoming"
//! samples = 1000
//!
//! [obs]
//! block_size = 32
//! damping = "auto"          # or a positive number
//! weight_frac_bits = 24
//! fisher_frac_bits = 20
//!
//! [protocol]
//! backend = "merkle"        # or "pedersen"
//! repetitions = 3
//!
//! [paths]                   # relative to out_dir
//! pretrained = "pretrained.unlm"
//! ...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Architecture, DataFormat};
use crate::numeric::{FISHER_FRAC_BITS, WEIGHT_FRAC_BITS};
use crate::obs::Damping;
use crate::protocol::Backend;
use crate::unlearn::MaskScope;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub personalization: PersonalizationConfig,
    #[serde(default)]
    pub unlearning: UnlearningConfig,
    #[serde(default)]
    pub obs: ObsConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Training images for `idx`/`csv` sources.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub train_samples: usize,
    pub test_samples: usize,
    pub num_classes: usize,
    pub forget_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            train: None,
            test: None,
            train_samples: 6000,
            test_samples: 2000,
            num_classes: 10,
            forget_class: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dims: Vec<usize>,
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_pretrain_lr")]
    pub pretrain_lr: f64,
}

fn default_pretrain_epochs() -> usize {
    4
}

fn default_pretrain_lr() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PersonalizationConfig {
    pub samples: usize,
    pub epochs: usize,
    pub lr: f64,
    pub trainable_layers: Vec<usize>,
}

impl Default for PersonalizationConfig {
    fn default() -> Self {
        Self {
            samples: 3000,
            epochs: 1,
            lr: 0.005,
            trainable_layers: vec![1, 2],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeName {
    Incoming,
    WithOutgoing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnlearningConfig {
    pub fraction: f64,
    pub epsilon: f64,
    pub target_layers: Vec<usize>,
    pub scope: ScopeName,
    /// Size of the sample drawn for the forget and retain importance sets.
    pub samples: usize,
}

impl Default for UnlearningConfig {
    fn default() -> Self {
        Self {
            fraction: 0.02,
            epsilon: crate::unlearn::DEFAULT_EPSILON,
            target_layers: vec![0, 1],
            scope: ScopeName::WithOutgoing,
            samples: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DampingRule {
    Fixed(f64),
    Named(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsConfig {
    pub block_size: usize,
    pub damping: DampingRule,
    pub weight_frac_bits: u32,
    pub fisher_frac_bits: u32,
}

impl Default for ObsConfig {
    fn default() -> Self {
        Self {
            block_size: crate::obs::DEFAULT_BLOCK_SIZE,
            damping: DampingRule::Named("auto".into()),
            weight_frac_bits: WEIGHT_FRAC_BITS,
            fisher_frac_bits: FISHER_FRAC_BITS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub backend: String,
    pub repetitions: u32,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            backend: "merkle".into(),
            repetitions: crate::protocol::DEFAULT_REPETITIONS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub pretrained: PathBuf,
    pub personalized: PathBuf,
    pub fisher: PathBuf,
    pub mask: PathBuf,
    pub masked: PathBuf,
    pub unlearned: PathBuf,
    pub com_p: PathBuf,
    pub com_h: PathBuf,
    pub com_p_post: PathBuf,
    pub openings: PathBuf,
    pub proof: PathBuf,
    pub proof_json: PathBuf,
    /// Stem of the report; `.txt` and `.csv` are appended.
    pub report: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        let p = PathBuf::from;
        Self {
            pretrained: p("pretrained.unlm"),
            personalized: p("personalized.unlm"),
            fisher: p("fisher.ufsh"),
            mask: p("mask.umsk"),
            masked: p("masked.unlm"),
            unlearned: p("unlearned.unlm"),
            com_p: p("com_p.ucom"),
            com_h: p("com_h.ucom"),
            com_p_post: p("com_p_post.ucom"),
            openings: p("openings.uopn"),
            proof: p("proof.uprf"),
            proof_json: p("proof.json"),
            report: p("report"),
        }
    }
}

/// Byte offset to 1-based line number.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[section]` (empty section = top level).
fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = h.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        if let Err((section, key, message)) = cfg.check() {
            return Err(Error::Config {
                line: key_line(text, section, key).unwrap_or(0),
                message: format!("{}: {message}", dotted(section, key)),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies `section.key=value` overrides; values are TOML literals, and
    /// anything that does not parse as one is taken as a string.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        if sets.is_empty() {
            return Ok(self.clone());
        }
        let mut table = toml::Table::try_from(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for s in sets {
            let (path, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set `{s}` is not key=value")))?;
            let value = parse_literal(raw.trim());
            let keys: Vec<&str> = path.trim().split('.').collect();
            let (last, parents) = keys.split_last().unwrap();
            let mut t = &mut table;
            for k in parents {
                t = t
                    .entry(k.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()))
                    .as_table_mut()
                    .ok_or_else(|| Error::InvalidArgument(format!("--set {path}: `{k}` is not a section")))?;
            }
            t.insert(last.to_string(), value);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidArgument(format!("--set: {}", e.message())))?;
        cfg.check()
            .map_err(|(section, key, m)| Error::InvalidArgument(format!("--set {}: {m}", dotted(section, key))))?;
        Ok(cfg)
    }

    /// First invalid value as `(section, key, message)`.
    fn check(&self) -> std::result::Result<(), (&'static str, &'static str, String)> {
        let u = &self.unlearning;
        if !(u.fraction > 0.0 && u.fraction <= 1.0) {
            return Err(("unlearning", "fraction", format!("must be in (0, 1], got {}", u.fraction)));
        }
        if !(u.epsilon > 0.0 && u.epsilon.is_finite()) {
            return Err(("unlearning", "epsilon", format!("must be positive, got {}", u.epsilon)));
        }
        if u.samples == 0 {
            return Err(("unlearning", "samples", "must be positive".into()));
        }
        let arch = Architecture::mlp(&self.model.dims).map_err(|e| ("model", "dims", e.to_string()))?;
        if let Some(&l) = u.target_layers.iter().find(|&&l| !arch.is_hidden(l)) {
            return Err(("unlearning", "target_layers", format!("layer {l} is not a hidden layer")));
        }
        if u.target_layers.is_empty() {
            return Err(("unlearning", "target_layers", "must name at least one hidden layer".into()));
        }
        if let Some(&l) = self.personalization.trainable_layers.iter().find(|&&l| l >= arch.num_layers()) {
            return Err(("personalization", "trainable_layers", format!("layer {l} does not exist")));
        }
        if !(self.personalization.lr > 0.0) {
            return Err(("personalization", "lr", "must be positive".into()));
        }
        if !(self.model.pretrain_lr > 0.0) {
            return Err(("model", "pretrain_lr", "must be positive".into()));
        }
        let d = &self.data;
        if d.num_classes != arch.output_dim() {
            return Err(("data", "num_classes", format!("{} classes but the model has {} outputs", d.num_classes, arch.output_dim())));
        }
        if d.forget_class >= d.num_classes {
            return Err(("data", "forget_class", format!("must be below num_classes = {}", d.num_classes)));
        }
        if d.source != DataSource::Synthetic && (d.train.is_none() || d.test.is_none()) {
            return Err(("data", "train", "file sources need both `train` and `test` paths".into()));
        }
        if d.source == DataSource::Synthetic && arch.input_dim() != 784 {
            return Err(("model", "dims", "synthetic digits are 784-dimensional".into()));
        }
        let o = &self.obs;
        if o.block_size < 2 || o.block_size > 4096 {
            return Err(("obs", "block_size", format!("must be in [2, 4096], got {}", o.block_size)));
        }
        if o.weight_frac_bits != WEIGHT_FRAC_BITS {
            return Err(("obs", "weight_frac_bits", format!("only {WEIGHT_FRAC_BITS} is supported")));
        }
        if o.fisher_frac_bits != FISHER_FRAC_BITS {
            return Err(("obs", "fisher_frac_bits", format!("only {FISHER_FRAC_BITS} is supported")));
        }
        self.damping().map_err(|e| ("obs", "damping", e.to_string()))?;
        self.backend().map_err(|e| ("protocol", "backend", e.to_string()))?;
        if !(1..=64).contains(&self.protocol.repetitions) {
            return Err(("protocol", "repetitions", format!("must be in [1, 64], got {}", self.protocol.repetitions)));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::mlp(&self.model.dims)
    }

    pub fn damping(&self) -> Result<Damping> {
        match &self.obs.damping {
            DampingRule::Fixed(v) if *v > 0.0 && v.is_finite() => Ok(Damping::Fixed(*v)),
            DampingRule::Fixed(v) => Err(Error::InvalidArgument(format!("damping must be positive, got {v}"))),
            DampingRule::Named(s) if s == "auto" => Ok(Damping::Auto),
            DampingRule::Named(s) => Err(Error::InvalidArgument(format!("damping must be \"auto\" or a number, got `{s}`"))),
        }
    }

    pub fn backend(&self) -> Result<Backend> {
        self.protocol.backend.parse()
    }

    pub fn scope(&self) -> MaskScope {
        match self.unlearning.scope {
            ScopeName::Incoming => MaskScope::Incoming,
            ScopeName::WithOutgoing => MaskScope::WithOutgoing,
        }
    }

    pub fn data_format(&self) -> Option<DataFormat> {
        match self.data.source {
            DataSource::Synthetic => None,
            DataSource::Idx => Some(DataFormat::Idx),
            DataSource::Csv => Some(DataFormat::Csv),
        }
    }

    /// `paths.*` resolved against `out_dir`.
    pub fn path(&self, p: &Path) -> PathBuf {
        self.out_dir.join(p)
    }

    pub fn report_paths(&self) -> (PathBuf, PathBuf) {
        let stem = self.path(&self.paths.report);
        (stem.with_extension("txt"), stem.with_extension("csv"))
    }
}

fn dotted(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

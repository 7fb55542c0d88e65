//! Run configuration: one TOML document covering every stage.
//!
//! Precedence, lowest to highest: built-in defaults (the desk profile), the
//! preset named by `model.profile`, explicit values in the file, then
//! command-line flags. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::AdadeltaConfig;
use crate::tokenizer::{Alphabet, OovPolicy};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub cells_per_direction: usize,
    /// 1-based layers whose input is subsampled.
    pub subsample_layers: Vec<usize>,
    pub subsample_factor: usize,
    pub batch_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EncoderConfig {
    /// 2 × 64 cells, both layers subsampling by 2.
    pub fn desk() -> Self {
        Self {
            num_layers: 2,
            cells_per_direction: 64,
            subsample_layers: vec![1, 2],
            subsample_factor: 2,
            batch_norm: true,
        }
    }

    /// 8 × 320 cells, top two layers subsampling by 2.
    pub fn paper() -> Self {
        Self {
            num_layers: 8,
            cells_per_direction: 320,
            subsample_layers: vec![7, 8],
            subsample_factor: 2,
            batch_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.cells_per_direction == 0 {
            return Err(Error::Config("encoder.num_layers and encoder.cells_per_direction must be positive".into()));
        }
        if self.subsample_factor == 0 {
            return Err(Error::Config("encoder.subsample_factor must be at least 1".into()));
        }
        if let Some(l) = self.subsample_layers.iter().find(|&&l| l == 0 || l > self.num_layers) {
            return Err(Error::Config(format!(
                "encoder.subsample_layers entry {l} outside 1..={}",
                self.num_layers
            )));
        }
        Ok(())
    }

    /// Overall frame reduction of the subsampling schedule.
    pub fn total_subsampling(&self) -> usize {
        self.subsample_factor.pow(self.subsample_layers.len() as u32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub cells: usize,
    pub embedding_dim: usize,
    pub attention_dim: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DecoderConfig {
    pub fn desk() -> Self {
        Self {
            cells: 64,
            embedding_dim: 64,
            attention_dim: 64,
            conv_filters: 10,
            conv_width: 5,
        }
    }

    pub fn paper() -> Self {
        Self {
            cells: 320,
            embedding_dim: 320,
            attention_dim: 320,
            conv_filters: 10,
            conv_width: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("cells", self.cells),
            ("embedding_dim", self.embedding_dim),
            ("attention_dim", self.attention_dim),
            ("conv_filters", self.conv_filters),
            ("conv_width", self.conv_width),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("decoder.{name} must be positive"))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub profile: Profile,
    pub init_scale: Option<f64>,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSection {
    pub num_merges: usize,
    pub alphabet: String,
    pub oov_policy: OovPolicy,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self {
            num_merges: 500,
            alphabet: Alphabet::default().as_string(),
            oov_policy: OovPolicy::Reject,
        }
    }
}

impl TokenizerSection {
    pub fn alphabet(&self) -> Result<Alphabet> {
        Alphabet::new(self.alphabet.chars())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesSection {
    pub num_mel: usize,
    /// Per-speaker mean and variance normalization.
    pub cmvn: bool,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        Self { num_mel: 40, cmvn: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_max_norm: f64,
    pub seed: u64,
    pub adadelta: AdadeltaConfig,
    /// Stop once the dev WER (percent) is at or below this value.
    pub target_dev_wer: Option<f64>,
    /// Beam width for the per-epoch dev WER; 1 decodes greedily.
    pub dev_beam: usize,
    /// Write real elapsed time to the metrics log; `false` writes 0 so logs
    /// of identical runs compare byte for byte.
    pub log_wall_time: bool,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            epochs: 20,
            batch_size: 8,
            clip_max_norm: 5.0,
            seed: 1,
            adadelta: AdadeltaConfig::default(),
            target_dev_wer: None,
            dev_beam: 1,
            log_wall_time: true,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("hybrid.lambda must lie in [0,1], got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("hybrid.batch_size must be positive".into()));
        }
        if self.dev_beam == 0 {
            return Err(Error::Config("hybrid.dev_beam must be positive".into()));
        }
        if !(self.clip_max_norm > 0.0) {
            return Err(Error::Config("hybrid.clip_max_norm must be positive".into()));
        }
        self.adadelta.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub beam: usize,
    /// Defaults to `2·L + 10` for `L` encoder frames.
    pub max_len: Option<usize>,
    /// Added per emitted token when ranking; 0 ranks by raw log-probability.
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 20,
            max_len: None,
            length_penalty: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub merges: Option<PathBuf>,
    pub units: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub tokenizer: TokenizerSection,
    pub features: FeaturesSection,
    pub model: ModelSection,
    pub hybrid: HybridConfig,
    pub decode: DecodeConfig,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            tokenizer: TokenizerSection::default(),
            features: FeaturesSection::default(),
            model: ModelSection::default(),
            hybrid: HybridConfig::default(),
            decode: DecodeConfig::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let profile = match user.get("model").and_then(|m| m.get("profile")) {
            Some(v) => Profile::deserialize(v.clone()).map_err(|e| Error::Config(format!("model.profile: {}", e.message())))?,
            None => Profile::Desk,
        };
        let mut base = RunConfig::default();
        if profile == Profile::Paper {
            base.model.profile = Profile::Paper;
            base.model.encoder = EncoderConfig::paper();
            base.model.decoder = DecoderConfig::paper();
        }
        let mut merged = toml::Table::try_from(&base).expect("defaults serialize");
        merge_tables(&mut merged, user);
        let config: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "version: unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.tokenizer.alphabet()?;
        if self.features.num_mel == 0 {
            return Err(Error::Config("features.num_mel must be positive".into()));
        }
        self.model.encoder.validate()?;
        self.model.decoder.validate()?;
        self.hybrid.validate()?;
        if self.decode.beam == 0 {
            return Err(Error::Config("decode.beam must be at least 1".into()));
        }
        if self.decode.max_len == Some(0) {
            return Err(Error::Config("decode.max_len must be at least 1".into()));
        }
        Ok(())
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

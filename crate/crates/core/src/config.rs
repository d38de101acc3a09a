//! Run configuration: flat `key = value` lines with dotted section prefixes.
//!
//! ```text
//! seed = 7
//! attention.variant = mfsc
//! network.channels = 16, 32, 64
//! ```
//!
//! `#` starts a comment. Keys missing from a file keep their defaults.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attention::{Aggregation, Variant};
use crate::error::{Error, Result};
use crate::features::{crop_frames, MaskConfig, MelConfig, SynthConfig};
use crate::speakernet::{Adam, NetworkConfig, StageConfig, TrainConfig};

pub const SEED_ENV: &str = "FREQATTN_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    List,
}

impl FromStr for DataSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(DataSource::Synthetic),
            "list" => Ok(DataSource::List),
            other => Err(Error::Config(format!("unknown data source {other:?} (synthetic|list)"))),
        }
    }
}

impl Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataSource::Synthetic => "synthetic",
            DataSource::List => "list",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSection {
    pub mel: MelConfig,
    pub sample_rate: u32,
    pub crop_seconds: f64,
    pub spec_mask: bool,
    pub mask: MaskConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSection {
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub embedding_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSection {
    pub variant: Variant,
    pub k: Vec<usize>,
    pub aggregation: Aggregation,
    pub reduction: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSection {
    pub margin: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub source: DataSource,
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathsSection {
    /// Lines of `<speaker> <utterance id>`.
    pub train_list: Option<PathBuf>,
    /// Directory holding `<utterance id>.feat` files.
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub features: FeatureSection,
    pub network: NetworkSection,
    pub attention: AttentionSection,
    pub loss: LossSection,
    pub optimizer: OptimizerSection,
    pub data: DataSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            features: FeatureSection {
                mel: MelConfig::default(),
                sample_rate: 16000,
                crop_seconds: 2.0,
                spec_mask: false,
                mask: MaskConfig::default(),
            },
            network: NetworkSection {
                in_channels: 1,
                channels: vec![16, 32, 64],
                kernels: vec![3, 3, 3],
                strides: vec![2, 2, 2],
                embedding_dim: 64,
            },
            attention: AttentionSection {
                variant: Variant::Mfsc,
                k: vec![4, 8, 16],
                aggregation: Aggregation::AvgMax,
                reduction: 8,
            },
            loss: LossSection { margin: 0.2, scale: 30.0 },
            optimizer: OptimizerSection { lr: 1e-3, epochs: 30, batch: 8, beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            data: DataSection { source: DataSource::Synthetic, num_speakers: 20, utts_per_speaker: 20, frames: 240 },
            paths: PathsSection::default(),
        }
    }
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn path_value(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = &self.features;
        let n = &self.network;
        let a = &self.attention;
        let o = &self.optimizer;
        let d = &self.data;
        vec![
            ("seed", self.seed.to_string()),
            ("features.sample_rate", f.sample_rate.to_string()),
            ("features.n_mels", f.mel.n_mels.to_string()),
            ("features.frame_len_ms", f.mel.frame_len_ms.to_string()),
            ("features.frame_shift_ms", f.mel.frame_shift_ms.to_string()),
            ("features.n_fft", f.mel.n_fft.to_string()),
            ("features.fmin", f.mel.fmin.to_string()),
            ("features.fmax", f.mel.fmax.map_or_else(|| "nyquist".to_string(), |v| v.to_string())),
            ("features.log_floor", f.mel.log_floor.to_string()),
            ("features.crop_seconds", f.crop_seconds.to_string()),
            ("features.spec_mask", f.spec_mask.to_string()),
            ("features.max_f_mask", f.mask.max_f_mask.to_string()),
            ("features.max_t_mask", f.mask.max_t_mask.to_string()),
            ("features.n_masks", f.mask.n_masks.to_string()),
            ("network.in_channels", n.in_channels.to_string()),
            ("network.channels", list(&n.channels)),
            ("network.kernels", list(&n.kernels)),
            ("network.strides", list(&n.strides)),
            ("network.embedding_dim", n.embedding_dim.to_string()),
            ("attention.variant", a.variant.to_string()),
            ("attention.k", list(&a.k)),
            ("attention.aggregation", a.aggregation.to_string()),
            ("attention.reduction", a.reduction.to_string()),
            ("loss.margin", self.loss.margin.to_string()),
            ("loss.scale", self.loss.scale.to_string()),
            ("optimizer.lr", o.lr.to_string()),
            ("optimizer.epochs", o.epochs.to_string()),
            ("optimizer.batch", o.batch.to_string()),
            ("optimizer.beta1", o.beta1.to_string()),
            ("optimizer.beta2", o.beta2.to_string()),
            ("optimizer.eps", o.eps.to_string()),
            ("data.source", d.source.to_string()),
            ("data.num_speakers", d.num_speakers.to_string()),
            ("data.utts_per_speaker", d.utts_per_speaker.to_string()),
            ("data.frames", d.frames.to_string()),
            ("paths.train_list", path_value(&self.paths.train_list)),
            ("paths.features", path_value(&self.paths.features)),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = &mut self.features;
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "features.sample_rate" => f.sample_rate = parse_value(key, value)?,
            "features.n_mels" => f.mel.n_mels = parse_value(key, value)?,
            "features.frame_len_ms" => f.mel.frame_len_ms = parse_value(key, value)?,
            "features.frame_shift_ms" => f.mel.frame_shift_ms = parse_value(key, value)?,
            "features.n_fft" => f.mel.n_fft = parse_value(key, value)?,
            "features.fmin" => f.mel.fmin = parse_value(key, value)?,
            "features.fmax" => f.mel.fmax = if value == "nyquist" { None } else { Some(parse_value(key, value)?) },
            "features.log_floor" => f.mel.log_floor = parse_value(key, value)?,
            "features.crop_seconds" => f.crop_seconds = parse_value(key, value)?,
            "features.spec_mask" => f.spec_mask = parse_value(key, value)?,
            "features.max_f_mask" => f.mask.max_f_mask = parse_value(key, value)?,
            "features.max_t_mask" => f.mask.max_t_mask = parse_value(key, value)?,
            "features.n_masks" => f.mask.n_masks = parse_value(key, value)?,
            "network.in_channels" => self.network.in_channels = parse_value(key, value)?,
            "network.channels" => self.network.channels = parse_list(key, value)?,
            "network.kernels" => self.network.kernels = parse_list(key, value)?,
            "network.strides" => self.network.strides = parse_list(key, value)?,
            "network.embedding_dim" => self.network.embedding_dim = parse_value(key, value)?,
            "attention.variant" => self.attention.variant = value.parse()?,
            "attention.k" => self.attention.k = parse_list(key, value)?,
            "attention.aggregation" => self.attention.aggregation = value.parse()?,
            "attention.reduction" => self.attention.reduction = parse_value(key, value)?,
            "loss.margin" => self.loss.margin = parse_value(key, value)?,
            "loss.scale" => self.loss.scale = parse_value(key, value)?,
            "optimizer.lr" => self.optimizer.lr = parse_value(key, value)?,
            "optimizer.epochs" => self.optimizer.epochs = parse_value(key, value)?,
            "optimizer.batch" => self.optimizer.batch = parse_value(key, value)?,
            "optimizer.beta1" => self.optimizer.beta1 = parse_value(key, value)?,
            "optimizer.beta2" => self.optimizer.beta2 = parse_value(key, value)?,
            "optimizer.eps" => self.optimizer.eps = parse_value(key, value)?,
            "data.source" => self.data.source = value.parse()?,
            "data.num_speakers" => self.data.num_speakers = parse_value(key, value)?,
            "data.utts_per_speaker" => self.data.utts_per_speaker = parse_value(key, value)?,
            "data.frames" => self.data.frames = parse_value(key, value)?,
            "paths.train_list" => self.paths.train_list = parse_path(value),
            "paths.features" => self.paths.features = parse_path(value),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. No validation.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key = value, got {line:?}") })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse { line: i + 1, msg: format!("duplicate key {key:?}") });
            }
            cfg.set(key, value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Parse { line: i + 1, msg },
                other => other,
            })?;
        }
        Ok(cfg)
    }

    /// Canonical text: every key, fixed order.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Reads, applies the seed override from the environment and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn crop_frames(&self) -> usize {
        crop_frames(self.features.crop_seconds, self.features.mel.frame_shift_ms)
    }

    /// Network settings for `num_speakers` classes.
    pub fn network_config(&self, num_speakers: usize) -> Result<NetworkConfig> {
        let n = &self.network;
        let stages = n.channels.len();
        if n.kernels.len() != stages || n.strides.len() != stages {
            return Err(Error::Config(format!(
                "network.channels, kernels and strides need equal lengths, got {}, {}, {}",
                stages,
                n.kernels.len(),
                n.strides.len()
            )));
        }
        let k = match (self.attention.variant, self.attention.k.len()) {
            (_, len) if len == stages => self.attention.k.clone(),
            (Variant::Se, _) => vec![1; stages],
            (_, len) => {
                return Err(Error::Config(format!("attention.k has {len} entries for {stages} stages")));
            }
        };
        Ok(NetworkConfig {
            in_channels: n.in_channels,
            input_mels: self.features.mel.n_mels,
            input_frames: self.crop_frames(),
            stages: (0..stages)
                .map(|i| StageConfig { out_channels: n.channels[i], kernel: n.kernels[i], stride: n.strides[i], k: k[i] })
                .collect(),
            variant: self.attention.variant,
            aggregation: self.attention.aggregation,
            reduction: self.attention.reduction,
            embedding_dim: n.embedding_dim,
            num_speakers,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.optimizer.batch,
            crop_frames: self.crop_frames(),
            mask: self.features.spec_mask.then_some(self.features.mask),
        }
    }

    pub fn optimizer(&self) -> Adam {
        let o = &self.optimizer;
        Adam::new(o.lr).with_betas(o.beta1, o.beta2, o.eps)
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_speakers: self.data.num_speakers,
            utts_per_speaker: self.data.utts_per_speaker,
            frames: self.data.frames,
            n_mels: self.features.mel.n_mels,
            seed: self.seed,
        }
    }

    /// Semantic checks, including that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        self.features.mel.validate(self.features.sample_rate)?;
        if self.crop_frames() == 0 {
            return Err(Error::Config("features.crop_seconds gives zero frames".into()));
        }
        let speakers = match self.data.source {
            DataSource::Synthetic => self.data.num_speakers,
            DataSource::List => 2,
        };
        self.network_config(speakers)?.validate()?;
        if !(self.loss.margin >= 0.0 && self.loss.scale > 0.0) {
            return Err(Error::Config(format!("loss needs margin >= 0 and scale > 0, got {:?}", self.loss)));
        }
        if self.optimizer.batch == 0 || self.optimizer.epochs == 0 {
            return Err(Error::Config("optimizer.batch and optimizer.epochs must be positive".into()));
        }
        self.optimizer().validate()?;
        match self.data.source {
            DataSource::Synthetic => {
                if self.data.utts_per_speaker == 0 || self.data.frames == 0 {
                    return Err(Error::Config("data.utts_per_speaker and data.frames must be positive".into()));
                }
            }
            DataSource::List => {
                let list = self.paths.train_list.as_ref().ok_or_else(|| {
                    Error::Config("data.source = list needs paths.train_list".into())
                })?;
                if !list.is_file() {
                    return Err(Error::Config(format!("paths.train_list {} does not exist", list.display())));
                }
                let dir = self.paths.features.as_ref().ok_or_else(|| {
                    Error::Config("data.source = list needs paths.features".into())
                })?;
                if !dir.is_dir() {
                    return Err(Error::Config(format!("paths.features {} is not a directory", dir.display())));
                }
            }
        }
        Ok(())
    }
}

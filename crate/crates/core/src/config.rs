//! Plain-text `key = value` configuration.
//!
//! One flat format serves model configs, training configs, dataset spec
//! files, and manifests. `#` starts a comment, blank lines are skipped, and
//! a `[section]` header prefixes the keys that follow with `section.`.
//! Parse errors name the offending line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ttgf::FusionTopology;

/// Parsed key/value pairs in file order, with line numbers for diagnostics.
#[derive(Debug, Clone, Default)]
pub struct KvMap {
    pairs: Vec<(String, String, usize)>,
    index: BTreeMap<String, usize>,
}

impl KvMap {
    pub fn parse(text: &str, label: &str) -> Result<Self> {
        let mut map = KvMap::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if section.is_empty() {
                    return Err(Error::ConfigLine {
                        file: label.to_string(),
                        line: line_no,
                        msg: "empty section name".into(),
                    });
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigLine {
                file: label.to_string(),
                line: line_no,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::ConfigLine {
                    file: label.to_string(),
                    line: line_no,
                    msg: "empty key".into(),
                });
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            map.insert_line(full, value.trim().to_string(), line_no);
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    fn insert_line(&mut self, key: String, value: String, line: usize) {
        if let Some(&at) = self.index.get(&key) {
            self.pairs[at] = (key, value, line);
        } else {
            self.index.insert(key.clone(), self.pairs.len());
            self.pairs.push((key, value, line));
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.insert_line(key.to_string(), value.to_string(), 0);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.index.get(key).map(|&i| self.pairs[i].1.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing key '{key}'")))
    }

    pub fn parse_key<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|e| Error::Config(format!("key '{key}': cannot parse '{raw}': {e}")))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(_) => self.parse_key(key),
        }
    }

    /// Keys beginning with `prefix.`, with the prefix stripped, in file order.
    pub fn section(&self, prefix: &str) -> Vec<(String, String)> {
        let want = format!("{prefix}.");
        self.pairs
            .iter()
            .filter_map(|(k, v, _)| {
                k.strip_prefix(&want)
                    .map(|rest| (rest.to_string(), v.clone()))
            })
            .collect()
    }

    /// Distinct first components of sectioned keys, in first-seen order.
    pub fn section_names(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for (k, _, _) in &self.pairs {
            if let Some((head, _)) = k.split_once('.') {
                if !seen.iter().any(|s| s == head) {
                    seen.push(head.to_string());
                }
            }
        }
        seen
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(k, v, _)| (k.as_str(), v.as_str()))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v, _) in &self.pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Architecture hyperparameters. `feature_dim` doubles as the token width
/// of the first fusion stage; the second stage runs at `2 * proj_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub topology: FusionTopology,
    pub feature_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub mlp_hidden: usize,
    pub proj_dim: usize,
    pub gaze_hidden: usize,
    pub gam_hidden: usize,
    pub face_size: usize,
    pub eye_size: usize,
    pub in_channels: usize,
    pub conv_channels: Vec<usize>,
}

impl ModelConfig {
    /// Desk-scale default: trains in minutes on one CPU core.
    pub fn toy() -> Self {
        ModelConfig {
            topology: FusionTopology::EhLr,
            feature_dim: 32,
            num_heads: 4,
            num_blocks: 2,
            mlp_hidden: 64,
            proj_dim: 16,
            gaze_hidden: 32,
            gam_hidden: 16,
            face_size: 32,
            eye_size: 16,
            in_channels: 1,
            conv_channels: vec![8, 16, 32],
        }
    }

    /// Small enough for exhaustive finite-difference checking of every
    /// parameter (a few thousand in total).
    pub fn tiny() -> Self {
        ModelConfig {
            topology: FusionTopology::EhLr,
            feature_dim: 8,
            num_heads: 2,
            num_blocks: 1,
            mlp_hidden: 8,
            proj_dim: 4,
            gaze_hidden: 8,
            gam_hidden: 4,
            face_size: 8,
            eye_size: 8,
            in_channels: 1,
            conv_channels: vec![2, 4, 6],
        }
    }

    /// Full-scale hyperparameters: 8 heads, 8 blocks, 2048-wide MLPs,
    /// 128-dim projections, 224/128 px RGB inputs, 512-dim stream features.
    /// Constructible and shape-correct; not intended for CPU training.
    pub fn paper_scale() -> Self {
        ModelConfig {
            topology: FusionTopology::EhLr,
            feature_dim: 512,
            num_heads: 8,
            num_blocks: 8,
            mlp_hidden: 2048,
            proj_dim: 128,
            gaze_hidden: 128,
            gam_hidden: 128,
            face_size: 224,
            eye_size: 128,
            in_channels: 3,
            conv_channels: vec![8, 16, 32],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.proj_dim == 0 {
            return Err(Error::Config("feature_dim and proj_dim must be positive".into()));
        }
        if self.num_heads == 0 || self.feature_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "feature_dim {} not divisible by num_heads {}",
                self.feature_dim, self.num_heads
            )));
        }
        if (2 * self.proj_dim) % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "second-stage width {} not divisible by num_heads {}",
                2 * self.proj_dim,
                self.num_heads
            )));
        }
        if self.num_blocks == 0 {
            return Err(Error::Config("num_blocks must be at least 1".into()));
        }
        if self.conv_channels.is_empty() {
            return Err(Error::Config("conv_channels must not be empty".into()));
        }
        if self.face_size == 0 || self.eye_size == 0 || self.in_channels == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.set("model.topology", self.topology);
        kv.set("model.feature_dim", self.feature_dim);
        kv.set("model.num_heads", self.num_heads);
        kv.set("model.num_blocks", self.num_blocks);
        kv.set("model.mlp_hidden", self.mlp_hidden);
        kv.set("model.proj_dim", self.proj_dim);
        kv.set("model.gaze_hidden", self.gaze_hidden);
        kv.set("model.gam_hidden", self.gam_hidden);
        kv.set("model.face_size", self.face_size);
        kv.set("model.eye_size", self.eye_size);
        kv.set("model.in_channels", self.in_channels);
        let channels = self
            .conv_channels
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        kv.set("model.conv_channels", channels);
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let defaults = ModelConfig::toy();
        let conv_channels = match kv.get("model.conv_channels") {
            None => defaults.conv_channels.clone(),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|e| {
                        Error::Config(format!("model.conv_channels: bad entry '{s}': {e}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let cfg = ModelConfig {
            topology: kv.parse_or("model.topology", defaults.topology)?,
            feature_dim: kv.parse_or("model.feature_dim", defaults.feature_dim)?,
            num_heads: kv.parse_or("model.num_heads", defaults.num_heads)?,
            num_blocks: kv.parse_or("model.num_blocks", defaults.num_blocks)?,
            mlp_hidden: kv.parse_or("model.mlp_hidden", defaults.mlp_hidden)?,
            proj_dim: kv.parse_or("model.proj_dim", defaults.proj_dim)?,
            gaze_hidden: kv.parse_or("model.gaze_hidden", defaults.gaze_hidden)?,
            gam_hidden: kv.parse_or("model.gam_hidden", defaults.gam_hidden)?,
            face_size: kv.parse_or("model.face_size", defaults.face_size)?,
            eye_size: kv.parse_or("model.eye_size", defaults.eye_size)?,
            in_channels: kv.parse_or("model.in_channels", defaults.in_channels)?,
            conv_channels,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Single,
    Mixed,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Single => "single",
            Regime::Mixed => "mixed",
        })
    }
}

use std::fmt;

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Regime::Single),
            "mixed" => Ok(Regime::Mixed),
            other => Err(Error::Config(format!(
                "unknown regime '{other}' (expected single or mixed)"
            ))),
        }
    }
}

/// Form of the per-dataset correction head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GamMode {
    /// Offset is a two-layer MLP of the fused feature.
    OffsetMlp,
    /// Offset is a trainable constant per dataset (ablation).
    ConstBias,
}

impl fmt::Display for GamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GamMode::OffsetMlp => "offset_mlp",
            GamMode::ConstBias => "const_bias",
        })
    }
}

impl FromStr for GamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offset_mlp" => Ok(GamMode::OffsetMlp),
            "const_bias" => Ok(GamMode::ConstBias),
            other => Err(Error::Config(format!(
                "unknown gam mode '{other}' (expected offset_mlp or const_bias)"
            ))),
        }
    }
}

/// Optimization and loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub warmup_steps: usize,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub regime: Regime,
    pub gam_enabled: bool,
    pub gam_mode: GamMode,
    /// Dataset name for the single regime.
    pub dataset: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            warmup_steps: 500,
            gamma: 0.96,
            epochs: 20,
            batch_size: 64,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            regime: Regime::Mixed,
            gam_enabled: true,
            gam_mode: GamMode::OffsetMlp,
            dataset: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must be in (0, 1]".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if self.regime == Regime::Single && self.dataset.is_none() {
            return Err(Error::Config(
                "regime single requires a dataset name (--dataset or train.dataset)".into(),
            ));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.set("train.lr0", self.lr0);
        kv.set("train.warmup_steps", self.warmup_steps);
        kv.set("train.gamma", self.gamma);
        kv.set("train.epochs", self.epochs);
        kv.set("train.batch_size", self.batch_size);
        kv.set("train.weight_decay", self.weight_decay);
        kv.set("train.beta1", self.beta1);
        kv.set("train.beta2", self.beta2);
        kv.set("train.eps", self.eps);
        kv.set("train.seed", self.seed);
        kv.set("train.regime", self.regime);
        kv.set("train.gam", if self.gam_enabled { "on" } else { "off" });
        kv.set("train.gam_mode", self.gam_mode);
        if let Some(d) = &self.dataset {
            kv.set("train.dataset", d);
        }
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = TrainConfig::default();
        let gam_enabled = match kv.get("train.gam") {
            None => d.gam_enabled,
            Some("on") => true,
            Some("off") => false,
            Some(other) => {
                return Err(Error::Config(format!(
                    "train.gam must be on or off, got '{other}'"
                )))
            }
        };
        Ok(TrainConfig {
            lr0: kv.parse_or("train.lr0", d.lr0)?,
            warmup_steps: kv.parse_or("train.warmup_steps", d.warmup_steps)?,
            gamma: kv.parse_or("train.gamma", d.gamma)?,
            epochs: kv.parse_or("train.epochs", d.epochs)?,
            batch_size: kv.parse_or("train.batch_size", d.batch_size)?,
            weight_decay: kv.parse_or("train.weight_decay", d.weight_decay)?,
            beta1: kv.parse_or("train.beta1", d.beta1)?,
            beta2: kv.parse_or("train.beta2", d.beta2)?,
            eps: kv.parse_or("train.eps", d.eps)?,
            seed: kv.parse_or("train.seed", d.seed)?,
            regime: kv.parse_or("train.regime", d.regime)?,
            gam_enabled,
            gam_mode: kv.parse_or("train.gam_mode", d.gam_mode)?,
            dataset: kv.get("train.dataset").map(str::to_string),
        })
    }
}

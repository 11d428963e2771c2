//! Flat `key = value` run descriptions covering model, training, decoding
//! and data settings.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{parse, parse_opt, show_opt, ModelConfig, MODEL_KEYS};
use crate::search::BeamConfig;
use crate::train::{TrainConfig, TRAIN_KEYS};

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_src: Option<PathBuf>,
    pub train_tgt: Option<PathBuf>,
    pub dev_src: Option<PathBuf>,
    pub dev_tgt: Option<PathBuf>,
    /// Where checkpoints, vocabularies and the curve are written.
    pub out_dir: PathBuf,
    /// BPE merges to learn from the training data; `None` keeps words whole.
    pub bpe_merges: Option<usize>,
    /// Learn one BPE model over both sides.
    pub joint_bpe: bool,
    pub max_ratio: f64,
    /// Longest sentence kept, in tokens after BPE.
    pub filter_max_len: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_src: None,
            train_tgt: None,
            dev_src: None,
            dev_tgt: None,
            out_dir: PathBuf::from("run"),
            bpe_merges: None,
            joint_bpe: false,
            max_ratio: 9.0,
            filter_max_len: None,
        }
    }
}

const DATA_KEYS: &[&str] = &[
    "train_src",
    "train_tgt",
    "dev_src",
    "dev_tgt",
    "out_dir",
    "bpe_merges",
    "joint_bpe",
    "max_ratio",
    "filter_max_len",
];

const BEAM_KEYS: &[&str] = &["beam_size", "length_penalty", "max_len"];

/// Vocabulary sizes of 0 mean "derive from the training data".
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub beam: BeamConfig,
    pub data: DataConfig,
}

fn set_path(slot: &mut Option<PathBuf>, value: &str, base: &Path) {
    *slot = (value != "none").then(|| base.join(value));
}

impl RunConfig {
    /// Every recognised key.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        MODEL_KEYS
            .iter()
            .chain(TRAIN_KEYS)
            .chain(BEAM_KEYS)
            .chain(DATA_KEYS)
            .copied()
    }

    /// Parses `key = value` lines; `#` starts a comment. Relative paths are
    /// resolved against `base`. Unknown or repeated keys are errors.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!("line {}", i + 1), "expected `key = value`"));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "given more than once"));
            }
            cfg.set(key, value, base)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        if self.model.set(key, value)? || self.train.set(key, value)? {
            return Ok(());
        }
        let d = &mut self.data;
        match key {
            "beam_size" => self.beam.beam_size = parse(key, value)?,
            "length_penalty" => self.beam.length_penalty = parse(key, value)?,
            "max_len" => self.beam.max_len = parse(key, value)?,
            "train_src" => set_path(&mut d.train_src, value, base),
            "train_tgt" => set_path(&mut d.train_tgt, value, base),
            "dev_src" => set_path(&mut d.dev_src, value, base),
            "dev_tgt" => set_path(&mut d.dev_tgt, value, base),
            "out_dir" => d.out_dir = base.join(value),
            "bpe_merges" => d.bpe_merges = parse_opt(key, value)?,
            "joint_bpe" => d.joint_bpe = parse(key, value)?,
            "max_ratio" => d.max_ratio = parse(key, value)?,
            "filter_max_len" => d.filter_max_len = parse_opt(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string());
        let beam = [
            ("beam_size", self.beam.beam_size.to_string()),
            ("length_penalty", self.beam.length_penalty.to_string()),
            ("max_len", self.beam.max_len.to_string()),
        ];
        let d = &self.data;
        let data = [
            ("train_src", path(&d.train_src)),
            ("train_tgt", path(&d.train_tgt)),
            ("dev_src", path(&d.dev_src)),
            ("dev_tgt", path(&d.dev_tgt)),
            ("out_dir", d.out_dir.display().to_string()),
            ("bpe_merges", show_opt(&d.bpe_merges)),
            ("joint_bpe", d.joint_bpe.to_string()),
            ("max_ratio", d.max_ratio.to_string()),
            ("filter_max_len", show_opt(&d.filter_max_len)),
        ];
        for (k, v) in self
            .model
            .to_pairs()
            .into_iter()
            .chain(self.train.to_pairs())
            .chain(beam)
            .chain(data)
        {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Data paths needed for training.
    pub fn training_paths(&self) -> Result<[&Path; 4]> {
        fn need<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
            p.as_deref().ok_or_else(|| Error::config(key, "required for training"))
        }
        let d = &self.data;
        Ok([
            need(&d.train_src, "train_src")?,
            need(&d.train_tgt, "train_tgt")?,
            need(&d.dev_src, "dev_src")?,
            need(&d.dev_tgt, "dev_tgt")?,
        ])
    }
}

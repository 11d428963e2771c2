//! Binary checkpoints.
//!
//! Layout (integers little-endian `u32` unless noted, reals `f64` LE):
//!
//! ```text
//! magic        4 bytes  "DNMT"
//! version      u32      FORMAT_VERSION
//! model_cfg    u64 byte length, then UTF-8 `key=value` lines
//! train_cfg    u64 byte length, then UTF-8 `key=value` lines
//! epoch        u32      epochs completed
//! parameters   tensor block
//! current_lr   f64
//! prev_val     u32 flag (0 or 1), then f64 (0 when the flag is 0)
//! shrinking    u32 flag
//! stopped      u32 flag
//! velocity     tensor block
//! curve        u32 record count, then per record:
//!              u32 epoch, f64 train_loss, f64 val_loss, f64 lr, f64 wall_seconds
//!
//! tensor block u32 tensor count, then per tensor:
//!              u32 name length, name bytes (UTF-8),
//!              u32 rank, rank × u32 dims,
//!              u64 value count, values as f64
//! ```

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};
use crate::train::{CurveRecord, OptimizerState, TrainConfig, TrainingCurve};

pub const MAGIC: &[u8; 4] = b"DNMT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub epoch: u32,
    pub params: Parameters,
    pub optimizer: OptimizerState,
    pub curve: TrainingCurve,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn len32(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length fits in u32"));
    }

    fn text(&mut self, pairs: &[(&str, String)]) {
        let s: String = pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensors(&mut self, p: &Parameters) {
        self.len32(p.len());
        for (name, t) in p.iter() {
            self.len32(name.len());
            self.0.extend_from_slice(name.as_bytes());
            self.len32(t.shape.len());
            for &d in &t.shape {
                self.len32(d);
            }
            self.u64(t.values.len() as u64);
            for &v in &t.values {
                self.f64(v);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("truncated or corrupt checkpoint ({what})"))
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u32(what)? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(corrupt(what)),
        }
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n, what)?).map_err(|_| corrupt(what))
    }

    fn text(&mut self, what: &str) -> Result<Vec<(&'a str, &'a str)>> {
        let n = usize::try_from(self.u64(what)?).map_err(|_| corrupt(what))?;
        self.utf8(n, what)?
            .lines()
            .map(|l| l.split_once('=').ok_or_else(|| corrupt(what)))
            .collect()
    }

    /// `trainable` marks the tensors as requiring gradients.
    fn tensors(&mut self, what: &str, trainable: bool) -> Result<Parameters> {
        let count = self.u32(what)?;
        let mut p = Parameters::new();
        for _ in 0..count {
            let n = self.u32(what)? as usize;
            let name = self.utf8(n, what)?.to_string();
            let rank = self.u32(what)? as usize;
            let shape = (0..rank)
                .map(|_| self.u32(what).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = usize::try_from(self.u64(what)?).map_err(|_| corrupt(what))?;
            if len.checked_mul(8).is_none_or(|b| b > self.bytes.len() - self.pos) {
                return Err(corrupt(what));
            }
            let values = (0..len).map(|_| self.f64(what)).collect::<Result<Vec<_>>>()?;
            let mut t = Tensor::new(shape, values).map_err(|_| corrupt(what))?;
            t.requires_grad = trainable;
            p.insert(name, t)?;
        }
        Ok(p)
    }
}

fn apply_pairs<F>(pairs: &[(&str, &str)], mut set: F) -> Result<()>
where
    F: FnMut(&str, &str) -> Result<bool>,
{
    for (k, v) in pairs {
        if !set(k, v)? {
            return Err(Error::Checkpoint(format!("unknown config key `{k}`")));
        }
    }
    Ok(())
}

fn same_layout(a: &Parameters, b: &Parameters) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b.iter())
            .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape == t2.shape)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.text(&self.model_cfg.to_pairs());
        w.text(&self.train_cfg.to_pairs());
        w.u32(self.epoch);
        w.tensors(&self.params);
        let o = &self.optimizer;
        w.f64(o.current_lr);
        w.u32(o.prev_val_loss.is_some() as u32);
        w.f64(o.prev_val_loss.unwrap_or(0.0));
        w.u32(o.shrink_started as u32);
        w.u32(o.stopped as u32);
        w.tensors(&o.velocity);
        w.len32(self.curve.len());
        for r in self.curve.records() {
            w.len32(r.epoch);
            w.f64(r.train_loss);
            w.f64(r.val_loss);
            w.f64(r.lr);
            w.f64(r.wall_seconds);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let mut model_cfg = ModelConfig::default();
        apply_pairs(&r.text("model config")?, |k, v| model_cfg.set(k, v))?;
        let mut train_cfg = TrainConfig::default();
        apply_pairs(&r.text("train config")?, |k, v| train_cfg.set(k, v))?;
        let epoch = r.u32("epoch")?;
        let params = r.tensors("parameters", true)?;
        let current_lr = r.f64("optimizer")?;
        let has_prev = r.flag("optimizer")?;
        let prev = r.f64("optimizer")?;
        let shrink_started = r.flag("optimizer")?;
        let stopped = r.flag("optimizer")?;
        let velocity = r.tensors("velocity", false)?;
        if !same_layout(&params, &velocity) {
            return Err(Error::Checkpoint("velocity does not mirror the parameters".into()));
        }
        let mut curve = TrainingCurve::new();
        for _ in 0..r.u32("curve")? {
            let rec = CurveRecord {
                epoch: r.u32("curve")? as usize,
                train_loss: r.f64("curve")?,
                val_loss: r.f64("curve")?,
                lr: r.f64("curve")?,
                wall_seconds: r.f64("curve")?,
            };
            curve.push(rec).map_err(|_| corrupt("curve"))?;
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Checkpoint {
            optimizer: OptimizerState {
                velocity,
                current_lr,
                momentum: train_cfg.momentum,
                prev_val_loss: has_prev.then_some(prev),
                shrink_started,
                stopped,
            },
            model_cfg,
            train_cfg,
            epoch,
            params,
            curve,
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

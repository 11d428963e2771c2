use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const CURVE_HEADER: &str = "epoch,train_loss,val_loss,lr,wall_seconds";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub wall_seconds: f64,
}

/// Per-epoch losses. Epochs strictly increase and the rate never grows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingCurve {
    records: Vec<CurveRecord>,
}

impl TrainingCurve {
    pub fn new() -> Self {
        TrainingCurve::default()
    }

    pub fn records(&self) -> &[CurveRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&CurveRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, r: CurveRecord) -> Result<()> {
        if let Some(prev) = self.records.last() {
            if r.epoch <= prev.epoch {
                return Err(Error::Data(format!("curve epoch {} after {}", r.epoch, prev.epoch)));
            }
            if r.lr > prev.lr {
                return Err(Error::Data(format!("curve learning rate rose at epoch {}", r.epoch)));
            }
        }
        self.records.push(r);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CURVE_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_loss, r.lr, r.wall_seconds
            );
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CURVE_HEADER) {
            return Err(Error::Data(format!("curve file must start with `{CURVE_HEADER}`")));
        }
        let mut curve = TrainingCurve::new();
        for (i, line) in lines.enumerate() {
            let bad = || Error::Data(format!("curve line {}: malformed record", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            curve.push(CurveRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: num(f[1])?,
                val_loss: num(f[2])?,
                lr: num(f[3])?,
                wall_seconds: num(f[4])?,
            })?;
        }
        Ok(curve)
    }
}

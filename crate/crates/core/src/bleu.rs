//! Corpus-level 4-gram BLEU with a single reference per hypothesis.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// Modified n-gram precisions p₁..p₄ in `[0, 1]`.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    /// In `[0, 100]`.
    pub score: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    for w in tokens.windows(n) {
        *out.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
    }
    out
}

/// Corpus BLEU: clipped n-gram matches and totals are summed over all
/// sentences before taking ratios. With `smooth`, orders above one use
/// add-one counts, so short corpora do not collapse to zero.
pub fn bleu_corpus<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], smooth: bool) -> Result<BleuReport> {
    if hyps.len() != refs.len() {
        return Err(Error::Data(format!(
            "hypothesis count {} differs from reference count {}",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Data("cannot score an empty corpus".into()));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(r, n);
            matches[n - 1] += ngram_counts(h, n)
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            totals[n - 1] += (h.len() + 1).saturating_sub(n);
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if smooth && n > 0 {
            (matches[n] + 1) as f64 / (totals[n] + 1) as f64
        } else if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if hyp_len > ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if precisions.iter().all(|&p| p > 0.0) {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    } else {
        0.0
    };
    Ok(BleuReport {
        precisions,
        brevity_penalty,
        score,
        hyp_len,
        ref_len,
    })
}

/// Splits lines on whitespace and scores them.
pub fn bleu_lines<S: AsRef<str>>(hyps: &[S], refs: &[S], smooth: bool) -> Result<BleuReport> {
    let split = |lines: &[S]| -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.as_ref().split_whitespace().map(String::from).collect())
            .collect()
    };
    bleu_corpus(&split(hyps), &split(refs), smooth)
}

impl BleuReport {
    /// `key=value` lines at full precision.
    pub fn to_key_values(&self) -> String {
        let p = &self.precisions;
        format!(
            "bleu={}\np1={}\np2={}\np3={}\np4={}\nbp={}\nhyp_len={}\nref_len={}\n",
            self.score, p[0], p[1], p[2], p[3], self.brevity_penalty, self.hyp_len, self.ref_len
        )
    }
}

/// `BLEU = 43.47 (71.4/50.0/40.0/25.0) BP=1.000 hyp_len=7 ref_len=6`
impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.precisions.map(|x| 100.0 * x);
        write!(
            f,
            "BLEU = {:.2} ({:.1}/{:.1}/{:.1}/{:.1}) BP={:.3} hyp_len={} ref_len={}",
            self.score, p[0], p[1], p[2], p[3], self.brevity_penalty, self.hyp_len, self.ref_len
        )
    }
}

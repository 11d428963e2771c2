//! Greedy and beam-search decoding over any next-token scorer.

use std::cmp::Ordering;

use crate::autodiff::Tape;
use crate::data::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::{decoder_forward, encoder_forward, EncoderState, Forward, ModelConfig, Parameters};

/// Next-token log-probabilities for a prefix that starts with BOS.
/// Entries equal to `-inf` are never chosen.
pub trait StepScorer {
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>>;
}

impl<F> StepScorer for F
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        self(prefix)
    }
}

/// Scores prefixes with a trained model. The source is encoded once; each
/// step re-runs the decoder over the whole prefix.
pub struct ModelScorer<'p> {
    params: &'p Parameters,
    cfg: &'p ModelConfig,
    tape: Tape<'p>,
    enc: EncoderState,
    encoded_len: usize,
}

impl<'p> ModelScorer<'p> {
    pub fn new(params: &'p Parameters, cfg: &'p ModelConfig, src_ids: &[usize]) -> Result<Self> {
        let mut tape = Tape::new();
        let mut fw = Forward::new(&mut tape, params);
        let enc = encoder_forward(&mut fw, cfg, src_ids, None)?;
        let encoded_len = tape.len();
        Ok(ModelScorer {
            params,
            cfg,
            tape,
            enc,
            encoded_len,
        })
    }
}

/// Log-softmax of one row.
fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

impl StepScorer for ModelScorer<'_> {
    /// PAD and BOS are never produced.
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.tape.truncate(self.encoded_len);
        let mut fw = Forward::new(&mut self.tape, self.params);
        let (_, logits) = decoder_forward(&mut fw, self.cfg, &self.enc, prefix)?;
        let v = self.cfg.tgt_vocab_size;
        let values = self.tape.value(logits);
        let mut lp = log_softmax(&values[values.len() - v..]);
        for special in [PAD, BOS] {
            if special < v {
                lp[special] = f64::NEG_INFINITY;
            }
        }
        Ok(lp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Starts with BOS.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Generated tokens, EOS included.
    pub fn generated(&self) -> usize {
        self.tokens.len() - 1
    }

    /// `logprob / generated^α`.
    pub fn score(&self, alpha: f64) -> f64 {
        if alpha == 0.0 {
            self.logprob
        } else {
            self.logprob / (self.generated().max(1) as f64).powf(alpha)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Length penalty exponent α.
    pub length_penalty: f64,
    /// Maximum number of generated tokens.
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            length_penalty: 1.0,
            max_len: 200,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::config("beam_size", "must be at least 1"));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len", "must be at least 1"));
        }
        Ok(())
    }
}

/// Higher value first; equal values fall back to token order, which puts
/// lower ids first and a prefix before its extensions.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
}

/// Repeatedly appends the most probable token (lowest id on ties) until EOS
/// or `max_len` generated tokens.
pub fn greedy_search(scorer: &mut impl StepScorer, max_len: usize) -> Result<Vec<usize>> {
    let mut tokens = vec![BOS];
    while tokens.len() - 1 < max_len {
        let lp = scorer.log_probs(&tokens)?;
        let mut best: Option<(usize, f64)> = None;
        for (t, &p) in lp.iter().enumerate() {
            if p > f64::NEG_INFINITY && best.is_none_or(|(_, b)| p > b) {
                best = Some((t, p));
            }
        }
        let Some((t, _)) = best else {
            return Err(Error::Data("scorer assigned no finite probability".into()));
        };
        tokens.push(t);
        if t == EOS {
            break;
        }
    }
    Ok(tokens)
}

/// Beam search. Each step keeps the `beam_size` best extensions by total
/// log-probability; extensions ending in EOS or reaching `max_len` retire to
/// the finished pool. The search ends when nothing is live or the pool
/// holds `beam_size` hypotheses. Returns the pool and any survivors ranked
/// by length-penalized score, best first.
pub fn beam_search_with(scorer: &mut impl StepScorer, beam: &BeamConfig) -> Result<Vec<Hypothesis>> {
    beam.validate()?;
    let mut live = vec![Hypothesis {
        tokens: vec![BOS],
        logprob: 0.0,
        finished: false,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() && pool.len() < beam.beam_size {
        let mut candidates: Vec<(f64, Vec<usize>)> = Vec::new();
        for h in &live {
            let lp = scorer.log_probs(&h.tokens)?;
            for (t, &p) in lp.iter().enumerate() {
                if p > f64::NEG_INFINITY {
                    let mut tokens = h.tokens.clone();
                    tokens.push(t);
                    candidates.push((h.logprob + p, tokens));
                }
            }
        }
        if candidates.is_empty() {
            return Err(Error::Data("scorer assigned no finite probability".into()));
        }
        candidates.sort_by(|a, b| rank((a.0, &a.1), (b.0, &b.1)));
        candidates.truncate(beam.beam_size);
        live.clear();
        for (logprob, tokens) in candidates {
            let finished = tokens.last() == Some(&EOS) || tokens.len() > beam.max_len;
            let h = Hypothesis {
                tokens,
                logprob,
                finished,
            };
            if finished {
                pool.push(h);
            } else {
                live.push(h);
            }
        }
    }
    pool.extend(live);
    let alpha = beam.length_penalty;
    pool.sort_by(|a, b| rank((a.score(alpha), &a.tokens), (b.score(alpha), &b.tokens)));
    Ok(pool)
}

pub fn greedy_decode(params: &Parameters, cfg: &ModelConfig, src_ids: &[usize], max_len: usize) -> Result<Vec<usize>> {
    greedy_search(&mut ModelScorer::new(params, cfg, src_ids)?, max_len)
}

pub fn beam_search(
    params: &Parameters,
    cfg: &ModelConfig,
    src_ids: &[usize],
    beam: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    beam_search_with(&mut ModelScorer::new(params, cfg, src_ids)?, beam)
}

/// Best token sequence under `beam` (greedy when `beam_size` is 1).
/// `max_len` is capped so that prefixes fit the model's positions.
pub fn translate_ids(
    params: &Parameters,
    cfg: &ModelConfig,
    src_ids: &[usize],
    beam: &BeamConfig,
) -> Result<Vec<usize>> {
    let beam = &BeamConfig {
        max_len: beam.max_len.min(cfg.max_positions),
        ..*beam
    };
    if beam.beam_size == 1 {
        return greedy_decode(params, cfg, src_ids, beam.max_len);
    }
    let best = beam_search(params, cfg, src_ids, beam)?;
    Ok(best.into_iter().next().map(|h| h.tokens).unwrap_or_else(|| vec![BOS]))
}

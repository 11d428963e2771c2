use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{attend, attend_each, AttnProjection};
use super::config::{AttentionMode, ConnectionMode, ModelConfig};
use super::params::Parameters;
use super::schedule::{encoder_plan, summary_count};
use crate::autodiff::{ConvMode, Tape, Var};
use crate::error::{Error, Result};

enum Source<'p> {
    Params(&'p Parameters),
    /// Parameters already placed on the tape, addressed by name.
    Vars(Vec<String>),
}

/// Binds parameters onto a tape on first use and carries dropout state.
pub struct Forward<'t, 'p> {
    pub tape: &'t mut Tape<'p>,
    source: Source<'p>,
    bound: Vec<Option<Var>>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'t, 'p> Forward<'t, 'p> {
    pub fn new(tape: &'t mut Tape<'p>, params: &'p Parameters) -> Self {
        Forward {
            tape,
            source: Source::Params(params),
            bound: vec![None; params.len()],
            dropout: None,
        }
    }

    /// Uses tape variables as the parameters, in the order of `names`.
    pub fn from_vars(tape: &'t mut Tape<'p>, names: Vec<String>, vars: &[Var]) -> Result<Self> {
        if names.len() != vars.len() {
            return Err(Error::shape("Forward::from_vars", &[names.len()], &[vars.len()]));
        }
        Ok(Forward {
            tape,
            source: Source::Vars(names),
            bound: vars.iter().map(|&v| Some(v)).collect(),
            dropout: None,
        })
    }

    /// Enables dropout with a private generator.
    pub fn with_dropout(mut self, rate: f64, seed: u64) -> Self {
        if rate > 0.0 {
            self.dropout = Some((rate, ChaCha8Rng::seed_from_u64(seed)));
        }
        self
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let missing = || Error::config(name, "parameter missing from model");
        let idx = match &self.source {
            Source::Params(p) => p.index_of(name),
            Source::Vars(names) => names.iter().position(|n| n == name),
        }
        .ok_or_else(missing)?;
        if let Some(v) = self.bound[idx] {
            return Ok(v);
        }
        let Source::Params(params) = self.source else {
            return Err(missing());
        };
        let v = self.tape.leaf(params.by_index(idx).1);
        self.bound[idx] = Some(v);
        Ok(v)
    }

    /// `(parameter index, tape variable)` for every parameter used so far.
    pub fn bound(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.bound.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)))
    }

    fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        self.tape.linear(x, w, b)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 - *rate;
        let n = self.tape.value(x).len();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.tape.mul_const(x, mask)
    }
}

/// Encoder activations `h⁰..` (summary layers included) on one tape.
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub layers: Vec<Var>,
    /// `true` for real source tokens, `false` for padding.
    pub pad_mask: Vec<bool>,
    /// Layers visible to dense attention.
    pub attn_window: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct DecoderState {
    /// `z⁰..`, summary layers included.
    pub layers: Vec<Var>,
    /// `a¹..a^L`, one per convolution layer.
    pub attns: Vec<Var>,
}

fn embed(fw: &mut Forward<'_, '_>, cfg: &ModelConfig, side: &str, ids: &[usize]) -> Result<Var> {
    if ids.len() > cfg.max_positions {
        return Err(Error::Length {
            len: ids.len(),
            max: cfg.max_positions,
        });
    }
    let table = fw.param(&format!("{side}.embed"))?;
    let mut x = fw.tape.embed(ids, table)?;
    if cfg.embed_factor_dim.is_some() {
        x = fw.linear(x, &format!("{side}.embed_proj"))?;
    }
    if cfg.position_embeddings {
        let pos = fw.param(&format!("{side}.pos"))?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let p = fw.tape.embed(&positions, pos)?;
        x = fw.tape.add(x, p)?;
    }
    fw.dropout(x)
}

/// Newest-first concatenation of a dense window, `[h^l, ..., h^0]`.
fn concat_window(fw: &mut Forward<'_, '_>, window: &[Vec<Var>]) -> Result<Var> {
    let parts: Vec<Var> = window.iter().rev().flatten().copied().collect();
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        fw.tape.concat(&parts)
    }
}

fn glu_conv(fw: &mut Forward<'_, '_>, x: Var, prefix: &str, mode: ConvMode) -> Result<Var> {
    let w = fw.param(&format!("{prefix}.conv.weight"))?;
    let b = fw.param(&format!("{prefix}.conv.bias"))?;
    let c = fw.tape.conv1d(x, w, b, mode)?;
    let h = fw.tape.glu(c)?;
    fw.dropout(h)
}

/// Linear projection of the running concatenation back to `d₀`.
pub fn summary_layer(tape: &mut Tape<'_>, running: Var, weight: Var, bias: Var) -> Result<Var> {
    tape.linear(running, weight, bias)
}

fn is_summary_after(cfg: &ModelConfig, ordinal: usize, total: usize) -> bool {
    match cfg.sumlen {
        Some(s) => ordinal.is_multiple_of(s - 1) && ordinal < total,
        None => false,
    }
}

pub fn encoder_forward(
    fw: &mut Forward<'_, '_>,
    cfg: &ModelConfig,
    src_ids: &[usize],
    pad_mask: Option<&[bool]>,
) -> Result<EncoderState> {
    if src_ids.is_empty() {
        return Err(Error::Data("empty source sequence".into()));
    }
    let mask = match pad_mask {
        Some(m) if m.len() != src_ids.len() => {
            return Err(Error::shape("encoder_forward", &[src_ids.len()], &[m.len()]))
        }
        Some(m) => m.to_vec(),
        None => vec![true; src_ids.len()],
    };
    let emb = embed(fw, cfg, "src", src_ids)?;
    let h0 = fw.tape.mask_rows(emb, &mask)?;
    let mut layers = vec![h0];
    match cfg.connection_mode {
        ConnectionMode::Residual => {
            let mut x = h0;
            if cfg.hidden_dim != cfg.embed_dim {
                let p = fw.linear(h0, "enc.in_proj")?;
                x = fw.tape.mask_rows(p, &mask)?;
            }
            for l in 1..=cfg.enc_layers {
                let c = glu_conv(fw, x, &format!("enc.layer{l}"), ConvMode::Centered)?;
                let sum = fw.tape.add(c, x)?;
                x = fw.tape.mask_rows(sum, &mask)?;
                layers.push(x);
            }
        }
        ConnectionMode::Dense => {
            let mut window = vec![vec![h0]];
            let mut summaries = 0;
            for l in 1..=cfg.enc_layers {
                let input = concat_window(fw, &window)?;
                let c = glu_conv(fw, input, &format!("enc.layer{l}"), ConvMode::Centered)?;
                let h = fw.tape.mask_rows(c, &mask)?;
                layers.push(h);
                window.push(vec![h]);
                if is_summary_after(cfg, l, cfg.enc_layers) {
                    summaries += 1;
                    let input = concat_window(fw, &window)?;
                    let w = fw.param(&format!("enc.summary{summaries}.weight"))?;
                    let b = fw.param(&format!("enc.summary{summaries}.bias"))?;
                    let s = summary_layer(fw.tape, input, w, b)?;
                    let s = fw.tape.mask_rows(s, &mask)?;
                    layers.push(s);
                    window = vec![vec![s]];
                }
            }
        }
    }
    let attn_window = encoder_plan(cfg).attention_window();
    debug_assert_eq!(attn_window.end, layers.len());
    Ok(EncoderState {
        layers,
        pad_mask: mask,
        attn_window,
    })
}

fn projection(fw: &mut Forward<'_, '_>, prefix: &str, shared: Option<&str>) -> Result<AttnProjection> {
    let shared = shared.unwrap_or(prefix);
    Ok(AttnProjection {
        query: fw.param(&format!("{shared}.query"))?,
        key: fw.param(&format!("{prefix}.key"))?,
        value: fw.param(&format!("{prefix}.value"))?,
        embed_value: fw.param(&format!("{shared}.embed_value"))?,
    })
}

fn attention(
    fw: &mut Forward<'_, '_>,
    cfg: &ModelConfig,
    layer: usize,
    z: Var,
    z0: Var,
    enc: &EncoderState,
) -> Result<Var> {
    let p = format!("dec.layer{layer}.attn");
    let h0 = enc.layers[0];
    let query_embed = if cfg.query_embed {
        let w = fw.param(&format!("{p}.query_embed"))?;
        Some(fw.tape.matmul(z0, w)?)
    } else {
        None
    };
    let query = |fw: &mut Forward<'_, '_>, proj: &AttnProjection| -> Result<Var> {
        let q = fw.tape.matmul(z, proj.query)?;
        match query_embed {
            Some(e) => fw.tape.add(q, e),
            None => Ok(q),
        }
    };
    let mut out = match cfg.attention_mode {
        AttentionMode::Multistep => {
            let proj = projection(fw, &p, None)?;
            let q = query(fw, &proj)?;
            let top = *enc.layers.last().unwrap();
            attend(fw.tape, q, &[top], h0, &proj, &enc.pad_mask)?
        }
        AttentionMode::DenseAtt1 => {
            let proj = projection(fw, &p, None)?;
            let q = query(fw, &proj)?;
            let window = &enc.layers[enc.attn_window.clone()];
            attend(fw.tape, q, window, h0, &proj, &enc.pad_mask)?
        }
        AttentionMode::DenseAtt2 => {
            let window = &enc.layers[enc.attn_window.clone()];
            let shared = cfg.share_dense2_projections.then_some(p.as_str());
            let mut slots = Vec::with_capacity(window.len());
            let mut queries = Vec::with_capacity(window.len());
            for s in 1..=window.len() {
                let proj = projection(fw, &format!("{p}.slot{s}"), shared)?;
                // shared query maps are bound once, so this projects once
                let q = match (shared, queries.first()) {
                    (Some(_), Some(&q)) => q,
                    _ => query(fw, &proj)?,
                };
                queries.push(q);
                slots.push(proj);
            }
            attend_each(fw.tape, &queries, window, h0, &slots, &enc.pad_mask)?
        }
    };
    if cfg.attn_scaling {
        let n = enc.pad_mask.iter().filter(|&&v| v).count() as f64;
        out = fw.tape.scale(out, n * (1.0 / n).sqrt());
    }
    Ok(out)
}

/// Teacher-forced decoder pass. Returns the decoder state and `m×V` logits.
pub fn decoder_forward(
    fw: &mut Forward<'_, '_>,
    cfg: &ModelConfig,
    enc: &EncoderState,
    tgt_in: &[usize],
) -> Result<(DecoderState, Var)> {
    if tgt_in.is_empty() {
        return Err(Error::Data("empty target prefix".into()));
    }
    let z0 = embed(fw, cfg, "tgt", tgt_in)?;
    let mut layers = vec![z0];
    let mut attns = Vec::with_capacity(cfg.dec_layers);
    let head_input = match cfg.connection_mode {
        ConnectionMode::Residual => {
            let mut x = z0;
            if cfg.hidden_dim != cfg.embed_dim {
                x = fw.linear(z0, "dec.in_proj")?;
            }
            for l in 1..=cfg.dec_layers {
                let prefix = format!("dec.layer{l}");
                let c = glu_conv(fw, x, &prefix, ConvMode::Causal)?;
                let a = attention(fw, cfg, l, c, z0, enc)?;
                attns.push(a);
                let a_d = if cfg.attn_dim != cfg.hidden_dim {
                    fw.linear(a, &format!("{prefix}.attn.out"))?
                } else {
                    a
                };
                let s = fw.tape.add(c, a_d)?;
                x = fw.tape.add(s, x)?;
                layers.push(x);
            }
            x
        }
        ConnectionMode::Dense => {
            let mut window = vec![vec![z0]];
            let mut summaries = 0;
            for l in 1..=cfg.dec_layers {
                let input = concat_window(fw, &window)?;
                let z = glu_conv(fw, input, &format!("dec.layer{l}"), ConvMode::Causal)?;
                let a = attention(fw, cfg, l, z, z0, enc)?;
                layers.push(z);
                attns.push(a);
                window.push(vec![z, a]);
                if is_summary_after(cfg, l, cfg.dec_layers) {
                    summaries += 1;
                    let input = concat_window(fw, &window)?;
                    let w = fw.param(&format!("dec.summary{summaries}.weight"))?;
                    let b = fw.param(&format!("dec.summary{summaries}.bias"))?;
                    let s = summary_layer(fw.tape, input, w, b)?;
                    layers.push(s);
                    window = vec![vec![s]];
                }
            }
            debug_assert_eq!(summaries, summary_count(cfg.dec_layers, cfg.sumlen));
            concat_window(fw, &window)?
        }
    };
    let mut out = fw.linear(head_input, "head.proj")?;
    if cfg.embed_factor_dim.is_some() {
        out = fw.linear(out, "head.factor")?;
    }
    let bias = fw.param("head.softmax.bias")?;
    let logits = if cfg.tie_softmax {
        let table = fw.param("tgt.embed")?;
        let l = fw.tape.matmul_nt(out, table)?;
        fw.tape.add_bias(l, bias)?
    } else {
        let w = fw.param("head.softmax.weight")?;
        fw.tape.linear(out, w, bias)?
    };
    Ok((DecoderState { layers, attns }, logits))
}

/// Output widths of a state's layers, for comparison with the closed-form plan.
pub fn layer_widths(tape: &Tape<'_>, layers: &[Var]) -> Vec<usize> {
    layers.iter().map(|&v| tape.shape(v)[1]).collect()
}

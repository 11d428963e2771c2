use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionMode {
    /// `h^{l+1} = H(h^l) + h^l`
    Residual,
    /// `h^{l+1} = H([h^l, ..., h^0])`
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// Attend over the top encoder layer only.
    Multistep,
    /// Attend over the concatenation of the encoder window.
    DenseAtt1,
    /// One attention term per encoder window layer, summed.
    DenseAtt2,
}

impl fmt::Display for ConnectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConnectionMode::Residual => "residual",
            ConnectionMode::Dense => "dense",
        })
    }
}

impl FromStr for ConnectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(ConnectionMode::Residual),
            "dense" => Ok(ConnectionMode::Dense),
            _ => Err(Error::config("connection_mode", format!("unknown mode `{s}`"))),
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::Multistep => "multistep",
            AttentionMode::DenseAtt1 => "denseatt1",
            AttentionMode::DenseAtt2 => "denseatt2",
        })
    }
}

impl FromStr for AttentionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multistep" => Ok(AttentionMode::Multistep),
            "denseatt1" => Ok(AttentionMode::DenseAtt1),
            "denseatt2" => Ok(AttentionMode::DenseAtt2),
            _ => Err(Error::config("attention_mode", format!("unknown mode `{s}`"))),
        }
    }
}

/// Full architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Embedding width `d₀`.
    pub embed_dim: usize,
    /// Per-layer width `d`.
    pub hidden_dim: usize,
    /// Kernel size is `2r + 1`.
    pub kernel_radius: usize,
    pub connection_mode: ConnectionMode,
    pub attention_mode: AttentionMode,
    /// A summary layer follows every `sumlen - 1` convolution layers.
    pub sumlen: Option<usize>,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub max_positions: usize,
    /// Narrow token tables projected back up to `embed_dim`.
    pub embed_factor_dim: Option<usize>,
    pub dropout: f64,
    /// Common width of attention queries, keys and values.
    pub attn_dim: usize,
    pub position_embeddings: bool,
    /// Multiply attention outputs by `sqrt(source length)`.
    pub attn_scaling: bool,
    /// Add a projection of the target embedding into the attention query.
    pub query_embed: bool,
    /// Use the target embedding table as the output softmax matrix.
    pub tie_softmax: bool,
    /// DenseAtt-2 only: one query map and one embedding-value map shared
    /// across window slots instead of one per slot.
    pub share_dense2_projections: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            enc_layers: 4,
            dec_layers: 4,
            embed_dim: 256,
            hidden_dim: 128,
            kernel_radius: 1,
            connection_mode: ConnectionMode::Dense,
            attention_mode: AttentionMode::DenseAtt2,
            sumlen: None,
            src_vocab_size: 0,
            tgt_vocab_size: 0,
            max_positions: 1024,
            embed_factor_dim: None,
            dropout: 0.0,
            attn_dim: 256,
            position_embeddings: true,
            attn_scaling: false,
            query_embed: false,
            tie_softmax: false,
            share_dense2_projections: false,
        }
    }
}

pub(crate) const MODEL_KEYS: &[&str] = &[
    "enc_layers",
    "dec_layers",
    "embed_dim",
    "hidden_dim",
    "kernel_radius",
    "connection_mode",
    "attention_mode",
    "sumlen",
    "src_vocab_size",
    "tgt_vocab_size",
    "max_positions",
    "embed_factor_dim",
    "dropout",
    "attn_dim",
    "position_embeddings",
    "attn_scaling",
    "query_embed",
    "tie_softmax",
    "share_dense2_projections",
];

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

pub(crate) fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

pub(crate) fn show_opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

impl ModelConfig {
    pub fn kernel_size(&self) -> usize {
        2 * self.kernel_radius + 1
    }

    /// Sets one field from its textual form. Returns `Ok(false)` for keys
    /// that do not belong to the model config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "enc_layers" => self.enc_layers = parse(key, value)?,
            "dec_layers" => self.dec_layers = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "kernel_radius" => self.kernel_radius = parse(key, value)?,
            "connection_mode" => self.connection_mode = value.parse()?,
            "attention_mode" => self.attention_mode = value.parse()?,
            "sumlen" => self.sumlen = parse_opt(key, value)?,
            "src_vocab_size" => self.src_vocab_size = parse(key, value)?,
            "tgt_vocab_size" => self.tgt_vocab_size = parse(key, value)?,
            "max_positions" => self.max_positions = parse(key, value)?,
            "embed_factor_dim" => self.embed_factor_dim = parse_opt(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "attn_dim" => self.attn_dim = parse(key, value)?,
            "position_embeddings" => self.position_embeddings = parse(key, value)?,
            "attn_scaling" => self.attn_scaling = parse(key, value)?,
            "query_embed" => self.query_embed = parse(key, value)?,
            "tie_softmax" => self.tie_softmax = parse(key, value)?,
            "share_dense2_projections" => self.share_dense2_projections = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("enc_layers", self.enc_layers.to_string()),
            ("dec_layers", self.dec_layers.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("kernel_radius", self.kernel_radius.to_string()),
            ("connection_mode", self.connection_mode.to_string()),
            ("attention_mode", self.attention_mode.to_string()),
            ("sumlen", show_opt(&self.sumlen)),
            ("src_vocab_size", self.src_vocab_size.to_string()),
            ("tgt_vocab_size", self.tgt_vocab_size.to_string()),
            ("max_positions", self.max_positions.to_string()),
            ("embed_factor_dim", show_opt(&self.embed_factor_dim)),
            ("dropout", self.dropout.to_string()),
            ("attn_dim", self.attn_dim.to_string()),
            ("position_embeddings", self.position_embeddings.to_string()),
            ("attn_scaling", self.attn_scaling.to_string()),
            ("query_embed", self.query_embed.to_string()),
            ("tie_softmax", self.tie_softmax.to_string()),
            ("share_dense2_projections", self.share_dense2_projections.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("src_vocab_size", self.src_vocab_size),
            ("tgt_vocab_size", self.tgt_vocab_size),
            ("max_positions", self.max_positions),
            ("attn_dim", self.attn_dim),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if let Some(s) = self.sumlen {
            if s < 2 {
                return Err(Error::config("sumlen", "must be at least 2"));
            }
            if self.connection_mode == ConnectionMode::Residual {
                return Err(Error::config("sumlen", "summary layers require dense connections"));
            }
        }
        if let Some(f) = self.embed_factor_dim {
            if f == 0 || f >= self.embed_dim {
                return Err(Error::config("embed_factor_dim", "must be in 1..embed_dim"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must be in [0, 1)"));
        }
        Ok(())
    }
}

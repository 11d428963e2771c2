//! Closed-form layer widths and parameter counts.
//!
//! Everything here is computed from a [`ModelConfig`] alone, without
//! building tensors, so it can describe full-size configurations.

use std::ops::Range;

use super::config::{AttentionMode, ConnectionMode, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Token plus position embedding.
    Embedding,
    /// GLU convolution; `ordinal` is 1-based among convolution layers.
    Conv { ordinal: usize },
    /// Linear projection of the running concatenation back to `d₀`.
    Summary { ordinal: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerPlan {
    pub kind: LayerKind,
    pub input_width: usize,
    pub output_width: usize,
}

/// Widths of one stack. `layers[0]` is the embedding layer (`h⁰`/`z⁰`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackPlan {
    pub layers: Vec<LayerPlan>,
    /// Decoder only: width of the final concatenation fed to the output head.
    pub head_input_width: usize,
}

impl StackPlan {
    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerPlan> {
        self.layers.iter().filter(|l| matches!(l.kind, LayerKind::Conv { .. }))
    }

    /// Indices into `layers` visible to dense attention: the most recent
    /// summary layer and everything above it, or layers `1..` when no
    /// summary layer exists.
    pub fn attention_window(&self) -> Range<usize> {
        let start = self
            .layers
            .iter()
            .rposition(|l| matches!(l.kind, LayerKind::Summary { .. }))
            .unwrap_or(1);
        start..self.layers.len()
    }
}

/// Number of summary layers inserted into a stack of `conv_layers`.
/// A summary never sits on top of a stack.
pub fn summary_count(conv_layers: usize, sumlen: Option<usize>) -> usize {
    match sumlen {
        Some(s) if conv_layers > 0 => (conv_layers - 1) / (s - 1),
        _ => 0,
    }
}

fn embedding_plan(d0: usize) -> LayerPlan {
    LayerPlan {
        kind: LayerKind::Embedding,
        input_width: d0,
        output_width: d0,
    }
}

fn stack_plan(cfg: &ModelConfig, conv_layers: usize, per_layer_extra: usize) -> StackPlan {
    let d0 = cfg.embed_dim;
    let d = cfg.hidden_dim;
    let mut layers = vec![embedding_plan(d0)];
    match cfg.connection_mode {
        ConnectionMode::Residual => {
            for ordinal in 1..=conv_layers {
                layers.push(LayerPlan {
                    kind: LayerKind::Conv { ordinal },
                    input_width: d,
                    output_width: d,
                });
            }
            StackPlan {
                layers,
                head_input_width: d,
            }
        }
        ConnectionMode::Dense => {
            let mut running = d0;
            let mut since_summary = 0;
            let mut summaries = 0;
            for ordinal in 1..=conv_layers {
                layers.push(LayerPlan {
                    kind: LayerKind::Conv { ordinal },
                    input_width: running,
                    output_width: d,
                });
                running += d + per_layer_extra;
                since_summary += 1;
                if let Some(s) = cfg.sumlen {
                    if since_summary == s - 1 && ordinal < conv_layers {
                        summaries += 1;
                        layers.push(LayerPlan {
                            kind: LayerKind::Summary { ordinal: summaries },
                            input_width: running,
                            output_width: d0,
                        });
                        running = d0;
                        since_summary = 0;
                    }
                }
            }
            StackPlan {
                layers,
                head_input_width: running,
            }
        }
    }
}

pub fn encoder_plan(cfg: &ModelConfig) -> StackPlan {
    stack_plan(cfg, cfg.enc_layers, 0)
}

/// In dense mode every decoder layer appends its output `z^l` and its
/// attention `a^l` to the running concatenation.
pub fn decoder_plan(cfg: &ModelConfig) -> StackPlan {
    stack_plan(cfg, cfg.dec_layers, cfg.attn_dim)
}

/// Widths of the encoder layers visible to attention.
pub fn attention_window_widths(cfg: &ModelConfig) -> Vec<usize> {
    let plan = encoder_plan(cfg);
    match cfg.attention_mode {
        AttentionMode::Multistep => vec![plan.layers.last().unwrap().output_width],
        _ => plan.layers[plan.attention_window()]
            .iter()
            .map(|l| l.output_width)
            .collect(),
    }
}

/// Parameter totals broken down by module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub modules: Vec<(&'static str, usize)>,
}

impl ParamCount {
    pub fn module(&self, name: &str) -> usize {
        self.modules.iter().find(|(n, _)| *n == name).map_or(0, |(_, c)| *c)
    }
}

fn token_embedding_count(cfg: &ModelConfig, vocab: usize) -> usize {
    let d0 = cfg.embed_dim;
    let table = match cfg.embed_factor_dim {
        Some(f) => vocab * f + f * d0 + d0,
        None => vocab * d0,
    };
    let pos = if cfg.position_embeddings {
        cfg.max_positions * d0
    } else {
        0
    };
    table + pos
}

fn stack_count(cfg: &ModelConfig, plan: &StackPlan) -> usize {
    let k = cfg.kernel_size();
    let d = cfg.hidden_dim;
    let in_proj = if cfg.connection_mode == ConnectionMode::Residual && d != cfg.embed_dim {
        cfg.embed_dim * d + d
    } else {
        0
    };
    plan.layers[1..]
        .iter()
        .map(|l| match l.kind {
            // GLU doubles the convolution's output channels.
            LayerKind::Conv { .. } => k * l.input_width * 2 * l.output_width + 2 * l.output_width,
            LayerKind::Summary { .. } => l.input_width * l.output_width + l.output_width,
            LayerKind::Embedding => 0,
        })
        .sum::<usize>()
        + in_proj
}

/// Attention projection parameters for a single decoder layer.
pub fn attention_layer_count(cfg: &ModelConfig) -> usize {
    let a = cfg.attn_dim;
    let d = cfg.hidden_dim;
    let d0 = cfg.embed_dim;
    let window = attention_window_widths(cfg);
    let query_embed = if cfg.query_embed { d0 * a } else { 0 };
    let out = if cfg.connection_mode == ConnectionMode::Residual && a != d {
        a * d + d
    } else {
        0
    };
    let core = match cfg.attention_mode {
        AttentionMode::Multistep | AttentionMode::DenseAtt1 => {
            let w: usize = window.iter().sum();
            d * a + 2 * w * a + d0 * a
        }
        AttentionMode::DenseAtt2 => {
            let keys_values: usize = window.iter().map(|w| 2 * w * a).sum();
            let slots = window.len();
            if cfg.share_dense2_projections {
                d * a + keys_values + d0 * a
            } else {
                slots * (d * a + d0 * a) + keys_values
            }
        }
    };
    core + query_embed + out
}

/// Closed-form parameter count of the model described by `cfg`.
pub fn count_parameters(cfg: &ModelConfig) -> ParamCount {
    let enc = encoder_plan(cfg);
    let dec = decoder_plan(cfg);
    let d0 = cfg.embed_dim;
    let out_width = cfg.embed_factor_dim.unwrap_or(d0);
    let factor = cfg.embed_factor_dim.map_or(0, |f| d0 * f + f);
    let softmax = if cfg.tie_softmax {
        cfg.tgt_vocab_size
    } else {
        out_width * cfg.tgt_vocab_size + cfg.tgt_vocab_size
    };
    let head = dec.head_input_width * d0 + d0 + factor + softmax;
    let modules = vec![
        ("src_embedding", token_embedding_count(cfg, cfg.src_vocab_size)),
        ("tgt_embedding", token_embedding_count(cfg, cfg.tgt_vocab_size)),
        ("encoder", stack_count(cfg, &enc)),
        ("decoder", stack_count(cfg, &dec)),
        ("attention", cfg.dec_layers * attention_layer_count(cfg)),
        ("output_head", head),
    ];
    ParamCount {
        total: modules.iter().map(|(_, c)| c).sum(),
        modules,
    }
}

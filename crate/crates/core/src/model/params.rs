use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{AttentionMode, ConnectionMode, ModelConfig};
use super::schedule::{attention_window_widths, decoder_plan, encoder_plan, LayerKind, StackPlan};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Named model parameters in a fixed, layout-defined order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters {
    tensors: IndexMap<String, Tensor>,
}

impl Parameters {
    pub fn new() -> Self {
        Parameters::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.get_index_of(name)
    }

    pub fn by_index(&self, i: usize) -> (&str, &Tensor) {
        let (k, v) = self.tensors.get_index(i).expect("parameter index");
        (k.as_str(), v)
    }

    pub fn by_index_mut(&mut self, i: usize) -> (&str, &mut Tensor) {
        let (k, v) = self.tensors.get_index_mut(i).expect("parameter index");
        (k.as_str(), v)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Zero-filled tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Parameters {
        Parameters {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape.clone())))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    /// N(0, 1/fan_in)
    Normal {
        fan_in: usize,
    },
    Zero,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

struct Layout(Vec<ParamSpec>);

impl Layout {
    fn matrix(&mut self, name: String, rows: usize, cols: usize) {
        self.0.push(ParamSpec {
            name,
            shape: vec![rows, cols],
            init: Init::Normal { fan_in: rows },
        });
    }

    fn linear(&mut self, prefix: &str, input: usize, output: usize) {
        self.matrix(format!("{prefix}.weight"), input, output);
        self.bias(format!("{prefix}.bias"), output);
    }

    fn bias(&mut self, name: String, n: usize) {
        self.0.push(ParamSpec {
            name,
            shape: vec![n],
            init: Init::Zero,
        });
    }

    /// Tables are scaled by their width so that rows have unit expected norm.
    fn table(&mut self, name: String, rows: usize, cols: usize) {
        self.0.push(ParamSpec {
            name,
            shape: vec![rows, cols],
            init: Init::Normal { fan_in: cols },
        });
    }

    fn conv(&mut self, prefix: &str, k: usize, input: usize, output: usize) {
        self.0.push(ParamSpec {
            name: format!("{prefix}.weight"),
            shape: vec![k, input, output],
            init: Init::Normal { fan_in: k * input },
        });
        self.bias(format!("{prefix}.bias"), output);
    }

    fn embedding(&mut self, side: &str, cfg: &ModelConfig, vocab: usize) {
        let d0 = cfg.embed_dim;
        match cfg.embed_factor_dim {
            Some(f) => {
                self.table(format!("{side}.embed"), vocab, f);
                self.linear(&format!("{side}.embed_proj"), f, d0);
            }
            None => self.table(format!("{side}.embed"), vocab, d0),
        }
        if cfg.position_embeddings {
            self.table(format!("{side}.pos"), cfg.max_positions, d0);
        }
    }

    fn stack(&mut self, side: &str, cfg: &ModelConfig, plan: &StackPlan, decoder: bool) {
        if cfg.connection_mode == ConnectionMode::Residual && cfg.hidden_dim != cfg.embed_dim {
            self.linear(&format!("{side}.in_proj"), cfg.embed_dim, cfg.hidden_dim);
        }
        for layer in &plan.layers {
            match layer.kind {
                LayerKind::Embedding => {}
                LayerKind::Conv { ordinal } => {
                    let prefix = format!("{side}.layer{ordinal}");
                    self.conv(
                        &format!("{prefix}.conv"),
                        cfg.kernel_size(),
                        layer.input_width,
                        2 * layer.output_width,
                    );
                    if decoder {
                        self.attention(&prefix, cfg);
                    }
                }
                LayerKind::Summary { ordinal } => {
                    self.linear(
                        &format!("{side}.summary{ordinal}"),
                        layer.input_width,
                        layer.output_width,
                    );
                }
            }
        }
    }

    fn attention(&mut self, layer: &str, cfg: &ModelConfig) {
        let a = cfg.attn_dim;
        let d = cfg.hidden_dim;
        let d0 = cfg.embed_dim;
        let p = format!("{layer}.attn");
        let window = attention_window_widths(cfg);
        match cfg.attention_mode {
            AttentionMode::Multistep | AttentionMode::DenseAtt1 => {
                let w = window.iter().sum();
                self.matrix(format!("{p}.query"), d, a);
                self.matrix(format!("{p}.key"), w, a);
                self.matrix(format!("{p}.value"), w, a);
                self.matrix(format!("{p}.embed_value"), d0, a);
            }
            AttentionMode::DenseAtt2 => {
                let shared = cfg.share_dense2_projections;
                if shared {
                    self.matrix(format!("{p}.query"), d, a);
                    self.matrix(format!("{p}.embed_value"), d0, a);
                }
                for (s, &w) in window.iter().enumerate() {
                    let slot = format!("{p}.slot{}", s + 1);
                    if !shared {
                        self.matrix(format!("{slot}.query"), d, a);
                    }
                    self.matrix(format!("{slot}.key"), w, a);
                    self.matrix(format!("{slot}.value"), w, a);
                    if !shared {
                        self.matrix(format!("{slot}.embed_value"), d0, a);
                    }
                }
            }
        }
        if cfg.query_embed {
            self.matrix(format!("{p}.query_embed"), d0, a);
        }
        if cfg.connection_mode == ConnectionMode::Residual && a != d {
            self.linear(&format!("{p}.out"), a, d);
        }
    }
}

pub(crate) fn layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut l = Layout(Vec::new());
    l.embedding("src", cfg, cfg.src_vocab_size);
    l.stack("enc", cfg, &encoder_plan(cfg), false);
    l.embedding("tgt", cfg, cfg.tgt_vocab_size);
    let dec = decoder_plan(cfg);
    l.stack("dec", cfg, &dec, true);
    let d0 = cfg.embed_dim;
    l.linear("head.proj", dec.head_input_width, d0);
    let out_width = match cfg.embed_factor_dim {
        Some(f) => {
            l.linear("head.factor", d0, f);
            f
        }
        None => d0,
    };
    if !cfg.tie_softmax {
        l.matrix("head.softmax.weight".into(), out_width, cfg.tgt_vocab_size);
    }
    l.bias("head.softmax.bias".into(), cfg.tgt_vocab_size);
    l.0
}

/// Allocates and initializes every parameter. Deterministic in `seed`.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Parameters> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Parameters::new();
    for spec in layout(cfg) {
        let n: usize = spec.shape.iter().product();
        let values = match spec.init {
            Init::Zero => vec![0.0; n],
            Init::Normal { fan_in } => {
                let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect::<Vec<f64>>()
            }
        };
        params.insert(spec.name, Tensor::new(spec.shape, values)?.with_grad())?;
    }
    Ok(params)
}

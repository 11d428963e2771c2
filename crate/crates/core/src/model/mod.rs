//! Convolutional encoder-decoder with residual or dense connectivity.
//!
//! Dense stacks feed every layer the newest-first concatenation of all
//! previous layers in the current summary window. Decoder layers also
//! append their attention output to that concatenation.

mod attention;
mod config;
mod forward;
mod params;
mod schedule;

pub use attention::{attention_core, attn_dense1, attn_dense2, attn_multistep, AttnProjection};
pub use config::{AttentionMode, ConnectionMode, ModelConfig};
pub use forward::{decoder_forward, encoder_forward, layer_widths, summary_layer, DecoderState, EncoderState, Forward};
pub use params::{build_model, Parameters};
pub use schedule::{
    attention_layer_count, attention_window_widths, count_parameters, decoder_plan, encoder_plan, summary_count,
    LayerKind, LayerPlan, ParamCount, StackPlan,
};

pub(crate) use config::{parse, parse_opt, show_opt, MODEL_KEYS};

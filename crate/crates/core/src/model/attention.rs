//! Multiplicative attention and the three ways of wiring it to the encoder.
//!
//! All projections `L(·)` are bias-free linear maps to `attn_dim`.

use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Projection matrices for one attention term.
#[derive(Debug, Clone, Copy)]
pub struct AttnProjection {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    /// Maps `h⁰` into value space.
    pub embed_value: Var,
}

/// `softmax(Q Kᵀ) V` with source padding masked out of every row.
pub fn attention_core(tape: &mut Tape<'_>, q: Var, k: Var, v: Var, src_valid: &[bool]) -> Result<Var> {
    let scores = tape.matmul_nt(q, k)?;
    let weights = tape.softmax_masked(scores, src_valid)?;
    tape.matmul(weights, v)
}

/// Attention over the top encoder layer, with the source embedding added
/// into the values.
pub fn attn_multistep(
    tape: &mut Tape<'_>,
    z: Var,
    top: Var,
    h0: Var,
    proj: &AttnProjection,
    src_valid: &[bool],
) -> Result<Var> {
    attn_dense1(tape, z, &[top], h0, proj, src_valid)
}

/// Attention whose keys and values are projections of the concatenated
/// encoder window.
pub fn attn_dense1(
    tape: &mut Tape<'_>,
    z: Var,
    window: &[Var],
    h0: Var,
    proj: &AttnProjection,
    src_valid: &[bool],
) -> Result<Var> {
    let q = tape.matmul(z, proj.query)?;
    attend(tape, q, window, h0, proj, src_valid)
}

/// One attention term per window layer `hⁱ`, summed after attention.
/// The value map on `[hⁱ, h⁰]` is stored as its two blocks, so
/// `L([hⁱ, h⁰]) = hⁱ·value + h⁰·embed_value`.
pub fn attn_dense2(
    tape: &mut Tape<'_>,
    z: Var,
    window: &[Var],
    h0: Var,
    slots: &[AttnProjection],
    src_valid: &[bool],
) -> Result<Var> {
    let queries = slots
        .iter()
        .map(|p| tape.matmul(z, p.query))
        .collect::<Result<Vec<_>>>()?;
    attend_each(tape, &queries, window, h0, slots, src_valid)
}

/// Attention for an already projected query; keys and values come from the
/// concatenated window. `proj.query` is ignored.
pub(crate) fn attend(
    tape: &mut Tape<'_>,
    q: Var,
    window: &[Var],
    h0: Var,
    proj: &AttnProjection,
    src_valid: &[bool],
) -> Result<Var> {
    let cat = if window.len() == 1 {
        window[0]
    } else {
        tape.concat(window)?
    };
    let k = tape.matmul(cat, proj.key)?;
    let v_cat = tape.matmul(cat, proj.value)?;
    let v_emb = tape.matmul(h0, proj.embed_value)?;
    let v = tape.add(v_cat, v_emb)?;
    attention_core(tape, q, k, v, src_valid)
}

/// Sum of per-slot attention terms for already projected queries.
pub(crate) fn attend_each(
    tape: &mut Tape<'_>,
    queries: &[Var],
    window: &[Var],
    h0: Var,
    slots: &[AttnProjection],
    src_valid: &[bool],
) -> Result<Var> {
    debug_assert_eq!(window.len(), slots.len());
    let mut total: Option<Var> = None;
    for ((&h, proj), &q) in window.iter().zip(slots).zip(queries) {
        let term = attend(tape, q, &[h], h0, proj, src_valid)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("attention window is never empty"))
}

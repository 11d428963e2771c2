use crate::autodiff::{Tape, Var};
use crate::data::{Batch, PAD};
use crate::error::{Error, Result};
use crate::model::{decoder_forward, encoder_forward, Forward, ModelConfig, Parameters};

/// Summed negative log-likelihood of one unpadded example.
pub fn example_nll(
    fw: &mut Forward<'_, '_>,
    cfg: &ModelConfig,
    src: &[usize],
    tgt_in: &[usize],
    tgt_out: &[usize],
) -> Result<Var> {
    let enc = encoder_forward(fw, cfg, src, None)?;
    let (_, logits) = decoder_forward(fw, cfg, &enc, tgt_in)?;
    fw.tape.nll_sum(logits, tgt_out, PAD)
}

fn check_batch(batch: &Batch) -> Result<usize> {
    let tokens = batch.target_tokens();
    if batch.is_empty() || tokens == 0 {
        return Err(Error::DegenerateBatch);
    }
    Ok(tokens)
}

/// Mean negative log-likelihood per non-pad target token.
pub fn batch_loss(params: &Parameters, cfg: &ModelConfig, batch: &Batch) -> Result<f64> {
    Ok(batch_nll(params, cfg, batch)? / check_batch(batch)? as f64)
}

/// Summed negative log-likelihood over a batch, without gradients.
pub fn batch_nll(params: &Parameters, cfg: &ModelConfig, batch: &Batch) -> Result<f64> {
    let mut total = 0.0;
    for b in 0..batch.len() {
        let (src, tgt_in, tgt_out) = batch.example(b);
        let mut tape = Tape::new();
        let mut fw = Forward::new(&mut tape, params);
        let nll = example_nll(&mut fw, cfg, src, tgt_in, tgt_out)?;
        total += tape.value(nll)[0];
    }
    Ok(total)
}

/// Loss and gradients of the token-mean loss. Each example gets its own tape;
/// gradients are added in example order, so results do not depend on
/// anything but the inputs. `dropout_seed` enables dropout.
pub fn batch_gradients(
    params: &Parameters,
    cfg: &ModelConfig,
    batch: &Batch,
    dropout_seed: Option<u64>,
) -> Result<(f64, Parameters)> {
    let tokens = check_batch(batch)? as f64;
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for b in 0..batch.len() {
        let (src, tgt_in, tgt_out) = batch.example(b);
        let mut tape = Tape::new();
        let mut fw = Forward::new(&mut tape, params);
        if let Some(seed) = dropout_seed {
            fw = fw.with_dropout(cfg.dropout, seed.wrapping_add(b as u64));
        }
        let nll = example_nll(&mut fw, cfg, src, tgt_in, tgt_out)?;
        let bound: Vec<(usize, Var)> = fw.bound().collect();
        total += tape.value(nll)[0];
        let loss = tape.scale(nll, 1.0 / tokens);
        tape.backward(loss)?;
        for (i, v) in bound {
            if let Some(g) = tape.grad(v) {
                let acc = &mut grads.by_index_mut(i).1.values;
                acc.iter_mut().zip(g).for_each(|(a, g)| *a += g);
            }
        }
    }
    Ok((total / tokens, grads))
}

/// Token-mean loss over many batches.
pub fn corpus_loss(params: &Parameters, cfg: &ModelConfig, batches: &[Batch]) -> Result<f64> {
    let mut nll = 0.0;
    let mut tokens = 0;
    for batch in batches {
        tokens += check_batch(batch)?;
        nll += batch_nll(params, cfg, batch)?;
    }
    if tokens == 0 {
        return Err(Error::DegenerateBatch);
    }
    Ok(nll / tokens as f64)
}

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::{Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};

/// A whitespace-tokenized sentence pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

impl Pair {
    pub fn new(src: &str, tgt: &str) -> Self {
        Pair {
            src: src.split_whitespace().map(String::from).collect(),
            tgt: tgt.split_whitespace().map(String::from).collect(),
        }
    }
}

/// Reads a UTF-8 text file as lines.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(String::from).collect())
}

/// Whether a pair survives the length filter: neither side empty, neither
/// longer than `max_len`, and `max(n, m) / min(n, m)` not above `max_ratio`.
pub fn keep_pair(n: usize, m: usize, max_ratio: f64, max_len: Option<usize>) -> bool {
    if n == 0 || m == 0 {
        return false;
    }
    if max_len.is_some_and(|l| n > l || m > l) {
        return false;
    }
    n.max(m) as f64 <= max_ratio * n.min(m) as f64
}

/// Pairs lines of two aligned files and drops those failing [`keep_pair`].
/// Order is preserved.
pub fn pair_lines(src: &[String], tgt: &[String], max_ratio: f64, max_len: Option<usize>) -> Result<Vec<Pair>> {
    if src.len() != tgt.len() {
        return Err(Error::Data(format!(
            "line count mismatch: source has {}, target has {}",
            src.len(),
            tgt.len()
        )));
    }
    Ok(src
        .iter()
        .zip(tgt)
        .map(|(s, t)| Pair::new(s, t))
        .filter(|p| keep_pair(p.src.len(), p.tgt.len(), max_ratio, max_len))
        .collect())
}

pub fn load_parallel_corpus(
    src_path: &Path,
    tgt_path: &Path,
    max_ratio: f64,
    max_len: Option<usize>,
) -> Result<Vec<Pair>> {
    pair_lines(&read_lines(src_path)?, &read_lines(tgt_path)?, max_ratio, max_len)
}

/// A pair mapped to ids. The source ends with EOS; `tgt` has no specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

impl EncodedPair {
    pub fn tgt_in(&self) -> Vec<usize> {
        std::iter::once(BOS).chain(self.tgt.iter().copied()).collect()
    }

    pub fn tgt_out(&self) -> Vec<usize> {
        self.tgt.iter().copied().chain(std::iter::once(EOS)).collect()
    }
}

/// Source ids of a tokenized sentence, EOS-terminated.
pub fn encode_source<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S]) -> Vec<usize> {
    let mut ids = vocab.encode(tokens);
    ids.push(EOS);
    ids
}

pub fn encode_pairs(pairs: &[Pair], src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Vec<EncodedPair> {
    pairs
        .iter()
        .map(|p| EncodedPair {
            src: encode_source(src_vocab, &p.src),
            tgt: tgt_vocab.encode(&p.tgt),
        })
        .collect()
}

/// A padded mini-batch. Rows are examples; padding is PAD and masked out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub src_ids: Vec<Vec<usize>>,
    pub tgt_in_ids: Vec<Vec<usize>>,
    pub tgt_out_ids: Vec<Vec<usize>>,
    pub src_mask: Vec<Vec<bool>>,
    pub tgt_mask: Vec<Vec<bool>>,
}

fn pad_rows(rows: &[Vec<usize>]) -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    rows.iter()
        .map(|r| {
            let mut ids = r.clone();
            ids.resize(width, PAD);
            let mask = (0..width).map(|j| j < r.len()).collect();
            (ids, mask)
        })
        .unzip()
}

impl Batch {
    pub fn from_pairs(pairs: &[&EncodedPair]) -> Batch {
        let src: Vec<Vec<usize>> = pairs.iter().map(|p| p.src.clone()).collect();
        let tgt_in: Vec<Vec<usize>> = pairs.iter().map(|p| p.tgt_in()).collect();
        let tgt_out: Vec<Vec<usize>> = pairs.iter().map(|p| p.tgt_out()).collect();
        let (src_ids, src_mask) = pad_rows(&src);
        let (tgt_in_ids, tgt_mask) = pad_rows(&tgt_in);
        let (tgt_out_ids, _) = pad_rows(&tgt_out);
        Batch {
            src_ids,
            tgt_in_ids,
            tgt_out_ids,
            src_mask,
            tgt_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.src_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src_ids.is_empty()
    }

    /// Unpadded `(src, tgt_in, tgt_out)` of example `b`.
    pub fn example(&self, b: usize) -> (&[usize], &[usize], &[usize]) {
        let n = self.src_mask[b].iter().filter(|&&v| v).count();
        let m = self.tgt_mask[b].iter().filter(|&&v| v).count();
        (
            &self.src_ids[b][..n],
            &self.tgt_in_ids[b][..m],
            &self.tgt_out_ids[b][..m],
        )
    }

    /// Number of non-pad target tokens.
    pub fn target_tokens(&self) -> usize {
        self.tgt_mask.iter().flatten().filter(|&&v| v).count()
    }
}

/// Shuffles with a generator keyed by `(seed, epoch)` and cuts into batches
/// of `batch_size` (the last may be smaller).
pub fn batch_encoded(pairs: &[EncodedPair], batch_size: usize, seed: u64, epoch: u64) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order
        .chunks(batch_size.max(1))
        .map(|idx| Batch::from_pairs(&idx.iter().map(|&i| &pairs[i]).collect::<Vec<_>>()))
        .collect()
}

pub fn make_batches(
    pairs: &[Pair],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Vec<Batch> {
    batch_encoded(&encode_pairs(pairs, src_vocab, tgt_vocab), batch_size, seed, epoch)
}

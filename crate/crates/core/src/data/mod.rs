//! Subword segmentation, vocabularies, parallel corpora and batching.

mod bpe;
mod corpus;
mod vocab;

pub use bpe::{bpe_decode, bpe_decode_line, BpeModel, END_OF_WORD};
pub use corpus::{
    batch_encoded, encode_pairs, encode_source, keep_pair, load_parallel_corpus, make_batches, pair_lines, read_lines,
    Batch, EncodedPair, Pair,
};
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};

//! Vocabulary and BPE files kept next to checkpoints.

use std::path::Path;

use densenmt::data::{bpe_decode_line, encode_source, BpeModel, Vocabulary, EOS};
use densenmt::{Error, Result};

pub const SRC_VOCAB: &str = "src.vocab";
pub const TGT_VOCAB: &str = "tgt.vocab";
pub const SRC_BPE: &str = "src.bpe";
pub const TGT_BPE: &str = "tgt.bpe";

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io(path, e))
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}

pub fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything besides parameters needed to turn text into ids and back.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub src_bpe: Option<BpeModel>,
    pub tgt_bpe: Option<BpeModel>,
}

impl Artifacts {
    pub fn save(&self, dir: &Path) -> Result<()> {
        write(&dir.join(SRC_VOCAB), &self.src_vocab.to_file_string())?;
        write(&dir.join(TGT_VOCAB), &self.tgt_vocab.to_file_string())?;
        for (name, bpe) in [(SRC_BPE, &self.src_bpe), (TGT_BPE, &self.tgt_bpe)] {
            let path = dir.join(name);
            match bpe {
                Some(m) => write(&path, &m.to_file_string())?,
                None if path.exists() => std::fs::remove_file(&path).map_err(|e| io(&path, e))?,
                None => {}
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let bpe = |name: &str| -> Result<Option<BpeModel>> {
            let path = dir.join(name);
            if path.exists() {
                BpeModel::parse(&read(&path)?).map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(Artifacts {
            src_vocab: Vocabulary::parse(&read(&dir.join(SRC_VOCAB))?)?,
            tgt_vocab: Vocabulary::parse(&read(&dir.join(TGT_VOCAB))?)?,
            src_bpe: bpe(SRC_BPE)?,
            tgt_bpe: bpe(TGT_BPE)?,
        })
    }

    /// Source line to model ids, EOS-terminated and cut to `max_positions`.
    pub fn encode_source_line(&self, line: &str, max_positions: usize) -> Vec<usize> {
        let tokens = segment(&self.src_bpe, line);
        let mut ids = encode_source(&self.src_vocab, &tokens);
        if ids.len() > max_positions {
            ids.truncate(max_positions.saturating_sub(1));
            ids.push(EOS);
        }
        ids
    }

    /// Target ids (BOS first) back to text.
    pub fn decode_target(&self, ids: &[usize]) -> Result<String> {
        let tokens = self.tgt_vocab.decode(ids)?;
        Ok(match self.tgt_bpe {
            Some(_) => bpe_decode_line(&tokens),
            None => tokens.join(" "),
        })
    }
}

/// Whitespace tokens, subword-segmented when a BPE model is present.
pub fn segment(bpe: &Option<BpeModel>, line: &str) -> Vec<String> {
    match bpe {
        Some(m) => m.apply_line(line),
        None => line.split_whitespace().map(String::from).collect(),
    }
}

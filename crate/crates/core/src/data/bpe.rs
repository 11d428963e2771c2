//! Byte-pair encoding with an end-of-word marker on the final symbol.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Appended to the last symbol of every word.
pub const END_OF_WORD: &str = "</w>";

const FILE_HEADER: &str = "bpe-v1";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BpeModel {
    /// Merges in learning order; earlier merges have higher priority.
    pub merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

/// Splits a word into characters, marking the last one.
fn symbols(word: &str) -> Vec<String> {
    let mut out: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = out.last_mut() {
        last.push_str(END_OF_WORD);
    }
    out
}

fn merge_pair(word: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == left && word[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(word[i].clone());
            i += 1;
        }
    }
    out
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, m) in merges.iter().enumerate() {
            ranks.entry(m.clone()).or_insert(i);
        }
        BpeModel { merges, ranks }
    }

    /// Learns up to `num_merges` merges from whitespace-separated text.
    /// Ties in pair frequency go to the lexicographically smallest pair, and
    /// learning stops early once no pair occurs at least twice.
    pub fn learn<'a>(words: impl IntoIterator<Item = &'a str>, num_merges: usize) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for w in words {
            *counts.entry(w).or_default() += 1;
        }
        if counts.is_empty() {
            return Err(Error::Data("cannot learn BPE from an empty corpus".into()));
        }
        let mut vocab: Vec<(Vec<String>, usize)> = counts.into_iter().map(|(w, c)| (symbols(w), c)).collect();
        vocab.sort();
        let mut merges = Vec::with_capacity(num_merges);
        while merges.len() < num_merges {
            let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
            for (word, count) in &vocab {
                for p in word.windows(2) {
                    *pairs.entry((&p[0], &p[1])).or_default() += count;
                }
            }
            let best = pairs
                .into_iter()
                .max_by(|(a, ca), (b, cb)| ca.cmp(cb).then_with(|| b.cmp(a)));
            let Some(((left, right), freq)) = best else { break };
            if freq < 2 {
                break;
            }
            let (left, right) = (left.to_string(), right.to_string());
            for (word, _) in vocab.iter_mut() {
                if word.windows(2).any(|p| p[0] == left && p[1] == right) {
                    *word = merge_pair(word, &left, &right);
                }
            }
            merges.push((left, right));
        }
        Ok(BpeModel::from_merges(merges))
    }

    /// Segments one word by repeatedly applying the best-ranked merge.
    pub fn apply(&self, word: &str) -> Vec<String> {
        let mut parts = symbols(word);
        loop {
            let best = parts
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())))
                .min();
            let Some(&rank) = best else { break };
            let (left, right) = &self.merges[rank];
            parts = merge_pair(&parts, left, right);
        }
        parts
    }

    /// Segments a whitespace-tokenized line.
    pub fn apply_line(&self, line: &str) -> Vec<String> {
        line.split_whitespace().flat_map(|w| self.apply(w)).collect()
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::from(FILE_HEADER);
        s.push('\n');
        for (l, r) in &self.merges {
            let _ = writeln!(s, "{l} {r}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(FILE_HEADER) {
            return Err(Error::Data(format!("BPE file must start with `{FILE_HEADER}`")));
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut it = line.split(' ');
            match (it.next(), it.next(), it.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => return Err(Error::Data(format!("BPE file line {}: expected `left right`", i + 2))),
            }
        }
        Ok(BpeModel::from_merges(merges))
    }
}

/// Joins the subwords of one word, dropping the end-of-word marker.
pub fn bpe_decode(subwords: &[String]) -> String {
    subwords
        .iter()
        .map(|s| s.strip_suffix(END_OF_WORD).unwrap_or(s))
        .collect()
}

/// Rebuilds a space-separated sentence from a subword sequence. A word ends
/// at every symbol carrying the marker; trailing unmarked symbols still form
/// a final word.
pub fn bpe_decode_line<S: AsRef<str>>(subwords: &[S]) -> String {
    let mut words = Vec::new();
    let mut current = String::new();
    for s in subwords {
        let s = s.as_ref();
        match s.strip_suffix(END_OF_WORD) {
            Some(stem) => {
                current.push_str(stem);
                words.push(std::mem::take(&mut current));
            }
            None => current.push_str(s),
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words.join(" ")
}

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from token occurrences, most frequent first with
    /// ties broken by token text. `max_size` includes the four specials.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, max_size: Option<usize>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            if !SPECIALS.contains(&t) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let keep = max_size.map_or(ranked.len(), |m| m.saturating_sub(SPECIALS.len()));
        ranked.truncate(keep);
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string())).expect("ranked tokens are unique")
    }

    /// Specials followed by `tokens` in order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Unknown tokens map to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.id_to_token.get(id).map(String::as_str).ok_or(Error::Vocabulary {
            index: id,
            size: self.len(),
        })
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Tokens for `ids`, stopping at the first EOS and skipping PAD and BOS.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<&str>> {
        let mut out = Vec::new();
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS => {}
                _ => out.push(self.token(id)?),
            }
        }
        Ok(out)
    }

    /// One token per line; the line number minus one is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = self.id_to_token.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < SPECIALS.len() || lines[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Data(format!(
                "vocabulary file must begin with {}",
                SPECIALS.join(", ")
            )));
        }
        Self::from_tokens(lines[SPECIALS.len()..].iter().map(|s| s.to_string()))
    }
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{control_token, is_control_token, Relation, CONTROL_EQ, CONTROL_FWD, CONTROL_REV};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token inventory: four reserved symbols, corpus tokens by descending
/// frequency (ties alphabetical), then the three control tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn build<'a, I, S>(sentences: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]> + 'a,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for s in sentences {
            for t in s.as_ref() {
                if RESERVED.contains(&t.as_str()) || is_control_token(t) {
                    continue;
                }
                *counts.entry(t.clone()).or_default() += 1;
            }
        }
        let mut corpus: Vec<(String, usize)> = counts.into_iter().collect();
        corpus.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(corpus.into_iter().map(|(t, _)| t))
            .chain([CONTROL_EQ, CONTROL_FWD, CONTROL_REV].map(String::from))
            .collect();
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        if RESERVED.contains(&token) {
            return UNK;
        }
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or("<unk>")
    }

    pub fn control_id(&self, relation: Relation) -> Result<u32> {
        let t = control_token(relation)?;
        self.index.get(t).copied().ok_or_else(|| Error::InvalidArgument(format!("vocabulary lacks {t}")))
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Stops at the first EOS and skips other reserved ids.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    /// Ids that may never be emitted as output tokens.
    pub fn banned_outputs(&self) -> Vec<u32> {
        let mut v = vec![PAD, BOS, UNK];
        v.extend(self.tokens.iter().enumerate().filter(|(_, t)| is_control_token(t)).map(|(i, _)| i as u32));
        v
    }
}

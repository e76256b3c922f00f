use std::collections::{BTreeMap, HashMap};

use super::tsv::RawNews;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD_TOKEN: &str = "[PAD]";
const UNK_TOKEN: &str = "[UNK]";

/// Lowercase and split on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Token ↔ id map. Ids are assigned by descending frequency, ties broken by
/// lexicographic token order, after the reserved padding and unknown ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        // BTreeMap order is lexicographic; a stable sort by count keeps it for ties.
        ranked.sort_by_key(|r| std::cmp::Reverse(r.1));
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t))
    }

    pub fn from_titles(news: &[RawNews]) -> Self {
        Self::build(news.iter().map(|n| n.title.as_str()), 1)
    }

    /// Tokens in id order, starting at id 2.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(tokens);
        let ids = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens: all, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids for `text`, padded or truncated to `len`, plus the real count.
    pub fn encode(&self, text: &str, len: usize) -> (Vec<usize>, usize) {
        let mut ids: Vec<usize> = tokenize(text).iter().map(|t| self.id(t)).take(len).collect();
        let real = ids.len();
        ids.resize(len, PAD_ID);
        (ids, real)
    }
}

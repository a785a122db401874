//! Token vocabularies with four reserved ids.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_tokens(std::iter::empty::<&str>()).expect("specials are distinct")
    }
}

impl Vocab {
    /// Specials first, then `tokens` in order. Repeats are an error.
    pub fn from_tokens<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in SPECIALS.iter().map(|s| s.to_string()).chain(tokens.into_iter().map(|t| t.as_ref().to_owned())) {
            if v.index.contains_key(&t) {
                return Err(Error::invalid(format!("duplicate vocabulary entry `{t}`")));
            }
            v.index.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        Ok(v)
    }

    /// Every distinct token of `sentences`, ordered by descending count and
    /// then lexicographically, keeping those seen at least `min_count` times.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a [String]>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                if !SPECIALS.contains(&t.as_str()) {
                    *counts.entry(t.as_str()).or_default() += 1;
                }
            }
        }
        let mut entries: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Vocab::from_tokens(entries.into_iter().map(|(t, _)| t)).expect("tokens are distinct")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(SPECIALS[UNK], String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[impl AsRef<str>]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_owned()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_take_the_first_ids() {
        let v = Vocab::from_tokens(["a", "b"]).unwrap();
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("<eos>"), EOS);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.decode(&[4, 5]), ["a", "b"]);
    }

    #[test]
    fn build_orders_by_count_then_text() {
        let s: Vec<Vec<String>> = vec![
            "b a c".split(' ').map(String::from).collect(),
            "c a".split(' ').map(String::from).collect(),
        ];
        let v = Vocab::build(s.iter().map(Vec::as_slice), 1);
        assert_eq!(&v.tokens()[4..], ["a", "c", "b"]);
        let v = Vocab::build(s.iter().map(Vec::as_slice), 2);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn duplicates_are_rejected() {
        assert!(Vocab::from_tokens(["a", "a"]).is_err());
        assert!(Vocab::from_tokens(["<unk>"]).is_err());
    }
}

//! Token vocabulary for the transformer.

use std::collections::HashMap;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::normalize::Placeholder;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const CLS: u32 = 3;

const CONTROL: [&str; 4] = ["[PAD]", "[UNK]", "[MASK]", "[CLS]"];

/// Number of reserved ids: four control tokens plus the six placeholders.
pub const N_SPECIAL: usize = CONTROL.len() + Placeholder::ALL.len();

/// Dense token ids. Ids `0..N_SPECIAL` are reserved; ordinary words follow in
/// frequency-descending, then lexicographic, order. Words are lowercased;
/// placeholder surfaces are matched as-is.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    min_freq: usize,
}

fn special_tokens() -> impl Iterator<Item = &'static str> {
    CONTROL
        .into_iter()
        .chain(Placeholder::ALL.into_iter().map(Placeholder::surface))
}

impl Vocab {
    /// Counts words over `sentences` and keeps those seen at least
    /// `min_freq` times.
    pub fn build<'a, S, W>(sentences: S, min_freq: usize) -> Result<Self>
    where
        S: IntoIterator<Item = W>,
        W: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut n_sentences = 0;
        for words in sentences {
            n_sentences += 1;
            for w in words {
                if Self::reserved_id(w).is_none() {
                    *counts.entry(w.to_lowercase()).or_default() += 1;
                }
            }
        }
        if n_sentences == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq.max(1)).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = special_tokens()
            .map(str::to_string)
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens, min_freq)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Result<Self> {
        if tokens.len() < N_SPECIAL || !tokens.iter().zip(special_tokens()).all(|(a, b)| a == b) {
            return Err(Error::ModelFormat(
                "vocabulary does not start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::ModelFormat(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Self {
            tokens,
            index,
            min_freq,
        })
    }

    fn reserved_id(word: &str) -> Option<u32> {
        special_tokens().position(|s| s == word).map(|i| i as u32)
    }

    pub fn id(&self, word: &str) -> u32 {
        if let Some(id) = Self::reserved_id(word) {
            return id;
        }
        self.index.get(&word.to_lowercase()).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// `[CLS]` followed by the word ids, truncated to `max_len`.
    pub fn encode<'a>(&self, words: impl IntoIterator<Item = &'a str>, max_len: usize) -> Vec<u32> {
        std::iter::once(CLS)
            .chain(words.into_iter().map(|w| self.id(w)))
            .take(max_len)
            .collect()
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < N_SPECIAL
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line in id order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }
}

pub fn build_vocab(corpus: &Corpus, min_freq: usize) -> Result<Vocab> {
    Vocab::build(corpus.sentences().map(|s| s.words()), min_freq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(lines: &[&'static str]) -> Vec<Vec<&'static str>> {
        lines.iter().map(|l| l.split_whitespace().collect()).collect()
    }

    #[test]
    fn cutoff_and_specials() {
        let v = Vocab::build(split(&["the the the", "[EXE] ran"]), 2).unwrap();
        assert_eq!(v.len(), N_SPECIAL + 1);
        assert_eq!(v.id("the"), N_SPECIAL as u32);
        assert_eq!(v.id("The"), N_SPECIAL as u32);
        assert_eq!(v.id("ran"), UNK);
        for p in Placeholder::ALL {
            assert!(Vocab::is_special(v.id(p.surface())));
        }
        assert_eq!(v.id("[MASK]"), MASK);
    }

    #[test]
    fn frequency_then_lexicographic() {
        let v = Vocab::build(split(&["b a c", "c a", "c"]), 1).unwrap();
        let words: Vec<_> = v.tokens()[N_SPECIAL..].to_vec();
        assert_eq!(words, vec!["c", "a", "b"]);
    }

    #[test]
    fn dump_is_deterministic() {
        let corpus = split(&["x y z y", "q z y"]);
        let a = Vocab::build(corpus.clone(), 1).unwrap().dump();
        let b = Vocab::build(corpus, 1).unwrap().dump();
        assert_eq!(a, b);
        assert!(a.starts_with("[PAD]\n[UNK]\n[MASK]\n[CLS]\n[EXE]\n"));
    }

    #[test]
    fn empty_corpus_rejected() {
        let none: Vec<Vec<&str>> = Vec::new();
        assert!(matches!(Vocab::build(none, 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn encode_prepends_cls_and_truncates() {
        let v = Vocab::build(split(&["a b c"]), 1).unwrap();
        let ids = v.encode(["a", "b", "c", "zz"], 4);
        assert_eq!(ids[0], CLS);
        assert_eq!(ids.len(), 4);
        assert_eq!(v.encode(["zz"], 8), vec![CLS, UNK]);
    }

    #[test]
    fn from_tokens_validates_prefix() {
        assert!(Vocab::from_tokens(vec!["a".into()], 1).is_err());
        let v = Vocab::build(split(&["a a"]), 1).unwrap();
        assert_eq!(Vocab::from_tokens(v.tokens().to_vec(), 1).unwrap(), v);
    }
}

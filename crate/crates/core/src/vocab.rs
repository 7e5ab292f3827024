//! Token to id mapping with reserved sentence-boundary and unknown entries.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

/// Number of reserved ids at the front of every vocabulary.
pub const RESERVED: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list whose first three
    /// entries must be the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED
            || tokens[BOS as usize] != BOS_TOKEN
            || tokens[EOS as usize] != EOS_TOKEN
            || tokens[UNK as usize] != UNK_TOKEN
        {
            return Err(Error::invalid(
                "vocabulary must start with the reserved tokens <s>, </s>, <unk>",
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate vocabulary token `{tok}`"
                )));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<u32> {
        sentence.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }
}

/// Keeps the `max_size - 3` most frequent corpus tokens; ties go to the token
/// seen first. Literal reserved strings in the corpus are not counted.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], max_size: usize) -> Result<Vocabulary> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::Empty("corpus for vocabulary"));
    }
    if max_size <= RESERVED {
        return Err(Error::invalid(format!(
            "vocabulary max_size must exceed {RESERVED}, got {max_size}"
        )));
    }

    // token -> (count, first occurrence)
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut position = 0usize;
    for sentence in corpus {
        for tok in sentence {
            let tok = tok.as_ref();
            if tok == BOS_TOKEN || tok == EOS_TOKEN || tok == UNK_TOKEN {
                continue;
            }
            counts.entry(tok).or_insert((0, position)).0 += 1;
            position += 1;
        }
    }

    let mut ranked: Vec<(&str, usize, usize)> = counts
        .into_iter()
        .map(|(t, (c, first))| (t, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));

    let mut tokens = vec![
        BOS_TOKEN.to_string(),
        EOS_TOKEN.to_string(),
        UNK_TOKEN.to_string(),
    ];
    tokens.extend(
        ranked
            .into_iter()
            .take(max_size - RESERVED)
            .map(|(t, _, _)| t.to_string()),
    );
    Vocabulary::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(text: &str) -> Vec<Vec<String>> {
        vec![text.split_whitespace().map(str::to_string).collect()]
    }

    #[test]
    fn all_tokens_fit() {
        let v = build_vocab(&corpus("a a b"), 5).unwrap();
        assert_eq!(v.tokens(), ["<s>", "</s>", "<unk>", "a", "b"]);
    }

    #[test]
    fn truncation_maps_rest_to_unk() {
        let v = build_vocab(&corpus("a a b c"), 4).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.id("c"), UNK);
    }

    #[test]
    fn ties_by_first_occurrence() {
        let v = build_vocab(&corpus("c b a b c a"), 5).unwrap();
        assert_eq!(&v.tokens()[3..], ["c", "b"]);
    }

    #[test]
    fn empty_corpus_is_error() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(matches!(build_vocab(&empty, 10), Err(Error::Empty(_))));
        assert!(build_vocab(&[Vec::<String>::new()], 10).is_err());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let v = build_vocab(&corpus("x y z x"), 10).unwrap();
        for id in 0..v.len() as u32 {
            assert_eq!(v.encode(&v.decode(&[id]))[0], id);
        }
        assert_eq!(v.id("never-seen"), UNK);
    }

    #[test]
    fn rejects_bad_reserved_prefix() {
        let toks = vec!["a".to_string(), "b".into(), "c".into()];
        assert!(Vocabulary::from_tokens(toks).is_err());
    }
}

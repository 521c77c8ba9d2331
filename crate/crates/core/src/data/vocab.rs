use std::collections::HashMap;

use super::{RawStory, Story};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PLACEHOLDER: &str = "@placeholder";
pub const ENTITY_PREFIX: &str = "@entity";

/// Dense token ↔ id map with `0 = PAD`, `1 = UNK`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
}

fn story_tokens(s: &RawStory) -> impl Iterator<Item = &String> {
    s.sentences
        .iter()
        .flatten()
        .chain(&s.question)
        .chain(std::iter::once(&s.answer))
        .chain(s.candidates.iter().flatten())
}

impl Vocabulary {
    /// Keeps the `max_size − 2` most frequent tokens; ties go to the
    /// lexicographically smaller token.
    pub fn build<'a>(stories: impl IntoIterator<Item = &'a RawStory>, max_size: usize) -> Result<Self> {
        if max_size < 3 {
            return Err(Error::Argument(format!("vocabulary size {max_size} < 3")));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for s in stories {
            for t in story_tokens(s) {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        freq.remove(PAD_TOKEN);
        freq.remove(UNK_TOKEN);
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - 2);

        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut counts = vec![0, 0];
        for (t, c) in ranked {
            tokens.push(t.to_string());
            counts.push(c);
        }
        Ok(Self::from_parts(tokens, counts))
    }

    /// Rebuilds a vocabulary from its token list (ids are positions).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::Vocabulary("token list must start with <pad>, <unk>".into()));
        }
        let n = tokens.len();
        let v = Self::from_parts(tokens, vec![0; n]);
        if v.index.len() != n {
            return Err(Error::Vocabulary("duplicate tokens".into()));
        }
        Ok(v)
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<u64>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            index,
            counts,
        }
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

    /// Training-corpus frequency of each id (zero for restored vocabularies).
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK_TOKEN, String::as_str)
    }

    pub fn is_entity(&self, id: usize) -> bool {
        self.token(id).starts_with(ENTITY_PREFIX)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Maps a story to ids. Answers and candidates must be known tokens.
    pub fn encode_story(&self, s: &RawStory) -> Result<Story> {
        let known = |t: &str| {
            self.get(t).ok_or_else(|| {
                Error::Vocabulary(format!("answer or candidate {t:?} not in vocabulary"))
            })
        };
        let answer = known(&s.answer)?;
        let candidates = match &s.candidates {
            Some(c) => Some(c.iter().map(|t| known(t)).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        Story::new(
            s.sentences.iter().map(|x| self.encode(x)).collect(),
            self.encode(&s.question),
            answer,
            s.supporting.clone(),
            candidates,
        )
    }

    pub fn decode_story(&self, s: &Story) -> RawStory {
        RawStory {
            sentences: s.sentences.iter().map(|x| self.decode(x)).collect(),
            question: self.decode(&s.question),
            answer: self.token(s.answer).to_string(),
            supporting: s.supporting.clone(),
            candidates: s.candidates.as_ref().map(|c| self.decode(c)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(sents: &[&str], q: &str, a: &str) -> RawStory {
        RawStory {
            sentences: sents
                .iter()
                .map(|s| s.split_whitespace().map(String::from).collect())
                .collect(),
            question: q.split_whitespace().map(String::from).collect(),
            answer: a.into(),
            supporting: vec![],
            candidates: None,
        }
    }

    #[test]
    fn large_cap_keeps_everything() {
        let s = raw(&["a b c", "c d"], "where c", "d");
        let v = Vocabulary::build([&s], 100).unwrap();
        assert_eq!(v.len(), 2 + 5);
        for t in ["a", "b", "c", "d", "where"] {
            assert_ne!(v.id(t), UNK);
        }
    }

    #[test]
    fn ties_break_lexicographically() {
        let s = raw(&["zeta alpha mid", "zeta alpha mid"], "q", "zeta");
        let v = Vocabulary::build([&s], 4).unwrap();
        // zeta: 3, alpha: 2, mid: 2, q: 1 -> keep zeta, alpha.
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "zeta", "alpha"]);
        assert_eq!(v.id("mid"), UNK);
    }

    #[test]
    fn single_repeated_token() {
        let s = raw(&["x x x"], "x", "x");
        let v = Vocabulary::build([&s], 10).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "x"]);
        assert_eq!(v.counts()[2], 5);
        assert!(Vocabulary::build([&s], 2).is_err());
    }

    #[test]
    fn restore_from_tokens() {
        let s = raw(&["a b"], "c", "a");
        let v = Vocabulary::build([&s], 10).unwrap();
        let w = Vocabulary::from_tokens(v.tokens().to_vec()).unwrap();
        assert_eq!(v.tokens(), w.tokens());
        assert_eq!(w.id("b"), v.id("b"));
        assert!(Vocabulary::from_tokens(vec!["a".into()]).is_err());
    }

    #[test]
    fn unknown_answer_is_a_vocabulary_error() {
        let s = raw(&["a b"], "c", "a");
        let v = Vocabulary::build([&s], 10).unwrap();
        let other = raw(&["a b"], "c", "zzz");
        assert!(matches!(v.encode_story(&other), Err(Error::Vocabulary(_))));
    }
}

//! Stories, vocabulary, the bAbI file format and synthetic generators.

pub mod babi;
pub mod synth;
pub mod vocab;

pub use babi::{parse_babi, parse_babi_str, serialize_babi};
pub use synth::{gen_entity_cloze, gen_entity_cloze_with, gen_single_fact, ClozeSpec, ClozeStory};
pub use vocab::{Vocabulary, PAD, PLACEHOLDER, UNK};

use crate::encoding::{build_question_window, build_windows};
use crate::error::{Error, Result};

/// A story in token form, as read from or written to disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawStory {
    pub sentences: Vec<Vec<String>>,
    pub question: Vec<String>,
    pub answer: String,
    /// 0-based indices of the supporting sentences.
    pub supporting: Vec<usize>,
    pub candidates: Option<Vec<String>>,
}

/// A story in id form, ready for the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Story {
    pub sentences: Vec<Vec<usize>>,
    pub question: Vec<usize>,
    pub answer: usize,
    pub supporting: Vec<usize>,
    pub candidates: Option<Vec<usize>>,
}

impl Story {
    pub fn new(
        sentences: Vec<Vec<usize>>,
        question: Vec<usize>,
        answer: usize,
        supporting: Vec<usize>,
        candidates: Option<Vec<usize>>,
    ) -> Result<Self> {
        if let Some(c) = &candidates {
            if !c.contains(&answer) {
                return Err(Error::Format("answer is not among the candidates".into()));
            }
        }
        if let Some(&bad) = supporting.iter().find(|&&i| i >= sentences.len()) {
            return Err(Error::Format(format!(
                "supporting index {bad} beyond {} sentences",
                sentences.len()
            )));
        }
        Ok(Self {
            sentences,
            question,
            answer,
            supporting,
            candidates,
        })
    }

    /// Index of the answer inside the candidate list, or the answer id itself.
    pub fn target_index(&self) -> usize {
        match &self.candidates {
            Some(c) => c.iter().position(|&x| x == self.answer).expect("checked on construction"),
            None => self.answer,
        }
    }

    pub fn max_sentence_len(&self) -> usize {
        self.sentences.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Lower-cases and splits on whitespace, detaching trailing `. ? ! , ;`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        let body = word.trim_end_matches(['.', '?', '!', ',', ';']);
        if !body.is_empty() {
            out.push(body.to_string());
        }
        for c in word[body.len()..].chars() {
            out.push(c.to_string());
        }
    }
    out
}

/// Replaces sentences by one `b`-token window per entity occurrence in the
/// flattened text, and the question by the window around `@placeholder`.
pub fn windowize(story: &Story, vocab: &Vocabulary, b: usize) -> Result<Story> {
    let text: Vec<usize> = story.sentences.concat();
    let positions: Vec<usize> = text
        .iter()
        .enumerate()
        .filter(|(_, &id)| vocab.is_entity(id))
        .map(|(i, _)| i)
        .collect();
    if positions.is_empty() {
        return Err(Error::Format("story has no entity markers to window".into()));
    }
    let placeholder = vocab
        .get(PLACEHOLDER)
        .ok_or_else(|| Error::Vocabulary("no @placeholder token".into()))?;
    let sentences = build_windows(&text, &positions, b, &PAD)?;
    let question = build_question_window(&story.question, &placeholder, b, &PAD)?;
    Story::new(sentences, question, story.answer, Vec::new(), story.candidates.clone())
}

/// Train / validation / test splits sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<Story>,
    pub valid: Vec<Story>,
    pub test: Vec<Story>,
}

impl Dataset {
    /// Builds the vocabulary over all splits and encodes them.
    pub fn from_raw(
        train: &[RawStory],
        valid: &[RawStory],
        test: &[RawStory],
        max_vocab: usize,
    ) -> Result<Self> {
        let mut vocab = Vocabulary::build(train.iter().chain(valid).chain(test), max_vocab)?;
        if train.iter().any(|s| s.question.iter().any(|t| t == PLACEHOLDER))
            && vocab.get(PLACEHOLDER).is_none()
        {
            let mut tokens = vocab.tokens().to_vec();
            tokens.push(PLACEHOLDER.to_string());
            vocab = Vocabulary::from_tokens(tokens)?;
        }
        Self::with_vocab(vocab, train, valid, test)
    }

    pub fn with_vocab(
        vocab: Vocabulary,
        train: &[RawStory],
        valid: &[RawStory],
        test: &[RawStory],
    ) -> Result<Self> {
        let enc = |xs: &[RawStory]| xs.iter().map(|s| vocab.encode_story(s)).collect::<Result<Vec<_>>>();
        Ok(Self {
            train: enc(train)?,
            valid: enc(valid)?,
            test: enc(test)?,
            vocab,
        })
    }

    /// Applies [`windowize`] to every split.
    pub fn windowed(&self, b: usize) -> Result<Self> {
        let w = |xs: &[Story]| {
            xs.iter()
                .map(|s| windowize(s, &self.vocab, b))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            vocab: self.vocab.clone(),
            train: w(&self.train)?,
            valid: w(&self.valid)?,
            test: w(&self.test)?,
        })
    }

    pub fn stories(&self) -> impl Iterator<Item = &Story> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub fn max_sentence_len(&self) -> usize {
        self.stories().map(Story::max_sentence_len).max().unwrap_or(1).max(1)
    }

    pub fn max_question_len(&self) -> usize {
        self.stories().map(|s| s.question.len()).max().unwrap_or(1).max(1)
    }
}

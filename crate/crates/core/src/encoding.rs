//! Input encoder: position-wise multiplicative masks over word embeddings,
//! plus the entity-centred windows used for cloze-style documents.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Sentence and question masks. Row `r` scales the embedding of the `r`-th token.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskBank<T: Real = f32> {
    pub sentence: Tensor<T>,
    pub question: Tensor<T>,
}

impl<T: Real> MaskBank<T> {
    /// All-ones masks, i.e. plain bag-of-embeddings.
    pub fn ones(max_sentence: usize, max_question: usize, dim: usize) -> Self {
        Self {
            sentence: Tensor::full(&[max_sentence, dim], T::one()),
            question: Tensor::full(&[max_question, dim], T::one()),
        }
    }

    pub fn max_sentence(&self) -> usize {
        self.sentence.rows()
    }

    pub fn max_question(&self) -> usize {
        self.question.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedStory<T: Real = f32> {
    pub sentence_vectors: Vec<Tensor<T>>,
    pub question_vector: Tensor<T>,
}

fn check_tokens<T: Real>(
    kind: &'static str,
    ids: &[usize],
    embedding: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<()> {
    if embedding.rank() != 2 || mask.rank() != 2 || embedding.cols() != mask.cols() {
        return Err(Error::dim("encode", embedding.shape(), mask.shape()));
    }
    if ids.len() > mask.rows() {
        return Err(Error::TooLong {
            kind,
            len: ids.len(),
            max: mask.rows(),
        });
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= embedding.rows()) {
        return Err(Error::Argument(format!(
            "token id {bad} outside vocabulary of {}",
            embedding.rows()
        )));
    }
    Ok(())
}

fn masked_sum<T: Real>(ids: &[usize], embedding: &Tensor<T>, mask: &Tensor<T>) -> Tensor<T> {
    let mut out = vec![T::zero(); embedding.cols()];
    for (r, &id) in ids.iter().enumerate() {
        for ((o, &e), &f) in out.iter_mut().zip(embedding.row(id)).zip(mask.row(r)) {
            *o += e * f;
        }
    }
    Tensor::vector(out)
}

/// `Σ_r E[w_r] ⊙ mask[r]` over the tokens actually present.
pub fn encode_sentence<T: Real>(
    ids: &[usize],
    embedding: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_tokens("sentence", ids, embedding, mask)?;
    Ok(masked_sum(ids, embedding, mask))
}

pub fn encode_question<T: Real>(
    ids: &[usize],
    embedding: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_tokens("question", ids, embedding, mask)?;
    Ok(masked_sum(ids, embedding, mask))
}

/// Tape version of the masked sum. `embedding` and `mask` are nodes holding
/// `[|V|×d]` and `[m×d]`.
pub fn encode_on_tape<T: Real>(
    tape: &mut Tape<T>,
    kind: &'static str,
    ids: &[usize],
    embedding: Var,
    mask: Var,
) -> Result<Var> {
    check_tokens(kind, ids, tape.value(embedding), tape.value(mask))?;
    if ids.is_empty() {
        let d = tape.value(embedding).cols();
        return Ok(tape.constant(Tensor::zeros(&[d])));
    }
    let e = tape.gather_rows(embedding, ids)?;
    let f = tape.slice_rows(mask, ids.len())?;
    let prod = tape.mul(e, f)?;
    tape.sum_rows(prod)
}

fn check_window(b: usize) -> Result<usize> {
    if b == 0 || b % 2 == 0 {
        return Err(Error::Argument(format!("window size must be odd and >= 1, got {b}")));
    }
    Ok((b - 1) / 2)
}

/// Pads `tokens` with `b − 1` copies of `pad` on each side.
pub fn pad_text<W: Clone>(tokens: &[W], pad: &W, b: usize) -> Vec<W> {
    let mut padded = Vec::with_capacity(tokens.len() + 2 * (b - 1));
    padded.extend(std::iter::repeat(pad.clone()).take(b - 1));
    padded.extend_from_slice(tokens);
    padded.extend(std::iter::repeat(pad.clone()).take(b - 1));
    padded
}

/// One `b`-token window per entity occurrence, centred on the entity.
///
/// `entity_positions` index the unpadded `tokens`; the text is padded with
/// `b − 1` tokens at each end before the windows are cut.
pub fn build_windows<W: Clone>(
    tokens: &[W],
    entity_positions: &[usize],
    b: usize,
    pad: &W,
) -> Result<Vec<Vec<W>>> {
    let radius = check_window(b)?;
    let padded = pad_text(tokens, pad, b);
    entity_positions
        .iter()
        .map(|&pos| {
            if pos >= tokens.len() {
                return Err(Error::Argument(format!(
                    "entity position {pos} outside text of {} tokens",
                    tokens.len()
                )));
            }
            let centre = pos + b - 1;
            Ok(padded[centre - radius..=centre + radius].to_vec())
        })
        .collect()
}

/// The window around the single placeholder token in a question.
pub fn build_question_window<W: Clone + PartialEq>(
    tokens: &[W],
    placeholder: &W,
    b: usize,
    pad: &W,
) -> Result<Vec<W>> {
    check_window(b)?;
    let hits: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| *t == placeholder)
        .map(|(i, _)| i)
        .collect();
    match hits.as_slice() {
        [pos] => Ok(build_windows(tokens, &[*pos], b, pad)?.remove(0)),
        [] => Err(Error::Format("question has no placeholder".into())),
        _ => Err(Error::Format(format!(
            "question has {} placeholders, expected one",
            hits.len()
        ))),
    }
}

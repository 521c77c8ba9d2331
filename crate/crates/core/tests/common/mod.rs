#![allow(dead_code)]

use qdren::data::synth::{default_entities, default_locations};
use qdren::data::{gen_single_fact, Dataset, Story};
use qdren::model::init_params;
use qdren::rng;
use qdren::{Activation, InputStyle, Mode, ModelConfig, ModelParams};
use rand::Rng as _;

pub const VOCAB: usize = 12;
pub const MAX_LEN: usize = 5;

pub fn small_config(mode: Mode, dim: usize, blocks: usize) -> ModelConfig {
    ModelConfig {
        dim,
        blocks,
        mode,
        input_style: InputStyle::Sentences,
        phi_cell: Activation::Prelu,
        phi_out: Activation::Prelu,
        dropout: 0.0,
        vocab_size: VOCAB,
        max_sentence_len: MAX_LEN,
        max_question_len: MAX_LEN,
        ..ModelConfig::default()
    }
}

pub fn params(config: &ModelConfig, seed: u64) -> ModelParams<f32> {
    init_params(config, &mut rng::stream(seed, rng::streams::INIT)).unwrap()
}

/// Random story over ids `2..VOCAB` with `steps` sentences.
pub fn random_story(seed: u64, steps: usize) -> Story {
    let mut r = rng::stream(seed, 99);
    let sent = |r: &mut rng::Rng| -> Vec<usize> {
        let n = r.gen_range(1..=MAX_LEN);
        (0..n).map(|_| r.gen_range(2..VOCAB)).collect()
    };
    let sentences = (0..steps).map(|_| sent(&mut r)).collect();
    let question = sent(&mut r);
    let answer = r.gen_range(2..VOCAB);
    Story::new(sentences, question, answer, vec![], None).unwrap()
}

/// Single-fact splits of the acceptance shape, scaled by `n`.
pub fn single_fact(n_train: usize, n_valid: usize, n_test: usize, story_len: usize) -> Dataset {
    let e = default_entities(5);
    let l = default_locations(6);
    let tr = gen_single_fact(1, n_train, &e, &l, story_len).unwrap();
    let va = gen_single_fact(2, n_valid, &e, &l, story_len).unwrap();
    let te = gen_single_fact(3, n_test, &e, &l, story_len).unwrap();
    Dataset::from_raw(&tr, &va, &te, 1000).unwrap()
}

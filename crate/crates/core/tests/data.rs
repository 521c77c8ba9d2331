use std::collections::HashMap;

use qdren::data::synth::{default_entities, default_locations, entity_token};
use qdren::data::{
    gen_entity_cloze, gen_entity_cloze_with, gen_single_fact, parse_babi_str, serialize_babi, windowize,
    ClozeSpec, Dataset, RawStory, Vocabulary, PAD, PLACEHOLDER, UNK,
};

/// Answers a single-fact story by scanning backwards for the last move of the asked entity.
fn replay_single_fact(s: &RawStory) -> (String, usize) {
    let who = &s.question[2];
    let (t, fact) = s
        .sentences
        .iter()
        .enumerate()
        .rev()
        .find(|(_, f)| &f[0] == who)
        .expect("asked entity is mentioned");
    (fact[4].clone(), t)
}

/// Answers a cloze story by finding the fact with the question's subject and relation.
fn replay_cloze(s: &RawStory) -> String {
    s.sentences
        .iter()
        .find(|f| f[0] == s.question[0] && f[1] == s.question[1])
        .map(|f| f[2].clone())
        .expect("queried fact is present")
}

#[test]
fn single_fact_oracle_is_perfect() {
    for story_len in [1, 2, 6, 10] {
        let stories = gen_single_fact(11, 500, &default_entities(5), &default_locations(6), story_len).unwrap();
        for s in &stories {
            let (answer, t) = replay_single_fact(s);
            assert_eq!(answer, s.answer);
            assert_eq!(s.supporting, vec![t]);
            assert_eq!(s.sentences.len(), story_len);
        }
    }
}

#[test]
fn cloze_oracle_is_perfect_and_candidates_hold_the_answer() {
    let stories = gen_entity_cloze(4, &ClozeSpec::new(2000, 10)).unwrap();
    for s in &stories {
        assert_eq!(replay_cloze(s), s.answer);
        let c = s.candidates.as_ref().unwrap();
        assert!(c.contains(&s.answer));
        assert!(s.question.contains(&PLACEHOLDER.to_string()));
        for f in &s.sentences {
            assert!(c.contains(&f[0]) && c.contains(&f[2]));
        }
    }
}

#[test]
fn generated_data_round_trips_through_the_text_format() {
    let sf = gen_single_fact(1, 50, &default_entities(5), &default_locations(6), 5).unwrap();
    assert_eq!(parse_babi_str(&serialize_babi(&sf)).unwrap(), sf);
    let cz = gen_entity_cloze(1, &ClozeSpec::new(50, 8)).unwrap();
    assert_eq!(parse_babi_str(&serialize_babi(&cz)).unwrap(), cz);
}

#[test]
fn anonymisation_preserves_the_answer_identity() {
    let spec = ClozeSpec::new(300, 12);
    let a = gen_entity_cloze_with(5, 100, &spec).unwrap();
    let b = gen_entity_cloze_with(5, 200, &spec).unwrap();
    let mut differs = 0;
    for (x, y) in a.iter().zip(&b) {
        // Undo each story's permutation and compare the abstract stories.
        let inverse = |c: &qdren::data::ClozeStory, tok: &str| -> String {
            match c.ids.iter().position(|&id| entity_token(id) == tok) {
                Some(k) => format!("E{k}"),
                None => tok.to_string(),
            }
        };
        let abs = |c: &qdren::data::ClozeStory| -> Vec<Vec<String>> {
            c.story.sentences.iter().map(|f| f.iter().map(|t| inverse(c, t)).collect()).collect()
        };
        assert_eq!(abs(x), abs(y));
        assert_eq!(x.answer_entity, y.answer_entity);
        assert_eq!(inverse(x, &x.story.answer), inverse(y, &y.story.answer));
        assert_eq!(x.story.answer, entity_token(x.ids[x.answer_entity]));
        differs += usize::from(x.story.answer != y.story.answer);
    }
    assert!(differs > 200, "permutations should usually change surface ids");
}

#[test]
fn answers_are_uniform_over_entity_ids() {
    let k = 10;
    let stories = gen_entity_cloze(8, &ClozeSpec::new(10_000, k)).unwrap();
    let mut counts = vec![0f64; k];
    for s in &stories {
        let id: usize = s.answer.trim_start_matches("@entity").parse().unwrap();
        counts[id] += 1.0;
    }
    let expected = stories.len() as f64 / k as f64;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    // 99.9th percentile of chi-square with 9 degrees of freedom.
    assert!(chi2 < 27.88, "chi2 = {chi2}, counts = {counts:?}");
}

#[test]
fn frequency_classifier_is_at_chance() {
    let spec = ClozeSpec::new(10_000, 10);
    let train = gen_entity_cloze(21, &spec).unwrap();
    let test = gen_entity_cloze(22, &spec).unwrap();
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in &train {
        *freq.entry(s.answer.as_str()).or_default() += 1;
    }
    let mut correct = 0usize;
    let mut chance = 0f64;
    for s in &test {
        let c = s.candidates.as_ref().unwrap();
        let guess = c.iter().max_by_key(|t| (freq.get(t.as_str()).copied().unwrap_or(0), std::cmp::Reverse(*t))).unwrap();
        correct += usize::from(*guess == s.answer);
        chance += 1.0 / c.len() as f64;
    }
    let acc = correct as f64 / test.len() as f64;
    let chance = chance / test.len() as f64;
    // Five binomial standard deviations at n = 10k.
    assert!((acc - chance).abs() < 0.02, "accuracy {acc} vs chance {chance}");
}

#[test]
fn generators_are_deterministic_per_seed() {
    let spec = ClozeSpec::new(40, 8);
    assert_eq!(gen_entity_cloze(3, &spec).unwrap(), gen_entity_cloze(3, &spec).unwrap());
    assert_ne!(gen_entity_cloze(3, &spec).unwrap(), gen_entity_cloze(4, &spec).unwrap());
    assert!(gen_entity_cloze(3, &ClozeSpec::new(5, 2)).is_err());
}

fn raw(sentences: &[&str], q: &str, a: &str) -> RawStory {
    let w = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    RawStory {
        sentences: sentences.iter().map(|s| w(s)).collect(),
        question: w(q),
        answer: a.into(),
        supporting: vec![],
        candidates: None,
    }
}

#[test]
fn vocabulary_ties_break_lexicographically() {
    let s = raw(&["b a c", "c b a"], "z", "a");
    let v = Vocabulary::build([&s], 4).unwrap();
    // a: 3, b: 2, c: 2, z: 1; one slot left after a, tie between b and c.
    assert_eq!(v.tokens(), ["<pad>", "<unk>", "a", "b"]);
    assert_eq!(v.id("c"), UNK);
    let all = Vocabulary::build([&s], 100).unwrap();
    assert_eq!(all.tokens(), ["<pad>", "<unk>", "a", "b", "c", "z"]);
    assert!(all.encode(&s.sentences.concat()).iter().all(|&i| i != UNK));
    let one = Vocabulary::build([&raw(&["x x x"], "x", "x")], 10).unwrap();
    assert_eq!(one.tokens(), ["<pad>", "<unk>", "x"]);
}

#[test]
fn windows_are_centred_on_entities() {
    let raws = gen_entity_cloze(2, &ClozeSpec::new(30, 8)).unwrap();
    let data = Dataset::from_raw(&raws, &raws[..1], &raws[..1], 1000).unwrap();
    for b in [1, 3, 5, 7] {
        for s in &data.train {
            let w = windowize(s, &data.vocab, b).unwrap();
            let occurrences = s.sentences.concat().iter().filter(|&&t| data.vocab.is_entity(t)).count();
            assert_eq!(w.sentences.len(), occurrences);
            for win in &w.sentences {
                assert_eq!(win.len(), b);
                assert!(data.vocab.is_entity(win[b / 2]));
            }
            assert_eq!(w.question.len(), b);
            assert_eq!(data.vocab.token(w.question[b / 2]), PLACEHOLDER);
            assert_eq!(w.answer, s.answer);
        }
    }
    // The first window of a story starts with b/2 pads.
    let w = windowize(&data.train[0], &data.vocab, 5).unwrap();
    assert_eq!(&w.sentences[0][..2], &[PAD, PAD]);
    assert!(windowize(&data.train[0], &data.vocab, 4).is_err());
}

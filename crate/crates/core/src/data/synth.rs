//! Desk-scale synthetic datasets.
//!
//! * single-fact: "X moved to the L" stories with a "where is X ?" question.
//! * entity-cloze: relational facts over anonymised `@entityN` ids with a
//!   `@placeholder` question and a per-story candidate list.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::vocab::{ENTITY_PREFIX, PLACEHOLDER};
use super::RawStory;
use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};

pub const GENERATOR_VERSION: &str = "1";

const PEOPLE: &[&str] = &[
    "mary", "john", "sandra", "daniel", "fred", "bill", "julie", "jeff", "emily", "winona",
    "gertrude", "lily", "bernhard", "greg", "brian", "yann", "jason", "antoine",
];

const PLACES: &[&str] = &[
    "kitchen", "office", "bathroom", "garden", "hallway", "bedroom", "cinema", "park", "school",
    "kitchenette", "library", "station", "beach", "garage", "attic", "cellar",
];

const RELATIONS: &[&str] = &[
    "praised", "visited", "called", "hired", "blamed", "thanked", "met", "warned",
];

fn names(pool: &[&str], prefix: &str, n: usize) -> Vec<String> {
    (0..n)
        .map(|i| pool.get(i).map_or_else(|| format!("{prefix}{i}"), |s| s.to_string()))
        .collect()
}

pub fn default_entities(n: usize) -> Vec<String> {
    names(PEOPLE, "person", n)
}

pub fn default_locations(n: usize) -> Vec<String> {
    names(PLACES, "place", n)
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Generates `n_stories` single-fact stories of `story_len` movements each.
///
/// Each fact moves a uniformly drawn entity to a uniformly drawn location;
/// the question asks for an entity that was mentioned, and the answer is its
/// most recent location.
pub fn gen_single_fact(
    seed: u64,
    n_stories: usize,
    entities: &[String],
    locations: &[String],
    story_len: usize,
) -> Result<Vec<RawStory>> {
    if entities.len() < 2 || locations.len() < 2 {
        return Err(Error::Argument("need at least two entities and two locations".into()));
    }
    if story_len == 0 {
        return Err(Error::Argument("story length must be positive".into()));
    }
    let mut rng = rng::stream(seed, streams::CONTENT);
    let mut out = Vec::with_capacity(n_stories);
    for _ in 0..n_stories {
        let mut sentences = Vec::with_capacity(story_len);
        let mut last: Vec<Option<(usize, usize)>> = vec![None; entities.len()];
        for t in 0..story_len {
            let e = rng.gen_range(0..entities.len());
            let l = rng.gen_range(0..locations.len());
            sentences.push(words(&format!("{} moved to the {} .", entities[e], locations[l])));
            last[e] = Some((l, t));
        }
        let mentioned: Vec<usize> = (0..entities.len()).filter(|&e| last[e].is_some()).collect();
        let e = *mentioned.choose(&mut rng).expect("at least one fact");
        let (l, t) = last[e].unwrap();
        out.push(RawStory {
            sentences,
            question: words(&format!("where is {} ?", entities[e])),
            answer: locations[l].clone(),
            supporting: vec![t],
            candidates: None,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClozeSpec {
    pub n_stories: usize,
    /// Size of the global `@entityN` id pool.
    pub n_entities: usize,
    /// Distinct entities taking part in one story.
    pub entities_per_story: usize,
    pub n_facts: usize,
    pub n_relations: usize,
}

impl ClozeSpec {
    pub fn new(n_stories: usize, n_entities: usize) -> Self {
        Self {
            n_stories,
            n_entities,
            entities_per_story: n_entities.min(6),
            n_facts: 6,
            n_relations: 4,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_entities < 3 {
            return Err(Error::Argument("entity-cloze needs at least 3 entities".into()));
        }
        if self.entities_per_story < 3 || self.entities_per_story > self.n_entities {
            return Err(Error::Argument(format!(
                "entities per story must be in 3..={}",
                self.n_entities
            )));
        }
        if self.n_relations == 0 || self.n_relations > RELATIONS.len() {
            return Err(Error::Argument(format!(
                "relations must be in 1..={}",
                RELATIONS.len()
            )));
        }
        if self.n_facts == 0 || self.n_facts > self.entities_per_story * self.n_relations {
            return Err(Error::Argument(
                "too many facts for unique (subject, relation) pairs".into(),
            ));
        }
        Ok(())
    }
}

/// One generated cloze story with its anonymisation map.
#[derive(Debug, Clone, PartialEq)]
pub struct ClozeStory {
    pub story: RawStory,
    /// `ids[k]` is the `@entity` number standing for abstract entity `k`.
    pub ids: Vec<usize>,
    /// Abstract entity that answers the question.
    pub answer_entity: usize,
}

pub fn entity_token(id: usize) -> String {
    format!("{ENTITY_PREFIX}{id}")
}

/// Cloze stories with the anonymisation permutation drawn from its own stream.
pub fn gen_entity_cloze_with(seed: u64, perm_seed: u64, spec: &ClozeSpec) -> Result<Vec<ClozeStory>> {
    spec.validate()?;
    let mut content = rng::stream(seed, streams::CONTENT);
    let mut anon = rng::stream(perm_seed, streams::ANONYMIZE);
    let pool: Vec<usize> = (0..spec.n_entities).collect();
    let k = spec.entities_per_story;
    let mut out = Vec::with_capacity(spec.n_stories);

    for _ in 0..spec.n_stories {
        let facts = draw_facts(&mut content, k, spec.n_relations, spec.n_facts);
        let asked = content.gen_range(0..facts.len());
        let ids: Vec<usize> = pool.choose_multiple(&mut anon, k).copied().collect();
        out.push(render_cloze(&facts, asked, ids));
    }
    Ok(out)
}

/// Cloze stories; the anonymisation stream is derived from `seed`.
pub fn gen_entity_cloze(seed: u64, spec: &ClozeSpec) -> Result<Vec<RawStory>> {
    Ok(gen_entity_cloze_with(seed, seed, spec)?
        .into_iter()
        .map(|c| c.story)
        .collect())
}

/// Facts `(subject, relation, object)` over abstract entities `0..k`, with
/// unique `(subject, relation)` pairs.
fn draw_facts(rng: &mut Rng, k: usize, n_relations: usize, n: usize) -> Vec<(usize, usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|a| (0..n_relations).map(move |r| (a, r)))
        .collect();
    pairs.shuffle(rng);
    pairs.truncate(n);
    pairs
        .into_iter()
        .map(|(a, r)| {
            let mut b = rng.gen_range(0..k - 1);
            if b >= a {
                b += 1;
            }
            (a, r, b)
        })
        .collect()
}

fn render_cloze(facts: &[(usize, usize, usize)], asked: usize, ids: Vec<usize>) -> ClozeStory {
    let ent = |k: usize| entity_token(ids[k]);
    let sentences: Vec<Vec<String>> = facts
        .iter()
        .map(|&(a, r, b)| vec![ent(a), RELATIONS[r].to_string(), ent(b), ".".to_string()])
        .collect();
    let (a, r, b) = facts[asked];
    let question = vec![
        ent(a),
        RELATIONS[r].to_string(),
        PLACEHOLDER.to_string(),
        "?".to_string(),
    ];
    let mut present: Vec<usize> = facts.iter().flat_map(|&(a, _, b)| [a, b]).collect();
    present.sort_unstable();
    present.dedup();
    let mut cand_ids: Vec<usize> = present.iter().map(|&k| ids[k]).collect();
    cand_ids.sort_unstable();
    let story = RawStory {
        sentences,
        question,
        answer: ent(b),
        supporting: vec![asked],
        candidates: Some(cand_ids.into_iter().map(entity_token).collect()),
    };
    ClozeStory {
        story,
        ids,
        answer_entity: b,
    }
}

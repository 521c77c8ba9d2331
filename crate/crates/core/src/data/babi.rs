//! The bAbI text layout: numbered fact lines, tab-separated question lines,
//! and an optional `CANDIDATES` trailer used by the cloze generator.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use super::{tokenize, RawStory};
use crate::error::{Error, Result};

pub const CANDIDATES_TAG: &str = "CANDIDATES";

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Parses every story in `reader`. Each question line yields one story holding
/// all facts seen so far in its block; lines starting with `#` are comments.
pub fn parse_babi<R: BufRead>(reader: R) -> Result<Vec<RawStory>> {
    let mut out: Vec<RawStory> = Vec::new();
    let mut facts: Vec<Vec<String>> = Vec::new();
    let mut fact_of_line: HashMap<usize, usize> = HashMap::new();
    let mut prev_num = 0usize;
    // Index in `out` of the last story emitted, for CANDIDATES trailers.
    let mut last_story: Option<usize> = None;

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix(CANDIDATES_TAG) {
            let rest = rest
                .strip_prefix('\t')
                .ok_or_else(|| parse_err(lineno, "CANDIDATES must be followed by a tab"))?;
            let idx = last_story.ok_or_else(|| parse_err(lineno, "CANDIDATES before any question"))?;
            let cands: Vec<String> = rest.split_whitespace().map(str::to_lowercase).collect();
            if cands.is_empty() {
                return Err(parse_err(lineno, "empty candidate list"));
            }
            if !cands.contains(&out[idx].answer) {
                return Err(parse_err(lineno, "answer missing from candidates"));
            }
            out[idx].candidates = Some(cands);
            last_story = None;
            continue;
        }

        let (num, body) = line
            .split_once(' ')
            .ok_or_else(|| parse_err(lineno, "expected '<number> <text>'"))?;
        let num: usize = num
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad line number {num:?}")))?;
        if num <= prev_num {
            facts.clear();
            fact_of_line.clear();
        }
        prev_num = num;

        if body.contains('\t') {
            let fields: Vec<&str> = body.split('\t').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(parse_err(lineno, "question line needs 2 or 3 tab fields"));
            }
            let question = tokenize(fields[0]);
            if question.is_empty() {
                return Err(parse_err(lineno, "empty question"));
            }
            let answer = fields[1].trim().to_lowercase();
            if answer.is_empty() || answer.contains(char::is_whitespace) {
                return Err(parse_err(lineno, format!("answer must be one token, got {answer:?}")));
            }
            let mut supporting = Vec::new();
            if let Some(sup) = fields.get(2) {
                for tok in sup.split_whitespace() {
                    let id: usize = tok
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad supporting id {tok:?}")))?;
                    let pos = fact_of_line.get(&id).ok_or_else(|| {
                        parse_err(lineno, format!("supporting id {id} is not a prior fact"))
                    })?;
                    supporting.push(*pos);
                }
            }
            out.push(RawStory {
                sentences: facts.clone(),
                question,
                answer,
                supporting,
                candidates: None,
            });
            last_story = Some(out.len() - 1);
        } else {
            let tokens = tokenize(body);
            if tokens.is_empty() {
                return Err(parse_err(lineno, "empty fact"));
            }
            fact_of_line.insert(num, facts.len());
            facts.push(tokens);
            last_story = None;
        }
    }
    Ok(out)
}

pub fn parse_babi_str(text: &str) -> Result<Vec<RawStory>> {
    parse_babi(text.as_bytes())
}

/// Writes stories one block each, so re-parsing yields the same stories.
pub fn serialize_babi(stories: &[RawStory]) -> String {
    let mut out = String::new();
    for s in stories {
        for (i, sent) in s.sentences.iter().enumerate() {
            let _ = writeln!(out, "{} {}", i + 1, sent.join(" "));
        }
        let sup: Vec<String> = s.supporting.iter().map(|i| (i + 1).to_string()).collect();
        let _ = writeln!(
            out,
            "{} {}\t{}\t{}",
            s.sentences.len() + 1,
            s.question.join(" "),
            s.answer,
            sup.join(" ")
        );
        if let Some(c) = &s.candidates {
            let _ = writeln!(out, "{CANDIDATES_TAG}\t{}", c.join(" "));
        }
    }
    out
}

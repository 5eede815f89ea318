//! JSON-lines corpus files.
//!
//! One dialogue per line:
//!
//! ```json
//! {"id": "d1", "utterances": [{"speaker": 1, "text": "..."}],
//!  "candidates": ["...", "..."], "labels": [1, 0],
//!  "prior_courses": ["EECS 280"], "suggested_courses": []}
//! ```
//!
//! The course lists are optional. Blank lines are skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::preprocess::{merge_course_tokens, prepend_speaker_tokens, speaker_token, tokenize};
use super::record::{DialogueRecord, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct RawUtterance {
    speaker: u32,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    utterances: Vec<RawUtterance>,
    candidates: Vec<String>,
    labels: Vec<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    prior_courses: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    suggested_courses: Vec<String>,
}

fn preprocess(text: &str) -> Vec<String> {
    merge_course_tokens(&tokenize(text))
}

fn courses(list: &[String]) -> Vec<String> {
    list.iter().flat_map(|c| preprocess(c)).collect()
}

fn from_raw(raw: RawRecord) -> Result<DialogueRecord> {
    let record = DialogueRecord {
        id: raw.id,
        utterances: raw
            .utterances
            .into_iter()
            .map(|u| Utterance {
                speaker: u.speaker,
                tokens: preprocess(&u.text),
            })
            .collect(),
        candidates: raw.candidates.iter().map(|c| preprocess(c)).collect(),
        labels: raw.labels,
        prior_courses: courses(&raw.prior_courses),
        suggested_courses: courses(&raw.suggested_courses),
    };
    record.validate()?;
    Ok(prepend_speaker_tokens(record))
}

fn to_raw(record: &DialogueRecord) -> RawRecord {
    RawRecord {
        id: record.id.clone(),
        utterances: record
            .utterances
            .iter()
            .map(|u| {
                let marker = speaker_token(u.speaker);
                let body = match u.tokens.first() {
                    Some(t) if *t == marker => &u.tokens[1..],
                    _ => &u.tokens[..],
                };
                RawUtterance {
                    speaker: u.speaker,
                    text: body.join(" "),
                }
            })
            .collect(),
        candidates: record.candidates.iter().map(|c| c.join(" ")).collect(),
        labels: record.labels.clone(),
        prior_courses: record.prior_courses.clone(),
        suggested_courses: record.suggested_courses.clone(),
    }
}

/// Parses corpus text; lines are parsed in parallel but keep file order.
pub fn parse_corpus(text: &str) -> Result<Vec<DialogueRecord>> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    lines
        .par_iter()
        .map(|&(line, l)| {
            let raw: RawRecord = serde_json::from_str(l).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            from_raw(raw).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<DialogueRecord>> {
    parse_corpus(&fs::read_to_string(path)?)
}

pub fn write_corpus<W: Write>(records: &[DialogueRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &to_raw(r))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(records: &[DialogueRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_corpus(records, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

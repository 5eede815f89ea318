//! Tokenization and normalization.
//!
//! The pipeline order is fixed: whitespace tokenization, lowercasing, course
//! normalization (including the merge of split course numbers), then speaker
//! tokens. Every stage is idempotent.

use std::sync::OnceLock;

use regex::Regex;

use super::record::DialogueRecord;

/// Course identifiers: 1–5 letters, 1–4 digits, optional trailing letter.
const COURSE_PATTERN: &str = r"^[A-Za-z]{1,5}[0-9]{1,4}[A-Za-z]?$";
const LETTERS_PATTERN: &str = r"^[A-Za-z]{1,5}$";
const NUMBER_PATTERN: &str = r"^[0-9]{1,4}[A-Za-z]?$";

fn course_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(COURSE_PATTERN).unwrap())
}

fn letters_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(LETTERS_PATTERN).unwrap())
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(NUMBER_PATTERN).unwrap())
}

/// Splits on whitespace and lowercases.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub fn is_course_token(token: &str) -> bool {
    course_re().is_match(token)
}

/// `"EECS280"` → `"eecs280"`; tokens that are not course numbers pass through.
pub fn normalize_course_numbers(token: &str) -> String {
    if is_course_token(token) {
        token.to_ascii_lowercase()
    } else {
        token.to_string()
    }
}

/// Joins a letters-only token with a following number token (`"eecs" "280"`
/// → `"eecs280"`), then normalizes every token.
pub fn merge_course_tokens(tokens: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        if i + 1 < tokens.len() && letters_re().is_match(t) && number_re().is_match(&tokens[i + 1]) {
            out.push(normalize_course_numbers(&format!("{t}{}", tokens[i + 1])));
            i += 2;
        } else {
            out.push(normalize_course_numbers(t));
            i += 1;
        }
    }
    out
}

pub fn speaker_token(speaker: u32) -> String {
    format!("<speaker{speaker}>")
}

/// Puts `<speaker{n}>` in front of every utterance that does not start with it.
pub fn prepend_speaker_tokens(mut record: DialogueRecord) -> DialogueRecord {
    for u in &mut record.utterances {
        let tok = speaker_token(u.speaker);
        if u.tokens.first() != Some(&tok) {
            u.tokens.insert(0, tok);
        }
    }
    record
}

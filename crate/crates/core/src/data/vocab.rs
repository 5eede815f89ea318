use std::collections::HashMap;

use super::preprocess::speaker_token;
use super::record::DialogueRecord;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const MIN_SPEAKERS: u32 = 2;

/// Token ↔ id map. Ids 0 and 1 are `<pad-unused>` and `<unk>`, followed by
/// the speaker tokens; corpus tokens follow in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate vocabulary token {t}")));
            }
        }
        if tokens.get(PAD).map(String::as_str) != Some("<pad-unused>")
            || tokens.get(UNK).map(String::as_str) != Some("<unk>")
        {
            return Err(Error::input("vocabulary must start with <pad-unused>, <unk>"));
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn build<'a>(records: impl IntoIterator<Item = &'a DialogueRecord>) -> Self {
        let records: Vec<&DialogueRecord> = records.into_iter().collect();
        let max_speaker = records
            .iter()
            .flat_map(|r| r.utterances.iter().map(|u| u.speaker))
            .max()
            .unwrap_or(0)
            .max(MIN_SPEAKERS);

        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.push("<pad-unused>");
        v.push("<unk>");
        for s in 1..=max_speaker {
            v.push(&speaker_token(s));
        }
        for r in &records {
            for u in &r.utterances {
                u.tokens.iter().for_each(|t| v.push(t));
            }
            for c in &r.candidates {
                c.iter().for_each(|t| v.push(t));
            }
            for t in r.prior_courses.iter().chain(&r.suggested_courses) {
                v.push(t);
            }
        }
        v
    }

    fn push(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Utterance;

    #[test]
    fn corpus_tokens_are_unique_and_oov_is_unk() {
        let r = DialogueRecord {
            id: "x".into(),
            utterances: vec![Utterance {
                speaker: 3,
                tokens: vec!["<speaker3>".into(), "hello".into(), "there".into()],
            }],
            candidates: vec![vec!["hello".into(), "you".into()]],
            labels: vec![1],
            prior_courses: vec![],
            suggested_courses: vec![],
        };
        let v = Vocabulary::build([&r]);
        assert_eq!(v.id("<unk>"), UNK);
        assert_eq!(v.token(PAD), Some("<pad-unused>"));
        assert_eq!(v.id("<speaker1>"), 2);
        assert_eq!(v.id("<speaker3>"), 4);
        let ids: Vec<usize> = ["hello", "there", "you"].iter().map(|t| v.id(t)).collect();
        assert_eq!(ids, vec![5, 6, 7]);
        assert_eq!(v.id("never-seen"), UNK);
        assert_eq!(v.len(), 8);
        let round = Vocabulary::from_tokens(v.tokens().to_vec()).unwrap();
        assert_eq!(round, v);
    }
}

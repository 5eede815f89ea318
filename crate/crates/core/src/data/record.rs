use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: u32,
    pub tokens: Vec<String>,
}

/// One partial conversation with its candidate responses.
///
/// `prior_courses` and `suggested_courses` are normalized course
/// identifiers; both are empty for corpora without course knowledge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueRecord {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub candidates: Vec<Vec<String>>,
    pub labels: Vec<u8>,
    pub prior_courses: Vec<String>,
    pub suggested_courses: Vec<String>,
}

impl DialogueRecord {
    pub fn validate(&self) -> Result<()> {
        if self.utterances.is_empty() {
            return Err(Error::input(format!("dialogue {} has no utterances", self.id)));
        }
        if let Some(i) = self.utterances.iter().position(|u| u.tokens.is_empty()) {
            return Err(Error::input(format!("dialogue {}: utterance {i} is empty", self.id)));
        }
        if self.labels.len() != self.candidates.len() {
            return Err(Error::input(format!(
                "dialogue {}: {} labels for {} candidates",
                self.id,
                self.labels.len(),
                self.candidates.len()
            )));
        }
        if let Some(j) = self.candidates.iter().position(Vec::is_empty) {
            return Err(Error::input(format!("dialogue {}: candidate {j} is empty", self.id)));
        }
        if self.labels.iter().any(|&y| y > 1) {
            return Err(Error::input(format!("dialogue {}: labels must be 0 or 1", self.id)));
        }
        Ok(())
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, &y)| y == 1).map(|(i, _)| i)
    }

    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, &y)| y == 0).map(|(i, _)| i)
    }

    pub fn num_positives(&self) -> usize {
        self.positives().count()
    }
}

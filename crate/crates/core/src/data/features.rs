use std::collections::BTreeSet;

use super::preprocess::is_course_token;
use super::record::DialogueRecord;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Number of knowledge features per token: prior-taken, suggested.
pub const FEATURE_WIDTH: usize = 2;

/// Per-dialogue course lists used to compute token features.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureTable {
    pub prior: BTreeSet<String>,
    pub suggested: BTreeSet<String>,
}

impl FeatureTable {
    pub fn from_record(record: &DialogueRecord) -> Self {
        FeatureTable {
            prior: record.prior_courses.iter().cloned().collect(),
            suggested: record.suggested_courses.iter().cloned().collect(),
        }
    }

    /// `[prior(w), suggested(w)]`; zero for anything that is not a course.
    pub fn features(&self, token: &str) -> [f64; FEATURE_WIDTH] {
        if !is_course_token(token) {
            return [0.0, 0.0];
        }
        [
            f64::from(u8::from(self.prior.contains(token))),
            f64::from(u8::from(self.suggested.contains(token))),
        ]
    }
}

/// Embedding rows for `ids` with `d_feat` feature columns appended.
///
/// `d_feat` is either 0 (no features) or [`FEATURE_WIDTH`]; without a table
/// the feature columns are zero.
pub fn augment_features(
    tape: &mut Tape,
    embedding: Var,
    ids: &[usize],
    tokens: &[String],
    table: Option<&FeatureTable>,
    d_feat: usize,
) -> Result<Var> {
    if d_feat != 0 && d_feat != FEATURE_WIDTH {
        return Err(Error::config(format!(
            "d_feat must be 0 or {FEATURE_WIDTH}, got {d_feat}"
        )));
    }
    if ids.len() != tokens.len() {
        return Err(Error::contract("token ids and tokens differ in length"));
    }
    let emb = tape.gather_rows(embedding, ids)?;
    if d_feat == 0 {
        return Ok(emb);
    }
    let mut feats = Vec::with_capacity(tokens.len() * FEATURE_WIDTH);
    for t in tokens {
        let f = table.map_or([0.0; FEATURE_WIDTH], |tab| tab.features(t));
        feats.extend_from_slice(&f);
    }
    let feats = tape.constant(Tensor::new(&[tokens.len(), FEATURE_WIDTH], feats)?);
    tape.concat_cols(&[emb, feats])
}

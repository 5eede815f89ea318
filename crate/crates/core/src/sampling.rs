use log::warn;
use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::data::DialogueRecord;
use crate::error::{Error, Result};

/// Keeps every positive and draws negatives without replacement until the
/// record holds `total` candidates, then shuffles the candidate order.
///
/// With too few negatives all of them are kept and a warning is logged.
pub fn sample_negatives<R: Rng>(record: &DialogueRecord, total: usize, rng: &mut R) -> Result<DialogueRecord> {
    let positives: Vec<usize> = record.positives().collect();
    if positives.is_empty() {
        return Err(Error::input(format!(
            "dialogue {} has no positive candidate",
            record.id
        )));
    }
    let negatives: Vec<usize> = record.negatives().collect();
    let wanted = total.saturating_sub(positives.len());
    let chosen: Vec<usize> = if wanted >= negatives.len() {
        if wanted > negatives.len() {
            warn!(
                "dialogue {}: only {} negatives for {} requested",
                record.id,
                negatives.len(),
                wanted
            );
        }
        negatives
    } else {
        index::sample(rng, negatives.len(), wanted)
            .into_iter()
            .map(|i| negatives[i])
            .collect()
    };

    let mut keep: Vec<usize> = positives.into_iter().chain(chosen).collect();
    keep.shuffle(rng);
    Ok(DialogueRecord {
        candidates: keep.iter().map(|&i| record.candidates[i].clone()).collect(),
        labels: keep.iter().map(|&i| record.labels[i]).collect(),
        ..record.clone()
    })
}

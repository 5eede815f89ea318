//! Candidate-set objectives.
//!
//! Scalar versions work on plain score slices; the `*_on_tape` versions
//! build the same quantity on a [`Tape`] for training.

use crate::config::{LossConfig, LossKind};
use crate::error::{Error, Result};
use crate::tape::{bce_logit_raw, log_sum_exp_raw, Tape, Var};

/// `log Σ exp(s)`, shifted by the maximum.
pub fn lse(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::contract("log-sum-exp of an empty set"));
    }
    Ok(log_sum_exp_raw(scores))
}

fn split(scores: &[f64], labels: &[u8]) -> Result<(Vec<usize>, Vec<usize>)> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::contract(
            "ranking loss needs at least one positive and one negative",
        ));
    }
    Ok((pos, neg))
}

/// `max(0, lse(negative scores) + lse(-positive scores) + margin)`.
pub fn ranking_loss(scores: &[f64], labels: &[u8], margin: f64) -> Result<f64> {
    let (pos, neg) = split(scores, labels)?;
    let neg_s: Vec<f64> = neg.iter().map(|&i| scores[i]).collect();
    let pos_s: Vec<f64> = pos.iter().map(|&i| -scores[i]).collect();
    Ok((lse(&neg_s)? + lse(&pos_s)? + margin).max(0.0))
}

/// Mean binary cross-entropy of sigmoid(score) against the labels.
pub fn bce_loss(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::contract("bce needs one label per score"));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| bce_logit_raw(s, f64::from(y)))
        .sum();
    Ok(total / scores.len() as f64)
}

pub fn loss(cfg: &LossConfig, scores: &[f64], labels: &[u8]) -> Result<f64> {
    match cfg.kind {
        LossKind::Bce => bce_loss(scores, labels),
        LossKind::Ranking => ranking_loss(scores, labels, cfg.margin),
    }
}

pub fn ranking_loss_on_tape(tape: &mut Tape, scores: Var, labels: &[u8], margin: f64) -> Result<Var> {
    let (pos, neg) = split(tape.value(scores).data(), labels)?;
    let n = tape.select(scores, &neg)?;
    let n = tape.log_sum_exp(n)?;
    let p = tape.select(scores, &pos)?;
    let p = tape.scale(p, -1.0);
    let p = tape.log_sum_exp(p)?;
    let sum = tape.add(n, p)?;
    let shifted = tape.add_scalar(sum, margin);
    Ok(tape.relu(shifted))
}

pub fn bce_loss_on_tape(tape: &mut Tape, scores: Var, labels: &[u8]) -> Result<Var> {
    let targets: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
    tape.bce_with_logits(scores, &targets)
}

pub fn loss_on_tape(tape: &mut Tape, cfg: &LossConfig, scores: Var, labels: &[u8]) -> Result<Var> {
    match cfg.kind {
        LossKind::Bce => bce_loss_on_tape(tape, scores, labels),
        LossKind::Ranking => ranking_loss_on_tape(tape, scores, labels, cfg.margin),
    }
}

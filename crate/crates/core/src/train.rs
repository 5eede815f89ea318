//! Training loop and corpus evaluation.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, LossKind};
use crate::data::{load_embeddings, DialogueRecord, Vocabulary};
use crate::error::{Error, Result};
use crate::loss::{loss, loss_on_tape};
use crate::metrics::EvalReport;
use crate::model::{Model, RankedResult};
use crate::optim::{AdamConfig, AdamState};
use crate::params::ParamStore;
use crate::sampling::sample_negatives;

/// Offset mixed into the seed of the data-order generator so it does not
/// replay the parameter initialization stream.
const DATA_SEED_OFFSET: u64 = 0x5eed;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub split: String,
    #[serde(rename = "recall@1")]
    pub recall_at_1: Option<f64>,
    #[serde(rename = "recall@10")]
    pub recall_at_10: Option<f64>,
    pub mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The best model by held-out MRR, or the final one without a held-out split.
    pub model: Model,
    pub log: Vec<LogEntry>,
    pub steps: usize,
    pub best_step: Option<usize>,
}

/// Scores every dialogue; dialogues are processed in parallel, results keep
/// corpus order.
pub fn score_corpus(model: &Model, corpus: &[DialogueRecord]) -> Result<Vec<RankedResult>> {
    corpus.par_iter().map(|r| model.score_all(r)).collect()
}

pub fn report_for(corpus: &[DialogueRecord], results: &[RankedResult]) -> EvalReport {
    EvalReport::from_rankings(
        corpus
            .iter()
            .zip(results)
            .map(|(r, res)| (res.ranking.as_slice(), r.labels.as_slice())),
    )
}

pub fn evaluate(model: &Model, corpus: &[DialogueRecord]) -> Result<EvalReport> {
    let results = score_corpus(model, corpus)?;
    Ok(report_for(corpus, &results))
}

/// Mean loss over the dialogues the configured loss is defined for.
fn mean_loss(cfg: &Config, corpus: &[DialogueRecord], results: &[RankedResult]) -> f64 {
    let losses: Vec<f64> = corpus
        .iter()
        .zip(results)
        .filter_map(|(r, res)| loss(&cfg.loss, &res.scores, &r.labels).ok())
        .collect();
    if losses.is_empty() {
        f64::NAN
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    }
}

/// Splits off the last `fraction` of the corpus as a held-out set.
pub fn holdout_split(corpus: &[DialogueRecord], fraction: f64) -> (Vec<DialogueRecord>, Vec<DialogueRecord>) {
    let n_valid = ((corpus.len() as f64) * fraction).floor() as usize;
    let n_train = corpus.len() - n_valid.min(corpus.len().saturating_sub(1));
    (corpus[..n_train].to_vec(), corpus[n_train..].to_vec())
}

/// A fresh model whose vocabulary covers `train`.
pub fn init_model(cfg: &Config, train: &[DialogueRecord]) -> Result<Model> {
    let mut model = Model::new(cfg.model.clone(), Vocabulary::build(train))?;
    if let Some(path) = &cfg.train.embeddings {
        let n = load_embeddings(path, &model.vocab, &mut model.params.store, model.params.embedding)?;
        info!("loaded {n} pretrained embedding rows from {path}");
    }
    Ok(model)
}

/// One optimizer step on one sampled training instance; returns its loss.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    cfg: &Config,
    record: &DialogueRecord,
    step: usize,
) -> Result<f64> {
    let grads = {
        let mut tape = model.tape();
        let scores = model.score_vector(&mut tape, record)?;
        let l = loss_on_tape(&mut tape, &cfg.loss, scores, &record.labels)?;
        let value = tape.value(l).item();
        if !value.is_finite() {
            return Err(Error::Divergence { step, loss: value });
        }
        (tape.backward(l)?, value)
    };
    let (grads, value) = grads;
    model.params.store.accumulate(&grads);
    adam.step(&mut model.params.store, model.config.lr)?;
    Ok(value)
}

/// Trains on `train`, evaluating on `valid` every `eval_every` steps.
///
/// Each step samples `candidates_per_sample` candidates from one dialogue.
/// With a non-empty `valid` split the returned model is the one with the
/// best held-out MRR, and training stops after `patience` evaluations
/// without improvement.
pub fn train(train: &[DialogueRecord], valid: &[DialogueRecord], cfg: &Config) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::input("training corpus is empty"));
    }
    let mut model = init_model(cfg, train)?;
    let mut adam = AdamState::new(
        &model.params.store,
        AdamConfig {
            beta1: cfg.train.beta1,
            beta2: cfg.train.beta2,
            epsilon: cfg.train.adam_epsilon,
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.model.seed.wrapping_add(DATA_SEED_OFFSET));
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0;
    let mut step = 0;

    'epochs: for epoch in 0..cfg.train.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for idx in order {
            if step >= cfg.train.max_steps {
                break 'epochs;
            }
            let sample = sample_negatives(&train[idx], cfg.loss.candidates_per_sample, &mut rng)?;
            if cfg.loss.kind == LossKind::Ranking && sample.negatives().next().is_none() {
                warn!("dialogue {} has no negatives; skipped for the ranking loss", sample.id);
                continue;
            }
            let value = train_step(&mut model, &mut adam, cfg, &sample, step + 1)?;
            step += 1;
            log.push(LogEntry {
                step,
                loss: value,
                split: "train".into(),
                recall_at_1: None,
                recall_at_10: None,
                mrr: None,
            });

            if cfg.train.eval_every > 0 && step % cfg.train.eval_every == 0 && !valid.is_empty() {
                let results = score_corpus(&model, valid)?;
                let report = report_for(valid, &results);
                log.push(LogEntry {
                    step,
                    loss: mean_loss(cfg, valid, &results),
                    split: "valid".into(),
                    recall_at_1: Some(report.recall_at_1),
                    recall_at_10: Some(report.recall_at_10),
                    mrr: Some(report.mrr),
                });
                info!(
                    "epoch {epoch} step {step}: valid recall@1 {:.3} mrr {:.3}",
                    report.recall_at_1, report.mrr
                );
                if best.as_ref().is_none_or(|(m, ..)| report.mrr > *m) {
                    best = Some((report.mrr, step, model.params.store.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.train.patience {
                        info!("early stop at step {step}: no held-out improvement in {stale} evaluations");
                        break 'epochs;
                    }
                }
            }
        }
    }

    let best_step = best.as_ref().map(|(_, s, _)| *s);
    if let Some((_, _, store)) = best {
        model.params.store = store;
        model.params.store.zero_grads();
    }
    Ok(TrainOutcome {
        model,
        log,
        steps: step,
        best_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Utterance;

    fn tiny_config() -> Config {
        let mut cfg = Config::default();
        cfg.model.d_emb = 6;
        cfg.model.heads = 2;
        cfg.model.d_p = 4;
        cfg.model.d_h = 16;
        cfg.model.lr = 1e-2;
        cfg.train.eval_every = 0;
        cfg
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn two_candidate_record() -> DialogueRecord {
        DialogueRecord {
            id: "m".into(),
            utterances: vec![
                Utterance {
                    speaker: 1,
                    tokens: toks("<speaker1> how do i mount a drive"),
                },
                Utterance {
                    speaker: 2,
                    tokens: toks("<speaker2> which drive"),
                },
            ],
            candidates: vec![toks("the usb drive"), toks("no idea sorry")],
            labels: vec![1, 0],
            prior_courses: vec![],
            suggested_courses: vec![],
        }
    }

    #[test]
    fn memorizes_a_single_record() {
        let mut cfg = tiny_config();
        cfg.train.epochs = 300;
        cfg.train.max_steps = 300;
        let rec = two_candidate_record();
        let out = train(std::slice::from_ref(&rec), &[], &cfg).unwrap();
        let last = out.log.last().unwrap().loss;
        assert!(last < 1e-2, "final loss {last}");
        let res = out.model.score_all(&rec).unwrap();
        assert_eq!(res.ranking[0], 0);
    }

    #[test]
    fn same_seed_same_log() {
        let mut cfg = tiny_config();
        cfg.train.epochs = 5;
        let rec = two_candidate_record();
        let a = train(std::slice::from_ref(&rec), &[], &cfg).unwrap();
        let b = train(&[rec], &[], &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.params.store.flat_values(), b.model.params.store.flat_values());
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(train(&[], &[], &tiny_config()), Err(Error::Input(_))));
    }

    #[test]
    fn holdout_keeps_at_least_one_training_record() {
        let rec = two_candidate_record();
        let (t, v) = holdout_split(&vec![rec.clone(); 10], 0.2);
        assert_eq!((t.len(), v.len()), (8, 2));
        let (t, v) = holdout_split(&[rec], 0.5);
        assert_eq!((t.len(), v.len()), (1, 0));
    }
}

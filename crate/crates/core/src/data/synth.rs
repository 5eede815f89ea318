//! Synthetic keyword-echo dialogues.
//!
//! The word list is split into keywords, context fillers and response
//! fillers. Each corpus draws a shared pool of responses, every one carrying
//! a single keyword. The final utterance of a dialogue mentions one keyword;
//! the correct candidate is a pool response with that keyword and the
//! distractors are pool responses with other keywords, so every response is
//! correct in some dialogues and a distractor in others. Fillers never cross
//! between context and responses, so plain token overlap with the final
//! utterance ranks the correct candidate first.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::preprocess::prepend_speaker_tokens;
use super::record::{DialogueRecord, Utterance};

pub const SYNTH_CANDIDATES: usize = 100;
const MIN_VOCAB: usize = 5;

struct Lexicon {
    keywords: Vec<String>,
    context: Vec<String>,
    response: Vec<String>,
}

impl Lexicon {
    fn new(vocab_size: usize) -> Self {
        let n = vocab_size.max(MIN_VOCAB);
        let n_key = (n * 2 / 5).max(2);
        let n_ctx = ((n - n_key) / 2).max(1);
        let n_resp = (n - n_key - n_ctx).max(1);
        Lexicon {
            keywords: (0..n_key).map(|i| format!("key_{i}")).collect(),
            context: (0..n_ctx).map(|i| format!("ctx_{i}")).collect(),
            response: (0..n_resp).map(|i| format!("resp_{i}")).collect(),
        }
    }
}

fn fillers<R: Rng>(rng: &mut R, pool: &[String], lo: usize, hi: usize) -> Vec<String> {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| pool.choose(rng).unwrap().clone()).collect()
}

fn insert_at_random<R: Rng>(rng: &mut R, mut tokens: Vec<String>, word: &str) -> Vec<String> {
    let pos = rng.gen_range(0..=tokens.len());
    tokens.insert(pos, word.to_string());
    tokens
}

/// Responses grouped by keyword, enough that any keyword leaves at least
/// `SYNTH_CANDIDATES - 1` responses for distractors.
fn response_pool<R: Rng>(rng: &mut R, lex: &Lexicon) -> Vec<Vec<Vec<String>>> {
    let per_key = (SYNTH_CANDIDATES - 1).div_ceil(lex.keywords.len() - 1).max(2);
    lex.keywords
        .iter()
        .map(|k| {
            (0..per_key)
                .map(|_| {
                    let body = fillers(rng, &lex.response, 2, 4);
                    insert_at_random(rng, body, k)
                })
                .collect()
        })
        .collect()
}

/// `n_dialogues` records with [`SYNTH_CANDIDATES`] candidates and exactly one
/// positive each. `vocab_size` counts distinct words (at least 5).
pub fn generate_synthetic<R: Rng>(n_dialogues: usize, vocab_size: usize, rng: &mut R) -> Vec<DialogueRecord> {
    let lex = Lexicon::new(vocab_size);
    let pool = response_pool(rng, &lex);
    (0..n_dialogues)
        .map(|i| {
            let n_utt = rng.gen_range(2..=4);
            let target = rng.gen_range(0..lex.keywords.len());
            let utterances = (0..n_utt)
                .map(|u| {
                    let mut tokens = fillers(rng, &lex.context, 3, 6);
                    if u + 1 == n_utt {
                        tokens = insert_at_random(rng, tokens, &lex.keywords[target]);
                    }
                    Utterance {
                        speaker: (u % 2) as u32 + 1,
                        tokens,
                    }
                })
                .collect();

            let others: Vec<&Vec<String>> = pool
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != target)
                .flat_map(|(_, responses)| responses)
                .collect();
            let mut distractors = index::sample(rng, others.len(), SYNTH_CANDIDATES - 1).into_iter();
            let positive = rng.gen_range(0..SYNTH_CANDIDATES);
            let candidates = (0..SYNTH_CANDIDATES)
                .map(|j| {
                    if j == positive {
                        pool[target].choose(rng).unwrap().clone()
                    } else {
                        others[distractors.next().unwrap()].clone()
                    }
                })
                .collect();
            let labels = (0..SYNTH_CANDIDATES).map(|j| u8::from(j == positive)).collect();

            prepend_speaker_tokens(DialogueRecord {
                id: format!("synth-{i}"),
                utterances,
                candidates,
                labels,
                prior_courses: vec![],
                suggested_courses: vec![],
            })
        })
        .collect()
}

/// Number of candidate tokens that also occur in the final utterance.
pub fn overlap_baseline_scores(record: &DialogueRecord) -> Vec<f64> {
    let last: HashSet<&str> = record
        .utterances
        .last()
        .map(|u| u.tokens.iter().skip(1).map(String::as_str).collect())
        .unwrap_or_default();
    record
        .candidates
        .iter()
        .map(|c| c.iter().filter(|t| last.contains(t.as_str())).count() as f64)
        .collect()
}

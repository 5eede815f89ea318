//! The highway recurrent transformer.
//!
//! Utterances and candidates are embedded, augmented with knowledge
//! features, and encoded by one shared transformer stack. Highway attention
//! then runs recurrently over the encoded utterances, each step reading the
//! previous state, to build the dialogue state. A candidate is matched
//! against the state in both directions with one shared highway block, each
//! side is pooled to a vector, and the score is their inner product.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{highway_attention, AttentionOptions, HighwayParams};
use crate::config::{ModelConfig, Pooling, Variant};
use crate::data::{augment_features, DialogueRecord, FeatureTable, Vocabulary};
use crate::encoder::{encode_sequence, EncoderStackParams};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, unit_uniform, ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Every trainable tensor of the model, addressed by role.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub store: ParamStore,
    pub embedding: ParamId,
    pub encoder: EncoderStackParams,
    pub recurrence: HighwayParams,
    /// Shared by both matching directions.
    pub matching: HighwayParams,
    /// Attention-pooling vector; present only with [`Pooling::Attention`].
    pub pool_w: Option<ParamId>,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, vocab_size: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let d_f = cfg.d_f();
        let embedding = store.register("embedding", unit_uniform(&mut rng, vocab_size, cfg.d_emb))?;
        let encoder = EncoderStackParams::init(
            &mut store,
            "encoder",
            cfg.n_blocks,
            d_f,
            cfg.heads,
            cfg.d_p,
            cfg.d_h,
            &mut rng,
        )?;
        let recurrence = HighwayParams::init(&mut store, "recurrence", d_f, cfg.heads, cfg.d_p, &mut rng)?;
        let matching = HighwayParams::init(&mut store, "matching", d_f, cfg.heads, cfg.d_p, &mut rng)?;
        let pool_w = match cfg.pooling {
            Pooling::Attention => {
                let w = glorot_uniform(&mut rng, d_f, 1).reshaped(&[d_f])?;
                Some(store.register("pool.w", w)?)
            }
            Pooling::Max => None,
        };
        Ok(ModelParams {
            store,
            embedding,
            encoder,
            recurrence,
            matching,
            pool_w,
        })
    }
}

/// One state per utterance; the first is the encoded first utterance.
#[derive(Debug, Clone)]
pub struct DialogueState {
    pub states: Vec<Var>,
}

impl DialogueState {
    pub fn last(&self) -> Var {
        *self.states.last().expect("dialogue state is never empty")
    }
}

/// Scores of one dialogue's candidates and their ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub dialogue_id: String,
    pub scores: Vec<f64>,
    /// Candidate indices, best first; equal scores keep index order.
    pub ranking: Vec<usize>,
}

impl RankedResult {
    pub fn new(dialogue_id: impl Into<String>, scores: Vec<f64>) -> Self {
        let ranking = rank_scores(&scores);
        RankedResult {
            dialogue_id: dialogue_id.into(),
            scores,
            ranking,
        }
    }
}

/// Indices sorted by descending score; ties go to the lower index.
pub fn rank_scores(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// The first state is the first encoded utterance; every later state is
/// highway attention from the next utterance over the previous state.
pub fn recur_over_utterances(
    tape: &mut Tape,
    encoded: &[Var],
    p: &HighwayParams,
    opts: AttentionOptions,
) -> Result<DialogueState> {
    let (&first, rest) = encoded
        .split_first()
        .ok_or_else(|| Error::input("dialogue has no utterances"))?;
    let mut states = Vec::with_capacity(encoded.len());
    states.push(first);
    for &v in rest {
        let prev = *states.last().unwrap();
        states.push(highway_attention(tape, v, prev, prev, p, opts)?);
    }
    Ok(DialogueState { states })
}

/// The context a candidate is matched against under `variant`.
pub fn matching_context(tape: &mut Tape, state: &DialogueState, variant: Variant) -> Result<Var> {
    match variant {
        Variant::Last => Ok(state.last()),
        Variant::All if state.states.len() == 1 => Ok(state.states[0]),
        Variant::All => tape.concat_rows(&state.states),
    }
}

/// Highway attention from candidate to context and from context to candidate,
/// with shared parameters. Returns the matched candidate and the matched
/// context.
pub fn match_bidirectional(
    tape: &mut Tape,
    context: Var,
    candidate: Var,
    p: &HighwayParams,
    opts: AttentionOptions,
) -> Result<(Var, Var)> {
    let cand = highway_attention(tape, candidate, context, context, p, opts)?;
    let ctx = highway_attention(tape, context, candidate, candidate, p, opts)?;
    Ok((cand, ctx))
}

/// Per-dimension maximum over rows.
pub fn pool_max(tape: &mut Tape, x: Var) -> Result<Var> {
    tape.max_rows(x)
}

/// `r = Σ_k α_k x_k` with `α_k = wᵀ x_k`, optionally softmax-normalized.
pub fn pool_attention(tape: &mut Tape, x: Var, w: Var, normalize: bool) -> Result<Var> {
    let d = tape.value(w).len();
    let l = tape.shape(x)[0];
    if l == 0 {
        return Err(Error::contract("attention pooling over zero rows"));
    }
    let wc = tape.reshape(w, &[d, 1])?;
    let alpha = tape.matmul(x, wc)?;
    let alpha = tape.reshape(alpha, &[1, l])?;
    let alpha = if normalize { tape.row_softmax(alpha) } else { alpha };
    let r = tape.matmul(alpha, x)?;
    tape.reshape(r, &[d])
}

/// Configuration, vocabulary and parameters bundled for scoring.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        let params = ModelParams::init(&config, vocab.len())?;
        Ok(Model { config, vocab, params })
    }

    pub fn attention_options(&self) -> AttentionOptions {
        AttentionOptions {
            scaled_similarity: self.config.scaled_similarity,
        }
    }

    pub fn tape(&self) -> Tape<'_> {
        Tape::new(&self.params.store)
    }

    /// Embeds, augments and encodes one token sequence.
    pub fn encode_tokens(&self, tape: &mut Tape, tokens: &[String], features: &FeatureTable) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::input("cannot encode an empty token sequence"));
        }
        let table = tape.param(self.params.embedding);
        let ids = self.vocab.ids(tokens);
        let x = augment_features(tape, table, &ids, tokens, Some(features), self.config.d_feat)?;
        encode_sequence(tape, x, &self.params.encoder, self.attention_options())
    }

    /// Encodes every utterance and runs the recurrence.
    pub fn encode_dialogue(&self, tape: &mut Tape, record: &DialogueRecord) -> Result<DialogueState> {
        let features = FeatureTable::from_record(record);
        let encoded = record
            .utterances
            .iter()
            .map(|u| self.encode_tokens(tape, &u.tokens, &features))
            .collect::<Result<Vec<_>>>()?;
        recur_over_utterances(tape, &encoded, &self.params.recurrence, self.attention_options())
    }

    fn pool(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match (self.config.pooling, self.params.pool_w) {
            (Pooling::Max, _) => pool_max(tape, x),
            (Pooling::Attention, Some(w)) => {
                let w = tape.param(w);
                pool_attention(tape, x, w, self.config.normalize_pool_weights)
            }
            (Pooling::Attention, None) => Err(Error::contract("attention pooling without a pooling vector")),
        }
    }

    /// Score of one candidate against an already computed dialogue state.
    pub fn score_candidate(
        &self,
        tape: &mut Tape,
        state: &DialogueState,
        candidate: &[String],
        features: &FeatureTable,
    ) -> Result<Var> {
        if candidate.is_empty() {
            return Err(Error::input("empty candidate"));
        }
        let encoded = self.encode_tokens(tape, candidate, features)?;
        let context = matching_context(tape, state, self.config.variant)?;
        let (cand, ctx) = match_bidirectional(tape, context, encoded, &self.params.matching, self.attention_options())?;
        let cand = self.pool(tape, cand)?;
        let ctx = self.pool(tape, ctx)?;
        tape.dot(cand, ctx)
    }

    /// All candidate scores as a `[k]` vector on `tape`, sharing one state.
    pub fn score_vector(&self, tape: &mut Tape, record: &DialogueRecord) -> Result<Var> {
        if record.candidates.is_empty() {
            return Err(Error::input(format!("dialogue {} has no candidates", record.id)));
        }
        let state = self.encode_dialogue(tape, record)?;
        let features = FeatureTable::from_record(record);
        let scores = record
            .candidates
            .iter()
            .map(|c| self.score_candidate(tape, &state, c, &features))
            .collect::<Result<Vec<_>>>()?;
        tape.concat_rows(&scores)
    }

    /// Scores and ranks every candidate of `record`.
    pub fn score_all(&self, record: &DialogueRecord) -> Result<RankedResult> {
        let mut tape = self.tape();
        let scores = self.score_vector(&mut tape, record)?;
        Ok(RankedResult::new(record.id.clone(), tape.value(scores).data().to_vec()))
    }

    /// Scores candidate `j` from scratch, re-encoding the dialogue.
    pub fn score_candidate_fresh(&self, record: &DialogueRecord, j: usize) -> Result<f64> {
        let candidate = record
            .candidates
            .get(j)
            .ok_or_else(|| Error::input(format!("candidate {j} out of range")))?;
        let mut tape = self.tape();
        let state = self.encode_dialogue(&mut tape, record)?;
        let s = self.score_candidate(&mut tape, &state, candidate, &FeatureTable::from_record(record))?;
        Ok(tape.value(s).item())
    }
}

//! Independent scalar reference implementations and random fixtures.
#![allow(dead_code)]

use hrt_core::attention::{
    highway_attention_traced, multi_head_attention, AttentionOptions, HighwayParams, HighwayProbe, MultiHeadParams,
};
use hrt_core::encoder::{EncoderBlockParams, EncoderStackParams};
use hrt_core::tape::LAYER_NORM_EPS;
use hrt_core::{
    Config, DialogueRecord, FeatureTable, Model, ParamId, ParamStore, Pooling, Result, Tape, Tensor, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rows(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn tensor(m: &Mat, cols: usize) -> Tensor {
    Tensor::new(&[m.len(), cols], m.iter().flatten().copied().collect()).unwrap()
}

pub fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    (0..r)
        .map(|_| (0..c).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| (0..cols).map(|j| (0..inner).map(|t| row[t] * b[t][j]).sum()).collect())
        .collect()
}

fn add_row(a: &Mat, bias: &[f64]) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(bias).map(|(x, b)| x + b).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax written directly from its definition, with a max shift.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|x| x / total).collect()
}

pub struct HeadWeights {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
}

pub struct AttentionWeights {
    pub heads: Vec<HeadWeights>,
    pub wo: Mat,
    pub b_co: Vec<f64>,
    pub b_self: Vec<f64>,
}

impl AttentionWeights {
    pub fn read(store: &ParamStore, p: &HighwayParams) -> Self {
        AttentionWeights {
            b_co: store.get(p.b_co).data().to_vec(),
            b_self: store.get(p.b_self).data().to_vec(),
            ..Self::read_mha(store, &p.attn)
        }
    }

    /// Projections only; both biases are zero.
    pub fn read_mha(store: &ParamStore, p: &MultiHeadParams) -> Self {
        let get = |id: ParamId| rows(store.get(id));
        AttentionWeights {
            heads: p
                .heads
                .iter()
                .map(|h| HeadWeights {
                    wq: get(h.wq),
                    wk: get(h.wk),
                    wv: get(h.wv),
                })
                .collect(),
            wo: get(p.wo),
            b_co: vec![0.0; p.d_f],
            b_self: vec![0.0; p.d_f],
        }
    }
}

fn concat_heads(per_head: &[Mat]) -> Mat {
    let n = per_head[0].len();
    (0..n)
        .map(|i| per_head.iter().flat_map(|h| h[i].iter().copied()).collect())
        .collect()
}

fn scale_of(d_p: usize, scaled: bool) -> f64 {
    if scaled {
        1.0 / (d_p as f64).sqrt()
    } else {
        1.0
    }
}

/// Plain multi-head attention, one scalar at a time.
pub fn naive_mha(q: &Mat, k: &Mat, v: &Mat, w: &AttentionWeights, scaled: bool) -> Mat {
    let per_head: Vec<Mat> = w
        .heads
        .iter()
        .map(|h| {
            let qh = matmul(q, &h.wq);
            let kh = matmul(k, &h.wk);
            let vh = matmul(v, &h.wv);
            let c = scale_of(h.wq[0].len(), scaled);
            qh.iter()
                .map(|qa| {
                    let p = softmax(&kh.iter().map(|kb| c * dot(qa, kb)).collect::<Vec<_>>());
                    (0..vh[0].len())
                        .map(|j| p.iter().zip(&vh).map(|(pb, vb)| pb * vb[j]).sum())
                        .collect()
                })
                .collect()
        })
        .collect();
    matmul(&concat_heads(&per_head), &w.wo)
}

pub struct NaiveHighway {
    pub output: Mat,
    /// Per head, per query row: `l2` co-attention weights then the self weight.
    pub weights: Vec<Mat>,
}

/// Highway attention written out per head and per query row. `force_self`
/// and `force_co` replace the corresponding logits when set.
pub fn naive_highway(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    w: &AttentionWeights,
    scaled: bool,
    force_self: Option<f64>,
    force_co: Option<f64>,
) -> NaiveHighway {
    let k_shift = add_row(k, &w.b_co);
    let q_shift = add_row(q, &w.b_self);
    let mut weights = Vec::new();
    let per_head: Vec<Mat> = w
        .heads
        .iter()
        .map(|h| {
            let qh = matmul(q, &h.wq);
            let kh = matmul(&k_shift, &h.wk);
            let vh = matmul(v, &h.wv);
            let q_keys = matmul(&q_shift, &h.wk);
            let q_vals = matmul(q, &h.wv);
            let c = scale_of(h.wq[0].len(), scaled);
            let d_p = h.wv[0].len();
            let mut head_weights = Vec::new();
            let out = qh
                .iter()
                .enumerate()
                .map(|(a, qa)| {
                    let mut logits: Vec<f64> = kh.iter().map(|kb| force_co.unwrap_or(c * dot(qa, kb))).collect();
                    logits.push(force_self.unwrap_or(c * dot(qa, &q_keys[a])));
                    let p = softmax(&logits);
                    let l2 = kh.len();
                    let row = (0..d_p)
                        .map(|j| (0..l2).map(|b| p[b] * vh[b][j]).sum::<f64>() + p[l2] * q_vals[a][j])
                        .collect();
                    head_weights.push(p);
                    row
                })
                .collect();
            weights.push(head_weights);
            out
        })
        .collect();
    NaiveHighway {
        output: matmul(&concat_heads(&per_head), &w.wo),
        weights,
    }
}

/// Every head's value projection of the queries, concatenated and
/// projected: the highway output when only the self path is open.
pub fn naive_self_route(q: &Mat, w: &AttentionWeights) -> Mat {
    let per_head: Vec<Mat> = w.heads.iter().map(|h| matmul(q, &h.wv)).collect();
    matmul(&concat_heads(&per_head), &w.wo)
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(u, v)| (u - v).abs())
        })
        .fold(0.0, f64::max)
}

/// A random attention problem: parameters with non-zero biases plus inputs.
#[derive(Clone)]
pub struct AttentionCase {
    pub store: ParamStore,
    pub params: HighwayParams,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub d_f: usize,
}

impl AttentionCase {
    pub fn random(seed: u64, min_keys: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_f = rng.gen_range(1..=16);
        let heads = rng.gen_range(1..=4);
        let d_p = rng.gen_range(1..=8);
        let l1 = rng.gen_range(1..=6);
        let l2 = rng.gen_range(min_keys..=6);
        Self::with_dims(&mut rng, d_f, heads, d_p, l1, l2)
    }

    pub fn with_dims(rng: &mut ChaCha8Rng, d_f: usize, heads: usize, d_p: usize, l1: usize, l2: usize) -> Self {
        let mut store = ParamStore::new();
        let params = HighwayParams::init(&mut store, "a", d_f, heads, d_p, rng).unwrap();
        for id in [params.b_co, params.b_self] {
            for x in store.get_mut(id).data_mut() {
                *x = rng.gen_range(-0.5..0.5);
            }
        }
        AttentionCase {
            q: random_mat(rng, l1, d_f, 1.0),
            k: random_mat(rng, l2, d_f, 1.0),
            v: random_mat(rng, l2, d_f, 1.0),
            store,
            params,
            d_f,
        }
    }

    pub fn weights(&self) -> AttentionWeights {
        AttentionWeights::read(&self.store, &self.params)
    }

    pub fn mha(&self) -> &MultiHeadParams {
        &self.params.attn
    }
}

/// Values read back from the implementation's highway trace.
pub struct TracedHighway {
    pub output: Mat,
    pub weights: Vec<Mat>,
    pub heads: Vec<Mat>,
    pub values: Vec<Mat>,
    pub self_values: Vec<Mat>,
}

impl AttentionCase {
    fn inputs(&self, tape: &mut Tape, k: &Mat) -> (hrt_core::Var, hrt_core::Var, hrt_core::Var) {
        let q = tape.constant(tensor(&self.q, self.d_f));
        let k = tape.constant(tensor(k, self.d_f));
        let v = tape.constant(tensor(&self.v, self.d_f));
        (q, k, v)
    }

    /// Multi-head attention with `keys` in place of the case's key rows.
    pub fn run_mha_with_keys(&self, keys: &Mat, opts: AttentionOptions) -> Result<Mat> {
        let mut tape = Tape::new(&self.store);
        let (q, k, v) = self.inputs(&mut tape, keys);
        let out = multi_head_attention(&mut tape, q, k, v, self.mha(), opts)?;
        Ok(rows(tape.value(out)))
    }

    pub fn run_mha(&self, opts: AttentionOptions) -> Result<Mat> {
        self.run_mha_with_keys(&self.k, opts)
    }

    pub fn run_highway(&self, opts: AttentionOptions, probe: HighwayProbe) -> Result<TracedHighway> {
        let mut tape = Tape::new(&self.store);
        let (q, k, v) = self.inputs(&mut tape, &self.k);
        let t = highway_attention_traced(&mut tape, q, k, v, &self.params, opts, probe)?;
        let read = |vars: &[hrt_core::Var]| vars.iter().map(|&x| rows(tape.value(x))).collect::<Vec<_>>();
        Ok(TracedHighway {
            output: rows(tape.value(t.output)),
            weights: read(&t.weights),
            heads: read(&t.heads),
            values: read(&t.values),
            self_values: read(&t.self_values),
        })
    }

    /// Key rows shifted by the co-attention bias.
    pub fn shifted_keys(&self) -> Mat {
        add_row(&self.k, &self.weights().b_co)
    }
}

/// The ranking objective evaluated term by term, without any shift.
pub fn naive_ranking_loss(scores: &[f64], labels: &[u8], margin: f64) -> f64 {
    let neg: f64 = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 0)
        .map(|(s, _)| s.exp())
        .sum();
    let pos: f64 = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1)
        .map(|(s, _)| (-s).exp())
        .sum();
    (neg.ln() + pos.ln() + margin).max(0.0)
}

/// Mean of `-(y ln σ(s) + (1 - y) ln(1 - σ(s)))`.
pub fn naive_bce(scores: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = 1.0 / (1.0 + (-s).exp());
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / scores.len() as f64
}

/// Rank of the best positive found by counting, for every positive, the
/// candidates placed ahead of it (higher score, or equal score and lower
/// index).
pub fn brute_force_rank(scores: &[f64], labels: &[u8]) -> Option<usize> {
    (0..scores.len())
        .filter(|&i| labels[i] == 1)
        .map(|i| {
            1 + (0..scores.len())
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count()
        })
        .min()
}

/// Scores drawn from a small grid so ties are common, and labels with a
/// random number of positives (possibly none).
pub fn random_ranking_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.gen_range(1..=120);
    let scores = (0..n).map(|_| f64::from(rng.gen_range(-20..20)) * 0.25).collect();
    let p = rng.gen_range(0.0..0.3);
    let labels = (0..n).map(|_| u8::from(rng.gen_bool(p))).collect();
    (scores, labels)
}

/// Sinusoidal position table from its definition.
pub fn naive_positions(length: usize, d: usize) -> Mat {
    (0..length)
        .map(|pos| {
            (0..d)
                .map(|j| {
                    let angle = pos as f64 / 10000f64.powf((j - j % 2) as f64 / d as f64);
                    if j % 2 == 0 {
                        angle.sin()
                    } else {
                        angle.cos()
                    }
                })
                .collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn add_bias(a: &Mat, b: &[f64]) -> Mat {
    a.iter()
        .map(|x| x.iter().zip(b).map(|(p, q)| p + q).collect())
        .collect()
}

fn naive_layer_norm(x: &Mat, gain: &[f64], bias: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let sd = (var + LAYER_NORM_EPS).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / sd * gain[j] + bias[j])
                .collect()
        })
        .collect()
}

fn naive_block(store: &ParamStore, x: &Mat, p: &EncoderBlockParams, scaled: bool) -> Mat {
    let vec_of = |id: ParamId| store.get(id).data().to_vec();
    let attended = naive_mha(x, x, x, &AttentionWeights::read_mha(store, &p.attn), scaled);
    let y = naive_layer_norm(&add(x, &attended), &vec_of(p.norm1.gain), &vec_of(p.norm1.bias));
    let h = add_bias(&matmul(&y, &rows(store.get(p.ffn.w1))), &vec_of(p.ffn.b1));
    let h: Mat = h.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect();
    let f = add_bias(&matmul(&h, &rows(store.get(p.ffn.w2))), &vec_of(p.ffn.b2));
    naive_layer_norm(&add(&y, &f), &vec_of(p.norm2.gain), &vec_of(p.norm2.bias))
}

/// Positions added once, then every block in order.
pub fn naive_encode(store: &ParamStore, x: &Mat, stack: &EncoderStackParams, scaled: bool) -> Mat {
    let d = x.first().map_or(0, Vec::len);
    let mut h = add(x, &naive_positions(x.len(), d));
    for block in &stack.blocks {
        h = naive_block(store, &h, block, scaled);
    }
    h
}

/// Embedding rows followed by the two knowledge features, read through the
/// model's own feature table.
pub fn naive_token_inputs(model: &Model, tokens: &[String], features: &FeatureTable) -> Mat {
    let table = model.params.store.get(model.params.embedding);
    tokens
        .iter()
        .map(|t| {
            let mut row = table.row(model.vocab.id(t)).to_vec();
            if model.config.d_feat > 0 {
                row.extend(features.features(t));
            }
            row
        })
        .collect()
}

fn naive_pool(model: &Model, x: &Mat) -> Vec<f64> {
    let d = x[0].len();
    match model.config.pooling {
        Pooling::Max => (0..d)
            .map(|j| x.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        Pooling::Attention => {
            let w = model.params.store.get(model.params.pool_w.unwrap()).data();
            let raw: Vec<f64> = x.iter().map(|r| dot(r, w)).collect();
            let alpha = if model.config.normalize_pool_weights {
                softmax(&raw)
            } else {
                raw
            };
            (0..d)
                .map(|j| alpha.iter().zip(x).map(|(a, r)| a * r[j]).sum())
                .collect()
        }
    }
}

/// Every candidate score, recomputed from scalar building blocks.
pub fn naive_scores(model: &Model, record: &DialogueRecord) -> Vec<f64> {
    let store = &model.params.store;
    let scaled = model.config.scaled_similarity;
    let features = FeatureTable::from_record(record);
    let encode = |tokens: &[String]| {
        naive_encode(
            store,
            &naive_token_inputs(model, tokens, &features),
            &model.params.encoder,
            scaled,
        )
    };
    let recurrence = AttentionWeights::read(store, &model.params.recurrence);
    let matching = AttentionWeights::read(store, &model.params.matching);

    let mut states: Vec<Mat> = Vec::new();
    for u in &record.utterances {
        let v = encode(&u.tokens);
        let next = match states.last() {
            None => v,
            Some(prev) => naive_highway(&v, prev, prev, &recurrence, scaled, None, None).output,
        };
        states.push(next);
    }
    let context: Mat = match model.config.variant {
        Variant::Last => states.last().unwrap().clone(),
        Variant::All => states.concat(),
    };
    record
        .candidates
        .iter()
        .map(|c| {
            let x = encode(c);
            let cand = naive_highway(&x, &context, &context, &matching, scaled, None, None).output;
            let ctx = naive_highway(&context, &x, &x, &matching, scaled, None, None).output;
            dot(&naive_pool(model, &cand), &naive_pool(model, &ctx))
        })
        .collect()
}

/// Width 8 (6 embedding + 2 features), two heads of width 4, one block.
pub fn small_config(variant: Variant, pooling: Pooling) -> Config {
    let mut cfg = Config::default();
    cfg.model.d_emb = 6;
    cfg.model.heads = 2;
    cfg.model.d_p = 4;
    cfg.model.d_h = 16;
    cfg.model.n_blocks = 1;
    cfg.model.variant = variant;
    cfg.model.pooling = pooling;
    cfg
}

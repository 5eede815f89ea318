//! Multi-head attention and highway attention.
//!
//! Both operate on row sequences: a query `[l1 × d_f]` attends over a key
//! and value `[l2 × d_f]`. Similarities are raw inner products unless
//! [`AttentionOptions::scaled_similarity`] is set.
//!
//! Highway attention extends every query row's softmax with one extra logit,
//! the similarity between the row's own query projection and its own
//! `b_self`-shifted key projection. The matching weight mixes in the row's
//! own value projection, so each output row is a convex combination of the
//! `l2` context values and the row itself.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{glorot_uniform, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Logit used by [`HighwayProbe`] to switch a path off.
pub const SUPPRESSED_LOGIT: f64 = -1e9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AttentionOptions {
    /// Divide similarities by `sqrt(d_p)`.
    pub scaled_similarity: bool,
}

/// Test hook that overrides one family of highway logits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum HighwayProbe {
    #[default]
    None,
    /// Every self logit becomes [`SUPPRESSED_LOGIT`].
    SuppressSelf,
    /// Every co-attention logit becomes [`SUPPRESSED_LOGIT`].
    SuppressCo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHeadParams {
    pub heads: Vec<HeadParams>,
    pub wo: ParamId,
    pub d_f: usize,
    pub d_p: usize,
}

impl MultiHeadParams {
    /// Registers `{prefix}.h{h}.Wq|Wk|Wv` and `{prefix}.Wo`.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_f: usize,
        n_heads: usize,
        d_p: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_heads == 0 || d_p == 0 {
            return Err(Error::config("attention needs at least one head of width >= 1"));
        }
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let wq = store.register(format!("{prefix}.h{h}.Wq"), glorot_uniform(rng, d_f, d_p))?;
            let wk = store.register(format!("{prefix}.h{h}.Wk"), glorot_uniform(rng, d_f, d_p))?;
            let wv = store.register(format!("{prefix}.h{h}.Wv"), glorot_uniform(rng, d_f, d_p))?;
            heads.push(HeadParams { wq, wk, wv });
        }
        let wo = store.register(format!("{prefix}.Wo"), glorot_uniform(rng, n_heads * d_p, d_f))?;
        Ok(MultiHeadParams { heads, wo, d_f, d_p })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HighwayParams {
    pub attn: MultiHeadParams,
    /// Added to every key row before the key projection.
    pub b_co: ParamId,
    /// Added to every query row before the key projection of the self path.
    pub b_self: ParamId,
}

impl HighwayParams {
    /// Registers the projections plus `{prefix}.b_co` and `{prefix}.b_self`,
    /// both zero-initialized and shared by all heads.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_f: usize,
        n_heads: usize,
        d_p: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let attn = MultiHeadParams::init(store, prefix, d_f, n_heads, d_p, rng)?;
        let b_co = store.register(format!("{prefix}.b_co"), Tensor::zeros(&[d_f]))?;
        let b_self = store.register(format!("{prefix}.b_self"), Tensor::zeros(&[d_f]))?;
        Ok(HighwayParams { attn, b_co, b_self })
    }
}

fn check_inputs(tape: &Tape, q: Var, k: Var, v: Var, d_f: usize) -> Result<()> {
    for x in [q, k, v] {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != d_f {
            return Err(Error::Dimension {
                op: "attention",
                lhs: s.to_vec(),
                rhs: vec![d_f],
            });
        }
    }
    if tape.shape(k)[0] != tape.shape(v)[0] {
        return Err(Error::Dimension {
            op: "attention",
            lhs: tape.shape(k).to_vec(),
            rhs: tape.shape(v).to_vec(),
        });
    }
    Ok(())
}

fn similarity(tape: &mut Tape, a: Var, b: Var, d_p: usize, opts: AttentionOptions) -> Result<Var> {
    let bt = tape.transpose(b)?;
    let s = tape.matmul(a, bt)?;
    Ok(if opts.scaled_similarity {
        tape.scale(s, 1.0 / (d_p as f64).sqrt())
    } else {
        s
    })
}

/// Standard multi-head attention: per head `softmax(q_h k_hᵀ) v_h`, heads
/// concatenated and sent through the output projection.
pub fn multi_head_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    p: &MultiHeadParams,
    opts: AttentionOptions,
) -> Result<Var> {
    check_inputs(tape, q, k, v, p.d_f)?;
    if tape.shape(k)[0] == 0 {
        return Err(Error::EmptyKey);
    }
    let mut heads = Vec::with_capacity(p.heads.len());
    for h in &p.heads {
        let (wq, wk, wv) = (tape.param(h.wq), tape.param(h.wk), tape.param(h.wv));
        let qh = tape.matmul(q, wq)?;
        let kh = tape.matmul(k, wk)?;
        let vh = tape.matmul(v, wv)?;
        let s = similarity(tape, qh, kh, p.d_p, opts)?;
        let a = tape.row_softmax(s);
        heads.push(tape.matmul(a, vh)?);
    }
    let cat = tape.concat_cols(&heads)?;
    let wo = tape.param(p.wo);
    tape.matmul(cat, wo)
}

/// Intermediate values of one highway attention call.
#[derive(Debug, Clone)]
pub struct HighwayTrace {
    pub output: Var,
    /// Per head `[l1 × (l2 + 1)]`; the last column is the self weight.
    pub weights: Vec<Var>,
    /// Per head output, before the output projection.
    pub heads: Vec<Var>,
    /// Per head value projection of the context.
    pub values: Vec<Var>,
    /// Per head value projection of the queries themselves.
    pub self_values: Vec<Var>,
}

/// Highway attention with the default (unprobed) logits.
pub fn highway_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    p: &HighwayParams,
    opts: AttentionOptions,
) -> Result<Var> {
    Ok(highway_attention_traced(tape, q, k, v, p, opts, HighwayProbe::None)?.output)
}

/// Highway attention exposing weights and per-head outputs.
///
/// An empty key sequence is allowed: every self weight is then 1 and the
/// output is the queries' own value projections sent through the output
/// projection.
pub fn highway_attention_traced(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    p: &HighwayParams,
    opts: AttentionOptions,
    probe: HighwayProbe,
) -> Result<HighwayTrace> {
    let mh = &p.attn;
    check_inputs(tape, q, k, v, mh.d_f)?;
    let l1 = tape.shape(q)[0];
    let l2 = tape.shape(k)[0];

    let b_co = tape.param(p.b_co);
    let b_self = tape.param(p.b_self);
    let k_co = tape.add_row_bias(k, b_co)?;
    let q_self = tape.add_row_bias(q, b_self)?;

    let mut trace = HighwayTrace {
        output: q,
        weights: Vec::with_capacity(mh.heads.len()),
        heads: Vec::with_capacity(mh.heads.len()),
        values: Vec::with_capacity(mh.heads.len()),
        self_values: Vec::with_capacity(mh.heads.len()),
    };
    for h in &mh.heads {
        let (wq, wk, wv) = (tape.param(h.wq), tape.param(h.wk), tape.param(h.wv));
        let qh = tape.matmul(q, wq)?;
        let kh = tape.matmul(k_co, wk)?;
        let vh = tape.matmul(v, wv)?;
        let qkh = tape.matmul(q_self, wk)?;
        let qvh = tape.matmul(q, wv)?;

        let co = match probe {
            HighwayProbe::SuppressCo => tape.constant(Tensor::filled(&[l1, l2], SUPPRESSED_LOGIT)),
            _ => similarity(tape, qh, kh, mh.d_p, opts)?,
        };
        let own = match probe {
            HighwayProbe::SuppressSelf => tape.constant(Tensor::filled(&[l1, 1], SUPPRESSED_LOGIT)),
            _ => {
                let d = tape.row_dot(qh, qkh)?;
                let d = tape.reshape(d, &[l1, 1])?;
                if opts.scaled_similarity {
                    tape.scale(d, 1.0 / (mh.d_p as f64).sqrt())
                } else {
                    d
                }
            }
        };
        let logits = tape.concat_cols(&[co, own])?;
        let w = tape.row_softmax(logits);
        let w_co = tape.slice_cols(w, 0, l2)?;
        let w_self = tape.slice_cols(w, l2, l2 + 1)?;
        let from_context = tape.matmul(w_co, vh)?;
        let from_self = tape.scale_rows(qvh, w_self)?;
        let a = tape.add(from_context, from_self)?;

        trace.weights.push(w);
        trace.heads.push(a);
        trace.values.push(vh);
        trace.self_values.push(qvh);
    }
    let cat = tape.concat_cols(&trace.heads)?;
    let wo = tape.param(mh.wo);
    trace.output = tape.matmul(cat, wo)?;
    Ok(trace)
}

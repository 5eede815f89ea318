//! Transformer encoder blocks and sinusoidal positions.

use rand::Rng;

use crate::attention::{multi_head_attention, AttentionOptions, MultiHeadParams};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Sinusoidal position table: `sin` on even columns, `cos` on odd ones,
/// with wavelength `10000^(2i/d_f)`.
pub fn positional_encoding(length: usize, d_f: usize) -> Result<Tensor> {
    if !d_f.is_multiple_of(2) {
        return Err(Error::config(format!(
            "positional encoding needs an even width, got {d_f}"
        )));
    }
    let mut data = vec![0.0; length * d_f];
    for pos in 0..length {
        for i in 0..d_f / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_f as f64);
            data[pos * d_f + 2 * i] = angle.sin();
            data[pos * d_f + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(&[length, d_f], data)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl NormParams {
    fn init(store: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        Ok(NormParams {
            gain: store.register(format!("{prefix}.gain"), Tensor::filled(&[d], 1.0))?,
            bias: store.register(format!("{prefix}.bias"), Tensor::zeros(&[d]))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderBlockParams {
    pub attn: MultiHeadParams,
    pub ffn: FfnParams,
    pub norm1: NormParams,
    pub norm2: NormParams,
}

impl EncoderBlockParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_f: usize,
        n_heads: usize,
        d_p: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let attn = MultiHeadParams::init(store, &format!("{prefix}.attn"), d_f, n_heads, d_p, rng)?;
        let ffn = FfnParams {
            w1: store.register(format!("{prefix}.ffn.W1"), glorot_uniform(rng, d_f, d_h))?,
            b1: store.register(format!("{prefix}.ffn.b1"), Tensor::zeros(&[d_h]))?,
            w2: store.register(format!("{prefix}.ffn.W2"), glorot_uniform(rng, d_h, d_f))?,
            b2: store.register(format!("{prefix}.ffn.b2"), Tensor::zeros(&[d_f]))?,
        };
        let norm1 = NormParams::init(store, &format!("{prefix}.norm1"), d_f)?;
        let norm2 = NormParams::init(store, &format!("{prefix}.norm2"), d_f)?;
        Ok(EncoderBlockParams {
            attn,
            ffn,
            norm1,
            norm2,
        })
    }
}

/// Ordered blocks; one stack encodes both utterances and candidates.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncoderStackParams {
    pub blocks: Vec<EncoderBlockParams>,
}

impl EncoderStackParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        n_blocks: usize,
        d_f: usize,
        n_heads: usize,
        d_p: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..n_blocks)
            .map(|b| EncoderBlockParams::init(store, &format!("{prefix}.block{b}"), d_f, n_heads, d_p, d_h, rng))
            .collect::<Result<_>>()?;
        Ok(EncoderStackParams { blocks })
    }
}

/// `max(0, X W1 + b1) W2 + b2`, row by row.
pub fn ffn(tape: &mut Tape, x: Var, p: &FfnParams) -> Result<Var> {
    let (w1, b1, w2, b2) = (tape.param(p.w1), tape.param(p.b1), tape.param(p.w2), tape.param(p.b2));
    let h = tape.matmul(x, w1)?;
    let h = tape.add_row_bias(h, b1)?;
    let h = tape.relu(h);
    let o = tape.matmul(h, w2)?;
    tape.add_row_bias(o, b2)
}

fn residual_norm(tape: &mut Tape, x: Var, fx: Var, p: NormParams) -> Result<Var> {
    let sum = tape.add(x, fx)?;
    let (g, b) = (tape.param(p.gain), tape.param(p.bias));
    tape.layer_norm(sum, g, b)
}

/// Self-attention then feed-forward, each wrapped in residual + layer norm.
pub fn transformer_block(tape: &mut Tape, x: Var, p: &EncoderBlockParams, opts: AttentionOptions) -> Result<Var> {
    let attended = multi_head_attention(tape, x, x, x, &p.attn, opts)?;
    let y = residual_norm(tape, x, attended, p.norm1)?;
    let f = ffn(tape, y, &p.ffn)?;
    residual_norm(tape, y, f, p.norm2)
}

/// Adds positions once, then applies every block in order.
pub fn encode_sequence(tape: &mut Tape, x: Var, stack: &EncoderStackParams, opts: AttentionOptions) -> Result<Var> {
    let s = tape.shape(x);
    if s.len() != 2 {
        return Err(Error::Dimension {
            op: "encode_sequence",
            lhs: s.to_vec(),
            rhs: vec![],
        });
    }
    let pe = positional_encoding(s[0], s[1])?;
    let pe = tape.constant(pe);
    let mut h = tape.add(x, pe)?;
    for block in &stack.blocks {
        h = transformer_block(tape, h, block, opts)?;
    }
    Ok(h)
}

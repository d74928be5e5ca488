//! Token mixers: linear-cost separable attention and multi-head attention.

use super::layers::{Init, Session};
use crate::error::{Error, Result};
use crate::tensor::Var;

pub(crate) fn init_separable(init: &mut Init, prefix: &str, d: usize) {
    init.linear(&format!("{prefix}.score"), d, 1);
    init.linear(&format!("{prefix}.key"), d, d);
    init.linear(&format!("{prefix}.value"), d, d);
    init.linear(&format!("{prefix}.out"), d, d);
}

pub(crate) fn init_mha(init: &mut Init, prefix: &str, d: usize) {
    for part in ["query", "key", "value", "out"] {
        init.linear(&format!("{prefix}.{part}"), d, d);
    }
}

fn tokens(s: &Session, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
    match *s.tape.shape(x) {
        [b, n, d] => Ok((b, n, d)),
        ref other => Err(Error::Shape {
            op,
            detail: format!("expected [B, n, d], got {other:?}"),
        }),
    }
}

/// Separable self-attention over `[B, n, d]`.
///
/// Each token gets a scalar score; the softmax of the scores over tokens
/// weights the keys into a single context vector, which gates the ReLU'd
/// values. Nothing of size `n × n` is formed.
pub fn separable_attention(s: &mut Session, prefix: &str, x: Var) -> Result<Var> {
    let (b, n, d) = tokens(s, "separable_attention", x)?;
    let score = s.linear(&format!("{prefix}.score"), x)?;
    let score = s.tape.reshape(score, &[b, n])?;
    let weights = s.tape.softmax(score, 1)?;
    let weights = s.tape.reshape(weights, &[b, 1, n])?;
    let key = s.linear(&format!("{prefix}.key"), x)?;
    let context = s.tape.bmm(weights, key)?;
    let context = s.tape.expand(context, &[b, n, d])?;
    let value = s.linear(&format!("{prefix}.value"), x)?;
    let value = s.tape.relu(value)?;
    let mixed = s.tape.mul(value, context)?;
    s.linear(&format!("{prefix}.out"), mixed)
}

/// Scaled dot-product attention with `heads` heads over `[B, n, d]`.
pub fn multihead_attention(s: &mut Session, prefix: &str, x: Var, heads: usize) -> Result<Var> {
    Ok(multihead_attention_with_weights(s, prefix, x, heads)?.0)
}

/// As [`multihead_attention`], also returning the attention weights
/// `[B·heads, n, n]`.
pub fn multihead_attention_with_weights(s: &mut Session, prefix: &str, x: Var, heads: usize) -> Result<(Var, Var)> {
    let (b, n, d) = tokens(s, "multihead_attention", x)?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::Shape {
            op: "multihead_attention",
            detail: format!("width {d} not divisible by {heads} heads"),
        });
    }
    let dh = d / heads;
    let split = |s: &mut Session, part: &str| -> Result<Var> {
        let y = s.linear(&format!("{prefix}.{part}"), x)?;
        let y = s.tape.reshape(y, &[b, n, heads, dh])?;
        let y = s.tape.permute(y, &[0, 2, 1, 3])?;
        s.tape.reshape(y, &[b * heads, n, dh])
    };
    let q = split(s, "query")?;
    let k = split(s, "key")?;
    let v = split(s, "value")?;
    let kt = s.tape.permute(k, &[0, 2, 1])?;
    let scores = s.tape.bmm(q, kt)?;
    let scores = s.tape.scale(scores, 1.0 / (dh as f32).sqrt())?;
    let attn = s.tape.softmax(scores, 2)?;
    let y = s.tape.bmm(attn, v)?;
    let y = s.tape.reshape(y, &[b, heads, n, dh])?;
    let y = s.tape.permute(y, &[0, 2, 1, 3])?;
    let y = s.tape.reshape(y, &[b, n, d])?;
    Ok((s.linear(&format!("{prefix}.out"), y)?, attn))
}

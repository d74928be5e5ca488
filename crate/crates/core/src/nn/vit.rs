//! Class-token-free ViT encoder used by the teacher.

use super::attention::{init_mha, multihead_attention};
use super::config::TeacherConfig;
use super::layers::{Init, Session};
use crate::error::{Error, LayerContext, Result};
use crate::tensor::Var;

pub(crate) fn init(init: &mut Init, cfg: &TeacherConfig) {
    let d = cfg.vit_dim;
    let n = cfg.front().feature_shape()[2];
    init.trunc_normal("vit.pos_embed".into(), &[n, d], 0.02);
    for l in 0..cfg.vit_layers {
        let p = format!("vit.layers.{l}");
        init.layer_norm(&format!("{p}.ln1"), d);
        init_mha(init, &format!("{p}.attn"), d);
        init.layer_norm(&format!("{p}.ln2"), d);
        init.linear(&format!("{p}.mlp.fc1"), d, cfg.vit_mlp);
        init.linear(&format!("{p}.mlp.fc2"), cfg.vit_mlp, d);
    }
    init.layer_norm("vit.ln", d);
}

/// `[B, d, 1, n]` feature map to mean-pooled `[B, d]`.
pub(crate) fn forward(s: &mut Session, cfg: &TeacherConfig, x: Var) -> Result<Var> {
    let (b, d, n) = match *s.tape.shape(x) {
        [b, d, 1, n] if d == cfg.vit_dim => (b, d, n),
        ref other => {
            return Err(Error::Shape {
                op: "vit",
                detail: format!("expected [B, {}, 1, n], got {other:?}", cfg.vit_dim),
            })
        }
    };
    let t = s.tape.reshape(x, &[b, d, n])?;
    let t = s.tape.permute(t, &[0, 2, 1])?;
    let pos = s.p("vit.pos_embed")?;
    if s.tape.shape(pos) != [n, d] {
        return Err(Error::Shape {
            op: "vit",
            detail: format!("{n} tokens for position table {:?}", s.tape.shape(pos)),
        });
    }
    let pos = s.tape.reshape(pos, &[1, n, d])?;
    let pos = s.tape.expand(pos, &[b, n, d])?;
    let mut t = s.tape.add(t, pos)?;
    for l in 0..cfg.vit_layers {
        let p = format!("vit.layers.{l}");
        t = layer(s, &p, cfg.vit_heads, t).layer(&p)?;
    }
    let t = s.layer_norm("vit.ln", t)?;
    s.tape.mean_axis(t, 1)
}

fn layer(s: &mut Session, p: &str, heads: usize, x: Var) -> Result<Var> {
    let y = s.layer_norm(&format!("{p}.ln1"), x)?;
    let y = multihead_attention(s, &format!("{p}.attn"), y, heads)?;
    let x = s.tape.add(x, y)?;
    let y = s.layer_norm(&format!("{p}.ln2"), x)?;
    let y = s.linear(&format!("{p}.mlp.fc1"), y)?;
    let y = s.tape.gelu(y)?;
    let y = s.linear(&format!("{p}.mlp.fc2"), y)?;
    s.tape.add(x, y)
}

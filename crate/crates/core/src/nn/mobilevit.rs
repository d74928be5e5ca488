//! MobileViT block with separable attention and no input skip.

use super::attention::{init_separable, separable_attention};
use super::config::StudentConfig;
use super::layers::{Init, Session};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

pub(crate) fn init(init: &mut Init, prefix: &str, cfg: &StudentConfig) {
    let c = cfg.fe2_out;
    let d = cfg.mvit_dim;
    let (kh, kw) = cfg.mvit_conv_kernel;
    init.conv(&format!("{prefix}.local.dw"), &[c, 1, kh, kw], false);
    init.batch_norm(&format!("{prefix}.local.bn"), c);
    init.conv(&format!("{prefix}.local.pw"), &[d, c, 1, 1], false);
    let ffn = d * cfg.mvit_ffn_expansion;
    for l in 0..cfg.mvit_transformer_layers {
        let p = format!("{prefix}.layers.{l}");
        init.layer_norm(&format!("{p}.ln1"), d);
        init_separable(init, &format!("{p}.attn"), d);
        init.layer_norm(&format!("{p}.ln2"), d);
        init.linear(&format!("{p}.ffn.fc1"), d, ffn);
        init.linear(&format!("{p}.ffn.fc2"), ffn, d);
    }
    init.layer_norm(&format!("{prefix}.ln"), d);
    init.conv(&format!("{prefix}.proj"), &[c, d, 1, 1], false);
    init.batch_norm(&format!("{prefix}.proj.bn"), c);
}

/// `[B, d, H, W] -> [B·ph·pw, (H/ph)·(W/pw), d]`: one token sequence per
/// position inside a patch, one token per patch.
pub fn unfold(tape: &mut Tape, x: Var, patch: (usize, usize)) -> Result<Var> {
    let (b, d, h, w) = match *tape.shape(x) {
        [b, d, h, w] => (b, d, h, w),
        ref other => {
            return Err(Error::Shape {
                op: "unfold",
                detail: format!("expected rank 4, got {other:?}"),
            })
        }
    };
    let (ph, pw) = patch;
    if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::Shape {
            op: "unfold",
            detail: format!("patch {patch:?} does not tile {h}x{w}"),
        });
    }
    let (hn, wn) = (h / ph, w / pw);
    let y = tape.reshape(x, &[b, d, hn, ph, wn, pw])?;
    let y = tape.permute(y, &[0, 3, 5, 2, 4, 1])?;
    tape.reshape(y, &[b * ph * pw, hn * wn, d])
}

/// Inverse of [`unfold`] for a `[B, d, h, w]` map.
pub fn fold(tape: &mut Tape, x: Var, map: [usize; 4], patch: (usize, usize)) -> Result<Var> {
    let [b, d, h, w] = map;
    let (ph, pw) = patch;
    if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 || tape.shape(x) != [b * ph * pw, (h / ph) * (w / pw), d] {
        return Err(Error::Shape {
            op: "fold",
            detail: format!("tokens {:?} for map {map:?} with patch {patch:?}", tape.shape(x)),
        });
    }
    let y = tape.reshape(x, &[b, ph, pw, h / ph, w / pw, d])?;
    let y = tape.permute(y, &[0, 5, 3, 1, 4, 2])?;
    tape.reshape(y, &[b, d, h, w])
}

/// One block `[B, C, H, W] -> [B, C, H, W]` using the parameters under `prefix`.
pub fn block(s: &mut Session, prefix: &str, cfg: &StudentConfig, x: Var) -> Result<Var> {
    let [b, c, h, w] = match *s.tape.shape(x) {
        [b, c, h, w] if c == cfg.fe2_out => [b, c, h, w],
        ref other => {
            return Err(Error::Shape {
                op: "mobilevit_block",
                detail: format!("expected [B, {}, H, W], got {other:?}", cfg.fe2_out),
            })
        }
    };
    let (kh, kw) = cfg.mvit_conv_kernel;
    let dw = s.p(&format!("{prefix}.local.dw.weight"))?;
    let y = s.tape.conv2d(x, dw, None, (1, 1), (kh / 2, kw / 2), (1, 1), c)?;
    let y = s.batch_norm(&format!("{prefix}.local.bn"), y)?;
    let y = s.tape.silu(y)?;
    let pw = s.p(&format!("{prefix}.local.pw.weight"))?;
    let y = s.tape.conv2d(y, pw, None, (1, 1), (0, 0), (1, 1), 1)?;

    let mut t = unfold(s.tape, y, cfg.mvit_patch)?;
    for l in 0..cfg.mvit_transformer_layers {
        t = transformer_layer(s, &format!("{prefix}.layers.{l}"), t)?;
    }
    let t = s.layer_norm(&format!("{prefix}.ln"), t)?;
    let y = fold(s.tape, t, [b, cfg.mvit_dim, h, w], cfg.mvit_patch)?;

    let proj = s.p(&format!("{prefix}.proj.weight"))?;
    let y = s.tape.conv2d(y, proj, None, (1, 1), (0, 0), (1, 1), 1)?;
    s.batch_norm(&format!("{prefix}.proj.bn"), y)
}

/// Pre-norm layer: `x + attn(ln1(x))`, then `+ ffn(ln2(·))` with SiLU.
pub(crate) fn transformer_layer(s: &mut Session, p: &str, x: Var) -> Result<Var> {
    let y = s.layer_norm(&format!("{p}.ln1"), x)?;
    let y = separable_attention(s, &format!("{p}.attn"), y)?;
    let x = s.tape.add(x, y)?;
    let y = s.layer_norm(&format!("{p}.ln2"), x)?;
    let y = s.linear(&format!("{p}.ffn.fc1"), y)?;
    let y = s.tape.silu(y)?;
    let y = s.linear(&format!("{p}.ffn.fc2"), y)?;
    s.tape.add(x, y)
}

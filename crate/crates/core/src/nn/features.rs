//! Two-conv feature extraction over the TCN output viewed as a 1-channel map.

use super::config::FrontEnd;
use super::layers::{Init, Session};
use crate::error::{Error, LayerContext, Result};
use crate::tensor::Var;

pub(crate) fn init(init: &mut Init, f: &FrontEnd) {
    let (kh, kw) = f.fe1_kernel;
    init.conv("fe.conv1", &[f.fe1_out, 1, kh, kw], true);
    init.batch_norm("fe.bn1", f.fe1_out);
    let (kh2, kw2) = f.fe2_kernel();
    init.conv("fe.conv2", &[f.fe2_out, f.fe1_out, kh2, kw2], true);
    init.batch_norm("fe.bn2", f.fe2_out);
}

/// `[B, C_tcn, T] -> [B, fe2_out, 1, W]`.
pub(crate) fn forward(s: &mut Session, f: &FrontEnd, h: Var) -> Result<Var> {
    let shape = s.tape.shape(h).to_vec();
    let (mh, mw) = f.map_size();
    if shape.len() != 3 || shape[1] != mh || shape[2] != mw {
        return Err(Error::Shape {
            op: "feature_extract",
            detail: format!("expected [B, {mh}, {mw}], got {shape:?}"),
        });
    }
    let x = s.tape.reshape(h, &[shape[0], 1, mh, mw])?;
    let x = conv_bn_relu(s, "fe.conv1", "fe.bn1", x, f.fe1_stride, f.fe1_padding).layer("fe.conv1")?;
    conv_bn_relu(s, "fe.conv2", "fe.bn2", x, (1, 1), (0, 0)).layer("fe.conv2")
}

fn conv_bn_relu(
    s: &mut Session,
    conv: &str,
    bn: &str,
    x: Var,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Var> {
    let w = s.p(&format!("{conv}.weight"))?;
    let b = s.p(&format!("{conv}.bias"))?;
    let y = s.tape.conv2d(x, w, Some(b), stride, padding, (1, 1), 1)?;
    let y = s.batch_norm(bn, y)?;
    s.tape.relu(y)
}

//! Residual stack of weight-normalized causal convolutions.
//!
//! Level `i` uses dilation `2^i` in both of its convolutions. A 1×1
//! projection on the residual path is added when the channel count changes.

use super::config::FrontEnd;
use super::layers::{Init, Session};
use crate::error::{Error, LayerContext, Result};
use crate::tensor::{Tensor, Var};

pub(crate) fn init(init: &mut Init, f: &FrontEnd) {
    let mut cin = f.in_channels;
    for (i, &cout) in f.tcn_channels.iter().enumerate() {
        weight_norm_conv(init, &format!("tcn.{i}.conv1"), cout, cin, f.tcn_kernel);
        weight_norm_conv(init, &format!("tcn.{i}.conv2"), cout, cout, f.tcn_kernel);
        if cin != cout {
            init.conv(&format!("tcn.{i}.downsample"), &[cout, cin, 1], true);
        }
        cin = cout;
    }
}

fn weight_norm_conv(init: &mut Init, prefix: &str, cout: usize, cin: usize, k: usize) {
    let name = format!("{prefix}.weight_v");
    init.fan_in_uniform(name.clone(), &[cout, cin, k], cin * k);
    // magnitude starts at the direction's norm, so the effective weight
    // equals the drawn one
    let v = &init.params[&name];
    let row = cin * k;
    let g = Tensor::from_fn(&[cout], |o| {
        v.data()[o * row..(o + 1) * row]
            .iter()
            .map(|&x| x as f64 * x as f64)
            .sum::<f64>()
            .sqrt() as f32
    });
    init.set(format!("{prefix}.weight_g"), g);
    init.zeros(format!("{prefix}.bias"), &[cout]);
}

/// Receptive field of the stack: `1 + Σ 2·(k − 1)·2^i`.
pub fn receptive_field(f: &FrontEnd) -> usize {
    1 + (0..f.tcn_channels.len())
        .map(|i| 2 * (f.tcn_kernel - 1) * (1 << i))
        .sum::<usize>()
}

pub(crate) fn forward(s: &mut Session, f: &FrontEnd, x: Var) -> Result<Var> {
    let shape = s.tape.shape(x).to_vec();
    if shape.len() != 3 || shape[1] != f.in_channels {
        return Err(Error::Shape {
            op: "tcn",
            detail: format!("expected [B, {}, T], got {shape:?}", f.in_channels),
        });
    }
    let mut h = x;
    for i in 0..f.tcn_channels.len() {
        let name = format!("tcn.{i}");
        h = level(s, &name, f, h, 1 << i).layer(&name)?;
    }
    Ok(h)
}

fn level(s: &mut Session, name: &str, f: &FrontEnd, x: Var, dilation: usize) -> Result<Var> {
    let y = conv(s, &format!("{name}.conv1"), x, dilation)?;
    let y = s.tape.relu(y)?;
    let y = s.dropout(y, f.tcn_dropout)?;
    let y = conv(s, &format!("{name}.conv2"), y, dilation)?;
    let y = s.tape.relu(y)?;
    let y = s.dropout(y, f.tcn_dropout)?;
    let down = format!("{name}.downsample.weight");
    let res = if s.has(&down) {
        let w = s.p(&down)?;
        let b = s.p(&format!("{name}.downsample.bias"))?;
        s.tape.causal_conv1d(x, w, Some(b), 1)?
    } else {
        x
    };
    let sum = s.tape.add(y, res)?;
    s.tape.relu(sum)
}

fn conv(s: &mut Session, prefix: &str, x: Var, dilation: usize) -> Result<Var> {
    let v = s.p(&format!("{prefix}.weight_v"))?;
    let g = s.p(&format!("{prefix}.weight_g"))?;
    let b = s.p(&format!("{prefix}.bias"))?;
    let w = s.tape.weight_norm(v, g)?;
    s.tape.causal_conv1d(x, w, Some(b), dilation)
}

//! Shared helpers for finite-difference checks.

#![allow(dead_code)]

pub mod grad_suite;

use eegmobile::nn::{StudentConfig, TeacherConfig};
use eegmobile::tensor::{grad_check, gradcheck::DEFAULT_STEP, Tape, Tensor, Var};
use eegmobile::Result;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const GRAD_TOL: f64 = 1e-2;
const RIDGES: [f64; 7] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0];
const DRAWS: usize = 64;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0) * scale)
}

/// Finite-difference check of `x -> Σ wᵢ·f(x)ᵢ` for a fixed projection `w`.
///
/// At 32-bit precision each output carries rounding noise near `1e-7·|y|`,
/// which the `2h` divisor turns into roughly `1e-5..1e-4` of absolute error
/// in a numeric slope. Layer Jacobians routinely spread over several orders
/// of magnitude, so with a random `w` some coordinates have slopes at that
/// noise floor and fail the relative test whatever the backward rule does.
/// The projection is therefore chosen from the analytic Jacobian `J` so that
/// `Jᵀw` has entries near unit size (ridge least squares), and among several
/// draws of `x` the one with the largest weakest-slope to `Σ|wᵢ|` ratio is
/// kept. Only analytic quantities enter the choice. A wrong backward rule
/// yields a wrong `J`, and the numeric slopes of the true function then
/// disagree with `Jᵀw`.
///
/// Each output is also centred on its value at `x` before weighting, so the
/// weights multiply small, almost exactly computed differences.
pub fn check(name: &str, shape: &[usize], scale: f32, f: impl Fn(&mut Tape, Var, u64) -> Result<Var>) {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919);
        let (x, weights, centre) = (0..DRAWS)
            .map(|_| {
                let x = rand_tensor(&mut rng, shape, scale);
                let (w, c, margin) = pick_projection(&f, &x, seed);
                (x, w, c, margin)
            })
            .max_by(|a, b| a.3.total_cmp(&b.3))
            .map(|(x, w, c, _)| (x, w, c))
            .unwrap();
        let err = grad_check(
            |t, v| {
                let y = f(t, v, seed)?;
                let (w, c) = (t.constant(weights.clone()), t.constant(centre.clone()));
                let d = t.sub(y, c)?;
                let p = t.mul(d, w)?;
                t.sum(p)
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(
            err < GRAD_TOL,
            "{name} seed {seed}: max relative error {err}\n{}",
            worst(&f, &x, &weights, &centre, seed)
        );
    }
}

/// Analytic Jacobian `[outputs × inputs]` of `f` at `x`, and `f(x)`.
fn jacobian(f: &impl Fn(&mut Tape, Var, u64) -> Result<Var>, x: &Tensor, seed: u64) -> (DMatrix<f64>, Tensor) {
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = f(&mut tape, xv, seed).unwrap();
    let value = tape.value(y).clone();
    let (m, n) = (value.numel(), x.numel());
    let mut j = DMatrix::zeros(m, n);
    for k in 0..m {
        let e = tape.constant(Tensor::from_fn(value.shape(), |i| if i == k { 1.0 } else { 0.0 }));
        let p = tape.mul(y, e).unwrap();
        let root = tape.sum(p).unwrap();
        if let Some(g) = tape.backward(root).unwrap().get(xv) {
            for (c, &v) in g.data().iter().enumerate() {
                j[(k, c)] = v as f64;
            }
        }
    }
    (j, value)
}

/// Projection weights, `f(x)`, and the noise margin of the projection.
fn pick_projection(f: &impl Fn(&mut Tape, Var, u64) -> Result<Var>, x: &Tensor, seed: u64) -> (Tensor, Tensor, f64) {
    let (j, y) = jacobian(f, x, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    // signs follow a random output direction so they agree with the
    // structure of `J`; inputs that no output depends on keep a zero target
    let u = DVector::from_fn(y.numel(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let target = (j.transpose() * u).map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    });
    let gram = j.transpose() * &j;
    let base = gram.trace().max(1e-30) / x.numel() as f64;
    let mut best = (DVector::zeros(y.numel()), f64::NEG_INFINITY);
    for rel in RIDGES {
        let reg = (&gram + DMatrix::identity(x.numel(), x.numel()) * (rel * base)).lu();
        let z = reg.solve(&target).expect("ridge-regularized Gram matrix is invertible");
        let w = &j * z;
        let g = j.transpose() * &w;
        let weakest = g
            .iter()
            .zip(target.iter())
            .filter(|(_, &t)| t != 0.0)
            .map(|(v, _)| v.abs())
            .fold(f64::INFINITY, f64::min);
        // slope of the weakest input against the summed size of the weights,
        // which sets the rounding noise in the projected scalar
        let margin = weakest / w.iter().map(|v| v.abs()).sum::<f64>().max(1e-30);
        if margin > best.1 {
            best = (w, margin);
        }
    }
    let (w, margin) = best;
    let weights = Tensor::from_fn(y.shape(), |i| w[i] as f32);
    (weights, y, margin)
}

/// Fixed operand with magnitudes in `[0.5, 1.5]·scale` and random signs, so
/// no channel or row is scaled close to zero.
pub fn constant(tape: &mut Tape, seed: u64, shape: &[usize], scale: f32) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31) + shape.len() as u64);
    let t = Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.5f32..1.5) * scale;
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    });
    tape.constant(t)
}

/// Worst coordinate spelled out, for failure messages.
fn worst(
    f: &impl Fn(&mut Tape, Var, u64) -> Result<Var>,
    x: &Tensor,
    weights: &Tensor,
    centre: &Tensor,
    seed: u64,
) -> String {
    let obj = |t: &mut Tape, v: Var| -> Result<Var> {
        let y = f(t, v, seed)?;
        let (w, c) = (t.constant(weights.clone()), t.constant(centre.clone()));
        let d = t.sub(y, c)?;
        let p = t.mul(d, w)?;
        t.sum(p)
    };
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let root = obj(&mut tape, xv).unwrap();
    let g = tape
        .backward(root)
        .unwrap()
        .get(xv)
        .unwrap_or_else(|| Tensor::zeros(x.shape()));
    let mut out = String::new();
    for i in 0..x.numel() {
        let slope = |h: f32| {
            let ev = |d: f32| {
                let mut p = x.clone();
                p.data_mut()[i] += d;
                let mut t = Tape::no_grad();
                let v = t.constant(p);
                let o = obj(&mut t, v).unwrap();
                t.value(o).item().unwrap() as f64
            };
            (ev(h) - ev(-h)) / (2.0 * h as f64)
        };
        let (a, n) = (g.data()[i] as f64, slope(DEFAULT_STEP));
        if (a - n).abs() / a.abs().max(n.abs()).max(1e-8) >= GRAD_TOL {
            out += &format!(
                "  [{i}] x={} analytic={a:.6} numeric(1e-3)={n:.6} numeric(1e-4)={:.6} numeric(1e-2)={:.6}\n",
                x.data()[i],
                slope(1e-4),
                slope(1e-2)
            );
        }
    }
    out
}

fn front_count(
    in_channels: usize,
    tcn: &[usize],
    k: usize,
    fe1: (usize, (usize, usize), usize),
    fe2: usize,
) -> (usize, usize) {
    let mut t = 0;
    let mut cin = in_channels;
    for &cout in tcn {
        // two weight-normed convs (v, g, bias) and a 1x1 downsample when widths differ
        t += cout * cin * k + 2 * cout + cout * cout * k + 2 * cout;
        if cin != cout {
            t += cout * cin + cout;
        }
        cin = cout;
    }
    let (out1, (kh, kw), pad_h) = fe1;
    let h1 = tcn.last().unwrap() + 2 * pad_h - kh + 1;
    // convs with bias, batch norms with weight and bias
    (t, out1 * kh * kw + 3 * out1 + fe2 * out1 * h1 + 3 * fe2)
}

/// Parameter counts worked out from the layer shapes alone.
pub fn analytic_student_count(c: &StudentConfig) -> usize {
    let (tcn, fe) = front_count(
        c.in_channels,
        &c.tcn_channels,
        c.tcn_kernel,
        (c.fe1_out, c.fe1_kernel, c.fe1_padding.0),
        c.fe2_out,
    );
    let (ch, d, f) = (c.fe2_out, c.mvit_dim, c.mvit_dim * c.mvit_ffn_expansion);
    let layer = 2 * d + (d + 1) + 3 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
    let (mk, mk2) = c.mvit_conv_kernel;
    let block = ch * mk * mk2 + 2 * ch + d * ch + c.mvit_transformer_layers * layer + 2 * d + ch * d + 2 * ch;
    tcn + fe + c.mvit_blocks * block + ch * 2 + 2
}

pub fn analytic_teacher_count(c: &TeacherConfig) -> usize {
    let (tcn, fe) = front_count(
        c.in_channels,
        &c.tcn_channels,
        c.tcn_kernel,
        (c.fe1_out, c.fe1_kernel, c.fe1_padding.0),
        c.fe2_out,
    );
    let (d, m) = (c.vit_dim, c.vit_mlp);
    let w1 = c.timesteps + 2 * c.fe1_padding.1;
    let tokens = (w1 - c.fe1_kernel.1) / c.fe1_stride.1 + 1;
    let layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * m + m) + (m * d + d);
    tcn + fe + tokens * d + c.vit_layers * layer + 2 * d + d * 2 + 2
}

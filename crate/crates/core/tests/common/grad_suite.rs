//! Finite-difference checks for every differentiable building block, shared
//! by the unit tests and the acceptance run.

use eegmobile::nn::{mobilevit, multihead_attention_with_weights, separable_attention, Model, Session, StudentConfig};
use eegmobile::tensor::Tensor;
use eegmobile::train::{distill_loss, kd_loss, true_loss, KdConfig};
use indexmap::IndexMap;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{check, constant, rand_tensor};

/// Layer type and the checks that cover it.
pub const SUITE: &[(&str, fn())] = &[
    ("elementwise", grad_elementwise),
    ("matmul", grad_matmul_chain),
    ("linear", grad_linear),
    ("conv2d", grad_conv2d),
    ("causal conv", grad_causal_conv),
    ("weight norm", grad_weight_norm),
    ("batch norm", grad_batch_norm),
    ("layer norm", grad_layer_norm),
    ("softmax and reductions", grad_softmax_family_and_reductions),
    ("relu", grad_relu_away_from_kink),
    ("softmax kl", grad_softmax_kl_two_logits),
    ("separable attention", grad_separable_attention),
    ("multi-head attention", grad_multihead_attention),
    ("mobilevit block", grad_mobilevit_block),
    ("losses", grad_losses),
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pair(a: f32, b: f32) -> Tensor {
    Tensor::new(vec![1, 2], vec![a, b]).unwrap()
}

/// Draws a test-point parameter: weights at `1/sqrt(fan_in)` so softmaxes do
/// not saturate, small biases, and norm gains in `[0.5, 1.5]`.
pub fn test_param(r: &mut ChaCha8Rng, name: &str, shape: &[usize]) -> Tensor {
    if name.ends_with(".bias") {
        return rand_tensor(r, shape, 0.1);
    }
    if shape.len() == 1 {
        return Tensor::from_fn(shape, |_| r.random_range(0.5f32..1.5));
    }
    let fan_in: usize = shape[1..].iter().product();
    if shape[0] == fan_in {
        // square maps are drawn orthogonal so none of them is near singular
        let g = DMatrix::from_fn(fan_in, fan_in, |_, _| r.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        return Tensor::from_fn(shape, |i| q[(i / fan_in, i % fan_in)] as f32);
    }
    rand_tensor(r, shape, (3.0 / fan_in as f32).sqrt())
}

pub fn random_params(seed: u64, specs: &[(&str, &[usize])]) -> IndexMap<String, Tensor> {
    let mut r = rng(seed);
    specs
        .iter()
        .map(|(name, shape)| (name.to_string(), test_param(&mut r, name, shape)))
        .collect()
}

/// Bias that keeps the ReLU after a separable-attention value projection
/// open, away from its kink.
pub fn open_relu_bias(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = rng(seed ^ 0xb1a5);
    Tensor::from_fn(shape, |_| r.random_range(2.5f32..3.0))
}

pub fn attn_params(seed: u64, d: usize) -> IndexMap<String, Tensor> {
    let mut p = random_params(
        seed,
        &[
            ("a.score.weight", &[1, d]),
            ("a.score.bias", &[1]),
            ("a.key.weight", &[d, d]),
            ("a.key.bias", &[d]),
            ("a.value.weight", &[d, d]),
            ("a.value.bias", &[d]),
            ("a.out.weight", &[d, d]),
            ("a.out.bias", &[d]),
        ],
    );
    p["a.value.bias"] = open_relu_bias(seed, &[d]);
    p
}

pub fn mha_params(seed: u64, d: usize) -> IndexMap<String, Tensor> {
    random_params(
        seed,
        &[
            ("a.query.weight", &[d, d]),
            ("a.query.bias", &[d]),
            ("a.key.weight", &[d, d]),
            ("a.key.bias", &[d]),
            ("a.value.weight", &[d, d]),
            ("a.value.bias", &[d]),
            ("a.out.weight", &[d, d]),
            ("a.out.bias", &[d]),
        ],
    )
}

/// Student whose MobileViT block works on 4 channels with width 4.
pub fn small_block_model(seed: u64) -> (Model, StudentConfig) {
    let cfg = StudentConfig {
        tcn_channels: vec![2],
        fe1_out: 2,
        fe2_out: 4,
        mvit_dim: 4,
        ..StudentConfig::default()
    };
    (Model::build_student(cfg.clone(), seed).unwrap(), cfg)
}

/// As [`small_block_model`] with every block parameter redrawn by
/// [`test_param`], so no path is damped by the small initial projections.
pub fn scrambled_block_model(seed: u64) -> (Model, StudentConfig) {
    let (mut model, cfg) = small_block_model(seed);
    let mut r = rng(seed ^ 0x55);
    for (name, t) in model.params.iter_mut() {
        if name.ends_with(".attn.value.bias") {
            *t = open_relu_bias(seed, t.shape());
        } else if name.starts_with("mvit.0.") {
            *t = test_param(&mut r, name, t.shape());
        }
    }
    (model, cfg)
}

// primitives

pub fn grad_elementwise() {
    check("mul", &[3, 4], 1.0, |t, x, s| {
        let c = constant(t, s, &[3, 4], 1.0);
        let y = t.mul(x, c)?;
        let y = t.sub(y, x)?;
        let y = t.add(y, c)?;
        let y = t.scale(y, 1.7)?;
        Ok(y)
    });
    // inputs stay clear of the points where the slope vanishes
    // (about -1.28 for silu and -0.75 for gelu)
    check("silu", &[12], 1.0, |t, x, _| {
        let x = t.add_scalar(x, 0.2)?;
        let y = t.silu(x)?;
        Ok(y)
    });
    check("gelu", &[12], 1.0, |t, x, _| {
        let x = t.add_scalar(x, 0.5)?;
        let y = t.gelu(x)?;
        Ok(y)
    });
}

pub fn grad_matmul_chain() {
    check("matmul", &[3, 4], 1.0, |t, x, s| {
        let b = constant(t, s, &[4, 5], 1.0);
        let c = constant(t, s + 1, &[5, 2], 1.0);
        let y = t.matmul(x, b)?;
        let y = t.matmul(y, c)?;
        Ok(y)
    });
    check("matmul rhs", &[4, 5], 1.0, |t, x, s| {
        let a = constant(t, s, &[3, 4], 1.0);
        let y = t.matmul(a, x)?;
        Ok(y)
    });
    check("bmm", &[2, 3, 4], 1.0, |t, x, s| {
        let b = constant(t, s, &[2, 4, 3], 1.0);
        let y = t.bmm(x, b)?;
        let y = t.bmm(y, x)?;
        Ok(y)
    });
}

pub fn grad_linear() {
    check("linear input", &[2, 3, 5], 1.0, |t, x, s| {
        let w = constant(t, s, &[4, 5], 1.0);
        let b = constant(t, s + 1, &[4], 1.0);
        let y = t.linear(x, w, Some(b))?;
        Ok(y)
    });
    check("linear weight", &[4, 5], 1.0, |t, w, s| {
        let x = constant(t, s, &[6, 5], 1.0);
        let y = t.linear(x, w, None)?;
        Ok(y)
    });
    check("linear bias", &[4], 1.0, |t, b, s| {
        let x = constant(t, s, &[6, 5], 1.0);
        let w = constant(t, s + 1, &[4, 5], 1.0);
        let y = t.linear(x, w, Some(b))?;
        Ok(y)
    });
}

pub fn grad_conv2d() {
    check("conv2d input", &[2, 4, 5, 6], 1.0, |t, x, s| {
        let w = constant(t, s, &[4, 2, 3, 2], 1.0);
        let y = t.conv2d(x, w, None, (2, 1), (1, 1), (1, 2), 2)?;
        Ok(y)
    });
    check("conv2d weight", &[3, 4, 2, 3], 1.0, |t, w, s| {
        let x = constant(t, s, &[2, 4, 5, 6], 1.0);
        let y = t.conv2d(x, w, None, (1, 2), (0, 1), (1, 1), 1)?;
        Ok(y)
    });
    check("depthwise weight", &[4, 1, 3, 3], 1.0, |t, w, s| {
        let x = constant(t, s, &[2, 4, 3, 5], 1.0);
        let b = constant(t, s + 3, &[4], 1.0);
        let y = t.conv2d(x, w, Some(b), (1, 1), (1, 1), (1, 1), 4)?;
        Ok(y)
    });
}

pub fn grad_causal_conv() {
    check("causal input", &[2, 3, 9], 1.0, |t, x, s| {
        let w = constant(t, s, &[4, 3, 3], 1.0);
        let b = constant(t, s + 1, &[4], 1.0);
        let y = t.causal_conv1d(x, w, Some(b), 2)?;
        Ok(y)
    });
    check("causal weight", &[4, 3, 3], 1.0, |t, w, s| {
        let x = constant(t, s, &[2, 3, 9], 1.0);
        let y = t.causal_conv1d(x, w, None, 3)?;
        Ok(y)
    });
}

pub fn grad_weight_norm() {
    check("weight_norm direction", &[3, 2, 3], 1.0, |t, v, s| {
        let g = constant(t, s, &[3], 2.0);
        let w = t.weight_norm(v, g)?;
        Ok(w)
    });
    check("weight_norm magnitude", &[3], 2.0, |t, g, s| {
        let v = constant(t, s, &[3, 2, 3], 1.0);
        let w = t.weight_norm(v, g)?;
        Ok(w)
    });
}

pub fn grad_batch_norm() {
    check("batch_norm train input", &[3, 2, 2, 2], 1.0, |t, x, s| {
        let g = constant(t, s, &[2], 1.0);
        let b = constant(t, s + 1, &[2], 1.0);
        let (y, _) = t.batch_norm(x, g, b, None, 1e-5)?;
        Ok(y)
    });
    check("batch_norm eval input", &[3, 2, 4], 1.0, |t, x, s| {
        let g = constant(t, s, &[2], 1.0);
        let b = constant(t, s + 1, &[2], 1.0);
        let (y, _) = t.batch_norm(x, g, b, Some((&[0.1, -0.2], &[0.5, 2.0])), 1e-5)?;
        Ok(y)
    });
    check("batch_norm gamma", &[2], 1.0, |t, g, s| {
        let x = constant(t, s, &[3, 2, 4], 1.0);
        let b = constant(t, s + 1, &[2], 1.0);
        let (y, _) = t.batch_norm(x, g, b, None, 1e-5)?;
        Ok(y)
    });
}

pub fn grad_layer_norm() {
    check("layer_norm input", &[3, 6], 1.0, |t, x, s| {
        let g = constant(t, s, &[6], 1.0);
        let b = constant(t, s + 1, &[6], 1.0);
        let y = t.layer_norm(x, g, b, 1e-5)?;
        Ok(y)
    });
    check("layer_norm gamma", &[6], 1.0, |t, g, s| {
        let x = constant(t, s, &[3, 6], 1.0);
        let b = constant(t, s + 1, &[6], 1.0);
        let y = t.layer_norm(x, g, b, 1e-5)?;
        Ok(y)
    });
}

pub fn grad_softmax_family_and_reductions() {
    check("softmax", &[3, 4], 2.0, |t, x, _| {
        let y = t.softmax(x, 1)?;
        Ok(y)
    });
    check("softmax axis0", &[3, 4], 2.0, |t, x, _| {
        let y = t.softmax(x, 0)?;
        Ok(y)
    });
    check("log_softmax", &[2, 3, 2], 2.0, |t, x, _| {
        let y = t.log_softmax(x, 1)?;
        Ok(y)
    });
    check("mean_axis", &[2, 3, 4], 1.0, |t, x, _| {
        let y = t.mean_axis(x, 1)?;
        let z = t.sum_axis(y, 1)?;
        let z = t.reshape(z, &[2, 1])?;
        let z = t.expand(z, &[2, 4])?;
        t.mul(y, z)
    });
    check("expand+permute+reshape", &[2, 1, 3], 1.0, |t, x, _| {
        let y = t.expand(x, &[2, 4, 3])?;
        let y = t.permute(y, &[2, 0, 1])?;
        let y = t.reshape(y, &[6, 4])?;
        let m = t.mean(y)?;
        let m = t.reshape(m, &[1, 1])?;
        let m = t.expand(m, &[6, 4])?;
        t.mul(y, m)
    });
}

pub fn grad_relu_away_from_kink() {
    check("relu", &[10], 1.0, |t, x, _| {
        // shift inputs away from zero so the kink is never straddled
        let y = t.relu(x)?;
        Ok(y)
    });
}

pub fn grad_softmax_kl_two_logits() {
    // KL(p || softmax(x)) for a fixed 2-class target distribution.
    check("softmax+kl", &[1, 2], 1.5, |t, x, _| {
        let p = t.constant(Tensor::new(vec![1, 2], vec![0.8808, 0.1192]).unwrap());
        let logq = t.log_softmax(x, 1)?;
        let prod = t.mul(p, logq)?;
        let cross = t.sum(prod)?;
        t.scale(cross, -1.0)
    });
}

// layers

pub fn grad_separable_attention() {
    check("separable input", &[2, 5, 4], 1.0, |t, x, seed| {
        let p = attn_params(seed, 4);
        let buffers = IndexMap::new();
        let mut s = Session::new(t, &p, &buffers, false, rng(0));
        separable_attention(&mut s, "a", x)
    });
    for name in ["a.score.weight", "a.key.weight", "a.value.bias", "a.out.weight"] {
        let shape = attn_params(0, 4)[name].shape().to_vec();
        check(name, &shape, 0.7, |t, w, seed| {
            let p = attn_params(seed, 4);
            let buffers = IndexMap::new();
            let mut s = Session::new(t, &p, &buffers, false, rng(0));
            s.bind(name, w);
            let x = s.tape.constant(rand_tensor(&mut rng(seed + 100), &[2, 5, 4], 1.0));
            separable_attention(&mut s, "a", x)
        });
    }
}

pub fn grad_multihead_attention() {
    check("mha input", &[2, 3, 4], 1.0, |t, x, seed| {
        let p = mha_params(seed, 4);
        let buffers = IndexMap::new();
        let mut s = Session::new(t, &p, &buffers, false, rng(0));
        Ok(multihead_attention_with_weights(&mut s, "a", x, 2)?.0)
    });
    for name in ["a.query.weight", "a.key.weight", "a.value.weight", "a.out.bias"] {
        check(name, mha_params(0, 4)[name].shape(), 0.7, |t, w, seed| {
            let p = mha_params(seed, 4);
            let buffers = IndexMap::new();
            let mut s = Session::new(t, &p, &buffers, false, rng(0));
            s.bind(name, w);
            let x = s.tape.constant(rand_tensor(&mut rng(seed + 100), &[2, 3, 4], 1.0));
            Ok(multihead_attention_with_weights(&mut s, "a", x, 2)?.0)
        });
    }
}

pub fn grad_mobilevit_block() {
    for train in [false, true] {
        check(
            &format!("mobilevit input train={train}"),
            &[2, 4, 1, 3],
            1.0,
            |t, x, seed| {
                let (model, cfg) = scrambled_block_model(seed);
                let mut s = model.session(t, train, rng(0));
                mobilevit::block(&mut s, "mvit.0", &cfg, x)
            },
        );
    }
    for name in [
        "mvit.0.local.dw.weight",
        "mvit.0.local.pw.weight",
        "mvit.0.layers.0.attn.key.weight",
        "mvit.0.layers.0.ffn.fc1.weight",
        "mvit.0.ln.weight",
        "mvit.0.proj.weight",
    ] {
        let shape = small_block_model(0).0.params[name].shape().to_vec();
        check(name, &shape, 1.0, |t, w, seed| {
            let (model, cfg) = scrambled_block_model(seed);
            let mut s = model.session(t, false, rng(0));
            s.bind(name, w);
            let x = s.tape.constant(rand_tensor(&mut rng(seed + 100), &[2, 4, 1, 3], 1.0));
            mobilevit::block(&mut s, "mvit.0", &cfg, x)
        });
    }
}

pub fn grad_losses() {
    check("true_loss", &[3, 2], 1.0, |t, x, seed| {
        let target = rand_tensor(&mut rng(seed + 9), &[3, 2], 1.0);
        true_loss(t, x, &target)
    });
    for temp in [1.0f32, 4.0] {
        check(&format!("distill_loss T={temp}"), &[3, 2], 2.0, |t, x, seed| {
            let teacher = rand_tensor(&mut rng(seed + 11), &[3, 2], 2.0);
            distill_loss(t, x, &teacher, temp)
        });
    }
    check("distill_loss two logits", &[1, 2], 1.0, |t, x, _| {
        distill_loss(t, x, &pair(2.0, 0.0), 1.0)
    });
    check("kd_loss", &[4, 2], 1.0, |t, x, seed| {
        let teacher = rand_tensor(&mut rng(seed + 12), &[4, 2], 1.0);
        let target = rand_tensor(&mut rng(seed + 13), &[4, 2], 1.0);
        let cfg = KdConfig {
            temperature: 2.0,
            ..KdConfig::default()
        };
        kd_loss(t, x, Some(&teacher), &target, &cfg)
    });
}

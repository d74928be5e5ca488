//! Parameter initialization and the per-forward binding session.

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Tape, Tensor, Var};

pub(crate) const BN_EPS: f32 = 1e-5;
pub(crate) const LN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;
const PROJ_STD: f32 = 0.02;

/// Draws parameters in a fixed order from one seeded stream.
pub(crate) struct Init {
    rng: ChaCha8Rng,
    pub params: IndexMap<String, Tensor>,
    pub buffers: IndexMap<String, Tensor>,
}

impl Init {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Init {
            rng,
            params: IndexMap::new(),
            buffers: IndexMap::new(),
        }
    }

    fn insert(&mut self, name: String, t: Tensor) {
        let prev = self.params.insert(name.clone(), t);
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn buffer(&mut self, name: String, t: Tensor) {
        let prev = self.buffers.insert(name.clone(), t);
        assert!(prev.is_none(), "duplicate buffer {name}");
    }

    /// Normal(0, σ) truncated to ±2σ by rejection.
    pub fn trunc_normal(&mut self, name: String, shape: &[usize], std: f32) {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| loop {
            let z: f32 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        });
        self.insert(name, t);
    }

    /// Uniform on `±1/√fan_in`.
    pub fn fan_in_uniform(&mut self, name: String, shape: &[usize], fan_in: usize) {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
        self.insert(name, t);
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn ones(&mut self, name: String, shape: &[usize]) {
        self.insert(name, Tensor::ones(shape));
    }

    pub fn set(&mut self, name: String, t: Tensor) {
        self.insert(name, t);
    }

    pub fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.trunc_normal(format!("{prefix}.weight"), &[fan_out, fan_in], PROJ_STD);
        self.zeros(format!("{prefix}.bias"), &[fan_out]);
    }

    /// Conv weight `[out, in/groups, k..]` with optional zero bias.
    pub fn conv(&mut self, prefix: &str, shape: &[usize], bias: bool) {
        let fan_in = shape[1..].iter().product();
        self.fan_in_uniform(format!("{prefix}.weight"), shape, fan_in);
        if bias {
            self.zeros(format!("{prefix}.bias"), &[shape[0]]);
        }
    }

    pub fn batch_norm(&mut self, prefix: &str, c: usize) {
        self.ones(format!("{prefix}.weight"), &[c]);
        self.zeros(format!("{prefix}.bias"), &[c]);
        self.buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[c]));
        self.buffer(format!("{prefix}.running_var"), Tensor::ones(&[c]));
    }

    pub fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.ones(format!("{prefix}.weight"), &[d]);
        self.zeros(format!("{prefix}.bias"), &[d]);
    }
}

/// Binds named parameters to tape leaves for one forward pass.
///
/// Parameters are bound lazily on first use; [`Session::bind`] substitutes a
/// caller-provided variable instead (used for gradient checks). In training
/// mode batch norm uses batch statistics and records them for the caller to
/// fold into the running buffers.
pub struct Session<'a> {
    pub tape: &'a mut Tape,
    params: &'a IndexMap<String, Tensor>,
    buffers: &'a IndexMap<String, Tensor>,
    bound: IndexMap<String, Var>,
    train: bool,
    rng: ChaCha8Rng,
    bn_stats: Vec<(String, BatchStats)>,
}

impl<'a> Session<'a> {
    pub fn new(
        tape: &'a mut Tape,
        params: &'a IndexMap<String, Tensor>,
        buffers: &'a IndexMap<String, Tensor>,
        train: bool,
        rng: ChaCha8Rng,
    ) -> Self {
        Session {
            tape,
            params,
            buffers,
            bound: IndexMap::new(),
            train,
            rng,
            bn_stats: Vec::new(),
        }
    }

    pub fn train(&self) -> bool {
        self.train
    }

    pub fn bind(&mut self, name: &str, v: Var) {
        self.bound.insert(name.to_string(), v);
    }

    /// Every parameter used so far, in first-use order.
    pub fn bound(&self) -> &IndexMap<String, Var> {
        &self.bound
    }

    pub fn take_bn_stats(&mut self) -> Vec<(String, BatchStats)> {
        std::mem::take(&mut self.bn_stats)
    }

    pub fn has(&self, name: &str) -> bool {
        self.bound.contains_key(name) || self.params.contains_key(name)
    }

    pub fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))?;
        let v = self.tape.param(t.clone());
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn buffer(&self, name: &str) -> Result<&'a Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing buffer {name}")))
    }

    /// `x · Wᵀ + b` over the last axis; the bias is optional.
    pub fn linear(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let bias = format!("{prefix}.bias");
        let b = if self.has(&bias) { Some(self.p(&bias)?) } else { None };
        self.tape.linear(x, w, b)
    }

    pub fn batch_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let g = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        if self.train {
            let (y, stats) = self.tape.batch_norm(x, g, b, None, BN_EPS)?;
            if let Some(stats) = stats {
                self.bn_stats.push((prefix.to_string(), stats));
            }
            Ok(y)
        } else {
            let rm = self.buffer(&format!("{prefix}.running_mean"))?;
            let rv = self.buffer(&format!("{prefix}.running_var"))?;
            let (y, _) = self.tape.batch_norm(x, g, b, Some((rm.data(), rv.data())), BN_EPS)?;
            Ok(y)
        }
    }

    pub fn layer_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let g = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        self.tape.layer_norm(x, g, b, LN_EPS)
    }

    pub fn dropout(&mut self, x: Var, p: f32) -> Result<Var> {
        self.tape.dropout(x, p, self.train, &mut self.rng)
    }
}

/// Fold batch statistics into running buffers:
/// `running ← (1 − momentum)·running + momentum·batch`.
pub fn update_running_stats(buffers: &mut IndexMap<String, Tensor>, stats: &[(String, BatchStats)]) -> Result<()> {
    for (prefix, s) in stats {
        for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
            let name = format!("{prefix}.{suffix}");
            let buf = buffers
                .get_mut(&name)
                .ok_or_else(|| Error::Contract(format!("missing buffer {name}")))?;
            for (r, &b) in buf.data_mut().iter_mut().zip(batch) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
    }
    Ok(())
}

use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{FrontEnd, StudentConfig, TeacherConfig};
use super::layers::{Init, Session};
use super::{checkpoint, features, mobilevit, tcn, vit};
use crate::error::{Error, LayerContext, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Student,
    Teacher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ModelConfig {
    Student(StudentConfig),
    Teacher(TeacherConfig),
}

impl ModelConfig {
    pub fn arch(&self) -> Arch {
        match self {
            ModelConfig::Student(_) => Arch::Student,
            ModelConfig::Teacher(_) => Arch::Teacher,
        }
    }

    pub fn front(&self) -> FrontEnd {
        match self {
            ModelConfig::Student(c) => c.front(),
            ModelConfig::Teacher(c) => c.front(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Student(c) => c.validate(),
            ModelConfig::Teacher(c) => c.validate(),
        }
    }

    fn head(&self) -> (f32, usize) {
        match self {
            ModelConfig::Student(c) => (c.head_dropout, c.fe2_out),
            ModelConfig::Teacher(c) => (c.head_dropout, c.vit_dim),
        }
    }
}

/// Scalar parameter counts per component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub tcn: usize,
    pub features: usize,
    pub backbone: usize,
    pub head: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.tcn + self.features + self.backbone + self.head
    }
}

const TARGET_MEAN: &str = "head.target_mean";
const TARGET_STD: &str = "head.target_std";

/// A built network: its configuration, trainable parameters and
/// non-trainable buffers (batch-norm running statistics and the fixed output
/// scaling), all keyed by stable names.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub params: IndexMap<String, Tensor>,
    pub buffers: IndexMap<String, Tensor>,
}

impl Model {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut init = Init::new(ChaCha8Rng::seed_from_u64(seed));
        let front = config.front();
        tcn::init(&mut init, &front);
        features::init(&mut init, &front);
        match &config {
            ModelConfig::Student(c) => {
                for i in 0..c.mvit_blocks {
                    mobilevit::init(&mut init, &format!("mvit.{i}"), c);
                }
            }
            ModelConfig::Teacher(c) => vit::init(&mut init, c),
        }
        let (_, width) = config.head();
        init.linear("head", width, 2);
        init.buffer(TARGET_MEAN.into(), Tensor::zeros(&[2]));
        init.buffer(TARGET_STD.into(), Tensor::ones(&[2]));
        let model = Model {
            config,
            params: init.params,
            buffers: init.buffers,
        };
        debug_assert!(model.params.values().all(Tensor::is_finite));
        Ok(model)
    }

    pub fn build_student(cfg: StudentConfig, seed: u64) -> Result<Model> {
        Model::build(ModelConfig::Student(cfg), seed)
    }

    pub fn build_teacher(cfg: TeacherConfig, seed: u64) -> Result<Model> {
        Model::build(ModelConfig::Teacher(cfg), seed)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.config.arch()
    }

    pub fn session<'a>(&'a self, tape: &'a mut Tape, train: bool, rng: ChaCha8Rng) -> Session<'a> {
        Session::new(tape, &self.params, &self.buffers, train, rng)
    }

    /// Fixed affine map applied to the head output, `y·std + mean`, so the
    /// network can work at unit scale while predicting pixel coordinates.
    pub fn set_target_scaling(&mut self, mean: [f32; 2], std: [f32; 2]) -> Result<()> {
        if std.iter().any(|&s| !(s.is_finite() && s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Contract(format!(
                "invalid target scaling mean {mean:?} std {std:?}"
            )));
        }
        self.buffers[TARGET_MEAN] = Tensor::new(vec![2], mean.to_vec())?;
        self.buffers[TARGET_STD] = Tensor::new(vec![2], std.to_vec())?;
        Ok(())
    }

    pub fn tcn_forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        tcn::forward(s, &self.config.front(), x)
    }

    pub fn feature_extract(&self, s: &mut Session, h: Var) -> Result<Var> {
        features::forward(s, &self.config.front(), h)
    }

    /// `[B, in_channels, timesteps] -> [B, 2]` in pixels.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let front = self.config.front();
        let shape = s.tape.shape(x);
        if shape.len() != 3 || shape[1] != front.in_channels || shape[2] != front.timesteps {
            return Err(Error::Shape {
                op: "forward",
                detail: format!(
                    "expected [B, {}, {}], got {shape:?}",
                    front.in_channels, front.timesteps
                ),
            });
        }
        let b = shape[0];
        let h = self.tcn_forward(s, x)?;
        let f = self.feature_extract(s, h)?;
        let pooled = match &self.config {
            ModelConfig::Student(c) => {
                let mut y = f;
                for i in 0..c.mvit_blocks {
                    let name = format!("mvit.{i}");
                    y = mobilevit::block(s, &name, c, y).layer(&name)?;
                }
                let [ch, hh, ww] = front.feature_shape();
                let y = s.tape.reshape(y, &[b, ch, hh * ww])?;
                s.tape.mean_axis(y, 2)?
            }
            ModelConfig::Teacher(c) => vit::forward(s, c, f).layer("vit")?,
        };
        self.head(s, pooled, b).layer("head")
    }

    fn head(&self, s: &mut Session, x: Var, b: usize) -> Result<Var> {
        let (p, _) = self.config.head();
        let y = s.dropout(x, p)?;
        let y = s.linear("head", y)?;
        let std = s.buffer(TARGET_STD)?.reshape(&[1, 2])?;
        let mean = s.buffer(TARGET_MEAN)?.reshape(&[1, 2])?;
        let std = s.tape.constant(std);
        let std = s.tape.expand(std, &[b, 2])?;
        let mean = s.tape.constant(mean);
        let mean = s.tape.expand(mean, &[b, 2])?;
        let y = s.tape.mul(y, std)?;
        s.tape.add(y, mean)
    }

    /// Eval-mode forward without gradient bookkeeping.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::no_grad();
        let mut s = self.session(&mut tape, false, ChaCha8Rng::seed_from_u64(0));
        let xv = s.tape.constant(x.clone());
        let y = self.forward(&mut s, xv)?;
        Ok(tape.value(y).clone())
    }

    /// [`Model::predict`] in chunks of at most `batch` samples.
    pub fn predict_batched(&self, x: &Tensor, batch: usize) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 3 || batch == 0 {
            return Err(Error::Contract(format!(
                "predict_batched on {shape:?} with batch {batch}"
            )));
        }
        let per = shape[1] * shape[2];
        let mut out = Vec::with_capacity(shape[0] * 2);
        for start in (0..shape[0]).step_by(batch) {
            let n = batch.min(shape[0] - start);
            let chunk = Tensor::new(
                vec![n, shape[1], shape[2]],
                x.data()[start * per..(start + n) * per].to_vec(),
            )?;
            out.extend_from_slice(self.predict(&chunk)?.data());
        }
        Tensor::new(vec![shape[0], 2], out)
    }

    pub fn param_count(&self) -> ParamCount {
        let mut c = ParamCount::default();
        for (name, t) in &self.params {
            let slot = match name.split('.').next() {
                Some("tcn") => &mut c.tcn,
                Some("fe") => &mut c.features,
                Some("head") => &mut c.head,
                _ => &mut c.backbone,
            };
            *slot += t.numel();
        }
        c
    }

    /// Write parameters followed by buffers as an "EGMW" checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let items: Vec<(&str, &Tensor)> = self
            .params
            .iter()
            .chain(&self.buffers)
            .map(|(n, t)| (n.as_str(), t))
            .collect();
        checkpoint::save(path, items.into_iter())
    }

    /// Rebuild a model for `config` and fill it from a checkpoint. Every
    /// expected tensor must be present with its exact shape.
    pub fn load(path: &Path, config: ModelConfig) -> Result<Model> {
        let mut stored = checkpoint::load(path)?;
        let mut model = Model::build(config, 0)?;
        for (name, slot) in model.params.iter_mut().chain(model.buffers.iter_mut()) {
            let t = stored
                .shift_remove(name)
                .ok_or_else(|| Error::Contract(format!("checkpoint lacks {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Contract(format!(
                    "checkpoint {name} has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Contract(format!("checkpoint has unexpected tensor {extra}")));
        }
        Ok(model)
    }
}

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f32 = 0.9;
pub const BETA2: f32 = 0.999;
pub const EPS: f32 = 1e-8;

/// Adam with bias correction and L2 weight decay folded into the gradient.
/// Moments are keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub step: u64,
    first: IndexMap<String, Vec<f32>>,
    second: IndexMap<String, Vec<f32>>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f32]> {
        self.first.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f32]> {
        self.second.get(name).map(Vec::as_slice)
    }

    /// Updates every parameter that has a gradient. Parameters without one
    /// are left alone and their moments are not advanced.
    pub fn step(
        &mut self,
        params: &mut IndexMap<String, Tensor>,
        grads: &IndexMap<String, Tensor>,
        lr: f32,
        weight_decay: f32,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - (BETA1 as f64).powi(t);
        let c2 = 1.0 - (BETA2 as f64).powi(t);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    detail: format!("{name}: parameter {:?}, gradient {:?}", p.shape(), g.shape()),
                });
            }
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi + weight_decay * *w;
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let m_hat = *mi as f64 / c1;
                let v_hat = *vi as f64 / c2;
                *w -= (lr as f64 * m_hat / (v_hat.sqrt() + EPS as f64)) as f32;
            }
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    op: format!("adam update of {name}"),
                });
            }
        }
        Ok(())
    }
}

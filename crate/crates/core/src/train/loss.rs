use super::KdConfig;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

fn same_shape(tape: &Tape, op: &'static str, a: Var, b: &[usize]) -> Result<()> {
    let s = tape.shape(a);
    if s.len() != 2 || s != b {
        return Err(Error::Shape {
            op,
            detail: format!("{s:?} vs {b:?}"),
        });
    }
    Ok(())
}

/// Mean squared error over every entry.
pub fn true_loss(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
    same_shape(tape, "true_loss", pred, target.shape())?;
    let t = tape.constant(target.clone());
    let d = tape.sub(pred, t)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq)
}

/// `T² · mean_b Σ_k p_k (ln p_k − ln q_k)` with `p = softmax(teacher/T)` and
/// `q = softmax(student/T)` per row. The teacher side is a constant.
pub fn distill_loss(tape: &mut Tape, student: Var, teacher: &Tensor, temperature: f32) -> Result<Var> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    same_shape(tape, "distill_loss", student, teacher.shape())?;
    let b = teacher.shape()[0];
    let inv = 1.0 / temperature;
    // Both sides go through the same ops so identical logits cancel exactly.
    let t = tape.constant(teacher.clone());
    let t = tape.scale(t, inv)?;
    let log_p = tape.log_softmax(t, 1)?;
    let p = tape.softmax(t, 1)?;
    let s = tape.scale(student, inv)?;
    let log_q = tape.log_softmax(s, 1)?;
    let d = tape.sub(log_p, log_q)?;
    let kl = tape.mul(p, d)?;
    let kl = tape.sum(kl)?;
    tape.scale(kl, temperature * temperature / b as f32)
}

/// `(1 − λ)·true_loss + λ·distill_loss`. The endpoints return the single
/// component unchanged; a teacher is required only when `λ > 0`.
pub fn kd_loss(
    tape: &mut Tape,
    student: Var,
    teacher: Option<&Tensor>,
    target: &Tensor,
    cfg: &KdConfig,
) -> Result<Var> {
    cfg.validate()?;
    let lambda = cfg.lambda;
    if lambda == 0.0 {
        return true_loss(tape, student, target);
    }
    let teacher = teacher.ok_or_else(|| Error::Contract(format!("lambda {lambda} needs teacher outputs")))?;
    let soft = distill_loss(tape, student, teacher, cfg.temperature)?;
    if lambda == 1.0 {
        return Ok(soft);
    }
    let hard = true_loss(tape, student, target)?;
    let hard = tape.scale(hard, 1.0 - lambda)?;
    let soft = tape.scale(soft, lambda)?;
    tape.add(hard, soft)
}

//! Central finite-difference gradient checking.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Default perturbation for 32-bit checks.
pub const DEFAULT_STEP: f32 = 1e-3;

/// Worst-coordinate comparison between the tape gradient of `f` at `x` and
/// central differences `(f(x + h eᵢ) - f(x - h eᵢ)) / 2h`.
///
/// The relative error of a coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`; the maximum over
/// all coordinates is returned. `f` must be deterministic and return a scalar.
/// The divisor is the representable distance between the two perturbed
/// points, which equals `2h` up to rounding of `x ± h`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f32) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let root = f(&mut tape, xv)?;
    let analytic = tape.backward(root)?.get(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |point: Tensor| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let v = tape.constant(point);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).item()? as f64)
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        let hi = x.data()[i] + step;
        let lo = x.data()[i] - step;
        plus.data_mut()[i] = hi;
        minus.data_mut()[i] = lo;
        let numeric = (eval(plus)? - eval(minus)?) / (hi as f64 - lo as f64);
        let a = analytic.data()[i] as f64;
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

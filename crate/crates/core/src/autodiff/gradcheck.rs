use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Returns the maximum over all input components of
/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(mut f: F, inputs: &[Tensor]) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |f: &mut F, inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::Shape {
                op: "grad_check",
                lhs: tape.shape(out).to_vec(),
                rhs: vec![1],
            });
        }
        if v[0].is_nan() {
            return Err(Error::NanOutput);
        }
        Ok(v[0])
    };

    let mut inputs: Vec<Tensor> = inputs
        .iter()
        .map(|t| t.clone().with_requires_grad(true))
        .collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).iter().any(|x| x.is_nan()) {
        return Err(Error::NanOutput);
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.numel()))
        .collect();

    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            inputs[i].data_mut()[j] = orig + GRAD_CHECK_STEP;
            let up = eval(&mut f, &inputs)?;
            inputs[i].data_mut()[j] = orig - GRAD_CHECK_STEP;
            let down = eval(&mut f, &inputs)?;
            inputs[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
            let a = analytic[i][j];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

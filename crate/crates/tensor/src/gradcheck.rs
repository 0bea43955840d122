//! Central finite-difference verification of tape gradients (64-bit).

use crate::{Result, Tape, Tensor, Var};

/// Default central-difference step.
pub const STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so that gradient entries that
/// are zero up to round-off are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Builds a scalar loss from leaf handles, one per input tensor.
pub trait LossFn: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>> LossFn for F {}

/// Value and tape gradient of `build` w.r.t. every input.
pub fn analytic(inputs: &[Tensor<f64>], build: &impl LossFn) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut tape, &vars)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let out = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((value, out))
}

/// Central-difference gradient of `build` w.r.t. every input element.
pub fn numeric(inputs: &[Tensor<f64>], build: &impl LossFn, h: f64) -> Result<Vec<Tensor<f64>>> {
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = xs
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest elementwise `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn max_relative_error(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Worst relative error between tape and finite-difference gradients.
pub fn check(inputs: &[Tensor<f64>], build: &impl LossFn) -> Result<f64> {
    let (_, a) = analytic(inputs, build)?;
    let n = numeric(inputs, build, STEP)?;
    Ok(max_relative_error(&a, &n))
}

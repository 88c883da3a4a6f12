//! Central finite-difference checks of reverse-mode gradients at 64-bit.

use std::fmt::Debug;

use super::{Tape, Tensor, Var};

/// Step used by the central differences.
pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-3)`; the floor keeps near-zero gradients
/// from turning rounding noise into large relative errors.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn eval<E: Debug>(f: &impl Fn(&Tape<f64>, &[Var]) -> Result<Var, E>, inputs: &[Tensor<f64>]) -> f64 {
    let tape = Tape::no_grad();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).expect("finite input")).collect();
    let out = f(&tape, &vars).expect("graph evaluates");
    tape.item(out).expect("scalar output")
}

/// Largest relative error over the listed `(input, element)` coordinates.
pub fn max_rel_error_at<E: Debug>(
    f: impl Fn(&Tape<f64>, &[Var]) -> Result<Var, E>,
    inputs: &[Tensor<f64>],
    coords: &[(usize, usize)],
) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).expect("finite input")).collect();
    let out = f(&tape, &vars).expect("graph evaluates");
    let grads = tape.backward(out).expect("scalar output");
    let mut worst = 0.0f64;
    let mut shifted = inputs.to_vec();
    for &(k, i) in coords {
        let x = inputs[k].data()[i];
        shifted[k].data_mut()[i] = x + FD_STEP;
        let plus = eval(&f, &shifted);
        shifted[k].data_mut()[i] = x - FD_STEP;
        let minus = eval(&f, &shifted);
        shifted[k].data_mut()[i] = x;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic = grads.get(vars[k]).map_or(0.0, |g| g.data()[i]);
        worst = worst.max(rel_error(analytic, numeric));
    }
    worst
}

/// Largest relative error over every element of every input.
pub fn max_rel_error<E: Debug>(f: impl Fn(&Tape<f64>, &[Var]) -> Result<Var, E>, inputs: &[Tensor<f64>]) -> f64 {
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.len()).map(move |i| (k, i)))
        .collect();
    max_rel_error_at(f, inputs, &coords)
}

//! Numerical differentiation checks against the tape.

use alloc::vec::Vec;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::linalg::norm64;

/// Relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm64(a).max(norm64(b));
    if scale == 0.0 {
        0.0
    } else {
        norm64(&diff) / scale
    }
}

fn forward<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::NonScalarLoss(tape.dims(out).into()));
    }
    Ok(tape.data(out)[0] as f64)
}

/// Compares the reverse-mode gradient of the scalar built by `f` with central
/// differences of step `h`, input by input. Returns the largest relative error.
pub fn gradient_check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone().with_grad())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match tape.grad(*v) {
            Some(g) => g.iter().map(|&x| x as f64).collect(),
            None => alloc::vec![0.0; inputs[k].numel()],
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut probe = inputs.to_vec();
        for i in 0..inputs[k].numel() {
            let x0 = inputs[k].data[i];
            probe[k].data[i] = (x0 as f64 + h) as f32;
            let up = forward(&probe, &f)?;
            let hp = probe[k].data[i] as f64 - x0 as f64;
            probe[k].data[i] = (x0 as f64 - h) as f32;
            let down = forward(&probe, &f)?;
            let hm = x0 as f64 - probe[k].data[i] as f64;
            probe[k].data[i] = x0;
            numeric.push((up - down) / (hp + hm));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// `|⟨J v, u⟩ − ⟨v, Jᵀ u⟩|` relative to the larger magnitude, for the map from
/// `input` to `output` recorded on `tape`.
pub fn adjoint_gap(tape: &Tape, input: Var, output: Var, u: &[f32], v: &[f32]) -> Result<f64> {
    let jv = tape.jvp(&[(input, v)], output)?;
    let jtu = tape.vjp(output, u, &[input])?.pop().unwrap_or_default();
    let lhs: f64 = jv.iter().zip(u).map(|(&a, &b)| a as f64 * b as f64).sum();
    let rhs: f64 = jtu.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    let scale = lhs.abs().max(rhs.abs());
    Ok(if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale })
}

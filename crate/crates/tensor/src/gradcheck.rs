//! Central finite-difference gradient checking for functions built on a
//! [`Tape`]. Independent of the backward implementations it checks.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Denominator floor for the relative error, so that gradients that are
    /// numerically zero are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, floor: 1e-3 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares tape gradients of the scalar `f(inputs)` against central
/// differences for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], cfg: GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::inference();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = tape.value(out).item();
        Ok(v)
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, worst_input: 0, worst_index: 0, checked: 0 };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape().to_vec()));
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + cfg.step;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - cfg.step;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            if rel > report.max_rel_error || report.checked == 0 {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst_input = k;
                    report.worst_index = i;
                }
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Random weighted sum `sum(w * x)` used to reduce non-scalar outputs so
/// every output element contributes a distinct cotangent.
pub fn project(tape: &Tape<f64>, x: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(x);
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let w = Tensor::from_fn(shape, |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    });
    let wv = tape.constant(w);
    let p = tape.mul(x, wv)?;
    Ok(tape.sum(p))
}

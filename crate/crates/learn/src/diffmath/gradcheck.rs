//! Central finite-difference oracle for tape gradients.

use super::{Tape, Tensor, Var};
use crate::Result;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Absolute floor under the relative tolerance, for entries whose true
/// gradient is zero.
pub const FD_ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|)` over
    /// entries above the absolute floor.
    pub max_rel_err: f64,
    /// `(input, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub passed: bool,
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against
/// central differences with step `step`.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, step: f64, rel_tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> =
        vars.iter().zip(inputs).map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        tape.value(loss).item()
    };

    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None, passed: true };
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + step;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x - step;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[i][j];
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            report.checked += 1;
            let ok = diff <= rel_tol * scale + FD_ABS_FLOOR;
            let rel = if diff <= FD_ABS_FLOOR { 0.0 } else { diff / scale.max(f64::MIN_POSITIVE) };
            if rel > report.max_rel_err || (!ok && report.passed) {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((i, j, a, numeric));
            }
            report.passed &= ok;
        }
    }
    Ok(report)
}

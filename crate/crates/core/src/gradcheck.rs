//! Central finite-difference checks of tape gradients.
//!
//! The relative error of one entry is `|analytic - numeric| / max(|analytic|,
//! |numeric|, floor)` with `floor = 1e-6 · max(1, |loss|)`, which keeps
//! roundoff in the loss difference from dominating entries whose true
//! gradient is zero.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(input index, flat entry index)` of the worst entry.
    pub worst: (usize, usize),
    pub entries: usize,
}

/// Compares the tape gradient of `f` with respect to every entry of every
/// input against `(f(x + eps) - f(x - eps)) / 2eps`.
pub fn check_gradients<'a, F>(inputs: &[Matrix], eps: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|m| tape.constant(m.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if tape.shape(out) != (1, 1) {
            return Err(Error::shape("gradcheck", tape.shape(out), (1, 1)));
        }
        Ok(tape.value(out).get(0, 0))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let f0 = tape.value(loss).get(0, 0);
    let floor = 1e-6 * f0.abs().max(1.0);
    let analytic: Vec<Matrix> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
    drop(tape);

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        entries: 0,
    };
    let mut xs: Vec<Matrix> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for e in 0..xs[i].len() {
            let orig = xs[i].as_slice()[e];
            xs[i].as_mut_slice()[e] = orig + eps;
            let plus = eval(&xs)?;
            xs[i].as_mut_slice()[e] = orig - eps;
            let minus = eval(&xs)?;
            xs[i].as_mut_slice()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.as_slice()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.entries += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (i, e);
            }
        }
    }
    Ok(report)
}

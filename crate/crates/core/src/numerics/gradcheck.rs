//! Central finite differences for checking analytic gradients.
//!
//! The finite-difference side only ever calls the forward function; it never
//! touches [`Tape::backward`](super::Tape::backward).

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Relative error with an absolute floor so that two tiny gradients that
/// agree to rounding noise do not blow up the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error seen over all checked coordinates.
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compares the tape gradient of `f` with central differences at step `eps`
/// for every coordinate of every input.
///
/// `f` builds a scalar on the tape from leaves created for `inputs`.
pub fn check<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for i in 0..inputs[which].numel() {
            let orig = inputs[which].data()[i];
            work[which].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[which].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            max_rel_err = max_rel_err.max(relative_error(analytic.data()[i], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        checked,
    })
}

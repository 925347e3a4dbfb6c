//! Finite-difference verification of tape gradients.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{GradError, Result};

/// Compare the tape gradient of a scalar-valued function against central
/// differences at one point.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)` over all
/// coordinates. The builder `f` must produce a scalar from a fresh tape and a
/// leaf for `point`; it is re-invoked for every probe.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&Tape, &Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, &vars[0]), std::slice::from_ref(point), step)
}

/// Multi-input form of [`grad_check`]: one leaf per entry of `points`, all
/// checked coordinate by coordinate.
pub fn grad_check_many<F>(f: F, points: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(GradError::contract("grad_check", "step must be positive"));
    }
    if points.is_empty() {
        return Err(GradError::contract("grad_check", "no points given"));
    }

    // Analytic pass.
    let tape = Tape::new();
    let vars: Vec<Var> = points
        .iter()
        .map(|p| tape.leaf(p, true))
        .collect::<Result<_>>()?;
    let loss = f(&tape, &vars)?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(points)
        .map(|(v, p)| {
            v.grad()
                .map(Tensor::into_data)
                .unwrap_or_else(|| vec![0.0; p.len()])
        })
        .collect();

    let eval = |pts: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = pts
            .iter()
            .map(|p| tape.leaf(p, false))
            .collect::<Result<_>>()?;
        f(&tape, &vars)?.scalar_value()
    };

    let mut probe: Vec<Tensor> = points.to_vec();
    let mut max_err = 0.0f64;
    for ti in 0..probe.len() {
        for i in 0..probe[ti].len() {
            let orig = probe[ti].data()[i];
            probe[ti].data_mut()[i] = orig + step;
            let fp = eval(&probe)?;
            probe[ti].data_mut()[i] = orig - step;
            let fm = eval(&probe)?;
            probe[ti].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[ti][i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

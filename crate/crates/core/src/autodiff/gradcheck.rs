//! Central-difference gradient checking in 64-bit.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

const REL_FLOOR: f64 = 1e-8;

fn eval<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    Ok(tape.value(loss).item())
}

/// Compares the tape's analytic gradient of the scalar program `f` against
/// central differences for every entry of every parameter.
///
/// The per-entry error is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "grad_check epsilon must be in (0, 1e-2], got {epsilon}"
        )));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument("grad_check parameters must be finite".into()));
    }

    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    let first = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    drop(tape);

    let second = eval(&f, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let mut work = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("parameter leaves always carry gradients");
        for j in 0..work[pi].numel() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + epsilon;
            let plus = eval(&f, &work)?;
            work[pi].data_mut()[j] = orig - epsilon;
            let minus = eval(&f, &work)?;
            work[pi].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.entries_checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((pi, j));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

use alloc::format;

use super::{Fault, Tape, Var};
use crate::array::Array;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so coordinates whose true
/// derivative is (near) zero are judged on absolute error.
const REL_FLOOR: f64 = 1e-3;

/// Outcome of comparing reverse-mode gradients with centered differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

/// Checks the gradient of the scalar function built by `f` at `point`.
///
/// `f` receives a fresh tape and the leaf holding the probe point and must
/// return a single-element output.
pub fn grad_check<F>(f: F, point: &Array, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_with_fault(None, f, point, step, tolerance)
}

#[doc(hidden)]
pub fn grad_check_with_fault<F>(
    fault: Option<Fault>,
    f: F,
    point: &Array,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::with_fault(fault);
    let x = tape.leaf(point.clone());
    let out = f(&mut tape, x)?;
    let base = tape
        .value(out)
        .item()
        .ok_or_else(|| Error::NonScalarOutput(tape.value(out).shape().into()))?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!(
            "function value {} at probe point",
            base
        )));
    }
    let analytic = tape.backward(out)?.wrt(x).clone();

    let eval = |p: Array| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.constant(p);
        let o = f(&mut t, v)?;
        Ok(t.value(o).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: analytic.data().first().copied().unwrap_or(0.0),
        numeric: 0.0,
        passed: true,
    };
    let mut first = true;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let (fp, fm) = (eval(plus)?, eval(minus)?);
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value while probing coordinate {}",
                i
            )));
        }
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic.data()[i];
        if !a.is_finite() {
            return Err(Error::NonFinite(format!(
                "analytic gradient at coordinate {}",
                i
            )));
        }
        let rel = libm::fabs(a - numeric) / libm::fabs(a).max(libm::fabs(numeric)).max(REL_FLOOR);
        if first || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
            first = false;
        }
    }
    report.passed = report.max_rel_error < tolerance;
    Ok(report)
}

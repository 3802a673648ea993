//! One small gradient-check fixture per differentiable primitive.
//!
//! Every operand of a case is checked in turn, with the other operands held
//! constant. Outputs are reduced to a scalar through a fixed random linear
//! projection so that rules which preserve sums (softmax, layer norm) are
//! still exercised.

use alloc::vec;
use alloc::vec::Vec;

use super::{grad_check_with_fault, Fault, GradCheckReport, Primitive, Tape, Var};
use crate::array::Array;
use crate::error::Result;
use crate::rng::{derive_seed, seeded, uniform_array};

type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

#[derive(Clone, Copy)]
pub struct GradCase {
    pub primitive: Primitive,
    /// Operand shapes and the interval their values are drawn from.
    pub operands: &'static [(&'static [usize], f64, f64)],
    build: Build,
}

impl core::fmt::Debug for GradCase {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("GradCase")
            .field("primitive", &self.primitive)
            .finish()
    }
}

const M34: &[usize] = &[3, 4];
const STD: f64 = 2.0;

macro_rules! case {
    ($p:ident, [$(($shape:expr, $lo:expr, $hi:expr)),+], $build:expr) => {
        GradCase { primitive: Primitive::$p, operands: &[$(($shape, $lo, $hi)),+], build: $build }
    };
}

/// Cases in the order of [`Primitive::DIFFERENTIABLE`].
pub fn primitive_cases() -> Vec<GradCase> {
    vec![
        case!(
            Matmul,
            [(&[3, 4], -STD, STD), (&[4, 2], -STD, STD)],
            |t, v| t.matmul(v[0], v[1])
        ),
        case!(Add, [(M34, -STD, STD), (M34, -STD, STD)], |t, v| t
            .add(v[0], v[1])),
        case!(Sub, [(M34, -STD, STD), (M34, -STD, STD)], |t, v| t
            .sub(v[0], v[1])),
        case!(Mul, [(M34, -STD, STD), (M34, -STD, STD)], |t, v| t
            .mul(v[0], v[1])),
        case!(Scale, [(M34, -STD, STD)], |t, v| Ok(t.scale(v[0], -1.7))),
        case!(AddScalar, [(M34, -STD, STD)], |t, v| Ok(
            t.add_scalar(v[0], 0.4)
        )),
        case!(Sum, [(M34, -STD, STD)], |t, v| t.sum(v[0], 1)),
        case!(Mean, [(M34, -STD, STD)], |t, v| t.mean(v[0], 0)),
        case!(SumAll, [(M34, -STD, STD)], |t, v| Ok(t.sum_all(v[0]))),
        case!(Softmax, [(M34, -STD, STD)], |t, v| t.softmax(v[0], 1)),
        case!(LogSoftmax, [(M34, -STD, STD)], |t, v| t
            .log_softmax(v[0], 0)),
        case!(Exp, [(M34, -STD, STD)], |t, v| Ok(t.exp(v[0]))),
        case!(Gelu, [(M34, -STD, STD)], |t, v| Ok(t.gelu(v[0]))),
        case!(Sigmoid, [(M34, -STD, STD)], |t, v| Ok(t.sigmoid(v[0]))),
        case!(Tanh, [(M34, -STD, STD)], |t, v| Ok(t.tanh(v[0]))),
        case!(
            SquaredError,
            [(M34, -STD, STD), (M34, -STD, STD)],
            |t, v| t.squared_error(v[0], v[1])
        ),
        case!(
            Concat,
            [(&[2, 3], -STD, STD), (&[2, 2], -STD, STD)],
            |t, v| t.concat(&[v[0], v[1]], 1)
        ),
        case!(Reshape, [(M34, -STD, STD)], |t, v| t.reshape(v[0], &[2, 6])),
        case!(Transpose, [(M34, -STD, STD)], |t, v| t.transpose(v[0])),
        // repeated rows check that gradients accumulate
        case!(GatherRows, [(&[4, 3], -STD, STD)], |t, v| t
            .gather_rows(v[0], &[2, 0, 2, 3])),
        case!(AddRow, [(M34, -STD, STD), (&[1, 4], -STD, STD)], |t, v| t
            .add_row(v[0], v[1])),
        case!(MulRow, [(M34, -STD, STD), (&[1, 4], -STD, STD)], |t, v| t
            .mul_row(v[0], v[1])),
        case!(MulCol, [(M34, -STD, STD), (&[3, 1], -STD, STD)], |t, v| t
            .mul_col(v[0], v[1])),
        // divisor kept away from zero
        case!(DivCol, [(M34, -STD, STD), (&[3, 1], 0.5, STD)], |t, v| t
            .div_col(v[0], v[1])),
        case!(Slice, [(&[3, 5], -STD, STD)], |t, v| t.slice(v[0], 1, 1, 4)),
        case!(LayerNorm, [(M34, -STD, STD)], |t, v| t
            .layer_norm(v[0], 1e-5)),
    ]
}

/// Reduces `y` to a scalar with fixed weights. Two disjoint routes exist so
/// that a fault injected into one of them never leaks into the projection.
fn project(t: &mut Tape, y: Var, weights: &Array, avoid: Option<Primitive>) -> Result<Var> {
    let n = t.value(y).len();
    if matches!(avoid, Some(Primitive::Matmul | Primitive::Reshape)) {
        let shape = t.shape(y).to_vec();
        let w = t.constant(weights.reshape(shape)?);
        let p = t.mul(y, w)?;
        Ok(t.sum_all(p))
    } else {
        let flat = t.reshape(y, &[1, n])?;
        let w = t.constant(weights.reshape([n, 1])?);
        let p = t.matmul(flat, w)?;
        t.reshape(p, &[])
    }
}

/// Worst grad-check report over all operands of `case` at inputs drawn
/// from `seed`.
pub fn check_case(
    case: &GradCase,
    seed: u64,
    fault: Option<Fault>,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut rng = seeded(derive_seed(seed, case.primitive.name()));
    let inputs: Vec<Array> = case
        .operands
        .iter()
        .map(|(shape, lo, hi)| uniform_array(&mut rng, shape, *lo, *hi))
        .collect();
    let out_len = {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| t.constant(a.clone())).collect();
        let y = (case.build)(&mut t, &vars)?;
        t.value(y).len()
    };
    let weights = uniform_array(&mut rng, &[out_len], -1.0, 1.0);
    let avoid = fault.map(|f| f.primitive);

    let mut worst: Option<GradCheckReport> = None;
    for wrt in 0..inputs.len() {
        let f = |t: &mut Tape, x: Var| {
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(i, a)| if i == wrt { x } else { t.constant(a.clone()) })
                .collect();
            let y = (case.build)(t, &vars)?;
            project(t, y, &weights, avoid)
        };
        let report = grad_check_with_fault(fault, f, &inputs[wrt], step, tolerance)?;
        if worst
            .as_ref()
            .is_none_or(|w| report.max_rel_error > w.max_rel_error)
        {
            worst = Some(report);
        }
    }
    Ok(worst.expect("every case has at least one operand"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_case_per_primitive_in_order() {
        let cases = primitive_cases();
        let prims: Vec<Primitive> = cases.iter().map(|c| c.primitive).collect();
        assert_eq!(prims, Primitive::DIFFERENTIABLE);
    }

    #[test]
    fn all_cases_pass() {
        for case in primitive_cases() {
            let r = check_case(&case, 0, None, 1e-4, 1e-4).unwrap();
            assert!(r.passed, "{}: {:?}", case.primitive.name(), r);
        }
    }

    #[test]
    fn fault_fails_only_its_own_case() {
        for p in [
            Primitive::Matmul,
            Primitive::Softmax,
            Primitive::Reshape,
            Primitive::DivCol,
        ] {
            let fault = Fault {
                primitive: p,
                factor: 2.0,
            };
            for case in primitive_cases() {
                let r = check_case(&case, 3, Some(fault), 1e-4, 1e-4).unwrap();
                assert_eq!(
                    r.passed,
                    case.primitive != p,
                    "fault {} case {}",
                    p.name(),
                    case.primitive.name()
                );
            }
        }
    }
}

//! Per-slot relevance of a predicted answer.
//!
//! Scores are the norm of the derivative of the answer's output with respect
//! to each slot vector (plain gradients, integrated gradients, or centered
//! finite differences as an independent reference), and [`topk_slots`]
//! picks the slots that are most responsible for the answer.

use alloc::format;
use alloc::vec::Vec;

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Anything that maps a `k x d` slot matrix to a row of answer logits.
pub trait SlotModel {
    fn logits(&self, tape: &mut Tape, slots: Var) -> Result<Var>;
}

impl<F> SlotModel for F
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn logits(&self, tape: &mut Tape, slots: Var) -> Result<Var> {
        self(tape, slots)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum AttributionMethod {
    Grad,
    IntegratedGrad,
    FiniteDiff,
}

impl AttributionMethod {
    pub fn name(self) -> &'static str {
        match self {
            AttributionMethod::Grad => "grad",
            AttributionMethod::IntegratedGrad => "integrated-grad",
            AttributionMethod::FiniteDiff => "finite-diff",
        }
    }
}

/// What is differentiated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum AttributionTarget {
    /// The logit of the target answer.
    #[default]
    Logit,
    /// Cross-entropy of the logits against the target answer.
    Loss,
}

/// How a slot's gradient vector is collapsed to one score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Reduction {
    #[default]
    L2,
    AbsSum,
}

impl Reduction {
    fn apply(self, row: &[f64]) -> f64 {
        match self {
            Reduction::L2 => libm::sqrt(row.iter().map(|v| v * v).sum()),
            Reduction::AbsSum => row.iter().map(|v| libm::fabs(*v)).sum(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AttributionOptions {
    pub target: AttributionTarget,
    pub reduction: Reduction,
}

/// One non-negative score per slot.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttributionVector {
    pub method: AttributionMethod,
    pub scores: Vec<f64>,
}

impl AttributionVector {
    pub fn new(method: AttributionMethod, scores: Vec<f64>) -> Result<Self> {
        if let Some((i, s)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || **s < 0.0)
        {
            return Err(Error::InvalidConfig(format!(
                "attribution score {} for slot {} must be finite and non-negative",
                s, i
            )));
        }
        Ok(Self { method, scores })
    }

    pub fn zeros(method: AttributionMethod, k: usize) -> Self {
        Self {
            method,
            scores: alloc::vec![0.0; k],
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Indices of the `k` top-scoring slots, ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopKSelection {
    pub indices: Vec<usize>,
    pub k: usize,
}

/// Selects the `k` slots with the highest scores, preferring lower slot
/// indices among equal scores. `k` larger than the number of slots is
/// clamped.
pub fn topk_slots(attr: &AttributionVector, k: usize) -> Result<TopKSelection> {
    if attr.is_empty() {
        return Err(Error::Empty("attribution"));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("top-k selection needs k >= 1".into()));
    }
    let k = if k > attr.len() {
        log::warn!(
            "{} grounding objects but only {} slots; selecting all slots",
            k,
            attr.len()
        );
        attr.len()
    } else {
        k
    };
    let mut order: Vec<usize> = (0..attr.len()).collect();
    order.sort_by(|&a, &b| attr.scores[b].total_cmp(&attr.scores[a]).then(a.cmp(&b)));
    let mut indices = order[..k].to_vec();
    indices.sort_unstable();
    Ok(TopKSelection { indices, k })
}

fn scalar_output(
    tape: &mut Tape,
    logits: Var,
    target: usize,
    kind: AttributionTarget,
) -> Result<Var> {
    let n = tape.value(logits).len();
    if target >= n {
        return Err(Error::InvalidConfig(format!(
            "target answer {} outside {} logits",
            target, n
        )));
    }
    match kind {
        AttributionTarget::Logit => tape.pick(logits, target),
        AttributionTarget::Loss => {
            let flat = tape.reshape(logits, &[n])?;
            let logp = tape.log_softmax(flat, 0)?;
            let picked = tape.pick(logp, target)?;
            Ok(tape.scale(picked, -1.0))
        }
    }
}

/// Gradient of the target output with respect to every slot coordinate.
pub fn slot_gradient(
    model: &impl SlotModel,
    slots: &Array,
    target: usize,
    kind: AttributionTarget,
) -> Result<Array> {
    slots.expect2("slot_gradient")?;
    let mut tape = Tape::new();
    let s = tape.leaf(slots.clone());
    let logits = model.logits(&mut tape, s)?;
    let y = scalar_output(&mut tape, logits, target, kind)?;
    let grads = tape.backward(y)?;
    Ok(grads.wrt(s).clone())
}

/// Value of the target output at `slots`.
pub fn target_output(
    model: &impl SlotModel,
    slots: &Array,
    target: usize,
    kind: AttributionTarget,
) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(slots.clone());
    let logits = model.logits(&mut tape, s)?;
    let y = scalar_output(&mut tape, logits, target, kind)?;
    Ok(tape.value(y).data()[0])
}

fn collapse(
    method: AttributionMethod,
    per_coord: &Array,
    reduction: Reduction,
) -> Result<AttributionVector> {
    let (k, _) = per_coord.expect2("attribution")?;
    let mut scores = Vec::with_capacity(k);
    for i in 0..k {
        let row = per_coord.row(i);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "attribution gradient for slot {}",
                i
            )));
        }
        scores.push(reduction.apply(row));
    }
    AttributionVector::new(method, scores)
}

/// Gradient sensitivity of the target output to each slot.
pub fn grad_attribution(
    model: &impl SlotModel,
    slots: &Array,
    target: usize,
    options: AttributionOptions,
) -> Result<AttributionVector> {
    let g = slot_gradient(model, slots, target, options.target)?;
    collapse(AttributionMethod::Grad, &g, options.reduction)
}

/// Signed integrated-gradients attributions per slot coordinate:
/// `(s - b) * mean_m grad(b + a_m (s - b))` with midpoints `a_m = (m + 1/2) / steps`.
pub fn integrated_gradients_raw(
    model: &impl SlotModel,
    slots: &Array,
    target: usize,
    steps: usize,
    baseline: &Array,
    kind: AttributionTarget,
) -> Result<Array> {
    if steps < 2 {
        return Err(Error::InvalidConfig(format!(
            "integrated gradients needs steps >= 2, got {}",
            steps
        )));
    }
    if slots.shape() != baseline.shape() {
        return Err(Error::shape(
            "integrated_gradients",
            format!(
                "slots {:?} vs baseline {:?}",
                slots.shape(),
                baseline.shape()
            ),
        ));
    }
    let delta = slots.zip_map(baseline, |s, b| s - b);
    let mut total = Array::zeros(slots.shape().to_vec());
    for m in 0..steps {
        let alpha = (m as f64 + 0.5) / steps as f64;
        let point = baseline.zip_map(&delta, |b, d| b + alpha * d);
        let g = slot_gradient(model, &point, target, kind)?;
        total.add_assign(&g);
    }
    let inv = 1.0 / steps as f64;
    Ok(delta.zip_map(&total, |d, g| d * g * inv))
}

pub fn integrated_gradients(
    model: &impl SlotModel,
    slots: &Array,
    target: usize,
    steps: usize,
    baseline: &Array,
    options: AttributionOptions,
) -> Result<AttributionVector> {
    let raw = integrated_gradients_raw(model, slots, target, steps, baseline, options.target)?;
    collapse(AttributionMethod::IntegratedGrad, &raw, options.reduction)
}

/// Centered finite-difference sensitivity. Independent of the backward
/// pass, so it serves as a reference for [`grad_attribution`].
pub fn finite_difference_attribution(
    model: &impl SlotModel,
    slots: &Array,
    target: usize,
    step: f64,
    options: AttributionOptions,
) -> Result<AttributionVector> {
    slots.expect2("finite_difference_attribution")?;
    let mut grad = Array::zeros(slots.shape().to_vec());
    for i in 0..slots.len() {
        let mut plus = slots.clone();
        plus.data_mut()[i] += step;
        let mut minus = slots.clone();
        minus.data_mut()[i] -= step;
        let fp = target_output(model, &plus, target, options.target)?;
        let fm = target_output(model, &minus, target, options.target)?;
        grad.data_mut()[i] = (fp - fm) / (2.0 * step);
    }
    collapse(AttributionMethod::FiniteDiff, &grad, options.reduction)
}

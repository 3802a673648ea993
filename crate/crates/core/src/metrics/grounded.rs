use alloc::string::String;
use alloc::vec::Vec;

use super::mask::MaskSet;
use super::overlap::{iou, mbo, miou_matched};
use crate::attribution::{topk_slots, AttributionVector};
use crate::error::{Error, Result};

/// How the localization term of grounded accuracy compares slot masks
/// with the grounding masks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Eq1Mode {
    /// Mean over grounding objects of the best IoU with any single slot mask.
    #[default]
    BestOverlap,
    /// IoU between the union of all slot masks and the union of the grounding masks.
    Union,
}

impl Eq1Mode {
    pub fn name(self) -> &'static str {
        match self {
            Eq1Mode::BestOverlap => "best-overlap",
            Eq1Mode::Union => "union",
        }
    }
}

/// One evaluated question.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub id: String,
    pub predicted: usize,
    pub truth: usize,
    pub predicted_masks: MaskSet,
    pub grounding: MaskSet,
    pub attribution: Option<AttributionVector>,
}

impl EvalSample {
    pub fn correct(&self) -> bool {
        self.predicted == self.truth
    }

    /// Number of grounding objects, clamped to the number of slots.
    pub fn k(&self) -> usize {
        self.grounding.len().min(self.predicted_masks.len())
    }
}

/// Localization term of grounded accuracy for one sample (ignores correctness).
pub fn grounding_score(sample: &EvalSample, mode: Eq1Mode) -> Result<f64> {
    match mode {
        Eq1Mode::BestOverlap => mbo(&sample.predicted_masks, &sample.grounding),
        Eq1Mode::Union => {
            if sample.grounding.is_empty() {
                return Err(Error::Empty("ground-truth masks"));
            }
            iou(
                &sample.predicted_masks.union_all()?,
                &sample.grounding.union_all()?,
            )
        }
    }
}

/// IoU between the union of the top-K attributed slot masks and the union
/// of the grounding masks, with the selected slot indices.
pub fn attributed_overlap(sample: &EvalSample) -> Result<(f64, Vec<usize>)> {
    let attr = sample
        .attribution
        .as_ref()
        .ok_or_else(|| Error::MissingAttribution(sample.id.clone()))?;
    if attr.len() != sample.predicted_masks.len() {
        return Err(Error::shape(
            "awga",
            alloc::format!(
                "sample {}: {} attribution scores for {} slot masks",
                sample.id,
                attr.len(),
                sample.predicted_masks.len()
            ),
        ));
    }
    if sample.grounding.is_empty() {
        return Err(Error::Empty("ground-truth masks"));
    }
    let selection = topk_slots(attr, sample.grounding.len())?;
    let selected = sample
        .predicted_masks
        .union_of(selection.indices.iter().copied())?;
    let score = iou(&selected, &sample.grounding.union_all()?)?;
    Ok((score, selection.indices))
}

/// Fraction of exact-match answers; 0 for an empty batch.
pub fn accuracy(batch: &[EvalSample]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().filter(|s| s.correct()).count() as f64 / batch.len() as f64
}

fn indicator(sample: &EvalSample) -> f64 {
    if sample.correct() {
        1.0
    } else {
        0.0
    }
}

/// Grounded accuracy: answer correctness times the localization term.
pub fn g_acc(batch: &[EvalSample], mode: Eq1Mode) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("evaluation batch"));
    }
    let mut total = 0.0;
    for s in batch {
        total += indicator(s) * grounding_score(s, mode)?;
    }
    Ok(total / batch.len() as f64)
}

/// Attribution-aware grounded accuracy.
pub fn awga(batch: &[EvalSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("evaluation batch"));
    }
    let mut total = 0.0;
    for s in batch {
        total += indicator(s) * attributed_overlap(s)?.0;
    }
    Ok(total / batch.len() as f64)
}

/// Per-sample values behind a [`MetricReport`].
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceRow {
    pub sample_id: String,
    pub correct: bool,
    pub miou: f64,
    pub mbo: f64,
    pub grounding_score: f64,
    pub g_acc: f64,
    pub awga: f64,
    pub selected_slots: Vec<usize>,
}

/// Aggregate metrics; every aggregate is the mean of its trace column.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub samples: usize,
    pub accuracy: f64,
    pub miou: f64,
    pub mbo: f64,
    pub g_acc: f64,
    pub awga: f64,
    pub eq1_mode: Eq1Mode,
    pub traces: Vec<TraceRow>,
}

/// Scores every sample and aggregates in sample-id order, so the result does
/// not depend on the order of `batch`.
pub fn evaluate(batch: &[EvalSample], mode: Eq1Mode) -> Result<MetricReport> {
    let mut traces = batch
        .iter()
        .map(|s| trace_row(s, mode))
        .collect::<Result<Vec<_>>>()?;
    traces.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(aggregate(traces, mode))
}

pub fn trace_row(s: &EvalSample, mode: Eq1Mode) -> Result<TraceRow> {
    let ind = indicator(s);
    let grounding = grounding_score(s, mode)?;
    let (overlap, selected) = attributed_overlap(s)?;
    Ok(TraceRow {
        sample_id: s.id.clone(),
        correct: s.correct(),
        miou: miou_matched(&s.predicted_masks, &s.grounding)?,
        mbo: mbo(&s.predicted_masks, &s.grounding)?,
        grounding_score: grounding,
        g_acc: ind * grounding,
        awga: ind * overlap,
        selected_slots: selected,
    })
}

/// Means of the trace columns, summed in the given row order.
pub fn aggregate(traces: Vec<TraceRow>, mode: Eq1Mode) -> MetricReport {
    let n = traces.len();
    let mean = |f: &dyn Fn(&TraceRow) -> f64| {
        if n == 0 {
            0.0
        } else {
            traces.iter().map(f).sum::<f64>() / n as f64
        }
    };
    MetricReport {
        samples: n,
        accuracy: mean(&|t| if t.correct { 1.0 } else { 0.0 }),
        miou: mean(&|t| t.miou),
        mbo: mean(&|t| t.mbo),
        g_acc: mean(&|t| t.g_acc),
        awga: mean(&|t| t.awga),
        eq1_mode: mode,
        traces,
    }
}

//! `predictions.jsonl`: one evaluated question per line.

use std::collections::BTreeMap;
use std::path::Path;

use oclbench_core::attribution::{AttributionMethod, AttributionVector};
use oclbench_core::data::{QaRecord, RleMask};
use oclbench_core::metrics::{EvalSample, MaskRole, MaskSet};
use oclbench_core::probe::Vocab;
use serde::{Deserialize, Serialize};

use super::dataset::grounding_masks;
use super::read_jsonl;
use crate::error::{CliError, Result};

const FIELDS: &[&str] = &[
    "question_id",
    "predicted_answer",
    "slot_masks",
    "attribution",
    "fingerprint",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionJson {
    pub method: AttributionMethod,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub question_id: String,
    pub predicted_answer: String,
    pub slot_masks: Vec<RleMask>,
    pub attribution: AttributionJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
}

/// A validated prediction and its 1-based line number.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub line: usize,
    pub question_id: String,
    pub predicted_answer: String,
    pub slot_masks: MaskSet,
    pub attribution: AttributionVector,
}

/// Reads and validates a predictions file. An empty file is an empty batch.
pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (line, p) in read_jsonl::<PredictionLine>(path, FIELDS)? {
        let err = |detail: String| CliError::Format {
            path: path.into(),
            line,
            detail,
        };
        if p.slot_masks.is_empty() {
            return Err(err("slot_masks is empty".into()));
        }
        let masks = p
            .slot_masks
            .iter()
            .map(RleMask::decode)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| err(e.to_string()))?;
        let slot_masks =
            MaskSet::new(masks, MaskRole::PredictedSlots).map_err(|e| err(e.to_string()))?;
        if p.attribution.scores.len() != slot_masks.len() {
            return Err(err(format!(
                "{} attribution scores for {} slot masks",
                p.attribution.scores.len(),
                slot_masks.len()
            )));
        }
        let attribution = AttributionVector::new(p.attribution.method, p.attribution.scores)
            .map_err(|e| err(e.to_string()))?;
        out.push(Prediction {
            line,
            question_id: p.question_id,
            predicted_answer: p.predicted_answer,
            slot_masks,
            attribution,
        });
    }
    Ok(out)
}

/// Evaluation samples plus the number of questions whose grounding masks
/// were approximated from boxes.
#[derive(Clone, Debug)]
pub struct JoinedSamples {
    pub samples: Vec<EvalSample>,
    pub approximated: usize,
}

/// Pairs predictions with their dataset records. Answers must belong to
/// `answers`; every prediction must name a known question.
pub fn join(
    path: &Path,
    predictions: Vec<Prediction>,
    records: &[QaRecord],
    answers: &Vocab,
) -> Result<JoinedSamples> {
    let by_id: BTreeMap<&str, &QaRecord> = records
        .iter()
        .map(|r| (r.question_id.as_str(), r))
        .collect();
    let mut samples = Vec::with_capacity(predictions.len());
    let mut approximated = 0;
    for p in predictions {
        let err = |detail: String| CliError::Format {
            path: path.into(),
            line: p.line,
            detail,
        };
        let record = by_id
            .get(p.question_id.as_str())
            .ok_or_else(|| err(format!("unknown question {:?}", p.question_id)))?;
        let predicted = answers.index(&p.predicted_answer).ok_or_else(|| {
            err(format!(
                "predicted answer {:?} is not in the answer vocabulary",
                p.predicted_answer
            ))
        })?;
        let truth = answers.index(&record.answer).ok_or_else(|| {
            err(format!(
                "ground-truth answer {:?} is not in the answer vocabulary",
                record.answer
            ))
        })?;
        let (masks, approx) = grounding_masks(record)?;
        approximated += usize::from(approx);
        if p.slot_masks.grid() != Some(record.image_size) {
            return Err(err(format!(
                "slot masks on {:?}, image is {:?}",
                p.slot_masks.grid(),
                record.image_size
            )));
        }
        samples.push(EvalSample {
            id: p.question_id,
            predicted,
            truth,
            predicted_masks: p.slot_masks,
            grounding: MaskSet::new(masks, MaskRole::Grounding)?,
            attribution: Some(p.attribution),
        });
    }
    Ok(JoinedSamples {
        samples,
        approximated,
    })
}

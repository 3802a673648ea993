use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use oclbench_core::attribution::{
    finite_difference_attribution, grad_attribution, integrated_gradients, AttributionMethod,
    AttributionOptions, AttributionTarget, AttributionVector, Reduction, SlotModel,
};
use oclbench_core::data::RleMask;
use oclbench_core::metrics::{Eq1Mode, MaskSet};
use oclbench_core::mfresa::{self, MaskSource, MfresaModel};
use oclbench_core::probe::{predict, Probe};
use oclbench_core::rng::derive_seed;
use oclbench_core::Array;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::report::{score, write_report, AttributionInfo, ReportFile, REPORT_FORMAT};
use super::train::image_targets;
use crate::cli::EvalArgs;
use crate::config::resolve;
use crate::error::{CliError, Result};
use crate::fingerprint::{file_digest, fingerprint};
use crate::formats::checkpoint::{load_ocl, load_probe};
use crate::formats::dataset::{load_dataset, Dataset};
use crate::formats::predictions::{join, load_predictions, AttributionJson, PredictionLine};
use crate::formats::{jsonl_bytes, write_bytes};

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";

/// Central-difference step of the finite-difference attribution.
pub const FINITE_DIFF_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttrChoice {
    Grad,
    Integrated,
    FiniteDiff,
}

impl AttrChoice {
    pub fn method(self) -> AttributionMethod {
        match self {
            AttrChoice::Grad => AttributionMethod::Grad,
            AttrChoice::Integrated => AttributionMethod::IntegratedGrad,
            AttrChoice::FiniteDiff => AttributionMethod::FiniteDiff,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub seed: u64,
    pub blind: bool,
    pub attr: AttrChoice,
    pub ig_steps: usize,
    pub attr_target: AttributionTarget,
    pub attr_reduce: Reduction,
    pub mask_source: MaskSource,
    pub eq1_mode: Eq1Mode,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            blind: false,
            attr: AttrChoice::Grad,
            ig_steps: 64,
            attr_target: AttributionTarget::Logit,
            attr_reduce: Reduction::L2,
            mask_source: MaskSource::Attention,
            eq1_mode: Eq1Mode::BestOverlap,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub out: PathBuf,
    pub report: ReportFile,
}

pub struct EvalInputs<'a> {
    pub dataset: &'a Dataset,
    pub model: &'a MfresaModel,
    pub probe: &'a Probe,
    /// Digests by role, folded into the fingerprint.
    pub digests: BTreeMap<String, String>,
}

pub fn run(args: &EvalArgs, file: Option<&Value>) -> Result<EvalSummary> {
    let settings = resolve(&EvalSettings::default(), file, args)?;
    let dataset = load_dataset(&args.data)?;
    let (model, _) = load_ocl(&args.ocl)?;
    let (probe, _) = load_probe(&args.probe)?;
    let digests = BTreeMap::from([
        ("dataset".to_string(), dataset.digest.clone()),
        ("ocl".to_string(), file_digest(&args.ocl)?),
        ("probe".to_string(), file_digest(&args.probe)?),
    ]);
    evaluate_run(
        &settings,
        &EvalInputs {
            dataset: &dataset,
            model: &model,
            probe: &probe,
            digests,
        },
        &args.out,
        args.jobs,
    )
}

fn attribute(
    model: &impl SlotModel,
    slots: &Array,
    target: usize,
    s: &EvalSettings,
) -> Result<AttributionVector> {
    let options = AttributionOptions {
        target: s.attr_target,
        reduction: s.attr_reduce,
    };
    let v = match s.attr {
        AttrChoice::Grad => grad_attribution(model, slots, target, options)?,
        AttrChoice::Integrated => {
            let baseline = Array::zeros(slots.shape().to_vec());
            integrated_gradients(model, slots, target, s.ig_steps, &baseline, options)?
        }
        AttrChoice::FiniteDiff => {
            finite_difference_attribution(model, slots, target, FINITE_DIFF_STEP, options)?
        }
    };
    Ok(v)
}

/// Runs the model over every question, writes predictions and reports to
/// `out`. Results do not depend on `jobs`.
pub fn evaluate_run(
    settings: &EvalSettings,
    inputs: &EvalInputs,
    out: &Path,
    jobs: usize,
) -> Result<EvalSummary> {
    let EvalInputs {
        dataset,
        model,
        probe,
        ..
    } = *inputs;
    if (probe.config.k, probe.config.d_slot) != (model.config.slot.k, model.config.slot.d_slot) {
        return Err(CliError::Usage(format!(
            "probe expects {} slots of width {}, the slot model produces {} of width {}",
            probe.config.k, probe.config.d_slot, model.config.slot.k, model.config.slot.d_slot
        )));
    }
    if settings.attr == AttrChoice::Integrated && settings.ig_steps < 2 {
        return Err(CliError::Usage(format!(
            "--ig-steps must be at least 2, got {}",
            settings.ig_steps
        )));
    }
    let fp = fingerprint(
        "eval",
        settings,
        &inputs
            .digests
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect::<Vec<_>>(),
    );

    let ids = dataset.image_ids();
    let targets = image_targets(model, dataset, &ids, jobs)?;
    let pool = super::pool(jobs)?;
    let items: Vec<(&String, &mfresa::Targets)> = targets.iter().collect();
    let per_image: Vec<Result<(String, (Array, MaskSet))>> = pool.install(|| {
        items
            .par_iter()
            .map(|(id, t)| {
                let inference = mfresa::infer(model, t, derive_seed(settings.seed, id))?;
                let masks = mfresa::pixel_masks(model, &inference, settings.mask_source)?;
                Ok(((*id).clone(), (inference.slots, masks)))
            })
            .collect()
    });
    let per_image: BTreeMap<String, (Array, MaskSet)> =
        per_image.into_iter().collect::<Result<_>>()?;

    let lines: Vec<Result<PredictionLine>> = pool.install(|| {
        dataset
            .records
            .par_iter()
            .map(|r| {
                let (slots, masks) = &per_image[&r.image_id];
                let question = probe.encode(&r.question)?;
                let blind_seed = derive_seed(settings.seed, &format!("blind-{}", r.question_id));
                let (predicted, attribution) = if settings.blind {
                    let predicted = predict(&probe.blind_logits(&question, blind_seed)?);
                    (
                        predicted,
                        attribute(
                            &probe.blind_model(&question, blind_seed),
                            slots,
                            predicted,
                            settings,
                        )?,
                    )
                } else {
                    let predicted = predict(&probe.logits(slots, &question)?);
                    (
                        predicted,
                        attribute(&probe.model(&question), slots, predicted, settings)?,
                    )
                };
                Ok(PredictionLine {
                    question_id: r.question_id.clone(),
                    predicted_answer: probe
                        .answers
                        .word(predicted)
                        .expect("argmax is in range")
                        .to_string(),
                    slot_masks: masks.masks.iter().map(RleMask::encode).collect(),
                    attribution: AttributionJson {
                        method: attribution.method,
                        scores: attribution.scores,
                    },
                    fingerprint: Some(fp.clone()),
                })
            })
            .collect()
    });
    let lines = lines.into_iter().collect::<Result<Vec<_>>>()?;
    let predictions_path = out.join(PREDICTIONS_FILE);
    write_bytes(&predictions_path, &jsonl_bytes(&lines))?;

    // score what was written, so `metrics` on the same file agrees exactly
    let predictions = load_predictions(&predictions_path)?;
    let joined = join(
        &predictions_path,
        predictions,
        &dataset.records,
        &probe.answers,
    )?;
    let (aggregates, traces) = score(&joined.samples, settings.eq1_mode)?;
    let report = ReportFile {
        format: REPORT_FORMAT.into(),
        version: 1,
        command: "eval".into(),
        fingerprint: fp,
        settings: serde_json::to_value(settings).expect("settings serialize"),
        inputs: inputs.digests.clone(),
        blind: Some(settings.blind),
        attribution: Some(AttributionInfo {
            method: settings.attr.method(),
            steps: (settings.attr == AttrChoice::Integrated).then_some(settings.ig_steps),
            target: settings.attr_target,
            reduction: settings.attr_reduce,
        }),
        eq1_mode: settings.eq1_mode,
        approximated_grounding: joined.approximated,
        metrics: Some(aggregates),
        traces,
        spearman: None,
    };
    write_report(out, &report)?;
    log::info!("evaluated {} questions into {}", lines.len(), out.display());
    Ok(EvalSummary {
        out: out.to_path_buf(),
        report,
    })
}

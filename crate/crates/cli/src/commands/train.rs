use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use oclbench_core::mfresa::{
    self, DecoderFlags, LossTerms, MfresaConfig, MfresaModel, Targets, TrainConfig,
};
use oclbench_core::nn::AdamConfig;
use oclbench_core::probe::{
    train_probe, HeadKind, Probe, ProbeConfig, ProbeExample, ProbeTrainConfig, Vocab,
};
use oclbench_core::rng::derive_seed;
use oclbench_core::slot_attention::SlotConfig;
use oclbench_core::Array;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cli::TrainArgs;
use crate::config::resolve;
use crate::error::{CliError, Result};
use crate::fingerprint::fingerprint;
use crate::formats::checkpoint::{save_ocl, save_probe};
use crate::formats::dataset::{load_dataset, Dataset};
use crate::formats::write_bytes;

pub const OCL_FILE: &str = "ocl.json";
pub const PROBE_FILE: &str = "probe.json";
pub const OCL_CURVE_FILE: &str = "ocl_loss.csv";
pub const PROBE_CURVE_FILE: &str = "probe_loss.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub decoders: String,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch: usize,
    pub warmup: usize,
    pub patch: usize,
    pub d_enc: usize,
    pub encoder_positions: bool,
    pub k: usize,
    pub d_slot: usize,
    pub iterations: usize,
    pub slot_mlp_hidden: usize,
    pub decoder_hidden: usize,
    pub teacher_hidden: usize,
    pub teacher_dim: usize,
    pub hog_bins: usize,
    pub probe_steps: usize,
    pub probe_lr: f64,
    pub probe_batch: usize,
    pub connector_depth: usize,
    pub connector_hidden: usize,
    pub d_model: usize,
    pub head: HeadKind,
    pub connector_fraction: f64,
    pub probe_blind: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let m = MfresaConfig::default();
        let t = TrainConfig::default();
        let p = ProbeConfig::default();
        let pt = ProbeTrainConfig::default();
        Self {
            decoders: m.decoders.names(),
            steps: t.steps,
            lr: t.adam.learning_rate,
            seed: t.seed,
            batch: t.batch_size,
            warmup: t.warmup,
            patch: m.patch,
            d_enc: m.d_enc,
            encoder_positions: m.encoder_positions,
            k: m.slot.k,
            d_slot: m.slot.d_slot,
            iterations: m.slot.iterations,
            slot_mlp_hidden: m.slot.mlp_hidden,
            decoder_hidden: m.decoder_hidden,
            teacher_hidden: m.teacher_hidden,
            teacher_dim: m.teacher_dim,
            hog_bins: m.hog_bins,
            probe_steps: pt.steps,
            probe_lr: pt.adam.learning_rate,
            probe_batch: pt.batch_size,
            connector_depth: p.connector_depth,
            connector_hidden: p.connector_hidden,
            d_model: p.d_model,
            head: p.head,
            connector_fraction: pt.connector_fraction,
            probe_blind: pt.blind,
        }
    }
}

impl TrainSettings {
    pub fn model_config(&self, rows: usize, cols: usize) -> Result<MfresaConfig> {
        let config = MfresaConfig {
            rows,
            cols,
            patch: self.patch,
            d_enc: self.d_enc,
            encoder_positions: self.encoder_positions,
            slot: SlotConfig {
                k: self.k,
                d_slot: self.d_slot,
                iterations: self.iterations,
                mlp_hidden: self.slot_mlp_hidden,
                ..SlotConfig::default()
            },
            teacher_hidden: self.teacher_hidden,
            teacher_dim: self.teacher_dim,
            decoder_hidden: self.decoder_hidden,
            hog_bins: self.hog_bins,
            decoders: DecoderFlags::parse(&self.decoders)
                .map_err(|e| CliError::Usage(e.to_string()))?,
            ..MfresaConfig::default()
        };
        config
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch,
            seed: self.seed,
            adam: AdamConfig {
                learning_rate: self.lr,
                ..AdamConfig::default()
            },
            warmup: self.warmup,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            k: self.k,
            d_slot: self.d_slot,
            connector_depth: self.connector_depth,
            connector_hidden: self.connector_hidden,
            d_model: self.d_model,
            head: self.head,
        }
    }

    pub fn probe_train_config(&self) -> ProbeTrainConfig {
        ProbeTrainConfig {
            steps: self.probe_steps,
            batch_size: self.probe_batch,
            seed: derive_seed(self.seed, "probe"),
            connector_fraction: self.connector_fraction,
            blind: self.probe_blind,
            adam: AdamConfig {
                learning_rate: self.probe_lr,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub fingerprint: String,
    pub ocl_curve: Vec<LossTerms>,
    pub probe_curve: Vec<f64>,
}

pub fn run(args: &TrainArgs, file: Option<&Value>) -> Result<TrainSummary> {
    let settings = resolve(&TrainSettings::default(), file, args)?;
    let dataset = load_dataset(&args.data)?;
    train_all(&settings, &dataset, &args.out, args.jobs)
}

/// Per-image targets for every image of the dataset, in first-appearance
/// order. All images must share one size.
pub fn image_targets(
    model: &MfresaModel,
    dataset: &Dataset,
    ids: &[String],
    jobs: usize,
) -> Result<BTreeMap<String, Targets>> {
    let pool = super::pool(jobs)?;
    let targets: Vec<Result<(String, Targets)>> = pool.install(|| {
        ids.par_iter()
            .map(|id| {
                let image = dataset.load_image(id)?;
                if (image.rows, image.cols) != (model.config.rows, model.config.cols) {
                    return Err(CliError::invalid(
                        dataset.image_path(id),
                        format!(
                            "image is {}x{}, the model expects {}x{}",
                            image.rows, image.cols, model.config.rows, model.config.cols
                        ),
                    ));
                }
                Ok((id.clone(), model.targets(&image.to_array())?))
            })
            .collect()
    });
    targets.into_iter().collect()
}

/// Slots of every image, each inferred with noise seeded by the image id.
pub fn image_slots(
    model: &MfresaModel,
    targets: &BTreeMap<String, Targets>,
    seed: u64,
    jobs: usize,
) -> Result<BTreeMap<String, Array>> {
    let pool = super::pool(jobs)?;
    let items: Vec<(&String, &Targets)> = targets.iter().collect();
    let slots: Vec<Result<(String, Array)>> = pool.install(|| {
        items
            .par_iter()
            .map(|(id, t)| {
                Ok((
                    (*id).clone(),
                    mfresa::infer(model, t, derive_seed(seed, id))?.slots,
                ))
            })
            .collect()
    });
    slots.into_iter().collect()
}

fn first_image_size(dataset: &Dataset, ids: &[String]) -> Result<(usize, usize)> {
    let first = ids
        .first()
        .ok_or_else(|| CliError::Usage(format!("dataset {} is empty", dataset.root.display())))?;
    let image = dataset.load_image(first)?;
    Ok((image.rows, image.cols))
}

pub fn train_all(
    settings: &TrainSettings,
    dataset: &Dataset,
    out: &Path,
    jobs: usize,
) -> Result<TrainSummary> {
    let ids = dataset.image_ids();
    let (rows, cols) = first_image_size(dataset, &ids)?;
    let config = settings.model_config(rows, cols)?;
    let fp = fingerprint(
        "train",
        settings,
        &[("dataset".into(), dataset.digest.clone())],
    );

    let mut model = MfresaModel::new(config, settings.seed)?;
    let targets = image_targets(&model, dataset, &ids, jobs)?;
    let ordered: Vec<Targets> = ids.iter().map(|id| targets[id].clone()).collect();
    log::info!(
        "training the slot model on {} images for {} steps",
        ordered.len(),
        settings.steps
    );
    let report = mfresa::train(&mut model, &ordered, &settings.train_config())?;
    save_ocl(&out.join(OCL_FILE), &model, &fp)?;
    write_bytes(&out.join(OCL_CURVE_FILE), &ocl_curve_csv(&report.curve)?)?;

    let slots = image_slots(&model, &targets, settings.seed, jobs)?;
    let questions = Vocab::new(dataset.question_vocabulary());
    let answers = Vocab::new(dataset.answer_vocabulary());
    let mut probe = Probe::new(
        settings.probe_config(),
        questions,
        answers,
        derive_seed(settings.seed, "probe-init"),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut examples = Vec::with_capacity(dataset.records.len());
    for r in &dataset.records {
        examples.push(ProbeExample {
            slots: slots[&r.image_id].clone(),
            question: probe.encode(&r.question)?,
            answer: probe.answer_index(&r.answer)?,
        });
    }
    log::info!(
        "training the probe on {} questions for {} steps",
        examples.len(),
        settings.probe_steps
    );
    let probe_report = train_probe(&mut probe, &examples, &settings.probe_train_config())?;
    save_probe(&out.join(PROBE_FILE), &probe, &fp)?;
    write_bytes(
        &out.join(PROBE_CURVE_FILE),
        &probe_curve_csv(&probe_report.losses, settings)?,
    )?;

    Ok(TrainSummary {
        out: out.to_path_buf(),
        fingerprint: fp,
        ocl_curve: report.curve,
        probe_curve: probe_report.losses,
    })
}

fn csv_bytes(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).map_err(|e| CliError::Failed(e.to_string()))?;
    w.into_inner().map_err(|e| CliError::Failed(e.to_string()))
}

pub fn ocl_curve_csv(curve: &[LossTerms]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["step", "total", "image", "feature", "hog"])?;
        for (i, t) in curve.iter().enumerate() {
            w.write_record([
                i.to_string(),
                t.total.to_string(),
                t.image.to_string(),
                t.feature.to_string(),
                t.hog.to_string(),
            ])?;
        }
        Ok(())
    })
}

fn probe_curve_csv(losses: &[f64], settings: &TrainSettings) -> Result<Vec<u8>> {
    let split = settings.probe_train_config().connector_steps();
    csv_bytes(|w| {
        w.write_record(["step", "phase", "loss"])?;
        for (i, l) in losses.iter().enumerate() {
            let phase = if i < split { "connector" } else { "joint" };
            w.write_record([i.to_string(), phase.to_string(), l.to_string()])?;
        }
        Ok(())
    })
}

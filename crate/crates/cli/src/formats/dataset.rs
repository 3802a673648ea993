//! Dataset directories: `dataset.jsonl` (one grounded question per line),
//! optional `scenes.jsonl` with object lists, `images/<image_id>.ppm` and
//! `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use oclbench_core::data::{
    synth::SynthObject, GroundingBox, QaRecord, RgbImage, RleMask, SynthConfig,
};
use oclbench_core::metrics::BinaryMask;
use serde::{Deserialize, Serialize};

use super::{ppm, read_json, read_jsonl};
use crate::error::{CliError, Result};
use crate::fingerprint::file_digest;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const SCENES_FILE: &str = "scenes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

const QA_FIELDS: &[&str] = &[
    "question_id",
    "image_id",
    "question",
    "answer",
    "image_size",
    "grounding_boxes",
    "grounding_masks",
    "semantic_type",
];

const SCENE_FIELDS: &[&str] = &["id", "image", "objects", "object_masks"];

/// One synthetic scene: its image file and exact object masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneLine {
    pub id: String,
    /// Relative to the dataset directory.
    pub image: String,
    pub objects: Vec<SynthObject>,
    pub object_masks: Vec<RleMask>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub fingerprint: String,
    pub seed: u64,
    pub config: SynthConfig,
    pub scenes: usize,
    pub questions: usize,
    pub question_vocabulary: Vec<String>,
    pub answer_vocabulary: Vec<String>,
    /// SHA-256 of every other file, keyed by relative path.
    pub files: BTreeMap<String, String>,
}

pub const MANIFEST_FORMAT: &str = "oclbench-dataset";

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<QaRecord>,
    pub scenes: Vec<SceneLine>,
    pub manifest: Option<Manifest>,
    /// Digest of `dataset.jsonl`.
    pub digest: String,
}

/// Loads a dataset from a directory or from a `dataset.jsonl` path, whose
/// directory then serves as the root for images.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (root, file) = if path.is_dir() {
        (path.to_path_buf(), path.join(DATASET_FILE))
    } else {
        (
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
            path.to_path_buf(),
        )
    };
    if !file.exists() {
        return Err(CliError::Usage(format!(
            "dataset not found: {}",
            file.display()
        )));
    }
    let mut records = Vec::new();
    for (line, record) in read_jsonl::<QaRecord>(&file, QA_FIELDS)? {
        record.validate().map_err(|e| CliError::Format {
            path: file.clone(),
            line,
            detail: e.to_string(),
        })?;
        records.push(record);
    }
    let scenes_path = root.join(SCENES_FILE);
    let scenes = if scenes_path.exists() {
        read_jsonl::<SceneLine>(&scenes_path, SCENE_FIELDS)?
            .into_iter()
            .map(|(_, s)| s)
            .collect()
    } else {
        Vec::new()
    };
    let manifest_path = root.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        Some(read_json::<Manifest>(&manifest_path)?)
    } else {
        None
    };
    Ok(Dataset {
        digest: file_digest(&file)?,
        root,
        records,
        scenes,
        manifest,
    })
}

impl Dataset {
    pub fn image_path(&self, image_id: &str) -> PathBuf {
        self.root.join("images").join(format!("{}.ppm", image_id))
    }

    pub fn load_image(&self, image_id: &str) -> Result<RgbImage> {
        ppm::read(&self.image_path(image_id))
    }

    /// Distinct image ids in first-appearance order.
    pub fn image_ids(&self) -> Vec<String> {
        let mut seen = std::collections::BTreeSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.image_id.clone()))
            .map(|r| r.image_id.clone())
            .collect()
    }

    /// Answer vocabulary: from the manifest when present, otherwise the
    /// sorted distinct answers of the records.
    pub fn answer_vocabulary(&self) -> Vec<String> {
        match &self.manifest {
            Some(m) => m.answer_vocabulary.clone(),
            None => {
                let set: std::collections::BTreeSet<_> =
                    self.records.iter().map(|r| r.answer.clone()).collect();
                set.into_iter().collect()
            }
        }
    }

    /// Question vocabulary: from the manifest when present, otherwise the
    /// sorted distinct question tokens.
    pub fn question_vocabulary(&self) -> Vec<String> {
        match &self.manifest {
            Some(m) => m.question_vocabulary.clone(),
            None => {
                let set: std::collections::BTreeSet<String> = self
                    .records
                    .iter()
                    .flat_map(|r| {
                        r.question
                            .split_whitespace()
                            .map(str::to_string)
                            .collect::<Vec<_>>()
                    })
                    .collect();
                set.into_iter().collect()
            }
        }
    }
}

/// Rasterizes a box: a pixel belongs to it when its center does.
pub fn box_mask(b: &GroundingBox, rows: usize, cols: usize) -> BinaryMask {
    BinaryMask::from_fn(rows, cols, |r, c| {
        let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
        x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h
    })
}

/// Grounding masks of a record, and whether they had to be approximated by
/// filling the grounding boxes because the record carries no masks.
pub fn grounding_masks(record: &QaRecord) -> Result<(Vec<BinaryMask>, bool)> {
    if !record.grounding_masks.is_empty() {
        let masks = record
            .grounding_masks
            .iter()
            .map(RleMask::decode)
            .collect::<Result<Vec<_>, _>>()?;
        return Ok((masks, false));
    }
    if record.grounding_boxes.is_empty() {
        return Err(CliError::Failed(format!(
            "question {} has no grounding masks or boxes",
            record.question_id
        )));
    }
    let (rows, cols) = record.image_size;
    Ok((
        record
            .grounding_boxes
            .iter()
            .map(|b| box_mask(b, rows, cols))
            .collect(),
        true,
    ))
}

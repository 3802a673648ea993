use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use oclbench_core::data::{synth, synth_scenes, RleMask, SynthConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cli::SynthArgs;
use crate::config::resolve;
use crate::error::Result;
use crate::fingerprint::{fingerprint, sha256_hex};
use crate::formats::dataset::{
    Manifest, SceneLine, DATASET_FILE, MANIFEST_FILE, MANIFEST_FORMAT, SCENES_FILE,
};
use crate::formats::{jsonl_bytes, ppm, write_bytes, write_json};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSettings {
    pub scenes: usize,
    pub seed: u64,
    /// Maximum objects per scene.
    pub objects: usize,
    pub min_objects: usize,
    pub rows: usize,
    pub cols: usize,
    pub min_size: usize,
    pub max_size: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let c = SynthConfig::default();
        Self {
            scenes: 100,
            seed: 0,
            objects: c.max_objects,
            min_objects: c.min_objects,
            rows: c.rows,
            cols: c.cols,
            min_size: c.min_size,
            max_size: c.max_size,
        }
    }
}

impl SynthSettings {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            rows: self.rows,
            cols: self.cols,
            // a lone --objects below the default minimum lowers the minimum too
            min_objects: self.min_objects.min(self.objects),
            max_objects: self.objects,
            min_size: self.min_size,
            max_size: self.max_size,
            ..SynthConfig::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthSummary {
    pub out: PathBuf,
    pub manifest: Manifest,
}

pub fn run(args: &SynthArgs, file: Option<&Value>) -> Result<SynthSummary> {
    let settings = resolve(&SynthSettings::default(), file, args)?;
    generate(&settings, &args.out)
}

/// Writes the dataset for `settings` under `out`. The output depends only
/// on the settings.
pub fn generate(settings: &SynthSettings, out: &Path) -> Result<SynthSummary> {
    let config = settings.synth_config();
    let scenes = synth_scenes(&config, settings.scenes, settings.seed)?;
    let mut files = BTreeMap::new();
    let mut put = |rel: String, bytes: Vec<u8>| -> Result<()> {
        files.insert(rel.clone(), sha256_hex(&bytes));
        write_bytes(&out.join(rel), &bytes)
    };

    let mut records = Vec::new();
    let mut lines = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        let image = format!("images/{}.ppm", scene.id);
        put(image.clone(), ppm::encode(&scene.image))?;
        lines.push(SceneLine {
            id: scene.id.clone(),
            image,
            objects: scene.objects.clone(),
            object_masks: scene.object_masks().iter().map(RleMask::encode).collect(),
        });
        records.extend(scene.questions.iter().cloned());
    }
    put(DATASET_FILE.into(), jsonl_bytes(&records))?;
    put(SCENES_FILE.into(), jsonl_bytes(&lines))?;

    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: 1,
        fingerprint: fingerprint("synth", settings, &[]),
        seed: settings.seed,
        config,
        scenes: scenes.len(),
        questions: records.len(),
        question_vocabulary: synth::question_vocabulary(),
        answer_vocabulary: synth::answer_vocabulary(),
        files,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    log::info!(
        "wrote {} scenes and {} questions to {}",
        manifest.scenes,
        manifest.questions,
        out.display()
    );
    Ok(SynthSummary {
        out: out.to_path_buf(),
        manifest,
    })
}

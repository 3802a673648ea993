//! JSON checkpoints: a versioned header, the model configuration and named
//! tensors. Floats are written in shortest round-trip form, so loading a
//! saved checkpoint reproduces the parameters bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use oclbench_core::mfresa::{MfresaConfig, MfresaModel, Teacher};
use oclbench_core::nn::Params;
use oclbench_core::probe::{Probe, ProbeConfig, Vocab};
use oclbench_core::Array;
use serde::{Deserialize, Serialize};

use super::{read_json, write_json};
use crate::error::{CliError, Result};

pub const FORMAT: &str = "oclbench-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabPair {
    pub questions: Vocab,
    pub answers: Vocab,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub fingerprint: String,
    pub config: C,
    pub tensors: BTreeMap<String, Tensor>,
    /// Parameters that are never trained (the OCL teacher).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub frozen: BTreeMap<String, Tensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<VocabPair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OclConfig {
    pub model: MfresaConfig,
    pub teacher_seed: u64,
}

pub const OCL_KIND: &str = "ocl";
pub const PROBE_KIND: &str = "probe";

fn to_tensors(params: &Params) -> BTreeMap<String, Tensor> {
    params
        .iter()
        .map(|(name, a)| {
            (
                name.clone(),
                Tensor {
                    shape: a.shape().to_vec(),
                    data: a.data().to_vec(),
                },
            )
        })
        .collect()
}

fn to_params(path: &Path, tensors: BTreeMap<String, Tensor>) -> Result<Params> {
    let mut params = Params::new();
    for (name, t) in tensors {
        let array = Array::new(t.shape, t.data)
            .map_err(|e| CliError::invalid(path, format!("tensor {}: {}", name, e)))?;
        if !array.is_finite() {
            return Err(CliError::invalid(
                path,
                format!("tensor {} has non-finite values", name),
            ));
        }
        params.insert(name, array);
    }
    Ok(params)
}

fn check_header<C>(path: &Path, ckpt: &Checkpoint<C>, kind: &str) -> Result<()> {
    if ckpt.format != FORMAT || ckpt.version != VERSION {
        return Err(CliError::invalid(
            path,
            format!(
                "unsupported checkpoint {} v{} (expected {} v{})",
                ckpt.format, ckpt.version, FORMAT, VERSION
            ),
        ));
    }
    if ckpt.kind != kind {
        return Err(CliError::invalid(
            path,
            format!("checkpoint holds a {} model, expected {}", ckpt.kind, kind),
        ));
    }
    Ok(())
}

/// Names and shapes must match a freshly initialized model of the same
/// configuration.
fn check_layout(path: &Path, loaded: &Params, fresh: &Params) -> Result<()> {
    let a: Vec<(&String, &[usize])> = loaded.iter().map(|(n, t)| (n, t.shape())).collect();
    let b: Vec<(&String, &[usize])> = fresh.iter().map(|(n, t)| (n, t.shape())).collect();
    if a != b {
        return Err(CliError::invalid(
            path,
            "tensor names or shapes do not match the configuration",
        ));
    }
    Ok(())
}

pub fn save_ocl(path: &Path, model: &MfresaModel, fingerprint: &str) -> Result<()> {
    let ckpt = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        kind: OCL_KIND.into(),
        fingerprint: fingerprint.into(),
        config: OclConfig {
            model: model.config.clone(),
            teacher_seed: model.teacher.seed,
        },
        tensors: to_tensors(&model.params),
        frozen: to_tensors(&model.teacher.params),
        vocab: None,
    };
    write_json(path, &ckpt)
}

/// The model and the fingerprint of the run that produced it.
pub fn load_ocl(path: &Path) -> Result<(MfresaModel, String)> {
    let ckpt: Checkpoint<OclConfig> = read_json(path)?;
    check_header(path, &ckpt, OCL_KIND)?;
    let config = ckpt.config.model;
    let fresh =
        MfresaModel::new(config.clone(), 0).map_err(|e| CliError::invalid(path, e.to_string()))?;
    let params = to_params(path, ckpt.tensors)?;
    check_layout(path, &params, &fresh.params)?;
    let teacher = Teacher {
        params: to_params(path, ckpt.frozen)?,
        seed: ckpt.config.teacher_seed,
    };
    check_layout(path, &teacher.params, &fresh.teacher.params)?;
    Ok((
        MfresaModel {
            config,
            params,
            teacher,
        },
        ckpt.fingerprint,
    ))
}

pub fn save_probe(path: &Path, probe: &Probe, fingerprint: &str) -> Result<()> {
    let ckpt = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        kind: PROBE_KIND.into(),
        fingerprint: fingerprint.into(),
        config: probe.config.clone(),
        tensors: to_tensors(&probe.params),
        frozen: BTreeMap::new(),
        vocab: Some(VocabPair {
            questions: probe.questions.clone(),
            answers: probe.answers.clone(),
        }),
    };
    write_json(path, &ckpt)
}

pub fn load_probe(path: &Path) -> Result<(Probe, String)> {
    let ckpt: Checkpoint<ProbeConfig> = read_json(path)?;
    check_header(path, &ckpt, PROBE_KIND)?;
    let vocab = ckpt
        .vocab
        .ok_or_else(|| CliError::invalid(path, "probe checkpoint without vocabularies"))?;
    let fresh = Probe::new(
        ckpt.config.clone(),
        vocab.questions.clone(),
        vocab.answers.clone(),
        0,
    )
    .map_err(|e| CliError::invalid(path, e.to_string()))?;
    let params = to_params(path, ckpt.tensors)?;
    check_layout(path, &params, &fresh.params)?;
    Ok((
        Probe {
            config: ckpt.config,
            params,
            questions: vocab.questions,
            answers: vocab.answers,
        },
        ckpt.fingerprint,
    ))
}

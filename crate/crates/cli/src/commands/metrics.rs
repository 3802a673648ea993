use std::collections::BTreeMap;
use std::path::Path;

use oclbench_core::metrics::{spearman, Eq1Mode};
use oclbench_core::probe::Vocab;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::report::{render_text, score, write_report, ReportFile, SpearmanSection, REPORT_FORMAT};
use crate::cli::MetricsArgs;
use crate::config::resolve;
use crate::error::{CliError, Result};
use crate::fingerprint::{file_digest, fingerprint};
use crate::formats::dataset::load_dataset;
use crate::formats::predictions::{join, load_predictions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSettings {
    pub eq1_mode: Eq1Mode,
    pub spearman_columns: Option<Vec<String>>,
}

impl Default for MetricsSettings {
    fn default() -> Self {
        Self {
            eq1_mode: Eq1Mode::BestOverlap,
            spearman_columns: None,
        }
    }
}

pub fn run(args: &MetricsArgs, file: Option<&Value>) -> Result<()> {
    let report = build(args, file)?;
    match &args.out {
        Some(dir) => write_report(dir, &report),
        None => {
            print!("{}", render_text(&report));
            Ok(())
        }
    }
}

/// Computes the report without writing it.
pub fn build(args: &MetricsArgs, file: Option<&Value>) -> Result<ReportFile> {
    let settings = resolve(&MetricsSettings::default(), file, args)?;
    if args.predictions.is_none() && args.spearman_table.is_none() {
        return Err(CliError::Usage(
            "nothing to score: pass --predictions with --data, or --spearman-table".into(),
        ));
    }
    let mut inputs = BTreeMap::new();
    let mut metrics = None;
    let mut traces = Vec::new();
    let mut approximated = 0;
    if let (Some(pred_path), Some(data)) = (&args.predictions, &args.data) {
        let dataset = load_dataset(data)?;
        let predictions = load_predictions(pred_path)?;
        let answers = Vocab::new(dataset.answer_vocabulary());
        let joined = join(pred_path, predictions, &dataset.records, &answers)?;
        let (aggregates, rows) = score(&joined.samples, settings.eq1_mode)?;
        inputs.insert("dataset".to_string(), dataset.digest.clone());
        inputs.insert("predictions".to_string(), file_digest(pred_path)?);
        metrics = Some(aggregates);
        traces = rows;
        approximated = joined.approximated;
    }
    let spearman = match &args.spearman_table {
        Some(path) => {
            inputs.insert("spearman_table".to_string(), file_digest(path)?);
            Some(spearman_table(path, settings.spearman_columns.as_deref())?)
        }
        None => None,
    };
    let inputs_list: Vec<(String, String)> =
        inputs.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    Ok(ReportFile {
        format: REPORT_FORMAT.into(),
        version: 1,
        command: "metrics".into(),
        fingerprint: fingerprint("metrics", &settings, &inputs_list),
        settings: serde_json::to_value(&settings).expect("settings serialize"),
        inputs,
        blind: None,
        attribution: None,
        eq1_mode: settings.eq1_mode,
        approximated_grounding: approximated,
        metrics,
        traces,
        spearman,
    })
}

/// Spearman correlation between two numeric columns of a CSV table with a
/// header row and one row per model. Without `columns`, the first two
/// columns whose every cell parses as a number are used.
pub fn spearman_table(path: &Path, columns: Option<&[String]>) -> Result<SpearmanSection> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| CliError::invalid(path, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::invalid(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Format {
            path: path.into(),
            line: i + 2,
            detail: e.to_string(),
        })?;
        rows.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let numeric = |c: usize| -> Option<Vec<f64>> {
        rows.iter()
            .map(|r| r.get(c)?.trim().parse::<f64>().ok())
            .collect()
    };
    let chosen: Vec<usize> = match columns {
        Some(names) => names
            .iter()
            .map(|n| {
                header
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| CliError::invalid(path, format!("no column {:?}", n)))
            })
            .collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&c| numeric(c).is_some())
            .take(2)
            .collect(),
    };
    if chosen.len() != 2 {
        return Err(CliError::invalid(
            path,
            "need two numeric columns to correlate",
        ));
    }
    let xs = numeric(chosen[0]).ok_or_else(|| {
        CliError::invalid(
            path,
            format!("column {:?} is not numeric", header[chosen[0]]),
        )
    })?;
    let ys = numeric(chosen[1]).ok_or_else(|| {
        CliError::invalid(
            path,
            format!("column {:?} is not numeric", header[chosen[1]]),
        )
    })?;
    let rho = spearman(&xs, &ys).map_err(|e| CliError::Failed(format!("spearman: {}", e)))?;
    Ok(SpearmanSection {
        columns: [header[chosen[0]].clone(), header[chosen[1]].clone()],
        models: xs.len(),
        rho,
    })
}

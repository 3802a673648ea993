//! Metric reports: `report.json`, an aligned `report.txt` and the
//! per-sample `trace.csv`. Every byte depends only on the inputs.

use std::collections::BTreeMap;
use std::path::Path;

use oclbench_core::attribution::{AttributionMethod, AttributionTarget, Reduction};
use oclbench_core::metrics::{evaluate, Eq1Mode, EvalSample, MetricReport, TraceRow};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};
use crate::formats::{to_json_bytes, write_bytes};

pub const REPORT_FORMAT: &str = "oclbench-report";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const TRACE_CSV: &str = "trace.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub samples: usize,
    pub accuracy: f64,
    pub miou: f64,
    pub mbo: f64,
    /// Grounded accuracy under the selected mode.
    pub g_acc: f64,
    pub awga: f64,
    pub g_acc_best_overlap: f64,
    pub g_acc_union: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionInfo {
    pub method: AttributionMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub target: AttributionTarget,
    pub reduction: Reduction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpearmanSection {
    pub columns: [String; 2],
    pub models: usize,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub fingerprint: String,
    pub settings: Value,
    /// Digests of the inputs, by role.
    pub inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blind: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribution: Option<AttributionInfo>,
    pub eq1_mode: Eq1Mode,
    /// Questions whose grounding masks were filled in from boxes.
    pub approximated_grounding: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Aggregates>,
    pub traces: Vec<TraceRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spearman: Option<SpearmanSection>,
}

/// Scores a batch under `mode`, adding grounded accuracy under both modes.
pub fn score(batch: &[EvalSample], mode: Eq1Mode) -> Result<(Aggregates, Vec<TraceRow>)> {
    let failed =
        |e: oclbench_core::Error| CliError::Failed(format!("metric computation failed: {}", e));
    let main: MetricReport = evaluate(batch, mode).map_err(failed)?;
    let g = |m: Eq1Mode| -> Result<f64> {
        if m == mode {
            Ok(main.g_acc)
        } else {
            Ok(evaluate(batch, m).map_err(failed)?.g_acc)
        }
    };
    let aggregates = Aggregates {
        samples: main.samples,
        accuracy: main.accuracy,
        miou: main.miou,
        mbo: main.mbo,
        g_acc: main.g_acc,
        awga: main.awga,
        g_acc_best_overlap: g(Eq1Mode::BestOverlap)?,
        g_acc_union: g(Eq1Mode::Union)?,
    };
    Ok((aggregates, main.traces))
}

fn table(rows: &[(String, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        out.push_str(&format!("{:<width$}  {}\n", k, v, width = width));
    }
    out
}

pub fn render_text(report: &ReportFile) -> String {
    let mut head = vec![
        ("command".to_string(), report.command.clone()),
        ("fingerprint".to_string(), report.fingerprint.clone()),
        ("eq1 mode".to_string(), report.eq1_mode.name().to_string()),
    ];
    if let Some(blind) = report.blind {
        head.push(("blind".into(), if blind { "yes" } else { "no" }.into()));
    }
    if let Some(a) = &report.attribution {
        let steps = a
            .steps
            .map(|s| format!(", {} steps", s))
            .unwrap_or_default();
        let target = match a.target {
            AttributionTarget::Logit => "logit",
            AttributionTarget::Loss => "loss",
        };
        let reduction = match a.reduction {
            Reduction::L2 => "l2",
            Reduction::AbsSum => "abs-sum",
        };
        head.push((
            "attribution".into(),
            format!("{} ({}{}, {})", a.method.name(), target, steps, reduction),
        ));
    }
    if report.approximated_grounding > 0 {
        head.push((
            "grounding from boxes".into(),
            report.approximated_grounding.to_string(),
        ));
    }
    let mut out = table(&head);
    if let Some(m) = &report.metrics {
        out.push('\n');
        let f = |v: f64| format!("{:>10.6}", v);
        out.push_str(&table(&[
            ("metric".into(), format!("{:>10}", "value")),
            ("samples".into(), format!("{:>10}", m.samples)),
            ("accuracy".into(), f(m.accuracy)),
            ("miou".into(), f(m.miou)),
            ("mbo".into(), f(m.mbo)),
            ("g_acc".into(), f(m.g_acc)),
            ("g_acc best-overlap".into(), f(m.g_acc_best_overlap)),
            ("g_acc union".into(), f(m.g_acc_union)),
            ("awga".into(), f(m.awga)),
        ]));
    }
    if let Some(s) = &report.spearman {
        out.push('\n');
        out.push_str(&table(&[
            (
                "spearman columns".into(),
                format!("{} vs {}", s.columns[0], s.columns[1]),
            ),
            ("models".into(), s.models.to_string()),
            ("rho".into(), format!("{:.6}", s.rho)),
        ]));
    }
    out
}

pub fn trace_csv(traces: &[TraceRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut write = || -> csv::Result<()> {
        w.write_record([
            "sample_id",
            "correct",
            "miou",
            "mbo",
            "grounding_score",
            "g_acc",
            "awga",
            "selected_slots",
        ])?;
        for t in traces {
            let selected: Vec<String> = t.selected_slots.iter().map(usize::to_string).collect();
            w.write_record([
                t.sample_id.clone(),
                t.correct.to_string(),
                t.miou.to_string(),
                t.mbo.to_string(),
                t.grounding_score.to_string(),
                t.g_acc.to_string(),
                t.awga.to_string(),
                selected.join(" "),
            ])?;
        }
        Ok(())
    };
    write().map_err(|e| CliError::Failed(e.to_string()))?;
    w.into_inner().map_err(|e| CliError::Failed(e.to_string()))
}

/// Writes the three report files into `dir`.
pub fn write_report(dir: &Path, report: &ReportFile) -> Result<()> {
    write_bytes(&dir.join(REPORT_JSON), &to_json_bytes(report))?;
    write_bytes(&dir.join(REPORT_TXT), render_text(report).as_bytes())?;
    write_bytes(&dir.join(TRACE_CSV), &trace_csv(&report.traces)?)
}

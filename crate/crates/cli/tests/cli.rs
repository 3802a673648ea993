use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oclbench::cli::MetricsArgs;
use oclbench::commands::{metrics, report::ReportFile, synth};
use oclbench::formats::checkpoint::load_ocl;
use oclbench::formats::dataset::{grounding_masks, load_dataset};
use oclbench::formats::predictions::{AttributionJson, PredictionLine};
use oclbench::formats::{jsonl_bytes, read_json, write_bytes};
use oclbench_core::attribution::AttributionMethod;
use oclbench_core::data::RleMask;
use oclbench_core::metrics::{BinaryMask, Eq1Mode};
use oclbench_core::mfresa::MfresaModel;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oclbench"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {}", p.display(), e))
}

fn synth_small(out: &Path, scenes: usize, seed: u64) {
    let settings = synth::SynthSettings {
        scenes,
        seed,
        ..Default::default()
    };
    synth::generate(&settings, out).unwrap();
}

fn metrics_args(predictions: &Path, data: &Path) -> MetricsArgs {
    MetricsArgs {
        predictions: Some(predictions.into()),
        data: Some(data.into()),
        out: None,
        eq1_mode: None,
        spearman_table: None,
        spearman_columns: None,
    }
}

#[test]
fn synth_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    for (out, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        let o = run(&["synth", "--scenes", "6", "--seed", seed, "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "dataset.jsonl",
        "scenes.jsonl",
        "manifest.json",
        "images/scene-00005.ppm",
    ] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{}", f);
    }
    assert_ne!(
        read(&a.join("manifest.json")),
        read(&c.join("manifest.json"))
    );
    // the manifest digests match the files on disk
    let manifest: oclbench::formats::dataset::Manifest =
        read_json(&a.join("manifest.json")).unwrap();
    for (rel, digest) in &manifest.files {
        assert_eq!(
            &oclbench::fingerprint::file_digest(&a.join(rel)).unwrap(),
            digest,
            "{}",
            rel
        );
    }
}

#[test]
fn synth_rejects_too_many_objects_and_accepts_zero_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--objects", "9", "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("9 objects"));

    let empty = dir.path().join("empty");
    let o = run(&["synth", "--scenes", "0", "--out", s(&empty)]);
    assert!(o.status.success());
    assert!(read(&empty.join("dataset.jsonl")).is_empty());
    assert!(load_dataset(&empty).unwrap().records.is_empty());
}

#[test]
fn synth_reads_a_config_file_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("synth.json");
    std::fs::write(
        &config,
        r#"{"scenes": 2, "rows": 24, "cols": 24, "unknown": 1}"#,
    )
    .unwrap();
    let out = dir.path().join("d");
    let o = run(&[
        "synth",
        "--config",
        s(&config),
        "--cols",
        "28",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ds = load_dataset(&out).unwrap();
    let m = ds.manifest.unwrap();
    assert_eq!((m.scenes, m.config.rows, m.config.cols), (2, 24, 28));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown"));
}

#[test]
fn train_on_a_missing_dataset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "train",
        "--data",
        s(&dir.path().join("nope")),
        "--out",
        s(&dir.path().join("m")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dataset not found"));
}

#[test]
fn zero_learning_rate_leaves_the_checkpoint_at_its_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    synth_small(&data, 3, 0);
    let out = dir.path().join("m");
    let o = run(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--steps",
        "1",
        "--lr",
        "0",
        "--seed",
        "7",
        "--probe-steps",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (model, _) = load_ocl(&out.join("ocl.json")).unwrap();
    let fresh = MfresaModel::new(model.config.clone(), 7).unwrap();
    assert_eq!(model, fresh);
    let curve = String::from_utf8(read(&out.join("ocl_loss.csv"))).unwrap();
    assert_eq!(curve.lines().next(), Some("step,total,image,feature,hog"));
    assert_eq!(curve.lines().count(), 2);
}

fn train_tiny(data: &Path, out: &Path) {
    let o = run(&[
        "train",
        "--data",
        s(data),
        "--out",
        s(out),
        "--steps",
        "3",
        "--probe-steps",
        "5",
        "--k",
        "3",
        "--d-slot",
        "8",
        "--decoder-hidden",
        "8",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eval_outputs_do_not_depend_on_worker_count_or_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = (dir.path().join("d"), dir.path().join("m"));
    synth_small(&data, 4, 2);
    train_tiny(&data, &model);
    let eval = |out: &Path, jobs: &str, extra: &[&str]| {
        let ocl = model.join("ocl.json");
        let probe = model.join("probe.json");
        let mut args = vec![
            "eval",
            "--data",
            s(&data),
            "--ocl",
            s(&ocl),
            "--probe",
            s(&probe),
            "--out",
            s(out),
            "--jobs",
            jobs,
        ];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    eval(&a, "1", &["--attr", "integrated", "--ig-steps", "4"]);
    eval(&b, "3", &["--attr", "integrated", "--ig-steps", "4"]);
    eval(&c, "2", &["--attr", "integrated", "--ig-steps", "4"]);
    for f in [
        "predictions.jsonl",
        "report.json",
        "report.txt",
        "trace.csv",
    ] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{}", f);
        assert_eq!(read(&a.join(f)), read(&c.join(f)), "{}", f);
    }
    let report: ReportFile = read_json(&a.join("report.json")).unwrap();
    assert_eq!(report.blind, Some(false));
    let attr = report.attribution.unwrap();
    assert_eq!(
        (attr.method, attr.steps),
        (AttributionMethod::IntegratedGrad, Some(4))
    );

    // blind evaluation attributes nothing to the slots
    let blind = dir.path().join("blind");
    eval(&blind, "1", &["--blind"]);
    let report: ReportFile = read_json(&blind.join("report.json")).unwrap();
    assert_eq!(report.blind, Some(true));
    let text = String::from_utf8(read(&blind.join("predictions.jsonl"))).unwrap();
    for line in text.lines() {
        let p: PredictionLine = serde_json::from_str(line).unwrap();
        assert!(p.attribution.scores.iter().all(|&v| v == 0.0), "{}", line);
    }
    assert_ne!(
        report.fingerprint,
        read_json::<ReportFile>(&a.join("report.json"))
            .unwrap()
            .fingerprint
    );

    // scoring the written predictions again reproduces the eval metrics
    let again = metrics::build(&metrics_args(&a.join("predictions.jsonl"), &data), None).unwrap();
    let first: ReportFile = read_json(&a.join("report.json")).unwrap();
    assert_eq!(again.metrics, first.metrics);
    assert_eq!(again.traces, first.traces);
}

#[test]
fn golden_predictions_score_as_derived_by_hand() {
    let data = fixture("golden");
    let report = metrics::build(
        &metrics_args(&fixture("golden/predictions.jsonl"), &data),
        None,
    )
    .unwrap();
    let m = report.metrics.as_ref().unwrap();
    let third = 1.0 / 3.0;
    let expected = [
        ("accuracy", m.accuracy, 4.0 / 5.0),
        ("miou", m.miou, (1.0 + 1.0 + 0.5 + 0.5 + third) / 5.0),
        ("mbo", m.mbo, (1.0 + 1.0 + 0.5 + 0.5 + third) / 5.0),
        ("g_acc", m.g_acc, (1.0 + 0.0 + 0.5 + 0.5 + third) / 5.0),
        (
            "g_acc union",
            m.g_acc_union,
            (0.5 + 0.0 + 0.5 + 0.25 + 0.5) / 5.0,
        ),
        ("awga", m.awga, (1.0 + 0.0 + 0.5 + 0.0 + third) / 5.0),
    ];
    for (name, got, want) in expected {
        assert!((got - want).abs() <= 1e-12, "{}: {} vs {}", name, got, want);
    }
    assert_eq!(m.samples, 5);
    assert_eq!(report.approximated_grounding, 1);
    let selected: Vec<Vec<usize>> = report
        .traces
        .iter()
        .map(|t| t.selected_slots.clone())
        .collect();
    assert_eq!(
        selected,
        vec![vec![0], vec![1], vec![0, 1], vec![1], vec![0]]
    );

    let dir = tempfile::tempdir().unwrap();
    let mut args = metrics_args(&fixture("golden/predictions.jsonl"), &data);
    args.out = Some(dir.path().into());
    metrics::run(&args, None).unwrap();
    assert_eq!(
        read(&dir.path().join("report.txt")),
        read(&fixture("golden/report.txt"))
    );
}

#[test]
fn eq1_mode_changes_grounded_accuracy_and_fingerprint() {
    let data = fixture("golden");
    let default = metrics::build(
        &metrics_args(&fixture("golden/predictions.jsonl"), &data),
        None,
    )
    .unwrap();
    let mut args = metrics_args(&fixture("golden/predictions.jsonl"), &data);
    args.eq1_mode = Some("union".into());
    let union = metrics::build(&args, None).unwrap();
    assert_eq!(union.eq1_mode, Eq1Mode::Union);
    assert_ne!(union.fingerprint, default.fingerprint);
    let (d, u) = (default.metrics.unwrap(), union.metrics.unwrap());
    assert!((u.g_acc - 0.35).abs() <= 1e-12);
    assert_eq!(
        (u.g_acc_best_overlap, u.g_acc_union),
        (d.g_acc_best_overlap, d.g_acc_union)
    );
    assert_eq!((u.accuracy, u.awga), (d.accuracy, d.awga));
}

#[test]
fn a_perfect_predictor_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    synth_small(&data, 5, 11);
    let ds = load_dataset(&data).unwrap();
    let mut lines = Vec::new();
    for r in &ds.records {
        let (gt, approximated) = grounding_masks(r).unwrap();
        assert!(!approximated);
        let (rows, cols) = r.image_size;
        let rest = BinaryMask::from_fn(rows, cols, |y, x| !gt.iter().any(|m| m.get(y, x)));
        let mut masks: Vec<RleMask> = gt.iter().map(RleMask::encode).collect();
        let mut scores = vec![1.0; gt.len()];
        masks.push(RleMask::encode(&rest));
        scores.push(0.0);
        lines.push(PredictionLine {
            question_id: r.question_id.clone(),
            predicted_answer: r.answer.clone(),
            slot_masks: masks,
            attribution: AttributionJson {
                method: AttributionMethod::Grad,
                scores,
            },
            fingerprint: None,
        });
    }
    let path = dir.path().join("perfect.jsonl");
    write_bytes(&path, &jsonl_bytes(&lines)).unwrap();
    let m = metrics::build(&metrics_args(&path, &data), None)
        .unwrap()
        .metrics
        .unwrap();
    for (name, v) in [
        ("accuracy", m.accuracy),
        ("miou", m.miou),
        ("mbo", m.mbo),
        ("g_acc", m.g_acc),
        ("awga", m.awga),
    ] {
        assert!((v - 1.0).abs() <= 1e-12, "{} = {}", name, v);
    }
}

#[test]
fn malformed_predictions_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let good = std::fs::read_to_string(fixture("golden/predictions.jsonl")).unwrap();
    let first = good.lines().next().unwrap();
    std::fs::write(&path, format!("{}\n{{\"question_id\": 3}}\n", first)).unwrap();
    let o = run(&[
        "metrics",
        "--predictions",
        s(&path),
        "--data",
        s(&fixture("golden")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("bad.jsonl:2:"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    std::fs::write(&path, first.replace("\"yes\"", "\"maybe\"")).unwrap();
    let o = run(&[
        "metrics",
        "--predictions",
        s(&path),
        "--data",
        s(&fixture("golden")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("maybe"));

    let o = run(&["metrics"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_predictions_are_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    std::fs::write(&path, "").unwrap();
    let report = metrics::build(&metrics_args(&path, &fixture("golden")), None).unwrap();
    assert_eq!(report.metrics.unwrap().samples, 0);
}

#[test]
fn spearman_table_reproduces_the_attribution_ablation() {
    let o = run(&[
        "metrics",
        "--spearman-table",
        s(&fixture("attribution_ablation.csv")),
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("grad vs integrated_grad"), "{}", text);
    let section = metrics::spearman_table(&fixture("attribution_ablation.csv"), None).unwrap();
    assert_eq!(section.models, 6);
    assert!((section.rho - 0.77).abs() <= 0.005, "{}", section.rho);
    // distinct values: 1 - 6 * sum(d^2) / (n (n^2 - 1)) with rank gaps 1,1,1,1,2,0
    assert!((section.rho - 27.0 / 35.0).abs() <= 1e-12);
}

#[test]
fn verify_passes_and_names_an_injected_fault() {
    let o = run(&["verify", "--seeds", "2"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let o = run(&["verify", "--seeds", "2", "--inject-fault", "softmax:0.5"]);
    assert_eq!(o.status.code(), Some(1));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("FAIL grad/softmax"), "{}", out);
    assert!(!out.contains("FAIL grad/gelu"));
    let o = run(&["verify", "--inject-fault", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

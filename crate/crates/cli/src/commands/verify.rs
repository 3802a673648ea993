//! Self-checks: every differentiable primitive and the composite models
//! against finite differences, the metric suite against scalar-loop
//! reference implementations, attention normalization and RLE round trips.

use oclbench_core::attribution::{topk_slots, AttributionMethod, AttributionVector};
use oclbench_core::autodiff::cases::{check_case, primitive_cases};
use oclbench_core::autodiff::{Fault, GradCheckReport};
use oclbench_core::data::RleMask;
use oclbench_core::metrics::{evaluate, spearman, BinaryMask, Eq1Mode};
use oclbench_core::nn::Params;
use oclbench_core::rng::{derive_seed, normal_array, seeded, uniform_array};
use oclbench_core::slot_attention::{init_params, run_slot_attention, FeatureMap, SlotConfig};
use oclbench_core::Primitive;

use crate::cli::VerifyArgs;
use crate::error::{CliError, Result};

#[allow(dead_code)]
#[path = "../../../core/tests/support/mod.rs"]
mod support;

use support::fixtures::{random_batch, Draw};
use support::{oracle, stacks};

/// Absolute tolerance between metric implementations and their references.
pub const METRIC_TOL: f64 = 1e-12;
/// Largest deviation of an attention column sum from one.
pub const ATTENTION_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// Parses `name[:factor]`; the factor defaults to 0.5.
pub fn parse_fault(spec: &str) -> Result<Fault> {
    let (name, factor) = match spec.split_once(':') {
        Some((n, f)) => {
            let factor = f
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad fault factor {:?}", f)))?;
            (n, factor)
        }
        None => (spec, 0.5),
    };
    let primitive = Primitive::from_name(name).ok_or_else(|| {
        let known: Vec<&str> = Primitive::DIFFERENTIABLE.iter().map(|p| p.name()).collect();
        CliError::Usage(format!(
            "unknown primitive {:?}; expected one of {}",
            name,
            known.join(", ")
        ))
    })?;
    Ok(Fault { primitive, factor })
}

fn worst(reports: impl IntoIterator<Item = (u64, GradCheckReport)>) -> (bool, String) {
    let mut passed = true;
    let mut max = (0.0f64, 0u64);
    for (seed, r) in reports {
        passed &= r.passed;
        if r.max_rel_error >= max.0 || r.max_rel_error.is_nan() {
            max = (r.max_rel_error, seed);
        }
    }
    (
        passed,
        format!("max relative error {:.3e} (seed {})", max.0, max.1),
    )
}

pub fn gradient_checks(seeds: u64, fault: Option<Fault>) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for case in primitive_cases() {
        let mut errors = Vec::new();
        let mut reports = Vec::new();
        for seed in 0..seeds {
            match check_case(&case, seed, fault, stacks::STEP, stacks::TOL) {
                Ok(r) => reports.push((seed, r)),
                Err(e) => errors.push(format!("seed {}: {}", seed, e)),
            }
        }
        let (passed, detail) = worst(reports);
        let detail = if errors.is_empty() {
            detail
        } else {
            errors.join("; ")
        };
        out.push(CheckOutcome::new(
            format!("grad/{}", case.primitive.name()),
            passed && errors.is_empty(),
            detail,
        ));
    }
    let composites: [(&str, fn(u64) -> GradCheckReport); 5] = [
        ("gelu_mlp", stacks::gelu_mlp),
        ("softmax_pick", stacks::softmax_pick),
        ("slot_attention", stacks::slot_attention_stack),
        ("probe", stacks::probe),
        ("mfresa_loss", stacks::mfresa_loss),
    ];
    for (name, check) in composites {
        let (passed, detail) = worst((0..seeds).map(|s| (s, check(s))));
        out.push(CheckOutcome::new(
            format!("grad-stack/{}", name),
            passed,
            detail,
        ));
    }
    out
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= METRIC_TOL
}

pub fn metric_checks() -> Vec<CheckOutcome> {
    // the fixtures clamp top-k on purpose; one warning per sample is noise here
    let level = log::max_level();
    log::set_max_level(log::LevelFilter::Error);
    let out = metric_checks_inner();
    log::set_max_level(level);
    out
}

fn metric_checks_inner() -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut draw = Draw::new(derive_seed(0, "verify-metrics"));
    let mut mismatches = Vec::new();
    for round in 0..200 {
        let size = draw.int(1, 6);
        let (batch, plain) = random_batch(&mut draw, size);
        let checks = [
            (
                "accuracy",
                evaluate(&batch, Eq1Mode::BestOverlap).map(|r| r.accuracy),
                oracle::accuracy(&plain),
            ),
            (
                "miou",
                evaluate(&batch, Eq1Mode::BestOverlap).map(|r| r.miou),
                oracle::mean_miou(&plain),
            ),
            (
                "mbo",
                evaluate(&batch, Eq1Mode::BestOverlap).map(|r| r.mbo),
                oracle::mean_mbo(&plain),
            ),
            (
                "g_acc best-overlap",
                evaluate(&batch, Eq1Mode::BestOverlap).map(|r| r.g_acc),
                oracle::g_acc_best_overlap(&plain),
            ),
            (
                "g_acc union",
                evaluate(&batch, Eq1Mode::Union).map(|r| r.g_acc),
                oracle::g_acc_union(&plain),
            ),
            (
                "awga",
                evaluate(&batch, Eq1Mode::BestOverlap).map(|r| r.awga),
                oracle::awga(&plain),
            ),
        ];
        for (name, got, want) in checks {
            match got {
                Ok(v) if close(v, want) => {}
                Ok(v) => mismatches.push(format!("round {} {}: {} vs {}", round, name, v, want)),
                Err(e) => mismatches.push(format!("round {} {}: {}", round, name, e)),
            }
        }
    }
    out.push(CheckOutcome::new(
        "metrics/oracle",
        mismatches.is_empty(),
        mismatches
            .first()
            .cloned()
            .unwrap_or_else(|| "200 batches agree within 1e-12".into()),
    ));

    let mut bad = None;
    for case in 0..500 {
        let n = draw.int(1, 6);
        let scores: Vec<f64> = (0..n).map(|_| draw.int(0, 4) as f64 * 0.25).collect();
        let k = draw.int(1, n);
        let got = AttributionVector::new(AttributionMethod::Grad, scores.clone())
            .and_then(|v| topk_slots(&v, k))
            .map(|s| s.indices);
        if got.as_ref().ok() != Some(&oracle::topk(&scores, k)) {
            bad.get_or_insert(format!(
                "case {}: {:?} k={} gave {:?}",
                case, scores, k, got
            ));
        }
    }
    out.push(CheckOutcome::new(
        "metrics/topk",
        bad.is_none(),
        bad.unwrap_or_else(|| "500 cases agree".into()),
    ));

    let mut bad = None;
    for case in 0..200 {
        let n = draw.int(3, 12);
        let xs: Vec<f64> = (0..n).map(|_| draw.int(0, 5) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| draw.unit()).collect();
        let want = oracle::spearman(&xs, &ys);
        match spearman(&xs, &ys) {
            Ok(v) if (v - want).abs() <= 1e-12 => {}
            // constant columns have no correlation; the reference yields NaN
            Err(_) if want.is_nan() => {}
            other => {
                bad.get_or_insert(format!("case {}: {:?} vs {}", case, other, want));
            }
        }
    }
    out.push(CheckOutcome::new(
        "metrics/spearman",
        bad.is_none(),
        bad.unwrap_or_else(|| "200 cases agree".into()),
    ));
    out
}

/// Column sums of the attention weights at every iteration, over `inputs`
/// random feature maps and configurations.
pub fn attention_check(inputs: u64) -> CheckOutcome {
    let mut worst = 0.0f64;
    let mut error = None;
    for i in 0..inputs {
        let mut rng = seeded(derive_seed(i, "verify-attention"));
        let k = 1 + (i as usize % 5);
        let (rows, cols) = (2 + i as usize % 3, 3 + i as usize % 4);
        let d_in = 3 + i as usize % 4;
        let config = SlotConfig {
            k,
            d_slot: 6,
            iterations: 1 + i as usize % 4,
            mlp_hidden: 8,
            ..SlotConfig::default()
        };
        let mut params = Params::new();
        init_params(&mut params, &mut rng, d_in, &config);
        let scale = uniform_array(&mut rng, &[1], 0.1, 10.0).data()[0];
        let tokens = normal_array(&mut rng, &[rows * cols, d_in], scale);
        let result = FeatureMap::new(tokens, (rows, cols))
            .and_then(|f| run_slot_attention(&f, &params, &config, i));
        match result {
            Ok((_, maps)) => {
                for w in &maps.iterations {
                    for j in 0..rows * cols {
                        let total: f64 = (0..k).map(|s| w.get2(s, j)).sum();
                        worst = worst.max((total - 1.0).abs());
                    }
                }
            }
            Err(e) => {
                error.get_or_insert(format!("input {}: {}", i, e));
            }
        }
    }
    match error {
        Some(e) => CheckOutcome::new("attention/normalization", false, e),
        None => CheckOutcome::new(
            "attention/normalization",
            worst <= ATTENTION_TOL,
            format!("largest column-sum deviation {:.3e}", worst),
        ),
    }
}

pub fn rle_check() -> CheckOutcome {
    let mut draw = Draw::new(derive_seed(0, "verify-rle"));
    for case in 0..1000 {
        let (rows, cols) = (draw.int(1, 12), draw.int(1, 12));
        let density = draw.unit();
        let mask = BinaryMask::from_fn(rows, cols, |_, _| draw.unit() < density);
        match RleMask::encode(&mask).decode() {
            Ok(back) if back == mask => {}
            other => {
                return CheckOutcome::new(
                    "data/rle",
                    false,
                    format!("case {}: {:?}", case, other.err()),
                )
            }
        }
    }
    CheckOutcome::new("data/rle", true, "1000 random masks round-trip")
}

/// Every check, in a fixed order.
pub fn all_checks(seeds: u64, fault: Option<Fault>) -> Vec<CheckOutcome> {
    let mut out = gradient_checks(seeds, fault);
    out.extend(metric_checks());
    out.push(attention_check(100));
    out.push(rle_check());
    out
}

pub fn run(args: &VerifyArgs) -> Result<()> {
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let fault = args.inject_fault.as_deref().map(parse_fault).transpose()?;
    let outcomes = all_checks(args.seeds, fault);
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.name.as_str())
        .collect();
    println!(
        "{} of {} checks passed",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "failed checks: {}",
            failed.join(", ")
        )))
    }
}

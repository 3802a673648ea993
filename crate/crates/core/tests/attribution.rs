use oclbench_core::attribution::{
    finite_difference_attribution, grad_attribution, integrated_gradients,
    integrated_gradients_raw, target_output, AttributionOptions, AttributionTarget,
};
use oclbench_core::probe::{predict, HeadKind, Probe, ProbeConfig, Vocab};
use oclbench_core::rng::{normal_array, seeded};
use oclbench_core::Array;

fn probe(head: HeadKind, depth: usize, seed: u64) -> Probe {
    let config = ProbeConfig {
        k: 4,
        d_slot: 5,
        connector_depth: depth,
        connector_hidden: 9,
        d_model: 6,
        head,
    };
    let questions = Vocab::new(["is", "there", "a", "red", "disk"]);
    let answers = Vocab::new(["no", "yes", "1", "2"]);
    Probe::new(config, questions, answers, seed).unwrap()
}

fn slots(seed: u64) -> Array {
    normal_array(&mut seeded(seed), &[4, 5], 1.0)
}

const QUESTION: &str = "is there a red disk";

#[test]
fn gradient_scores_match_finite_differences() {
    for seed in 0..10 {
        let p = probe(HeadKind::CrossAttention, 2, seed);
        let q = p.encode(QUESTION).unwrap();
        let s = slots(100 + seed);
        let target = predict(&p.logits(&s, &q).unwrap());
        for options in [
            AttributionOptions::default(),
            AttributionOptions {
                target: AttributionTarget::Loss,
                ..Default::default()
            },
        ] {
            let g = grad_attribution(&p.model(&q), &s, target, options).unwrap();
            let fd =
                finite_difference_attribution(&p.model(&q), &s, target, 1e-5, options).unwrap();
            for (a, b) in g.scores.iter().zip(&fd.scores) {
                assert!(
                    (a - b).abs() <= 1e-3 * a.abs().max(b.abs()).max(1e-3),
                    "{} vs {}",
                    a,
                    b
                );
            }
        }
    }
}

#[test]
fn zero_at_the_baseline() {
    let p = probe(HeadKind::CrossAttention, 2, 1);
    let q = p.encode(QUESTION).unwrap();
    let s = slots(2);
    let ig =
        integrated_gradients(&p.model(&q), &s, 1, 16, &s, AttributionOptions::default()).unwrap();
    assert!(ig.scores.iter().all(|&v| v == 0.0));
}

#[test]
fn linear_probe_gives_gradient_times_input() {
    for seed in 0..10 {
        let p = probe(HeadKind::MeanPoolLinear, 1, seed);
        let q = p.encode(QUESTION).unwrap();
        let s = slots(50 + seed);
        let zero = Array::zeros([4, 5]);
        let target = (seed % 4) as usize;
        let g = oclbench_core::attribution::slot_gradient(
            &p.model(&q),
            &s,
            target,
            AttributionTarget::Logit,
        )
        .unwrap();
        for steps in [2, 3, 17] {
            let raw = integrated_gradients_raw(
                &p.model(&q),
                &s,
                target,
                steps,
                &zero,
                AttributionTarget::Logit,
            )
            .unwrap();
            for i in 0..s.len() {
                let want = g.data()[i] * s.data()[i];
                assert!((raw.data()[i] - want).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn completeness_at_128_steps() {
    for seed in 0..10 {
        let p = probe(HeadKind::CrossAttention, 2, seed);
        let q = p.encode(QUESTION).unwrap();
        let s = slots(70 + seed);
        let zero = Array::zeros([4, 5]);
        let model = p.model(&q);
        let target = predict(&p.logits(&s, &q).unwrap());
        let raw =
            integrated_gradients_raw(&model, &s, target, 128, &zero, AttributionTarget::Logit)
                .unwrap();
        let lhs: f64 = raw.data().iter().sum();
        let rhs = target_output(&model, &s, target, AttributionTarget::Logit).unwrap()
            - target_output(&model, &zero, target, AttributionTarget::Logit).unwrap();
        assert!(
            (lhs - rhs).abs() <= 1e-3,
            "seed {}: {} vs {}",
            seed,
            lhs,
            rhs
        );
    }
}

#[test]
fn doubling_steps_changes_little() {
    for seed in 0..5 {
        let p = probe(HeadKind::CrossAttention, 2, seed);
        let q = p.encode(QUESTION).unwrap();
        let s = slots(90 + seed);
        let zero = Array::zeros([4, 5]);
        let target = predict(&p.logits(&s, &q).unwrap());
        let a = integrated_gradients(
            &p.model(&q),
            &s,
            target,
            64,
            &zero,
            AttributionOptions::default(),
        )
        .unwrap();
        let b = integrated_gradients(
            &p.model(&q),
            &s,
            target,
            128,
            &zero,
            AttributionOptions::default(),
        )
        .unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((x - y).abs() <= 1e-3 * y.abs().max(1e-3), "{} vs {}", x, y);
        }
    }
}

#[test]
fn target_bias_shift_changes_no_score() {
    let mut p = probe(HeadKind::CrossAttention, 2, 4);
    let q = p.encode(QUESTION).unwrap();
    let s = slots(5);
    let target = predict(&p.logits(&s, &q).unwrap());
    let before = grad_attribution(&p.model(&q), &s, target, AttributionOptions::default()).unwrap();
    let mut bias = p.params.get("probe.head.cls.b").unwrap().clone();
    bias.data_mut()[target] += 3.5;
    p.params.insert("probe.head.cls.b", bias);
    let after = grad_attribution(&p.model(&q), &s, target, AttributionOptions::default()).unwrap();
    assert_eq!(before.scores, after.scores);
}

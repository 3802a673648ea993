//! Localization and grounded-answer metrics.
//!
//! Object-discovery scores ([`miou_matched`], [`mbo`]) compare slot masks
//! with ground-truth masks. Grounded accuracy ([`g_acc`]) gates answer
//! correctness by how well the slots localize the grounding objects, and
//! [`awga`] restricts that localization to the slots the answer is
//! attributed to.

mod grounded;
mod mask;
mod overlap;
mod spearman;

pub use grounded::{
    accuracy, aggregate, attributed_overlap, awga, evaluate, g_acc, grounding_score, trace_row,
    Eq1Mode, EvalSample, MetricReport, TraceRow,
};
pub use mask::{BinaryMask, MaskRole, MaskSet};
pub use overlap::{iou, max_weight_assignment, mbo, miou_matched};
pub use spearman::{average_ranks, pearson, spearman};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{AttributionMethod, AttributionVector};
    use alloc::string::ToString;
    use alloc::vec;

    fn quadrants() -> MaskSet {
        let masks = (0..4)
            .map(|q| BinaryMask::from_fn(4, 4, |r, c| (r / 2) * 2 + c / 2 == q))
            .collect();
        MaskSet::new(masks, MaskRole::PredictedSlots).unwrap()
    }

    fn sample(id: &str, correct: bool, grounding: MaskSet, scores: &[f64]) -> EvalSample {
        EvalSample {
            id: id.to_string(),
            predicted: 1,
            truth: if correct { 1 } else { 0 },
            predicted_masks: quadrants(),
            grounding,
            attribution: Some(
                AttributionVector::new(AttributionMethod::Grad, scores.to_vec()).unwrap(),
            ),
        }
    }

    fn grounding(masks: vec::Vec<BinaryMask>) -> MaskSet {
        MaskSet::new(masks, MaskRole::Grounding).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let g = grounding(vec![BinaryMask::full(4, 4)]);
        let mut batch: vec::Vec<_> = (0..4)
            .map(|i| sample(&i.to_string(), i != 3, g.clone(), &[1.0, 0.0, 0.0, 0.0]))
            .collect();
        assert_eq!(accuracy(&batch), 0.75);
        for s in &mut batch {
            s.truth = s.predicted;
        }
        assert_eq!(accuracy(&batch), 1.0);
        for s in &mut batch {
            s.truth = 7;
        }
        assert_eq!(accuracy(&batch), 0.0);
        assert_eq!(g_acc(&batch, Eq1Mode::BestOverlap).unwrap(), 0.0);
        assert_eq!(awga(&batch).unwrap(), 0.0);
    }

    #[test]
    fn correct_answer_with_half_overlap() {
        // grounding = top half; best slot (one quadrant) covers 4 of 8 cells
        let g = grounding(vec![BinaryMask::from_fn(4, 4, |r, _| r < 2)]);
        let s = sample("a", true, g, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(g_acc(&[s], Eq1Mode::BestOverlap).unwrap(), 0.5);
    }

    #[test]
    fn attribution_to_the_right_slot() {
        let g = grounding(vec![quadrants().masks[2].clone()]);
        let s = sample("a", true, g, &[0.1, 0.2, 0.9, 0.3]);
        assert_eq!(awga(&[s]).unwrap(), 1.0);
    }

    #[test]
    fn fragmentation_is_penalized() {
        let g = grounding(vec![quadrants().masks[2].clone()]);
        let s = sample("a", true, g, &[0.9, 0.2, 0.1, 0.3]);
        assert_eq!(accuracy(core::slice::from_ref(&s)), 1.0);
        assert_eq!(
            g_acc(core::slice::from_ref(&s), Eq1Mode::BestOverlap).unwrap(),
            1.0
        );
        assert_eq!(awga(&[s]).unwrap(), 0.0);
    }

    #[test]
    fn union_mode_degenerates_on_partitions() {
        let g = grounding(vec![quadrants().masks[0].clone()]);
        let s = sample("a", true, g, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            g_acc(core::slice::from_ref(&s), Eq1Mode::Union).unwrap(),
            0.25
        );
        assert_eq!(g_acc(&[s], Eq1Mode::BestOverlap).unwrap(), 1.0);
    }

    #[test]
    fn missing_attribution_names_the_sample() {
        let g = grounding(vec![BinaryMask::full(4, 4)]);
        let mut s = sample("q42", true, g, &[1.0, 0.0, 0.0, 0.0]);
        s.attribution = None;
        assert_eq!(
            awga(&[s]),
            Err(crate::Error::MissingAttribution("q42".to_string()))
        );
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(g_acc(&[], Eq1Mode::BestOverlap).is_err());
        assert!(awga(&[]).is_err());
        assert_eq!(accuracy(&[]), 0.0);
    }

    #[test]
    fn report_is_order_independent() {
        let g1 = grounding(vec![quadrants().masks[1].clone()]);
        let g2 = grounding(vec![BinaryMask::from_fn(4, 4, |_, c| c < 2)]);
        let a = sample("a", true, g1, &[0.0, 1.0, 0.0, 0.0]);
        let b = sample("b", false, g2.clone(), &[0.0, 0.0, 1.0, 0.5]);
        let c = sample("c", true, g2, &[0.3, 0.0, 0.0, 0.5]);
        let r1 = evaluate(&[a.clone(), b.clone(), c.clone()], Eq1Mode::BestOverlap).unwrap();
        let r2 = evaluate(&[c, a, b], Eq1Mode::BestOverlap).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.traces[0].sample_id, "a");
        let mean: f64 = r1.traces.iter().map(|t| t.awga).sum::<f64>() / 3.0;
        assert_eq!(r1.awga, mean);
    }
}

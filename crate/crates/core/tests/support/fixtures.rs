//! Random metric fixtures in two representations: crate types and the
//! plain grids of `oracle`.

#![allow(dead_code)]

use oclbench_core::attribution::{AttributionMethod, AttributionVector};
use oclbench_core::metrics::{BinaryMask, EvalSample, MaskRole, MaskSet};
use oclbench_core::rng::{seeded, uniform_array, SeededRng};

use super::oracle;

pub struct Draw(SeededRng);

impl Draw {
    pub fn new(seed: u64) -> Self {
        Draw(seeded(seed))
    }

    pub fn unit(&mut self) -> f64 {
        uniform_array(&mut self.0, &[1], 0.0, 1.0).data()[0]
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        (lo + (self.unit() * (hi - lo + 1) as f64) as usize).min(hi)
    }
}

pub struct Fixture {
    pub sample: EvalSample,
    pub plain: oracle::Sample,
}

fn to_mask(rows: usize, cols: usize, bits: &[bool]) -> BinaryMask {
    BinaryMask::from_bits(rows, cols, bits.to_vec()).unwrap()
}

/// A sample on a grid of at most 8x8 with 1..=4 slots whose masks partition
/// the grid and 1..=3 non-empty, possibly overlapping grounding masks.
/// Half of the fixtures use quantized scores so that ties occur.
pub fn random_fixture(draw: &mut Draw, id: usize) -> Fixture {
    let rows = draw.int(2, 8);
    let cols = draw.int(2, 8);
    let k = draw.int(1, 4);
    let n = rows * cols;

    let mut slots = vec![vec![false; n]; k];
    #[allow(clippy::needless_range_loop)]
    for p in 0..n {
        slots[draw.int(0, k - 1)][p] = true;
    }
    let objects = draw.int(1, 3);
    let mut grounding = Vec::new();
    for _ in 0..objects {
        let (r0, c0) = (draw.int(0, rows - 1), draw.int(0, cols - 1));
        let (r1, c1) = (draw.int(r0, rows - 1), draw.int(c0, cols - 1));
        let mut g = vec![false; n];
        for r in r0..=r1 {
            for c in c0..=c1 {
                g[r * cols + c] = true;
            }
        }
        grounding.push(g);
    }
    let quantized = draw.unit() < 0.5;
    let scores: Vec<f64> = (0..k)
        .map(|_| {
            if quantized {
                draw.int(0, 3) as f64 * 0.25
            } else {
                draw.unit()
            }
        })
        .collect();
    let predicted = draw.int(0, 2);
    let truth = draw.int(0, 2);

    let sample = EvalSample {
        id: format!("s{:04}", id),
        predicted,
        truth,
        predicted_masks: MaskSet::new(
            slots.iter().map(|b| to_mask(rows, cols, b)).collect(),
            MaskRole::PredictedSlots,
        )
        .unwrap(),
        grounding: MaskSet::new(
            grounding.iter().map(|b| to_mask(rows, cols, b)).collect(),
            MaskRole::Grounding,
        )
        .unwrap(),
        attribution: Some(AttributionVector::new(AttributionMethod::Grad, scores.clone()).unwrap()),
    };
    let plain = oracle::Sample {
        predicted,
        truth,
        slots,
        grounding,
        scores,
    };
    Fixture { sample, plain }
}

pub fn random_batch(draw: &mut Draw, size: usize) -> (Vec<EvalSample>, Vec<oracle::Sample>) {
    let mut samples = Vec::new();
    let mut plain = Vec::new();
    for i in 0..size {
        let f = random_fixture(draw, i);
        samples.push(f.sample);
        plain.push(f.plain);
    }
    (samples, plain)
}

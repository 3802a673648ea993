//! Scalar-loop reference implementations of the evaluation metrics. They
//! work on plain `Vec<bool>` pixel grids and share no code with the crate.

#![allow(dead_code)]

pub type Grid = Vec<bool>;

pub struct Sample {
    pub predicted: usize,
    pub truth: usize,
    pub slots: Vec<Grid>,
    pub grounding: Vec<Grid>,
    pub scores: Vec<f64>,
}

pub fn iou(a: &Grid, b: &Grid) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for p in 0..a.len() {
        if a[p] && b[p] {
            inter += 1;
        }
        if a[p] || b[p] {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn union(masks: &[&Grid], len: usize) -> Grid {
    let mut out = vec![false; len];
    for m in masks {
        for p in 0..len {
            if m[p] {
                out[p] = true;
            }
        }
    }
    out
}

/// Best total IoU over every one-to-one assignment of GT masks to distinct
/// predictions (or to nothing), divided by the GT count.
pub fn miou_matched(pred: &[Grid], gt: &[Grid]) -> f64 {
    fn search(g: usize, pred: &[Grid], gt: &[Grid], used: &mut Vec<bool>) -> f64 {
        if g == gt.len() {
            return 0.0;
        }
        let mut best = search(g + 1, pred, gt, used);
        for p in 0..pred.len() {
            if !used[p] {
                used[p] = true;
                let v = iou(&pred[p], &gt[g]) + search(g + 1, pred, gt, used);
                used[p] = false;
                if v > best {
                    best = v;
                }
            }
        }
        best
    }
    search(0, pred, gt, &mut vec![false; pred.len()]) / gt.len() as f64
}

pub fn mbo(pred: &[Grid], gt: &[Grid]) -> f64 {
    let mut total = 0.0;
    for g in gt {
        let mut best = 0.0f64;
        for p in pred {
            best = best.max(iou(p, g));
        }
        total += best;
    }
    total / gt.len() as f64
}

/// Size-`k` subset with the largest score sum; among equal sums the
/// lexicographically smallest index list.
pub fn topk(scores: &[f64], k: usize) -> Vec<usize> {
    let n = scores.len();
    let k = k.min(n);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for bits in 0u32..(1 << n) {
        if bits.count_ones() as usize != k {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|i| bits & (1 << i) != 0).collect();
        let sum: f64 = idx.iter().map(|&i| scores[i]).sum();
        let better = match &best {
            None => true,
            Some((s, b)) => sum > *s || (sum == *s && idx < *b),
        };
        if better {
            best = Some((sum, idx));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

pub fn accuracy(batch: &[Sample]) -> f64 {
    let mut hits = 0.0;
    for s in batch {
        if s.predicted == s.truth {
            hits += 1.0;
        }
    }
    hits / batch.len() as f64
}

pub fn g_acc_best_overlap(batch: &[Sample]) -> f64 {
    let mut total = 0.0;
    for s in batch {
        if s.predicted == s.truth {
            total += mbo(&s.slots, &s.grounding);
        }
    }
    total / batch.len() as f64
}

pub fn g_acc_union(batch: &[Sample]) -> f64 {
    let mut total = 0.0;
    for s in batch {
        if s.predicted == s.truth {
            let len = s.grounding[0].len();
            let all: Vec<&Grid> = s.slots.iter().collect();
            let gt: Vec<&Grid> = s.grounding.iter().collect();
            total += iou(&union(&all, len), &union(&gt, len));
        }
    }
    total / batch.len() as f64
}

pub fn awga_sample(s: &Sample) -> f64 {
    if s.predicted != s.truth {
        return 0.0;
    }
    let len = s.grounding[0].len();
    let k = s.grounding.len().min(s.slots.len());
    let chosen: Vec<&Grid> = topk(&s.scores, k)
        .into_iter()
        .map(|i| &s.slots[i])
        .collect();
    let gt: Vec<&Grid> = s.grounding.iter().collect();
    iou(&union(&chosen, len), &union(&gt, len))
}

pub fn awga(batch: &[Sample]) -> f64 {
    let mut total = 0.0;
    for s in batch {
        total += awga_sample(s);
    }
    total / batch.len() as f64
}

pub fn mean_miou(batch: &[Sample]) -> f64 {
    batch
        .iter()
        .map(|s| miou_matched(&s.slots, &s.grounding))
        .sum::<f64>()
        / batch.len() as f64
}

pub fn mean_mbo(batch: &[Sample]) -> f64 {
    batch
        .iter()
        .map(|s| mbo(&s.slots, &s.grounding))
        .sum::<f64>()
        / batch.len() as f64
}

/// Average ranks (1-based, ties share the mean rank) then Pearson.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for i in 0..v.len() {
            let mut below = 0.0;
            let mut equal = 0.0;
            for j in 0..v.len() {
                if v[j] < v[i] {
                    below += 1.0;
                } else if v[j] == v[i] {
                    equal += 1.0;
                }
            }
            out[i] = below + (equal + 1.0) / 2.0;
        }
        out
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..xs.len() {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

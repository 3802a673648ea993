use alloc::vec;
use alloc::vec::Vec;

use super::mask::{BinaryMask, MaskSet};
use crate::error::{Error, Result};

/// Intersection over union. Two empty masks score 0.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    let union = a.union_count(b)?;
    if union == 0 {
        log::debug!("IoU of two empty masks taken as 0");
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

fn iou_table(pred: &MaskSet, gt: &MaskSet) -> Result<Vec<Vec<f64>>> {
    gt.masks
        .iter()
        .map(|g| pred.masks.iter().map(|p| iou(p, g)).collect())
        .collect()
}

/// Maximum-weight one-to-one assignment of rows to columns.
///
/// Returns, for every row, the column it is matched to. When there are
/// more rows than columns some rows stay unmatched.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows <= cols {
        let cost: Vec<Vec<f64>> = weights
            .iter()
            .map(|r| r.iter().map(|w| -w).collect())
            .collect();
        hungarian(&cost).into_iter().map(Some).collect()
    } else {
        let cost: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| -weights[r][c]).collect())
            .collect();
        let col_to_row = hungarian(&cost);
        let mut out = vec![None; rows];
        for (c, r) in col_to_row.into_iter().enumerate() {
            out[r] = Some(c);
        }
        out
    }
}

/// Minimum-cost assignment for an `n x m` cost table with `n <= m`, using
/// row potentials and shortest augmenting paths. Returns the column of
/// every row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    // 1-based with column 0 as the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Mean IoU over ground-truth masks under the optimal one-to-one matching
/// with predicted masks. Unmatched ground-truth masks contribute 0.
pub fn miou_matched(pred: &MaskSet, gt: &MaskSet) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Empty("ground-truth masks"));
    }
    let table = iou_table(pred, gt)?;
    let assignment = max_weight_assignment(&table);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(g, p)| p.map_or(0.0, |p| table[g][p]))
        .sum();
    Ok(total / gt.len() as f64)
}

/// Mean over ground-truth masks of the best IoU with any predicted mask.
pub fn mbo(pred: &MaskSet, gt: &MaskSet) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Empty("ground-truth masks"));
    }
    let table = iou_table(pred, gt)?;
    let total: f64 = table
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .sum();
    Ok(total / gt.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MaskRole;
    use crate::rng::seeded;
    use rand::Rng;

    fn set(masks: Vec<BinaryMask>, role: MaskRole) -> MaskSet {
        MaskSet::new(masks, role).unwrap()
    }

    #[test]
    fn iou_basics() {
        let a = BinaryMask::from_fn(4, 4, |_, c| c < 2);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = BinaryMask::from_fn(4, 4, |_, c| c >= 2);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        assert_eq!(iou(&a, &BinaryMask::full(4, 4)).unwrap(), 0.5);
        let e = BinaryMask::empty(4, 4);
        assert_eq!(iou(&e, &e).unwrap(), 0.0);
        assert!(matches!(
            iou(&a, &BinaryMask::empty(3, 4)),
            Err(Error::GridMismatch(..))
        ));
    }

    #[test]
    fn identical_sets_score_one() {
        let masks: Vec<_> = (0..3)
            .map(|k| BinaryMask::from_fn(3, 3, |r, _| r == k))
            .collect();
        let pred = set(masks.clone(), MaskRole::PredictedSlots);
        let gt = set(masks, MaskRole::Grounding);
        assert_eq!(miou_matched(&pred, &gt).unwrap(), 1.0);
        assert_eq!(mbo(&pred, &gt).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_single_masks_score_zero() {
        let pred = set(
            vec![BinaryMask::from_fn(2, 2, |r, _| r == 0)],
            MaskRole::PredictedSlots,
        );
        let gt = set(
            vec![BinaryMask::from_fn(2, 2, |r, _| r == 1)],
            MaskRole::Grounding,
        );
        assert_eq!(miou_matched(&pred, &gt).unwrap(), 0.0);
    }

    #[test]
    fn full_prediction_against_half_grid() {
        let pred = set(vec![BinaryMask::full(4, 4)], MaskRole::PredictedSlots);
        let gt = set(
            vec![BinaryMask::from_fn(4, 4, |r, _| r < 2)],
            MaskRole::Grounding,
        );
        assert_eq!(mbo(&pred, &gt).unwrap(), 0.5);
    }

    #[test]
    fn empty_ground_truth_rejected() {
        let pred = set(vec![BinaryMask::full(2, 2)], MaskRole::PredictedSlots);
        let gt = set(vec![], MaskRole::Grounding);
        assert!(miou_matched(&pred, &gt).is_err());
        assert!(mbo(&pred, &gt).is_err());
    }

    fn brute_force_best(table: &[Vec<f64>]) -> f64 {
        fn go(table: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == table.len() {
                return 0.0;
            }
            // leaving this row unmatched is allowed when columns run out
            let mut best = go(table, row + 1, used);
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.max(table[row][c] + go(table, row + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        let cols = table.first().map_or(0, Vec::len);
        go(table, 0, &mut vec![false; cols])
    }

    #[test]
    fn assignment_matches_enumeration() {
        let mut rng = seeded(3);
        for trial in 0..300 {
            let rows = 1 + trial % 5;
            let cols = 1 + (trial / 5) % 5;
            let table: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| rng.random::<f64>()).collect())
                .collect();
            let assignment = max_weight_assignment(&table);
            let mut seen = vec![false; cols];
            let mut total = 0.0;
            for (r, c) in assignment.iter().enumerate() {
                if let Some(c) = c {
                    assert!(!seen[*c]);
                    seen[*c] = true;
                    total += table[r][*c];
                }
            }
            assert!((total - brute_force_best(&table)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_gt_three_pred_fixture_matches_enumeration() {
        let pred = set(
            vec![
                BinaryMask::from_fn(6, 6, |r, _| r < 2),
                BinaryMask::from_fn(6, 6, |r, c| r >= 2 && c < 3),
                BinaryMask::from_fn(6, 6, |r, c| r >= 2 && c >= 3),
            ],
            MaskRole::PredictedSlots,
        );
        let gt = set(
            vec![
                BinaryMask::from_fn(6, 6, |r, c| r < 3 && c < 4),
                BinaryMask::from_fn(6, 6, |r, c| r >= 3 && c >= 2),
            ],
            MaskRole::Grounding,
        );
        let table = iou_table(&pred, &gt).unwrap();
        let expected = brute_force_best(&table) / 2.0;
        assert!((miou_matched(&pred, &gt).unwrap() - expected).abs() < 1e-12);
        assert!(mbo(&pred, &gt).unwrap() >= miou_matched(&pred, &gt).unwrap());
    }
}

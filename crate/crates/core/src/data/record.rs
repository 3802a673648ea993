use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::rle::RleMask;
use crate::error::{Error, Result};

/// Pixel-space box: top-left corner plus width and height.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SemanticType {
    Object,
    Attribute,
    Category,
    Relation,
}

/// A grounded question about one image.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QaRecord {
    pub question_id: String,
    pub image_id: String,
    pub question: String,
    pub answer: String,
    /// `(rows, cols)` of the image.
    pub image_size: (usize, usize),
    pub grounding_boxes: Vec<GroundingBox>,
    pub grounding_masks: Vec<RleMask>,
    pub semantic_type: SemanticType,
}

impl QaRecord {
    /// Checks that every box and mask lies inside the image.
    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.image_size;
        for (i, b) in self.grounding_boxes.iter().enumerate() {
            let finite = [b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite());
            if !finite || b.w <= 0.0 || b.h <= 0.0 || b.x < 0.0 || b.y < 0.0 {
                return Err(Error::MalformedBox {
                    record: self.question_id.clone(),
                    detail: format!("box {} = {:?} is degenerate", i, b),
                });
            }
            if b.x + b.w > cols as f64 || b.y + b.h > rows as f64 {
                return Err(Error::MalformedBox {
                    record: self.question_id.clone(),
                    detail: format!("box {} = {:?} exceeds image {}x{}", i, b, rows, cols),
                });
            }
        }
        for m in &self.grounding_masks {
            if m.grid != self.image_size {
                return Err(Error::GridMismatch(m.grid, self.image_size));
            }
        }
        Ok(())
    }
}

/// Why a record was dropped by [`filter_egqa`].
#[derive(Clone, Debug, PartialEq)]
pub enum RejectReason {
    TooManyBoxes { count: usize },
    LowCoverage { coverage: f64 },
    Malformed(Error),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<QaRecord>,
    pub rejected: Vec<(QaRecord, RejectReason)>,
}

/// Thresholds of the grounded-QA filter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterRules {
    pub max_boxes: usize,
    /// Minimum covered fraction of the image; records at exactly this value are kept.
    pub min_coverage: f64,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            max_boxes: 7,
            min_coverage: 0.10,
        }
    }
}

/// Area of the union of axis-aligned boxes, by coordinate compression.
pub fn box_union_area(boxes: &[GroundingBox]) -> f64 {
    let mut xs: Vec<f64> = boxes.iter().flat_map(|b| [b.x, b.x + b.w]).collect();
    let mut ys: Vec<f64> = boxes.iter().flat_map(|b| [b.y, b.y + b.h]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut area = 0.0;
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            let (cx, cy) = ((xw[0] + xw[1]) / 2.0, (yw[0] + yw[1]) / 2.0);
            let covered = boxes
                .iter()
                .any(|b| cx > b.x && cx < b.x + b.w && cy > b.y && cy < b.y + b.h);
            if covered {
                area += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    area
}

/// Fraction of the image covered by the union of the record's boxes.
pub fn box_coverage(record: &QaRecord) -> f64 {
    let (rows, cols) = record.image_size;
    box_union_area(&record.grounding_boxes) / (rows * cols) as f64
}

/// Keeps records with at most `max_boxes` boxes whose union covers at
/// least `min_coverage` of the image.
pub fn filter_egqa(records: &[QaRecord], rules: FilterRules) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for r in records {
        if let Err(e) = r.validate() {
            out.rejected.push((r.clone(), RejectReason::Malformed(e)));
            continue;
        }
        if r.grounding_boxes.len() > rules.max_boxes {
            out.rejected.push((
                r.clone(),
                RejectReason::TooManyBoxes {
                    count: r.grounding_boxes.len(),
                },
            ));
            continue;
        }
        let (rows, cols) = r.image_size;
        let area = box_union_area(&r.grounding_boxes);
        let total = (rows * cols) as f64;
        // compare area >= min * total without dividing, so a 10.0% boundary
        // is not lost to rounding
        if area < rules.min_coverage * total && area / total < rules.min_coverage {
            out.rejected.push((
                r.clone(),
                RejectReason::LowCoverage {
                    coverage: area / total,
                },
            ));
            continue;
        }
        out.kept.push(r.clone());
    }
    out
}

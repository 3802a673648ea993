//! Patch-level histograms of oriented gradients.
//!
//! Gradients use central differences with replicated borders. Each pixel
//! votes its gradient magnitude into the two orientation bins nearest to
//! its angle (bin `b` is centered on `b * width`), and every cell histogram
//! is L2-normalized on its own.

use alloc::format;
use alloc::vec;

use crate::array::Array;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HogConfig {
    pub cell_size: usize,
    pub bins: usize,
    /// Orientations over 0..360 degrees instead of 0..180.
    pub signed: bool,
    pub epsilon: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell_size: 4,
            bins: 9,
            signed: false,
            epsilon: 1e-6,
        }
    }
}

/// `grid_rows x grid_cols x bins`, one normalized histogram per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct HogFeatureMap {
    pub cells: Array,
}

impl HogFeatureMap {
    pub fn grid(&self) -> (usize, usize) {
        (self.cells.shape()[0], self.cells.shape()[1])
    }

    pub fn bins(&self) -> usize {
        self.cells.shape()[2]
    }

    pub fn cell(&self, r: usize, c: usize) -> &[f64] {
        let (_, gc) = self.grid();
        let b = self.bins();
        &self.cells.data()[(r * gc + c) * b..(r * gc + c + 1) * b]
    }

    /// One row per cell in row-major grid order.
    pub fn to_tokens(&self) -> Array {
        let (gr, gc) = self.grid();
        self.cells
            .reshape([gr * gc, self.bins()])
            .expect("same element count")
    }
}

/// Luma (0.299 R + 0.587 G + 0.114 B) of a `rows x cols x 3` image.
pub fn luma(rgb: &Array) -> Result<Array> {
    match rgb.shape() {
        &[rows, cols, 3] => {
            let d = rgb.data();
            Ok(Array::from_fn(rows, cols, |r, c| {
                let i = (r * cols + c) * 3;
                0.299 * d[i] + 0.587 * d[i + 1] + 0.114 * d[i + 2]
            }))
        }
        s => Err(Error::shape(
            "luma",
            format!("expected rows x cols x 3, got {:?}", s),
        )),
    }
}

fn reflect(i: usize, len: usize) -> usize {
    if i < len {
        i
    } else {
        2 * (len - 1) - i
    }
}

/// Computes HOG for a grayscale `rows x cols` image. Images whose sides are
/// not multiples of the cell size are reflect-padded at the bottom/right.
pub fn compute_hog(image: &Array, config: &HogConfig) -> Result<HogFeatureMap> {
    if config.bins < 2 || config.cell_size < 2 {
        return Err(Error::InvalidConfig(format!(
            "HOG needs bins >= 2 and cell_size >= 2 (got {} and {})",
            config.bins, config.cell_size
        )));
    }
    let (rows, cols) = image.expect2("compute_hog")?;
    let cs = config.cell_size;
    if rows < cs || cols < cs {
        return Err(Error::InvalidConfig(format!(
            "image {}x{} is smaller than one {}-pixel cell",
            rows, cols, cs
        )));
    }
    let pr = rows.div_ceil(cs) * cs;
    let pc = cols.div_ceil(cs) * cs;
    let px = |r: usize, c: usize| image.get2(reflect(r, rows), reflect(c, cols));

    let (gr, gc) = (pr / cs, pc / cs);
    let bins = config.bins;
    let range = if config.signed {
        2.0 * core::f64::consts::PI
    } else {
        core::f64::consts::PI
    };
    let width = range / bins as f64;
    let mut hist = vec![0.0; gr * gc * bins];

    for r in 0..pr {
        for c in 0..pc {
            let left = px(r, c.saturating_sub(1));
            let right = px(r, (c + 1).min(pc - 1));
            let up = px(r.saturating_sub(1), c);
            let down = px((r + 1).min(pr - 1), c);
            let gx = right - left;
            let gy = down - up;
            let mag = libm::sqrt(gx * gx + gy * gy);
            if mag == 0.0 {
                continue;
            }
            let mut theta = libm::atan2(gy, gx);
            if theta < 0.0 {
                theta += 2.0 * core::f64::consts::PI;
            }
            if !config.signed && theta >= core::f64::consts::PI {
                theta -= core::f64::consts::PI;
            }
            let pos = theta / width;
            let lo_f = libm::floor(pos);
            let frac = pos - lo_f;
            let lo = (lo_f as usize) % bins;
            let hi = (lo + 1) % bins;
            let base = ((r / cs) * gc + c / cs) * bins;
            hist[base + lo] += mag * (1.0 - frac);
            hist[base + hi] += mag * frac;
        }
    }

    let eps2 = config.epsilon * config.epsilon;
    for cell in hist.chunks_mut(bins) {
        let norm = libm::sqrt(cell.iter().map(|v| v * v).sum::<f64>() + eps2);
        for v in cell {
            *v /= norm;
        }
    }
    Ok(HogFeatureMap {
        cells: Array::new([gr, gc, bins], hist)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, uniform_array};

    #[test]
    fn constant_image_has_zero_histograms() {
        let h = compute_hog(&Array::full([8, 8], 0.7), &HogConfig::default()).unwrap();
        assert!(h.cells.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_votes_into_bin_zero() {
        let img = Array::from_fn(8, 8, |_, c| if c < 4 { 0.0 } else { 1.0 });
        let h = compute_hog(&img, &HogConfig::default()).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let cell = h.cell(r, c);
                assert!(cell[1..].iter().all(|&v| v == 0.0));
                assert!(cell[0] > 0.99);
            }
        }
    }

    #[test]
    fn too_small_images_rejected() {
        assert!(compute_hog(&Array::zeros([3, 8]), &HogConfig::default()).is_err());
        let bad = HogConfig {
            bins: 1,
            ..Default::default()
        };
        assert!(compute_hog(&Array::zeros([8, 8]), &bad).is_err());
    }

    #[test]
    fn non_multiple_sizes_are_padded() {
        let img = uniform_array(&mut seeded(1), &[10, 9], 0.0, 1.0);
        let h = compute_hog(&img, &HogConfig::default()).unwrap();
        assert_eq!(h.grid(), (3, 3));
    }

    #[test]
    fn norms_bounded_and_entries_non_negative() {
        let img = uniform_array(&mut seeded(2), &[16, 16], 0.0, 1.0);
        let h = compute_hog(&img, &HogConfig::default()).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let cell = h.cell(r, c);
                assert!(cell.iter().all(|&v| v >= 0.0));
                assert!(libm::sqrt(cell.iter().map(|v| v * v).sum::<f64>()) <= 1.0 + 1e-9);
            }
        }
    }

    fn max_diff(a: &HogFeatureMap, b: &HogFeatureMap) -> f64 {
        a.cells
            .data()
            .iter()
            .zip(b.cells.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn quarter_turn_shifts_orientation_by_half_the_bins() {
        // with 18 unsigned bins a 90 degree turn is exactly 9 bins
        let config = HogConfig {
            bins: 18,
            ..Default::default()
        };
        let n = 12;
        let img = uniform_array(&mut seeded(4), &[n, n], 0.0, 1.0);
        let turned = Array::from_fn(n, n, |i, j| img.get2(j, n - 1 - i));
        let a = compute_hog(&img, &config).unwrap();
        let b = compute_hog(&turned, &config).unwrap();
        let g = n / config.cell_size;
        for i in 0..g {
            for j in 0..g {
                let src = a.cell(j, g - 1 - i);
                let dst = b.cell(i, j);
                for bin in 0..18 {
                    assert!((dst[bin] - src[(bin + 9) % 18]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn brightness_offset_and_contrast_invariance() {
        let img = uniform_array(&mut seeded(5), &[16, 16], 0.0, 1.0);
        let base = compute_hog(&img, &HogConfig::default()).unwrap();
        let shifted = compute_hog(&img.map(|v| v + 0.25), &HogConfig::default()).unwrap();
        assert!(max_diff(&base, &shifted) < 1e-12);
        let scaled = compute_hog(&img.map(|v| v * 3.0), &HogConfig::default()).unwrap();
        assert!(max_diff(&base, &scaled) < 1e-9);
    }

    #[test]
    fn luma_weights() {
        let rgb = Array::new([1, 1, 3], alloc::vec![1.0, 0.0, 0.0]).unwrap();
        assert!((luma(&rgb).unwrap().get2(0, 0) - 0.299).abs() < 1e-15);
    }
}

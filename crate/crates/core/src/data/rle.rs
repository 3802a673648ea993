use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

/// Uncompressed column-major run-length encoding, COCO style: runs
/// alternate between 0s and 1s and always start with a (possibly empty)
/// run of 0s.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RleMask {
    pub grid: (usize, usize),
    pub runs: Vec<usize>,
}

impl RleMask {
    pub fn encode(mask: &BinaryMask) -> Self {
        let (rows, cols) = mask.grid();
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for c in 0..cols {
            for r in 0..rows {
                let bit = mask.get(r, c);
                if bit != current {
                    runs.push(len);
                    current = bit;
                    len = 0;
                }
                len += 1;
            }
        }
        runs.push(len);
        Self {
            grid: (rows, cols),
            runs,
        }
    }

    pub fn decode(&self) -> Result<BinaryMask> {
        let (rows, cols) = self.grid;
        let sum: usize = self.runs.iter().sum();
        if sum != rows * cols {
            return Err(Error::RunSumMismatch { sum, rows, cols });
        }
        let mut mask = BinaryMask::empty(rows, cols);
        let mut pos = 0;
        for (i, &run) in self.runs.iter().enumerate() {
            if i % 2 == 1 {
                for p in pos..pos + run {
                    mask.set(p % rows, p / rows, true);
                }
            }
            pos += run;
        }
        Ok(mask)
    }
}

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A binary mask over a `rows x cols` grid, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::shape(
                "mask",
                alloc::format!("{} bits for a {}x{} grid", bits.len(), rows, cols),
            ));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                bits.push(f(r, c));
            }
        }
        Self { rows, cols, bits }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.bits[r * self.cols + c] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub(crate) fn check_grid(&self, other: &Self) -> Result<()> {
        if self.grid() != other.grid() {
            return Err(Error::GridMismatch(self.grid(), other.grid()));
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &Self) -> Result<usize> {
        self.check_grid(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count())
    }

    pub fn union_count(&self, other: &Self) -> Result<usize> {
        self.check_grid(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a || **b)
            .count())
    }

    pub fn union_with(&mut self, other: &Self) -> Result<()> {
        self.check_grid(other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
        Ok(())
    }

    /// Nearest-neighbour upsampling by an integer factor on both axes.
    pub fn upsample(&self, factor: usize) -> Self {
        Self::from_fn(self.rows * factor, self.cols * factor, |r, c| {
            self.get(r / factor, c / factor)
        })
    }
}

/// What a [`MaskSet`] describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MaskRole {
    PredictedSlots,
    Grounding,
}

/// Masks sharing one grid. Predicted-slot masks are expected to partition
/// the grid; grounding masks may overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub masks: Vec<BinaryMask>,
    pub role: MaskRole,
}

impl MaskSet {
    pub fn new(masks: Vec<BinaryMask>, role: MaskRole) -> Result<Self> {
        if let Some(first) = masks.first() {
            for m in &masks[1..] {
                first.check_grid(m)?;
            }
        }
        Ok(Self { masks, role })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn grid(&self) -> Option<(usize, usize)> {
        self.masks.first().map(BinaryMask::grid)
    }

    /// Union of the masks at `indices`.
    pub fn union_of(&self, indices: impl IntoIterator<Item = usize>) -> Result<BinaryMask> {
        let (rows, cols) = self.grid().ok_or(Error::Empty("mask set"))?;
        let mut out = BinaryMask::empty(rows, cols);
        for i in indices {
            out.union_with(&self.masks[i])?;
        }
        Ok(out)
    }

    pub fn union_all(&self) -> Result<BinaryMask> {
        self.union_of(0..self.masks.len())
    }

    /// Pairwise disjoint and covering every cell.
    pub fn is_partition(&self) -> bool {
        let Some((rows, cols)) = self.grid() else {
            return false;
        };
        (0..rows * cols).all(|i| self.masks.iter().filter(|m| m.bits[i]).count() == 1)
    }

    pub fn upsample(&self, factor: usize) -> Self {
        Self {
            masks: self.masks.iter().map(|m| m.upsample(factor)).collect(),
            role: self.role,
        }
    }
}

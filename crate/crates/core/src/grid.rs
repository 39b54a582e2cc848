//! Voxel grids in 2 or 3 dimensions, stored row-major (last axis fastest).
//!
//! Phase convention: 1 is the hard (black) phase, 0 the soft (white) phase.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::InvalidShape(format!("expected 2 or 3 dimensions, got {}", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape(format!("zero-length axis in {dims:?}")));
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn ndim(&self) -> usize {
        self.0.len()
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = alloc::vec![1; self.0.len()];
        for a in (0..self.0.len().saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.0[a + 1];
        }
        s
    }

    /// Dims padded to three axes as `(n0, n1, n2)`; 2D grids get a leading 1.
    pub fn as_3d(&self) -> [usize; 3] {
        match self.0.as_slice() {
            [a, b] => [1, *a, *b],
            [a, b, c] => [*a, *b, *c],
            _ => unreachable!("shape invariant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    shape: Shape,
    values: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!("{} values for shape {:?}", values.len(), shape.dims())));
        }
        Ok(VoxelGrid { shape, values })
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let n = shape.len();
        VoxelGrid { shape, values: alloc::vec![value; n] }
    }

    /// Even-parity checkerboard: voxel is 1 when the index sum is odd.
    pub fn checkerboard(shape: Shape) -> Self {
        let strides = shape.strides();
        let dims = shape.dims().to_vec();
        let values = (0..shape.len())
            .map(|flat| {
                let s: usize = (0..dims.len()).map(|a| (flat / strides[a]) % dims[a]).sum();
                (s % 2) as f64
            })
            .collect();
        VoxelGrid { shape, values }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn is_unit_range(&self) -> bool {
        self.values.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    pub fn ensure_binary(&self) -> Result<()> {
        if self.is_binary() {
            Ok(())
        } else {
            Err(Error::NotBinary)
        }
    }

    /// Threshold at a fixed level (used for decoder outputs).
    pub fn binarize(&self, level: f64) -> VoxelGrid {
        VoxelGrid {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| if v >= level { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Swap phases 0 and 1 (or `v -> 1 - v` on continuous grids).
    pub fn inverted(&self) -> VoxelGrid {
        VoxelGrid { shape: self.shape.clone(), values: self.values.iter().map(|&v| 1.0 - v).collect() }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

//! Reshape-stack ensembling: a concatenated feature vector of length `D` is laid
//! out as `D / S²` channels of an `S x S` grid.
//!
//! Channel `c` is the contiguous chunk `v[c·S² .. (c+1)·S²]`, row-major inside
//! the grid, so input index `i` lands at channel `i / S²`, row `(i % S²) / S`,
//! column `i % S`. Backbones whose dimension is a multiple of `S²` therefore
//! occupy whole channels.

use crate::error::{Error, Result};

/// An `S x S x C` stack, stored channel-major (`[C][S][S]`).
#[derive(Debug, Clone, PartialEq)]
pub struct StackedTensor<T = f32> {
    side: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Copy> StackedTensor<T> {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> T {
        assert!(channel < self.channels && row < self.side && col < self.side);
        self.data[(channel * self.side + row) * self.side + col]
    }

    /// Values of one channel, row-major.
    pub fn channel(&self, channel: usize) -> &[T] {
        let plane = self.side * self.side;
        &self.data[channel * plane..(channel + 1) * plane]
    }
}

/// Number of channels produced for dimension `dim` at grid side `side`.
pub fn stacked_channels(dim: usize, side: usize) -> Result<usize> {
    let plane = side * side;
    if side == 0 || dim == 0 || dim % plane != 0 {
        return Err(Error::Indivisible { dim, side });
    }
    Ok(dim / plane)
}

pub fn reshape_stack<T: Copy>(v: Vec<T>, side: usize) -> Result<StackedTensor<T>> {
    let channels = stacked_channels(v.len(), side)?;
    Ok(StackedTensor {
        side,
        channels,
        data: v,
    })
}

pub fn flatten<T: Copy>(t: StackedTensor<T>) -> Vec<T> {
    t.data
}

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::VoxelError;

/// Placement of a regular lattice in world space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridFrame {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub voxel_size: f64,
}

impl GridFrame {
    pub fn new(dims: [usize; 3], origin: [f64; 3], voxel_size: f64) -> Result<Self, VoxelError> {
        if dims.contains(&0) {
            return Err(VoxelError::InvalidDims(dims));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(VoxelError::InvalidVoxelSize(voxel_size));
        }
        if origin.iter().any(|c| !c.is_finite()) {
            return Err(VoxelError::NonFinite);
        }
        Ok(Self {
            dims,
            origin,
            voxel_size,
        })
    }

    /// Cube of `m` voxels per side centered on `center` with the given side length.
    pub fn cube(m: usize, center: [f64; 3], side: f64) -> Result<Self, VoxelError> {
        let half = side / 2.0;
        Self::new(
            [m, m, m],
            [center[0] - half, center[1] - half, center[2] - half],
            side / m as f64,
        )
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let yz = idx / self.dims[0];
        [x, yz % self.dims[1], yz / self.dims[1]]
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        let s = self.voxel_size;
        Vector3::new(
            self.origin[0] + (x as f64 + 0.5) * s,
            self.origin[1] + (y as f64 + 0.5) * s,
            self.origin[2] + (z as f64 + 0.5) * s,
        )
    }

    /// Voxel holding `p` under half-open binning, or `None` when outside the box.
    pub fn locate(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    pub fn min_corner(&self) -> Vector3<f64> {
        Vector3::from(self.origin)
    }

    pub fn max_corner(&self) -> Vector3<f64> {
        let s = self.voxel_size;
        Vector3::new(
            self.origin[0] + self.dims[0] as f64 * s,
            self.origin[1] + self.dims[1] as f64 * s,
            self.origin[2] + self.dims[2] as f64 * s,
        )
    }
}

/// Binary occupancy over a [`GridFrame`], bit-packed x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    frame: GridFrame,
    words: Vec<u64>,
}

impl VoxelGrid {
    pub fn empty(frame: GridFrame) -> Self {
        let words = vec![0u64; frame.len().div_ceil(64)];
        Self { frame, words }
    }

    /// Builds a grid from one boolean per voxel in x-fastest order.
    pub fn from_bools(frame: GridFrame, occupancy: &[bool]) -> Result<Self, VoxelError> {
        if occupancy.len() != frame.len() {
            return Err(VoxelError::LengthMismatch {
                expected: frame.len(),
                got: occupancy.len(),
            });
        }
        let mut g = Self::empty(frame);
        for (i, &b) in occupancy.iter().enumerate() {
            if b {
                g.words[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(g)
    }

    pub(crate) fn from_words(frame: GridFrame, mut words: Vec<u64>) -> Result<Self, VoxelError> {
        let n = frame.len();
        if words.len() != n.div_ceil(64) {
            return Err(VoxelError::LengthMismatch {
                expected: n.div_ceil(64) * 64,
                got: words.len() * 64,
            });
        }
        if !n.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (n % 64)) - 1;
            }
        }
        Ok(Self { frame, words })
    }

    pub fn frame(&self) -> &GridFrame {
        &self.frame
    }

    pub fn dims(&self) -> [usize; 3] {
        self.frame.dims
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get_linear(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.get_linear(self.frame.linear(x, y, z))
    }

    #[inline]
    pub fn set_linear(&mut self, i: usize, value: bool) {
        let bit = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.frame.linear(x, y, z);
        self.set_linear(i, value);
    }

    /// Occupied voxel at world point `p`; false outside the box.
    pub fn occupied_at(&self, p: &Vector3<f64>) -> bool {
        self.frame
            .locate(p)
            .is_some_and(|[x, y, z]| self.get(x, y, z))
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Linear indices of occupied voxels in ascending order.
    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let b = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * 64 + b)
            })
        })
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.frame.len()).map(|i| self.get_linear(i)).collect()
    }

    /// Occupancy as 0/1 reals in x-fastest order.
    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.frame.len())
            .map(|i| if self.get_linear(i) { 1.0 } else { 0.0 })
            .collect()
    }

    /// Thresholds probabilities (x-fastest) into a grid: occupied iff `p >= threshold`.
    pub fn from_probabilities(
        frame: GridFrame,
        probs: &[f64],
        threshold: f64,
    ) -> Result<Self, VoxelError> {
        let bools: Vec<bool> = probs.iter().map(|&p| p >= threshold).collect();
        Self::from_bools(frame, &bools)
    }

    pub fn ensure_comparable(&self, other: &VoxelGrid) -> Result<(), VoxelError> {
        if self.frame != other.frame {
            return Err(VoxelError::FrameMismatch);
        }
        Ok(())
    }

    pub fn union_with(&mut self, other: &VoxelGrid) -> Result<(), VoxelError> {
        self.ensure_comparable(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    /// True when every occupied voxel of `self` is occupied in `other`.
    pub fn is_subset_of(&self, other: &VoxelGrid) -> Result<bool, VoxelError> {
        self.ensure_comparable(other)?;
        Ok(self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0))
    }
}

use nalgebra::Vector3;

use super::{GridFrame, VoxelError, VoxelGrid};

/// Ordered 3D points in meters. Coordinates are always finite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, VoxelError> {
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(VoxelError::NonFinite);
        }
        Ok(Self { points })
    }

    pub fn from_arrays(points: &[[f64; 3]]) -> Result<Self, VoxelError> {
        Self::new(points.iter().map(|p| Vector3::from(*p)).collect())
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p);
        Some(sum / self.points.len() as f64)
    }

    /// Axis-aligned bounds as (min, max).
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    pub fn translated(&self, t: &Vector3<f64>) -> Self {
        Self {
            points: self.points.iter().map(|p| p + t).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| p * s).collect(),
        }
    }

    /// Copy shifted so that its centroid sits at the origin.
    pub fn centered(&self) -> Self {
        match self.centroid() {
            Some(c) => self.translated(&-c),
            None => self.clone(),
        }
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }
}

/// Result of binning a cloud into a grid.
#[derive(Debug, Clone)]
pub struct Voxelized {
    pub grid: VoxelGrid,
    /// Points that fell outside the grid box.
    pub dropped: usize,
}

/// Marks every voxel whose half-open cell contains at least one point.
pub fn voxelize(cloud: &PointCloud, frame: GridFrame) -> Voxelized {
    let mut grid = VoxelGrid::empty(frame);
    let mut dropped = 0;
    for p in cloud.points() {
        match frame.locate(p) {
            Some([x, y, z]) => grid.set(x, y, z, true),
            None => dropped += 1,
        }
    }
    Voxelized { grid, dropped }
}

/// Centers of all occupied voxels, in ascending linear-index order.
pub fn devoxelize(grid: &VoxelGrid) -> PointCloud {
    let frame = grid.frame();
    let points = grid
        .occupied()
        .map(|i| {
            let [x, y, z] = frame.unravel(i);
            frame.voxel_center(x, y, z)
        })
        .collect();
    PointCloud { points }
}

//! Binary voxel grids, point clouds and the overlap metrics used to score
//! reconstructions.

mod cloud;
mod grid;
pub mod io;
mod metrics;

use std::path::{Path, PathBuf};

pub use cloud::{devoxelize, voxelize, PointCloud, Voxelized};
pub use grid::{GridFrame, VoxelGrid};
pub use metrics::{accuracy, hit_rate, iou, overlap_counts, MetricReport, OverlapCounts};

#[derive(Debug, thiserror::Error)]
pub enum VoxelError {
    #[error("grid dimensions must be positive, got {0:?}")]
    InvalidDims([usize; 3]),
    #[error("voxel size must be positive and finite, got {0}")]
    InvalidVoxelSize(f64),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("occupancy length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("grids do not share dims, origin and voxel size")]
    FrameMismatch,
    #[error("metric undefined: both grids are empty")]
    EmptyUnion,
    #[error("{0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl VoxelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

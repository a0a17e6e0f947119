//! Synthetic depth-scan rig: ray-cast depth images of a mesh from hemisphere
//! viewpoints, back-projection to partial clouds, and solid ground-truth grids.

mod bvh;
mod camera;
pub mod io;
mod mesh;
mod render;
pub mod shapes;
mod solid;

use std::path::{Path, PathBuf};

use nalgebra::Vector3;

pub use camera::{azimuth_of, hemisphere_views, Camera, DEFAULT_FOV};
pub use mesh::{closest_point_on_triangle, ray_triangle, TriangleMesh};
pub use render::{backproject, render_depth, DepthImage};
pub use solid::mesh_to_solid_grid;

use crate::voxel::{voxelize, GridFrame, VoxelError, VoxelGrid};

/// Camera distance of the scanning rig (meters).
pub const RIG_RADIUS: f64 = 1.6;
/// Number of scans per object in the evaluation protocol.
pub const RIG_VIEWS: usize = 125;
/// Full-scale depth resolution; the desk default is [`DESK_IMAGE_SIZE`].
pub const FULL_IMAGE_SIZE: usize = 512;
pub const DESK_IMAGE_SIZE: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("grid box does not enclose the mesh")]
    NonEnclosing,
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ScanError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Cubic frame around a mesh: centered on its bounding box, side = longest
/// extent times `1 + margin`.
pub fn object_frame(mesh: &TriangleMesh, m: usize, margin: f64) -> Result<GridFrame, ScanError> {
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| ScanError::InvalidMesh("mesh has no triangles".into()))?;
    let center = (lo + hi) / 2.0;
    let side = (hi - lo).max() * (1.0 + margin);
    Ok(GridFrame::cube(m, center.into(), side)?)
}

pub fn mesh_center(mesh: &TriangleMesh) -> Option<Vector3<f64>> {
    mesh.bounds().map(|(lo, hi)| (lo + hi) / 2.0)
}

/// Partial observation of one view: render, back-project and bin into `frame`.
pub fn scan_view(mesh: &TriangleMesh, cam: &Camera, frame: GridFrame) -> Result<VoxelGrid, ScanError> {
    let img = render_depth(mesh, cam)?;
    let cloud = backproject(&img, cam)?;
    Ok(voxelize(&cloud, frame).grid)
}

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RganError;
use crate::scan::shapes::ToyShape;
use crate::scan::{
    hemisphere_views, mesh_center, mesh_to_solid_grid, object_frame, scan_view, TriangleMesh,
    DEFAULT_FOV, RIG_RADIUS,
};
use crate::voxel::{io as vio, VoxelGrid};

/// Relative padding of the object frame around the mesh bounding box.
pub const FRAME_MARGIN: f64 = 0.1;

/// Partial views of one object and its solid ground truth, all in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub views: Vec<VoxelGrid>,
    pub truth: VoxelGrid,
}

/// Renders `n_views` rig views of `mesh` and voxelizes them with the solid
/// truth into an `m`-cube around the object.
pub fn sample_from_mesh(
    name: &str,
    mesh: &TriangleMesh,
    m: usize,
    n_views: usize,
    image_size: usize,
) -> Result<Sample, RganError> {
    let frame = object_frame(mesh, m, FRAME_MARGIN)?;
    let truth = mesh_to_solid_grid(mesh, frame)?;
    let center = mesh_center(mesh).expect("frame exists, so the mesh is nonempty");
    let cams = hemisphere_views(n_views, RIG_RADIUS, center, image_size, DEFAULT_FOV)?;
    let views = cams
        .iter()
        .map(|c| scan_view(mesh, c, frame))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Sample {
        name: name.into(),
        views,
        truth,
    })
}

/// The five canonical toy shapes.
pub fn toy_dataset(m: usize, n_views: usize, image_size: usize) -> Result<Vec<Sample>, RganError> {
    ToyShape::ALL
        .iter()
        .map(|s| sample_from_mesh(s.name(), &s.mesh(), m, n_views, image_size))
        .collect()
}

/// One jittered instance of each toy shape.
pub fn perturbed_toy_dataset(
    m: usize,
    n_views: usize,
    image_size: usize,
    seed: u64,
    amount: f64,
) -> Result<Vec<Sample>, RganError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ToyShape::ALL
        .iter()
        .map(|s| {
            let mesh = s.perturbed(&mut rng, amount);
            sample_from_mesh(&format!("{}_p", s.name()), &mesh, m, n_views, image_size)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    truth: String,
    views: Vec<String>,
}

const MANIFEST: &str = "dataset.json";

/// Writes one directory per sample plus a `dataset.json` manifest.
pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<(), RganError> {
    let mut manifest = Vec::with_capacity(samples.len());
    for s in samples {
        let sub = dir.join(&s.name);
        std::fs::create_dir_all(&sub).map_err(|e| RganError::io(&sub, e))?;
        vio::write_grid(sub.join("truth.vxg"), &s.truth)?;
        let mut views = Vec::with_capacity(s.views.len());
        for (i, v) in s.views.iter().enumerate() {
            let rel = format!("{}/view_{i:03}.vxg", s.name);
            vio::write_grid(dir.join(&rel), v)?;
            views.push(rel);
        }
        manifest.push(ManifestEntry {
            name: s.name.clone(),
            truth: format!("{}/truth.vxg", s.name),
            views,
        });
    }
    let path = dir.join(MANIFEST);
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| RganError::json(&path, e))?;
    std::fs::write(&path, body + "\n").map_err(|e| RganError::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>, RganError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| RganError::io(&path, e))?;
    let manifest: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| RganError::json(&path, e))?;
    manifest
        .into_iter()
        .map(|e| {
            let truth = vio::read_grid(dir.join(&e.truth))?;
            let views = e
                .views
                .iter()
                .map(|v| vio::read_grid(dir.join(v)))
                .collect::<Result<Vec<_>, _>>()?;
            if views.iter().any(|v| v.frame() != truth.frame()) {
                return Err(RganError::FrameMismatch);
            }
            Ok(Sample {
                name: e.name,
                views,
                truth,
            })
        })
        .collect()
}

use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Category, GraspStrategy, KnowledgeBase, KnowledgeEntry, RetrievalError};
use crate::scan::shapes::ToyShape;
use crate::scan::{mesh_to_solid_grid, object_frame};
use crate::voxel::{devoxelize, io as vio};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    category: Category,
    cloud: String,
    grasp: GraspStrategy,
}

/// Reads a JSON manifest and the PLY clouds it references (relative to the
/// manifest's directory).
pub fn load_kb(path: &Path) -> Result<KnowledgeBase, RetrievalError> {
    let text = std::fs::read_to_string(path).map_err(|source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let records: Vec<Record> = serde_json::from_str(&text).map_err(|e| RetrievalError::Manifest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let entries = records
        .into_iter()
        .map(|r| {
            r.grasp.validate(&r.id)?;
            let cloud = vio::load_ply(dir.join(&r.cloud)).map_err(|e| RetrievalError::Entry {
                id: r.id.clone(),
                msg: e.to_string(),
            })?;
            Ok(KnowledgeEntry {
                id: r.id,
                category: r.category,
                cloud,
                strategy: r.grasp,
            })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    KnowledgeBase::new(entries)
}

/// Writes `clouds/<id>.ply` next to the manifest at `path`.
pub fn save_kb(kb: &KnowledgeBase, path: &Path) -> Result<(), RetrievalError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let clouds = dir.join("clouds");
    std::fs::create_dir_all(&clouds).map_err(|source| RetrievalError::Io {
        path: clouds.clone(),
        source,
    })?;
    let mut records = Vec::with_capacity(kb.len());
    for e in kb.entries() {
        let rel = format!("clouds/{}.ply", e.id);
        vio::save_ply(dir.join(&rel), &e.cloud)?;
        records.push(Record {
            id: e.id.clone(),
            category: e.category,
            cloud: rel,
            grasp: e.strategy,
        });
    }
    let body = serde_json::to_string_pretty(&records).expect("records serialize");
    std::fs::write(path, body + "\n").map_err(|source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn quat(axis: Vector3<f64>, angle: f64) -> [f64; 4] {
    let q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
    let q = q.quaternion();
    let n = q.norm();
    [q.w / n, q.i / n, q.j / n, q.k / n]
}

/// Twelve entries, three per category, built from jittered toy shapes
/// voxelized at `m`^3 and centered. Grasp points sit on the object's
/// bounding box: the top face for lift and press, the +x side otherwise.
pub fn toy_kb(m: usize, seed: u64) -> Result<KnowledgeBase, RetrievalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(12);
    for (ci, &category) in Category::ALL.iter().enumerate() {
        for k in 0..3 {
            let shape = ToyShape::ALL[(ci + 2 * k) % ToyShape::ALL.len()];
            let mesh = shape.perturbed(&mut rng, 0.2);
            let frame = object_frame(&mesh, m, 0.1).map_err(|e| RetrievalError::Entry {
                id: shape.name().into(),
                msg: e.to_string(),
            })?;
            let solid = mesh_to_solid_grid(&mesh, frame).map_err(|e| RetrievalError::Entry {
                id: shape.name().into(),
                msg: e.to_string(),
            })?;
            let cloud = devoxelize(&solid).centered();
            let (lo, hi) = cloud.bounds().ok_or(RetrievalError::EmptyCloud)?;
            let (point, q, close) = match category {
                Category::Lift | Category::Press => (
                    [0.0, 0.0, hi.z],
                    quat(Vector3::x(), std::f64::consts::PI),
                    if category == Category::Press { 0.2 } else { 0.7 },
                ),
                Category::HandleGrasp | Category::WrapGrasp => (
                    [hi.x, 0.0, (lo.z + hi.z) / 2.0],
                    quat(Vector3::y(), -std::f64::consts::FRAC_PI_2),
                    if category == Category::WrapGrasp { 0.9 } else { 0.6 },
                ),
            };
            let joints = std::array::from_fn(|j| close * (1.0 + 0.05 * j as f64).min(1.5));
            entries.push(KnowledgeEntry {
                id: format!("{}_{}_{k}", category.as_str(), shape.name()),
                category,
                cloud,
                strategy: GraspStrategy {
                    grasp_point: point,
                    wrist_orientation: q,
                    joint_angles: joints,
                },
            });
        }
    }
    KnowledgeBase::new(entries)
}

//! Task-categorized grasp knowledge base with Chamfer-distance retrieval and
//! grasp transfer onto a reconstructed object.

mod kb;
mod kdtree;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use kb::{load_kb, save_kb, toy_kb};
pub use kdtree::KdTree;

use crate::voxel::{PointCloud, VoxelError};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("no knowledge-base entries in category {0}")]
    EmptyCategory(Category),
    #[error("degenerate bounding box on the {0} cloud")]
    Degenerate(&'static str),
    #[error("entry {id}: wrist quaternion norm {norm} is not 1")]
    BadQuaternion { id: String, norm: f64 },
    #[error("entry {id}: {msg}")]
    Entry { id: String, msg: String },
    #[error("duplicate entry id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error("{path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    HandleGrasp,
    WrapGrasp,
    Lift,
    Press,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::HandleGrasp,
        Category::WrapGrasp,
        Category::Lift,
        Category::Press,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::HandleGrasp => "handle_grasp",
            Category::WrapGrasp => "wrap_grasp",
            Category::Lift => "lift",
            Category::Press => "press",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| RetrievalError::UnknownCategory(s.into()))
    }
}

/// Hand placement in the object frame: grasp point (m), wrist orientation as a
/// unit quaternion `(w, x, y, z)` and eight joint angles (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspStrategy {
    #[serde(rename = "point")]
    pub grasp_point: [f64; 3],
    #[serde(rename = "quat")]
    pub wrist_orientation: [f64; 4],
    #[serde(rename = "joints")]
    pub joint_angles: [f64; 8],
}

pub const QUAT_TOLERANCE: f64 = 1e-9;

impl GraspStrategy {
    pub fn quat_norm(&self) -> f64 {
        self.wrist_orientation.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn validate(&self, id: &str) -> Result<(), RetrievalError> {
        let finite = self
            .grasp_point
            .iter()
            .chain(&self.wrist_orientation)
            .chain(&self.joint_angles)
            .all(|v| v.is_finite());
        if !finite {
            return Err(RetrievalError::Entry {
                id: id.into(),
                msg: "non-finite grasp value".into(),
            });
        }
        let norm = self.quat_norm();
        if (norm - 1.0).abs() > QUAT_TOLERANCE {
            return Err(RetrievalError::BadQuaternion { id: id.into(), norm });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeEntry {
    pub id: String,
    pub category: Category,
    pub cloud: PointCloud,
    pub strategy: GraspStrategy,
}

/// Entries sorted by id with a search tree over each centered cloud.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    entries: Vec<KnowledgeEntry>,
    trees: Vec<KdTree>,
}

impl PartialEq for KnowledgeBase {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl KnowledgeBase {
    pub fn new(mut entries: Vec<KnowledgeEntry>) -> Result<Self, RetrievalError> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        for w in entries.windows(2) {
            if w[0].id == w[1].id {
                return Err(RetrievalError::DuplicateId(w[0].id.clone()));
            }
        }
        for e in &entries {
            if e.cloud.is_empty() {
                return Err(RetrievalError::Entry {
                    id: e.id.clone(),
                    msg: "cloud is empty".into(),
                });
            }
            e.strategy.validate(&e.id)?;
        }
        let trees = entries.iter().map(|e| KdTree::build(&e.cloud.centered())).collect();
        Ok(Self { entries, trees })
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

fn directed(from: &PointCloud, to: &KdTree) -> f64 {
    from.points()
        .iter()
        .map(|p| to.nearest_sq(p).expect("tree is nonempty"))
        .sum()
}

/// Symmetric sum of squared nearest-neighbor distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64, RetrievalError> {
    if a.is_empty() || b.is_empty() {
        return Err(RetrievalError::EmptyCloud);
    }
    Ok(chamfer_with(a, &KdTree::build(a), b, &KdTree::build(b)))
}

fn chamfer_with(a: &PointCloud, ta: &KdTree, b: &PointCloud, tb: &KdTree) -> f64 {
    directed(a, tb) + directed(b, ta)
}

/// Closest entry of `category` to the centroid-normalized `recon`, with the
/// minimum distance. Ties go to the smaller id.
pub fn retrieve<'k>(
    recon: &PointCloud,
    category: Category,
    kb: &'k KnowledgeBase,
) -> Result<(&'k KnowledgeEntry, f64), RetrievalError> {
    if recon.is_empty() {
        return Err(RetrievalError::EmptyCloud);
    }
    let query = recon.centered();
    let tq = KdTree::build(&query);
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in kb.entries.iter().enumerate() {
        if e.category != category {
            continue;
        }
        let d = directed(&query, &kb.trees[i]) + directed(&e.cloud.centered(), &tq);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    let (i, d) = best.ok_or(RetrievalError::EmptyCategory(category))?;
    Ok((&kb.entries[i], d))
}

fn centroid_and_extent(cloud: &PointCloud, which: &'static str) -> Result<(Vector3<f64>, Vector3<f64>), RetrievalError> {
    let c = cloud.centroid().ok_or(RetrievalError::EmptyCloud)?;
    let (lo, hi) = cloud.bounds().ok_or(RetrievalError::EmptyCloud)?;
    let ext = hi - lo;
    if ext.iter().any(|&e| e <= 0.0) {
        return Err(RetrievalError::Degenerate(which));
    }
    Ok((c, ext))
}

/// Moves the entry's grasp point onto `recon`: relative to the centroid and
/// scaled per axis by the ratio of bounding-box extents. Orientation and
/// joints are copied.
pub fn transfer_strategy(entry: &KnowledgeEntry, recon: &PointCloud) -> Result<GraspStrategy, RetrievalError> {
    let (ce, ee) = centroid_and_extent(&entry.cloud, "entry")?;
    let (cr, er) = centroid_and_extent(recon, "reconstruction")?;
    let g = Vector3::from(entry.strategy.grasp_point);
    let moved = (g - ce).component_mul(&er.component_div(&ee)) + cr;
    Ok(GraspStrategy {
        grasp_point: moved.into(),
        ..entry.strategy
    })
}

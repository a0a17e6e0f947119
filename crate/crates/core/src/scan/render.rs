use nalgebra::Vector3;
use rayon::prelude::*;

use super::bvh::Bvh;
use super::{Camera, ScanError, TriangleMesh};
use crate::voxel::PointCloud;

/// Per-pixel Euclidean range along each camera ray, row-major. `NaN` marks no hit.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, depth: Vec<f64>) -> Result<Self, ScanError> {
        if depth.len() != width * height {
            return Err(ScanError::Format(format!(
                "depth buffer has {} values for a {width}x{height} image",
                depth.len()
            )));
        }
        if depth.iter().any(|d| d.is_finite() && *d <= 0.0) {
            return Err(ScanError::Format("finite depths must be positive".into()));
        }
        Ok(Self {
            width,
            height,
            depth,
        })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.depth[row * self.width + col]
    }

    pub fn hit_count(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }

    /// Bit-level equality that treats the no-hit sentinel as equal to itself.
    pub fn bit_eq(&self, other: &DepthImage) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .depth
                .iter()
                .zip(&other.depth)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Ray-casts every pixel against the mesh; rows are processed in parallel.
pub fn render_depth(mesh: &TriangleMesh, cam: &Camera) -> Result<DepthImage, ScanError> {
    if mesh.is_empty() {
        return Err(ScanError::InvalidMesh("mesh has no triangles".into()));
    }
    cam.validate()?;
    let bvh = Bvh::build(mesh);
    let (fwd, right, up) = cam.basis();
    let origin = cam.origin();
    let depth: Vec<f64> = (0..cam.height)
        .into_par_iter()
        .flat_map_iter(|row| {
            let bvh = &bvh;
            (0..cam.width).map(move |col| {
                let dir = cam.ray_dir_in(&fwd, &right, &up, row, col);
                bvh.intersect(&origin, &dir).unwrap_or(f64::NAN)
            })
        })
        .collect();
    Ok(DepthImage {
        width: cam.width,
        height: cam.height,
        depth,
    })
}

/// Inverse of [`render_depth`]: one world point per finite pixel.
pub fn backproject(img: &DepthImage, cam: &Camera) -> Result<PointCloud, ScanError> {
    if img.width != cam.width || img.height != cam.height {
        return Err(ScanError::InvalidCamera(format!(
            "image is {}x{} but camera is {}x{}",
            img.width, img.height, cam.width, cam.height
        )));
    }
    let (fwd, right, up) = cam.basis();
    let origin = cam.origin();
    let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(img.hit_count());
    for row in 0..img.height {
        for col in 0..img.width {
            let d = img.at(row, col);
            if d.is_finite() {
                pts.push(origin + cam.ray_dir_in(&fwd, &right, &up, row, col) * d);
            }
        }
    }
    Ok(PointCloud::new(pts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::shapes;

    fn cam_at(pos: Vector3<f64>, size: usize) -> Camera {
        Camera::new(pos, Vector3::zeros(), Vector3::z(), 0.6, size, size).unwrap()
    }

    #[test]
    fn perpendicular_square_center_depth() {
        let d = 1.3;
        // unit square in the x-z plane at y = 0, camera on +y at distance d
        let mesh = TriangleMesh::new(
            vec![
                Vector3::new(-0.5, 0.0, -0.5),
                Vector3::new(0.5, 0.0, -0.5),
                Vector3::new(0.5, 0.0, 0.5),
                Vector3::new(-0.5, 0.0, 0.5),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let img = render_depth(&mesh, &cam_at(Vector3::new(0.0, d, 0.0), 9)).unwrap();
        assert!((img.at(4, 4) - d).abs() < 1e-12);
    }

    #[test]
    fn empty_view_is_all_sentinel() {
        let mesh = shapes::cube(0.1);
        let cam = Camera::new(
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 3.0, 0.0),
            Vector3::z(),
            0.5,
            6,
            6,
        )
        .unwrap();
        let img = render_depth(&mesh, &cam).unwrap();
        assert_eq!(img.hit_count(), 0);
        assert!(backproject(&img, &cam).unwrap().is_empty());
    }

    #[test]
    fn rejects_empty_mesh() {
        let mesh = TriangleMesh::new(vec![], vec![]).unwrap();
        assert!(render_depth(&mesh, &cam_at(Vector3::new(0.0, 1.0, 0.0), 4)).is_err());
    }

    #[test]
    fn center_pixel_backprojects_on_axis() {
        let cam = cam_at(Vector3::new(0.0, 2.0, 0.0), 5);
        let mut depth = vec![f64::NAN; 25];
        depth[2 * 5 + 2] = 0.7;
        let img = DepthImage::new(5, 5, depth).unwrap();
        let c = backproject(&img, &cam).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c.points()[0] - Vector3::new(0.0, 1.3, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn render_is_bit_deterministic() {
        let mesh = shapes::torus(0.2, 0.06, 24, 12);
        let cam = cam_at(Vector3::new(0.3, 1.5, 0.4), 32);
        let a = render_depth(&mesh, &cam).unwrap();
        let b = render_depth(&mesh, &cam).unwrap();
        assert!(a.bit_eq(&b));
        assert!(a.hit_count() > 0);
    }
}

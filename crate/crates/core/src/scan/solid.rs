//! Solid ground-truth occupancy from a closed mesh.
//!
//! Interior voxels come from a +x parity count at each voxel center. Crossings are
//! found by projecting triangles onto the y-z plane with a top-left fill rule, so a
//! ray through a shared edge or vertex is counted exactly once. Voxels whose
//! center lies within half a voxel of the surface are also set, which keeps thin
//! parts and slightly open meshes visible.

use nalgebra::{Vector2, Vector3};

use super::mesh::closest_point_on_triangle;
use super::{ScanError, TriangleMesh};
use crate::voxel::{GridFrame, VoxelGrid};

pub fn mesh_to_solid_grid(mesh: &TriangleMesh, frame: GridFrame) -> Result<VoxelGrid, ScanError> {
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| ScanError::InvalidMesh("mesh has no triangles".into()))?;
    let (glo, ghi) = (frame.min_corner(), frame.max_corner());
    if (0..3).any(|a| lo[a] < glo[a] || hi[a] > ghi[a]) {
        return Err(ScanError::NonEnclosing);
    }
    let mut grid = VoxelGrid::empty(frame);
    fill_parity(mesh, &frame, &mut grid);
    fill_surface_band(mesh, &frame, &mut grid);
    Ok(grid)
}

/// Signed edge function with a canonical endpoint order, so the two triangles
/// sharing an edge evaluate exactly negated values.
#[inline]
fn edge_fn(p0: &Vector2<f64>, p1: &Vector2<f64>, q: &Vector2<f64>) -> f64 {
    let (a, b, sign) = if (p0.x, p0.y) <= (p1.x, p1.y) {
        (p0, p1, 1.0)
    } else {
        (p1, p0, -1.0)
    };
    sign * ((b.x - a.x) * (q.y - a.y) - (b.y - a.y) * (q.x - a.x))
}

/// Top-left rule for a counter-clockwise triangle.
#[inline]
fn is_top_left(p0: &Vector2<f64>, p1: &Vector2<f64>) -> bool {
    let d = p1 - p0;
    d.y < 0.0 || (d.y == 0.0 && d.x < 0.0)
}

fn covers(tri: &[Vector2<f64>; 3], q: &Vector2<f64>) -> bool {
    (0..3).all(|k| {
        let (p0, p1) = (&tri[k], &tri[(k + 1) % 3]);
        let e = edge_fn(p0, p1, q);
        e > 0.0 || (e == 0.0 && is_top_left(p0, p1))
    })
}

fn fill_parity(mesh: &TriangleMesh, frame: &GridFrame, grid: &mut VoxelGrid) {
    let [nx, ny, nz] = frame.dims;
    let s = frame.voxel_size;
    let o = frame.origin;
    // crossings[y + ny * z] = x coordinates where the +x ray through that row meets the surface
    let mut crossings: Vec<Vec<f64>> = vec![Vec::new(); ny * nz];
    for t in 0..mesh.triangles().len() {
        let [a, b, c] = mesh.corners(t);
        let mut tri = [a, b, c].map(|p| Vector2::new(p.y, p.z));
        let area = (tri[1] - tri[0]).perp(&(tri[2] - tri[0]));
        if area == 0.0 {
            continue;
        }
        let mut tri3 = [a, b, c];
        if area < 0.0 {
            tri.swap(1, 2);
            tri3.swap(1, 2);
        }
        let lo_y = tri.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let hi_y = tri.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let lo_z = tri.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let hi_z = tri.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let range = |lo: f64, hi: f64, origin: f64, n: usize| {
            let i0 = ((lo - origin) / s - 0.5).ceil().max(0.0) as usize;
            let i1 = ((hi - origin) / s - 0.5).floor();
            if i1 < 0.0 {
                return 0..0;
            }
            i0..(i1 as usize + 1).min(n)
        };
        let normal = (tri3[1] - tri3[0]).cross(&(tri3[2] - tri3[0]));
        for zi in range(lo_z, hi_z, o[2], nz) {
            let zc = o[2] + (zi as f64 + 0.5) * s;
            for yi in range(lo_y, hi_y, o[1], ny) {
                let yc = o[1] + (yi as f64 + 0.5) * s;
                if covers(&tri, &Vector2::new(yc, zc)) {
                    // plane: normal . (p - a) = 0, solve for x
                    let p0 = tri3[0];
                    let x = p0.x - (normal.y * (yc - p0.y) + normal.z * (zc - p0.z)) / normal.x;
                    crossings[yi + ny * zi].push(x);
                }
            }
        }
    }
    for zi in 0..nz {
        for yi in 0..ny {
            let xs = &mut crossings[yi + ny * zi];
            if xs.is_empty() {
                continue;
            }
            xs.sort_by(f64::total_cmp);
            let mut k = 0;
            for xi in 0..nx {
                let xc = o[0] + (xi as f64 + 0.5) * s;
                while k < xs.len() && xs[k] <= xc {
                    k += 1;
                }
                // crossings strictly ahead of the center along +x
                if (xs.len() - k) % 2 == 1 {
                    grid.set(xi, yi, zi, true);
                }
            }
        }
    }
}

fn fill_surface_band(mesh: &TriangleMesh, frame: &GridFrame, grid: &mut VoxelGrid) {
    let s = frame.voxel_size;
    let band = s / 2.0;
    let o = Vector3::from(frame.origin);
    for t in 0..mesh.triangles().len() {
        let [a, b, c] = mesh.corners(t);
        let lo = a.inf(&b).inf(&c).add_scalar(-band);
        let hi = a.sup(&b).sup(&c).add_scalar(band);
        let idx = |v: f64, origin: f64, n: usize, up: bool| -> isize {
            let f = (v - origin) / s - 0.5;
            // one voxel of slack on each side; the distance test decides
            let i = if up { f.ceil() } else { f.floor() } as isize;
            i.clamp(-1, n as isize)
        };
        let r: [(isize, isize); 3] = std::array::from_fn(|ax| {
            (
                idx(lo[ax], o[ax], frame.dims[ax], false).max(0),
                idx(hi[ax], o[ax], frame.dims[ax], true).min(frame.dims[ax] as isize - 1),
            )
        });
        for z in r[2].0..=r[2].1 {
            for y in r[1].0..=r[1].1 {
                for x in r[0].0..=r[0].1 {
                    let (x, y, z) = (x as usize, y as usize, z as usize);
                    if grid.get(x, y, z) {
                        continue;
                    }
                    let p = frame.voxel_center(x, y, z);
                    if (closest_point_on_triangle(&p, &a, &b, &c) - p).norm() <= band {
                        grid.set(x, y, z, true);
                    }
                }
            }
        }
    }
}

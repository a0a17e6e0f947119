//! Procedural closed meshes used for toy datasets and tests. All shapes are
//! centered on the origin and wound counter-clockwise seen from outside.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TriangleMesh;

fn mesh(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> TriangleMesh {
    TriangleMesh::new(vertices, triangles).expect("procedural mesh indices are valid")
}

/// Axis-aligned box with the given half extents.
pub fn box_mesh(half: Vector3<f64>) -> TriangleMesh {
    let v: Vec<Vector3<f64>> = (0..8)
        .map(|i| {
            Vector3::new(
                if i & 1 == 0 { -half.x } else { half.x },
                if i & 2 == 0 { -half.y } else { half.y },
                if i & 4 == 0 { -half.z } else { half.z },
            )
        })
        .collect();
    let quads = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    let tris = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    mesh(v, tris)
}

pub fn cube(side: f64) -> TriangleMesh {
    box_mesh(Vector3::repeat(side / 2.0))
}

pub fn uv_sphere(radius: f64, stacks: usize, slices: usize) -> TriangleMesh {
    ellipsoid(Vector3::repeat(radius), stacks, slices)
}

pub fn ellipsoid(radii: Vector3<f64>, stacks: usize, slices: usize) -> TriangleMesh {
    let mut v = vec![Vector3::new(0.0, 0.0, radii.z)];
    for i in 1..stacks {
        let theta = PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let phi = TAU * j as f64 / slices as f64;
            v.push(Vector3::new(
                radii.x * theta.sin() * phi.cos(),
                radii.y * theta.sin() * phi.sin(),
                radii.z * theta.cos(),
            ));
        }
    }
    v.push(Vector3::new(0.0, 0.0, -radii.z));
    let south = v.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + j % slices;
    let mut t = Vec::new();
    for j in 0..slices {
        t.push([0, ring(1, j), ring(1, j + 1)]);
        t.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j + 1), ring(i + 1, j));
            t.push([a, d, c]);
            t.push([a, c, b]);
        }
    }
    mesh(v, t)
}

/// Prism over a simple polygon in the x-y plane, centered in z. Caps are fanned
/// from `fan_apex`, which must see every other polygon vertex.
pub fn extrude(polygon: &[[f64; 2]], height: f64, fan_apex: usize) -> TriangleMesh {
    let n = polygon.len();
    let h = height / 2.0;
    let mut v: Vec<Vector3<f64>> = polygon.iter().map(|p| Vector3::new(p[0], p[1], -h)).collect();
    v.extend(polygon.iter().map(|p| Vector3::new(p[0], p[1], h)));
    let mut t = Vec::new();
    for k in 1..n - 1 {
        let (a, b) = ((fan_apex + k) % n, (fan_apex + k + 1) % n);
        t.push([fan_apex, b, a]);
        t.push([n + fan_apex, n + a, n + b]);
    }
    for k in 0..n {
        let k1 = (k + 1) % n;
        t.push([k, k1, n + k1]);
        t.push([k, n + k1, n + k]);
    }
    mesh(v, t)
}

pub fn cylinder(radius: f64, height: f64, segments: usize) -> TriangleMesh {
    let poly: Vec<[f64; 2]> = (0..segments)
        .map(|j| {
            let a = TAU * j as f64 / segments as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect();
    extrude(&poly, height, 0)
}

/// L-shaped bracket: two arms of the given lengths and width, extruded by `depth`.
pub fn l_bracket(arm_x: f64, arm_y: f64, width: f64, depth: f64) -> TriangleMesh {
    let poly = [
        [0.0, 0.0],
        [arm_x, 0.0],
        [arm_x, width],
        [width, width],
        [width, arm_y],
        [0.0, arm_y],
    ];
    // the reflex corner (index 3) sees the whole polygon
    let m = extrude(&poly, depth, 3);
    let (lo, hi) = m.bounds().unwrap();
    m.translated(-(lo + hi) / 2.0)
}

pub fn torus(major: f64, minor: f64, major_segments: usize, minor_segments: usize) -> TriangleMesh {
    let mut v = Vec::with_capacity(major_segments * minor_segments);
    for i in 0..major_segments {
        let u = TAU * i as f64 / major_segments as f64;
        for j in 0..minor_segments {
            let w = TAU * j as f64 / minor_segments as f64;
            let r = major + minor * w.cos();
            v.push(Vector3::new(r * u.cos(), r * u.sin(), minor * w.sin()));
        }
    }
    let idx = |i: usize, j: usize| (i % major_segments) * minor_segments + j % minor_segments;
    let mut t = Vec::new();
    for i in 0..major_segments {
        for j in 0..minor_segments {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            t.push([a, b, c]);
            t.push([a, c, d]);
        }
    }
    mesh(v, t)
}

/// The five toy shape families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyShape {
    Cube,
    Sphere,
    Cylinder,
    LBracket,
    Torus,
}

impl ToyShape {
    pub const ALL: [ToyShape; 5] = [
        ToyShape::Cube,
        ToyShape::Sphere,
        ToyShape::Cylinder,
        ToyShape::LBracket,
        ToyShape::Torus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToyShape::Cube => "cube",
            ToyShape::Sphere => "sphere",
            ToyShape::Cylinder => "cylinder",
            ToyShape::LBracket => "l_bracket",
            ToyShape::Torus => "torus",
        }
    }

    /// Canonical instance, roughly 0.2 m across.
    pub fn mesh(self) -> TriangleMesh {
        self.with_params(&[1.0, 1.0, 1.0])
    }

    /// Instance with per-family proportions jittered by up to `amount` (relative).
    pub fn perturbed<R: Rng>(self, rng: &mut R, amount: f64) -> TriangleMesh {
        let k: [f64; 3] = std::array::from_fn(|_| 1.0 + rng.random_range(-amount..=amount));
        self.with_params(&k)
    }

    fn with_params(self, k: &[f64; 3]) -> TriangleMesh {
        match self {
            ToyShape::Cube => box_mesh(Vector3::new(0.08 * k[0], 0.08 * k[1], 0.08 * k[2])),
            ToyShape::Sphere => ellipsoid(Vector3::new(0.1 * k[0], 0.1 * k[1], 0.1 * k[2]), 16, 32),
            ToyShape::Cylinder => cylinder(0.07 * k[0], 0.2 * k[1], 32),
            ToyShape::LBracket => l_bracket(0.2 * k[0], 0.2 * k[1], 0.07 * k[2], 0.08),
            ToyShape::Torus => torus(0.07 * k[0], 0.035 * k[1], 32, 16),
        }
    }
}

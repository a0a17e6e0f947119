use nalgebra::Vector3;

use super::mesh::{ray_triangle, TriangleMesh};

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vector3::repeat(f64::INFINITY),
            hi: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    /// Slab test; returns entry distance if the ray meets the box before `t_max`.
    #[inline]
    fn hit(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let mut near = (self.lo[a] - origin[a]) * inv_dir[a];
            let mut far = (self.hi[a] - origin[a]) * inv_dir[a];
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            // NaN (0 * inf) keeps the current bound
            if near > t0 {
                t0 = near;
            }
            if far < t1 {
                t1 = far;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

/// Median-split bounding volume hierarchy over a mesh's triangles.
#[derive(Debug, Clone)]
pub struct Bvh<'m> {
    mesh: &'m TriangleMesh,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

const LEAF_SIZE: usize = 4;

impl<'m> Bvh<'m> {
    pub fn build(mesh: &'m TriangleMesh) -> Self {
        let n = mesh.triangles().len();
        let centroids: Vec<Vector3<f64>> = (0..n)
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                (a + b + c) / 3.0
            })
            .collect();
        let mut bvh = Self {
            mesh,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            bvh.build_node(&centroids, 0, n);
        }
        bvh
    }

    fn bounds_of(&self, start: usize, end: usize) -> Aabb {
        let mut b = Aabb::empty();
        for &t in &self.order[start..end] {
            for p in self.mesh.corners(t) {
                b.grow(&p);
            }
        }
        b
    }

    fn build_node(&mut self, centroids: &[Vector3<f64>], start: usize, end: usize) -> usize {
        let bounds = self.bounds_of(start, end);
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        let ext = bounds.hi - bounds.lo;
        let axis = ext.imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        self.nodes.push(Node::Leaf {
            bounds,
            start: 0,
            end: 0,
        });
        let left = self.build_node(centroids, start, mid);
        let right = self.build_node(centroids, mid, end);
        self.nodes[id] = Node::Inner {
            bounds,
            left,
            right,
        };
        id
    }

    /// Nearest hit distance along `dir` (unnormalized directions give parametric t).
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv_dir = dir.map(|d| 1.0 / d);
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            match &self.nodes[id] {
                Node::Leaf { bounds, start, end } => {
                    if bounds.hit(origin, &inv_dir, best).is_none() {
                        continue;
                    }
                    for &t in &self.order[*start..*end] {
                        let [a, b, c] = self.mesh.corners(t);
                        if let Some(h) = ray_triangle(origin, dir, &a, &b, &c) {
                            if h < best {
                                best = h;
                            }
                        }
                    }
                }
                Node::Inner {
                    bounds,
                    left,
                    right,
                } => {
                    if bounds.hit(origin, &inv_dir, best).is_some() {
                        stack.push(*right);
                        stack.push(*left);
                    }
                }
            }
        }
        best.is_finite().then_some(best)
    }
}

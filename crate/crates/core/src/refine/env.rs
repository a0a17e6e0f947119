//! Analytic grasp proxy. The hand approaches along the wrist's +z axis until
//! the palm touches the object; eight fingers hang from a ring around the palm
//! and each one is a straight segment that swings inward as its joint closes.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RefineError;
use crate::retrieval::{GraspStrategy, KdTree};
use crate::voxel::{PointCloud, VoxelGrid};

pub const JOINTS: usize = 8;
pub const OBS_DIM: usize = 7 + 1 + JOINTS;
pub const JOINT_LIMITS: (f64, f64) = (0.0, FRAC_PI_2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// half-width of the grasp-point sampling cube (m)
    pub tolerance: f64,
    pub max_steps: usize,
    pub min_contacts: usize,
    /// largest joint change per step (rad)
    pub max_delta: f64,
    pub finger_ring_radius: f64,
    pub finger_length: f64,
    /// finger bases sit this far behind the palm contact (m)
    pub finger_standoff: f64,
    /// how far the palm travels along the approach axis looking for contact (m)
    pub approach_range: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.03,
            max_steps: 20,
            min_contacts: 6,
            max_delta: 0.1,
            finger_ring_radius: 0.1,
            finger_length: 0.08,
            finger_standoff: 0.03,
            approach_range: 0.15,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        let positive = [
            self.max_delta,
            self.finger_ring_radius,
            self.finger_length,
            self.approach_range,
        ];
        if !(self.tolerance >= 0.0 && self.finger_standoff >= 0.0) || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(RefineError::Config("environment lengths must be positive".into()));
        }
        if self.max_steps == 0 || self.min_contacts > JOINTS {
            return Err(RefineError::Config(format!(
                "max_steps must be positive and min_contacts at most {JOINTS}"
            )));
        }
        Ok(())
    }
}

/// What the policy sees: palm position relative to the object centroid,
/// wrist quaternion, palm distance to the surface and eight finger forces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub position: [f64; 3],
    pub quat: [f64; 4],
    pub distance: f64,
    pub forces: [f64; JOINTS],
}

impl Observation {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.extend_from_slice(&self.position);
        v.extend_from_slice(&self.quat);
        v.push(self.distance);
        v.extend_from_slice(&self.forces);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub contacts: usize,
}

/// Object, seed grasp and episode state.
#[derive(Debug, Clone)]
pub struct GraspEnv {
    cfg: EnvConfig,
    grid: VoxelGrid,
    centroid: Vector3<f64>,
    surface: KdTree,
    seed: GraspStrategy,
    rotation: UnitQuaternion<f64>,
    offset: Vector3<f64>,
    joints: [f64; JOINTS],
    steps: usize,
}

impl GraspEnv {
    pub fn new(
        cloud: &PointCloud,
        grid: VoxelGrid,
        seed: GraspStrategy,
        cfg: EnvConfig,
    ) -> Result<Self, RefineError> {
        cfg.validate()?;
        let centroid = cloud.centroid().ok_or(RefineError::EmptyObject)?;
        let surface = surface_points(&grid);
        if surface.is_empty() {
            return Err(RefineError::EmptyObject);
        }
        let q = seed.wrist_orientation;
        let n = seed.quat_norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(RefineError::Config("wrist quaternion has zero norm".into()));
        }
        let rotation = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        let joints = seed.joint_angles.map(|j| j.clamp(JOINT_LIMITS.0, JOINT_LIMITS.1));
        Ok(Self {
            cfg,
            grid,
            centroid,
            surface: KdTree::build(&PointCloud::new(surface)?),
            seed,
            rotation,
            offset: Vector3::zeros(),
            joints,
            steps: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn joints(&self) -> &[f64; JOINTS] {
        &self.joints
    }

    pub fn offset(&self) -> Vector3<f64> {
        self.offset
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn approach(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }

    /// Samples a fresh grasp-point offset and restores the seed joints.
    pub fn reset(&mut self, rng: &mut impl Rng) -> Observation {
        let t = self.cfg.tolerance;
        self.offset = if t > 0.0 {
            Vector3::from_fn(|_, _| rng.random_range(-t..=t))
        } else {
            Vector3::zeros()
        };
        self.joints = self.seed.joint_angles.map(|j| j.clamp(JOINT_LIMITS.0, JOINT_LIMITS.1));
        self.steps = 0;
        self.evaluate().0
    }

    /// Places the episode at a specific offset (tests and evaluation).
    pub fn reset_to(&mut self, offset: Vector3<f64>) -> Observation {
        self.offset = offset;
        self.joints = self.seed.joint_angles.map(|j| j.clamp(JOINT_LIMITS.0, JOINT_LIMITS.1));
        self.steps = 0;
        self.evaluate().0
    }

    pub fn set_joints(&mut self, joints: [f64; JOINTS]) {
        self.joints = joints.map(|j| j.clamp(JOINT_LIMITS.0, JOINT_LIMITS.1));
    }

    /// Applies joint deltas (clamped to `max_delta`), then the closure test.
    pub fn step(&mut self, action: &[f64; JOINTS]) -> Result<StepResult, RefineError> {
        if action.iter().any(|a| !a.is_finite()) {
            return Err(RefineError::NonFinite("action".into()));
        }
        let d = self.cfg.max_delta;
        for (j, a) in self.joints.iter_mut().zip(action) {
            *j = (*j + a.clamp(-d, d)).clamp(JOINT_LIMITS.0, JOINT_LIMITS.1);
        }
        self.steps += 1;
        let (obs, contacts, on_surface) = self.evaluate();
        let closed = on_surface && contacts >= self.cfg.min_contacts;
        let done = closed || self.steps >= self.cfg.max_steps;
        Ok(StepResult {
            obs,
            reward: if closed { 1.0 } else { 0.0 },
            done,
            contacts,
        })
    }

    /// Current grasp point: the palm contact if the approach reaches the
    /// object, otherwise the offset seed point.
    pub fn grasp_point(&self) -> Vector3<f64> {
        let p = Vector3::from(self.seed.grasp_point) + self.offset;
        self.palm_contact(&p).unwrap_or(p)
    }

    /// Strategy of the current state.
    pub fn strategy(&self) -> GraspStrategy {
        GraspStrategy {
            grasp_point: self.grasp_point().into(),
            wrist_orientation: self.seed.wrist_orientation,
            joint_angles: self.joints,
        }
    }

    fn palm_contact(&self, p: &Vector3<f64>) -> Option<Vector3<f64>> {
        let a = self.approach();
        let r = self.cfg.approach_range;
        first_hit(&self.grid, &(p - a * r), &a, 2.0 * r).map(|t| p - a * r + a * t)
    }

    fn evaluate(&self) -> (Observation, usize, bool) {
        let g = self.grasp_point();
        let distance = self.surface.nearest_sq(&g).expect("surface is nonempty").sqrt();
        let a = self.approach();
        let (u, v) = (self.rotation * Vector3::x(), self.rotation * Vector3::y());
        let mut forces = [0.0; JOINTS];
        let mut contacts = 0;
        let len = self.cfg.finger_length;
        for (k, f) in forces.iter_mut().enumerate() {
            let phi = std::f64::consts::TAU * k as f64 / JOINTS as f64;
            let radial = u * phi.cos() + v * phi.sin();
            let base = g - a * self.cfg.finger_standoff + radial * self.cfg.finger_ring_radius;
            let th = self.joints[k];
            let dir = a * th.cos() - radial * th.sin();
            if let Some(t) = first_hit(&self.grid, &base, &dir, len) {
                *f = (len - t) / len;
                contacts += 1;
            }
        }
        let q = self.rotation.quaternion();
        let obs = Observation {
            position: (g - self.centroid).into(),
            quat: [q.w, q.i, q.j, q.k],
            distance,
            forces,
        };
        (obs, contacts, distance <= self.grid.frame().voxel_size)
    }
}

/// Parameter along `dir` (unit) of the first occupied sample on the segment
/// `[origin, origin + len * dir]`, probed every eighth of a voxel.
pub fn first_hit(grid: &VoxelGrid, origin: &Vector3<f64>, dir: &Vector3<f64>, len: f64) -> Option<f64> {
    let h = grid.frame().voxel_size / 8.0;
    let n = (len / h).ceil() as usize;
    (0..=n)
        .map(|i| (i as f64 * h).min(len))
        .find(|&t| grid.occupied_at(&(origin + dir * t)))
}

/// Centers of occupied voxels with at least one empty or out-of-grid face neighbor.
fn surface_points(grid: &VoxelGrid) -> Vec<Vector3<f64>> {
    let frame = *grid.frame();
    let [nx, ny, nz] = frame.dims;
    let filled = |x: isize, y: isize, z: isize| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && grid.get(x as usize, y as usize, z as usize)
    };
    grid.occupied()
        .filter(|&i| {
            let [x, y, z] = frame.unravel(i).map(|c| c as isize);
            [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                .iter()
                .any(|(dx, dy, dz)| !filled(x + dx, y + dy, z + dz))
        })
        .map(|i| {
            let [x, y, z] = frame.unravel(i);
            frame.voxel_center(x, y, z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::shapes::{box_mesh, cube};
    use crate::scan::{mesh_to_solid_grid, object_frame, TriangleMesh};
    use crate::voxel::devoxelize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn object(mesh: &TriangleMesh) -> (PointCloud, VoxelGrid) {
        let frame = object_frame(mesh, 16, 0.1).unwrap();
        let grid = mesh_to_solid_grid(mesh, frame).unwrap();
        (devoxelize(&grid), grid)
    }

    /// Palm from above: wrist +z mapped to world -z.
    fn top_seed(z: f64, joints: f64) -> GraspStrategy {
        GraspStrategy {
            grasp_point: [0.0, 0.0, z],
            wrist_orientation: [0.0, 1.0, 0.0, 0.0],
            joint_angles: [joints; JOINTS],
        }
    }

    fn cube_env(joints: f64, cfg: EnvConfig) -> GraspEnv {
        let (cloud, grid) = object(&cube(0.16));
        GraspEnv::new(&cloud, grid, top_seed(0.08, joints), cfg).unwrap()
    }

    #[test]
    fn reset_offsets_stay_in_tolerance_and_center() {
        let mut env = cube_env(0.2, EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut sum = Vector3::zeros();
        for _ in 0..1000 {
            env.reset(&mut rng);
            assert!(env.offset().amax() <= 0.03);
            sum += env.offset();
        }
        assert!((sum / 1000.0).amax() < 0.005);
        let a = env.reset(&mut ChaCha8Rng::seed_from_u64(7));
        let b = env.reset(&mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_action_keeps_pose() {
        let mut env = cube_env(0.2, EnvConfig::default());
        let o0 = env.reset(&mut ChaCha8Rng::seed_from_u64(1));
        let r = env.step(&[0.0; JOINTS]).unwrap();
        assert_eq!(r.obs.position, o0.position);
        assert_eq!(r.obs.quat, o0.quat);
        assert_eq!(env.steps(), 1);
    }

    #[test]
    fn closed_hand_centered_on_cube_succeeds() {
        let mut env = cube_env(0.9, EnvConfig::default());
        env.reset_to(Vector3::zeros());
        let r = env.step(&[0.0; JOINTS]).unwrap();
        assert_eq!(r.contacts, 8);
        assert_eq!(r.reward, 1.0);
        assert!(r.done);
        // palm rests on the top face
        assert!((env.grasp_point().z - 0.08).abs() <= env.grid.frame().voxel_size);
    }

    #[test]
    fn open_hand_touches_with_diagonal_fingers_only() {
        let mut env = cube_env(0.0, EnvConfig::default());
        env.reset_to(Vector3::zeros());
        let r = env.step(&[0.0; JOINTS]).unwrap();
        assert_eq!(r.contacts, 4);
        assert!(r.obs.forces.iter().step_by(2).all(|&f| f == 0.0));
        assert_eq!(r.reward, 0.0);
        assert!(!r.done);
    }

    #[test]
    fn grasp_beside_thin_rod_fails() {
        let rod = box_mesh(Vector3::new(0.005, 0.005, 0.1));
        let (cloud, grid) = object(&rod);
        let seed = GraspStrategy {
            grasp_point: [0.03, 0.0, 0.0],
            wrist_orientation: [0.0, 1.0, 0.0, 0.0],
            joint_angles: [0.9; JOINTS],
        };
        let cfg = EnvConfig {
            tolerance: 0.0,
            ..EnvConfig::default()
        };
        let mut env = GraspEnv::new(&cloud, grid.clone(), seed, cfg).unwrap();
        env.reset_to(Vector3::zeros());
        // the approach line through the grasp point never meets the rod
        let p = Vector3::new(0.03, 0.0, 0.0);
        assert!(first_hit(&grid, &(p + Vector3::z() * 0.15), &-Vector3::z(), 0.3).is_none());
        let r = env.step(&[0.0; JOINTS]).unwrap();
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn joints_stay_within_limits() {
        let mut env = cube_env(1.5, EnvConfig::default());
        env.reset_to(Vector3::zeros());
        for k in 0..30 {
            let a = if k % 2 == 0 { [5.0; JOINTS] } else { [-0.07; JOINTS] };
            env.step(&a).unwrap();
            assert!(env.joints().iter().all(|j| (0.0..=FRAC_PI_2).contains(j)));
        }
        assert!(env.step(&[f64::NAN; JOINTS]).is_err());
    }

    #[test]
    fn episode_caps_at_max_steps() {
        let mut env = cube_env(0.0, EnvConfig::default());
        env.reset_to(Vector3::zeros());
        let mut last = None;
        for _ in 0..20 {
            last = Some(env.step(&[0.0; JOINTS]).unwrap());
        }
        assert!(last.unwrap().done);
    }
}

//! Volumetric reconstruction from partial depth scans, Chamfer-distance grasp
//! retrieval and PPO grasp refinement.

pub mod autodiff;
pub mod cli;
pub mod refine;
pub mod retrieval;
pub mod rgan;
pub mod scan;
pub mod voxel;

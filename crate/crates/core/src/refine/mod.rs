//! Grasp refinement: PPO on an analytic grasp environment seeded with a
//! retrieved strategy.

mod env;
mod ppo;

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use env::{first_hit, EnvConfig, GraspEnv, Observation, StepResult, JOINTS, JOINT_LIMITS, OBS_DIM};
pub use ppo::{clipped_surrogate, gae_advantages, normalize, Batch, Losses, Policy, Trajectory};

use crate::autodiff::{Adam, TensorError};
use crate::retrieval::GraspStrategy;
use crate::voxel::{PointCloud, VoxelError, VoxelGrid};

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("object has no occupied voxels")]
    EmptyObject,
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("trajectory fields have different lengths")]
    Misaligned,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub hidden: usize,
    pub lr: f64,
    pub seed: u64,
    pub episodes: usize,
    pub episodes_per_batch: usize,
    pub eval_episodes: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub init_log_std: f64,
    pub env: EnvConfig,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch: 64,
            hidden: 64,
            lr: 1e-3,
            seed: 0,
            episodes: 1000,
            episodes_per_batch: 10,
            eval_episodes: 100,
            value_coef: 0.5,
            entropy_coef: 1e-3,
            init_log_std: -0.5,
            env: EnvConfig::default(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        let bad = |m: &str| Err(RefineError::Config(m.into()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0 && self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.hidden == 0 || self.episodes_per_batch == 0 {
            return bad("epochs, minibatch, hidden and episodes_per_batch must be positive");
        }
        if !(self.lr > 0.0) || !self.init_log_std.is_finite() {
            return bad("lr must be positive and init_log_std finite");
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0) {
            return bad("loss coefficients must be non-negative");
        }
        self.env.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    /// Best strategy seen during evaluation: successful episodes first, then
    /// most finger contacts, then smallest grasp-point offset.
    pub strategy: GraspStrategy,
    pub train_success_rate: f64,
    pub eval_success_rate: f64,
    /// Success rate of each training batch.
    pub curve: Vec<f64>,
}

struct Candidate {
    success: bool,
    contacts: usize,
    offset: f64,
    strategy: GraspStrategy,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        (self.success, self.contacts) > (other.success, other.contacts)
            || ((self.success, self.contacts) == (other.success, other.contacts) && self.offset < other.offset)
    }
}

/// Runs one episode; `sample` selects the stochastic policy.
fn rollout(
    env: &mut GraspEnv,
    policy: &Policy,
    rng: &mut ChaCha8Rng,
    sample: bool,
) -> Result<(Trajectory, Candidate), RefineError> {
    let mut obs = env.reset(rng);
    let mut traj = Trajectory::default();
    loop {
        let x = obs.to_vec();
        let (u, logp, value) = if sample {
            policy.act(&x, Some(&mut *rng))?
        } else {
            policy.act(&x, None::<&mut ChaCha8Rng>)?
        };
        let scale = env.config().max_delta;
        let action = u.map(|v| scale * v.tanh());
        let r = env.step(&action)?;
        traj.observations.push(x);
        traj.actions.push(u);
        traj.log_probs.push(logp);
        traj.values.push(value);
        traj.rewards.push(r.reward);
        obs = r.obs;
        if r.done {
            traj.terminal = true;
            let cand = Candidate {
                success: r.reward == 1.0,
                contacts: r.contacts,
                offset: env.offset().amax(),
                strategy: env.strategy(),
            };
            return Ok((traj, cand));
        }
    }
}

/// Trains a policy on the object for `cfg.episodes` episodes, then evaluates
/// `cfg.eval_episodes` episodes with the mean action.
pub fn refine_grasp(
    cloud: &PointCloud,
    grid: &VoxelGrid,
    seed: &GraspStrategy,
    cfg: &PpoConfig,
) -> Result<RefineOutcome, RefineError> {
    cfg.validate()?;
    let mut env = GraspEnv::new(cloud, grid.clone(), *seed, cfg.env.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = Policy::new(cfg.hidden, cfg.init_log_std, &mut rng);
    let mut opt = Adam::new(cfg.lr);
    let mut curve = Vec::new();
    let mut successes = 0usize;
    let mut done = 0;
    while done < cfg.episodes {
        let n = cfg.episodes_per_batch.min(cfg.episodes - done);
        let mut trajs = Vec::with_capacity(n);
        let mut wins = 0;
        for _ in 0..n {
            let (t, c) = rollout(&mut env, &policy, &mut rng, true)?;
            wins += usize::from(c.success);
            trajs.push(t);
        }
        successes += wins;
        curve.push(wins as f64 / n as f64);
        let batch = Batch::from_trajectories(&trajs, cfg.gamma, cfg.gae_lambda)?;
        policy.update(&mut opt, &batch, cfg, &mut rng)?;
        done += n;
    }

    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e7a1);
    let mut best: Option<Candidate> = None;
    let mut eval_wins = 0usize;
    for _ in 0..cfg.eval_episodes {
        let (_, c) = rollout(&mut env, &policy, &mut eval_rng, false)?;
        eval_wins += usize::from(c.success);
        if best.as_ref().is_none_or(|b| c.better_than(b)) {
            best = Some(c);
        }
    }
    let strategy = match best {
        Some(c) => c.strategy,
        None => {
            env.reset_to(Vector3::zeros());
            env.strategy()
        }
    };
    let rate = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(RefineOutcome {
        strategy,
        train_success_rate: rate(successes, cfg.episodes),
        eval_success_rate: rate(eval_wins, cfg.eval_episodes),
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub object_id: String,
    pub episodes: usize,
    pub train_success_rate: f64,
    pub eval_success_rate: f64,
    pub chamfer_d_prime: f64,
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<(), RefineError> {
    let err = |source| RefineError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| err(e.into()))
}

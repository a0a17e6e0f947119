use std::f64::consts::{E, PI};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::env::{JOINTS, OBS_DIM};
use super::{PpoConfig, RefineError};
use crate::autodiff::{Adam, Bound, Linear, ParamId, ParamSet, Tape, Tensor, TensorError, Var};

/// Per-step records of one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    /// Pre-squash Gaussian samples.
    pub actions: Vec<[f64; JOINTS]>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub terminal: bool,
    /// Value estimate after the last step, used when the episode was cut short.
    pub bootstrap: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn check(&self) -> Result<(), RefineError> {
        if self.is_empty() {
            return Err(RefineError::EmptyTrajectory);
        }
        let n = self.len();
        if [self.observations.len(), self.actions.len(), self.log_probs.len(), self.values.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(RefineError::Misaligned);
        }
        Ok(())
    }
}

/// Generalized advantage estimates before normalization.
pub fn gae_advantages(traj: &Trajectory, gamma: f64, lambda: f64) -> Result<Vec<f64>, RefineError> {
    traj.check()?;
    let n = traj.len();
    let mut adv = vec![0.0; n];
    let mut next_value = if traj.terminal { 0.0 } else { traj.bootstrap };
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = traj.rewards[t] + gamma * next_value - traj.values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
        next_value = traj.values[t];
    }
    Ok(adv)
}

/// Shifts to zero mean and scales to unit variance (left unscaled when constant).
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v -= mean;
        if std > 1e-12 {
            *v /= std;
        }
    }
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Flattened samples from several trajectories with normalized advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub observations: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn from_trajectories(trajs: &[Trajectory], gamma: f64, lambda: f64) -> Result<Self, RefineError> {
        let mut b = Batch {
            observations: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
        };
        for t in trajs {
            let adv = gae_advantages(t, gamma, lambda)?;
            for (i, a) in adv.iter().enumerate() {
                if t.observations[i].len() != OBS_DIM {
                    return Err(RefineError::Misaligned);
                }
                b.observations.extend_from_slice(&t.observations[i]);
                b.actions.extend_from_slice(&t.actions[i]);
                b.log_probs.push(t.log_probs[i]);
                b.returns.push(a + t.values[i]);
            }
            b.advantages.extend(adv);
        }
        if b.log_probs.is_empty() {
            return Err(RefineError::EmptyTrajectory);
        }
        normalize(&mut b.advantages);
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    fn rows(&self, idx: &[usize]) -> [Tensor; 5] {
        let gather = |src: &[f64], w: usize| {
            let d: Vec<f64> = idx.iter().flat_map(|&i| src[i * w..(i + 1) * w].iter().copied()).collect();
            Tensor::new(vec![idx.len(), w], d).unwrap()
        };
        [
            Tensor::new(vec![idx.len(), OBS_DIM], features(&gather(&self.observations, OBS_DIM).into_data())).unwrap(),
            gather(&self.actions, JOINTS),
            gather(&self.log_probs, 1),
            gather(&self.advantages, 1),
            gather(&self.returns, 1),
        ]
    }
}

/// Loss components averaged over the minibatches of an update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Losses {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Positions and distances are rescaled from meters to decimeters.
fn features(obs: &[f64]) -> Vec<f64> {
    obs.chunks(OBS_DIM)
        .flat_map(|o| {
            o.iter()
                .enumerate()
                .map(|(i, v)| if i < 3 || i == 7 { 10.0 * v } else { *v })
        })
        .collect()
}

fn log_2pi() -> f64 {
    (2.0 * PI).ln()
}

/// Gaussian policy over pre-squash joint deltas with a state-independent
/// log standard deviation, and a separate value network.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    params: ParamSet,
    pi: [Linear; 3],
    v: [Linear; 3],
    log_std: ParamId,
}

impl Policy {
    pub fn new(hidden: usize, init_log_std: f64, rng: &mut impl Rng) -> Self {
        let mut ps = ParamSet::new();
        let pi = [
            Linear::new(&mut ps, "pi.0", OBS_DIM, hidden, rng),
            Linear::new(&mut ps, "pi.1", hidden, hidden, rng),
            Linear::new(&mut ps, "pi.2", hidden, JOINTS, rng),
        ];
        let v = [
            Linear::new(&mut ps, "v.0", OBS_DIM, hidden, rng),
            Linear::new(&mut ps, "v.1", hidden, hidden, rng),
            Linear::new(&mut ps, "v.2", hidden, 1, rng),
        ];
        for w in ps.get_mut(pi[2].weight).data_mut() {
            *w *= 0.01;
        }
        let log_std = ps.add("pi.log_std", Tensor::full(&[1, JOINTS], init_log_std));
        Self { params: ps, pi, v, log_std }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn log_std(&self) -> &[f64] {
        self.params.get(self.log_std).data()
    }

    fn mlp<'t>(layers: &[Linear; 3], b: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>, TensorError> {
        let h = layers[0].forward(b, x)?.tanh();
        let h = layers[1].forward(b, h)?.tanh();
        layers[2].forward(b, h)
    }

    /// Log-density `[N, 1]` of pre-squash actions under the policy at `x`.
    fn log_prob<'t>(&self, b: &Bound<'t>, tape: &'t Tape, x: Var<'t>, u: &Tensor) -> Result<Var<'t>, TensorError> {
        let n = u.shape()[0];
        let mu = Self::mlp(&self.pi, b, x)?;
        let ls = b.var(self.log_std).broadcast_rows(n)?;
        let z = tape.constant(u.clone()).sub(mu)?.mul(ls.scale(-1.0).exp())?;
        z.square()
            .scale(-0.5)
            .sub(ls)?
            .sum_cols()
            .map(|s| s.add_scalar(-0.5 * JOINTS as f64 * log_2pi()))
    }

    fn entropy<'t>(&self, b: &Bound<'t>) -> Var<'t> {
        b.var(self.log_std)
            .sum()
            .add_scalar(0.5 * JOINTS as f64 * (2.0 * PI * E).ln())
    }

    /// Samples (or, without `rng`, takes the mean) pre-squash action; returns
    /// it with its log-density and the state value.
    pub fn act<R: Rng>(&self, obs: &[f64], rng: Option<&mut R>) -> Result<([f64; JOINTS], f64, f64), RefineError> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let x = tape.constant(Tensor::new(vec![1, OBS_DIM], features(obs))?);
        let mu = Self::mlp(&self.pi, &b, x)?;
        let value = Self::mlp(&self.v, &b, x)?.item();
        let mu = mu.value().data().to_vec();
        let ls = self.log_std();
        let u: [f64; JOINTS] = match rng {
            Some(r) => std::array::from_fn(|j| mu[j] + ls[j].exp() * r.sample::<f64, _>(StandardNormal)),
            None => std::array::from_fn(|j| mu[j]),
        };
        let logp = (0..JOINTS)
            .map(|j| -0.5 * ((u[j] - mu[j]) / ls[j].exp()).powi(2) - ls[j] - 0.5 * log_2pi())
            .sum::<f64>();
        if !(logp.is_finite() && value.is_finite()) {
            return Err(RefineError::NonFinite("policy output".into()));
        }
        Ok((u, logp, value))
    }

    /// Clipped surrogate loss `-mean(min(r A, clip(r) A))` over the whole batch.
    pub fn surrogate_loss(&self, batch: &Batch, eps: f64) -> Result<f64, RefineError> {
        let idx: Vec<usize> = (0..batch.len()).collect();
        let [obs, act, old, adv, _] = batch.rows(&idx);
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let logp = self.log_prob(&b, &tape, tape.constant(obs), &act)?;
        let logp = logp.value().data().to_vec();
        let total: f64 = logp
            .iter()
            .zip(old.data())
            .zip(adv.data())
            .map(|((l, o), a)| clipped_surrogate((l - o).exp(), *a, eps))
            .sum();
        Ok(-total / batch.len() as f64)
    }

    /// `cfg.epochs` passes of shuffled minibatch Adam steps on the PPO loss.
    pub fn update(
        &mut self,
        opt: &mut Adam,
        batch: &Batch,
        cfg: &PpoConfig,
        rng: &mut impl Rng,
    ) -> Result<Losses, RefineError> {
        if batch.is_empty() {
            return Err(RefineError::EmptyTrajectory);
        }
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut sum = Losses::default();
        let mut count = 0usize;
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for idx in order.chunks(cfg.minibatch) {
                let [obs, act, old, adv, ret] = batch.rows(idx);
                let tape = Tape::new();
                let b = self.params.bind(&tape);
                let x = tape.constant(obs);
                let logp = self.log_prob(&b, &tape, x, &act)?;
                let ratio = logp.sub(tape.constant(old))?.exp();
                let adv = tape.constant(adv);
                let eps = cfg.clip_eps;
                let surr = ratio
                    .mul(adv)?
                    .minimum(ratio.clamp(1.0 - eps, 1.0 + eps).mul(adv)?)?;
                let policy_loss = surr.mean().scale(-1.0);
                let value_loss = Self::mlp(&self.v, &b, x)?.sub(tape.constant(ret))?.square().mean();
                let entropy = self.entropy(&b);
                let loss = policy_loss
                    .add(value_loss.scale(cfg.value_coef))?
                    .sub(entropy.scale(cfg.entropy_coef))?;
                if !loss.item().is_finite() {
                    return Err(RefineError::NonFinite("loss".into()));
                }
                let grads = b.grads(&tape.backward(loss)?);
                opt.step(&mut self.params, &grads);
                sum.policy += policy_loss.item();
                sum.value += value_loss.item();
                sum.entropy += entropy.item();
                count += 1;
            }
        }
        let c = count as f64;
        Ok(Losses {
            policy: sum.policy / c,
            value: sum.value / c,
            entropy: sum.entropy / c,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj(rewards: &[f64], values: &[f64]) -> Trajectory {
        let n = rewards.len();
        Trajectory {
            observations: vec![vec![0.0; OBS_DIM]; n],
            actions: vec![[0.0; JOINTS]; n],
            log_probs: vec![0.0; n],
            rewards: rewards.to_vec(),
            values: values.to_vec(),
            terminal: true,
            bootstrap: 0.0,
        }
    }

    #[test]
    fn gae_trivial_cases() {
        assert_eq!(gae_advantages(&traj(&[0.0; 4], &[0.0; 4]), 0.99, 0.95).unwrap(), vec![0.0; 4]);
        assert_eq!(gae_advantages(&traj(&[1.0], &[0.0]), 0.99, 0.95).unwrap(), vec![1.0]);
        assert!(matches!(
            gae_advantages(&traj(&[], &[]), 0.99, 0.95),
            Err(RefineError::EmptyTrajectory)
        ));
        let mut bad = traj(&[0.0, 1.0], &[0.0, 0.0]);
        bad.log_probs.pop();
        assert!(matches!(gae_advantages(&bad, 0.9, 0.9), Err(RefineError::Misaligned)));
    }

    #[test]
    fn gae_matches_discounted_td_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (g, l) = (0.97, 0.9);
        for terminal in [true, false] {
            let r: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut t = traj(&r, &v);
            t.terminal = terminal;
            t.bootstrap = 0.37;
            let next = |k: usize| {
                if k + 1 < 5 {
                    v[k + 1]
                } else if terminal {
                    0.0
                } else {
                    0.37
                }
            };
            let delta: Vec<f64> = (0..5).map(|k| r[k] + g * next(k) - v[k]).collect();
            let got = gae_advantages(&t, g, l).unwrap();
            for (s, adv) in got.iter().enumerate() {
                let want: f64 = (s..5).map(|k| (g * l).powi((k - s) as i32) * delta[k]).sum();
                assert!((adv - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_advantages_are_normalized() {
        let b = Batch::from_trajectories(
            &[traj(&[0.0, 0.0, 1.0], &[0.1, 0.2, 0.3]), traj(&[0.0, 0.0], &[0.5, 0.1])],
            0.99,
            0.95,
        )
        .unwrap();
        let n = b.len() as f64;
        let mean = b.advantages.iter().sum::<f64>() / n;
        let var = b.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert_eq!(b.returns[2], 1.0);
    }

    #[test]
    fn clip_identity_and_saturation() {
        for a in [-2.0, -0.5, 0.3, 4.0] {
            assert_eq!(clipped_surrogate(1.0, a, 0.2), a);
        }
        let tape = Tape::new();
        let r = tape.var(Tensor::scalar(1.4));
        let a = tape.constant(Tensor::scalar(1.5));
        let s = r.mul(a).unwrap().minimum(r.clamp(0.8, 1.2).mul(a).unwrap()).unwrap();
        assert!((s.item() - 1.8).abs() < 1e-12);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(r).unwrap().item(), 0.0);
    }

    proptest! {
        #[test]
        fn surrogate_bounded_by_clip(r in 0.0f64..10.0, a in -5.0f64..5.0, eps in 0.01f64..0.99) {
            prop_assert!(clipped_surrogate(r, a, eps) <= (1.0 + eps) * a.abs() + 1e-12);
        }
    }

    fn fixed_batch(policy: &Policy, rng: &mut ChaCha8Rng) -> Batch {
        let trajs: Vec<Trajectory> = (0..4)
            .map(|_| {
                let mut t = Trajectory {
                    terminal: true,
                    ..Trajectory::default()
                };
                for s in 0..5 {
                    let obs: Vec<f64> = (0..OBS_DIM).map(|_| rng.random_range(-0.5..0.5)).collect();
                    let (u, lp, v) = policy.act(&obs, Some(&mut *rng)).unwrap();
                    t.observations.push(obs);
                    t.actions.push(u);
                    t.log_probs.push(lp);
                    t.values.push(v);
                    t.rewards.push(if s == 4 && u[0] > 0.0 { 1.0 } else { 0.0 });
                }
                t
            })
            .collect();
        Batch::from_trajectories(&trajs, 0.99, 0.95).unwrap()
    }

    #[test]
    fn one_update_reduces_surrogate_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut policy = Policy::new(16, -0.5, &mut rng);
        let batch = fixed_batch(&policy, &mut rng);
        let cfg = PpoConfig {
            epochs: 1,
            minibatch: batch.len(),
            entropy_coef: 0.0,
            lr: 1e-3,
            ..PpoConfig::default()
        };
        let before = policy.surrogate_loss(&batch, cfg.clip_eps).unwrap();
        policy.update(&mut Adam::new(cfg.lr), &batch, &cfg, &mut rng).unwrap();
        let after = policy.surrogate_loss(&batch, cfg.clip_eps).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn recorded_log_prob_matches_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let policy = Policy::new(8, 0.3, &mut rng);
        let obs: Vec<f64> = (0..OBS_DIM).map(|i| i as f64 * 0.05).collect();
        let (u, lp, _) = policy.act(&obs, Some(&mut rng)).unwrap();
        let tape = Tape::new();
        let b = policy.params.bind_frozen(&tape);
        let x = tape.constant(Tensor::new(vec![1, OBS_DIM], features(&obs)).unwrap());
        let got = policy
            .log_prob(&b, &tape, x, &Tensor::new(vec![1, JOINTS], u.to_vec()).unwrap())
            .unwrap()
            .item();
        assert!((got - lp).abs() < 1e-10);
        let (mean, _, _) = policy.act::<ChaCha8Rng>(&obs, None).unwrap();
        let (again, _, _) = policy.act::<ChaCha8Rng>(&obs, None).unwrap();
        assert_eq!(mean, again);
    }
}

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GaussianPolicy;
use crate::env::{Action, EnvConfig, EpisodeRecord, StepperEnv};
use crate::error::{config, Error, Result};
use crate::nn::{pool_bev, Mlp, TerrainTarget};
use crate::world::{generate_stairs, StairSpec, WorldRanges};

/// Training world distribution: procedural ranges, optionally with the step
/// height drawn from a discrete set instead of its interval.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSource {
    pub ranges: WorldRanges,
    pub heights: Option<Vec<f64>>,
}

impl WorldSource {
    pub fn new(ranges: WorldRanges) -> Self {
        Self { ranges, heights: None }
    }

    pub fn with_heights(ranges: WorldRanges, heights: Vec<f64>) -> Self {
        Self {
            ranges,
            heights: Some(heights),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        if let Some(h) = &self.heights {
            if h.is_empty() || h.iter().any(|v| !(*v > 0.0 && *v <= self.ranges.caps.h_max)) {
                return config("discrete heights must be non-empty and within (0, h_max]");
            }
        }
        Ok(())
    }

    pub fn sample(&self, seed: u64) -> Result<StairSpec> {
        let mut spec = generate_stairs(seed, &self.ranges)?;
        if let (Some(hs), false) = (&self.heights, spec.h_step == 0.0) {
            // independent stream so the other parameters match the plain draw
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995_5bd1_e995);
            spec.h_step = hs[rng.random_range(0..hs.len())];
        }
        Ok(spec)
    }
}

/// One supervision sample for the learned estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainSample {
    pub features: Vec<f64>,
    pub target: TerrainTarget,
}

/// Trajectories from `n_envs` environments over `horizon` decisions each,
/// stored env-major: index `e * horizon + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub horizon: usize,
    pub obs: Vec<Vec<f64>>,
    /// Pre-squash Gaussian samples in normalized action space.
    pub actions: Vec<[f64; 3]>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Critic value of each environment's state after the last decision.
    pub last_values: Vec<f64>,
    /// |v_avg - v_cmd| after every decision.
    pub vel_errors: Vec<f64>,
    pub supervision: Vec<TerrainSample>,
    pub episodes: Vec<EpisodeRecord>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.n_envs * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Advantages and returns per environment row, with rewards multiplied
    /// by `reward_scale` (values are already in scaled units).
    pub fn advantages(&self, gamma: f64, lambda: f64, reward_scale: f64) -> (Vec<f64>, Vec<f64>) {
        let mut adv = Vec::with_capacity(self.len());
        let mut ret = Vec::with_capacity(self.len());
        for e in 0..self.n_envs {
            let r = e * self.horizon..(e + 1) * self.horizon;
            let rewards: Vec<f64> = self.rewards[r.clone()].iter().map(|x| x * reward_scale).collect();
            let (a, g) = super::gae(
                &rewards,
                &self.values[r.clone()],
                &self.dones[r],
                self.last_values[e],
                gamma,
                lambda,
            );
            adv.extend(a);
            ret.extend(g);
        }
        (adv, ret)
    }

    pub fn success_rate(&self) -> Option<f64> {
        if self.episodes.is_empty() {
            return None;
        }
        let ok = self.episodes.iter().filter(|e| crate::env::success(e)).count();
        Some(ok as f64 / self.episodes.len() as f64)
    }
}

/// A fixed set of environments, each with its own random stream.
pub struct VecEnv {
    envs: Vec<StepperEnv>,
    rngs: Vec<ChaCha8Rng>,
    obs: Vec<Vec<f64>>,
    worlds: WorldSource,
}

impl VecEnv {
    /// Environment `i` draws from a stream seeded with `seed + i`.
    pub fn new(cfg: &EnvConfig, worlds: WorldSource, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return config("need at least one environment");
        }
        worlds.validate()?;
        let mut v = Self {
            envs: (0..n).map(|_| StepperEnv::new(cfg.clone())).collect::<Result<_>>()?,
            rngs: (0..n)
                .map(|i| ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64)))
                .collect(),
            obs: vec![Vec::new(); n],
            worlds,
        };
        if cfg.token_source != crate::env::TokenSource::Learned {
            v.reset_all()?;
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[StepperEnv] {
        &self.envs
    }

    /// Installs the estimator used by the learned token source.
    pub fn set_learned_estimator(&mut self, net: Arc<Mlp>) {
        for env in &mut self.envs {
            env.set_learned_estimator(Some(net.clone()));
        }
    }

    /// Starts a fresh episode in every environment.
    pub fn reset_all(&mut self) -> Result<()> {
        for i in 0..self.envs.len() {
            self.reset_one(i)?;
        }
        Ok(())
    }

    fn reset_one(&mut self, i: usize) -> Result<()> {
        let world_seed = self.rngs[i].random::<u64>();
        let env_seed = self.rngs[i].random::<u64>();
        let spec = self.worlds.sample(world_seed)?;
        self.obs[i] = self.envs[i].reset(spec, env_seed)?;
        Ok(())
    }

    /// Steps every environment `horizon` times with stochastic actions.
    ///
    /// With `supervision_every = Some(k)`, every k-th decision of each
    /// environment also records a pooled BEV view and its ground truth.
    pub fn collect(
        &mut self,
        policy: &GaussianPolicy,
        horizon: usize,
        supervision_every: Option<usize>,
    ) -> Result<RolloutBatch> {
        if horizon == 0 {
            return config("rollout horizon must be >= 1");
        }
        if self.obs.iter().any(|o| o.is_empty()) {
            self.reset_all()?;
        }
        let n = self.envs.len();
        let total = n * horizon;
        let mut b = RolloutBatch {
            n_envs: n,
            horizon,
            obs: Vec::with_capacity(total),
            actions: Vec::with_capacity(total),
            log_probs: Vec::with_capacity(total),
            rewards: Vec::with_capacity(total),
            values: Vec::with_capacity(total),
            dones: Vec::with_capacity(total),
            last_values: Vec::with_capacity(n),
            vel_errors: Vec::with_capacity(total),
            supervision: Vec::new(),
            episodes: Vec::new(),
        };
        for i in 0..n {
            for t in 0..horizon {
                let obs = self.obs[i].clone();
                let sample = policy.sample(&obs, &mut self.rngs[i])?;
                if let Some(k) = supervision_every {
                    if k > 0 && t % k == 0 {
                        let seed = self.rngs[i].random::<u64>();
                        let env = &self.envs[i];
                        let gt = env.ground_truth_token();
                        b.supervision.push(TerrainSample {
                            features: pool_bev(&env.sense(seed)?),
                            target: TerrainTarget {
                                class: gt.class,
                                h_step: gt.h_step,
                                d_step: gt.d_step,
                            },
                        });
                    }
                }
                let step = self.envs[i].step(Action::from_normalized(sample.u))?;
                b.obs.push(obs);
                b.actions.push(sample.u);
                b.log_probs.push(sample.log_prob);
                b.values.push(sample.value);
                b.rewards.push(step.reward);
                b.dones.push(step.done);
                let row = self.envs[i].trace().last().expect("a step was just taken");
                b.vel_errors.push((row.v_avg - row.v_cmd).abs());
                if step.done {
                    b.episodes.push(self.envs[i].record());
                    self.reset_one(i)?;
                } else {
                    self.obs[i] = step.obs;
                }
            }
            b.last_values.push(policy.value(&self.obs[i])?);
        }
        if b.log_probs.iter().any(|l| !l.is_finite()) {
            return Err(Error::Training("non-finite log-probability in rollout".into()));
        }
        Ok(b)
    }
}

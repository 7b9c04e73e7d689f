use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    estimator_loss, fit_estimator, joint_update, ppo_update, EstimatorTrainer, GaussianPolicy, PolicyOptimizer,
    PpoConfig, RolloutBatch, UpdateStats, VecEnv, WorldSource,
};
use crate::env::{EnvConfig, EpisodeRecord, ObsMode, StepperEnv, TokenSource};
use crate::error::{config, Result};
use crate::nn::{estimator_net, AdamState, Mlp, TerrainLossWeights};
use crate::world::StairSpec;

pub const CURVE_HEADER: &str = "update,mean_reward,success_rate,E_vel,policy_loss,value_loss,terrain_loss,clip_frac,kl";

/// One learning-curve row per update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub update: usize,
    /// 1, 2 or 3.
    pub stage: u8,
    /// Mean reward per decision in the update's batch.
    pub mean_reward: f64,
    /// Fraction of episodes finished during collection that succeeded (0
    /// when none finished).
    pub success_rate: f64,
    pub e_vel: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub terrain_loss: f64,
    pub clip_frac: f64,
    pub kl: f64,
}

impl CurveRow {
    fn new(update: usize, stage: u8, batch: &RolloutBatch, stats: &UpdateStats) -> Self {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        Self {
            update,
            stage,
            mean_reward: mean(&batch.rewards),
            success_rate: batch.success_rate().unwrap_or(0.0),
            e_vel: mean(&batch.vel_errors),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            terrain_loss: stats.terrain_loss,
            clip_frac: stats.clip_frac,
            kl: stats.approx_kl,
        }
    }

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.update,
            self.mean_reward,
            self.success_rate,
            self.e_vel,
            self.policy_loss,
            self.value_loss,
            self.terrain_loss,
            self.clip_frac,
            self.kl
        )
    }
}

/// Updates spent in each training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageBudgets {
    /// PPO with ground-truth tokens.
    pub policy: usize,
    /// Supervised estimator training on on-policy views.
    pub estimator: usize,
    /// Joint updates with predicted tokens.
    pub joint: usize,
}

impl Default for StageBudgets {
    fn default() -> Self {
        Self {
            policy: 300,
            estimator: 100,
            joint: 200,
        }
    }
}

impl StageBudgets {
    pub fn total(&self) -> usize {
        self.policy + self.estimator + self.joint
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 {
            return config("stage budgets are all zero");
        }
        if self.joint > 0 && self.policy == 0 {
            return config("joint stage needs a pretrained policy (stage 1 budget is zero)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: GaussianPolicy,
    pub estimator: Option<Mlp>,
    pub curves: Vec<CurveRow>,
}

/// Seeds drawn up front so every stage sees the same streams regardless of
/// the budgets of the others.
struct Seeds {
    policy: u64,
    envs: u64,
    update: u64,
    estimator: u64,
    joint_envs: u64,
}

impl Seeds {
    fn new(seed: u64) -> Self {
        let mut m = ChaCha8Rng::seed_from_u64(seed);
        Self {
            policy: m.random(),
            envs: m.random(),
            update: m.random(),
            estimator: m.random(),
            joint_envs: m.random(),
        }
    }
}

/// Plain PPO for `updates` updates with the environment's own observation
/// mode and token source.
pub fn train_policy(
    env_cfg: &EnvConfig,
    worlds: &WorldSource,
    cfg: &PpoConfig,
    updates: usize,
    seed: u64,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if updates == 0 {
        return config("training needs at least one update");
    }
    if env_cfg.obs_mode == ObsMode::Token && env_cfg.token_source == TokenSource::Learned {
        return config("plain PPO cannot train against a learned token source; use the three-stage schedule");
    }
    let seeds = Seeds::new(seed);
    let mut policy = GaussianPolicy::new(env_cfg.obs_mode, cfg, seeds.policy)?;
    let mut opt = PolicyOptimizer::new(&policy, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.update);
    let mut envs = VecEnv::new(env_cfg, worlds.clone(), cfg.n_envs, seeds.envs)?;
    let mut curves = Vec::with_capacity(updates);
    for u in 0..updates {
        let batch = envs.collect(&policy, cfg.horizon, None)?;
        let stats = ppo_update(&mut policy, &mut opt, &batch, cfg, &mut rng)?;
        curves.push(CurveRow::new(u, 1, &batch, &stats));
    }
    Ok(TrainOutput {
        policy,
        estimator: None,
        curves,
    })
}

/// Three-stage schedule: ground-truth pretraining, supervised estimator
/// training on views from the pretrained policy, then joint updates with the
/// policy observing the estimator's tokens.
///
/// `env_cfg.obs_mode` is forced to [`ObsMode::Token`]; the token source is
/// set per stage.
pub fn train_three_stage(
    env_cfg: &EnvConfig,
    worlds: &WorldSource,
    cfg: &PpoConfig,
    budgets: StageBudgets,
    weights: TerrainLossWeights,
    seed: u64,
) -> Result<TrainOutput> {
    cfg.validate()?;
    budgets.validate()?;
    weights.validate()?;
    let seeds = Seeds::new(seed);
    let gt_cfg = EnvConfig {
        obs_mode: ObsMode::Token,
        token_source: TokenSource::GroundTruth,
        ..env_cfg.clone()
    };
    let mut policy = GaussianPolicy::new(ObsMode::Token, cfg, seeds.policy)?;
    let mut opt = PolicyOptimizer::new(&policy, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.update);
    let mut envs = VecEnv::new(&gt_cfg, worlds.clone(), cfg.n_envs, seeds.envs)?;
    let mut curves = Vec::with_capacity(budgets.total());

    for _ in 0..budgets.policy {
        let batch = envs.collect(&policy, cfg.horizon, None)?;
        let stats = ppo_update(&mut policy, &mut opt, &batch, cfg, &mut rng)?;
        curves.push(CurveRow::new(curves.len(), 1, &batch, &stats));
    }
    if budgets.estimator == 0 && budgets.joint == 0 {
        return Ok(TrainOutput {
            policy,
            estimator: None,
            curves,
        });
    }

    let mut net = estimator_net(cfg.estimator_hidden, seeds.estimator)?;
    let mut est_opt = AdamState::new(net.param_count(), cfg.estimator_lr);
    for _ in 0..budgets.estimator {
        let batch = envs.collect(&policy, cfg.horizon, Some(cfg.supervision_every))?;
        // loss on views the estimator has not yet been fitted to
        let before = estimator_loss(&net, &batch.supervision, &weights)?;
        fit_estimator(
            &mut net,
            &mut est_opt,
            &batch.supervision,
            &weights,
            cfg.epochs,
            cfg.minibatches,
            &mut rng,
        )?;
        let stats = UpdateStats {
            terrain_loss: before,
            ..UpdateStats::default()
        };
        curves.push(CurveRow::new(curves.len(), 2, &batch, &stats));
    }

    if budgets.joint > 0 {
        let learned_cfg = EnvConfig {
            token_source: TokenSource::Learned,
            ..gt_cfg
        };
        let mut joint_envs = VecEnv::new(&learned_cfg, worlds.clone(), cfg.n_envs, seeds.joint_envs)?;
        for _ in 0..budgets.joint {
            joint_envs.set_learned_estimator(Arc::new(net.clone()));
            let batch = joint_envs.collect(&policy, cfg.horizon, Some(cfg.supervision_every))?;
            let est = EstimatorTrainer {
                net: &mut net,
                opt: &mut est_opt,
                weights,
            };
            let stats = joint_update(&mut policy, &mut opt, Some(est), &batch, cfg, &mut rng)?;
            curves.push(CurveRow::new(curves.len(), 3, &batch, &stats));
        }
    }
    Ok(TrainOutput {
        policy,
        estimator: Some(net),
        curves,
    })
}

/// Deterministic (mean-action) episodes, one per spec; episode `i` resets
/// with seed `seed + i`.
pub fn evaluate(
    policy: &GaussianPolicy,
    env_cfg: &EnvConfig,
    specs: &[StairSpec],
    seed: u64,
    estimator: Option<Arc<Mlp>>,
) -> Result<Vec<EpisodeRecord>> {
    if env_cfg.obs_mode != policy.mode {
        return config(format!(
            "policy observes {} but the environment emits {}",
            policy.mode, env_cfg.obs_mode
        ));
    }
    let mut env = StepperEnv::new(env_cfg.clone())?;
    env.set_learned_estimator(estimator);
    let mut out = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let mut obs = env.reset(*spec, seed.wrapping_add(i as u64))?;
        loop {
            let step = env.step(policy.act(&obs)?)?;
            if step.done {
                break;
            }
            obs = step.obs;
        }
        out.push(env.record());
    }
    Ok(out)
}

//! Clipped PPO with GAE for the stepper, plus the joint policy/estimator
//! objective and the three-stage schedule.
//!
//! The policy is a diagonal Gaussian over a normalized action space in
//! `[-1, 1]^3`. Its mean is `tanh` of the actor output, and the executed
//! action is the sample clamped to the box and mapped affinely onto the
//! action bounds. Log-probabilities are those of the unclamped sample; no
//! squashing correction is applied since exploration noise stays small
//! relative to the box.

mod rollout;
mod train;

pub use rollout::{RolloutBatch, TerrainSample, VecEnv, WorldSource};
pub use train::{evaluate, train_policy, train_three_stage, CurveRow, StageBudgets, TrainOutput, CURVE_HEADER};

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::env::{Action, ObsMode};
use crate::error::{config, Error, Result};
use crate::nn::{clip_global_norm, estimator_backward, AdamState, Mlp, TerrainLossWeights};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
const ACTION_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_weight: f64,
    pub value_weight: f64,
    pub lr: f64,
    /// Multiplies rewards before GAE so the critic fits returns of order 1.
    pub reward_scale: f64,
    pub horizon: usize,
    pub n_envs: usize,
    /// Weight of the terrain loss in the joint objective.
    pub alpha: f64,
    /// Global gradient-norm bound per network; 0 disables clipping.
    pub max_grad_norm: f64,
    pub init_log_std: f64,
    pub hidden: Vec<usize>,
    pub estimator_hidden: usize,
    pub estimator_lr: f64,
    /// Record a terrain supervision sample every k-th decision.
    pub supervision_every: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatches: 4,
            entropy_weight: 0.01,
            value_weight: 0.5,
            lr: 3e-4,
            reward_scale: 0.1,
            horizon: 256,
            n_envs: 16,
            alpha: 1.0,
            max_grad_norm: 0.5,
            init_log_std: -1.0,
            hidden: vec![64, 64],
            estimator_hidden: 128,
            estimator_lr: 1e-3,
            supervision_every: 4,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return config("gamma and lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return config("clip epsilon must be > 0");
        }
        if self.epochs == 0 || self.minibatches == 0 || self.horizon == 0 || self.n_envs == 0 {
            return config("epochs, minibatches, horizon and n_envs must be >= 1");
        }
        if self.minibatches > self.horizon * self.n_envs {
            return config("more minibatches than samples per batch");
        }
        if !(self.lr > 0.0) || !(self.estimator_lr > 0.0) || !(self.reward_scale > 0.0) {
            return config("learning rates and reward_scale must be > 0");
        }
        if !(self.alpha >= 0.0 && self.entropy_weight >= 0.0 && self.value_weight >= 0.0 && self.max_grad_norm >= 0.0) {
            return config("alpha, loss weights and max_grad_norm must be >= 0");
        }
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.init_log_std) {
            return config(format!("init_log_std must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}]"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.estimator_hidden == 0 {
            return config("hidden layer sizes must be >= 1");
        }
        Ok(())
    }
}

/// A stochastic action drawn by [`GaussianPolicy::sample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySample {
    pub u: [f64; 3],
    pub log_prob: f64,
    pub value: f64,
}

/// Actor-critic with a state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mode: ObsMode,
    pub obs_scale: Vec<f64>,
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: Vec<f64>,
}

fn gaussian_log_prob(mean: &[f64; 3], log_std: &[f64], u: &[f64; 3]) -> f64 {
    (0..ACTION_DIM)
        .map(|i| {
            let z = (u[i] - mean[i]) * (-log_std[i]).exp();
            -0.5 * z * z - log_std[i] - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

impl GaussianPolicy {
    pub fn new(mode: ObsMode, cfg: &PpoConfig, seed: u64) -> Result<Self> {
        let n = mode.obs_len();
        let mut sizes = vec![n];
        sizes.extend(&cfg.hidden);
        let mut actor_sizes = sizes.clone();
        actor_sizes.push(ACTION_DIM);
        sizes.push(1);
        Ok(Self {
            mode,
            obs_scale: mode.obs_scale(),
            actor: Mlp::new(&actor_sizes, seed)?.with_heads(&[("mean", ACTION_DIM)])?,
            critic: Mlp::new(&sizes, seed.wrapping_add(1))?.with_heads(&[("value", 1)])?,
            log_std: vec![cfg.init_log_std; ACTION_DIM],
        })
    }

    pub fn features(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_scale.len() {
            return Err(Error::Input(format!(
                "{} observation must have {} values, got {}",
                self.mode,
                self.obs_scale.len(),
                obs.len()
            )));
        }
        Ok(obs.iter().zip(&self.obs_scale).map(|(o, s)| o * s).collect())
    }

    fn clamped_log_std(&self) -> [f64; 3] {
        let mut l = [0.0; 3];
        for (o, v) in l.iter_mut().zip(&self.log_std) {
            *o = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        l
    }

    /// Mean of the action distribution in normalized space.
    pub fn mean(&self, obs: &[f64]) -> Result<[f64; 3]> {
        let out = self.actor.forward(&self.features(obs)?)?;
        Ok([out[0].tanh(), out[1].tanh(), out[2].tanh()])
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(&self.features(obs)?)?[0])
    }

    pub fn log_prob(&self, obs: &[f64], u: &[f64; 3]) -> Result<f64> {
        Ok(gaussian_log_prob(&self.mean(obs)?, &self.clamped_log_std(), u))
    }

    pub fn entropy(&self) -> f64 {
        self.clamped_log_std()
            .iter()
            .map(|l| l + 0.5 * (2.0 * PI * std::f64::consts::E).ln())
            .sum()
    }

    pub fn sample(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<PolicySample> {
        let mean = self.mean(obs)?;
        let ls = self.clamped_log_std();
        let mut u = [0.0; 3];
        for i in 0..ACTION_DIM {
            let eps: f64 = rng.sample(StandardNormal);
            u[i] = mean[i] + ls[i].exp() * eps;
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite action sample {u:?} from mean {mean:?}"
            )));
        }
        Ok(PolicySample {
            u,
            log_prob: gaussian_log_prob(&mean, &ls, &u),
            value: self.value(obs)?,
        })
    }

    /// Deterministic action at the distribution mean.
    pub fn act(&self, obs: &[f64]) -> Result<Action> {
        Ok(Action::from_normalized(self.mean(obs)?))
    }

    /// `GPL1`, mode index (u8), log-std (3 x f64 LE), then the actor and
    /// critic checkpoints, each prefixed by its byte length (u64 LE).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(POLICY_MAGIC);
        let mode = ObsMode::ALL.iter().position(|m| *m == self.mode).unwrap() as u8;
        out.push(mode);
        for l in &self.log_std {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for net in [&self.actor, &self.critic] {
            let b = net.to_bytes();
            out.extend_from_slice(&(b.len() as u64).to_le_bytes());
            out.extend_from_slice(&b);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("policy checkpoint: {m}"));
        if bytes.len() < 5 + 24 || &bytes[..4] != POLICY_MAGIC {
            return Err(bad("missing GPL1 magic"));
        }
        let mode = *ObsMode::ALL
            .get(bytes[4] as usize)
            .ok_or_else(|| bad("unknown observation mode"))?;
        let log_std: Vec<f64> = bytes[5..29]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let mut at = 29;
        let mut nets = Vec::with_capacity(2);
        for _ in 0..2 {
            let len = bytes
                .get(at..at + 8)
                .map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize)
                .ok_or_else(|| bad("truncated"))?;
            let body = bytes.get(at + 8..at + 8 + len).ok_or_else(|| bad("truncated"))?;
            nets.push(Mlp::from_bytes(body)?);
            at += 8 + len;
        }
        if at != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let critic = nets.pop().unwrap().with_heads(&[("value", 1)])?;
        let actor = nets.pop().unwrap().with_heads(&[("mean", ACTION_DIM)])?;
        if actor.input_len() != mode.obs_len() || critic.input_len() != mode.obs_len() {
            return Err(bad("network input size does not match the observation mode"));
        }
        if log_std.iter().any(|l| !(LOG_STD_MIN..=LOG_STD_MAX).contains(l)) {
            return Err(bad("log-std outside its clamp range"));
        }
        Ok(Self {
            mode,
            obs_scale: mode.obs_scale(),
            actor,
            critic,
            log_std,
        })
    }
}

const POLICY_MAGIC: &[u8; 4] = b"GPL1";

/// Adam states for the actor, the log standard deviation and the critic.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOptimizer {
    pub actor: AdamState,
    pub log_std: AdamState,
    pub critic: AdamState,
}

impl PolicyOptimizer {
    pub fn new(policy: &GaussianPolicy, lr: f64) -> Self {
        Self {
            actor: AdamState::new(policy.actor.param_count(), lr),
            log_std: AdamState::new(ACTION_DIM, lr),
            critic: AdamState::new(policy.critic.param_count(), lr),
        }
    }
}

/// GAE over one environment's row.
///
/// `dones[t]` marks that decision `t` ended an episode: nothing after it
/// propagates back. `bootstrap` is the critic value after the last decision.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "gae: length mismatch");
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Shifts and scales to mean 0, std 1 (std floored at 1e-8).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Minibatch averages of the PPO loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoLoss {
    /// Negative clipped surrogate.
    pub policy: f64,
    /// Mean squared value error.
    pub value: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
}

impl PpoLoss {
    /// The scalar minimized: `policy + c_v value - c_e entropy`.
    pub fn total(&self, cfg: &PpoConfig) -> f64 {
        self.policy + cfg.value_weight * self.value - cfg.entropy_weight * self.entropy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub actor: Vec<f64>,
    pub log_std: Vec<f64>,
    pub critic: Vec<f64>,
}

/// PPO loss over the samples `idx` and its gradient with respect to every
/// policy parameter. `adv` should already be normalized.
pub fn ppo_loss_grads(
    policy: &GaussianPolicy,
    batch: &RolloutBatch,
    idx: &[usize],
    adv: &[f64],
    ret: &[f64],
    cfg: &PpoConfig,
) -> Result<(PpoLoss, PolicyGrads)> {
    let mut g = PolicyGrads {
        actor: vec![0.0; policy.actor.param_count()],
        log_std: vec![0.0; ACTION_DIM],
        critic: vec![0.0; policy.critic.param_count()],
    };
    let ls = policy.clamped_log_std();
    let inv_var: Vec<f64> = ls.iter().map(|l| (-2.0 * l).exp()).collect();
    let m = idx.len() as f64;
    let mut loss = PpoLoss::default();
    for &k in idx {
        let x = policy.features(&batch.obs[k])?;
        let cache = policy.actor.forward_cached(&x)?;
        let pre = cache.output();
        let mean = [pre[0].tanh(), pre[1].tanh(), pre[2].tanh()];
        let u = &batch.actions[k];
        let logp = gaussian_log_prob(&mean, &ls, u);
        let diff = logp - batch.log_probs[k];
        let ratio = diff.exp();
        let a = adv[k];
        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * a;
        loss.policy -= unclipped.min(clipped) / m;
        loss.approx_kl -= diff / m;
        let is_clipped = (a >= 0.0 && ratio > 1.0 + cfg.clip) || (a < 0.0 && ratio < 1.0 - cfg.clip);
        if (ratio - 1.0).abs() > cfg.clip {
            loss.clip_frac += 1.0 / m;
        }
        if !is_clipped {
            // d(-ratio A)/d logp = -ratio A
            let dlogp = -unclipped / m;
            let mut d_pre = [0.0; 3];
            for i in 0..ACTION_DIM {
                let r = u[i] - mean[i];
                d_pre[i] = dlogp * r * inv_var[i] * (1.0 - mean[i] * mean[i]);
                g.log_std[i] += dlogp * (r * r * inv_var[i] - 1.0);
            }
            policy.actor.backward(&cache, &d_pre, &mut g.actor);
        }
        let vc = policy.critic.forward_cached(&x)?;
        let err = vc.output()[0] - ret[k];
        loss.value += err * err / m;
        policy
            .critic
            .backward(&vc, &[2.0 * cfg.value_weight * err / m], &mut g.critic);
    }
    loss.entropy = policy.entropy();
    for (i, l) in policy.log_std.iter().enumerate() {
        if (LOG_STD_MIN..=LOG_STD_MAX).contains(l) {
            g.log_std[i] -= cfg.entropy_weight;
        } else {
            g.log_std[i] = 0.0;
        }
    }
    if !loss.total(cfg).is_finite() {
        return Err(Error::Training(format!("non-finite PPO loss {loss:?}")));
    }
    Ok((loss, g))
}

/// Averages reported by an update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
    /// Mean terrain loss over the supervision samples (0 without them).
    pub terrain_loss: f64,
    /// `L_PPO + alpha * L_terrain` from the averaged terms.
    pub total_loss: f64,
}

/// The estimator being trained alongside the policy.
pub struct EstimatorTrainer<'a> {
    pub net: &'a mut Mlp,
    pub opt: &'a mut AdamState,
    pub weights: TerrainLossWeights,
}

fn apply_policy_step(
    policy: &mut GaussianPolicy,
    opt: &mut PolicyOptimizer,
    mut g: PolicyGrads,
    cfg: &PpoConfig,
) -> Result<()> {
    if cfg.max_grad_norm > 0.0 {
        clip_global_norm(&mut [&mut g.actor, &mut g.log_std], cfg.max_grad_norm);
        clip_global_norm(&mut [&mut g.critic], cfg.max_grad_norm);
    }
    opt.actor.step(policy.actor.params_mut(), &g.actor)?;
    opt.log_std.step(&mut policy.log_std, &g.log_std)?;
    for l in policy.log_std.iter_mut() {
        *l = l.clamp(LOG_STD_MIN, LOG_STD_MAX);
    }
    opt.critic.step(policy.critic.params_mut(), &g.critic)
}

/// Clipped-surrogate update over `epochs` shuffled passes of the batch.
pub fn ppo_update(
    policy: &mut GaussianPolicy,
    opt: &mut PolicyOptimizer,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    joint_update(policy, opt, None, batch, cfg, rng)
}

/// Minimizes `L_PPO + alpha * L_terrain`.
///
/// The two terms share no parameters: tokens reach the policy as
/// observations only, so the policy receives the PPO gradient and the
/// estimator receives `alpha` times the terrain gradient. Supervision
/// samples are split into the same number of minibatches as the rollout.
pub fn joint_update(
    policy: &mut GaussianPolicy,
    opt: &mut PolicyOptimizer,
    mut estimator: Option<EstimatorTrainer<'_>>,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    cfg.validate()?;
    let (mut adv, ret) = batch.advantages(cfg.gamma, cfg.lambda, cfg.reward_scale);
    normalize_advantages(&mut adv);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mb = cfg.minibatches;
    let chunk = batch.len().div_ceil(mb);
    let sup = &batch.supervision;
    let mut stats = UpdateStats::default();
    let mut n_mb = 0.0;
    let mut n_terrain = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for (k, idx) in order.chunks(chunk).enumerate() {
            let (loss, grads) = ppo_loss_grads(policy, batch, idx, &adv, &ret, cfg)?;
            apply_policy_step(policy, opt, grads, cfg)?;
            stats.policy_loss += loss.policy;
            stats.value_loss += loss.value;
            stats.entropy += loss.entropy;
            stats.clip_frac += loss.clip_frac;
            stats.approx_kl += loss.approx_kl;
            n_mb += 1.0;

            if let Some(est) = estimator.as_mut() {
                let part: Vec<&TerrainSample> = sup
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| (i + epoch) % mb == k)
                    .map(|(_, s)| s)
                    .collect();
                if part.is_empty() {
                    continue;
                }
                let (l, g) = terrain_grads(est.net, &part, &est.weights, cfg.alpha)?;
                if cfg.alpha > 0.0 {
                    est.opt.step(est.net.params_mut(), &g)?;
                }
                stats.terrain_loss += l;
                n_terrain += 1.0;
            }
        }
    }
    stats.policy_loss /= n_mb;
    stats.value_loss /= n_mb;
    stats.entropy /= n_mb;
    stats.clip_frac /= n_mb;
    stats.approx_kl /= n_mb;
    if n_terrain > 0.0 {
        stats.terrain_loss /= n_terrain;
    }
    let ppo = PpoLoss {
        policy: stats.policy_loss,
        value: stats.value_loss,
        entropy: stats.entropy,
        ..PpoLoss::default()
    };
    stats.total_loss = ppo.total(cfg) + cfg.alpha * stats.terrain_loss;
    Ok(stats)
}

/// Mean terrain loss over `samples` and its gradient scaled by `scale`.
pub fn terrain_grads(
    net: &Mlp,
    samples: &[&TerrainSample],
    w: &TerrainLossWeights,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut g = vec![0.0; net.param_count()];
    let m = samples.len() as f64;
    let mut total = 0.0;
    for s in samples {
        total += estimator_backward(net, &s.features, &s.target, w, scale / m, &mut g)?.total;
    }
    let loss = total / m;
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite terrain loss {loss}")));
    }
    Ok((loss, g))
}

/// Supervised estimator epochs over a fixed sample set.
pub fn fit_estimator(
    net: &mut Mlp,
    opt: &mut AdamState,
    samples: &[TerrainSample],
    w: &TerrainLossWeights,
    epochs: usize,
    minibatches: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if samples.is_empty() {
        return config("no supervision samples to fit");
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let chunk = samples.len().div_ceil(minibatches.max(1));
    let mut last = 0.0;
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut count = 0.0;
        for idx in order.chunks(chunk) {
            let part: Vec<&TerrainSample> = idx.iter().map(|i| &samples[*i]).collect();
            let (l, g) = terrain_grads(net, &part, w, 1.0)?;
            opt.step(net.params_mut(), &g)?;
            sum += l;
            count += 1.0;
        }
        last = sum / count;
    }
    Ok(last)
}

/// Mean terrain loss of `net` on `samples` without updating it.
pub fn estimator_loss(net: &Mlp, samples: &[TerrainSample], w: &TerrainLossWeights) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in samples {
        let pred = crate::nn::forward_estimator(net, &s.features)?;
        total += crate::nn::terrain_loss(&pred, &s.target, w).total;
    }
    Ok(total / samples.len() as f64)
}

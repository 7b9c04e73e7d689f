//! TOML experiment configuration. Every section and key is optional; unknown
//! keys are rejected. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stairtoken_core::env::{CommandSchedule, RewardWeights, TokenNoise};
use stairtoken_core::ppo::{PpoConfig, StageBudgets};
use stairtoken_core::world::{Interval, StepCaps};
use stairtoken_core::{EnvConfig, EstimatorConfig, ObsMode, SensorModel, TerrainLossWeights, TokenSource, WorldRanges};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    /// Output root; relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub world: WorldSection,
    pub sensor: SensorSection,
    pub estimator: EstimatorSection,
    pub env: EnvSection,
    pub ppo: PpoSection,
    pub train: TrainSection,
    pub gen: GenSection,
    pub benchmark: BenchmarkSection,
    pub ablation: AblationSection,
    pub generalize: GeneralizeSection,
    pub track: TrackSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            out: None,
            world: WorldSection::default(),
            sensor: SensorSection::default(),
            estimator: EstimatorSection::default(),
            env: EnvSection::default(),
            ppo: PpoSection::default(),
            train: TrainSection::default(),
            gen: GenSection::default(),
            benchmark: BenchmarkSection::default(),
            ablation: AblationSection::default(),
            generalize: GeneralizeSection::default(),
            track: TrackSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    /// Relative weights of flat, up and down worlds.
    pub class_weights: [f64; 3],
    pub h_step: [f64; 2],
    pub d_step: [f64; 2],
    pub yaw_deg: [f64; 2],
    pub n_steps: [u32; 2],
    pub lead_flat: [f64; 2],
    pub tail_flat: [f64; 2],
    pub h_max: f64,
    pub d_max: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        let r = WorldRanges::default();
        Self {
            class_weights: r.class_weights,
            h_step: [r.h_step.min, r.h_step.max],
            d_step: [r.d_step.min, r.d_step.max],
            yaw_deg: [r.yaw.min.to_degrees(), r.yaw.max.to_degrees()],
            n_steps: [r.n_steps.0, r.n_steps.1],
            lead_flat: [r.lead_flat.min, r.lead_flat.max],
            tail_flat: [r.tail_flat.min, r.tail_flat.max],
            h_max: r.caps.h_max,
            d_max: r.caps.d_max,
        }
    }
}

impl WorldSection {
    pub fn ranges(&self) -> Result<WorldRanges> {
        let iv = |v: [f64; 2]| Interval::new(v[0], v[1]);
        let r = WorldRanges {
            class_weights: self.class_weights,
            h_step: iv(self.h_step),
            d_step: iv(self.d_step),
            yaw: Interval::new(self.yaw_deg[0].to_radians(), self.yaw_deg[1].to_radians()),
            n_steps: (self.n_steps[0], self.n_steps[1]),
            lead_flat: iv(self.lead_flat),
            tail_flat: iv(self.tail_flat),
            caps: StepCaps {
                h_max: self.h_max,
                d_max: self.d_max,
            },
        };
        r.validate().context("[world]")?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSection {
    pub window: f64,
    pub sample_pitch: f64,
    pub noise_sigma_z: f64,
    pub dropout_rate: f64,
    pub occlusion: bool,
    pub sensor_height: f64,
}

impl Default for SensorSection {
    fn default() -> Self {
        let s = SensorModel::default();
        Self {
            window: s.window,
            sample_pitch: s.sample_pitch,
            noise_sigma_z: s.noise_sigma_z,
            dropout_rate: s.dropout_rate,
            occlusion: s.occlusion,
            sensor_height: s.sensor_height,
        }
    }
}

impl SensorSection {
    pub fn model(&self) -> Result<SensorModel> {
        let m = SensorModel {
            window: self.window,
            sample_pitch: self.sample_pitch,
            noise_sigma_z: self.noise_sigma_z,
            dropout_rate: self.dropout_rate,
            occlusion: self.occlusion,
            sensor_height: self.sensor_height,
        };
        m.validate().context("[sensor]")?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub yaw_min_deg: f64,
    pub yaw_max_deg: f64,
    pub yaw_pitch_deg: f64,
    pub profile_bin: f64,
    pub riser_threshold: f64,
    pub min_risers_for_stairs: usize,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let e = EstimatorConfig::default();
        Self {
            yaw_min_deg: e.yaw_min_deg,
            yaw_max_deg: e.yaw_max_deg,
            yaw_pitch_deg: e.yaw_pitch_deg,
            profile_bin: e.profile_bin,
            riser_threshold: e.riser_threshold,
            min_risers_for_stairs: e.min_risers_for_stairs,
        }
    }
}

impl EstimatorSection {
    pub fn config(&self) -> Result<EstimatorConfig> {
        let e = EstimatorConfig {
            yaw_min_deg: self.yaw_min_deg,
            yaw_max_deg: self.yaw_max_deg,
            yaw_pitch_deg: self.yaw_pitch_deg,
            profile_bin: self.profile_bin,
            riser_threshold: self.riser_threshold,
            min_risers_for_stairs: self.min_risers_for_stairs,
        };
        e.validate().context("[estimator]")?;
        Ok(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub obs_mode: String,
    pub token_source: String,
    pub token_sigma_h: f64,
    pub token_sigma_d: f64,
    pub token_flip_prob: f64,
    pub horizon: u32,
    /// `[first decision, v_cmd]` pairs.
    pub command: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command_range: Option<[f64; 2]>,
    pub w_v: f64,
    pub w_f: f64,
    pub w_c: f64,
    pub w_theta: f64,
    pub fail_penalty: f64,
    pub success_bonus: f64,
    pub edge_margin: f64,
    pub step_duration: f64,
    pub velocity_smoothing: f64,
    pub init_heading_err_deg: f64,
    pub start_jitter: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        let e = EnvConfig::default();
        Self {
            obs_mode: e.obs_mode.name().into(),
            token_source: e.token_source.name().into(),
            token_sigma_h: e.token_noise.sigma_h,
            token_sigma_d: e.token_noise.sigma_d,
            token_flip_prob: e.token_noise.flip_prob,
            horizon: e.horizon,
            command: schedule_to_pairs(&e.command),
            command_range: None,
            w_v: e.reward.w_v,
            w_f: e.reward.w_f,
            w_c: e.reward.w_c,
            w_theta: e.reward.w_theta,
            fail_penalty: e.reward.fail_penalty,
            success_bonus: e.reward.success_bonus,
            edge_margin: e.edge_margin,
            step_duration: e.step_duration,
            velocity_smoothing: e.velocity_smoothing,
            init_heading_err_deg: e.init_heading_err.to_degrees(),
            start_jitter: e.start_jitter,
        }
    }
}

fn schedule_to_pairs(s: &CommandSchedule) -> Vec<[f64; 2]> {
    s.segments.iter().map(|(t, v)| [*t as f64, *v]).collect()
}

pub fn pairs_to_schedule(pairs: &[[f64; 2]]) -> Result<CommandSchedule> {
    let mut segments = Vec::with_capacity(pairs.len());
    for p in pairs {
        if !(p[0] >= 0.0 && p[0].fract() == 0.0 && p[0] <= u32::MAX as f64) {
            bail!("command segment start {} is not a decision index", p[0]);
        }
        segments.push((p[0] as u32, p[1]));
    }
    let s = CommandSchedule { segments };
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoSection {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_weight: f64,
    pub value_weight: f64,
    pub lr: f64,
    pub reward_scale: f64,
    pub horizon: usize,
    pub n_envs: usize,
    pub alpha: f64,
    pub max_grad_norm: f64,
    pub init_log_std: f64,
    pub hidden: Vec<usize>,
    pub estimator_hidden: usize,
    pub estimator_lr: f64,
    pub supervision_every: usize,
}

impl Default for PpoSection {
    fn default() -> Self {
        let p = PpoConfig::default();
        Self {
            gamma: p.gamma,
            lambda: p.lambda,
            clip: p.clip,
            epochs: p.epochs,
            minibatches: p.minibatches,
            entropy_weight: p.entropy_weight,
            value_weight: p.value_weight,
            lr: p.lr,
            reward_scale: p.reward_scale,
            horizon: p.horizon,
            n_envs: p.n_envs,
            alpha: p.alpha,
            max_grad_norm: p.max_grad_norm,
            init_log_std: p.init_log_std,
            hidden: p.hidden,
            estimator_hidden: p.estimator_hidden,
            estimator_lr: p.estimator_lr,
            supervision_every: p.supervision_every,
        }
    }
}

impl PpoSection {
    pub fn config(&self) -> Result<PpoConfig> {
        let p = PpoConfig {
            gamma: self.gamma,
            lambda: self.lambda,
            clip: self.clip,
            epochs: self.epochs,
            minibatches: self.minibatches,
            entropy_weight: self.entropy_weight,
            value_weight: self.value_weight,
            lr: self.lr,
            reward_scale: self.reward_scale,
            horizon: self.horizon,
            n_envs: self.n_envs,
            alpha: self.alpha,
            max_grad_norm: self.max_grad_norm,
            init_log_std: self.init_log_std,
            hidden: self.hidden.clone(),
            estimator_hidden: self.estimator_hidden,
            estimator_lr: self.estimator_lr,
            supervision_every: self.supervision_every,
        };
        p.validate().context("[ppo]")?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub stage1_updates: usize,
    pub stage2_updates: usize,
    pub stage3_updates: usize,
    pub lambda_cls: f64,
    pub lambda_h: f64,
    pub lambda_d: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let b = StageBudgets::default();
        let w = TerrainLossWeights::default();
        Self {
            stage1_updates: b.policy,
            stage2_updates: b.estimator,
            stage3_updates: b.joint,
            lambda_cls: w.lambda_cls,
            lambda_h: w.lambda_h,
            lambda_d: w.lambda_d,
        }
    }
}

impl TrainSection {
    pub fn budgets(&self) -> Result<StageBudgets> {
        let b = StageBudgets {
            policy: self.stage1_updates,
            estimator: self.stage2_updates,
            joint: self.stage3_updates,
        };
        b.validate().context("[train]")?;
        Ok(b)
    }

    pub fn weights(&self) -> Result<TerrainLossWeights> {
        let w = TerrainLossWeights {
            lambda_cls: self.lambda_cls,
            lambda_h: self.lambda_h,
            lambda_d: self.lambda_d,
        };
        w.validate().context("[train]")?;
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    /// Worlds generated, seeds `seeds[0] .. seeds[0] + count`.
    pub count: usize,
    /// "ply" or "xyz".
    pub cloud_format: String,
}

impl Default for GenSection {
    fn default() -> Self {
        Self {
            count: 8,
            cloud_format: "ply".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub configs: usize,
    pub class_weights: [f64; 3],
    pub h_step: [f64; 2],
    pub d_step: [f64; 2],
    /// Stair direction relative to the robot heading.
    pub theta_deg: [f64; 2],
    /// Robot position along the walking axis, relative to the first riser.
    pub s0: [f64; 2],
    pub n_steps: [u32; 2],
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            configs: 1000,
            class_weights: [1.0, 2.0, 2.0],
            h_step: [0.10, 0.25],
            d_step: [0.25, 0.35],
            theta_deg: [-20.0, 20.0],
            s0: [-0.5, 0.5],
            n_steps: [8, 12],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub updates: usize,
    pub eval_episodes: usize,
    /// Token source used when evaluating the token policy.
    pub eval_token_source: String,
    /// Training success rate that counts as "reached".
    pub success_threshold: f64,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            updates: 150,
            eval_episodes: 100,
            eval_token_source: "analytic".into(),
            success_threshold: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralizeSection {
    pub modes: Vec<String>,
    pub train_heights: Vec<f64>,
    pub eval_heights: Vec<f64>,
    pub episodes: usize,
    pub updates: usize,
    pub eval_token_source: String,
}

impl Default for GeneralizeSection {
    fn default() -> Self {
        Self {
            modes: vec!["blind".into(), "heightscan".into(), "token".into()],
            train_heights: vec![0.12, 0.14, 0.16],
            eval_heights: vec![0.12, 0.14, 0.16, 0.18, 0.20, 0.22],
            episodes: 100,
            updates: 150,
            eval_token_source: "analytic".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSection {
    /// Policy checkpoint to run; trained from scratch when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PathBuf>,
    pub updates: usize,
    /// Per-episode command range used while training.
    pub train_command_range: [f64; 2],
    pub command: Vec<[f64; 2]>,
    /// 1 = up, 2 = down.
    pub class: usize,
    pub h_step: f64,
    pub d_step: f64,
    pub token_source: String,
    /// Bound on the mean |v_avg - v_cmd| after each command change settles.
    pub steady_state_bound: f64,
    /// Decisions after a command change excluded from the steady state.
    pub settle_steps: u32,
}

impl Default for TrackSection {
    fn default() -> Self {
        Self {
            policy: None,
            updates: 150,
            train_command_range: [0.4, 0.8],
            command: vec![[0.0, 0.6], [50.0, 0.5], [100.0, 0.7], [150.0, 0.6]],
            class: 1,
            h_step: 0.14,
            d_step: 0.30,
            token_source: "analytic".into(),
            steady_state_bound: 0.1,
            settle_steps: 5,
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [cfg.out.as_mut(), cfg.track.policy.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Checks every section by building the core types.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds list is empty");
        }
        self.world.ranges()?;
        self.env_config()?;
        self.ppo.config()?;
        self.train.weights()?;
        parse_modes(&self.generalize.modes)?;
        TokenSource::parse(&self.ablation.eval_token_source)?;
        TokenSource::parse(&self.generalize.eval_token_source)?;
        TokenSource::parse(&self.track.token_source)?;
        pairs_to_schedule(&self.track.command).context("[track] command")?;
        if !matches!(self.gen.cloud_format.as_str(), "ply" | "xyz") {
            bail!("[gen] cloud_format must be \"ply\" or \"xyz\"");
        }
        Ok(())
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let e = &self.env;
        let cfg = EnvConfig {
            obs_mode: ObsMode::parse(&e.obs_mode)?,
            token_source: TokenSource::parse(&e.token_source)?,
            token_noise: TokenNoise {
                sigma_h: e.token_sigma_h,
                sigma_d: e.token_sigma_d,
                flip_prob: e.token_flip_prob,
            },
            horizon: e.horizon,
            command: pairs_to_schedule(&e.command).context("[env] command")?,
            command_range: e.command_range.map(|r| (r[0], r[1])),
            reward: RewardWeights {
                w_v: e.w_v,
                w_f: e.w_f,
                w_c: e.w_c,
                w_theta: e.w_theta,
                fail_penalty: e.fail_penalty,
                success_bonus: e.success_bonus,
            },
            edge_margin: e.edge_margin,
            step_duration: e.step_duration,
            velocity_smoothing: e.velocity_smoothing,
            init_heading_err: e.init_heading_err_deg.to_radians(),
            start_jitter: e.start_jitter,
            sensor: self.sensor.model()?,
            estimator: self.estimator.config()?,
        };
        cfg.validate().context("[env]")?;
        Ok(cfg)
    }

    /// Canonical TOML of everything that affects results (the output root
    /// excluded).
    pub fn canonical_toml(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        toml::to_string(&c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_toml().as_bytes()))
    }
}

pub fn parse_modes(names: &[String]) -> Result<Vec<ObsMode>> {
    if names.is_empty() {
        bail!("mode list is empty");
    }
    names.iter().map(|n| Ok(ObsMode::parse(n)?)).collect()
}

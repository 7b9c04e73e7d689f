//! Experiment bodies shared by the command handlers and the acceptance
//! suite. Nothing here touches the filesystem.

use std::f64::consts::PI;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stairtoken_core::env::{metrics, CommandSchedule, EpisodeRecord, Event};
use stairtoken_core::ppo::{evaluate, train_policy, CurveRow, GaussianPolicy, WorldSource};
use stairtoken_core::world::{wrap_angle, StairSpec};
use stairtoken_core::{
    estimate_token, generate_stairs, project, scan, BevGrid, EvalMetrics, ObsMode, PointCloud, Pose, StairClass,
    StepperEnv, TerrainProfile, TerrainToken, TokenEstimate, TokenSource,
};

use crate::config::{pairs_to_schedule, parse_modes, BenchmarkSection, ExperimentConfig};

/// Separates evaluation worlds from training worlds drawn with the same seed.
const EVAL_SALT: u64 = 0x0e7a_15ee_d5a1_7000;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; `None` below two values.
pub fn sample_std(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some((v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

/// One sensed world: the robot's pose, its point cloud and BEV grid.
#[derive(Debug, Clone)]
pub struct SensedWorld {
    pub seed: u64,
    pub spec: StairSpec,
    pub pose: Pose,
    pub truth: TerrainToken,
    pub cloud: PointCloud,
    pub grid: BevGrid,
}

/// Places the robot where an episode on `spec` starts and scans once.
pub fn sense_world(cfg: &ExperimentConfig, spec: StairSpec, seed: u64) -> Result<SensedWorld> {
    let env_cfg = cfg.env_config()?;
    let mut env = StepperEnv::new(env_cfg.clone())?;
    env.reset(spec, seed)?;
    let pose = env.pose();
    let cloud = scan(env.profile(), pose, &env_cfg.sensor, seed)?;
    let grid = project(&cloud)?;
    Ok(SensedWorld {
        seed,
        spec,
        pose,
        truth: env.ground_truth_token(),
        cloud,
        grid,
    })
}

/// Worlds for seeds `base .. base + cfg.gen.count` drawn from `[world]`.
pub fn gen_worlds(cfg: &ExperimentConfig, base: u64) -> Result<Vec<SensedWorld>> {
    let ranges = cfg.world.ranges()?;
    (0..cfg.gen.count as u64)
        .map(|i| {
            let seed = base.wrapping_add(i);
            sense_world(cfg, generate_stairs(seed, &ranges)?, seed)
        })
        .collect()
}

/// One estimator benchmark configuration.
#[derive(Debug, Clone)]
pub struct BenchCase {
    pub spec: StairSpec,
    pub pose: Pose,
    pub truth: TerrainToken,
    pub scan_seed: u64,
}

/// Draws a world and a robot pose near its first riser.
pub fn bench_case(seed: u64, b: &BenchmarkSection) -> Result<BenchCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = b.class_weights.iter().sum();
    if !(total > 0.0) || b.class_weights.iter().any(|w| *w < 0.0) {
        bail!("[benchmark] class weights must be >= 0 and not all zero");
    }
    let mut pick = rng.random::<f64>() * total;
    let mut class = StairClass::StairsDown;
    for (c, w) in StairClass::ALL.iter().zip(b.class_weights) {
        if pick < w {
            class = *c;
            break;
        }
        pick -= w;
    }
    let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
        if r[1] > r[0] {
            rng.random_range(r[0]..=r[1])
        } else {
            r[0]
        }
    };
    let h = uniform(&mut rng, b.h_step);
    let d = uniform(&mut rng, b.d_step);
    let n = rng.random_range(b.n_steps[0]..=b.n_steps[1].max(b.n_steps[0]));
    let stair_yaw = wrap_angle(rng.random_range(-PI..PI));
    let s0 = uniform(&mut rng, b.s0);
    let theta = uniform(&mut rng, [b.theta_deg[0].to_radians(), b.theta_deg[1].to_radians()]);
    let spec = match class {
        StairClass::Flat => StairSpec {
            stair_yaw,
            ..StairSpec::flat()
        },
        _ => StairSpec {
            stair_yaw,
            lead_flat: 2.0,
            tail_flat: 1.0,
            ..StairSpec::stairs(class, h, d, n)
        },
    };
    spec.validate()?;
    let profile = TerrainProfile::new(spec)?;
    let xy = profile.point_on_axis(s0);
    let heading = wrap_angle(stair_yaw + theta);
    Ok(BenchCase {
        spec,
        pose: Pose::new(xy[0], xy[1], heading),
        truth: profile.ground_truth_token(heading, xy),
        scan_seed: rng.random(),
    })
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub case: BenchCase,
    pub estimate: TokenEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSummary {
    pub configs: usize,
    pub stair_configs: usize,
    /// Meters.
    pub mae_h: f64,
    pub mae_d: f64,
    /// Degrees, over stair configurations only.
    pub mae_theta_deg: f64,
    pub class_accuracy: f64,
}

pub fn summarize_bench(rows: &[BenchRow]) -> BenchSummary {
    let stairs: Vec<&BenchRow> = rows.iter().filter(|r| r.case.truth.class != StairClass::Flat).collect();
    let over_stairs = |f: &dyn Fn(&BenchRow) -> f64| {
        if stairs.is_empty() {
            0.0
        } else {
            stairs.iter().map(|r| f(r)).sum::<f64>() / stairs.len() as f64
        }
    };
    let correct = rows
        .iter()
        .filter(|r| r.estimate.token.class == r.case.truth.class)
        .count();
    BenchSummary {
        configs: rows.len(),
        stair_configs: stairs.len(),
        mae_h: over_stairs(&|r| (r.estimate.token.h_step - r.case.truth.h_step).abs()),
        mae_d: over_stairs(&|r| (r.estimate.token.d_step - r.case.truth.d_step).abs()),
        mae_theta_deg: over_stairs(&|r| {
            wrap_angle(r.estimate.token.theta - r.case.truth.theta)
                .abs()
                .to_degrees()
        }),
        class_accuracy: correct as f64 / rows.len().max(1) as f64,
    }
}

/// Runs the analytic estimator on `[benchmark] configs` random cases.
pub fn benchmark_estimator(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<BenchRow>, BenchSummary)> {
    let sensor = cfg.sensor.model()?;
    let est_cfg = cfg.estimator.config()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(cfg.benchmark.configs);
    for _ in 0..cfg.benchmark.configs {
        let case = bench_case(master.random(), &cfg.benchmark)?;
        let profile = TerrainProfile::new(case.spec)?;
        let grid = project(&scan(&profile, case.pose, &sensor, case.scan_seed)?)?;
        let estimate = estimate_token(&grid, &est_cfg);
        rows.push(BenchRow { case, estimate });
    }
    let summary = summarize_bench(&rows);
    Ok((rows, summary))
}

/// `n` evaluation worlds paired across modes for one seed.
pub fn eval_specs(worlds: &WorldSource, seed: u64, n: usize) -> Result<Vec<StairSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SALT);
    (0..n).map(|_| Ok(worlds.sample(rng.random())?)).collect()
}

/// Deterministic evaluation; the token policy sees tokens from
/// `token_source`.
pub fn evaluate_mode(
    cfg: &ExperimentConfig,
    policy: &GaussianPolicy,
    specs: &[StairSpec],
    token_source: TokenSource,
    seed: u64,
) -> Result<Vec<EpisodeRecord>> {
    if token_source == TokenSource::Learned {
        bail!("evaluation with learned tokens needs the train command's estimator");
    }
    let env_cfg = stairtoken_core::EnvConfig {
        obs_mode: policy.mode,
        token_source,
        ..cfg.env_config()?
    };
    Ok(evaluate(policy, &env_cfg, specs, seed ^ EVAL_SALT, None)?)
}

#[derive(Debug, Clone)]
pub struct ModeRun {
    pub mode: ObsMode,
    pub seed: u64,
    pub curves: Vec<CurveRow>,
    pub metrics: EvalMetrics,
    /// Updates performed when the training success rate first reached the
    /// threshold.
    pub updates_to_threshold: Option<usize>,
    pub policy: GaussianPolicy,
}

fn train_mode(
    cfg: &ExperimentConfig,
    mode: ObsMode,
    worlds: &WorldSource,
    updates: usize,
    seed: u64,
) -> Result<GaussianPolicy> {
    let env_cfg = stairtoken_core::EnvConfig {
        obs_mode: mode,
        token_source: TokenSource::GroundTruth,
        ..cfg.env_config()?
    };
    let out = train_policy(&env_cfg, worlds, &cfg.ppo.config()?, updates, seed)
        .with_context(|| format!("training {mode} seed {seed}"))?;
    Ok(out.policy)
}

/// Trains Blind, HeightScan and Token with identical budgets and seeds, then
/// evaluates each on the same worlds.
pub fn ablation(cfg: &ExperimentConfig, seeds: &[u64], mut progress: impl FnMut(&ModeRun)) -> Result<Vec<ModeRun>> {
    let a = &cfg.ablation;
    let eval_source = TokenSource::parse(&a.eval_token_source)?;
    let worlds = WorldSource::new(cfg.world.ranges()?);
    let ppo = cfg.ppo.config()?;
    let mut runs = Vec::new();
    for &seed in seeds {
        let specs = eval_specs(&worlds, seed, a.eval_episodes)?;
        for mode in ObsMode::ALL {
            let env_cfg = stairtoken_core::EnvConfig {
                obs_mode: mode,
                token_source: TokenSource::GroundTruth,
                ..cfg.env_config()?
            };
            let out = train_policy(&env_cfg, &worlds, &ppo, a.updates, seed)
                .with_context(|| format!("training {mode} seed {seed}"))?;
            let records = evaluate_mode(cfg, &out.policy, &specs, eval_source, seed)?;
            let run = ModeRun {
                mode,
                seed,
                metrics: metrics(&records)?,
                updates_to_threshold: out
                    .curves
                    .iter()
                    .position(|r| r.success_rate >= a.success_threshold)
                    .map(|i| i + 1),
                curves: out.curves,
                policy: out.policy,
            };
            progress(&run);
            runs.push(run);
        }
    }
    Ok(runs)
}

/// Mean and sample std of each metric over seeds, per mode.
#[derive(Debug, Clone)]
pub struct ModeSummary {
    pub mode: ObsMode,
    pub mean: EvalMetrics,
    pub std: Option<EvalMetrics>,
}

pub fn summarize_modes(runs: &[ModeRun]) -> Vec<ModeSummary> {
    let mut out = Vec::new();
    for mode in ObsMode::ALL {
        let ms: Vec<EvalMetrics> = runs.iter().filter(|r| r.mode == mode).map(|r| r.metrics).collect();
        if ms.is_empty() {
            continue;
        }
        let col = |f: fn(&EvalMetrics) -> f64| ms.iter().map(f).collect::<Vec<f64>>();
        let cols = [
            col(|m| m.e_vel),
            col(|m| m.e_ang),
            col(|m| m.m_terrain),
            col(|m| m.m_reward),
            col(|m| m.success_rate),
        ];
        let pack = |v: Vec<f64>| EvalMetrics {
            e_vel: v[0],
            e_ang: v[1],
            m_terrain: v[2],
            m_reward: v[3],
            success_rate: v[4],
        };
        let means = pack(cols.iter().map(|c| mean(c)).collect());
        let std = if ms.len() >= 2 {
            Some(pack(cols.iter().map(|c| sample_std(c).unwrap()).collect()))
        } else {
            None
        };
        out.push(ModeSummary { mode, mean: means, std });
    }
    out
}

#[derive(Debug, Clone)]
pub struct GeneralizeRow {
    pub height: f64,
    pub mode: ObsMode,
    /// Success rate per seed, in seed order.
    pub per_seed: Vec<f64>,
}

impl GeneralizeRow {
    pub fn mean(&self) -> f64 {
        mean(&self.per_seed)
    }

    pub fn std(&self) -> Option<f64> {
        sample_std(&self.per_seed)
    }
}

/// Trains on the discrete training heights and evaluates every height.
pub fn generalize(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    mut progress: impl FnMut(ObsMode, u64, &[f64]),
) -> Result<Vec<GeneralizeRow>> {
    let g = &cfg.generalize;
    let modes = parse_modes(&g.modes)?;
    let eval_source = TokenSource::parse(&g.eval_token_source)?;
    let ranges = cfg.world.ranges()?;
    let train_worlds = WorldSource::with_heights(ranges.clone(), g.train_heights.clone());
    train_worlds.validate()?;
    let mut rows: Vec<GeneralizeRow> = g
        .eval_heights
        .iter()
        .flat_map(|&h| {
            modes.iter().map(move |&mode| GeneralizeRow {
                height: h,
                mode,
                per_seed: Vec::new(),
            })
        })
        .collect();
    for &seed in seeds {
        for &mode in &modes {
            let policy = train_mode(cfg, mode, &train_worlds, g.updates, seed)?;
            let mut rates = Vec::new();
            for &h in &g.eval_heights {
                let worlds = WorldSource::with_heights(ranges.clone(), vec![h]);
                let specs = eval_specs(&worlds, seed, g.episodes)?;
                let records = evaluate_mode(cfg, &policy, &specs, eval_source, seed)?;
                let rate = metrics(&records)?.success_rate;
                rates.push(rate);
                rows.iter_mut()
                    .find(|r| r.height == h && r.mode == mode)
                    .unwrap()
                    .per_seed
                    .push(rate);
            }
            progress(mode, seed, &rates);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRow {
    /// Start of the footstep, seconds.
    pub time: f64,
    pub v_cmd: f64,
    /// Running average velocity at the end of the footstep.
    pub v_measured: f64,
    pub event: Event,
}

#[derive(Debug, Clone)]
pub struct TrackResult {
    pub rows: Vec<TrackRow>,
    /// Mean |v_measured - v_cmd| over settled footsteps.
    pub steady_state_error: f64,
    pub resets: usize,
}

/// Trains a token policy on per-episode random commands.
pub fn train_tracking_policy(cfg: &ExperimentConfig, seed: u64) -> Result<GaussianPolicy> {
    let t = &cfg.track;
    let env_cfg = stairtoken_core::EnvConfig {
        obs_mode: ObsMode::Token,
        token_source: TokenSource::GroundTruth,
        command_range: Some((t.train_command_range[0], t.train_command_range[1])),
        ..cfg.env_config()?
    };
    let worlds = WorldSource::new(cfg.world.ranges()?);
    Ok(train_policy(&env_cfg, &worlds, &cfg.ppo.config()?, t.updates, seed)?.policy)
}

/// Runs `policy` for `[env] horizon` footsteps on a long flight under the
/// `[track]` command schedule. A failed episode restarts at the bottom of
/// the flight with the schedule continuing where it was.
pub fn track(cfg: &ExperimentConfig, policy: &GaussianPolicy, seed: u64) -> Result<TrackResult> {
    let t = &cfg.track;
    if policy.mode != ObsMode::Token {
        bail!("tracking runs the token policy, got a {} policy", policy.mode);
    }
    let schedule: CommandSchedule = pairs_to_schedule(&t.command)?;
    let base = cfg.env_config()?;
    let horizon = base.horizon;
    let class = StairClass::from_index(t.class)?;
    if class == StairClass::Flat {
        bail!("[track] class must be 1 (up) or 2 (down)");
    }
    let spec = StairSpec::stairs(class, t.h_step, t.d_step, horizon + 2);
    spec.validate()?;
    let mut rows = Vec::with_capacity(horizon as usize);
    let mut resets = 0;
    let mut done_at = 0u32;
    while done_at < horizon {
        let env_cfg = stairtoken_core::EnvConfig {
            obs_mode: ObsMode::Token,
            token_source: TokenSource::parse(&t.token_source)?,
            command: schedule.shifted(done_at),
            command_range: None,
            horizon: horizon - done_at,
            ..base.clone()
        };
        let mut env = StepperEnv::new(env_cfg)?;
        let mut obs = env.reset(spec, seed.wrapping_add(resets as u64))?;
        loop {
            let k = done_at as f64;
            let v_cmd = env.state().v_cmd;
            let step = env.step(policy.act(&obs)?)?;
            rows.push(TrackRow {
                time: k * base.step_duration,
                v_cmd,
                v_measured: env.state().v_avg,
                event: step.event,
            });
            done_at += 1;
            if step.done {
                break;
            }
            obs = step.obs;
        }
        resets += 1;
    }
    let settled: Vec<f64> = rows
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let k = *k as u32;
            let start = schedule
                .segments
                .iter()
                .filter(|s| s.0 <= k)
                .map(|s| s.0)
                .max()
                .unwrap_or(0);
            k - start >= t.settle_steps
        })
        .map(|(_, r)| (r.v_measured - r.v_cmd).abs())
        .collect();
    Ok(TrackResult {
        steady_state_error: if settled.is_empty() { 0.0 } else { mean(&settled) },
        rows,
        resets: resets - 1,
    })
}

//! Planar kinematic stepper on a stair world.
//!
//! The robot walks along the stair axis one footstep per decision. Each
//! action picks a stride, a swing clearance and a heading correction. The
//! swing foot follows a parabola from the current tread to the landing
//! point; touching the terrain on the way (a scuff) or landing within the
//! edge margin of a riser ends the episode in failure. Passing the last
//! riser ends it in success.

mod metrics;

pub use metrics::{metrics, success, EpisodeRecord, EvalMetrics};

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bev::{project, BevGrid};
use crate::error::{config, Error, Result};
use crate::estimator::{estimate_token, EstimatorConfig};
use crate::nn::{learned_token, Mlp};
use crate::sensor::{scan, Pose, SensorModel};
use crate::world::{wrap_angle, StairClass, StairSpec, TerrainProfile, TerrainToken};

/// Spacing of swing-arc collision samples, meters.
pub const ARC_PITCH: f64 = 0.01;
pub const SCAN_POINTS: usize = 17;
pub const SCAN_SPACING: f64 = 0.10;
const MIN_LEAD_FLAT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObsMode {
    Blind,
    HeightScan,
    Token,
}

impl ObsMode {
    pub const ALL: [ObsMode; 3] = [ObsMode::Blind, ObsMode::HeightScan, ObsMode::Token];

    pub fn obs_len(self) -> usize {
        match self {
            ObsMode::Blind => 6,
            ObsMode::HeightScan => 6 + SCAN_POINTS,
            ObsMode::Token => 12,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObsMode::Blind => "blind",
            ObsMode::HeightScan => "heightscan",
            ObsMode::Token => "token",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "blind" => Ok(ObsMode::Blind),
            "heightscan" | "height_scan" | "height-scan" => Ok(ObsMode::HeightScan),
            "token" => Ok(ObsMode::Token),
            _ => config(format!("unknown observation mode {s:?} (blind, heightscan, token)")),
        }
    }

    /// Fixed per-component scale bringing observations to order one.
    pub fn obs_scale(self) -> Vec<f64> {
        let mut s = vec![
            5.0,
            2.0,
            2.0,
            1.0 / Action::STRIDE.1,
            1.0 / Action::CLEARANCE.1,
            1.0 / Action::DTHETA.1,
        ];
        match self {
            ObsMode::Blind => {}
            ObsMode::HeightScan => s.extend([2.0; SCAN_POINTS]),
            ObsMode::Token => s.extend([1.0, 1.0, 1.0, 5.0, 3.0, 3.0]),
        }
        s
    }
}

impl fmt::Display for ObsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenSource {
    GroundTruth,
    Analytic,
    Learned,
}

impl TokenSource {
    pub fn name(self) -> &'static str {
        match self {
            TokenSource::GroundTruth => "ground-truth",
            TokenSource::Analytic => "analytic",
            TokenSource::Learned => "learned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ground-truth" | "ground_truth" | "gt" => Ok(TokenSource::GroundTruth),
            "analytic" | "analytic-estimator" => Ok(TokenSource::Analytic),
            "learned" | "learned-estimator" => Ok(TokenSource::Learned),
            _ => config(format!("unknown token source {s:?} (ground-truth, analytic, learned)")),
        }
    }
}

/// Perturbation applied to every token the policy observes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TokenNoise {
    pub sigma_h: f64,
    pub sigma_d: f64,
    pub flip_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub w_v: f64,
    pub w_f: f64,
    pub w_c: f64,
    pub w_theta: f64,
    pub fail_penalty: f64,
    pub success_bonus: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_v: 1.0,
            w_f: 2.0,
            w_c: 0.5,
            w_theta: 0.5,
            fail_penalty: 10.0,
            success_bonus: 10.0,
        }
    }
}

/// Piecewise-constant velocity command: `(first decision index, v_cmd)`
/// pairs sorted by index, the first starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandSchedule {
    pub segments: Vec<(u32, f64)>,
}

impl CommandSchedule {
    pub fn constant(v: f64) -> Self {
        Self { segments: vec![(0, v)] }
    }

    pub fn at(&self, t: u32) -> f64 {
        self.segments
            .iter()
            .take_while(|(start, _)| *start <= t)
            .last()
            .map(|s| s.1)
            .unwrap_or(self.segments[0].1)
    }

    /// The schedule as seen from decision `t` onwards.
    pub fn shifted(&self, t: u32) -> Self {
        let mut segments = vec![(0, self.at(t))];
        segments.extend(self.segments.iter().filter(|s| s.0 > t).map(|s| (s.0 - t, s.1)));
        Self { segments }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.first().map(|s| s.0) != Some(0) {
            return config("command schedule must start at decision 0");
        }
        if self.segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return config("command schedule indices must be strictly increasing");
        }
        if self.segments.iter().any(|s| !s.1.is_finite() || s.1 < 0.0) {
            return config("commanded velocities must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub obs_mode: ObsMode,
    pub token_source: TokenSource,
    pub token_noise: TokenNoise,
    /// Decisions per episode.
    pub horizon: u32,
    pub command: CommandSchedule,
    /// When set, each episode replaces `command` with a constant drawn
    /// uniformly from this range.
    pub command_range: Option<(f64, f64)>,
    pub reward: RewardWeights,
    pub edge_margin: f64,
    /// Seconds per footstep.
    pub step_duration: f64,
    /// Weight of the newest step in the running velocity average.
    pub velocity_smoothing: f64,
    /// Initial heading error drawn uniformly from `±init_heading_err`.
    pub init_heading_err: f64,
    /// Uniform jitter added to the mid-tread start position.
    pub start_jitter: f64,
    pub sensor: SensorModel,
    pub estimator: EstimatorConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            obs_mode: ObsMode::Token,
            token_source: TokenSource::GroundTruth,
            token_noise: TokenNoise::default(),
            horizon: 200,
            command: CommandSchedule::constant(0.6),
            command_range: None,
            reward: RewardWeights::default(),
            edge_margin: 0.02,
            step_duration: 0.5,
            velocity_smoothing: 0.5,
            init_heading_err: 15f64.to_radians(),
            start_jitter: 0.0,
            sensor: SensorModel::default(),
            estimator: EstimatorConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return config("horizon must be >= 1");
        }
        self.command.validate()?;
        if let Some((lo, hi)) = self.command_range {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return config("command range must satisfy 0 <= lo <= hi");
            }
        }
        let n = &self.token_noise;
        if !(n.sigma_h >= 0.0 && n.sigma_d >= 0.0 && (0.0..=1.0).contains(&n.flip_prob)) {
            return config("token noise needs sigmas >= 0 and flip probability in [0, 1]");
        }
        if !(self.edge_margin >= 0.0) || !(self.step_duration > 0.0) {
            return config("edge margin must be >= 0 and step duration > 0");
        }
        if !(0.0..=1.0).contains(&self.velocity_smoothing) {
            return config("velocity smoothing must lie in [0, 1]");
        }
        if !(self.init_heading_err >= 0.0 && self.init_heading_err < PI) || !(self.start_jitter >= 0.0) {
            return config("initial heading error must lie in [0, pi) and start jitter be >= 0");
        }
        self.sensor.validate()?;
        self.estimator.validate()
    }
}

/// Footstep command; [`Action::clamped`] applies the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Action {
    pub stride: f64,
    pub clearance: f64,
    /// Heading correction, radians.
    pub dtheta: f64,
}

impl Action {
    pub const STRIDE: (f64, f64) = (0.10, 0.50);
    pub const CLEARANCE: (f64, f64) = (0.0, 0.30);
    pub const DTHETA: (f64, f64) = (-5.0 * PI / 180.0, 5.0 * PI / 180.0);

    pub fn new(stride: f64, clearance: f64, dtheta: f64) -> Self {
        Self {
            stride,
            clearance,
            dtheta,
        }
    }

    pub fn clamped(self) -> Self {
        Self {
            stride: self.stride.clamp(Self::STRIDE.0, Self::STRIDE.1),
            clearance: self.clearance.clamp(Self::CLEARANCE.0, Self::CLEARANCE.1),
            dtheta: self.dtheta.clamp(Self::DTHETA.0, Self::DTHETA.1),
        }
    }

    /// Maps each component of `u` from `[-1, 1]` onto its bounds.
    pub fn from_normalized(u: [f64; 3]) -> Self {
        let map = |v: f64, (lo, hi): (f64, f64)| lo + (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo);
        Self {
            stride: map(u[0], Self::STRIDE),
            clearance: map(u[1], Self::CLEARANCE),
            dtheta: map(u[2], Self::DTHETA),
        }
    }

    fn to_array(self) -> [f64; 3] {
        [self.stride, self.clearance, self.dtheta]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    None,
    Scuff,
    Edge,
    Success,
    Timeout,
}

impl Event {
    pub fn name(self) -> &'static str {
        match self {
            Event::None => "none",
            Event::Scuff => "scuff",
            Event::Edge => "edge",
            Event::Success => "success",
            Event::Timeout => "timeout",
        }
    }

    pub fn is_terminal(self) -> bool {
        self != Event::None
    }
}

/// Kinematic state along the walking axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperState {
    pub s: f64,
    pub support_height: f64,
    pub heading_err: f64,
    pub v_avg: f64,
    pub v_cmd: f64,
    pub step_count: u32,
    pub time_index: u32,
    pub last_dz: f64,
    pub prev_action: Action,
}

/// One row of the episode trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub s: f64,
    pub support_height: f64,
    pub v_cmd: f64,
    pub v_avg: f64,
    pub heading_err: f64,
    pub action: Action,
    pub reward: f64,
    pub event: Event,
}

pub const TRACE_HEADER: &str = "time,s,support_height,v_cmd,v_avg,heading_err,stride,clearance,dtheta,reward,event";

impl TraceRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.time,
            self.s,
            self.support_height,
            self.v_cmd,
            self.v_avg,
            self.heading_err,
            self.action.stride,
            self.action.clearance,
            self.action.dtheta,
            self.reward,
            self.event.name()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub event: Event,
    /// Along-axis advance of this step.
    pub advance: f64,
}

/// Swing-foot parabola from `z0` to `z1` peaking at `max(z0, z1) + c`:
/// `z(tau) = z0 + dz tau + 4 b tau (1 - tau)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingArc {
    z0: f64,
    dz: f64,
    b: f64,
}

impl SwingArc {
    pub fn new(z0: f64, z1: f64, clearance: f64) -> Self {
        let dz = z1 - z0;
        let a = dz.max(0.0) + clearance;
        let b = (2.0 * a - dz + 2.0 * (a * (a - dz)).max(0.0).sqrt()) / 4.0;
        Self { z0, dz, b }
    }

    pub fn height(&self, tau: f64) -> f64 {
        self.z0 + self.dz * tau + 4.0 * self.b * tau * (1.0 - tau)
    }

    pub fn apex(&self) -> f64 {
        if self.b <= 0.0 {
            return self.z0.max(self.z0 + self.dz);
        }
        let t = ((self.dz + 4.0 * self.b) / (8.0 * self.b)).clamp(0.0, 1.0);
        self.height(t)
    }
}

/// Whether the swing from `s0` to `s0 + advance` touches the terrain.
pub fn swing_scuffs(profile: &TerrainProfile, s0: f64, advance: f64, arc: &SwingArc) -> bool {
    let k = ((advance.abs() / ARC_PITCH).ceil() as usize).max(1);
    (1..k).any(|i| {
        let tau = i as f64 / k as f64;
        arc.height(tau) < profile.height_along(s0 + tau * advance) - 1e-12
    })
}

/// Along-axis start position: the middle of the tread-sized slot nearest the
/// back of the lead flat, so strides of one step depth land mid-tread.
pub fn start_position(spec: &StairSpec) -> f64 {
    match spec.class {
        StairClass::Flat => -spec.lead_flat,
        _ => {
            let d = spec.d_step;
            let k = (spec.lead_flat / d - 0.5).floor().max(0.0);
            -(k + 0.5) * d
        }
    }
}

pub struct StepperEnv {
    cfg: EnvConfig,
    command: CommandSchedule,
    learned: Option<Arc<Mlp>>,
    profile: TerrainProfile,
    risers: Vec<f64>,
    goal: f64,
    state: StepperState,
    rng: ChaCha8Rng,
    token: TerrainToken,
    trace: Vec<TraceRow>,
    done: bool,
    last_event: Event,
    total_reward: f64,
    reset_seed: u64,
}

impl StepperEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let profile = TerrainProfile::new(StairSpec::flat())?;
        Ok(Self {
            command: cfg.command.clone(),
            cfg,
            learned: None,
            profile,
            risers: Vec::new(),
            goal: 0.0,
            state: StepperState {
                s: 0.0,
                support_height: 0.0,
                heading_err: 0.0,
                v_avg: 0.0,
                v_cmd: 0.0,
                step_count: 0,
                time_index: 0,
                last_dz: 0.0,
                prev_action: Action::default(),
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            token: TerrainToken::flat(0.0),
            trace: Vec::new(),
            done: true,
            last_event: Event::None,
            total_reward: 0.0,
            reset_seed: 0,
        })
    }

    pub fn with_learned_estimator(mut self, net: Arc<Mlp>) -> Self {
        self.learned = Some(net);
        self
    }

    pub fn set_learned_estimator(&mut self, net: Option<Arc<Mlp>>) {
        self.learned = net;
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &StepperState {
        &self.state
    }

    pub fn profile(&self) -> &TerrainProfile {
        &self.profile
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Token currently shown to the policy, noise included.
    pub fn token(&self) -> TerrainToken {
        self.token
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn pose(&self) -> Pose {
        let xy = self.profile.point_on_axis(self.state.s);
        Pose::new(xy[0], xy[1], self.profile.spec().stair_yaw + self.state.heading_err)
    }

    pub fn ground_truth_token(&self) -> TerrainToken {
        let pose = self.pose();
        self.profile.ground_truth_token(pose.heading, [pose.x, pose.y])
    }

    /// BEV grid of the current view.
    pub fn sense(&self, seed: u64) -> Result<BevGrid> {
        project(&scan(&self.profile, self.pose(), &self.cfg.sensor, seed)?)
    }

    pub fn reset(&mut self, spec: StairSpec, seed: u64) -> Result<Vec<f64>> {
        if spec.lead_flat < MIN_LEAD_FLAT {
            return config(format!(
                "lead_flat {} m leaves no footing room (need >= {MIN_LEAD_FLAT} m)",
                spec.lead_flat
            ));
        }
        if self.cfg.token_source == TokenSource::Learned && self.learned.is_none() {
            return config("learned token source needs an estimator network");
        }
        self.profile = TerrainProfile::new(spec)?;
        self.risers = self.profile.riser_positions();
        self.goal = match spec.class {
            StairClass::Flat => spec.tail_flat,
            _ => *self.risers.last().unwrap(),
        };
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset_seed = seed;
        let heading_err = if self.cfg.init_heading_err > 0.0 {
            self.rng
                .random_range(-self.cfg.init_heading_err..=self.cfg.init_heading_err)
        } else {
            0.0
        };
        let jitter = if self.cfg.start_jitter > 0.0 {
            self.rng.random_range(-self.cfg.start_jitter..=self.cfg.start_jitter)
        } else {
            0.0
        };
        self.command = match self.cfg.command_range {
            Some((lo, hi)) if hi > lo => CommandSchedule::constant(self.rng.random_range(lo..=hi)),
            Some((lo, _)) => CommandSchedule::constant(lo),
            None => self.cfg.command.clone(),
        };
        let s = (start_position(&spec) + jitter).max(-spec.lead_flat);
        self.state = StepperState {
            s,
            support_height: self.profile.height_along(s),
            heading_err,
            v_avg: 0.0,
            v_cmd: self.command.at(0),
            step_count: 0,
            time_index: 0,
            last_dz: 0.0,
            prev_action: Action::default(),
        };
        self.trace.clear();
        self.done = false;
        self.last_event = Event::None;
        self.total_reward = 0.0;
        self.refresh_token()?;
        Ok(self.observe())
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode; call reset".into()));
        }
        if !(action.stride.is_finite() && action.clearance.is_finite() && action.dtheta.is_finite()) {
            return Err(Error::Input(format!("non-finite action {action:?}")));
        }
        let a = action.clamped();
        let cfg = &self.cfg;
        let w = cfg.reward;
        let st = self.state;

        let heading_err = wrap_angle(st.heading_err - a.dtheta);
        let advance = a.stride * heading_err.cos();
        let s1 = st.s + advance;
        let z1 = self.profile.height_along(s1);
        let arc = SwingArc::new(st.support_height, z1, a.clearance);

        let v_step = advance / cfg.step_duration;
        let v_avg = cfg.velocity_smoothing * v_step + (1.0 - cfg.velocity_smoothing) * st.v_avg;
        let time_index = st.time_index + 1;

        let mut event = if swing_scuffs(&self.profile, st.s, advance, &arc) {
            Event::Scuff
        } else if self.risers.iter().any(|r| (s1 - r).abs() < cfg.edge_margin) {
            Event::Edge
        } else if s1 > self.goal {
            Event::Success
        } else {
            Event::None
        };
        if event == Event::None && time_index >= cfg.horizon {
            event = Event::Timeout;
        }

        let ev = (v_avg - st.v_cmd) / 0.3;
        let mut reward =
            w.w_v * (-ev * ev).exp() + w.w_f * advance - w.w_c * a.clearance - w.w_theta * heading_err.abs();
        match event {
            Event::Scuff | Event::Edge => reward -= w.fail_penalty,
            Event::Success => reward += w.success_bonus,
            _ => {}
        }

        let landed = matches!(event, Event::None | Event::Success | Event::Timeout);
        self.state = StepperState {
            s: if landed { s1 } else { st.s },
            support_height: if landed { z1 } else { st.support_height },
            heading_err,
            v_avg,
            v_cmd: self.command.at(time_index),
            step_count: st.step_count + landed as u32,
            time_index,
            last_dz: if landed { z1 - st.support_height } else { 0.0 },
            prev_action: a,
        };
        self.trace.push(TraceRow {
            time: time_index as f64 * cfg.step_duration,
            s: self.state.s,
            support_height: self.state.support_height,
            v_cmd: st.v_cmd,
            v_avg,
            heading_err,
            action: a,
            reward,
            event,
        });
        self.total_reward += reward;
        self.done = event.is_terminal();
        self.last_event = event;
        if !self.done {
            self.refresh_token()?;
        }
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done: self.done,
            event,
            advance,
        })
    }

    /// Summary of the episode so far.
    pub fn record(&self) -> EpisodeRecord {
        let spec = self.profile.spec();
        EpisodeRecord {
            spec: *spec,
            seed: self.reset_seed,
            class: spec.class,
            h_step: spec.h_step,
            d_step: spec.d_step,
            event: self.last_event,
            total_reward: self.total_reward,
            trace: self.trace.clone(),
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        let st = &self.state;
        let mut obs = Vec::with_capacity(self.cfg.obs_mode.obs_len());
        obs.push(st.last_dz);
        obs.push(st.v_avg);
        obs.push(st.v_cmd);
        obs.extend(st.prev_action.to_array());
        match self.cfg.obs_mode {
            ObsMode::Blind => {}
            ObsMode::HeightScan => {
                let c = st.heading_err.cos();
                for k in 1..=SCAN_POINTS {
                    let s = st.s + k as f64 * SCAN_SPACING * c;
                    obs.push(self.profile.height_along(s) - st.support_height);
                }
            }
            ObsMode::Token => obs.extend(self.token.features()),
        }
        obs
    }

    fn refresh_token(&mut self) -> Result<()> {
        if self.cfg.obs_mode != ObsMode::Token {
            return Ok(());
        }
        let token = match self.cfg.token_source {
            TokenSource::GroundTruth => self.ground_truth_token(),
            TokenSource::Analytic => {
                let seed = self.rng.random::<u64>();
                estimate_token(&self.sense(seed)?, &self.cfg.estimator).token
            }
            TokenSource::Learned => {
                let seed = self.rng.random::<u64>();
                let grid = self.sense(seed)?;
                let net = self.learned.as_ref().expect("checked at reset");
                learned_token(net, &grid, &self.cfg.estimator)?
            }
        };
        self.token = self.perturb(token);
        Ok(())
    }

    fn perturb(&mut self, mut t: TerrainToken) -> TerrainToken {
        let n = self.cfg.token_noise;
        if n.flip_prob > 0.0 && self.rng.random::<f64>() < n.flip_prob {
            let shift = self.rng.random_range(1..3);
            t.class = StairClass::ALL[(t.class.index() + shift) % 3];
            if t.class == StairClass::Flat {
                t.h_step = 0.0;
                t.d_step = 0.0;
            }
        }
        if t.class != StairClass::Flat {
            if n.sigma_h > 0.0 {
                t.h_step = (t.h_step + Normal::new(0.0, n.sigma_h).unwrap().sample(&mut self.rng)).max(0.0);
            }
            if n.sigma_d > 0.0 {
                t.d_step = (t.d_step + Normal::new(0.0, n.sigma_d).unwrap().sample(&mut self.rng)).max(0.0);
            }
        }
        t
    }
}

#[cfg(test)]
mod tests;

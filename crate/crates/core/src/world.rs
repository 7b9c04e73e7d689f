//! Parametric stair worlds.
//!
//! A [`StairSpec`] describes one straight flight; [`TerrainProfile`] turns it
//! into an exact piecewise-constant heightfield over the world plane and acts
//! as the privileged teacher that hands out ground-truth [`TerrainToken`]s.

use std::f64::consts::{PI, TAU};
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bev::HALF_EXTENT;
use crate::error::{config, Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StairClass {
    Flat = 0,
    StairsUp = 1,
    StairsDown = 2,
}

impl StairClass {
    pub const ALL: [StairClass; 3] = [StairClass::Flat, StairClass::StairsUp, StairClass::StairsDown];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        StairClass::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Format(format!("stair class index {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            StairClass::Flat => "flat",
            StairClass::StairsUp => "stairs-up",
            StairClass::StairsDown => "stairs-down",
        }
    }
}

impl fmt::Display for StairClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Generation caps on step geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCaps {
    pub h_max: f64,
    pub d_max: f64,
}

impl Default for StepCaps {
    fn default() -> Self {
        Self { h_max: 0.5, d_max: 1.0 }
    }
}

/// One straight flight of stairs, plus the flats around it.
///
/// `stair_yaw` is the world-frame direction of the walking axis: along it
/// `StairsUp` rises and `StairsDown` falls. Risers sit at along-axis
/// distances `k * d_step` from `origin` for `k = 0..n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StairSpec {
    pub class: StairClass,
    pub h_step: f64,
    pub d_step: f64,
    pub stair_yaw: f64,
    pub n_steps: u32,
    pub lead_flat: f64,
    pub tail_flat: f64,
    pub origin: [f64; 2],
}

impl StairSpec {
    pub fn flat() -> Self {
        Self {
            class: StairClass::Flat,
            h_step: 0.0,
            d_step: 0.0,
            stair_yaw: 0.0,
            n_steps: 1,
            lead_flat: 1.0,
            tail_flat: 1.0,
            origin: [0.0, 0.0],
        }
    }

    pub fn stairs(class: StairClass, h_step: f64, d_step: f64, n_steps: u32) -> Self {
        Self {
            class,
            h_step,
            d_step,
            stair_yaw: 0.0,
            n_steps,
            lead_flat: 1.0,
            tail_flat: 1.0,
            origin: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_caps(StepCaps::default())
    }

    pub fn validate_with_caps(&self, caps: StepCaps) -> Result<()> {
        let finite = [
            self.h_step,
            self.d_step,
            self.stair_yaw,
            self.lead_flat,
            self.tail_flat,
            self.origin[0],
            self.origin[1],
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return config("stair spec contains a non-finite value");
        }
        match self.class {
            StairClass::Flat => {
                if self.h_step != 0.0 || self.d_step != 0.0 {
                    return config("flat spec must have h_step = d_step = 0");
                }
            }
            _ => {
                if self.h_step <= 0.0 || self.d_step <= 0.0 {
                    return config("stair spec needs h_step > 0 and d_step > 0");
                }
            }
        }
        if self.h_step > caps.h_max || self.d_step > caps.d_max {
            return config(format!(
                "step geometry h={} d={} exceeds caps h<={} d<={}",
                self.h_step, self.d_step, caps.h_max, caps.d_max
            ));
        }
        if self.n_steps < 1 {
            return config("n_steps must be >= 1");
        }
        if self.lead_flat < 0.0 || self.tail_flat < 0.0 {
            return config("lead_flat and tail_flat must be >= 0");
        }
        if !(self.stair_yaw > -PI && self.stair_yaw <= PI) {
            return config("stair_yaw must lie in (-pi, pi]");
        }
        Ok(())
    }

    /// Flat key-value text, one `key = value` per line, SI units.
    pub fn to_kv_string(&self) -> String {
        format!(
            "class = {}\nh_step = {}\nd_step = {}\nstair_yaw = {}\nn_steps = {}\nlead_flat = {}\ntail_flat = {}\norigin_x = {}\norigin_y = {}\n",
            self.class.index(),
            self.h_step,
            self.d_step,
            self.stair_yaw,
            self.n_steps,
            self.lead_flat,
            self.tail_flat,
            self.origin[0],
            self.origin[1],
        )
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut fields: [Option<&str>; 9] = [None; 9];
        const KEYS: [&str; 9] = [
            "class",
            "h_step",
            "d_step",
            "stair_yaw",
            "n_steps",
            "lead_flat",
            "tail_flat",
            "origin_x",
            "origin_y",
        ];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let slot = KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| Error::Format(format!("line {}: unknown key {key:?}", lineno + 1)))?;
            if fields[slot].is_some() {
                return Err(Error::Format(format!("duplicate key {key:?}")));
            }
            fields[slot] = Some(value.trim());
        }
        let get =
            |i: usize| -> Result<&str> { fields[i].ok_or_else(|| Error::Format(format!("missing key {:?}", KEYS[i]))) };
        let num = |i: usize| -> Result<f64> {
            get(i)?
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("{}: {e}", KEYS[i])))
        };
        let class_idx: usize = get(0)?.parse().map_err(|e| Error::Format(format!("class: {e}")))?;
        let n_steps: u32 = get(4)?.parse().map_err(|e| Error::Format(format!("n_steps: {e}")))?;
        let spec = StairSpec {
            class: StairClass::from_index(class_idx)?,
            h_step: num(1)?,
            d_step: num(2)?,
            stair_yaw: num(3)?,
            n_steps,
            lead_flat: num(5)?,
            tail_flat: num(6)?,
            origin: [num(7)?, num(8)?],
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Closed interval `[min, max]` sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { min: v, max: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    fn check(&self, name: &str, nonnegative: bool) -> Result<()> {
        if !self.min.is_finite() || !self.max.is_finite() {
            return config(format!("{name}: non-finite bound"));
        }
        if self.min > self.max {
            return config(format!("{name}: min {} > max {}", self.min, self.max));
        }
        if nonnegative && self.min < 0.0 {
            return config(format!("{name}: negative bound {}", self.min));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.min + (self.max - self.min) * u
    }
}

/// Parameter intervals and class weights for procedural stair generation.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldRanges {
    /// Relative weights for Flat, StairsUp, StairsDown.
    pub class_weights: [f64; 3],
    pub h_step: Interval,
    pub d_step: Interval,
    /// Radians.
    pub yaw: Interval,
    pub n_steps: (u32, u32),
    pub lead_flat: Interval,
    pub tail_flat: Interval,
    pub caps: StepCaps,
}

impl Default for WorldRanges {
    fn default() -> Self {
        Self {
            class_weights: [0.0, 1.0, 0.0],
            h_step: Interval::new(0.12, 0.16),
            d_step: Interval::new(0.25, 0.35),
            yaw: Interval::new(-20f64.to_radians(), 20f64.to_radians()),
            n_steps: (3, 6),
            lead_flat: Interval::new(0.6, 1.2),
            tail_flat: Interval::new(0.5, 1.0),
            caps: StepCaps::default(),
        }
    }
}

impl WorldRanges {
    pub fn validate(&self) -> Result<()> {
        if self.class_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return config("class weights must be finite and >= 0");
        }
        if self.class_weights.iter().sum::<f64>() <= 0.0 {
            return config("class weights must not all be zero");
        }
        self.h_step.check("h_step", true)?;
        self.d_step.check("d_step", true)?;
        self.yaw.check("yaw", false)?;
        self.lead_flat.check("lead_flat", true)?;
        self.tail_flat.check("tail_flat", true)?;
        if self.yaw.min <= -PI || self.yaw.max > PI {
            return config("yaw range must lie within (-pi, pi]");
        }
        if self.n_steps.0 < 1 || self.n_steps.0 > self.n_steps.1 {
            return config("n_steps range must satisfy 1 <= min <= max");
        }
        if self.h_step.max > self.caps.h_max || self.d_step.max > self.caps.d_max {
            return config("h_step/d_step ranges exceed generation caps");
        }
        let stairs_weight = self.class_weights[1] + self.class_weights[2];
        if stairs_weight > 0.0 && (self.h_step.min <= 0.0 || self.d_step.min <= 0.0) {
            return config("stair classes need strictly positive h_step and d_step ranges");
        }
        Ok(())
    }
}

/// Draws a stair spec; every parameter is consumed from the seeded stream in
/// a fixed order so the draw is reproducible per seed.
pub fn generate_stairs(seed: u64, ranges: &WorldRanges) -> Result<StairSpec> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let total: f64 = ranges.class_weights.iter().sum();
    let pick: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = None;
    for (c, w) in StairClass::ALL.iter().zip(ranges.class_weights) {
        acc += w;
        if w > 0.0 && pick < acc {
            chosen = Some(*c);
            break;
        }
    }
    // rounding can leave pick == acc at the end
    let class = chosen.unwrap_or_else(|| {
        let last = ranges.class_weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
        StairClass::ALL[last]
    });

    let h = ranges.h_step.sample(&mut rng);
    let d = ranges.d_step.sample(&mut rng);
    let yaw = wrap_angle(ranges.yaw.sample(&mut rng));
    let n_steps = rng.random_range(ranges.n_steps.0..=ranges.n_steps.1);
    let lead_flat = ranges.lead_flat.sample(&mut rng);
    let tail_flat = ranges.tail_flat.sample(&mut rng);

    let (h_step, d_step) = match class {
        StairClass::Flat => (0.0, 0.0),
        _ => (h, d),
    };
    let spec = StairSpec {
        class,
        h_step,
        d_step,
        stair_yaw: yaw,
        n_steps,
        lead_flat,
        tail_flat,
        origin: [0.0, 0.0],
    };
    spec.validate_with_caps(ranges.caps)?;
    Ok(spec)
}

/// The explicit conditioning vector: class, step height, step depth and the
/// robot's yaw relative to the terrain direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainToken {
    pub class: StairClass,
    pub h_step: f64,
    pub d_step: f64,
    pub theta: f64,
}

impl TerrainToken {
    pub fn flat(theta: f64) -> Self {
        Self {
            class: StairClass::Flat,
            h_step: 0.0,
            d_step: 0.0,
            theta: wrap_angle(theta),
        }
    }

    /// One-hot class followed by h, d, theta.
    pub fn features(&self) -> [f64; 6] {
        let mut f = [0.0; 6];
        f[self.class.index()] = 1.0;
        f[3] = self.h_step;
        f[4] = self.d_step;
        f[5] = self.theta;
        f
    }
}

/// Exact heightfield of a [`StairSpec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainProfile {
    spec: StairSpec,
    axis: [f64; 2],
}

impl TerrainProfile {
    pub fn new(spec: StairSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self::new_unchecked(spec))
    }

    pub(crate) fn new_unchecked(spec: StairSpec) -> Self {
        let axis = [spec.stair_yaw.cos(), spec.stair_yaw.sin()];
        Self { spec, axis }
    }

    pub fn spec(&self) -> &StairSpec {
        &self.spec
    }

    /// Signed along-axis distance of a world point past the first riser.
    pub fn along_axis(&self, x: f64, y: f64) -> f64 {
        (x - self.spec.origin[0]) * self.axis[0] + (y - self.spec.origin[1]) * self.axis[1]
    }

    /// World point at along-axis distance `s` on the axis through the origin.
    pub fn point_on_axis(&self, s: f64) -> [f64; 2] {
        [
            self.spec.origin[0] + s * self.axis[0],
            self.spec.origin[1] + s * self.axis[1],
        ]
    }

    /// Along-axis positions of every riser line.
    pub fn riser_positions(&self) -> Vec<f64> {
        match self.spec.class {
            StairClass::Flat => Vec::new(),
            _ => (0..self.spec.n_steps).map(|k| k as f64 * self.spec.d_step).collect(),
        }
    }

    /// Tread index reached at along-axis distance `s` (0 on the lead flat).
    pub fn tread_index(&self, s: f64) -> u32 {
        let n = self.spec.n_steps as f64;
        let d = self.spec.d_step;
        let k = match self.spec.class {
            StairClass::Flat => return 0,
            // on a riser line the query resolves to the higher tread
            StairClass::StairsUp => ((s / d).floor() + 1.0).clamp(0.0, n),
            StairClass::StairsDown => (s / d).ceil().clamp(0.0, n),
        };
        k as u32
    }

    pub fn height_along(&self, s: f64) -> f64 {
        let k = self.tread_index(s) as f64;
        match self.spec.class {
            StairClass::Flat => 0.0,
            StairClass::StairsUp => k * self.spec.h_step,
            StairClass::StairsDown => -k * self.spec.h_step,
        }
    }

    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        self.height_along(self.along_axis(x, y))
    }

    /// Privileged ground-truth token for a robot at `robot_xy` with world
    /// heading `robot_heading`.
    ///
    /// The stair parameters are reported only if some riser crosses the
    /// robot-centric 3 m x 3 m window; otherwise the flat token is returned.
    pub fn ground_truth_token(&self, robot_heading: f64, robot_xy: [f64; 2]) -> TerrainToken {
        let spec = &self.spec;
        if spec.class == StairClass::Flat {
            return TerrainToken::flat(robot_heading);
        }
        let rel = robot_heading - spec.stair_yaw;
        let reach = HALF_EXTENT * (rel.cos().abs() + rel.sin().abs());
        let s = self.along_axis(robot_xy[0], robot_xy[1]);
        let (lo, hi) = (s - reach, s + reach);
        let sees_riser = self.riser_positions().iter().any(|&r| r >= lo && r <= hi);
        if !sees_riser {
            return TerrainToken::flat(robot_heading);
        }
        TerrainToken {
            class: spec.class,
            h_step: spec.h_step,
            d_step: spec.d_step,
            theta: wrap_angle(rel),
        }
    }
}

pub fn height_at(profile: &TerrainProfile, x: f64, y: f64) -> f64 {
    profile.height_at(x, y)
}

pub fn ground_truth_token(spec: &StairSpec, robot_heading: f64, robot_xy: [f64; 2]) -> TerrainToken {
    TerrainProfile::new_unchecked(*spec).ground_truth_token(robot_heading, robot_xy)
}

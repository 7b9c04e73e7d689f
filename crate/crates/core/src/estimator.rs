//! Analytic recovery of the terrain token from a [`BevGrid`].
//!
//! Risers are straight lines, so when occupied cells are binned along the
//! stair axis every bin holds a single tread height: the within-bin variance
//! of the mean-z channel is smallest at the true axis direction. The profile
//! along that axis is then a staircase whose jumps give the step height and
//! whose jump spacing gives the step depth.

use crate::bev::{BevGrid, CELLS, CH_MEAN, HALF_EXTENT};
use crate::world::{StairClass, TerrainToken};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub yaw_min_deg: f64,
    pub yaw_max_deg: f64,
    pub yaw_pitch_deg: f64,
    pub profile_bin: f64,
    pub riser_threshold: f64,
    pub min_risers_for_stairs: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            yaw_min_deg: -45.0,
            yaw_max_deg: 45.0,
            yaw_pitch_deg: 1.0,
            profile_bin: 0.05,
            riser_threshold: 0.06,
            min_risers_for_stairs: 2,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.yaw_pitch_deg > 0.0) || self.yaw_min_deg > self.yaw_max_deg {
            return crate::error::config("yaw search needs pitch > 0 and min <= max");
        }
        if !(self.riser_threshold > 0.0) || !(self.profile_bin > 0.0) {
            return crate::error::config("riser_threshold and profile_bin must be > 0");
        }
        Ok(())
    }

    fn candidates(&self) -> Vec<f64> {
        let n = ((self.yaw_max_deg - self.yaw_min_deg) / self.yaw_pitch_deg).round() as usize + 1;
        (0..n)
            .map(|i| (self.yaw_min_deg + i as f64 * self.yaw_pitch_deg).to_radians())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawEstimate {
    /// Direction of the stair axis in the robot frame, radians.
    pub yaw: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileBin {
    /// Along-axis position of the bin center.
    pub position: f64,
    pub z: f64,
}

/// 1-D elevation profile; bins without occupied cells are absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Profile {
    pub bins: Vec<ProfileBin>,
    /// Number of bins the window spans along the axis.
    pub span_bins: usize,
}

impl Profile {
    pub fn occupied_fraction(&self) -> f64 {
        if self.span_bins == 0 {
            0.0
        } else {
            (self.bins.len() as f64 / self.span_bins as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Riser {
    pub position: f64,
    /// Signed height change crossing the riser in the +axis direction.
    pub dz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepEstimate {
    pub class: StairClass,
    pub h_step: f64,
    pub d_step: f64,
    pub risers: Vec<Riser>,
    /// False when jumps of both signs were found.
    pub consistent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenEstimate {
    pub token: TerrainToken,
    pub confidence: f64,
    pub risers_found: usize,
}

struct Cell {
    x: f64,
    y: f64,
    z: f64,
}

fn occupied_cells(grid: &BevGrid) -> Vec<Cell> {
    let mut out = Vec::with_capacity(grid.occupied_count());
    for row in 0..CELLS {
        for col in 0..CELLS {
            if grid.occupied(row, col) {
                let (x, y) = BevGrid::cell_center(row, col);
                out.push(Cell {
                    x,
                    y,
                    z: grid.get(CH_MEAN, row, col),
                });
            }
        }
    }
    out
}

fn bin_of(t: f64, width: f64) -> i64 {
    (t / width).floor() as i64
}

/// Pooled within-bin variance of cell mean heights along direction `phi`.
fn axis_score(cells: &[Cell], phi: f64, width: f64, acc: &mut Vec<(f64, f64, f64)>) -> f64 {
    let (s, c) = phi.sin_cos();
    let reach = HALF_EXTENT * std::f64::consts::SQRT_2 + width;
    let offset = bin_of(-reach, width);
    let nbins = (bin_of(reach, width) - offset + 1) as usize;
    acc.clear();
    acc.resize(nbins, (0.0, 0.0, 0.0));
    for cell in cells {
        let t = cell.x * c + cell.y * s;
        let b = &mut acc[(bin_of(t, width) - offset) as usize];
        b.0 += 1.0;
        b.1 += cell.z;
        b.2 += cell.z * cell.z;
    }
    let mut ss = 0.0;
    for &(n, sum, sq) in acc.iter() {
        if n > 1.0 {
            ss += (sq - sum * sum / n).max(0.0);
        }
    }
    ss / cells.len() as f64
}

/// Finds the stair axis direction in the robot frame.
pub fn estimate_yaw(grid: &BevGrid, cfg: &EstimatorConfig) -> YawEstimate {
    let degenerate = YawEstimate {
        yaw: 0.0,
        confidence: 0.0,
    };
    let cells = occupied_cells(grid);
    let occupied_frac = cells.len() as f64 / (CELLS * CELLS) as f64;
    if occupied_frac < 0.1 {
        return degenerate;
    }
    let (lo, hi) = cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        (lo.min(c.z), hi.max(c.z))
    });
    if hi - lo < cfg.riser_threshold {
        // no edge anywhere: every direction scores alike
        return degenerate;
    }

    let cands = cfg.candidates();
    let mut acc = Vec::new();
    let scores: Vec<f64> = cands
        .iter()
        .map(|&phi| axis_score(&cells, phi, cfg.profile_bin, &mut acc))
        .collect();

    let mut best = 0;
    for i in 1..scores.len() {
        let better = scores[i] < scores[best] || (scores[i] == scores[best] && cands[i].abs() < cands[best].abs());
        if better {
            best = i;
        }
    }

    let mut yaw = cands[best];
    if best > 0 && best + 1 < scores.len() {
        let (a, b, c) = (scores[best - 1], scores[best], scores[best + 1]);
        let denom = a - 2.0 * b + c;
        if denom > 0.0 {
            let offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
            yaw += offset * cfg.yaw_pitch_deg.to_radians();
        }
    }

    let mean_score = scores.iter().sum::<f64>() / scores.len() as f64;
    let contrast = if mean_score > 0.0 {
        (1.0 - scores[best] / mean_score).clamp(0.0, 1.0)
    } else {
        0.0
    };
    YawEstimate {
        yaw,
        confidence: occupied_frac * contrast,
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median cell mean-height per along-axis bin, ordered by position.
pub fn extract_profile(grid: &BevGrid, yaw: f64, cfg: &EstimatorConfig) -> Profile {
    let w = cfg.profile_bin;
    let (s, c) = yaw.sin_cos();
    let mut keyed: Vec<(i64, f64)> = occupied_cells(grid)
        .iter()
        .map(|cell| (bin_of(cell.x * c + cell.y * s, w), cell.z))
        .collect();
    keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut bins = Vec::new();
    let mut zs = Vec::new();
    for run in keyed.chunk_by(|a, b| a.0 == b.0) {
        zs.clear();
        zs.extend(run.iter().map(|k| k.1));
        bins.push(ProfileBin {
            position: (run[0].0 as f64 + 0.5) * w,
            z: median(&mut zs),
        });
    }

    let reach = HALF_EXTENT * (c.abs() + s.abs());
    let span_bins = (bin_of(reach, w) - bin_of(-reach, w) + 1) as usize;
    Profile { bins, span_bins }
}

/// Riser candidates: maximal runs of same-sign differences above a quarter
/// of the threshold, each widened by one adjacent same-sign difference on
/// either side to pick up the partial transitions of cells cut by the riser.
pub fn find_risers(profile: &Profile, cfg: &EstimatorConfig) -> Vec<Riser> {
    let floor = 0.25 * cfg.riser_threshold;
    let diffs: Vec<(f64, f64)> = profile
        .bins
        .windows(2)
        .map(|p| (p[1].z - p[0].z, 0.5 * (p[0].position + p[1].position)))
        .collect();
    let sign = |v: f64| v > 0.0;

    let mut cores: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < diffs.len() {
        if diffs[i].0.abs() <= floor {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < diffs.len() && diffs[j].0.abs() > floor && sign(diffs[j].0) == sign(diffs[i].0) {
            j += 1;
        }
        cores.push((i, j));
        i = j;
    }

    let mut risers = Vec::new();
    for (k, &(a, b)) in cores.iter().enumerate() {
        let up = sign(diffs[a].0);
        let prev_end = if k > 0 { cores[k - 1].1 } else { 0 };
        let next_start = cores.get(k + 1).map_or(diffs.len(), |c| c.0);
        let mut lo = a;
        if a > prev_end && diffs[a - 1].0 != 0.0 && sign(diffs[a - 1].0) == up {
            lo = a - 1;
        }
        let mut hi = b;
        // the left neighbour of the next core may claim this diff too; first come wins
        if b < next_start && diffs[b].0 != 0.0 && sign(diffs[b].0) == up {
            hi = b + 1;
        }
        let span = &diffs[lo..hi];
        let dz: f64 = span.iter().map(|d| d.0).sum();
        let weight: f64 = span.iter().map(|d| d.0.abs()).sum();
        if dz.abs() > cfg.riser_threshold && weight > 0.0 {
            let position = span.iter().map(|d| d.1 * d.0.abs()).sum::<f64>() / weight;
            risers.push(Riser { position, dz });
        }
    }
    risers
}

/// Aggregates the risers of a profile into step geometry.
pub fn estimate_steps(profile: &Profile, cfg: &EstimatorConfig) -> StepEstimate {
    let flat = |risers: Vec<Riser>| StepEstimate {
        class: StairClass::Flat,
        h_step: 0.0,
        d_step: 0.0,
        risers,
        consistent: true,
    };
    let risers = find_risers(profile, cfg);

    if risers.len() < cfg.min_risers_for_stairs {
        return flat(risers);
    }

    let ups = risers.iter().filter(|r| r.dz > 0.0).count();
    let downs = risers.len() - ups;
    let class = if ups > downs {
        StairClass::StairsUp
    } else if downs > ups {
        StairClass::StairsDown
    } else {
        let nearest = risers
            .iter()
            .filter(|r| r.position >= 0.0)
            .min_by(|a, b| a.position.total_cmp(&b.position))
            .or_else(|| risers.iter().max_by(|a, b| a.position.total_cmp(&b.position)))
            .expect("at least min_risers risers");
        if nearest.dz > 0.0 {
            StairClass::StairsUp
        } else {
            StairClass::StairsDown
        }
    };

    let mut heights: Vec<f64> = risers.iter().map(|r| r.dz.abs()).collect();
    let mut spacings: Vec<f64> = risers.windows(2).map(|w| w[1].position - w[0].position).collect();
    StepEstimate {
        class,
        h_step: median(&mut heights),
        d_step: median(&mut spacings),
        consistent: ups == 0 || downs == 0,
        risers,
    }
}

/// Full analytic estimate: yaw, profile, steps.
///
/// `theta` is the robot heading relative to the terrain direction, the
/// negative of the stair axis angle measured in the robot frame. A flat
/// result reports the robot's own heading, 0 in its own frame.
pub fn estimate_token(grid: &BevGrid, cfg: &EstimatorConfig) -> TokenEstimate {
    let occupied_frac = grid.occupied_count() as f64 / (CELLS * CELLS) as f64;
    if occupied_frac < 0.1 {
        return TokenEstimate {
            token: TerrainToken::flat(0.0),
            confidence: 0.0,
            risers_found: 0,
        };
    }
    let yaw = estimate_yaw(grid, cfg);
    let profile = extract_profile(grid, yaw.yaw, cfg);
    let steps = estimate_steps(&profile, cfg);
    let mut confidence = profile.occupied_fraction();
    if !steps.consistent {
        confidence *= 0.5;
    }
    let token = match steps.class {
        StairClass::Flat => TerrainToken::flat(0.0),
        class => TerrainToken {
            class,
            h_step: steps.h_step,
            d_step: steps.d_step,
            theta: crate::world::wrap_angle(-yaw.yaw),
        },
    };
    TokenEstimate {
        token,
        confidence,
        risers_found: steps.risers.len(),
    }
}

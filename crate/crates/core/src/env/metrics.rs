use super::{Event, TraceRow};
use crate::error::{Error, Result};
use crate::world::{StairClass, StairSpec};

/// One finished (or truncated) episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// World and reset seed that reproduce the episode.
    pub spec: StairSpec,
    pub seed: u64,
    pub class: StairClass,
    pub h_step: f64,
    pub d_step: f64,
    pub event: Event,
    pub total_reward: f64,
    pub trace: Vec<TraceRow>,
}

impl EpisodeRecord {
    /// Return per decision; 0 for an empty episode.
    pub fn normalized_return(&self) -> f64 {
        if self.trace.is_empty() {
            0.0
        } else {
            self.total_reward / self.trace.len() as f64
        }
    }
}

/// An episode succeeds when the stepper passes the goal without failing.
pub fn success(record: &EpisodeRecord) -> bool {
    record.event == Event::Success
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub e_vel: f64,
    pub e_ang: f64,
    pub m_terrain: f64,
    pub m_reward: f64,
    pub success_rate: f64,
}

/// Aggregates a set of episodes.
///
/// Velocity and heading errors average over every decision of every
/// episode. `m_terrain` is the largest step height whose episodes succeed at
/// least half of the time (0 if none does).
pub fn metrics(episodes: &[EpisodeRecord]) -> Result<EvalMetrics> {
    if episodes.is_empty() {
        return Err(Error::Input("metrics of an empty episode set are undefined".into()));
    }
    let rows: Vec<&TraceRow> = episodes.iter().flat_map(|e| e.trace.iter()).collect();
    let mean_over_rows = |f: &dyn Fn(&TraceRow) -> f64| {
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
        }
    };
    let e_vel = mean_over_rows(&|r| (r.v_avg - r.v_cmd).abs());
    let e_ang = mean_over_rows(&|r| r.heading_err.abs());
    let n = episodes.len() as f64;
    let success_rate = episodes.iter().filter(|e| success(e)).count() as f64 / n;
    let m_reward = episodes.iter().map(|e| e.normalized_return()).sum::<f64>() / n;

    let mut by_height: Vec<(f64, usize, usize)> = Vec::new();
    for e in episodes {
        match by_height.iter_mut().find(|g| (g.0 - e.h_step).abs() < 1e-9) {
            Some(g) => {
                g.1 += 1;
                g.2 += success(e) as usize;
            }
            None => by_height.push((e.h_step, 1, success(e) as usize)),
        }
    }
    let m_terrain = by_height
        .iter()
        .filter(|g| 2 * g.2 >= g.1)
        .map(|g| g.0)
        .fold(0.0, f64::max);

    Ok(EvalMetrics {
        e_vel,
        e_ang,
        m_terrain,
        m_reward,
        success_rate,
    })
}

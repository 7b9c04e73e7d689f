//! Small dense networks with hand-written backpropagation, the terrain
//! supervision loss, and Adam.
//!
//! The learned estimator reads a 4x4 average-pooled BEV grid (1350 values)
//! and predicts class logits plus step height and depth. It does not predict
//! yaw; tokens built from it take theta from the analytic yaw search.

mod adam;
mod loss;
mod mlp;

pub use adam::{clip_global_norm, AdamState};
pub use loss::{
    cross_entropy, smooth_l1, terrain_loss, TerrainLoss, TerrainLossWeights, TerrainPrediction, TerrainTarget,
};
pub use mlp::{param_count, Cache, Head, Mlp};

use crate::bev::{BevGrid, CELLS, CHANNELS};
use crate::error::{Error, Result};
use crate::estimator::{estimate_yaw, EstimatorConfig};
use crate::world::{StairClass, TerrainToken};

pub const POOL: usize = 4;
pub const POOLED_CELLS: usize = CELLS / POOL;
pub const POOLED_LEN: usize = CHANNELS * POOLED_CELLS * POOLED_CELLS;
pub const ESTIMATOR_OUTPUTS: usize = 5;

/// 4x4 average pooling per channel, flattened channel-major then row-major.
pub fn pool_bev(grid: &BevGrid) -> Vec<f64> {
    let mut out = vec![0.0; POOLED_LEN];
    let norm = 1.0 / (POOL * POOL) as f64;
    for ch in 0..CHANNELS {
        let src = grid.channel(ch);
        for pr in 0..POOLED_CELLS {
            for pc in 0..POOLED_CELLS {
                let mut s = 0.0;
                for r in pr * POOL..(pr + 1) * POOL {
                    for c in pc * POOL..(pc + 1) * POOL {
                        s += src[r * CELLS + c];
                    }
                }
                out[(ch * POOLED_CELLS + pr) * POOLED_CELLS + pc] = s * norm;
            }
        }
    }
    out
}

/// Fresh estimator network `1350 -> hidden -> 5` with heads
/// `logits`, `h_step`, `d_step`.
pub fn estimator_net(hidden: usize, seed: u64) -> Result<Mlp> {
    Mlp::new(&[POOLED_LEN, hidden, ESTIMATOR_OUTPUTS], seed)?.with_heads(&[("logits", 3), ("h_step", 1), ("d_step", 1)])
}

pub fn forward_estimator(net: &Mlp, features: &[f64]) -> Result<TerrainPrediction> {
    if net.output_len() != ESTIMATOR_OUTPUTS {
        return Err(Error::Input(format!(
            "estimator network must have {ESTIMATOR_OUTPUTS} outputs, has {}",
            net.output_len()
        )));
    }
    Ok(TerrainPrediction::from_outputs(&net.forward(features)?))
}

/// Accumulates the parameter gradient of one sample's terrain loss into
/// `grads`, scaled by `scale`.
pub fn estimator_backward(
    net: &Mlp,
    features: &[f64],
    target: &TerrainTarget,
    w: &TerrainLossWeights,
    scale: f64,
    grads: &mut [f64],
) -> Result<TerrainLoss> {
    let cache = net.forward_cached(features)?;
    let pred = TerrainPrediction::from_outputs(cache.output());
    let loss = terrain_loss(&pred, target, w);
    let d_out: Vec<f64> = loss.grad.iter().map(|g| g * scale).collect();
    net.backward(&cache, &d_out, grads);
    Ok(loss)
}

/// Converts a prediction into a token; flat predictions carry zero geometry
/// and negative regressions are clipped at zero.
pub fn prediction_to_token(pred: &TerrainPrediction, theta: f64) -> TerrainToken {
    match pred.class() {
        StairClass::Flat => TerrainToken::flat(0.0),
        class => TerrainToken {
            class,
            h_step: pred.h_step.max(0.0),
            d_step: pred.d_step.max(0.0),
            theta,
        },
    }
}

/// Token from the learned head, with theta taken from the yaw search.
pub fn learned_token(net: &Mlp, grid: &BevGrid, cfg: &EstimatorConfig) -> Result<TerrainToken> {
    let pred = forward_estimator(net, &pool_bev(grid))?;
    Ok(prediction_to_token(&pred, -estimate_yaw(grid, cfg).yaw))
}

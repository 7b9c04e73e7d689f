//! Explicit stair-geometry conditioning at desk scale.
//!
//! The pipeline runs from parametric stair worlds ([`world`]) through noisy
//! robot-centric point clouds ([`sensor`]) and the six-channel BEV grid
//! ([`bev`]) to the explicit terrain token, recovered either analytically
//! ([`estimator`]) or by a small learned head ([`nn`]). A planar stepper
//! ([`env`]) consumes the token and is trained with clipped PPO ([`ppo`]).

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bev;
pub mod cloud_io;
pub mod env;
pub mod error;
pub mod estimator;
pub mod nn;
pub mod ppo;
pub mod sensor;
pub mod world;

pub use bev::{cell_index, project, BevGrid};
pub use env::{Action, EnvConfig, EvalMetrics, ObsMode, StepperEnv, TokenSource};
pub use error::{Error, Result};
pub use estimator::{estimate_token, EstimatorConfig, TokenEstimate};
pub use nn::{Mlp, TerrainLossWeights};
pub use ppo::{GaussianPolicy, PpoConfig, RolloutBatch};
pub use sensor::{scan, PointCloud, Pose, SensorModel};
pub use world::{
    generate_stairs, ground_truth_token, height_at, StairClass, StairSpec, TerrainProfile, TerrainToken, WorldRanges,
};

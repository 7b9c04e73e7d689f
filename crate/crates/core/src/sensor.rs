//! Robot-centric point clouds sampled from a [`TerrainProfile`].

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bev::HALF_EXTENT;
use crate::error::{config, Result};
use crate::world::TerrainProfile;

/// Points in the robot frame: x forward, y left, z up relative to the
/// robot's support height.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }
}

/// Planar robot pose in the world: position and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn to_world(&self, u: f64, v: f64) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [self.x + c * u - s * v, self.y + s * u + c * v]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    /// Full side length of the square sensing window, centered on the robot.
    pub window: f64,
    pub sample_pitch: f64,
    pub noise_sigma_z: f64,
    pub dropout_rate: f64,
    /// Removes points whose line of sight from the sensor is blocked.
    pub occlusion: bool,
    pub sensor_height: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            window: 2.0 * HALF_EXTENT,
            sample_pitch: 0.025,
            noise_sigma_z: 0.01,
            dropout_rate: 0.0,
            occlusion: false,
            sensor_height: 1.2,
        }
    }
}

impl SensorModel {
    pub fn noiseless() -> Self {
        Self {
            noise_sigma_z: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_pitch > 0.0 && self.sample_pitch.is_finite()) {
            return config("sample_pitch must be > 0");
        }
        if !(self.window > 0.0 && self.window.is_finite()) {
            return config("window must be > 0");
        }
        if !(self.noise_sigma_z >= 0.0 && self.noise_sigma_z.is_finite()) {
            return config("noise_sigma_z must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return config("dropout_rate must lie in [0, 1]");
        }
        Ok(())
    }

    /// Lattice coordinates along one axis of the window, symmetric about 0.
    pub fn lattice(&self) -> Vec<f64> {
        let n = (self.window / self.sample_pitch).round().max(1.0) as usize;
        let pitch = self.window / n as f64;
        let half = 0.5 * self.window;
        (0..n).map(|i| -half + (i as f64 + 0.5) * pitch).collect()
    }
}

/// Samples the terrain on a regular lattice over the window in the robot
/// frame and adds Gaussian depth noise to z.
pub fn scan(profile: &TerrainProfile, pose: Pose, model: &SensorModel, seed: u64) -> Result<PointCloud> {
    model.validate()?;
    if ![pose.x, pose.y, pose.heading].iter().all(|v| v.is_finite()) {
        return Err(crate::Error::Input("robot pose must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, model.noise_sigma_z).expect("sigma validated");
    let support = profile.height_at(pose.x, pose.y);
    let grid = model.lattice();

    let mut points = Vec::with_capacity(grid.len() * grid.len());
    for &u in &grid {
        for &v in &grid {
            let [wx, wy] = pose.to_world(u, v);
            let ground = profile.height_at(wx, wy);
            if model.occlusion
                && occluded(
                    profile,
                    &pose,
                    support + model.sensor_height,
                    [wx, wy],
                    ground,
                    model.sample_pitch,
                )
            {
                continue;
            }
            let mut z = ground - support;
            if model.noise_sigma_z > 0.0 {
                z += noise.sample(&mut rng);
            }
            points.push([u, v, z]);
        }
    }
    let cloud = PointCloud::new(points);
    if model.dropout_rate > 0.0 {
        dropout(&cloud, model.dropout_rate, seed ^ 0x9e37_79b9_7f4a_7c15)
    } else {
        Ok(cloud)
    }
}

/// Whether the straight ray from the sensor to a ground point passes below
/// the heightfield somewhere along the way.
fn occluded(profile: &TerrainProfile, pose: &Pose, eye_z: f64, target: [f64; 2], target_z: f64, pitch: f64) -> bool {
    let dx = target[0] - pose.x;
    let dy = target[1] - pose.y;
    let dist = (dx * dx + dy * dy).sqrt();
    let n = (dist / (0.5 * pitch)).ceil() as usize;
    // stop one sample short so the target's own surface never blocks itself
    (1..n.saturating_sub(1)).any(|i| {
        let t = i as f64 / n as f64;
        let ray_z = eye_z + (target_z - eye_z) * t;
        profile.height_at(pose.x + dx * t, pose.y + dy * t) > ray_z + 1e-9
    })
}

/// Removes each point independently with probability `rate`, keeping the
/// survivors in order.
pub fn dropout(cloud: &PointCloud, rate: f64, seed: u64) -> Result<PointCloud> {
    if !(0.0..=1.0).contains(&rate) {
        return config(format!("dropout rate {rate} outside [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = cloud
        .points
        .iter()
        .filter(|_| rng.random::<f64>() >= rate)
        .copied()
        .collect();
    Ok(PointCloud::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{StairClass, StairSpec};

    fn up_profile() -> TerrainProfile {
        TerrainProfile::new(StairSpec::stairs(StairClass::StairsUp, 0.12, 0.30, 8)).unwrap()
    }

    #[test]
    fn flat_noiseless_is_zero() {
        let p = TerrainProfile::new(StairSpec::flat()).unwrap();
        let c = scan(&p, Pose::new(1.0, -2.0, 0.4), &SensorModel::noiseless(), 3).unwrap();
        assert_eq!(c.len(), 120 * 120);
        assert!(c.points.iter().all(|p| p[2] == 0.0));
    }

    #[test]
    fn stairs_point_height() {
        let c = scan(&up_profile(), Pose::new(-0.05, 0.0, 0.0), &SensorModel::noiseless(), 0).unwrap();
        let nearest = c
            .points
            .iter()
            .min_by(|a, b| {
                let da = (a[0] - 0.45).hypot(a[1]);
                let db = (b[0] - 0.45).hypot(b[1]);
                da.total_cmp(&db)
            })
            .unwrap();
        assert!((nearest[2] - 0.24).abs() < 1e-12, "{nearest:?}");
    }

    #[test]
    fn z_is_relative_to_support() {
        let c = scan(&up_profile(), Pose::new(0.45, 0.0, 0.0), &SensorModel::noiseless(), 0).unwrap();
        // behind the robot, on the lead flat (world x < 0)
        let p = c.points.iter().find(|p| p[0] < -0.5).unwrap();
        assert!((p[2] + 0.24).abs() < 1e-12);
    }

    #[test]
    fn noise_std_matches_sigma() {
        let p = TerrainProfile::new(StairSpec::flat()).unwrap();
        let model = SensorModel {
            sample_pitch: 3.0 / 320.0,
            noise_sigma_z: 0.01,
            ..SensorModel::default()
        };
        let c = scan(&p, Pose::new(0.0, 0.0, 0.0), &model, 11).unwrap();
        assert!(c.len() >= 100_000);
        let n = c.len() as f64;
        let mean = c.points.iter().map(|p| p[2]).sum::<f64>() / n;
        let var = c.points.iter().map(|p| (p[2] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        assert!((0.0095..=0.0105).contains(&sd), "sd {sd}");
    }

    #[test]
    fn scan_deterministic_per_seed() {
        let m = SensorModel::default();
        let a = scan(&up_profile(), Pose::new(0.1, 0.2, 0.3), &m, 5).unwrap();
        let b = scan(&up_profile(), Pose::new(0.1, 0.2, 0.3), &m, 5).unwrap();
        let c = scan(&up_profile(), Pose::new(0.1, 0.2, 0.3), &m, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rotation_by_quarter_turn_permutes_lattice() {
        let prof = TerrainProfile::new(StairSpec {
            stair_yaw: 0.3,
            ..StairSpec::stairs(StairClass::StairsUp, 0.15, 0.28, 6)
        })
        .unwrap();
        let m = SensorModel::noiseless();
        let pose = Pose::new(0.2, -0.1, 0.25);
        let base = scan(&prof, pose, &m, 0).unwrap();
        let delta = std::f64::consts::FRAC_PI_2;
        let turned = scan(
            &prof,
            Pose {
                heading: pose.heading + delta,
                ..pose
            },
            &m,
            0,
        )
        .unwrap();
        // rotate the base cloud by -delta: (u, v) -> (v, -u)
        let mut expect: Vec<[f64; 3]> = base.points.iter().map(|p| [p[1], -p[0], p[2]]).collect();
        let mut got = turned.points.clone();
        let key = |p: &[f64; 3]| ((p[0] * 1e6).round() as i64, (p[1] * 1e6).round() as i64);
        expect.sort_by_key(key);
        got.sort_by_key(key);
        for (a, b) in expect.iter().zip(&got) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn rotation_general_angle_consistent() {
        let prof = up_profile();
        let m = SensorModel::noiseless();
        let pose = Pose::new(-0.3, 0.0, 0.0);
        let delta = 0.37f64;
        let turned = scan(&prof, Pose { heading: delta, ..pose }, &m, 0).unwrap();
        let support = prof.height_at(pose.x, pose.y);
        for p in turned.points.iter().step_by(97) {
            // express the point in the unrotated robot frame and re-query
            let (s, c) = delta.sin_cos();
            let (u0, v0) = (c * p[0] - s * p[1], s * p[0] + c * p[1]);
            let [wx, wy] = pose.to_world(u0, v0);
            assert!((prof.height_at(wx, wy) - support - p[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn occlusion_hides_points_behind_down_risers() {
        let prof = TerrainProfile::new(StairSpec::stairs(StairClass::StairsDown, 0.2, 0.3, 8)).unwrap();
        let open = scan(&prof, Pose::new(-0.2, 0.0, 0.0), &SensorModel::noiseless(), 0).unwrap();
        let occ = SensorModel {
            occlusion: true,
            ..SensorModel::noiseless()
        };
        let hidden = scan(&prof, Pose::new(-0.2, 0.0, 0.0), &occ, 0).unwrap();
        assert!(hidden.len() < open.len());
        let flat = TerrainProfile::new(StairSpec::flat()).unwrap();
        assert_eq!(scan(&flat, Pose::new(0.0, 0.0, 0.0), &occ, 0).unwrap().len(), 120 * 120);
    }

    #[test]
    fn dropout_edges_and_rate() {
        let pts: Vec<[f64; 3]> = (0..10_000).map(|i| [i as f64, 0.0, 0.0]).collect();
        let c = PointCloud::new(pts);
        assert_eq!(dropout(&c, 0.0, 1).unwrap(), c);
        assert!(dropout(&c, 1.0, 1).unwrap().is_empty());
        let half = dropout(&c, 0.5, 1).unwrap();
        assert!((4700..=5300).contains(&half.len()), "{}", half.len());
        assert!(half.points.windows(2).all(|w| w[0][0] < w[1][0]));
        assert_eq!(half, dropout(&c, 0.5, 1).unwrap());
        assert!(dropout(&c, 1.5, 1).is_err());
        assert!(dropout(&c, -0.1, 1).is_err());
    }
}

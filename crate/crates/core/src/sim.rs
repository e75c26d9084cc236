//! Synthetic worlds: pole maps, ground-truth trajectories, noisy odometry and
//! noisy, cluttered column observations.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{Observation, SegmentationMask};
use crate::rng::{domain, SeedStream};
use crate::filter::{MotionNoise, Odometry, STRAIGHT_LINE_OMEGA};
use crate::io::OdometryRow;
use crate::map::{
    normalize_angle, visible_projections, CameraIntrinsics, CompactMap, Point2, Pole, Pose2, SemanticLabel,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub min: Point2,
    pub max: Point2,
}

impl Arena {
    pub fn area(&self) -> f64 {
        (self.max.east - self.min.east).max(0.0) * (self.max.north - self.min.north).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrajectorySpec {
    /// Counter-clockwise circle starting at `center + (radius, 0)` facing North.
    Loop {
        center: Point2,
        radius: f64,
        speed: f64,
        laps: f64,
    },
    /// Constant-speed polyline; the heading follows each segment.
    Waypoints { points: Vec<Point2>, speed: f64 },
}

impl TrajectorySpec {
    pub fn length(&self) -> f64 {
        match self {
            TrajectorySpec::Loop { radius, laps, .. } => TAU * radius * laps,
            TrajectorySpec::Waypoints { points, .. } => points.windows(2).map(|w| w[0].distance(&w[1])).sum(),
        }
    }

    pub fn speed(&self) -> f64 {
        match self {
            TrajectorySpec::Loop { speed, .. } | TrajectorySpec::Waypoints { speed, .. } => *speed,
        }
    }

    /// Pose after travelling `s` metres along the path.
    pub fn pose_at(&self, s: f64) -> Pose2 {
        match self {
            TrajectorySpec::Loop { center, radius, .. } => {
                let phi = s / radius;
                Pose2::new(center.east + radius * phi.cos(), center.north + radius * phi.sin(), phi)
            }
            TrajectorySpec::Waypoints { points, .. } => {
                let mut remaining = s;
                for w in points.windows(2) {
                    let len = w[0].distance(&w[1]);
                    if len == 0.0 {
                        continue;
                    }
                    let heading = segment_heading(w[0], w[1]);
                    if remaining <= len {
                        let f = remaining / len;
                        return Pose2::new(
                            w[0].east + f * (w[1].east - w[0].east),
                            w[0].north + f * (w[1].north - w[0].north),
                            heading,
                        );
                    }
                    remaining -= len;
                }
                let last = points.len() - 1;
                let heading = (1..points.len())
                    .rev()
                    .find(|&i| points[i] != points[i - 1])
                    .map(|i| segment_heading(points[i - 1], points[i]))
                    .unwrap_or(0.0);
                Pose2::from_point(points[last], heading)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let speed = self.speed();
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(Error::InvalidParameter("trajectory speed must be > 0".into()));
        }
        match self {
            TrajectorySpec::Loop { radius, laps, .. } => {
                if !(*radius > 0.0 && *laps > 0.0) {
                    return Err(Error::InvalidParameter("loop radius and laps must be > 0".into()));
                }
            }
            TrajectorySpec::Waypoints { points, .. } => {
                if points.len() < 2 {
                    return Err(Error::InvalidParameter("waypoint trajectory needs >= 2 points".into()));
                }
            }
        }
        Ok(())
    }
}

/// Heading that makes the camera look from `a` towards `b`.
pub fn segment_heading(a: Point2, b: Point2) -> f64 {
    (-(b.east - a.east)).atan2(b.north - a.north)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub arena: Arena,
    pub pole_count: usize,
    /// Relative frequencies of pole labels; also used for clutter labels.
    pub label_mix: Vec<(SemanticLabel, f64)>,
    pub trajectory: TrajectorySpec,
    pub frame_rate: f64,
    /// Poles closer than this to any trajectory sample are redrawn.
    pub pole_clearance: f64,
    pub seed: u64,
}

impl WorldConfig {
    /// Square arena around `trajectory` extended by `margin` on every side.
    pub fn arena_around(trajectory: &TrajectorySpec, margin: f64) -> Arena {
        let (mut min, mut max) = match trajectory {
            TrajectorySpec::Loop { center, radius, .. } => (
                Point2::new(center.east - radius, center.north - radius),
                Point2::new(center.east + radius, center.north + radius),
            ),
            TrajectorySpec::Waypoints { points, .. } => {
                let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
                let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
                for p in points {
                    min.east = min.east.min(p.east);
                    min.north = min.north.min(p.north);
                    max.east = max.east.max(p.east);
                    max.north = max.north.max(p.north);
                }
                (min, max)
            }
        };
        min.east -= margin;
        min.north -= margin;
        max.east += margin;
        max.north += margin;
        Arena { min, max }
    }

    pub fn validate(&self) -> Result<()> {
        self.trajectory.validate()?;
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::InvalidParameter("frame_rate must be > 0".into()));
        }
        if self.label_mix.is_empty() || self.label_mix.iter().any(|(_, w)| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("label_mix needs non-negative weights".into()));
        }
        if self.label_mix.iter().all(|(_, w)| *w == 0.0) {
            return Err(Error::InvalidParameter("label_mix weights sum to zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorNoise {
    pub sigma_px: f64,
    pub p_d: f64,
    /// Mean number of false observations per frame.
    pub clutter_rate: f64,
}

impl SensorNoise {
    pub fn noiseless() -> Self {
        Self {
            sigma_px: 0.0,
            p_d: 1.0,
            clutter_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_d) {
            return Err(Error::InvalidParameter("sensor p_d must be in [0, 1]".into()));
        }
        if !(self.sigma_px >= 0.0 && self.clutter_rate >= 0.0) {
            return Err(Error::InvalidParameter("sigma_px and clutter_rate must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t: f64,
    pub pose: Pose2,
}

fn label_sampler(label_mix: &[(SemanticLabel, f64)]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(label_mix.iter().map(|(_, w)| *w))
        .map_err(|e| Error::InvalidParameter(format!("label_mix: {e}")))
}

/// Samples the trajectory at the frame rate and scatters poles uniformly over
/// the arena. Pole coordinates are rounded to millimetres so the map file is
/// an exact image of the in-memory map.
pub fn generate_world(cfg: &WorldConfig) -> Result<(CompactMap, Vec<TruthSample>)> {
    cfg.validate()?;
    let rng = &mut SeedStream::new(cfg.seed).stream(domain::WORLD, 0, 0);
    let duration = cfg.trajectory.length() / cfg.trajectory.speed();
    let frames = (duration * cfg.frame_rate + 1e-9).floor() as usize;
    let truth: Vec<TruthSample> = (0..frames.max(1))
        .map(|k| {
            let t = k as f64 / cfg.frame_rate;
            TruthSample {
                t,
                pose: cfg.trajectory.pose_at(cfg.trajectory.speed() * t),
            }
        })
        .collect();

    if cfg.pole_count > 0 && !(cfg.arena.area() > 0.0) {
        return Err(Error::InvalidParameter("arena is empty but pole_count > 0".into()));
    }
    let labels = label_sampler(&cfg.label_mix)?;
    let mut poles = Vec::with_capacity(cfg.pole_count);
    let mut attempts = 0usize;
    while poles.len() < cfg.pole_count {
        attempts += 1;
        if attempts > 1000 * (cfg.pole_count + 1) {
            return Err(Error::InvalidParameter(
                "could not place poles; the clearance leaves no room in the arena".into(),
            ));
        }
        let p = Point2::new(
            round_mm(rng.random_range(cfg.arena.min.east..cfg.arena.max.east)),
            round_mm(rng.random_range(cfg.arena.min.north..cfg.arena.max.north)),
        );
        let label = cfg.label_mix[labels.sample(rng)].0;
        if truth.iter().any(|s| s.pose.position().distance(&p) < cfg.pole_clearance) {
            continue;
        }
        poles.push(Pole {
            id: poles.len() as u32 + 1,
            position: p,
            label,
        });
    }
    Ok((CompactMap::new(poles)?, truth))
}

fn round_mm(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Exact `(v, ω)` that carries `a` to `b` along a circular arc in `dt`.
pub fn exact_odometry(a: &Pose2, b: &Pose2, dt: f64) -> Odometry {
    let dpsi = normalize_angle(b.heading() - a.heading());
    let (x, y) = a.world_to_camera(b.position());
    let omega = dpsi / dt;
    let v = if omega.abs() < STRAIGHT_LINE_OMEGA {
        y / dt
    } else {
        // body-frame arc displacement: x = -r (1 - cos Δψ), y = r sin Δψ
        let (s, c) = dpsi.sin_cos();
        let radius = if s.abs() >= (1.0 - c).abs() { y / s } else { -x / (1.0 - c) };
        radius * omega
    };
    Odometry { v, omega, dt }
}

/// Odometry between consecutive truth samples, perturbed with `noise`.
pub fn synthesize_odometry<R: Rng + ?Sized>(truth: &[TruthSample], noise: &MotionNoise, rng: &mut R) -> Vec<Odometry> {
    truth
        .windows(2)
        .map(|w| {
            let exact = exact_odometry(&w[0].pose, &w[1].pose, w[1].t - w[0].t);
            let (v, omega, _) = noise.sample(exact.v, exact.omega, rng);
            Odometry { v, omega, dt: exact.dt }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn synthesize_observations<R: Rng + ?Sized>(
    pose: &Pose2,
    map: &CompactMap,
    intr: &CameraIntrinsics,
    max_range: f64,
    noise: &SensorNoise,
    label_mix: &[(SemanticLabel, f64)],
    rng: &mut R,
) -> Result<Vec<Observation>> {
    let max_u = intr.width() - 1.0;
    let jitter = Normal::new(0.0, noise.sigma_px).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut out = Vec::new();
    for proj in visible_projections(pose, intr, map, max_range) {
        if noise.p_d < 1.0 && !rng.random_bool(noise.p_d) {
            continue;
        }
        let u = if noise.sigma_px > 0.0 {
            (proj.u + jitter.sample(rng)).clamp(0.0, max_u)
        } else {
            proj.u
        };
        out.push(nominal_observation(u, proj.label));
    }
    if noise.clutter_rate > 0.0 {
        let count = Poisson::new(noise.clutter_rate)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .sample(rng) as usize;
        let labels = label_sampler(label_mix)?;
        for _ in 0..count {
            let u = rng.random_range(0.0..intr.width());
            out.push(nominal_observation(u, label_mix[labels.sample(rng)].0));
        }
    }
    out.sort_by(|a, b| a.u.total_cmp(&b.u));
    Ok(out)
}

fn nominal_observation(u: f64, label: SemanticLabel) -> Observation {
    Observation {
        u,
        label,
        group_width: 3,
        pixel_count: 100,
    }
}

/// Draws every visible pole as a full-height vertical stripe `stripe_width`
/// pixels wide, using `class_of` to pick the mask class.
pub fn render_mask(
    pose: &Pose2,
    map: &CompactMap,
    intr: &CameraIntrinsics,
    max_range: f64,
    stripe_width: usize,
    class_of: impl Fn(SemanticLabel) -> u8,
) -> SegmentationMask {
    let width = intr.image_width as usize;
    let height = intr.image_height as usize;
    let mut mask = SegmentationMask::filled(width, height, 0);
    let half = stripe_width.saturating_sub(1) as f64 / 2.0;
    for proj in visible_projections(pose, intr, map, max_range) {
        let first = (proj.u - half).round().max(0.0) as usize;
        let last = ((proj.u + half).round() as usize).min(width - 1);
        let class = class_of(proj.label);
        for x in first..=last {
            for y in 0..height {
                mask.set(x, y, class);
            }
        }
    }
    mask
}

/// A complete synthetic run: world, truth and the sensor streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub map: CompactMap,
    pub truth: Vec<TruthSample>,
    /// One row per frame; row 0 only carries the start time.
    pub odometry: Vec<OdometryRow>,
    pub observations: Vec<Vec<Observation>>,
}

/// Generates the world from `world.seed`, then odometry and per-frame
/// observations from independent streams of the same seed.
pub fn simulate(
    world: &WorldConfig,
    odometry_noise: &MotionNoise,
    sensor: &SensorNoise,
    intr: &CameraIntrinsics,
    max_range: f64,
) -> Result<Simulation> {
    odometry_noise.validate()?;
    sensor.validate()?;
    let (map, truth) = generate_world(world)?;
    let seeds = SeedStream::new(world.seed);
    let odo = synthesize_odometry(&truth, odometry_noise, &mut seeds.stream(domain::ODOMETRY, 0, 0));
    let odometry = std::iter::once(OdometryRow { t: truth[0].t, v: 0.0, omega: 0.0 })
        .chain(truth[1..].iter().zip(&odo).map(|(s, o)| OdometryRow { t: s.t, v: o.v, omega: o.omega }))
        .collect();
    let observations = truth
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let rng = &mut seeds.stream(domain::OBSERVATIONS, k as u64, 0);
            synthesize_observations(&s.pose, &map, intr, max_range, sensor, &world.label_mix, rng)
        })
        .collect::<Result<_>>()?;
    Ok(Simulation { map, truth, odometry, observations })
}

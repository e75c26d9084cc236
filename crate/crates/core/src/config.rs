//! Flat `key = value` configuration for scenarios and localization runs.
//!
//! Lines starting with `#` are comments. Every key can also be overridden on
//! the command line as `--key value`. Relative paths in a file are resolved
//! against the file's directory.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::alignment::AlignParams;
use crate::error::{Error, Result};
use crate::extraction::{parse_label_map, ExtractionParams};
use crate::filter::{MotionNoise, WeightParams};
use crate::map::{CameraIntrinsics, Point2, Pose2, SemanticLabel, DEFAULT_MAX_RANGE};
use crate::sim::{simulate, Arena, SensorNoise, Simulation, TrajectorySpec, WorldConfig};

/// Keys shared by scenarios and runs.
pub const CAMERA_KEYS: &[&str] = &["fx", "cx", "image_width", "image_height", "max_range"];

pub const SCENARIO_KEYS: &[&str] = &[
    "seed",
    "trajectory",
    "loop_length_m",
    "loop_radius_m",
    "loop_center_east",
    "loop_center_north",
    "laps",
    "waypoints",
    "speed_mps",
    "frame_rate_hz",
    "pole_count",
    "label_mix",
    "arena_margin_m",
    "arena_min_east",
    "arena_min_north",
    "arena_max_east",
    "arena_max_north",
    "pole_clearance_m",
    "odo_alpha1",
    "odo_alpha2",
    "odo_alpha3",
    "odo_alpha4",
    "odo_alpha5",
    "odo_alpha6",
    "sensor_sigma_px",
    "sensor_p_d",
    "clutter_rate",
    "render_masks",
    "stripe_width_px",
];

pub const RUN_KEYS: &[&str] = &[
    "map",
    "odometry",
    "observations",
    "mask_dir",
    "scenario",
    "out",
    "seed",
    "particles",
    "p0",
    "gate_px",
    "p_d",
    "kappa",
    "sigma_px",
    "beta_ref",
    "d0",
    "beta_t",
    "beta_theta",
    "min_triple_angle",
    "gn_max_iters",
    "gn_tol",
    "resample_spread_cap",
    "alpha1",
    "alpha2",
    "alpha3",
    "alpha4",
    "alpha5",
    "alpha6",
    "c1",
    "c2",
    "c3",
    "label_map",
    "alignment_enabled",
    "alignment_every",
    "init_east_m",
    "init_north_m",
    "init_psi_rad",
    "init_sigma_trans_m",
    "init_sigma_rot_rad",
];

pub fn is_known_key(key: &str) -> bool {
    CAMERA_KEYS.contains(&key) || SCENARIO_KEYS.contains(&key) || RUN_KEYS.contains(&key)
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    base_dir: Option<PathBuf>,
}

/// Layered key/value store: later layers win.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, Entry>,
}

impl KeyValues {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf);
        Self::parse(&text, path, base)
    }

    pub fn parse(text: &str, path: &Path, base_dir: Option<PathBuf>) -> Result<Self> {
        let mut kv = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `key = value`"))?;
            let key = key.trim();
            if !is_known_key(key) {
                return Err(Error::parse(path, i + 1, format!("unknown key `{key}`")));
            }
            kv.entries.insert(
                key.to_string(),
                Entry {
                    value: value.trim().to_string(),
                    base_dir: base_dir.clone(),
                },
            );
        }
        Ok(kv)
    }

    /// Sets a value given on the command line; paths resolve against the
    /// working directory.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !is_known_key(key) {
            return Err(Error::InvalidParameter(format!("unknown key `{key}`")));
        }
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.into(),
                base_dir: None,
            },
        );
        Ok(())
    }

    pub fn overlay(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidParameter(format!("invalid value {v:?} for `{key}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "1" | "yes" | "on") => Ok(true),
            Some("false" | "0" | "no" | "off") => Ok(false),
            Some(v) => Err(Error::InvalidParameter(format!("invalid boolean {v:?} for `{key}`"))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.entries.get(key).map(|e| {
            let p = PathBuf::from(&e.value);
            match &e.base_dir {
                Some(base) if p.is_relative() => base.join(p),
                _ => p,
            }
        })
    }
}

pub fn intrinsics_from(kv: &KeyValues) -> Result<CameraIntrinsics> {
    let d = CameraIntrinsics::default();
    CameraIntrinsics::new(
        kv.get_or("fx", d.fx)?,
        kv.get_or("cx", d.cx)?,
        kv.get_or("image_width", d.image_width)?,
        kv.get_or("image_height", d.image_height)?,
    )
}

fn parse_label_mix(text: &str) -> Result<Vec<(SemanticLabel, f64)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|entry| {
            let (label, weight) = entry
                .split_once(':')
                .ok_or_else(|| Error::InvalidParameter(format!("label_mix entry {entry:?} is not Label:weight")))?;
            let label: SemanticLabel = label.trim().parse().map_err(|e| Error::InvalidParameter(format!("{e}")))?;
            let weight: f64 = weight
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("invalid weight in {entry:?}")))?;
            Ok((label, weight))
        })
        .collect()
}

fn parse_waypoints(text: &str) -> Result<Vec<Point2>> {
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pt| {
            let (e, n) = pt
                .split_once(':')
                .ok_or_else(|| Error::InvalidParameter(format!("waypoint {pt:?} is not east:north")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidParameter(format!("invalid waypoint {pt:?}")))
            };
            Ok(Point2::new(parse(e)?, parse(n)?))
        })
        .collect()
}

/// Everything needed to synthesize a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub world: WorldConfig,
    pub odometry_noise: MotionNoise,
    pub sensor: SensorNoise,
    pub intrinsics: CameraIntrinsics,
    pub max_range: f64,
    pub render_masks: bool,
    pub stripe_width_px: usize,
}

pub const DEFAULT_LABEL_MIX: &str = "Pole:0.5,Lamp:0.3,TreeTrunk:0.2";
pub const DEFAULT_ODOMETRY_NOISE: [f64; 6] = [0.02, 0.0, 0.002, 0.02, 0.0, 0.0];

impl ScenarioConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let speed = kv.get_or("speed_mps", 5.0)?;
        let trajectory = match kv.raw("trajectory").unwrap_or("loop") {
            "loop" => {
                let radius = match kv.get::<f64>("loop_radius_m")? {
                    Some(r) => r,
                    None => kv.get_or("loop_length_m", 500.0)? / TAU,
                };
                TrajectorySpec::Loop {
                    center: Point2::new(kv.get_or("loop_center_east", 0.0)?, kv.get_or("loop_center_north", 0.0)?),
                    radius,
                    speed,
                    laps: kv.get_or("laps", 1.0)?,
                }
            }
            "waypoints" => TrajectorySpec::Waypoints {
                points: parse_waypoints(kv.raw("waypoints").unwrap_or(""))?,
                speed,
            },
            other => {
                return Err(Error::InvalidParameter(format!(
                    "trajectory must be `loop` or `waypoints`, got {other:?}"
                )))
            }
        };
        let auto = WorldConfig::arena_around(&trajectory, kv.get_or("arena_margin_m", 20.0)?);
        let arena = Arena {
            min: Point2::new(
                kv.get_or("arena_min_east", auto.min.east)?,
                kv.get_or("arena_min_north", auto.min.north)?,
            ),
            max: Point2::new(
                kv.get_or("arena_max_east", auto.max.east)?,
                kv.get_or("arena_max_north", auto.max.north)?,
            ),
        };
        let world = WorldConfig {
            arena,
            pole_count: kv.get_or("pole_count", 40)?,
            label_mix: parse_label_mix(kv.raw("label_mix").unwrap_or(DEFAULT_LABEL_MIX))?,
            trajectory,
            frame_rate: kv.get_or("frame_rate_hz", 10.0)?,
            pole_clearance: kv.get_or("pole_clearance_m", 3.0)?,
            seed: kv.get_or("seed", 0)?,
        };
        world.validate()?;

        let mut alpha = DEFAULT_ODOMETRY_NOISE;
        for (i, a) in alpha.iter_mut().enumerate() {
            *a = kv.get_or(&format!("odo_alpha{}", i + 1), *a)?;
        }
        let odometry_noise = MotionNoise { alpha };
        odometry_noise.validate()?;

        let sensor = SensorNoise {
            sigma_px: kv.get_or("sensor_sigma_px", 2.0)?,
            p_d: kv.get_or("sensor_p_d", 0.9)?,
            clutter_rate: kv.get_or("clutter_rate", 1.0)?,
        };
        sensor.validate()?;

        let max_range = kv.get_or("max_range", DEFAULT_MAX_RANGE)?;
        if !(max_range > 0.0) {
            return Err(Error::InvalidParameter("max_range must be > 0".into()));
        }
        Ok(Self {
            world,
            odometry_noise,
            sensor,
            intrinsics: intrinsics_from(kv)?,
            max_range,
            render_masks: kv.flag("render_masks", false)?,
            stripe_width_px: kv.get_or("stripe_width_px", 5)?,
        })
    }
}

impl ScenarioConfig {
    pub fn simulate(&self) -> Result<Simulation> {
        simulate(&self.world, &self.odometry_noise, &self.sensor, &self.intrinsics, self.max_range)
    }
}

/// Where per-frame observations come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationSource {
    Csv(PathBuf),
    MaskDir(PathBuf),
    /// Simulate map, odometry and observations in-process.
    Scenario(Box<ScenarioConfig>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialPrior {
    pub pose: Option<Pose2>,
    pub sigma_trans: f64,
    pub sigma_rot: f64,
}

/// How wide the accurate resample may spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpreadCap {
    /// `(1 - w*) β` as is.
    None,
    /// Never wider than the current particle ensemble.
    Ensemble,
}

impl FromStr for SpreadCap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SpreadCap::None),
            "ensemble" => Ok(SpreadCap::Ensemble),
            other => Err(Error::InvalidParameter(format!(
                "resample_spread_cap must be `none` or `ensemble`, got {other:?}"
            ))),
        }
    }
}

/// Filter and alignment settings independent of the input files.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizerSettings {
    pub intrinsics: CameraIntrinsics,
    pub max_range: f64,
    pub gate_px: f64,
    pub particles: usize,
    pub p0: f64,
    pub weights: WeightParams,
    pub align: AlignParams,
    pub spread_cap: SpreadCap,
    pub motion_noise: MotionNoise,
    pub alignment_enabled: bool,
    pub alignment_every: usize,
    pub init: InitialPrior,
    pub seed: u64,
}

pub const DEFAULT_FILTER_NOISE: [f64; 6] = [0.05, 0.0, 0.004, 0.05, 0.001, 0.01];

impl Default for LocalizerSettings {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            max_range: DEFAULT_MAX_RANGE,
            gate_px: 40.0,
            particles: 1000,
            p0: 0.6,
            weights: WeightParams::default(),
            align: AlignParams::default(),
            spread_cap: SpreadCap::Ensemble,
            motion_noise: MotionNoise { alpha: DEFAULT_FILTER_NOISE },
            alignment_enabled: true,
            alignment_every: 1,
            init: InitialPrior {
                pose: None,
                sigma_trans: 1.0,
                sigma_rot: 0.05,
            },
            seed: 0,
        }
    }
}

impl LocalizerSettings {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.weights.validate()?;
        self.align.validate()?;
        self.motion_noise.validate()?;
        if self.particles == 0 {
            return Err(Error::InvalidParameter("particles must be >= 1".into()));
        }
        if self.alignment_every == 0 {
            return Err(Error::InvalidParameter("alignment_every must be >= 1".into()));
        }
        if !(self.gate_px > 0.0 && self.max_range > 0.0) {
            return Err(Error::InvalidParameter("gate_px and max_range must be > 0".into()));
        }
        if !(self.p0 > 0.0 && self.p0 <= 1.0) {
            return Err(Error::InvalidParameter("p0 must be in (0, 1]".into()));
        }
        if !(self.init.sigma_trans >= 0.0 && self.init.sigma_rot >= 0.0) {
            return Err(Error::InvalidParameter("initial sigmas must be >= 0".into()));
        }
        Ok(())
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let mut alpha = d.motion_noise.alpha;
        for (i, a) in alpha.iter_mut().enumerate() {
            *a = kv.get_or(&format!("alpha{}", i + 1), *a)?;
        }
        let init_pose = match (
            kv.get::<f64>("init_east_m")?,
            kv.get::<f64>("init_north_m")?,
            kv.get::<f64>("init_psi_rad")?,
        ) {
            (Some(e), Some(n), Some(psi)) => Some(Pose2::new(e, n, psi)),
            (None, None, None) => None,
            _ => {
                return Err(Error::InvalidParameter(
                    "init_east_m, init_north_m and init_psi_rad must be given together".into(),
                ))
            }
        };
        let settings = Self {
            intrinsics: intrinsics_from(kv)?,
            max_range: kv.get_or("max_range", d.max_range)?,
            gate_px: kv.get_or("gate_px", d.gate_px)?,
            particles: kv.get_or("particles", d.particles)?,
            p0: kv.get_or("p0", d.p0)?,
            weights: WeightParams {
                p_d: kv.get_or("p_d", d.weights.p_d)?,
                kappa: kv.get_or("kappa", d.weights.kappa)?,
                sigma_px: kv.get_or("sigma_px", d.weights.sigma_px)?,
                beta_ref: kv.get_or("beta_ref", d.weights.beta_ref)?,
            },
            align: AlignParams {
                d0: kv.get_or("d0", d.align.d0)?,
                beta_t: kv.get_or("beta_t", d.align.beta_t)?,
                beta_theta: kv.get_or("beta_theta", d.align.beta_theta)?,
                min_triple_angle: kv.get_or("min_triple_angle", d.align.min_triple_angle)?,
                gn_max_iters: kv.get_or("gn_max_iters", d.align.gn_max_iters)?,
                gn_tol: kv.get_or("gn_tol", d.align.gn_tol)?,
            },
            spread_cap: kv.get_or("resample_spread_cap", d.spread_cap)?,
            motion_noise: MotionNoise { alpha },
            alignment_enabled: kv.flag("alignment_enabled", d.alignment_enabled)?,
            alignment_every: kv.get_or("alignment_every", d.alignment_every)?,
            init: InitialPrior {
                pose: init_pose,
                sigma_trans: kv.get_or("init_sigma_trans_m", d.init.sigma_trans)?,
                sigma_rot: kv.get_or("init_sigma_rot_rad", d.init.sigma_rot)?,
            },
            seed: kv.get_or("seed", d.seed)?,
        };
        settings.validate()?;
        Ok(settings)
    }
}

/// A complete `localize` configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub map: Option<PathBuf>,
    pub odometry: Option<PathBuf>,
    pub observations: ObservationSource,
    pub extraction: ExtractionParams,
    pub settings: LocalizerSettings,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut kv = kv.clone();
        let sources = ["observations", "mask_dir", "scenario"]
            .iter()
            .filter(|k| kv.contains(k))
            .count();
        if sources != 1 {
            return Err(Error::InvalidParameter(
                "exactly one of `observations`, `mask_dir` or `scenario` must be set".into(),
            ));
        }
        let observations = if let Some(p) = kv.path("observations") {
            ObservationSource::Csv(p)
        } else if let Some(p) = kv.path("mask_dir") {
            ObservationSource::MaskDir(p)
        } else {
            let path = kv.path("scenario").expect("checked above");
            let scenario_kv = KeyValues::load(&path)?;
            // the run inherits camera keys it does not set itself
            for key in CAMERA_KEYS {
                if !kv.contains(key) {
                    if let Some(v) = scenario_kv.raw(key) {
                        kv.set(key, v)?;
                    }
                }
            }
            ObservationSource::Scenario(Box::new(ScenarioConfig::from_key_values(&scenario_kv)?))
        };
        let scenario = matches!(observations, ObservationSource::Scenario(_));
        let map = kv.path("map");
        let odometry = kv.path("odometry");
        if !scenario && (map.is_none() || odometry.is_none()) {
            return Err(Error::InvalidParameter("`map` and `odometry` are required".into()));
        }

        let mut extraction = ExtractionParams::default();
        extraction.c1 = kv.get_or("c1", extraction.c1)?;
        extraction.c2 = kv.get_or("c2", extraction.c2)?;
        extraction.c3 = kv.get_or("c3", extraction.c3)?;
        if let Some(m) = kv.raw("label_map") {
            extraction.label_map = parse_label_map(m)?;
        }
        extraction.validate()?;

        let settings = LocalizerSettings::from_key_values(&kv)?;
        if !scenario && settings.init.pose.is_none() {
            return Err(Error::InvalidParameter(
                "init_east_m, init_north_m and init_psi_rad are required".into(),
            ));
        }
        Ok(Self {
            map,
            odometry,
            observations,
            extraction,
            settings,
            out: kv.path("out"),
        })
    }
}

pub fn extraction_from(kv: &KeyValues) -> Result<ExtractionParams> {
    let mut extraction = ExtractionParams::default();
    extraction.c1 = kv.get_or("c1", extraction.c1)?;
    extraction.c2 = kv.get_or("c2", extraction.c2)?;
    extraction.c3 = kv.get_or("c3", extraction.c3)?;
    if let Some(m) = kv.raw("label_map") {
        extraction.label_map = parse_label_map(m)?;
    }
    extraction.validate()?;
    Ok(extraction)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(text: &str) -> KeyValues {
        KeyValues::parse(text, Path::new("test.cfg"), Some(PathBuf::from("/base"))).unwrap()
    }

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = kv("# comment\n\nseed = 12\n  particles=50  \nmap = maps/m.csv\n");
        assert_eq!(kv.get::<u64>("seed").unwrap(), Some(12));
        assert_eq!(kv.get::<usize>("particles").unwrap(), Some(50));
        assert_eq!(kv.path("map").unwrap(), PathBuf::from("/base/maps/m.csv"));
    }

    #[test]
    fn unknown_keys_and_bad_lines_are_rejected() {
        assert!(matches!(
            KeyValues::parse("bogus = 1\n", Path::new("t"), None),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(KeyValues::parse("seed 1\n", Path::new("t"), None).is_err());
        let mut k = KeyValues::default();
        assert!(k.set("nope", "1").is_err());
    }

    #[test]
    fn overrides_win() {
        let mut k = kv("particles = 10\n");
        k.set("particles", "20").unwrap();
        assert_eq!(k.get::<usize>("particles").unwrap(), Some(20));
    }

    #[test]
    fn default_scenario_is_the_500m_loop() {
        let s = ScenarioConfig::from_key_values(&KeyValues::default()).unwrap();
        assert!((s.world.trajectory.length() - 500.0).abs() < 1e-9);
        assert_eq!(s.world.pole_count, 40);
        assert_eq!(s.sensor.sigma_px, 2.0);
        assert_eq!(s.sensor.p_d, 0.9);
        assert_eq!(s.sensor.clutter_rate, 1.0);
    }

    #[test]
    fn run_config_requires_inputs() {
        let k = kv("map = m.csv\nodometry = o.csv\n");
        assert!(RunConfig::from_key_values(&k).is_err());
        let k = kv("map = m.csv\nodometry = o.csv\nobservations = obs.csv\n");
        assert!(RunConfig::from_key_values(&k).is_err(), "init pose missing");
        let k = kv("map = m.csv\nodometry = o.csv\nobservations = obs.csv\ninit_east_m = 1\ninit_north_m = 2\ninit_psi_rad = 0\n");
        let cfg = RunConfig::from_key_values(&k).unwrap();
        assert_eq!(cfg.settings.particles, 1000);
        assert_eq!(cfg.settings.p0, 0.6);
        assert_eq!(cfg.observations, ObservationSource::Csv(PathBuf::from("/base/obs.csv")));
    }

    #[test]
    fn settings_validation() {
        let mut k = KeyValues::default();
        k.set("particles", "0").unwrap();
        assert!(LocalizerSettings::from_key_values(&k).is_err());
        let mut k = KeyValues::default();
        k.set("alignment_every", "0").unwrap();
        assert!(LocalizerSettings::from_key_values(&k).is_err());
        let mut k = KeyValues::default();
        k.set("init_east_m", "1").unwrap();
        assert!(LocalizerSettings::from_key_values(&k).is_err());
        let mut k = KeyValues::default();
        k.set("alignment_enabled", "maybe").unwrap();
        assert!(LocalizerSettings::from_key_values(&k).is_err());
    }
}

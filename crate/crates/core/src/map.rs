//! Pole-landmark map, camera intrinsics and the column projection model.
//!
//! Every landmark is an infinite vertical line, so a map is a flat list of
//! 2-D positions with a semantic label, and a landmark seen by the camera is a
//! single image column `u`.
//!
//! Heading convention: the camera looks along `(-sin ψ, cos ψ)` in world
//! East/North coordinates, so `ψ = 0` faces North and positive `ψ` turns
//! counter-clockwise. The camera's `x'` axis (image right) is `(cos ψ, sin ψ)`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default maximum range for a pole to be considered visible.
pub const DEFAULT_MAX_RANGE: f64 = 80.0;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub east: f64,
    pub north: f64,
}

impl Point2 {
    pub const fn new(east: f64, north: f64) -> Self {
        Self { east, north }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.east - other.east).hypot(self.north - other.north)
    }

    pub fn is_finite(&self) -> bool {
        self.east.is_finite() && self.north.is_finite()
    }
}

/// Planar vehicle/camera pose. The heading is kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub east: f64,
    pub north: f64,
    heading: f64,
}

impl Pose2 {
    pub fn new(east: f64, north: f64, heading: f64) -> Self {
        Self {
            east,
            north,
            heading: normalize_angle(heading),
        }
    }

    pub fn from_point(position: Point2, heading: f64) -> Self {
        Self::new(position.east, position.north, heading)
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn set_heading(&mut self, heading: f64) {
        self.heading = normalize_angle(heading);
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.east, self.north)
    }

    /// Unit vector of the camera's optical (forward) axis in world coordinates.
    pub fn forward(&self) -> Point2 {
        Point2::new(-self.heading.sin(), self.heading.cos())
    }

    /// World point expressed in the camera frame as `(x', y')`, with `y'` the
    /// forward distance.
    pub fn world_to_camera(&self, p: Point2) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let dx = p.east - self.east;
        let dy = p.north - self.north;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn camera_to_world(&self, x: f64, y: f64) -> Point2 {
        let (s, c) = self.heading.sin_cos();
        Point2::new(self.east + c * x - s * y, self.north + s * x + c * y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemanticLabel {
    Pole,
    Lamp,
    TreeTrunk,
    TrafficSign,
    Other,
}

impl SemanticLabel {
    pub const ALL: [SemanticLabel; 5] = [
        SemanticLabel::Pole,
        SemanticLabel::Lamp,
        SemanticLabel::TreeTrunk,
        SemanticLabel::TrafficSign,
        SemanticLabel::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SemanticLabel::Pole => "Pole",
            SemanticLabel::Lamp => "Lamp",
            SemanticLabel::TreeTrunk => "TreeTrunk",
            SemanticLabel::TrafficSign => "TrafficSign",
            SemanticLabel::Other => "Other",
        }
    }
}

impl fmt::Display for SemanticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLabel(pub String);

impl fmt::Display for UnknownLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown semantic label {:?}", self.0)
    }
}

impl std::error::Error for UnknownLabel {}

impl FromStr for SemanticLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SemanticLabel::ALL
            .into_iter()
            .find(|label| label.as_str() == s)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub id: u32,
    pub position: Point2,
    pub label: SemanticLabel,
}

impl Pole {
    pub fn new(id: u32, east: f64, north: f64, label: SemanticLabel) -> Self {
        Self {
            id,
            position: Point2::new(east, north),
            label,
        }
    }
}

/// Ordered collection of poles with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompactMap {
    poles: Vec<Pole>,
}

impl CompactMap {
    pub fn new(poles: Vec<Pole>) -> Result<Self> {
        let mut ids = std::collections::HashSet::with_capacity(poles.len());
        for pole in &poles {
            if !pole.position.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "pole {} has a non-finite position",
                    pole.id
                )));
            }
            if !ids.insert(pole.id) {
                return Err(Error::InvalidParameter(format!("duplicate pole id {}", pole.id)));
            }
        }
        Ok(Self { poles })
    }

    pub fn poles(&self) -> &[Pole] {
        &self.poles
    }

    pub fn len(&self) -> usize {
        self.poles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poles.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Pole> {
        self.poles.iter().find(|p| p.id == id)
    }

    /// Serializes the map in the `id,east_m,north_m,label` CSV format.
    /// Coordinates are written at millimetre resolution.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "id,east_m,north_m,label")?;
        for pole in &self.poles {
            writeln!(
                out,
                "{},{},{},{}",
                pole.id,
                fmt_mm(pole.position.east),
                fmt_mm(pole.position.north),
                pole.label
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("map CSV is ASCII")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

fn fmt_mm(value: f64) -> String {
    let s = format!("{value:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Reads a map CSV with header `id,east_m,north_m,label`.
pub fn load_map(path: &Path) -> Result<CompactMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_map(&text, path)
}

pub fn parse_map(text: &str, path: &Path) -> Result<CompactMap> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let expected = ["id", "east_m", "north_m", "label"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            path,
            1,
            format!("expected header `{}`", expected.join(",")),
        ));
    }

    let mut poles = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 4 {
            return Err(Error::parse(path, line, "expected 4 fields"));
        }
        let id: u32 = record[0]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("invalid id {:?}", &record[0])))?;
        let east = parse_finite(&record[1], "east_m").map_err(|m| Error::parse(path, line, m))?;
        let north = parse_finite(&record[2], "north_m").map_err(|m| Error::parse(path, line, m))?;
        let label: SemanticLabel = record[3]
            .parse()
            .map_err(|e: UnknownLabel| Error::parse(path, line, e.to_string()))?;
        if !ids.insert(id) {
            return Err(Error::parse(path, line, format!("duplicate pole id {id}")));
        }
        poles.push(Pole::new(id, east, north, label));
    }
    Ok(CompactMap { poles })
}

pub(crate) fn parse_finite(field: &str, name: &str) -> Result<f64, String> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("invalid {name} {field:?}")),
    }
}

/// Pinhole intrinsics restricted to the horizontal axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub cx: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, cx: f64, image_width: u32, image_height: u32) -> Result<Self> {
        let intr = Self {
            fx,
            cx,
            image_width,
            image_height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0) {
            return Err(Error::InvalidParameter(format!("fx must be > 0, got {}", self.fx)));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::InvalidParameter("image dimensions must be > 0".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.image_width as f64) {
            return Err(Error::InvalidParameter(format!(
                "cx must lie in [0, {}), got {}",
                self.image_width, self.cx
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.image_width as f64
    }

    /// Bearing of an image column relative to the optical axis, positive to
    /// the right.
    pub fn column_bearing(&self, u: f64) -> f64 {
        ((u - self.cx) / self.fx).atan()
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 400.0,
            cx: 320.0,
            image_width: 640,
            image_height: 480,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub pole_id: u32,
    pub u: f64,
    /// Forward distance `y'` in the camera frame.
    pub range: f64,
    pub label: SemanticLabel,
}

/// Image column of `pole` seen from `pose`, or `None` when the pole is behind
/// the camera or outside `[0, image_width)`.
pub fn project_pole(pose: &Pose2, intr: &CameraIntrinsics, pole: &Pole) -> Option<Projection> {
    let (x, y) = pose.world_to_camera(pole.position);
    if y <= 0.0 {
        return None;
    }
    let u = x * intr.fx / y + intr.cx;
    if !(u >= 0.0 && u < intr.width()) {
        return None;
    }
    Some(Projection {
        pole_id: pole.id,
        u,
        range: y,
        label: pole.label,
    })
}

/// Recovers the world position behind a projection; inverse of [`project_pole`].
pub fn unproject(pose: &Pose2, intr: &CameraIntrinsics, projection: &Projection) -> Point2 {
    let x = (projection.u - intr.cx) * projection.range / intr.fx;
    pose.camera_to_world(x, projection.range)
}

/// All projections within `max_range`, sorted by `(u, pole_id)`.
pub fn visible_projections(
    pose: &Pose2,
    intr: &CameraIntrinsics,
    map: &CompactMap,
    max_range: f64,
) -> Vec<Projection> {
    let mut out: Vec<Projection> = map
        .poles()
        .iter()
        .filter_map(|pole| project_pole(pose, intr, pole))
        .filter(|p| p.range <= max_range)
        .collect();
    out.sort_by(|a, b| a.u.total_cmp(&b.u).then(a.pole_id.cmp(&b.pole_id)));
    out
}

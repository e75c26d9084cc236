//! CSV formats for trajectories and odometry.
//!
//! Floats are written with Rust's shortest round-trip formatting so files are
//! lossless and byte-stable across runs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{parse_finite, Pose2};
use crate::sim::TruthSample;

pub const TRUTH_HEADER: &str = "frame,t_s,east_m,north_m,psi_rad";
pub const ODOMETRY_HEADER: &str = "t_s,v_mps,omega_radps";
pub const TRAJECTORY_HEADER: &str = "frame,east_m,north_m,psi_rad,mode";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    Coarse,
    Aligned,
}

impl EstimateMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimateMode::Coarse => "coarse",
            EstimateMode::Aligned => "aligned",
        }
    }
}

/// One odometry row: velocities applied between the previous frame and the
/// frame stamped `t`. The first row only carries the start time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometryRow {
    pub t: f64,
    pub v: f64,
    pub omega: f64,
}

pub fn write_truth<W: Write>(mut out: W, truth: &[TruthSample]) -> std::io::Result<()> {
    writeln!(out, "{TRUTH_HEADER}")?;
    for (frame, s) in truth.iter().enumerate() {
        writeln!(out, "{},{},{},{},{}", frame, s.t, s.pose.east, s.pose.north, s.pose.heading())?;
    }
    Ok(())
}

pub fn write_odometry<W: Write>(mut out: W, rows: &[OdometryRow]) -> std::io::Result<()> {
    writeln!(out, "{ODOMETRY_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.t, r.v, r.omega)?;
    }
    Ok(())
}

pub fn write_trajectory<W: Write>(mut out: W, poses: &[(Pose2, EstimateMode)]) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for (frame, (p, mode)) in poses.iter().enumerate() {
        writeln!(out, "{},{},{},{},{}", frame, p.east, p.north, p.heading(), mode.as_str())?;
    }
    Ok(())
}

struct Table {
    columns: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let columns = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, record));
    }
    Ok(Table { columns, rows })
}

impl Table {
    fn column(&self, path: &Path, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::parse(path, 1, format!("missing column `{name}`")))
    }

    fn floats(&self, path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
        let idx = names
            .iter()
            .map(|n| self.column(path, n))
            .collect::<Result<Vec<_>>>()?;
        self.rows
            .iter()
            .map(|(line, rec)| {
                idx.iter()
                    .zip(names)
                    .map(|(&i, name)| {
                        let field = rec.get(i).unwrap_or("");
                        parse_finite(field, name).map_err(|m| Error::parse(path, *line, m))
                    })
                    .collect()
            })
            .collect()
    }

    /// Checks that the `frame` column counts 0, 1, 2, ...
    fn check_frames(&self, path: &Path) -> Result<()> {
        let i = self.column(path, "frame")?;
        for (expected, (line, rec)) in self.rows.iter().enumerate() {
            let frame: usize = rec
                .get(i)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::parse(path, *line, "invalid frame"))?;
            if frame != expected {
                return Err(Error::parse(path, *line, format!("expected frame {expected}, found {frame}")));
            }
        }
        Ok(())
    }
}

pub fn load_odometry(path: &Path) -> Result<Vec<OdometryRow>> {
    let table = read_table(path)?;
    let rows = table.floats(path, &["t_s", "v_mps", "omega_radps"])?;
    let out: Vec<OdometryRow> = rows
        .into_iter()
        .map(|r| OdometryRow { t: r[0], v: r[1], omega: r[2] })
        .collect();
    for (k, w) in out.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            let line = table.rows[k + 1].0;
            return Err(Error::parse(path, line, "timestamps must be strictly increasing"));
        }
    }
    Ok(out)
}

/// Reads any CSV with `frame,east_m,north_m,psi_rad` columns (truth or
/// estimated trajectory).
pub fn load_poses(path: &Path) -> Result<Vec<Pose2>> {
    let table = read_table(path)?;
    table.check_frames(path)?;
    Ok(table
        .floats(path, &["east_m", "north_m", "psi_rad"])?
        .into_iter()
        .map(|r| Pose2::new(r[0], r[1], r[2]))
        .collect())
}

pub fn load_truth(path: &Path) -> Result<Vec<TruthSample>> {
    let table = read_table(path)?;
    table.check_frames(path)?;
    Ok(table
        .floats(path, &["t_s", "east_m", "north_m", "psi_rad"])?
        .into_iter()
        .map(|r| TruthSample {
            t: r[0],
            pose: Pose2::new(r[1], r[2], r[3]),
        })
        .collect())
}

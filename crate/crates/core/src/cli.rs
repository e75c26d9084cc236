//! `poleloc` subcommands: simulate, localize, extract, evaluate.
//!
//! Exit codes: 0 success, 1 input error, 2 filter divergence (outputs are
//! still written).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{extraction_from, KeyValues, ObservationSource, RunConfig, ScenarioConfig};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, frame_errors, write_frame_errors, MetricsReport};
use crate::extraction::{default_label_map, extract_directory, load_observations, write_observations};
use crate::io::{load_odometry, load_poses, write_odometry, write_trajectory, write_truth};
use crate::localize::{run, RunOutput};
use crate::map::{load_map, SemanticLabel};
use crate::sim::render_mask;

pub const EXIT_INPUT_ERROR: u8 = 1;
pub const EXIT_DIVERGED: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "poleloc", version, about = "Monocular localization against a compact pole map")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic map, trajectory, odometry and observations.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the localizer and write trajectory.csv and frames.jsonl.
    Localize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        no_alignment: bool,
        #[arg(long, value_name = "K")]
        alignment_every: Option<usize>,
    },
    /// Extract pole observations from a directory of PGM masks.
    Extract {
        mask_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare an estimated trajectory against ground truth.
    Evaluate {
        estimate: PathBuf,
        truth: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Any configuration key, as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
    overrides: Vec<String>,
}

impl Common {
    fn key_values(&self) -> Result<KeyValues> {
        let mut kv = match &self.config {
            Some(path) => KeyValues::load(path)?,
            None => KeyValues::default(),
        };
        let mut args = self.overrides.iter();
        while let Some(arg) = args.next() {
            let flag = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::InvalidParameter(format!("unexpected argument {arg:?}")))?;
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = args
                        .next()
                        .ok_or_else(|| Error::InvalidParameter(format!("missing value for --{flag}")))?;
                    (flag.to_string(), v.clone())
                }
            };
            kv.set(&key.replace('-', "_"), value)?;
        }
        if let Some(seed) = self.seed {
            kv.set("seed", seed.to_string())?;
        }
        if let Some(out) = &self.out {
            kv.set("out", out.to_string_lossy())?;
        }
        Ok(kv)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT_ERROR } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(Status::Ok) => 0,
        Ok(Status::Diverged) => {
            eprintln!("error: the filter diverged on at least one frame");
            EXIT_DIVERGED
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT_ERROR
        }
    }
}

enum Status {
    Ok,
    Diverged,
}

fn execute(command: Command) -> Result<Status> {
    match command {
        Command::Simulate { common } => {
            let kv = common.key_values()?;
            let out = require_out(&kv)?;
            cmd_simulate(&ScenarioConfig::from_key_values(&kv)?, &out)?;
            Ok(Status::Ok)
        }
        Command::Localize { common, particles, no_alignment, alignment_every } => {
            let mut kv = common.key_values()?;
            if let Some(n) = particles {
                kv.set("particles", n.to_string())?;
            }
            if no_alignment {
                kv.set("alignment_enabled", "false")?;
            }
            if let Some(k) = alignment_every {
                kv.set("alignment_every", k.to_string())?;
            }
            let out = require_out(&kv)?;
            let cfg = RunConfig::from_key_values(&kv)?;
            let output = cmd_localize(&cfg, &out)?;
            Ok(if output.diverged() { Status::Diverged } else { Status::Ok })
        }
        Command::Extract { mask_dir, common } => {
            let kv = common.key_values()?;
            let out = require_out(&kv)?;
            cmd_extract(&mask_dir, &extraction_from(&kv)?, &out)?;
            Ok(Status::Ok)
        }
        Command::Evaluate { estimate, truth, out } => {
            let report = cmd_evaluate(&estimate, &truth, out.as_deref())?;
            if out.is_none() {
                // a closed pipe (e.g. `| head`) is not an error
                let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            }
            Ok(Status::Ok)
        }
    }
}

fn require_out(kv: &KeyValues) -> Result<PathBuf> {
    kv.path("out")
        .ok_or_else(|| Error::InvalidParameter("an output directory is required (--out DIR)".into()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Mask class id for a label, the inverse of the default label map.
fn class_of(label: SemanticLabel) -> u8 {
    default_label_map()
        .into_iter()
        .find(|(_, l)| *l == label)
        .map_or(0, |(id, _)| id)
}

/// Writes map.csv, truth.csv, odometry.csv, observations.csv and, when
/// enabled, masks/NNNNNN.pgm.
pub fn cmd_simulate(scenario: &ScenarioConfig, out: &Path) -> Result<()> {
    let sim = scenario.simulate()?;
    create_dir(out)?;
    sim.map.save(&out.join("map.csv"))?;
    write_file(&out.join("truth.csv"), |w| write_truth(w, &sim.truth))?;
    write_file(&out.join("odometry.csv"), |w| write_odometry(w, &sim.odometry))?;
    write_file(&out.join("observations.csv"), |w| write_observations(w, &sim.observations))?;
    if scenario.render_masks {
        let dir = out.join("masks");
        create_dir(&dir)?;
        for (k, s) in sim.truth.iter().enumerate() {
            let mask = render_mask(
                &s.pose,
                &sim.map,
                &scenario.intrinsics,
                scenario.max_range,
                scenario.stripe_width_px,
                class_of,
            );
            let path = dir.join(format!("{k:06}.pgm"));
            std::fs::write(&path, mask.to_pgm()).map_err(|e| Error::io(&path, e))?;
        }
    }
    log::info!("simulated {} frames, {} poles into {}", sim.truth.len(), sim.map.len(), out.display());
    Ok(())
}

/// Runs the localizer and writes trajectory.csv and frames.jsonl (and
/// truth.csv for simulated input).
pub fn cmd_localize(cfg: &RunConfig, out: &Path) -> Result<RunOutput> {
    let settings = &cfg.settings;
    let (map, odometry, observations, initial, truth) = match &cfg.observations {
        ObservationSource::Scenario(scenario) => {
            let sim = scenario.simulate()?;
            let initial = settings.init.pose.unwrap_or(sim.truth[0].pose);
            (sim.map, sim.odometry, sim.observations, initial, Some(sim.truth))
        }
        source => {
            let map = load_map(cfg.map.as_deref().expect("validated"))?;
            let odometry = load_odometry(cfg.odometry.as_deref().expect("validated"))?;
            let observations = match source {
                ObservationSource::Csv(path) => load_observations(path)?,
                ObservationSource::MaskDir(dir) => extract_directory(dir, &cfg.extraction)?,
                ObservationSource::Scenario(_) => unreachable!(),
            };
            let initial = settings.init.pose.expect("validated");
            (map, odometry, observations, initial, None)
        }
    };
    let output = run(&map, &odometry, &observations, settings, &initial)?;
    create_dir(out)?;
    write_file(&out.join("trajectory.csv"), |w| write_trajectory(w, &output.trajectory))?;
    write_file(&out.join("frames.jsonl"), |w| {
        for r in &output.records {
            serde_json::to_writer(&mut *w, r)?;
            writeln!(w)?;
        }
        Ok(())
    })?;
    if let Some(truth) = truth {
        write_file(&out.join("truth.csv"), |w| write_truth(w, &truth))?;
    }
    Ok(output)
}

/// Writes `out/observations.csv` from every mask of `mask_dir`.
pub fn cmd_extract(mask_dir: &Path, params: &crate::extraction::ExtractionParams, out: &Path) -> Result<()> {
    let frames = extract_directory(mask_dir, params)?;
    create_dir(out)?;
    write_file(&out.join("observations.csv"), |w| write_observations(w, &frames))
}

/// Computes the metrics and, with `out`, writes metrics.json and errors.csv.
pub fn cmd_evaluate(estimate: &Path, truth: &Path, out: Option<&Path>) -> Result<MetricsReport> {
    let est = load_poses(estimate)?;
    let tru = load_poses(truth)?;
    let report = compute_metrics(&est, &tru)?;
    if let Some(out) = out {
        create_dir(out)?;
        write_file(&out.join("metrics.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, &report)?;
            writeln!(w)
        })?;
        let errors = frame_errors(&est, &tru)?;
        write_file(&out.join("errors.csv"), |w| write_frame_errors(w, &errors))?;
    }
    Ok(report)
}

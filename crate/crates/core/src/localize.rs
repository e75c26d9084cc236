//! Frame loop: coarse particle-filter estimate, then pose alignment.

use serde::Serialize;

use crate::alignment::{
    accurate_resample, align_pose, pose_log_weight, resample_spread, AlignmentStatus, MatchedPair,
};
use crate::config::{LocalizerSettings, SpreadCap};
use crate::error::{Error, Result};
use crate::extraction::Observation;
use crate::filter::{
    best_particle, effective_particle_count, estimate_state, initialize_particles, maybe_resample,
    measurement_update, motion_update, particle_weights, MeasurementModel, Odometry, Particle,
};
use crate::io::{EstimateMode, OdometryRow};
use crate::map::{CompactMap, Pose2};
use crate::rng::{domain, SeedStream};

/// Alignment diagnostics for one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentRecord {
    pub status: AlignmentStatus,
    pub matched: usize,
    pub triples_tried: usize,
    pub candidates: usize,
    pub coarse_log_weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_log_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_distance_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_trans_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_rot_rad: Option<f64>,
}

/// One line of the per-frame log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub mode: EstimateMode,
    pub observations: usize,
    pub n_eff: f64,
    pub resampled: bool,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentRecord>,
}

/// Weighted per-axis translation spread and circular heading spread.
pub fn ensemble_spread(particles: &[Particle]) -> (f64, f64) {
    let mean = estimate_state(particles);
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    let (mut sq, mut s, mut c) = (0.0, 0.0, 0.0);
    for p in particles {
        let d = p.pose.position().distance(&mean.position());
        sq += p.weight * d * d;
        s += p.weight * p.pose.heading().sin();
        c += p.weight * p.pose.heading().cos();
    }
    let resultant = (s.hypot(c) / total).min(1.0);
    let sigma_rot = if resultant > 0.0 { (-2.0 * resultant.ln()).sqrt() } else { f64::INFINITY };
    ((0.5 * sq / total).sqrt(), sigma_rot)
}

pub struct Localizer<'a> {
    map: &'a CompactMap,
    settings: &'a LocalizerSettings,
    particles: Vec<Particle>,
    seeds: SeedStream,
    frame: usize,
}

impl<'a> Localizer<'a> {
    pub fn new(map: &'a CompactMap, settings: &'a LocalizerSettings, initial: &Pose2) -> Result<Self> {
        settings.validate()?;
        let seeds = SeedStream::new(settings.seed);
        let particles = initialize_particles(
            initial,
            settings.init.sigma_trans,
            settings.init.sigma_rot,
            settings.particles,
            &seeds,
        )?;
        Ok(Self { map, settings, particles, seeds, frame: 0 })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    /// Processes one frame. `odometry` is the motion since the previous
    /// frame and is ignored on the first one.
    pub fn step(&mut self, odometry: Option<&Odometry>, observations: &[Observation]) -> (Pose2, FrameRecord) {
        let s = self.settings;
        let k = self.frame as u64;
        if let (Some(odo), true) = (odometry, self.frame > 0) {
            motion_update(&mut self.particles, odo, &s.motion_noise, &self.seeds, k);
        }

        let model = MeasurementModel {
            map: self.map,
            intrinsics: &s.intrinsics,
            weights: &s.weights,
            gate_px: s.gate_px,
            max_range: s.max_range,
        };
        let outcome = measurement_update(&mut self.particles, observations, &model);
        let best = best_particle(&self.particles).expect("at least one particle");
        let best_mapping = outcome.evaluations[best].assignment.mapping.clone();

        let n_eff = effective_particle_count(particle_weights(&self.particles));
        let resampled = maybe_resample(
            &mut self.particles,
            s.p0,
            &mut self.seeds.stream(domain::RESAMPLE, k, 0),
        );
        let coarse = estimate_state(&self.particles);

        let mut record = FrameRecord {
            frame: self.frame,
            mode: EstimateMode::Coarse,
            observations: observations.len(),
            n_eff,
            resampled,
            diverged: outcome.diverged,
            alignment: None,
        };
        let mut estimate = coarse;
        if s.alignment_enabled && self.frame % s.alignment_every == 0 {
            let pairs: Vec<MatchedPair> = observations
                .iter()
                .zip(&best_mapping)
                .filter_map(|(obs, id)| {
                    let pole = *self.map.get((*id)?)?;
                    Some(MatchedPair { observation: *obs, pole })
                })
                .collect();
            let unmatched = observations.len() - pairs.len();
            let coarse_log_weight = pose_log_weight(&coarse, &pairs, unmatched, &s.intrinsics, &s.weights);
            let result = align_pose(&coarse, coarse_log_weight, &pairs, unmatched, &s.intrinsics, &s.weights, &s.align);
            let best_candidate = result.candidates.first();
            let mut rec = AlignmentRecord {
                status: result.status,
                matched: pairs.len(),
                triples_tried: result.triples_tried,
                candidates: result.candidates.len(),
                coarse_log_weight,
                best_log_weight: best_candidate.map(|c| c.log_weight),
                best_distance_m: best_candidate.map(|c| c.distance),
                normalized_weight: None,
                sigma_trans_m: None,
                sigma_rot_rad: None,
            };
            if let Some(aligned) = result.aligned {
                let (mut sigma_t, mut sigma_r) = resample_spread(aligned.normalized_weight, &s.align);
                if s.spread_cap == SpreadCap::Ensemble {
                    let (cap_t, cap_r) = ensemble_spread(&self.particles);
                    sigma_t = sigma_t.min(cap_t);
                    sigma_r = sigma_r.min(cap_r);
                }
                accurate_resample(
                    &mut self.particles,
                    &aligned.pose,
                    sigma_t,
                    sigma_r,
                    &mut self.seeds.stream(domain::ACCURATE_RESAMPLE, k, 0),
                );
                rec.normalized_weight = Some(aligned.normalized_weight);
                rec.sigma_trans_m = Some(sigma_t);
                rec.sigma_rot_rad = Some(sigma_r);
                record.mode = EstimateMode::Aligned;
                estimate = aligned.pose;
            }
            record.alignment = Some(rec);
        }
        self.frame += 1;
        (estimate, record)
    }
}

/// Result of a whole run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Vec<(Pose2, EstimateMode)>,
    pub records: Vec<FrameRecord>,
}

impl RunOutput {
    pub fn diverged(&self) -> bool {
        self.records.iter().any(|r| r.diverged)
    }

    pub fn poses(&self) -> Vec<Pose2> {
        self.trajectory.iter().map(|(p, _)| *p).collect()
    }
}

/// Converts odometry rows into per-frame motion (entry 0 is `None`).
pub fn frame_odometry(rows: &[OdometryRow]) -> Result<Vec<Option<Odometry>>> {
    let mut out = Vec::with_capacity(rows.len());
    out.push(None);
    for (k, w) in rows.windows(2).enumerate() {
        let odo = Odometry::new(w[1].v, w[1].omega, w[1].t - w[0].t)
            .map_err(|e| Error::Inconsistent(format!("odometry row {}: {e}", k + 1)))?;
        out.push(Some(odo));
    }
    Ok(out)
}

/// Runs the localizer over every frame. The odometry defines the frame
/// count; observation frames beyond it are an error, missing trailing frames
/// are empty.
pub fn run(
    map: &CompactMap,
    odometry: &[OdometryRow],
    observations: &[Vec<Observation>],
    settings: &LocalizerSettings,
    initial: &Pose2,
) -> Result<RunOutput> {
    if odometry.is_empty() {
        return Err(Error::Inconsistent("odometry has no rows".into()));
    }
    if observations.len() > odometry.len() {
        return Err(Error::Inconsistent(format!(
            "observations reference frame {} but odometry has only {} frames",
            observations.len() - 1,
            odometry.len()
        )));
    }
    let motion = frame_odometry(odometry)?;
    let mut localizer = Localizer::new(map, settings, initial)?;
    let empty = Vec::new();
    let mut out = RunOutput { trajectory: Vec::with_capacity(motion.len()), records: Vec::with_capacity(motion.len()) };
    for (k, odo) in motion.iter().enumerate() {
        let obs = observations.get(k).unwrap_or(&empty);
        let (pose, record) = localizer.step(odo.as_ref(), obs);
        if record.diverged {
            log::warn!("frame {k}: filter diverged");
        }
        out.trajectory.push((pose, record.mode));
        out.records.push(record);
    }
    Ok(out)
}

//! Particle filter over planar poses: odometry motion update, association of
//! observed columns with projected poles, Poisson-clutter likelihood weighting,
//! `N_eff`-gated systematic resampling and weighted-mean state estimation.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::Observation;
use crate::lap;
use crate::map::{normalize_angle, visible_projections, CameraIntrinsics, CompactMap, Pose2, Projection};
use crate::rng::{domain, SeedStream};

/// Below this angular rate the motion update uses the straight-line limit.
pub const STRAIGHT_LINE_OMEGA: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: Pose2,
    pub weight: f64,
}

impl Particle {
    pub fn new(pose: Pose2, weight: f64) -> Self {
        Self { pose, weight }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Odometry {
    pub v: f64,
    pub omega: f64,
    pub dt: f64,
}

impl Odometry {
    pub fn new(v: f64, omega: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!("odometry dt must be > 0, got {dt}")));
        }
        if !(v.is_finite() && omega.is_finite()) {
            return Err(Error::InvalidParameter("odometry v and omega must be finite".into()));
        }
        Ok(Self { v, omega, dt })
    }
}

/// Velocity motion-model noise. Standard deviations are mixed from `|v|` and
/// `|ω|`: `σ_v = α1|v| + α2|ω|`, `σ_ω = α3|v| + α4|ω|`, and the final extra
/// rotation `σ_γ = α5|v| + α6|ω|`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionNoise {
    pub alpha: [f64; 6],
}

impl MotionNoise {
    pub const fn zero() -> Self {
        Self { alpha: [0.0; 6] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidParameter("motion noise coefficients must be >= 0".into()));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.alpha.iter().all(|a| *a == 0.0)
    }

    /// Draws `(v̂, ω̂, γ̂)` for the commanded `(v, ω)`.
    pub fn sample<R: Rng + ?Sized>(&self, v: f64, omega: f64, rng: &mut R) -> (f64, f64, f64) {
        let [a1, a2, a3, a4, a5, a6] = self.alpha;
        let (av, aw) = (v.abs(), omega.abs());
        let mut eps = |sigma: f64| -> f64 {
            if sigma > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            } else {
                0.0
            }
        };
        let v_hat = v + eps(a1 * av + a2 * aw);
        let omega_hat = omega + eps(a3 * av + a4 * aw);
        let gamma_hat = eps(a5 * av + a6 * aw);
        (v_hat, omega_hat, gamma_hat)
    }
}

/// Advances a pose along the arc described by `(v, ω)` for `dt`, then applies
/// the extra rotation `γ dt`.
pub fn integrate_motion(pose: &Pose2, v: f64, omega: f64, gamma: f64, dt: f64) -> Pose2 {
    let psi = pose.heading();
    let (de, dn) = if omega.abs() < STRAIGHT_LINE_OMEGA {
        (-v * dt * psi.sin(), v * dt * psi.cos())
    } else {
        // sum-to-product form; stays accurate as omega -> 0
        let half = 0.5 * omega * dt;
        let chord = v * dt * half.sin() / half;
        let mid = psi + half;
        (-chord * mid.sin(), chord * mid.cos())
    };
    Pose2::new(pose.east + de, pose.north + dn, psi + omega * dt + gamma * dt)
}

/// Motion update. Particle `i` draws its noise from stream `(step, i)` of
/// `seeds`, so the result is independent of scheduling.
pub fn motion_update(
    particles: &mut [Particle],
    odo: &Odometry,
    noise: &MotionNoise,
    seeds: &SeedStream,
    step: u64,
) {
    particles.par_iter_mut().enumerate().for_each(|(i, p)| {
        let mut rng = seeds.stream(domain::MOTION, step, i as u64);
        let (v, omega, gamma) = noise.sample(odo.v, odo.omega, &mut rng);
        p.pose = integrate_motion(&p.pose, v, omega, gamma, odo.dt);
    });
}

/// Injective observation → pole mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Pole id per observation, `None` when the observation is clutter.
    pub mapping: Vec<Option<u32>>,
    /// Sum of `|u_obs - u_proj|` over matched observations.
    pub total_loss: f64,
    /// Minimized objective: `total_loss` plus `gate_px` per unmatched observation.
    pub objective: f64,
}

impl Assignment {
    pub fn matched_count(&self) -> usize {
        self.mapping.iter().filter(|m| m.is_some()).count()
    }
}

/// Optimal association as indices into `projections`.
///
/// Pairs with different labels or a column gap above `gate_px` are forbidden;
/// every observation can instead fall back to "unmatched" at cost `gate_px`.
pub fn associate_indices(
    observations: &[Observation],
    projections: &[Projection],
    gate_px: f64,
) -> Vec<Option<usize>> {
    let n = observations.len();
    let m = projections.len();
    if n == 0 {
        return Vec::new();
    }
    let cols = m + n;
    let mut cost = vec![f64::INFINITY; n * cols];
    let mut any_feasible = false;
    for (i, obs) in observations.iter().enumerate() {
        let row = &mut cost[i * cols..(i + 1) * cols];
        for (k, proj) in projections.iter().enumerate() {
            let e = (obs.u - proj.u).abs();
            if obs.label == proj.label && e <= gate_px {
                row[k] = e;
                any_feasible = true;
            }
        }
        row[m + i] = gate_px;
    }
    if !any_feasible {
        return vec![None; n];
    }
    lap::solve(&cost, n, cols)
        .into_iter()
        .map(|j| (j < m).then_some(j))
        .collect()
}

pub fn associate(observations: &[Observation], projections: &[Projection], gate_px: f64) -> Assignment {
    let indices = associate_indices(observations, projections, gate_px);
    assignment_from_indices(observations, projections, &indices, gate_px)
}

fn assignment_from_indices(
    observations: &[Observation],
    projections: &[Projection],
    indices: &[Option<usize>],
    gate_px: f64,
) -> Assignment {
    let mut total_loss = 0.0;
    let mut unmatched = 0usize;
    let mapping = indices
        .iter()
        .zip(observations)
        .map(|(k, obs)| match k {
            Some(k) => {
                total_loss += (obs.u - projections[*k].u).abs();
                Some(projections[*k].pole_id)
            }
            None => {
                unmatched += 1;
                None
            }
        })
        .collect();
    Assignment {
        mapping,
        total_loss,
        objective: total_loss + gate_px * unmatched as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    /// Detection probability of a pole in view.
    pub p_d: f64,
    /// Clutter intensity per image column.
    pub kappa: f64,
    /// Observation standard deviation in pixels.
    pub sigma_px: f64,
    /// Range at which the distance factor equals one.
    pub beta_ref: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            p_d: 0.9,
            kappa: 0.01,
            sigma_px: 2.0,
            beta_ref: 20.0,
        }
    }
}

impl WeightParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_d > 0.0 && self.p_d < 1.0) {
            return Err(Error::InvalidParameter(format!("p_d must be in (0, 1), got {}", self.p_d)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParameter("kappa must be > 0".into()));
        }
        if !(self.sigma_px > 0.0 && self.sigma_px.is_finite()) {
            return Err(Error::InvalidParameter("sigma_px must be > 0".into()));
        }
        if !(self.beta_ref > 0.0 && self.beta_ref.is_finite()) {
            return Err(Error::InvalidParameter("beta_ref must be > 0".into()));
        }
        Ok(())
    }
}

/// Natural log of [`observation_likelihood`]; never underflows.
pub fn log_observation_likelihood(obs: &Observation, matched: Option<&Projection>, params: &WeightParams) -> f64 {
    match matched {
        Some(proj) => {
            let e = obs.u - proj.u;
            let beta_s = proj.range / params.beta_ref;
            let d = beta_s * e * e / (params.sigma_px * params.sigma_px);
            (params.p_d / params.kappa).ln() - 0.5 * d
        }
        None => (1.0 - params.p_d).ln(),
    }
}

/// Per-observation likelihood: `(p_d / κ) exp(-d/2)` with
/// `d = (range / beta_ref) e² / σ²` for a matched observation, `1 - p_d` for
/// clutter.
pub fn observation_likelihood(obs: &Observation, matched: Option<&Projection>, params: &WeightParams) -> f64 {
    log_observation_likelihood(obs, matched, params).exp()
}

/// Everything the measurement model needs besides the particle pose.
#[derive(Debug, Clone, Copy)]
pub struct MeasurementModel<'a> {
    pub map: &'a CompactMap,
    pub intrinsics: &'a CameraIntrinsics,
    pub weights: &'a WeightParams,
    pub gate_px: f64,
    pub max_range: f64,
}

/// Association and log-likelihood of one frame seen from `pose`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEvaluation {
    pub assignment: Assignment,
    pub log_likelihood: f64,
}

impl MeasurementModel<'_> {
    pub fn evaluate(&self, pose: &Pose2, observations: &[Observation]) -> PoseEvaluation {
        let projections = visible_projections(pose, self.intrinsics, self.map, self.max_range);
        let indices = associate_indices(observations, &projections, self.gate_px);
        let log_likelihood = observations
            .iter()
            .zip(&indices)
            .map(|(obs, k)| log_observation_likelihood(obs, k.map(|k| &projections[k]), self.weights))
            .sum();
        PoseEvaluation {
            assignment: assignment_from_indices(observations, &projections, &indices, self.gate_px),
            log_likelihood,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeasurementOutcome {
    /// Association of every particle, in particle order.
    pub evaluations: Vec<PoseEvaluation>,
    /// All particles received zero weight; weights were reset to uniform.
    pub diverged: bool,
}

/// Reweights every particle by the product of its observation likelihoods
/// and normalizes the ensemble. Products are accumulated in log space.
pub fn measurement_update(
    particles: &mut [Particle],
    observations: &[Observation],
    model: &MeasurementModel<'_>,
) -> MeasurementOutcome {
    let evaluations: Vec<PoseEvaluation> = particles
        .par_iter()
        .map(|p| model.evaluate(&p.pose, observations))
        .collect();
    let log_weights: Vec<f64> = particles
        .iter()
        .zip(&evaluations)
        .map(|(p, e)| p.weight.ln() + e.log_likelihood)
        .collect();
    let diverged = !normalize_log_weights(particles, &log_weights);
    if diverged {
        log::warn!("all particles received zero weight; resetting to uniform");
        let w = 1.0 / particles.len() as f64;
        particles.iter_mut().for_each(|p| p.weight = w);
    }
    MeasurementOutcome { evaluations, diverged }
}

/// Writes `exp(log_w) / Σ exp(log_w)` into the particle weights. Returns false
/// when no particle has positive weight.
fn normalize_log_weights(particles: &mut [Particle], log_weights: &[f64]) -> bool {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return false;
    }
    let mut sum = 0.0;
    for (p, lw) in particles.iter_mut().zip(log_weights) {
        p.weight = (lw - max).exp();
        sum += p.weight;
    }
    particles.iter_mut().for_each(|p| p.weight /= sum);
    true
}

pub fn effective_particle_count(weights: impl IntoIterator<Item = f64>) -> f64 {
    1.0 / weights.into_iter().map(|w| w * w).sum::<f64>()
}

pub fn particle_weights(particles: &[Particle]) -> impl Iterator<Item = f64> + '_ {
    particles.iter().map(|p| p.weight)
}

/// Low-variance (systematic) resampling to the same number of equally
/// weighted particles.
pub fn systematic_resample<R: Rng + ?Sized>(particles: &[Particle], rng: &mut R) -> Vec<Particle> {
    let n = particles.len();
    if n == 0 {
        return Vec::new();
    }
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    let step = total / n as f64;
    let start = rng.random::<f64>() * step;
    let w = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cumulative = particles[0].weight;
    let mut i = 0;
    for k in 0..n {
        let target = start + k as f64 * step;
        while target >= cumulative && i + 1 < n {
            i += 1;
            cumulative += particles[i].weight;
        }
        out.push(Particle::new(particles[i].pose, w));
    }
    out
}

/// Resamples when `N_eff / N < p0`. Returns whether resampling happened.
pub fn maybe_resample<R: Rng + ?Sized>(particles: &mut Vec<Particle>, p0: f64, rng: &mut R) -> bool {
    let n = particles.len() as f64;
    let ratio = effective_particle_count(particle_weights(particles)) / n;
    if ratio < p0 {
        *particles = systematic_resample(particles, rng);
        true
    } else {
        false
    }
}

/// Weighted mean position and circular weighted mean heading.
pub fn estimate_state(particles: &[Particle]) -> Pose2 {
    let (mut e, mut n, mut s, mut c, mut total) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in particles {
        e += p.weight * p.pose.east;
        n += p.weight * p.pose.north;
        s += p.weight * p.pose.heading().sin();
        c += p.weight * p.pose.heading().cos();
        total += p.weight;
    }
    let heading = if s.hypot(c) > 1e-12 * total {
        s.atan2(c)
    } else {
        best_particle(particles).map_or(0.0, |i| particles[i].pose.heading())
    };
    Pose2::new(e / total, n / total, heading)
}

/// Index of the highest-weight particle (first one on ties).
pub fn best_particle(particles: &[Particle]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in particles.iter().enumerate() {
        if best.is_none_or(|b| p.weight > particles[b].weight) {
            best = Some(i);
        }
    }
    best
}

/// Initial ensemble drawn from a Gaussian prior around `mean`.
pub fn initialize_particles(
    mean: &Pose2,
    sigma_trans: f64,
    sigma_rot: f64,
    count: usize,
    seeds: &SeedStream,
) -> Result<Vec<Particle>> {
    if count == 0 {
        return Err(Error::InvalidParameter("particle count must be >= 1".into()));
    }
    let trans = Normal::new(0.0, sigma_trans)
        .map_err(|_| Error::InvalidParameter("init_sigma_trans_m must be >= 0".into()))?;
    let rot = Normal::new(0.0, sigma_rot)
        .map_err(|_| Error::InvalidParameter("init_sigma_rot_rad must be >= 0".into()))?;
    let w = 1.0 / count as f64;
    Ok((0..count)
        .map(|i| {
            let mut rng = seeds.stream(domain::INIT, 0, i as u64);
            let pose = Pose2::new(
                mean.east + trans.sample(&mut rng),
                mean.north + trans.sample(&mut rng),
                normalize_angle(mean.heading() + rot.sample(&mut rng)),
            );
            Particle::new(pose, w)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{Pole, SemanticLabel};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn obs(u: f64) -> Observation {
        Observation::new(u, SemanticLabel::Pole)
    }

    fn proj(id: u32, u: f64) -> Projection {
        Projection {
            pole_id: id,
            u,
            range: 20.0,
            label: SemanticLabel::Pole,
        }
    }

    fn single(pose: Pose2) -> Vec<Particle> {
        vec![Particle::new(pose, 1.0)]
    }

    #[test]
    fn straight_line_motion() {
        let mut p = single(Pose2::new(0.0, 0.0, 0.0));
        motion_update(&mut p, &Odometry::new(1.0, 0.0, 1.0).unwrap(), &MotionNoise::zero(), &SeedStream::new(1), 0);
        assert_eq!(p[0].pose, Pose2::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn quarter_circle_motion() {
        let mut p = single(Pose2::new(0.0, 0.0, 0.0));
        let odo = Odometry::new(PI / 2.0, PI / 2.0, 1.0).unwrap();
        motion_update(&mut p, &odo, &MotionNoise::zero(), &SeedStream::new(1), 0);
        let pose = p[0].pose;
        assert!((pose.east + 1.0).abs() < 1e-12);
        assert!((pose.north - 1.0).abs() < 1e-12);
        assert!((pose.heading() - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_motion_is_identity() {
        let start = Pose2::new(3.0, -2.0, 1.0);
        let mut p = single(start);
        motion_update(&mut p, &Odometry::new(0.0, 0.0, 0.5).unwrap(), &MotionNoise::zero(), &SeedStream::new(1), 0);
        assert_eq!(p[0].pose, start);
        assert_eq!(p[0].weight, 1.0);
    }

    #[test]
    fn noisy_motion_is_schedule_independent() {
        let noise = MotionNoise { alpha: [0.1, 0.01, 0.01, 0.1, 0.01, 0.01] };
        let odo = Odometry::new(5.0, 0.2, 0.1).unwrap();
        let mut a: Vec<Particle> = (0..64).map(|_| Particle::new(Pose2::new(0.0, 0.0, 0.0), 1.0 / 64.0)).collect();
        let mut b = a.clone();
        motion_update(&mut a, &odo, &noise, &SeedStream::new(9), 3);
        for (i, p) in b.iter_mut().enumerate() {
            let mut rng = SeedStream::new(9).stream(domain::MOTION, 3, i as u64);
            let (v, w, g) = noise.sample(odo.v, odo.omega, &mut rng);
            p.pose = integrate_motion(&Pose2::new(0.0, 0.0, 0.0), v, w, g, odo.dt);
        }
        assert_eq!(a, b);
        assert!(a.windows(2).any(|w| w[0].pose != w[1].pose));
    }

    #[test]
    fn odometry_validation() {
        assert!(Odometry::new(1.0, 0.0, 0.0).is_err());
        assert!(Odometry::new(f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn associate_unique_nearest() {
        let a = associate(&[obs(100.0), obs(300.0)], &[proj(1, 105.0), proj(2, 295.0)], 50.0);
        assert_eq!(a.mapping, vec![Some(1), Some(2)]);
        assert_eq!(a.total_loss, 10.0);
    }

    #[test]
    fn associate_gates_out() {
        let a = associate(&[obs(100.0)], &[proj(1, 400.0)], 50.0);
        assert_eq!(a.mapping, vec![None]);
        assert_eq!(a.total_loss, 0.0);
        assert_eq!(a.objective, 50.0);
    }

    #[test]
    fn associate_requires_label_match() {
        let lamp = Observation::new(100.0, SemanticLabel::Lamp);
        let a = associate(&[lamp], &[proj(1, 100.0)], 50.0);
        assert_eq!(a.mapping, vec![None]);
    }

    #[test]
    fn associate_is_injective_under_competition() {
        // both observations prefer pole 1; the optimum gives it to the closer one
        let a = associate(&[obs(100.0), obs(103.0)], &[proj(1, 104.0), proj(2, 90.0)], 50.0);
        assert_eq!(a.mapping, vec![Some(2), Some(1)]);
        assert_eq!(a.total_loss, 11.0);
    }

    #[test]
    fn likelihood_values() {
        let params = WeightParams::default();
        let o = obs(100.0);
        assert!((observation_likelihood(&o, None, &params) - 0.1).abs() < 1e-15);
        assert!((observation_likelihood(&o, Some(&proj(1, 100.0)), &params) - 90.0).abs() < 1e-12);
        let l = observation_likelihood(&o, Some(&proj(1, 102.0)), &params);
        assert!((l - 90.0 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((l - 54.59).abs() < 5e-3);
    }

    #[test]
    fn measurement_update_without_observations_keeps_weights() {
        let map = CompactMap::new(vec![Pole::new(1, 0.0, 10.0, SemanticLabel::Pole)]).unwrap();
        let intr = CameraIntrinsics::default();
        let weights = WeightParams::default();
        let model = MeasurementModel { map: &map, intrinsics: &intr, weights: &weights, gate_px: 40.0, max_range: 80.0 };
        let mut ps = vec![
            Particle::new(Pose2::new(0.0, 0.0, 0.0), 0.2),
            Particle::new(Pose2::new(1.0, 0.0, 0.0), 0.6),
        ];
        let out = measurement_update(&mut ps, &[], &model);
        assert!(!out.diverged);
        assert!((ps[0].weight - 0.25).abs() < 1e-15);
        assert!((ps[1].weight - 0.75).abs() < 1e-15);

        let mut one = single(Pose2::new(0.0, 0.0, 0.0));
        one[0].weight = 0.3;
        measurement_update(&mut one, &[obs(320.0)], &model);
        assert_eq!(one[0].weight, 1.0);
    }

    #[test]
    fn measurement_update_flags_divergence() {
        let map = CompactMap::default();
        let intr = CameraIntrinsics::default();
        let weights = WeightParams::default();
        let model = MeasurementModel { map: &map, intrinsics: &intr, weights: &weights, gate_px: 40.0, max_range: 80.0 };
        let mut ps = vec![Particle::new(Pose2::new(0.0, 0.0, 0.0), 0.0); 4];
        let out = measurement_update(&mut ps, &[obs(1.0)], &model);
        assert!(out.diverged);
        assert!(ps.iter().all(|p| p.weight == 0.25));
    }

    #[test]
    fn n_eff_examples() {
        assert!((effective_particle_count(vec![0.01; 100]) - 100.0).abs() < 1e-9);
        assert_eq!(effective_particle_count([1.0, 0.0, 0.0, 0.0]), 1.0);
        assert_eq!(effective_particle_count([0.5, 0.5, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn resample_gating() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut uniform: Vec<Particle> = (0..10)
            .map(|i| Particle::new(Pose2::new(i as f64, 0.0, 0.0), 0.1))
            .collect();
        let before = uniform.clone();
        assert!(!maybe_resample(&mut uniform, 0.6, &mut rng));
        assert_eq!(uniform, before);

        let mut point: Vec<Particle> = (0..100)
            .map(|i| Particle::new(Pose2::new(i as f64, 0.0, 0.0), if i == 37 { 1.0 } else { 0.0 }))
            .collect();
        assert!(maybe_resample(&mut point, 0.6, &mut rng));
        assert_eq!(point.len(), 100);
        assert!(point.iter().all(|p| p.pose.east == 37.0 && p.weight == 0.01));
    }

    #[test]
    fn estimate_state_examples() {
        let ps = [
            Particle::new(Pose2::new(0.0, 0.0, 0.0), 0.25),
            Particle::new(Pose2::new(2.0, 0.0, 0.0), 0.75),
        ];
        assert_eq!(estimate_state(&ps).east, 1.5);

        let wrap = [
            Particle::new(Pose2::new(0.0, 0.0, PI - 0.1), 0.5),
            Particle::new(Pose2::new(0.0, 0.0, -PI + 0.1), 0.5),
        ];
        assert!((estimate_state(&wrap).heading().abs() - PI).abs() < 1e-12);

        let p = Pose2::new(4.0, 5.0, 0.3);
        assert_eq!(estimate_state(&[Particle::new(p, 1.0)]), p);
    }

    #[test]
    fn estimate_state_falls_back_on_cancelling_headings() {
        let ps = [
            Particle::new(Pose2::new(0.0, 0.0, 0.5), 0.5),
            Particle::new(Pose2::new(0.0, 0.0, 0.5 - PI), 0.5),
        ];
        assert_eq!(estimate_state(&ps).heading(), 0.5);
    }

    #[test]
    fn initialization_is_reproducible() {
        let mean = Pose2::new(1.0, 2.0, 0.5);
        let a = initialize_particles(&mean, 1.0, 0.1, 50, &SeedStream::new(3)).unwrap();
        let b = initialize_particles(&mean, 1.0, 0.1, 50, &SeedStream::new(3)).unwrap();
        assert_eq!(a, b);
        assert!(initialize_particles(&mean, 1.0, 0.1, 0, &SeedStream::new(3)).is_err());
        let exact = initialize_particles(&mean, 0.0, 0.0, 3, &SeedStream::new(3)).unwrap();
        assert!(exact.iter().all(|p| p.pose == mean));
    }

    fn weights_strategy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 1..60).prop_filter_map("nonzero", |w| {
            let s: f64 = w.iter().sum();
            (s > 0.0).then(|| w.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn n_eff_is_bounded(w in weights_strategy()) {
            let n = w.len() as f64;
            let neff = effective_particle_count(w);
            prop_assert!(neff >= 1.0 - 1e-9 && neff <= n + 1e-9);
        }

        #[test]
        fn resampling_preserves_count_and_support(w in weights_strategy(), seed in any::<u64>()) {
            let ps: Vec<Particle> = w.iter().enumerate()
                .map(|(i, &w)| Particle::new(Pose2::new(i as f64, 0.0, 0.0), w))
                .collect();
            let out = systematic_resample(&ps, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(out.len(), ps.len());
            for p in &out {
                let src = p.pose.east as usize;
                prop_assert!(ps[src].weight > 0.0);
            }
        }

        #[test]
        fn likelihood_is_monotone(e1 in 0.0f64..30.0, de in 0.01f64..10.0, r in 1.0f64..80.0, dr in 0.1f64..20.0) {
            let params = WeightParams::default();
            let o = obs(300.0);
            let near = Projection { pole_id: 0, u: 300.0 + e1, range: r, label: SemanticLabel::Pole };
            let far_e = Projection { u: 300.0 + e1 + de, ..near };
            prop_assert!(log_observation_likelihood(&o, Some(&near), &params)
                > log_observation_likelihood(&o, Some(&far_e), &params));
            if e1 > 0.01 {
                let far_r = Projection { range: r + dr, ..near };
                prop_assert!(log_observation_likelihood(&o, Some(&near), &params)
                    > log_observation_likelihood(&o, Some(&far_r), &params));
            }
        }

        #[test]
        fn weights_normalized_after_update(seed in any::<u64>(), n in 1usize..40) {
            let map = CompactMap::new(vec![
                Pole::new(1, -3.0, 15.0, SemanticLabel::Pole),
                Pole::new(2, 4.0, 25.0, SemanticLabel::Lamp),
            ]).unwrap();
            let intr = CameraIntrinsics::default();
            let weights = WeightParams::default();
            let model = MeasurementModel { map: &map, intrinsics: &intr, weights: &weights, gate_px: 40.0, max_range: 80.0 };
            let mut ps = initialize_particles(&Pose2::new(0.0, 0.0, 0.0), 2.0, 0.1, n, &SeedStream::new(seed)).unwrap();
            measurement_update(&mut ps, &[obs(240.0), Observation::new(384.0, SemanticLabel::Lamp)], &model);
            let sum: f64 = ps.iter().map(|p| p.weight).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn arc_branch_is_continuous(psi in -PI..PI, v in -10.0f64..10.0, dt in 0.01f64..1.0) {
            let start = Pose2::new(1.0, 2.0, psi);
            let arc = integrate_motion(&start, v, 1e-8, 0.0, dt);
            let line = integrate_motion(&start, v, 0.0, 0.0, dt);
            prop_assert!(arc.position().distance(&line.position()) < 1e-6);
        }
    }
}

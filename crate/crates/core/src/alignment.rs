//! Fine pose alignment.
//!
//! The camera works as a protractor: the column gap between two associated
//! poles gives the angle they subtend, which pins the camera to a circle
//! through both poles (inscribed angle theorem). Two such circles over a
//! triple of poles share the middle pole and the camera, so the camera is the
//! mirror image of the middle pole across the line of centres. Translation is
//! therefore found without touching the heading; the heading is refined
//! afterwards by a one-parameter Gauss-Newton on the column residuals.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::Observation;
use crate::filter::{log_observation_likelihood, Particle, WeightParams};
use crate::map::{normalize_angle, project_pole, CameraIntrinsics, Point2, Pole, Pose2};

/// Bearings recomputed from a recovered camera position must agree with the
/// measured angles to this tolerance.
const BEARING_TOLERANCE: f64 = 1e-6;
/// Relative tolerance below which two circles are treated as identical or
/// tangent.
const DEGENERATE_TOLERANCE: f64 = 1e-6;
const MAX_STEP_HALVINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point2,
    pub radius: f64,
}

/// Which side of the directed chord `La -> Lb` the circle centre lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChordSide {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignParams {
    /// Maximum distance between the aligned and the coarse pose.
    pub d0: f64,
    pub beta_t: f64,
    pub beta_theta: f64,
    /// Triples whose subtended angles fall below this are skipped.
    pub min_triple_angle: f64,
    pub gn_max_iters: usize,
    pub gn_tol: f64,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            d0: 1.0,
            beta_t: 1000.0,
            beta_theta: 200.0,
            min_triple_angle: 0.05,
            gn_max_iters: 20,
            gn_tol: 1e-9,
        }
    }
}

impl AlignParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d0", self.d0),
            ("beta_t", self.beta_t),
            ("beta_theta", self.beta_theta),
            ("min_triple_angle", self.min_triple_angle),
            ("gn_tol", self.gn_tol),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {value}")));
            }
        }
        if self.gn_max_iters == 0 {
            return Err(Error::InvalidParameter("gn_max_iters must be > 0".into()));
        }
        Ok(())
    }
}

/// Angle subtended at the camera by columns `u1 > u2`.
pub fn horizontal_angle(u1: f64, u2: f64, intr: &CameraIntrinsics) -> Result<f64> {
    if !(u1 > u2) {
        return Err(Error::InvalidParameter(format!(
            "horizontal angle needs u1 > u2, got u1={u1}, u2={u2}"
        )));
    }
    Ok(signed_horizontal_angle(u1, u2, intr))
}

/// `atan((u1 - cx)/fx) - atan((u2 - cx)/fx)` without the ordering check.
pub fn signed_horizontal_angle(u1: f64, u2: f64, intr: &CameraIntrinsics) -> f64 {
    intr.column_bearing(u1) - intr.column_bearing(u2)
}

/// One of the two circles through `la` and `lb` on which the chord subtends
/// the inscribed angle `theta`.
pub fn circumscribed_circle(la: Point2, lb: Point2, theta: f64, side: ChordSide) -> Result<Circle> {
    if !(theta > 0.0 && theta < std::f64::consts::PI) {
        return Err(Error::InvalidParameter(format!("inscribed angle {theta} outside (0, π)")));
    }
    let (dx, dy) = (lb.east - la.east, lb.north - la.north);
    let chord = dx.hypot(dy);
    if !(chord > 0.0 && chord.is_finite()) {
        return Err(Error::InvalidParameter("degenerate chord".into()));
    }
    let radius = chord / (2.0 * theta.sin());
    // distance from the chord midpoint to the centre, sqrt(r² - c²/4)
    let offset = 0.5 * chord * (theta.cos() / theta.sin()).abs();
    let (nx, ny) = match side {
        ChordSide::Left => (-dy / chord, dx / chord),
        ChordSide::Right => (dy / chord, -dx / chord),
    };
    Ok(Circle {
        center: Point2::new(
            0.5 * (la.east + lb.east) + offset * nx,
            0.5 * (la.north + lb.north) + offset * ny,
        ),
        radius,
    })
}

/// Clockwise angle from the direction `from -> a` to the direction `from -> b`,
/// i.e. how far right `b` appears of `a` for a camera at `from`.
fn clockwise_angle(from: Point2, a: Point2, b: Point2) -> f64 {
    let (ax, ay) = (a.east - from.east, a.north - from.north);
    let (bx, by) = (b.east - from.east, b.north - from.north);
    let cross = ax * by - ay * bx;
    let dot = ax * bx + ay * by;
    -cross.atan2(dot)
}

fn reflect_across_line(p: Point2, a: Point2, b: Point2) -> Point2 {
    let (dx, dy) = (b.east - a.east, b.north - a.north);
    let len2 = dx * dx + dy * dy;
    let t = ((p.east - a.east) * dx + (p.north - a.north) * dy) / len2;
    let foot = Point2::new(a.east + t * dx, a.north + t * dy);
    Point2::new(2.0 * foot.east - p.east, 2.0 * foot.north - p.north)
}

/// Camera position from three poles ordered right to left in the image
/// (descending `u`) and the two angles they subtend. No heading is involved.
///
/// All four circle-side combinations are tried; a candidate survives if it
/// reproduces both angles with the right orientation. The survivor closest to
/// `coarse` wins. Returns `None` for degenerate configurations.
pub fn translation_from_triple(
    l1: Point2,
    l2: Point2,
    l3: Point2,
    theta12: f64,
    theta23: f64,
    coarse: Point2,
) -> Option<Point2> {
    const SIDES: [ChordSide; 2] = [ChordSide::Left, ChordSide::Right];
    let mut best: Option<(f64, Point2)> = None;
    for side1 in SIDES {
        let Ok(o1) = circumscribed_circle(l1, l2, theta12, side1) else {
            return None;
        };
        for side2 in SIDES {
            let Ok(o2) = circumscribed_circle(l2, l3, theta23, side2) else {
                return None;
            };
            let scale = o1.radius.max(o2.radius);
            if o1.center.distance(&o2.center) < DEGENERATE_TOLERANCE * scale {
                continue;
            }
            let t = reflect_across_line(l2, o1.center, o2.center);
            if t.distance(&l2) < DEGENERATE_TOLERANCE * scale
                || t.distance(&l1) < DEGENERATE_TOLERANCE * scale
                || t.distance(&l3) < DEGENERATE_TOLERANCE * scale
            {
                continue;
            }
            let ok12 = (clockwise_angle(t, l2, l1) - theta12).abs() < BEARING_TOLERANCE;
            let ok23 = (clockwise_angle(t, l3, l2) - theta23).abs() < BEARING_TOLERANCE;
            if ok12 && ok23 {
                let d = t.distance(&coarse);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, t));
                }
            }
        }
    }
    best.map(|(_, t)| t)
}

/// An observation paired with the map pole it was associated with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub observation: Observation,
    pub pole: Pole,
}

/// Column residual `u_proj - u_obs` and its derivative with respect to the
/// heading, or `None` when the pole is behind the camera.
pub fn rotation_residual(
    translation: Point2,
    pair: &MatchedPair,
    intr: &CameraIntrinsics,
    heading: f64,
) -> Option<(f64, f64)> {
    let pose = Pose2::from_point(translation, heading);
    let (x, y) = pose.world_to_camera(pair.pole.position);
    if y <= 0.0 {
        return None;
    }
    let residual = intr.fx * x / y + intr.cx - pair.observation.u;
    // d x'/dψ = y', d y'/dψ = -x'
    let jacobian = intr.fx * (x * x + y * y) / (y * y);
    Some((residual, jacobian))
}

/// `½ Σ r²` over the pairs in front of the camera, with the number of pairs used.
pub fn rotation_cost(translation: Point2, pairs: &[MatchedPair], intr: &CameraIntrinsics, heading: f64) -> (f64, usize) {
    pairs
        .iter()
        .filter_map(|p| rotation_residual(translation, p, intr, heading))
        .fold((0.0, 0), |(c, n), (r, _)| (c + 0.5 * r * r, n + 1))
}

/// Analytic derivative of [`rotation_cost`] with respect to the heading.
pub fn rotation_cost_gradient(translation: Point2, pairs: &[MatchedPair], intr: &CameraIntrinsics, heading: f64) -> f64 {
    pairs
        .iter()
        .filter_map(|p| rotation_residual(translation, p, intr, heading))
        .map(|(r, j)| r * j)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    pub heading: f64,
    pub cost: f64,
    pub iterations: usize,
    /// False when every residual was dropped (all poles behind the camera).
    pub ok: bool,
}

/// Gauss-Newton on the heading with the translation held fixed. A step that
/// raises the cost is halved up to eight times before the solver stops.
pub fn optimize_rotation(
    translation: Point2,
    pairs: &[MatchedPair],
    intr: &CameraIntrinsics,
    psi_init: f64,
    params: &AlignParams,
) -> RotationEstimate {
    let mut psi = normalize_angle(psi_init);
    let (mut cost, used) = rotation_cost(translation, pairs, intr, psi);
    if used == 0 {
        return RotationEstimate {
            heading: psi,
            cost: 0.0,
            iterations: 0,
            ok: false,
        };
    }
    let mut iterations = 0;
    while iterations < params.gn_max_iters {
        iterations += 1;
        let (mut jtr, mut jtj) = (0.0, 0.0);
        for (r, j) in pairs.iter().filter_map(|p| rotation_residual(translation, p, intr, psi)) {
            jtr += j * r;
            jtj += j * j;
        }
        if jtj <= 0.0 {
            break;
        }
        let mut step = -jtr / jtj;
        let mut accepted = false;
        for _ in 0..=MAX_STEP_HALVINGS {
            let candidate = normalize_angle(psi + step);
            let (new_cost, n) = rotation_cost(translation, pairs, intr, candidate);
            if n > 0 && new_cost <= cost {
                psi = candidate;
                cost = new_cost;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step.abs() < params.gn_tol {
            break;
        }
    }
    RotationEstimate {
        heading: psi,
        cost,
        iterations,
        ok: true,
    }
}

/// Log of the particle-weight product at `pose` for a fixed association: matched
/// pairs use the matched likelihood (or clutter if the pole is not visible from
/// `pose`), and `unmatched` further observations contribute `1 - p_d` each.
pub fn pose_log_weight(
    pose: &Pose2,
    pairs: &[MatchedPair],
    unmatched: usize,
    intr: &CameraIntrinsics,
    weights: &WeightParams,
) -> f64 {
    let clutter = (1.0 - weights.p_d).ln();
    let matched: f64 = pairs
        .iter()
        .map(|pair| {
            let proj = project_pole(pose, intr, &pair.pole);
            log_observation_likelihood(&pair.observation, proj.as_ref(), weights)
        })
        .sum();
    matched + unmatched as f64 * clutter
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedPose {
    pub pose: Pose2,
    /// Natural log of the product weight at `pose`.
    pub log_weight: f64,
    /// Ids of the poles that produced the translation, right to left.
    pub source_triple: [u32; 3],
    /// `w_p / (w_p + w_c)` against the coarse pose, in `(0, 1]`.
    pub normalized_weight: f64,
}

impl AlignedPose {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentStatus {
    Accepted,
    TooFewMatches,
    NoCandidate,
    WeightNotHigher,
    TooFar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub pose: Pose2,
    pub log_weight: f64,
    pub distance: f64,
    pub source_triple: [u32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentOutcome {
    pub status: AlignmentStatus,
    pub coarse_log_weight: f64,
    pub triples_tried: usize,
    /// Candidates sorted best first.
    pub candidates: Vec<Candidate>,
    pub aligned: Option<AlignedPose>,
}

/// Logistic form of `w_p / (w_p + w_c)` from log weights.
pub fn normalized_weight(log_wp: f64, log_wc: f64) -> f64 {
    1.0 / (1.0 + (log_wc - log_wp).exp())
}

/// Runs the triple enumeration around `coarse` and applies the acceptance
/// rules: the best candidate must outweigh the coarse pose and lie within `d0`
/// of it.
pub fn align_pose(
    coarse: &Pose2,
    coarse_log_weight: f64,
    pairs: &[MatchedPair],
    unmatched: usize,
    intr: &CameraIntrinsics,
    weights: &WeightParams,
    params: &AlignParams,
) -> AlignmentOutcome {
    let mut outcome = AlignmentOutcome {
        status: AlignmentStatus::TooFewMatches,
        coarse_log_weight,
        triples_tried: 0,
        candidates: Vec::new(),
        aligned: None,
    };
    if pairs.len() < 3 {
        return outcome;
    }

    let mut ordered: Vec<&MatchedPair> = pairs.iter().collect();
    ordered.sort_by(|a, b| b.observation.u.total_cmp(&a.observation.u));
    let n = ordered.len();
    let mut triples = Vec::with_capacity(n * (n - 1) * (n - 2) / 6);
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                triples.push([ordered[i], ordered[j], ordered[k]]);
            }
        }
    }
    outcome.triples_tried = triples.len();

    let coarse_position = coarse.position();
    let mut candidates: Vec<Candidate> = triples
        .par_iter()
        .filter_map(|[a, b, c]| {
            let theta12 = horizontal_angle(a.observation.u, b.observation.u, intr).ok()?;
            let theta23 = horizontal_angle(b.observation.u, c.observation.u, intr).ok()?;
            if theta12 < params.min_triple_angle || theta23 < params.min_triple_angle {
                return None;
            }
            let t = translation_from_triple(
                a.pole.position,
                b.pole.position,
                c.pole.position,
                theta12,
                theta23,
                coarse_position,
            )?;
            let rotation = optimize_rotation(t, pairs, intr, coarse.heading(), params);
            if !rotation.ok {
                return None;
            }
            let pose = Pose2::from_point(t, rotation.heading);
            Some(Candidate {
                pose,
                log_weight: pose_log_weight(&pose, pairs, unmatched, intr, weights),
                distance: t.distance(&coarse_position),
                source_triple: [a.pole.id, b.pole.id, c.pole.id],
            })
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.log_weight
            .total_cmp(&a.log_weight)
            .then(a.distance.total_cmp(&b.distance))
    });

    outcome.status = match candidates.first() {
        None => AlignmentStatus::NoCandidate,
        Some(best) if !(best.log_weight > coarse_log_weight) => AlignmentStatus::WeightNotHigher,
        Some(best) if !(best.distance < params.d0) => AlignmentStatus::TooFar,
        Some(best) => {
            outcome.aligned = Some(AlignedPose {
                pose: best.pose,
                log_weight: best.log_weight,
                source_triple: best.source_triple,
                normalized_weight: normalized_weight(best.log_weight, coarse_log_weight),
            });
            AlignmentStatus::Accepted
        }
    };
    outcome.candidates = candidates;
    outcome
}

/// Standard deviations `((1 - w*) β_t, (1 - w*) β_θ)` of the accurate resample.
pub fn resample_spread(normalized_weight: f64, params: &AlignParams) -> (f64, f64) {
    let slack = (1.0 - normalized_weight).max(0.0);
    (slack * params.beta_t, slack * params.beta_theta)
}

/// Redraws every particle from a Gaussian centred on the aligned pose with the
/// given translation (per axis) and heading standard deviations. Weights are
/// reset to uniform.
pub fn accurate_resample<R: Rng + ?Sized>(
    particles: &mut [Particle],
    center: &Pose2,
    sigma_trans: f64,
    sigma_rot: f64,
    rng: &mut R,
) {
    let w = 1.0 / particles.len() as f64;
    for p in particles.iter_mut() {
        let de: f64 = StandardNormal.sample(rng);
        let dn: f64 = StandardNormal.sample(rng);
        let dpsi: f64 = StandardNormal.sample(rng);
        p.pose = Pose2::new(
            center.east + sigma_trans * de,
            center.north + sigma_trans * dn,
            center.heading() + sigma_rot * dpsi,
        );
        p.weight = w;
    }
}

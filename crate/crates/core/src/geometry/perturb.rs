//! Midpoint perturbation of a demonstration.
//!
//! The perturbed trajectory is the original plus a smooth displacement field.
//! The displacement is a quintic fit that is zero (with zero velocity) at the
//! start and end, and at the midpoint carries the jittered position and the
//! velocity change implied by the jittered heading. Zero jitter is therefore
//! exactly the identity and the endpoints never move.

use super::fit::{fit_smooth_curve, SmoothCurve, TimedPose};
use super::{Pose, Trajectory};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbParams {
    /// Half-range of the midpoint jitter along each local axis.
    pub lateral_jitter_m: f64,
    pub heading_jitter_rad: f64,
    pub max_curvature_per_m: f64,
    pub perturbed_weight: f64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        PerturbParams {
            lateral_jitter_m: 0.5,
            heading_jitter_rad: PI / 3.0,
            max_curvature_per_m: 0.2,
            perturbed_weight: 0.1,
        }
    }
}

impl PerturbParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lateral_jitter_m >= 0.0
            && self.heading_jitter_rad >= 0.0
            && self.max_curvature_per_m > 0.0
            && self.perturbed_weight > 0.0
            && self.perturbed_weight <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid perturbation parameters {self:?}")))
        }
    }
}

/// Midpoint offsets in the midpoint pose's local frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerturbOffsets {
    pub longitudinal: f64,
    pub lateral: f64,
    pub heading: f64,
}

#[derive(Debug, Clone)]
pub struct PerturbedCurve {
    pub base: SmoothCurve,
    pub displacement: SmoothCurve,
}

impl PerturbedCurve {
    pub fn eval(&self, t: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let (p, v, a) = self.base.eval(t);
        let (dp, dv, da) = self.displacement.eval(t);
        ([p[0] + dp[0], p[1] + dp[1]], [v[0] + dv[0], v[1] + dv[1]], [a[0] + da[0], a[1] + da[1]])
    }

    pub fn position(&self, t: f64) -> [f64; 2] {
        self.eval(t).0
    }

    pub fn curvature(&self, t: f64) -> f64 {
        let (_, v, a) = self.eval(t);
        let s = v[0].hypot(v[1]);
        if s < 1e-6 {
            return 0.0;
        }
        (v[0] * a[1] - v[1] * a[0]).abs() / (s * s * s)
    }

    pub fn pose(&self, t: f64) -> Pose {
        let (p, v, _) = self.eval(t);
        let s = v[0].hypot(v[1]);
        let theta = if s < 1e-9 { self.base.knot_heading(t) } else { v[1].atan2(v[0]) };
        Pose::new(p[0], p[1], theta, s)
    }

    pub fn max_curvature(&self, samples: usize) -> f64 {
        let (t0, t1) = (self.base.start_time(), self.base.end_time());
        (0..=samples)
            .map(|i| self.curvature(t0 + (t1 - t0) * i as f64 / samples as f64))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub enum PerturbOutcome {
    Accepted { trajectory: Trajectory, offsets: PerturbOffsets, curve: PerturbedCurve, max_curvature: f64 },
    Rejected { max_curvature: f64, offsets: PerturbOffsets },
}

impl PerturbOutcome {
    pub fn accepted(&self) -> Option<&Trajectory> {
        match self {
            PerturbOutcome::Accepted { trajectory, .. } => Some(trajectory),
            PerturbOutcome::Rejected { .. } => None,
        }
    }
}

pub fn draw_offsets(params: &PerturbParams, seed: u64) -> PerturbOffsets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sym = |h: f64| if h > 0.0 { rng.gen_range(-h..=h) } else { 0.0 };
    let longitudinal = sym(params.lateral_jitter_m);
    let lateral = sym(params.lateral_jitter_m);
    let heading = sym(params.heading_jitter_rad);
    PerturbOffsets { longitudinal, lateral, heading }
}

pub fn perturb_trajectory(traj: &Trajectory, params: &PerturbParams, seed: u64) -> Result<PerturbOutcome> {
    params.validate()?;
    apply_perturbation(traj, draw_offsets(params, seed), params)
}

/// Deterministic core of [`perturb_trajectory`] for given offsets.
pub fn apply_perturbation(traj: &Trajectory, offsets: PerturbOffsets, params: &PerturbParams) -> Result<PerturbOutcome> {
    let n = traj.len();
    if n < 3 {
        return Err(Error::DegenerateInput("perturbation needs at least 3 samples".into()));
    }
    let m = n / 2;
    let knots: Vec<TimedPose> =
        traj.poses.iter().enumerate().map(|(i, &pose)| TimedPose { t: traj.time_at(i), pose }).collect();
    let base = fit_smooth_curve(&knots, true)?;

    let mid = traj.poses[m];
    let [fx, fy] = mid.forward();
    let (lx, ly) = (-fy, fx);
    let dp = [
        offsets.longitudinal * fx + offsets.lateral * lx,
        offsets.longitudinal * fy + offsets.lateral * ly,
    ];
    let th = mid.theta + offsets.heading;
    let dv = [mid.speed * (th.cos() - fx), mid.speed * (th.sin() - fy)];
    let (t0, tm, tn) = (traj.start_time, traj.time_at(m), traj.end_time());
    let (h0, h1) = (tm - t0, tn - tm);
    let second = |d: f64| 2.0 * ((0.0 - d) / h1 - d / h0) / (h0 + h1);
    let displacement = SmoothCurve::hermite(
        vec![t0, tm, tn],
        &[[0.0, 0.0], dp, [0.0, 0.0]],
        &[[0.0, 0.0], dv, [0.0, 0.0]],
        &[[0.0, 0.0], [second(dp[0]), second(dp[1])], [0.0, 0.0]],
        vec![0.0; 3],
    );
    let curve = PerturbedCurve { base, displacement };
    let max_curvature = curve.max_curvature(100 * (n - 1));
    if max_curvature > params.max_curvature_per_m {
        return Ok(PerturbOutcome::Rejected { max_curvature, offsets });
    }
    let mut poses: Vec<Pose> = (0..n).map(|i| curve.pose(traj.time_at(i))).collect();
    // endpoints are exact by construction; copy to drop round-off
    poses[0] = traj.poses[0];
    poses[n - 1] = traj.poses[n - 1];
    let trajectory = Trajectory::new(traj.start_time, traj.dt, poses)?;
    Ok(PerturbOutcome::Accepted { trajectory, offsets, curve, max_curvature })
}

//! Closed-loop simulation: kinematic bicycle, pure-pursuit tracking,
//! oriented-box collisions, the scenario protocol and outcome labels, plus
//! open-loop and input-ablation evaluation.

mod eval;
mod run;

pub use eval::{
    input_ablation_eval, open_loop_errors, open_loop_eval, AblationPair, AblationReport, OpenLoopReport,
};
pub use run::{
    classify_outcome, closed_loop_run, run_suite, Event, EventKind, NetPolicy, OraclePolicy, Outcome, OutcomeLabel,
    Policy, RunMetrics, SimConfig, StraightPolicy, SuiteEntry,
};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose, Trajectory};

pub const MAX_STEERING: f64 = 0.6;
pub const MAX_STEERING_RATE: f64 = 1.0;
pub const MIN_ACCEL: f64 = -4.0;
pub const MAX_ACCEL: f64 = 2.5;
pub const DEFAULT_WHEELBASE: f64 = 2.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub pose: Pose,
    pub steering: f64,
    pub wheelbase: f64,
}

impl VehicleState {
    pub fn new(pose: Pose) -> Self {
        VehicleState { pose, steering: 0.0, wheelbase: DEFAULT_WHEELBASE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Controls {
    pub steering_rate: f64,
    pub acceleration: f64,
}

impl Controls {
    pub fn clipped(self) -> Self {
        Controls {
            steering_rate: self.steering_rate.clamp(-MAX_STEERING_RATE, MAX_STEERING_RATE),
            acceleration: self.acceleration.clamp(MIN_ACCEL, MAX_ACCEL),
        }
    }

    pub fn full_brake() -> Self {
        Controls { steering_rate: 0.0, acceleration: MIN_ACCEL }
    }
}

/// Advance the kinematic bicycle by `dt` with the controls held. The pose
/// moves along the exact arc of yaw rate ω = s·tanδ/L (a straight line when
/// ω = 0); speed and steering update afterwards and are clipped.
pub fn step_dynamics(state: &VehicleState, controls: Controls, dt: f64) -> Result<VehicleState> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(Error::Invalid(format!("dt must be in (0, 0.1], got {dt}")));
    }
    let c = controls.clipped();
    let p = state.pose;
    let s = p.speed;
    let omega = s * state.steering.tan() / state.wheelbase;
    let th1 = p.theta + omega * dt;
    let (x, y) = if (omega * dt).abs() < 1e-12 {
        (p.x + s * p.theta.cos() * dt, p.y + s * p.theta.sin() * dt)
    } else {
        let r = s / omega;
        (p.x + r * (th1.sin() - p.theta.sin()), p.y - r * (th1.cos() - p.theta.cos()))
    };
    Ok(VehicleState {
        pose: Pose::new(x, y, wrap_angle(th1), (s + c.acceleration * dt).max(0.0)),
        steering: (state.steering + c.steering_rate * dt).clamp(-MAX_STEERING, MAX_STEERING),
        wheelbase: state.wheelbase,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub lookahead_min: f64,
    pub lookahead_time: f64,
    pub k_speed: f64,
    /// Time constant of the steering-angle servo.
    pub steer_tau: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig { lookahead_min: 3.0, lookahead_time: 0.8, k_speed: 1.5, steer_tau: 0.1 }
    }
}

/// Pure-pursuit geometry for one tracking step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pursuit {
    pub point: [f64; 2],
    /// Distance to `point` (the lookahead unless the path is shorter).
    pub distance: f64,
    /// Bearing of `point` relative to the heading.
    pub alpha: f64,
    pub curvature: f64,
    pub steering: f64,
}

/// Point on the predicted path at lookahead distance max(L_min, t_L·speed),
/// and the arc through it: κ = 2·sin(α)/L_d, δ = atan(wheelbase·κ).
pub fn pure_pursuit(state: &VehicleState, predicted: &Trajectory, cfg: &TrackerConfig) -> Result<Pursuit> {
    if predicted.len() < 2 {
        return Err(Error::DegenerateInput("predicted trajectory needs at least 2 poses".into()));
    }
    let pos = state.pose.position();
    let dist = |q: [f64; 2]| (q[0] - pos[0]).hypot(q[1] - pos[1]);
    if predicted.poses.iter().all(|p| dist(p.position()) <= 0.1) {
        return Err(Error::DegenerateTrajectory);
    }
    let ld = cfg.lookahead_min.max(cfg.lookahead_time * state.pose.speed);
    let pts: Vec<[f64; 2]> = predicted.poses.iter().map(|p| p.position()).collect();
    let mut point = *pts.last().unwrap();
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if dist(b) < ld {
            continue;
        }
        // first crossing of the lookahead circle on segment a→b
        let d = [b[0] - a[0], b[1] - a[1]];
        let f = [a[0] - pos[0], a[1] - pos[1]];
        let qa = d[0] * d[0] + d[1] * d[1];
        let qb = 2.0 * (f[0] * d[0] + f[1] * d[1]);
        let qc = f[0] * f[0] + f[1] * f[1] - ld * ld;
        let disc = qb * qb - 4.0 * qa * qc;
        let t = if qa > 1e-12 && disc >= 0.0 { ((-qb + disc.sqrt()) / (2.0 * qa)).clamp(0.0, 1.0) } else { 1.0 };
        point = [a[0] + t * d[0], a[1] + t * d[1]];
        break;
    }
    let distance = dist(point).max(1e-9);
    let alpha = wrap_angle((point[1] - pos[1]).atan2(point[0] - pos[0]) - state.pose.theta);
    let curvature = 2.0 * alpha.sin() / distance;
    let steering = (state.wheelbase * curvature).atan().clamp(-MAX_STEERING, MAX_STEERING);
    Ok(Pursuit { point, distance, alpha, curvature, steering })
}

/// Controls that follow `predicted`: steering servoed towards the
/// pure-pursuit angle, acceleration = k·(target − speed) where the target is
/// the speed of the first predicted future pose. Both are clipped.
pub fn track_trajectory(state: &VehicleState, predicted: &Trajectory, cfg: &TrackerConfig) -> Result<Controls> {
    let pp = pure_pursuit(state, predicted, cfg)?;
    let target = predicted.poses[1].speed;
    Ok(Controls {
        steering_rate: (pp.steering - state.steering) / cfg.steer_tau,
        acceleration: cfg.k_speed * (target - state.pose.speed),
    }
    .clipped())
}

/// Separating-axis test for two convex quads (touching counts as contact).
pub fn boxes_intersect(a: &[[f64; 2]; 4], b: &[[f64; 2]; 4]) -> bool {
    for poly in [a, b] {
        for i in 0..4 {
            let (p, q) = (poly[i], poly[(i + 1) % 4]);
            let n = [q[1] - p[1], p[0] - q[0]];
            let proj = |r: &[[f64; 2]; 4]| {
                r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    let d = v[0] * n[0] + v[1] * n[1];
                    (lo.min(d), hi.max(d))
                })
            };
            let (a0, a1) = proj(a);
            let (b0, b1) = proj(b);
            if a1 < b0 || b1 < a0 {
                return false;
            }
        }
    }
    true
}

fn point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let t = if l2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

/// Euclidean gap between two convex quads, 0 when they intersect.
pub fn box_gap(a: &[[f64; 2]; 4], b: &[[f64; 2]; 4]) -> f64 {
    if boxes_intersect(a, b) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (p, q) in [(a, b), (b, a)] {
        for v in p {
            for i in 0..4 {
                best = best.min(point_segment(*v, q[i], q[(i + 1) % 4]));
            }
        }
    }
    best
}

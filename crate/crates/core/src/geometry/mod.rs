//! Poses, trajectories, raster frames and trajectory perturbation.

pub(crate) mod fit;
mod perturb;

pub use fit::{fit_smooth_curve, fit_smooth_trajectory, SmoothCurve, TimedPose};
pub use perturb::{
    apply_perturbation, draw_offsets, perturb_trajectory, PerturbOffsets, PerturbOutcome,
    PerturbParams, PerturbedCurve,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Wrap an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub speed: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64, speed: f64) -> Self {
        Pose { x, y, theta: wrap_angle(theta), speed: speed.max(0.0) }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn forward(&self) -> [f64; 2] {
        [self.theta.cos(), self.theta.sin()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start_time: f64,
    pub dt: f64,
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(start_time: f64, dt: f64, poses: Vec<Pose>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::DegenerateInput(format!("dt must be positive, got {dt}")));
        }
        if poses.len() < 2 {
            return Err(Error::DegenerateInput("trajectory needs at least 2 poses".into()));
        }
        Ok(Trajectory { start_time, dt, poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.start_time + i as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time_at(self.poses.len() - 1)
    }

    /// Pose at arbitrary time; clamps outside the covered interval.
    pub fn sample(&self, t: f64) -> Pose {
        let rel = ((t - self.start_time) / self.dt).max(0.0);
        let last = self.poses.len() - 1;
        let i = (rel.floor() as usize).min(last);
        if i >= last {
            return self.poses[last];
        }
        let f = rel - i as f64;
        interpolate(&self.poses[i], &self.poses[i + 1], f)
    }

    /// Speed/position consistency: |‖Δp‖/dt − s| ≤ 0.2·max(s, 1) for every step.
    pub fn is_speed_consistent(&self) -> bool {
        self.poses.windows(2).all(|w| {
            let v = w[0].distance(&w[1]) / self.dt;
            (v - w[0].speed).abs() <= 0.2 * w[0].speed.max(1.0)
        })
    }

    pub fn max_curvature(&self) -> f64 {
        curvature_profile(self).into_iter().fold(0.0, f64::max)
    }

    /// Text form: `dt=<s> t0=<s>` header then `x y theta speed` per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("dt={} t0={}\n", self.dt, self.start_time);
        for p in &self.poses {
            s.push_str(&format!("{} {} {} {}\n", p.x, p.y, p.theta, p.speed));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty trajectory file".into()))?;
        let mut dt = None;
        let mut t0 = None;
        for tok in header.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header token {tok:?}")))?;
            let v: f64 = v.parse().map_err(|_| Error::Format(format!("bad number {v:?}")))?;
            match k {
                "dt" => dt = Some(v),
                "t0" => t0 = Some(v),
                _ => return Err(Error::Format(format!("unknown header key {k:?}"))),
            }
        }
        let dt = dt.ok_or_else(|| Error::Format("missing dt".into()))?;
        let t0 = t0.ok_or_else(|| Error::Format("missing t0".into()))?;
        let mut poses = Vec::new();
        for (n, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format(format!("line {}: bad number", n + 2)))?;
            if vals.len() != 4 {
                return Err(Error::Format(format!("line {}: expected 4 fields", n + 2)));
            }
            poses.push(Pose::new(vals[0], vals[1], vals[2], vals[3]));
        }
        Trajectory::new(t0, dt, poses).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Linear position/speed, shortest-path heading.
pub fn interpolate(a: &Pose, b: &Pose, f: f64) -> Pose {
    let dth = wrap_angle(b.theta - a.theta);
    Pose::new(
        a.x + (b.x - a.x) * f,
        a.y + (b.y - a.y) * f,
        a.theta + dth * f,
        a.speed + (b.speed - a.speed) * f,
    )
}

/// Resample at a new fixed time step. Samples lie at `t0 + i·dt_new` up to the
/// original end time, so the end pose is kept whenever the duration is a
/// multiple of `dt_new`.
pub fn resample(traj: &Trajectory, dt_new: f64) -> Result<Trajectory> {
    if !(dt_new > 0.0) {
        return Err(Error::DegenerateInput(format!("dt_new must be positive, got {dt_new}")));
    }
    let duration = traj.end_time() - traj.start_time;
    let n = (duration / dt_new + 1e-9).floor() as usize + 1;
    let poses = (0..n)
        .map(|i| {
            if (dt_new - traj.dt).abs() < 1e-15 {
                traj.poses[i]
            } else {
                traj.sample(traj.start_time + i as f64 * dt_new)
            }
        })
        .collect();
    Trajectory::new(traj.start_time, dt_new, poses)
}

/// Unsigned three-point (Menger) curvature per sample: 4·area / (|ab|·|bc|·|ca|).
/// Samples whose speed is below 1e-6 m/s report 0. Endpoints copy their
/// neighbour.
pub fn curvature_profile(traj: &Trajectory) -> Vec<f64> {
    let n = traj.poses.len();
    if n < 3 {
        return vec![0.0; n];
    }
    let mut k = vec![0.0; n];
    for (i, w) in traj.poses.windows(3).enumerate() {
        if w[1].speed >= 1e-6 {
            k[i + 1] = menger(w[0].position(), w[1].position(), w[2].position());
        }
    }
    k[0] = k[1];
    k[n - 1] = k[n - 2];
    k
}

pub fn menger(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let ab = (b[0] - a[0]).hypot(b[1] - a[1]);
    let bc = (c[0] - b[0]).hypot(c[1] - b[1]);
    let ca = (a[0] - c[0]).hypot(a[1] - c[1]);
    let denom = ab * bc * ca;
    if denom < 1e-18 {
        return 0.0;
    }
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    2.0 * cross.abs() / denom
}

/// Top-down image frame. The origin pose sits at pixel (u0, v0); the frame's
/// forward axis (origin heading plus jitter) points towards decreasing v and
/// the left side towards decreasing u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterFrame {
    pub origin_pose: Pose,
    pub rotation_jitter: f64,
    pub width_px: usize,
    pub height_px: usize,
    pub u0: f64,
    pub v0: f64,
    pub resolution: f64,
}

impl RasterFrame {
    pub fn new(
        origin_pose: Pose,
        rotation_jitter: f64,
        width_px: usize,
        height_px: usize,
        u0: f64,
        v0: f64,
        resolution: f64,
    ) -> Result<Self> {
        let f = RasterFrame { origin_pose, rotation_jitter, width_px, height_px, u0, v0, resolution };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0)
            || !(0.0..self.width_px as f64).contains(&self.u0)
            || !(0.0..self.height_px as f64).contains(&self.v0)
        {
            return Err(Error::DegenerateInput(format!("invalid raster frame {self:?}")));
        }
        Ok(())
    }

    /// Heading of the image "up" axis in world coordinates.
    pub fn heading(&self) -> f64 {
        self.origin_pose.theta + self.rotation_jitter
    }

    pub fn forward_range_m(&self) -> f64 {
        self.v0 * self.resolution
    }

    pub fn world_to_raster(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.heading().sin_cos();
        let dx = x - self.origin_pose.x;
        let dy = y - self.origin_pose.y;
        let fwd = dx * c + dy * s;
        let left = -dx * s + dy * c;
        (self.u0 - left / self.resolution, self.v0 - fwd / self.resolution)
    }

    pub fn raster_to_world(&self, u: f64, v: f64) -> (f64, f64) {
        let (s, c) = self.heading().sin_cos();
        let left = (self.u0 - u) * self.resolution;
        let fwd = (self.v0 - v) * self.resolution;
        (self.origin_pose.x + fwd * c - left * s, self.origin_pose.y + fwd * s + left * c)
    }

    /// World heading expressed relative to the image up axis.
    pub fn heading_to_raster(&self, theta: f64) -> f64 {
        wrap_angle(theta - self.heading())
    }

    pub fn heading_to_world(&self, rel: f64) -> f64 {
        wrap_angle(rel + self.heading())
    }
}

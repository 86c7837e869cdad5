//! Piecewise quintic Hermite fitting in time, one polynomial per coordinate.

use super::{wrap_angle, Pose, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothCurve {
    knots: Vec<f64>,
    headings: Vec<f64>,
    // per segment, per axis: c0..c5 in local time τ = t − knot
    coeffs: Vec<[[f64; 6]; 2]>,
}

pub(crate) fn quintic(p0: f64, v0: f64, a0: f64, p1: f64, v1: f64, a1: f64, t: f64) -> [f64; 6] {
    let (t2, t3) = (t * t, t * t * t);
    let (t4, t5) = (t3 * t, t3 * t2);
    [
        p0,
        v0,
        a0 / 2.0,
        (20.0 * (p1 - p0) - (8.0 * v1 + 12.0 * v0) * t - (3.0 * a0 - a1) * t2) / (2.0 * t3),
        (30.0 * (p0 - p1) + (14.0 * v1 + 16.0 * v0) * t + (3.0 * a0 - 2.0 * a1) * t2) / (2.0 * t4),
        (12.0 * (p1 - p0) - 6.0 * (v1 + v0) * t - (a0 - a1) * t2) / (2.0 * t5),
    ]
}

pub(crate) fn poly(c: &[f64; 6], t: f64) -> (f64, f64, f64) {
    let p = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
    let v = c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])));
    let a = 2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]));
    (p, v, a)
}

impl SmoothCurve {
    pub fn start_time(&self) -> f64 {
        self.knots[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.coeffs.len();
        match self.knots.binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 1),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 1),
        }
    }

    /// (position, velocity, acceleration) at time t; clamped to the fitted span.
    pub fn eval(&self, t: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let t = t.clamp(self.start_time(), self.end_time());
        let i = self.segment(t);
        let tau = t - self.knots[i];
        let (px, vx, ax) = poly(&self.coeffs[i][0], tau);
        let (py, vy, ay) = poly(&self.coeffs[i][1], tau);
        ([px, py], [vx, vy], [ax, ay])
    }

    pub fn position(&self, t: f64) -> [f64; 2] {
        self.eval(t).0
    }

    /// Analytic unsigned curvature |v × a| / |v|³ (0 when nearly stationary).
    pub fn curvature(&self, t: f64) -> f64 {
        let (_, v, a) = self.eval(t);
        let s = v[0].hypot(v[1]);
        if s < 1e-6 {
            return 0.0;
        }
        (v[0] * a[1] - v[1] * a[0]).abs() / (s * s * s)
    }

    /// Heading fallback when the curve is momentarily stationary.
    pub fn knot_heading(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let f = ((t - self.knots[i]) / (self.knots[i + 1] - self.knots[i])).clamp(0.0, 1.0);
        self.headings[i] + wrap_angle(self.headings[i + 1] - self.headings[i]) * f
    }

    pub fn pose(&self, t: f64) -> Pose {
        let (p, v, _) = self.eval(t);
        let s = v[0].hypot(v[1]);
        let theta = if s < 1e-9 { self.knot_heading(t) } else { v[1].atan2(v[0]) };
        Pose::new(p[0], p[1], theta, s)
    }

    /// Maximum analytic curvature on a grid of `per_unit` samples per second.
    pub fn max_curvature(&self, per_unit: usize) -> f64 {
        let span = self.end_time() - self.start_time();
        let n = ((span * per_unit as f64).ceil() as usize).max(2);
        (0..=n)
            .map(|i| self.curvature(self.start_time() + span * i as f64 / n as f64))
            .fold(0.0, f64::max)
    }

    pub fn sample(&self, start_time: f64, dt: f64, n: usize) -> Result<Trajectory> {
        let poses = (0..n).map(|i| self.pose(start_time + i as f64 * dt)).collect();
        Trajectory::new(start_time, dt, poses)
    }
}

/// Fit a C² piecewise quintic through timed waypoints. Each knot gets velocity
/// `speed·(cos θ, sin θ)`. Interior knots take the second divided difference
/// of the neighbouring positions as acceleration; endpoints carry tangential
/// acceleration only. With `endpoint_headings_fixed == false` the endpoint
/// velocity direction follows the chord to the neighbouring waypoint.
pub fn fit_smooth_curve(waypoints: &[TimedPose], endpoint_headings_fixed: bool) -> Result<SmoothCurve> {
    let n = waypoints.len();
    if n < 2 {
        return Err(Error::DegenerateInput("need at least 2 waypoints".into()));
    }
    for w in waypoints.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(Error::DegenerateInput(format!(
                "waypoint times must strictly increase ({} then {})",
                w[0].t, w[1].t
            )));
        }
    }
    let mut headings: Vec<f64> = waypoints.iter().map(|w| w.pose.theta).collect();
    if !endpoint_headings_fixed {
        let chord = |a: &Pose, b: &Pose| (b.y - a.y).atan2(b.x - a.x);
        headings[0] = chord(&waypoints[0].pose, &waypoints[1].pose);
        headings[n - 1] = chord(&waypoints[n - 2].pose, &waypoints[n - 1].pose);
    }
    let vel: Vec<[f64; 2]> = waypoints
        .iter()
        .zip(&headings)
        .map(|(w, &h)| [w.pose.speed * h.cos(), w.pose.speed * h.sin()])
        .collect();
    let mut acc = vec![[0.0; 2]; n];
    for i in 1..n.saturating_sub(1) {
        let (a, b, c) = (&waypoints[i - 1], &waypoints[i], &waypoints[i + 1]);
        let (h0, h1) = (b.t - a.t, c.t - b.t);
        let second = |pa: f64, pb: f64, pc: f64| 2.0 * ((pc - pb) / h1 - (pb - pa) / h0) / (h0 + h1);
        acc[i] = [second(a.pose.x, b.pose.x, c.pose.x), second(a.pose.y, b.pose.y, c.pose.y)];
    }
    let tangential = |i: usize, j: usize| {
        (waypoints[j].pose.speed - waypoints[i].pose.speed) / (waypoints[j].t - waypoints[i].t)
    };
    let a0 = tangential(0, 1);
    acc[0] = [a0 * headings[0].cos(), a0 * headings[0].sin()];
    let an = tangential(n - 2, n - 1);
    acc[n - 1] = [an * headings[n - 1].cos(), an * headings[n - 1].sin()];

    let knots: Vec<f64> = waypoints.iter().map(|w| w.t).collect();
    let pos: Vec<[f64; 2]> = waypoints.iter().map(|w| [w.pose.x, w.pose.y]).collect();
    Ok(SmoothCurve::hermite(knots, &pos, &vel, &acc, headings))
}

impl SmoothCurve {
    /// Raw quintic Hermite spline from per-knot position, velocity and
    /// acceleration. Knot times must strictly increase.
    pub(crate) fn hermite(
        knots: Vec<f64>,
        pos: &[[f64; 2]],
        vel: &[[f64; 2]],
        acc: &[[f64; 2]],
        headings: Vec<f64>,
    ) -> SmoothCurve {
        let coeffs = (0..knots.len() - 1)
            .map(|i| {
                let t = knots[i + 1] - knots[i];
                let axis = |a: usize| {
                    quintic(pos[i][a], vel[i][a], acc[i][a], pos[i + 1][a], vel[i + 1][a], acc[i + 1][a], t)
                };
                [axis(0), axis(1)]
            })
            .collect();
        SmoothCurve { knots, headings, coeffs }
    }
}

/// Fit through at least three waypoints and sample at `dt` over the span.
pub fn fit_smooth_trajectory(
    waypoints: &[TimedPose],
    endpoint_headings_fixed: bool,
    dt: f64,
) -> Result<(SmoothCurve, Trajectory)> {
    if waypoints.len() < 3 {
        return Err(Error::DegenerateInput("need at least 3 waypoints".into()));
    }
    let curve = fit_smooth_curve(waypoints, endpoint_headings_fixed)?;
    let span = curve.end_time() - curve.start_time();
    let n = (span / dt + 1e-9).floor() as usize + 1;
    let traj = curve.sample(curve.start_time(), dt, n)?;
    Ok((curve, traj))
}

//! Scripted expert driver.
//!
//! Longitudinal: trapezoidal speed profiles (accelerate at `accel_max`,
//! brake at `decel`) towards the tightest of the speed limit, stop-line and
//! red-light constraints, and a constant-time-gap follower rule behind slower
//! traffic. Lateral: lane-centre tracking, with a smooth return from any
//! initial offset and a lateral nudge around stationary vehicles that
//! intrude into the lane.

use super::{RoutePath, ScriptedAgent, World};
use crate::error::{Error, Result};
use crate::geometry::fit::{poly, quintic};
use crate::geometry::{wrap_angle, Pose, Trajectory};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub accel_max: f64,
    pub decel: f64,
    pub brake_max: f64,
    pub time_gap: f64,
    pub standstill_gap: f64,
    pub stop_hold: f64,
    /// Stop this far before the stop line.
    pub stop_offset: f64,
    pub nudge_clearance: f64,
    pub sim_dt: f64,
    pub ego_length: f64,
    pub ego_width: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            accel_max: 2.0,
            decel: 3.0,
            brake_max: 4.0,
            time_gap: 1.5,
            standstill_gap: 4.0,
            stop_hold: 1.0,
            stop_offset: 0.5,
            nudge_clearance: 0.6,
            sim_dt: 0.05,
            ego_length: 4.8,
            ego_width: 2.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertStart {
    pub t0: f64,
    pub pose: Pose,
    /// Arc lengths of stop lines already served before `t0`.
    pub served_stops: Vec<f64>,
    /// Time already spent at standstill at `t0`.
    pub stopped_for: f64,
}

impl ExpertStart {
    pub fn new(t0: f64, pose: Pose) -> Self {
        ExpertStart { t0, pose, served_stops: Vec::new(), stopped_for: 0.0 }
    }
}

fn smoothstep(x: f64) -> (f64, f64) {
    let x = x.clamp(0.0, 1.0);
    let v = x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
    let d = 30.0 * x * x * (1.0 - x) * (1.0 - x);
    (v, d)
}

#[derive(Debug, Clone, Copy)]
struct Nudge {
    start: f64,
    end: f64,
    offset: f64,
    blend: f64,
}

impl Nudge {
    fn eval(&self, s: f64) -> (f64, f64) {
        if s < self.start - self.blend || s > self.end + self.blend {
            (0.0, 0.0)
        } else if s < self.start {
            let (v, d) = smoothstep((s - (self.start - self.blend)) / self.blend);
            (self.offset * v, self.offset * d / self.blend)
        } else if s <= self.end {
            (self.offset, 0.0)
        } else {
            let (v, d) = smoothstep((s - self.end) / self.blend);
            (self.offset * (1.0 - v), -self.offset * d / self.blend)
        }
    }
}

/// Lateral plan d(s) as the sum of nudges plus a decaying initial residual.
#[derive(Debug, Clone)]
struct LateralPlan {
    nudges: Vec<Nudge>,
    s0: f64,
    residual_len: f64,
    residual: [f64; 6],
}

impl LateralPlan {
    fn target(&self, s: f64) -> (f64, f64) {
        let mut out = (0.0_f64, 0.0_f64);
        for n in &self.nudges {
            let (v, d) = n.eval(s);
            if v.abs() > out.0.abs() {
                out = (v, d);
            }
        }
        out
    }

    fn eval(&self, s: f64) -> (f64, f64) {
        let (t, dt) = self.target(s);
        let u = s - self.s0;
        if u >= 0.0 && u <= self.residual_len {
            let (r, dr, _) = poly(&self.residual, u);
            (t + r, dt + dr)
        } else {
            (t, dt)
        }
    }
}

struct AgentOnRoute<'a> {
    agent: &'a ScriptedAgent,
    nudged: bool,
}

/// Roll the expert forward from `start` for `horizon` seconds and sample
/// every `out_dt` (a multiple of the internal 0.05 s step).
pub fn scripted_expert(
    world: &World,
    route: &[usize],
    agents: &[ScriptedAgent],
    start: &ExpertStart,
    horizon: f64,
    out_dt: f64,
    cfg: &ExpertConfig,
) -> Result<Trajectory> {
    let path = world.route_path(route)?;
    expert_on_path(world, &path, agents, start, horizon, out_dt, cfg)
}

pub(crate) fn expert_on_path(
    world: &World,
    path: &RoutePath,
    agents: &[ScriptedAgent],
    start: &ExpertStart,
    horizon: f64,
    out_dt: f64,
    cfg: &ExpertConfig,
) -> Result<Trajectory> {
    let (s0, d0) = path.line.project(start.pose.x, start.pose.y);
    if d0.abs() > 4.0 || s0 < -1.0 || s0 > path.length() + 1.0 {
        return Err(Error::NoPath(format!("start pose is off the route (s={s0:.1}, d={d0:.2})")));
    }
    let v0 = start.pose.speed;
    let heading_err = wrap_angle(start.pose.theta - path.line.at(s0).heading);

    // stationary intruders ahead become nudges when there is room on the left
    let mut on_route: Vec<AgentOnRoute> = agents.iter().map(|a| AgentOnRoute { agent: a, nudged: false }).collect();
    let mut nudges = Vec::new();
    let blend = (2.5 * v0).max(15.0);
    for entry in on_route.iter_mut() {
        let a = entry.agent;
        let p0 = a.pose_at(start.t0);
        let p1 = a.pose_at(start.t0 + horizon);
        if p0.speed > 0.1 || p0.distance(&p1) > 0.1 {
            continue;
        }
        let (sa, da) = path.line.project(p0.x, p0.y);
        if sa < s0 - a.agent.length {
            continue;
        }
        let left_edge = da + a.agent.width / 2.0;
        let right_edge = da - a.agent.width / 2.0;
        let half = cfg.ego_width / 2.0 + cfg.nudge_clearance;
        if left_edge < -half || right_edge > half || da > 0.0 {
            continue;
        }
        let offset = left_edge + half;
        if offset + cfg.ego_width / 2.0 > super::LANE_WIDTH * 1.5 {
            continue;
        }
        let reach = (a.agent.length + cfg.ego_length) / 2.0 + 1.0;
        nudges.push(Nudge { start: sa - reach, end: sa + reach, offset, blend });
        entry.nudged = true;
    }
    let mut plan = LateralPlan { nudges, s0, residual_len: (2.0 * v0).max(10.0), residual: [0.0; 6] };
    let (t_d, t_dd) = plan.target(s0);
    plan.residual = quintic(d0 - t_d, heading_err.tan() - t_dd, 0.0, 0.0, 0.0, 0.0, plan.residual_len);

    let sub = (out_dt / cfg.sim_dt).round().max(1.0) as usize;
    let n_out = (horizon / out_dt + 1e-9).floor() as usize + 1;
    let dt = out_dt / sub as f64;
    let mut served: Vec<bool> = path
        .stops
        .iter()
        .map(|&x| x < s0 - 1.0 || start.served_stops.iter().any(|&y| (x - y).abs() < 1e-6))
        .collect();
    let mut hold = start.stopped_for;
    let (mut s, mut v) = (s0, v0);
    let mut poses = Vec::with_capacity(n_out);
    let emit = |s: f64, v: f64, poses: &mut Vec<Pose>| {
        let (d, dd) = plan.eval(s);
        poses.push(path.pose(s, d, dd, v));
    };
    emit(s, v, &mut poses);
    for k in 1..n_out {
        for j in 0..sub {
            let t = start.t0 + ((k - 1) * sub + j) as f64 * dt;
            let mut v_cmd = path.speed_limit(s);
            for (i, &line) in path.stops.iter().enumerate() {
                if served[i] {
                    continue;
                }
                let dist = line - cfg.stop_offset - s;
                if dist < -0.5 {
                    served[i] = true;
                    continue;
                }
                v_cmd = v_cmd.min(if dist < 0.05 { 0.0 } else { (2.0 * cfg.decel * dist).sqrt() });
                if v < 0.05 && dist < 1.0 {
                    hold += dt;
                    if hold >= cfg.stop_hold - 1e-9 {
                        served[i] = true;
                        hold = 0.0;
                    }
                }
                break;
            }
            for &(line, li) in &path.lights {
                let dist = line - cfg.stop_offset - s;
                if dist < -0.5 {
                    continue;
                }
                let state = world.traffic_lights[li].state_at(t);
                if matches!(state, super::LightState::Red | super::LightState::Yellow)
                    && dist >= v * v / (2.0 * cfg.brake_max) - 0.1
                {
                    v_cmd = v_cmd.min(if dist < 0.05 { 0.0 } else { (2.0 * cfg.decel * dist).sqrt() });
                }
            }
            for entry in on_route.iter().filter(|e| !e.nudged) {
                let a = entry.agent;
                let p = a.pose_at(t);
                let (sa, da) = path.line.project(p.x, p.y);
                if sa <= s {
                    continue;
                }
                let (d_here, _) = plan.eval(sa);
                if (da - d_here).abs() >= (cfg.ego_width + a.agent.width) / 2.0 + 0.2 {
                    continue;
                }
                // only traffic moving with us (or stopped) is followed
                let along = (p.theta - path.line.at(sa).heading).cos();
                let va = if p.speed > 0.1 { p.speed * along } else { 0.0 };
                if va < -0.1 {
                    continue;
                }
                let gap = sa - s - (a.agent.length + cfg.ego_length) / 2.0 - cfg.standstill_gap;
                let follow = (gap / cfg.time_gap).max(0.0).min((va * va + 2.0 * cfg.decel * gap.max(0.0)).sqrt());
                v_cmd = v_cmd.min(follow);
            }
            if v < 0.05 && v_cmd > 0.05 {
                hold = 0.0;
            }
            let a = ((v_cmd - v) / dt).clamp(-cfg.brake_max, cfg.accel_max);
            let v_new = (v + a * dt).max(0.0);
            s += 0.5 * (v + v_new) * dt;
            v = v_new;
        }
        emit(s, v, &mut poses);
    }
    Trajectory::new(start.t0, out_dt, poses)
}

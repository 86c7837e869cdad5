//! Procedural road worlds, the scripted expert and the evaluation scenarios.

mod expert;
pub mod file;
mod path;
mod scenario;

pub use expert::{scripted_expert, ExpertConfig, ExpertStart};
pub use path::{PathPoint, Polyline};
pub use scenario::{ablate, make_scenario, Ablation, Scenario, ScenarioKind, SuccessCriterion, VARIATIONS, WARMUP};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const LANE_WIDTH: f64 = 3.5;
pub const SHOULDER_WIDTH: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: usize,
    pub centerline: Polyline,
    pub width: f64,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopSign {
    pub lane: usize,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LightState {
    Red,
    Yellow,
    Green,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub lane: usize,
    pub s: f64,
    /// (start time, state) pairs sorted by time; state holds until the next entry.
    pub schedule: Vec<(f64, LightState)>,
}

impl TrafficLight {
    pub fn state_at(&self, t: f64) -> LightState {
        let mut state = LightState::Unknown;
        for &(t0, s) in &self.schedule {
            if t0 <= t {
                state = s;
            } else {
                break;
            }
        }
        state
    }
}

/// A strip of drivable surface between two boundary polylines with matching
/// vertex counts. The road is the union of its corridors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub left: Vec<[f64; 2]>,
    pub right: Vec<[f64; 2]>,
}

impl Corridor {
    /// Quads (left_i, left_i+1, right_i+1, right_i) covering the corridor.
    pub fn quads(&self) -> impl Iterator<Item = [[f64; 2]; 4]> + '_ {
        (0..self.left.len().saturating_sub(1))
            .map(move |i| [self.left[i], self.left[i + 1], self.right[i + 1], self.right[i]])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub lanes: Vec<Lane>,
    pub road: Vec<Corridor>,
    pub stop_signs: Vec<StopSign>,
    pub traffic_lights: Vec<TrafficLight>,
    pub crosswalks: Vec<Vec<[f64; 2]>>,
    pub curbs: Vec<Vec<[f64; 2]>>,
}

impl World {
    pub fn lane(&self, id: usize) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.id == id)
    }

    pub fn rebuild(&mut self) {
        for l in &mut self.lanes {
            l.centerline.rebuild();
        }
    }

    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        self.road.iter().any(|c| c.quads().any(|q| point_in_convex_quad(p, &q)))
    }

    /// Concatenate route lanes into one path. Consecutive lanes must connect
    /// end-to-start within 0.5 m.
    pub fn route_path(&self, route: &[usize]) -> Result<RoutePath> {
        if route.is_empty() {
            return Err(Error::NoPath("empty route".into()));
        }
        let mut points: Vec<[f64; 2]> = Vec::new();
        let mut pieces = Vec::new();
        let mut offset = 0.0;
        for &id in route {
            let lane = self.lane(id).ok_or_else(|| Error::NoPath(format!("unknown lane {id}")))?;
            let pts = &lane.centerline.points;
            if let Some(last) = points.last() {
                let first = pts[0];
                if (first[0] - last[0]).hypot(first[1] - last[1]) > 0.5 {
                    return Err(Error::NoPath(format!("lane {id} does not continue the route")));
                }
                points.extend_from_slice(&pts[1..]);
            } else {
                points.extend_from_slice(pts);
            }
            pieces.push((offset, id, lane.speed_limit));
            offset += lane.centerline.length();
        }
        let line = Polyline::new(points);
        let mut stops = Vec::new();
        let mut lights = Vec::new();
        for &(off, id, _) in &pieces {
            for s in self.stop_signs.iter().filter(|s| s.lane == id) {
                stops.push(off + s.s);
            }
            for (i, l) in self.traffic_lights.iter().enumerate().filter(|(_, l)| l.lane == id) {
                lights.push((off + l.s, i));
            }
        }
        stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(RoutePath { line, pieces, stops, lights })
    }
}

pub fn point_in_convex_quad(p: [f64; 2], q: &[[f64; 2]; 4]) -> bool {
    let mut sign = 0.0;
    for i in 0..4 {
        let (a, b) = (q[i], q[(i + 1) % 4]);
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

/// The route as a single centreline with the route's stop lines and lights
/// expressed as arc lengths.
#[derive(Debug, Clone)]
pub struct RoutePath {
    pub line: Polyline,
    pieces: Vec<(f64, usize, f64)>,
    pub stops: Vec<f64>,
    /// (arc length, index into `World::traffic_lights`)
    pub lights: Vec<(f64, usize)>,
}

impl RoutePath {
    pub fn speed_limit(&self, s: f64) -> f64 {
        let mut lim = self.pieces[0].2;
        for &(off, _, l) in &self.pieces {
            if s >= off {
                lim = l;
            }
        }
        lim
    }

    pub fn length(&self) -> f64 {
        self.line.length()
    }

    /// World pose at arc `s`, lateral offset `d` and lateral slope `dd` (dd/ds).
    pub fn pose(&self, s: f64, d: f64, dd: f64, speed: f64) -> Pose {
        let p = self.line.at(s);
        let xy = p.offset(d);
        Pose::new(xy[0], xy[1], p.heading + dd.atan(), speed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicAgent {
    pub id: usize,
    pub length: f64,
    pub width: f64,
}

/// A scripted agent: box dimensions plus its trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAgent {
    pub agent: DynamicAgent,
    pub trajectory: Trajectory,
}

impl ScriptedAgent {
    pub fn pose_at(&self, t: f64) -> Pose {
        self.trajectory.sample(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    /// Same-direction lanes, 1..=3.
    pub n_lanes: usize,
    /// Maximum lane-centreline curvature, 0..=0.2 1/m.
    pub curviness: f64,
    pub with_stop_signs: bool,
    pub with_lights: bool,
    pub opposing_lane: bool,
    pub length: f64,
    pub speed_limit: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            n_lanes: 1,
            curviness: 0.03,
            with_stop_signs: true,
            with_lights: true,
            opposing_lane: true,
            length: 600.0,
            speed_limit: 10.0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n_lanes)
            || !(0.0..=0.2).contains(&self.curviness)
            || self.length < 50.0
            || !(self.speed_limit > 0.0)
        {
            return Err(Error::Invalid(format!("world spec out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Piecewise-constant curvature reference line sampled every metre.
pub(crate) fn reference_line(start: [f64; 2], heading: f64, length: f64, curvature: impl Fn(f64) -> f64) -> Polyline {
    let n = length.ceil() as usize;
    let mut pts = Vec::with_capacity(n + 1);
    let (mut x, mut y, mut h) = (start[0], start[1], heading);
    pts.push([x, y]);
    for i in 0..n {
        let k = curvature(i as f64 + 0.5);
        let hm = h + 0.5 * k;
        x += hm.cos();
        y += hm.sin();
        h += k;
        pts.push([x, y]);
    }
    Polyline::new(pts)
}

/// Layout of lanes around a reference line: same-direction lanes to the right
/// of the reference (lane 0 on it), an optional opposing lane to the left and
/// a shoulder beyond the rightmost lane.
pub(crate) fn build_road(
    reference: &Polyline,
    n_lanes: usize,
    opposing: bool,
    speed_limit: f64,
) -> (Vec<Lane>, Vec<Corridor>, Vec<Vec<[f64; 2]>>) {
    let mut lanes = Vec::new();
    let mut corridors = Vec::new();
    for i in 0..n_lanes {
        let d = -(i as f64) * LANE_WIDTH;
        lanes.push(Lane { id: i, centerline: reference.offset(d), width: LANE_WIDTH, speed_limit });
        corridors.push(Corridor {
            left: reference.offset(d + LANE_WIDTH / 2.0).points,
            right: reference.offset(d - LANE_WIDTH / 2.0).points,
        });
    }
    if opposing {
        lanes.push(Lane {
            id: n_lanes,
            centerline: reference.offset(LANE_WIDTH).reversed(),
            width: LANE_WIDTH,
            speed_limit,
        });
        corridors.push(Corridor {
            left: reference.offset(1.5 * LANE_WIDTH).points,
            right: reference.offset(0.5 * LANE_WIDTH).points,
        });
    }
    let right_edge = -(n_lanes as f64 - 0.5) * LANE_WIDTH;
    corridors.push(Corridor {
        left: reference.offset(right_edge).points,
        right: reference.offset(right_edge - SHOULDER_WIDTH).points,
    });
    let left_edge = if opposing { 1.5 * LANE_WIDTH } else { 0.5 * LANE_WIDTH };
    let curbs = vec![reference.offset(left_edge).points, reference.offset(right_edge - SHOULDER_WIDTH).points];
    (lanes, corridors, curbs)
}

pub(crate) fn crosswalk(reference: &Polyline, s: f64, left: f64, right: f64) -> Vec<[f64; 2]> {
    let p = reference.at(s);
    vec![p.offset(left), p.offset(right)]
}

pub fn generate_world(seed: u64, spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let max_offset = (spec.n_lanes as f64 - 0.5) * LANE_WIDTH + SHOULDER_WIDTH + 1.5 * LANE_WIDTH;
    // keep the tightest offset lane within the curvature budget
    let k_ref = 0.98 * spec.curviness / (1.0 + max_offset * spec.curviness);
    let mut segments = Vec::new();
    let mut s = 0.0;
    while s < spec.length + 1.0 {
        let len = rng.gen_range(30.0..80.0);
        let k = if spec.curviness > 0.0 { rng.gen_range(-k_ref..=k_ref) } else { 0.0 };
        segments.push((s, s + len, k));
        s += len;
    }
    let reference = reference_line([0.0, 0.0], heading, spec.length, |s| {
        segments.iter().find(|(a, b, _)| s >= *a && s < *b).map(|x| x.2).unwrap_or(0.0)
    });
    let (lanes, road, curbs) = build_road(&reference, spec.n_lanes, spec.opposing_lane, spec.speed_limit);
    let mut stop_signs = Vec::new();
    let mut crosswalks = Vec::new();
    let left = if spec.opposing_lane { 1.5 * LANE_WIDTH } else { 0.5 * LANE_WIDTH };
    let right = -(spec.n_lanes as f64 - 0.5) * LANE_WIDTH;
    if spec.with_stop_signs {
        let mut at = rng.gen_range(120.0..180.0);
        while at < spec.length - 40.0 {
            stop_signs.push(StopSign { lane: 0, s: at });
            crosswalks.push(crosswalk(&reference, at + 3.0, left, right));
            at += rng.gen_range(180.0..260.0);
        }
    }
    let mut traffic_lights = Vec::new();
    if spec.with_lights {
        let at = rng.gen_range(220.0_f64..300.0).min(spec.length - 30.0);
        let phase = rng.gen_range(0.0..25.0);
        let mut schedule = Vec::new();
        let mut t = -phase;
        while t < 600.0 {
            schedule.push((t, LightState::Green));
            schedule.push((t + 12.0, LightState::Yellow));
            schedule.push((t + 15.0, LightState::Red));
            t += 25.0;
        }
        traffic_lights.push(TrafficLight { lane: 0, s: at, schedule });
        crosswalks.push(crosswalk(&reference, at + 3.0, left, right));
    }
    Ok(World { lanes, road, stop_signs, traffic_lights, crosswalks, curbs })
}

//! The five closed-loop scenario families, 20 variations each.

use super::expert::{expert_on_path, ExpertConfig, ExpertStart};
use super::{
    build_road, crosswalk, reference_line, DynamicAgent, LightState, RoutePath, ScriptedAgent, StopSign,
    TrafficLight, World, LANE_WIDTH,
};
use crate::error::{Error, Result};
use crate::geometry::fit::{poly, quintic};
use crate::geometry::{wrap_angle, Pose, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const VARIATIONS: usize = 20;
/// Seconds of logged history before closed-loop control starts.
pub const WARMUP: f64 = 8.0;
pub const EGO_LENGTH: f64 = 4.8;
pub const EGO_WIDTH: f64 = 2.1;
pub const CAR_LENGTH: f64 = 4.5;
pub const CAR_WIDTH: f64 = 2.0;
const START_S: f64 = 100.0;
const ROAD_LENGTH: f64 = 450.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    ParkedCarNudge,
    PerturbRecovery,
    SlowLeadCar,
    StopSign,
    TrafficLight,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::ParkedCarNudge,
        ScenarioKind::PerturbRecovery,
        ScenarioKind::SlowLeadCar,
        ScenarioKind::StopSign,
        ScenarioKind::TrafficLight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::ParkedCarNudge => "parked-car-nudge",
            ScenarioKind::PerturbRecovery => "perturb-recovery",
            ScenarioKind::SlowLeadCar => "slow-lead-car",
            ScenarioKind::StopSign => "stop-sign",
            ScenarioKind::TrafficLight => "traffic-light",
        }
    }

    /// Accepts the canonical name, underscores for dashes, or a short alias
    /// (`parked_car`, `perturb`, `slow_lead`, `stop_sign`, `light`).
    pub fn from_name(name: &str) -> Result<Self> {
        let n = name.to_ascii_lowercase().replace('_', "-");
        let alias = match n.as_str() {
            "parked-car" | "parked" => "parked-car-nudge",
            "perturb" | "recovery" => "perturb-recovery",
            "slow-lead" | "lead" => "slow-lead-car",
            "stop" => "stop-sign",
            "light" | "lights" => "traffic-light",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| Error::Invalid(format!("unknown scenario kind {name:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SuccessCriterion {
    /// Drive past the object at arc `s` without contact.
    PassObject { s: f64 },
    /// Settle within 0.5 m of the lane centre before the end.
    Recover,
    /// Slow down behind the lead without contact.
    FollowLead,
    /// Stop before the line at arc `s` and then continue.
    StopThenGo { s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    RemoveStopSigns,
    RemoveDynamicAgents,
    RemoveCrosswalks,
    RemoveTrafficLights,
}

impl Ablation {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.replace('_', "-").as_str() {
            "stop-signs" => Ok(Ablation::RemoveStopSigns),
            "agents" => Ok(Ablation::RemoveDynamicAgents),
            "crosswalks" => Ok(Ablation::RemoveCrosswalks),
            "lights" => Ok(Ablation::RemoveTrafficLights),
            _ => Err(Error::Invalid(format!("unknown ablation {name:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub variation: usize,
    pub seed: u64,
    pub route: Vec<usize>,
    /// Control starts here; everything earlier is logged history.
    pub warmup: f64,
    pub duration: f64,
    /// Arc length along the route that the ego must reach.
    pub goal_s: f64,
    pub ego_start: Pose,
    pub ego_start_s: f64,
    pub ego_length: f64,
    pub ego_width: f64,
    pub success_criterion: SuccessCriterion,
    pub agents: Vec<ScriptedAgent>,
    pub world: World,
}

impl Scenario {
    pub fn route_path(&self) -> Result<RoutePath> {
        self.world.route_path(&self.route)
    }

    pub fn end_time(&self) -> f64 {
        self.warmup + self.duration
    }

    /// The ego's logged history over [0, warmup]: constant speed along the
    /// lane centre, blending into the start offset over the final 2 s.
    pub fn warmup_log(&self, dt: f64) -> Result<Trajectory> {
        let path = self.route_path()?;
        let (s0, d0) = path.line.project(self.ego_start.x, self.ego_start.y);
        let v = self.ego_start.speed;
        let e0 = wrap_angle(self.ego_start.theta - path.line.at(s0).heading);
        let blend_t = 2.0_f64.min(self.warmup);
        let blend_s = (v * blend_t).max(1e-6);
        // lateral profile in arc length over the last blend_s metres
        let c = quintic(0.0, 0.0, 0.0, d0, e0.tan(), 0.0, blend_s);
        let n = (self.warmup / dt + 1e-9).round() as usize + 1;
        let poses = (0..n)
            .map(|i| {
                let t = (i as f64 * dt).min(self.warmup);
                let s = s0 - v * (self.warmup - t);
                let u = s - (s0 - blend_s);
                let (d, dd) = if u <= 0.0 { (0.0, 0.0) } else { let (p, dp, _) = poly(&c, u); (p, dp) };
                if i + 1 == n {
                    self.ego_start
                } else {
                    path.pose(s, d, dd, v)
                }
            })
            .collect();
        Trajectory::new(0.0, dt, poses)
    }

    /// Expert rollout from the closed-loop start, used by the oracle policy.
    pub fn expert_rollout(&self, out_dt: f64, cfg: &ExpertConfig) -> Result<Trajectory> {
        let path = self.route_path()?;
        let start = ExpertStart::new(self.warmup, self.ego_start);
        expert_on_path(&self.world, &path, &self.agents, &start, self.duration, out_dt, cfg)
    }
}

fn build_world(curvature: impl Fn(f64) -> f64, heading: f64, limit: f64) -> World {
    let reference = reference_line([0.0, 0.0], heading, ROAD_LENGTH, curvature);
    let (lanes, road, curbs) = build_road(&reference, 1, true, limit);
    World { lanes, road, stop_signs: vec![], traffic_lights: vec![], crosswalks: vec![], curbs }
}

fn constant_agent(id: usize, pose: Pose, duration: f64) -> Result<ScriptedAgent> {
    Ok(ScriptedAgent {
        agent: DynamicAgent { id, length: CAR_LENGTH, width: CAR_WIDTH },
        trajectory: Trajectory::new(0.0, duration, vec![pose, pose])?,
    })
}

/// Build variation `index` (0..20) of `kind`. The seed only rotates the
/// world; the scenario content is fixed per index.
pub fn make_scenario(kind: ScenarioKind, index: usize, seed: u64) -> Result<Scenario> {
    if index >= VARIATIONS {
        return Err(Error::BadIndex(index));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((kind as u64) << 32) ^ index as u64);
    let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let s0 = START_S;
    let mut agents = Vec::new();
    let (world, speed, offset, heading_err, duration, goal_s, criterion);
    match kind {
        ScenarioKind::ParkedCarNudge => {
            let (g, si) = (index / 5, index % 5);
            speed = [3.0, 4.5, 6.0, 7.5, 9.0][si];
            let k = 0.012;
            let curv = move |s: f64| match g {
                1 if s > s0 - 20.0 => k,
                2 if s > s0 - 20.0 => -k,
                3 if s > s0 - 20.0 && s < s0 + 60.0 => k,
                3 if s >= s0 + 60.0 && s < s0 + 140.0 => -k,
                _ => 0.0,
            };
            let mut w = build_world(curv, heading, 10.0);
            let parked_s = s0 + 40.0 + 5.0 * g as f64;
            let p = w.lanes[0].centerline.at(parked_s);
            let xy = p.offset(-1.95);
            agents.push(constant_agent(1, Pose::new(xy[0], xy[1], p.heading, 0.0), 200.0)?);
            w.stop_signs.push(StopSign { lane: 0, s: s0 + 110.0 });
            world = w;
            offset = 0.0;
            heading_err = 0.0;
            duration = 25.0;
            goal_s = parked_s + 10.0;
            criterion = SuccessCriterion::PassObject { s: parked_s };
        }
        ScenarioKind::PerturbRecovery => {
            let (c, si) = (index / 5, index % 5);
            speed = [4.0, 5.0, 6.0, 7.0, 8.0][si];
            let (d, e) = [(0.6, 0.05), (-0.6, -0.05), (1.0, 0.1), (-1.0, -0.1)][c];
            world = build_world(|s| if s > s0 + 30.0 { 0.02 } else { 0.0 }, heading, 10.0);
            offset = d;
            heading_err = e;
            duration = 12.0;
            goal_s = s0 + 30.0;
            criterion = SuccessCriterion::Recover;
        }
        ScenarioKind::SlowLeadCar => {
            let (ei, li) = (index / 5, index % 5);
            speed = [6.0, 8.0, 10.0, 12.0][ei];
            let lead_speed = speed * [0.2, 0.35, 0.5, 0.65, 0.8][li];
            let w = build_world(|_| 0.0, heading, 12.0);
            let lane = &w.lanes[0].centerline;
            let end = WARMUP + 15.0;
            let poses = (0..=(end * 10.0).round() as usize)
                .map(|i| {
                    let t = i as f64 * 0.1;
                    let p = lane.at(s0 + 40.0 + lead_speed * (t - WARMUP));
                    Pose::new(p.x, p.y, p.heading, lead_speed)
                })
                .collect();
            agents.push(ScriptedAgent {
                agent: DynamicAgent { id: 1, length: CAR_LENGTH, width: CAR_WIDTH },
                trajectory: Trajectory::new(0.0, 0.1, poses)?,
            });
            world = w;
            offset = 0.0;
            heading_err = 0.0;
            duration = 15.0;
            goal_s = s0 + 20.0;
            criterion = SuccessCriterion::FollowLead;
        }
        ScenarioKind::StopSign | ScenarioKind::TrafficLight => {
            let (di, si) = (index / 5, index % 5);
            speed = [4.0, 5.5, 7.0, 8.5, 10.0][si];
            let line = if kind == ScenarioKind::StopSign {
                s0 + [25.0, 35.0, 45.0, 55.0][di]
            } else {
                s0 + [30.0, 40.0, 50.0, 60.0][di]
            };
            let mut w = build_world(|_| 0.0, heading, 10.0);
            if kind == ScenarioKind::StopSign {
                w.stop_signs.push(StopSign { lane: 0, s: line });
            } else {
                w.traffic_lights.push(TrafficLight {
                    lane: 0,
                    s: line,
                    schedule: vec![(0.0, LightState::Red), (WARMUP + 6.0, LightState::Green)],
                });
            }
            let lane = w.lanes[0].centerline.clone();
            w.crosswalks.push(crosswalk(&lane, line + 3.0, 1.5 * LANE_WIDTH, -0.5 * LANE_WIDTH));
            world = w;
            offset = 0.0;
            heading_err = 0.0;
            duration = 20.0;
            goal_s = line + 10.0;
            criterion = SuccessCriterion::StopThenGo { s: line };
        }
    }
    let path = world.route_path(&[0])?;
    let base = path.line.at(s0);
    let xy = base.offset(offset);
    let ego_start = Pose::new(xy[0], xy[1], base.heading + heading_err, speed);
    Ok(Scenario {
        kind,
        variation: index,
        seed,
        route: vec![0],
        warmup: WARMUP,
        duration,
        goal_s,
        ego_start,
        ego_start_s: s0,
        ego_length: EGO_LENGTH,
        ego_width: EGO_WIDTH,
        success_criterion: criterion,
        agents,
        world,
    })
}

/// Copy of `s` with one factor removed.
pub fn ablate(s: &Scenario, what: Ablation) -> Scenario {
    let mut out = s.clone();
    match what {
        Ablation::RemoveStopSigns => out.world.stop_signs.clear(),
        Ablation::RemoveDynamicAgents => out.agents.clear(),
        Ablation::RemoveCrosswalks => out.world.crosswalks.clear(),
        Ablation::RemoveTrafficLights => out.world.traffic_lights.clear(),
    }
    out
}

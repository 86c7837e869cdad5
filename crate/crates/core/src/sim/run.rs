use super::{box_gap, boxes_intersect, step_dynamics, track_trajectory, Controls, TrackerConfig, VehicleState};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose, Trajectory};
use crate::net::{load_checkpoint, unroll, Arch, NetConfig, NetParams, UnrollMode};
use crate::raster::{box_corners, render_input, RenderConfig, Scene};
use crate::world::{make_scenario, ExpertConfig, RoutePath, Scenario, ScenarioKind};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub sim_dt: f64,
    pub replan_dt: f64,
    pub wheelbase: f64,
    pub lookahead_min: f64,
    pub lookahead_time: f64,
    pub k_speed: f64,
    pub steer_tau: f64,
    pub stuck_speed: f64,
    pub stuck_window: f64,
    pub recover_offset: f64,
    pub recover_heading: f64,
    pub recover_window: f64,
    pub min_gap: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let t = TrackerConfig::default();
        SimConfig {
            sim_dt: 0.05,
            replan_dt: 0.2,
            wheelbase: super::DEFAULT_WHEELBASE,
            lookahead_min: t.lookahead_min,
            lookahead_time: t.lookahead_time,
            k_speed: t.k_speed,
            steer_tau: t.steer_tau,
            stuck_speed: 0.2,
            stuck_window: 5.0,
            recover_offset: 0.5,
            recover_heading: 0.1,
            recover_window: 3.0,
            min_gap: 1.0,
        }
    }
}

impl SimConfig {
    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            lookahead_min: self.lookahead_min,
            lookahead_time: self.lookahead_time,
            k_speed: self.k_speed,
            steer_tau: self.steer_tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sim_dt > 0.0
            && self.sim_dt <= 0.1
            && self.replan_dt >= self.sim_dt
            && self.wheelbase > 0.0
            && self.stuck_window > 0.0
            && self.recover_window > 0.0;
        if !ok {
            return Err(Error::Invalid(format!("sim config out of range: {self:?}")));
        }
        Ok(())
    }
}

/// A driving policy. `start` is called once per run and may precompute
/// per-scenario state.
pub trait Policy: Sync {
    fn name(&self) -> String;
    fn start<'a>(&'a self, scenario: &'a Scenario, path: &'a RoutePath) -> Result<Box<dyn Planner + 'a>>;
}

pub trait Planner {
    /// Future trajectory from `state` at time `t`; pose 0 is the current pose.
    /// `history` holds the ego poses over [0, t].
    fn plan(&mut self, history: &Trajectory, state: &VehicleState, t: f64) -> Result<Trajectory>;
}

/// The trained network: renders from the simulated pose and unrolls with argmax.
pub struct NetPolicy {
    pub arch: Arch,
    pub params: NetParams<f32>,
    pub render: RenderConfig,
    pub label: String,
}

impl NetPolicy {
    pub fn new(arch: Arch, params: NetParams<f32>, render: RenderConfig, label: &str) -> Self {
        NetPolicy { arch, params, render, label: label.to_string() }
    }

    pub fn load(path: &Path, render: RenderConfig) -> Result<Self> {
        let arch = Arch::new(&NetConfig::for_render(&render))?;
        let params = load_checkpoint(path, &arch)?;
        Ok(Self::new(arch, params, render, &path.display().to_string()))
    }
}

struct NetPlanner<'a> {
    policy: &'a NetPolicy,
    scene: Scene<'a>,
}

impl Planner for NetPlanner<'_> {
    fn plan(&mut self, history: &Trajectory, state: &VehicleState, t: f64) -> Result<Trajectory> {
        let cfg = &self.policy.render;
        let frame = cfg.frame(state.pose, 0.0);
        let input = render_input(self.scene, history, &frame, t, cfg, false)?;
        Ok(unroll(&self.policy.arch, &self.policy.params, &input, &frame, t, cfg.dt, &UnrollMode::Argmax)?.trajectory)
    }
}

impl Policy for NetPolicy {
    fn name(&self) -> String {
        self.label.clone()
    }
    fn start<'a>(&'a self, scenario: &'a Scenario, path: &'a RoutePath) -> Result<Box<dyn Planner + 'a>> {
        let scene = Scene { world: &scenario.world, agents: &scenario.agents, route: Some(path) };
        Ok(Box::new(NetPlanner { policy: self, scene }))
    }
}

/// Returns the scripted expert's rollout from the scenario start.
pub struct OraclePolicy {
    pub expert: ExpertConfig,
    pub n_future: usize,
    pub dt: f64,
}

impl Default for OraclePolicy {
    fn default() -> Self {
        OraclePolicy { expert: ExpertConfig::default(), n_future: 10, dt: 0.2 }
    }
}

struct OraclePlanner {
    rollout: Trajectory,
    n: usize,
    dt: f64,
}

impl Planner for OraclePlanner {
    fn plan(&mut self, _history: &Trajectory, state: &VehicleState, t: f64) -> Result<Trajectory> {
        let mut poses = vec![state.pose];
        poses.extend((1..=self.n).map(|k| self.rollout.sample(t + k as f64 * self.dt)));
        Trajectory::new(t, self.dt, poses)
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }
    fn start<'a>(&'a self, scenario: &'a Scenario, _path: &'a RoutePath) -> Result<Box<dyn Planner + 'a>> {
        let rollout = scenario.expert_rollout(self.expert.sim_dt, &self.expert)?;
        Ok(Box::new(OraclePlanner { rollout, n: self.n_future, dt: self.dt }))
    }
}

/// Straight ahead along the current heading at the current speed.
pub struct StraightPolicy {
    pub n_future: usize,
    pub dt: f64,
}

impl Default for StraightPolicy {
    fn default() -> Self {
        StraightPolicy { n_future: 10, dt: 0.2 }
    }
}

struct StraightPlanner {
    n: usize,
    dt: f64,
}

impl Planner for StraightPlanner {
    fn plan(&mut self, _history: &Trajectory, state: &VehicleState, t: f64) -> Result<Trajectory> {
        let p = state.pose;
        let s = p.speed.max(1.0);
        let poses = (0..=self.n)
            .map(|k| {
                let d = s * k as f64 * self.dt;
                Pose::new(p.x + d * p.theta.cos(), p.y + d * p.theta.sin(), p.theta, p.speed)
            })
            .collect();
        Trajectory::new(t, self.dt, poses)
    }
}

impl Policy for StraightPolicy {
    fn name(&self) -> String {
        "straight".into()
    }
    fn start<'a>(&'a self, _s: &'a Scenario, _p: &'a RoutePath) -> Result<Box<dyn Planner + 'a>> {
        Ok(Box::new(StraightPlanner { n: self.n_future, dt: self.dt }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeLabel {
    Passes,
    Collides,
    Stuck,
    Recovers,
    SlowsDown,
}

impl OutcomeLabel {
    pub const ALL: [OutcomeLabel; 5] =
        [OutcomeLabel::Passes, OutcomeLabel::Collides, OutcomeLabel::Stuck, OutcomeLabel::Recovers, OutcomeLabel::SlowsDown];
}

impl fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&format!("{self:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Collision { agent: usize },
    OffRoad,
    /// Crossed a stop line or light line at arc `s`; `min_speed` over the
    /// 15 m before it.
    LineCrossed { s: f64, min_speed: f64 },
    GoalReached,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Seconds after control start of the collision, else of reaching the goal.
    pub time_to_event: Option<f64>,
    /// Smallest gap to any agent box (infinite without agents).
    pub min_gap: f64,
    pub max_lateral_offset: f64,
    pub min_speed: f64,
    /// Route arc length reached at the end.
    pub final_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub label: OutcomeLabel,
    pub trace: Vec<(f64, VehicleState)>,
    pub events: Vec<Event>,
    pub metrics: RunMetrics,
}

fn ego_box(s: &Scenario, p: &Pose) -> [[f64; 2]; 4] {
    box_corners(p.position(), p.theta, s.ego_length, s.ego_width)
}

fn agent_box(a: &crate::world::ScriptedAgent, t: f64) -> [[f64; 2]; 4] {
    let p = a.pose_at(t);
    box_corners(p.position(), p.theta, a.agent.length, a.agent.width)
}

/// Run one scenario under `policy`: the logged warm-up history, then
/// replanning every `replan_dt` from the simulated pose while the dynamics
/// advance at `sim_dt`, until the duration elapses or a collision occurs.
pub fn closed_loop_run(scenario: &Scenario, policy: &dyn Policy, cfg: &SimConfig) -> Result<Outcome> {
    cfg.validate()?;
    let path = scenario.route_path()?;
    let mut poses = scenario.warmup_log(cfg.sim_dt)?.poses;
    let mut state = VehicleState { pose: scenario.ego_start, steering: 0.0, wheelbase: cfg.wheelbase };
    let mut planner = policy.start(scenario, &path)?;
    let tracker = cfg.tracker();
    let n_ticks = (scenario.duration / cfg.sim_dt).round() as usize;
    let every = ((cfg.replan_dt / cfg.sim_dt).round() as usize).max(1);
    let mut trace = vec![(scenario.warmup, state)];
    let mut events = Vec::new();
    let lines: Vec<f64> = path.stops.iter().copied().chain(path.lights.iter().map(|l| l.0)).collect();
    let mut s_prev = path.line.project(state.pose.x, state.pose.y).0;
    let mut approach: Vec<f64> = vec![f64::INFINITY; lines.len()];
    let mut off_road = false;
    let mut goal = false;
    let mut plan: Option<Trajectory> = None;
    for i in 0..n_ticks {
        let t = scenario.warmup + i as f64 * cfg.sim_dt;
        if i % every == 0 {
            let history = Trajectory::new(0.0, cfg.sim_dt, poses.clone())?;
            plan = Some(planner.plan(&history, &state, t)?);
        }
        let controls = match track_trajectory(&state, plan.as_ref().expect("planned on tick 0"), &tracker) {
            Ok(c) => c,
            Err(Error::DegenerateTrajectory) => Controls::full_brake(),
            Err(e) => return Err(e),
        };
        state = step_dynamics(&state, controls, cfg.sim_dt)?;
        let t1 = t + cfg.sim_dt;
        poses.push(state.pose);
        trace.push((t1, state));

        let s_now = path.line.project(state.pose.x, state.pose.y).0;
        for (j, &line) in lines.iter().enumerate() {
            if s_now >= line - 15.0 && s_prev < line {
                approach[j] = approach[j].min(state.pose.speed);
            }
            if s_prev < line && s_now >= line {
                events.push(Event { t: t1, kind: EventKind::LineCrossed { s: line, min_speed: approach[j] } });
            }
        }
        s_prev = s_now;
        let on_road = scenario.world.contains_point(state.pose.position());
        if !on_road && !off_road {
            events.push(Event { t: t1, kind: EventKind::OffRoad });
        }
        off_road = !on_road;
        if !goal && s_now >= scenario.goal_s {
            goal = true;
            events.push(Event { t: t1, kind: EventKind::GoalReached });
        }
        let eb = ego_box(scenario, &state.pose);
        if let Some(a) = scenario.agents.iter().find(|a| boxes_intersect(&eb, &agent_box(a, t1))) {
            events.push(Event { t: t1, kind: EventKind::Collision { agent: a.agent.id } });
            break;
        }
    }
    let (label, metrics) = classify(&trace, &events, scenario, &path, cfg);
    Ok(Outcome { label, trace, events, metrics })
}

fn summarize(trace: &[(f64, VehicleState)], events: &[Event], scenario: &Scenario, path: &RoutePath) -> RunMetrics {
    let mut min_gap = f64::INFINITY;
    let mut max_lat: f64 = 0.0;
    let mut min_speed = f64::INFINITY;
    let mut final_s = f64::NEG_INFINITY;
    for (t, st) in trace {
        let eb = ego_box(scenario, &st.pose);
        for a in &scenario.agents {
            min_gap = min_gap.min(box_gap(&eb, &agent_box(a, *t)));
        }
        let (s, d) = path.line.project(st.pose.x, st.pose.y);
        max_lat = max_lat.max(d.abs());
        min_speed = min_speed.min(st.pose.speed);
        final_s = s;
    }
    let t0 = scenario.warmup;
    let time_to_event = events
        .iter()
        .find(|e| matches!(e.kind, EventKind::Collision { .. }))
        .or_else(|| events.iter().find(|e| e.kind == EventKind::GoalReached))
        .map(|e| e.t - t0);
    RunMetrics { time_to_event, min_gap, max_lateral_offset: max_lat, min_speed, final_s }
}

fn classify(
    trace: &[(f64, VehicleState)],
    events: &[Event],
    scenario: &Scenario,
    path: &RoutePath,
    cfg: &SimConfig,
) -> (OutcomeLabel, RunMetrics) {
    let m = summarize(trace, events, scenario, path);
    let t_end = trace.last().map(|x| x.0).unwrap_or(0.0);
    let completed = events.iter().any(|e| e.kind == EventKind::GoalReached);
    let tail = |w: f64| trace.iter().filter(move |(t, _)| *t >= t_end - w - 1e-9);
    let label = if events.iter().any(|e| matches!(e.kind, EventKind::Collision { .. })) {
        OutcomeLabel::Collides
    } else if !completed && {
        let v: Vec<f64> = tail(cfg.stuck_window).map(|(_, s)| s.pose.speed).collect();
        v.iter().sum::<f64>() / (v.len().max(1) as f64) < cfg.stuck_speed
    } {
        OutcomeLabel::Stuck
    } else if scenario.kind == ScenarioKind::PerturbRecovery
        && tail(cfg.recover_window).all(|(_, s)| {
            let (sp, d) = path.line.project(s.pose.x, s.pose.y);
            d.abs() < cfg.recover_offset && wrap_angle(s.pose.theta - path.line.at(sp).heading).abs() < cfg.recover_heading
        })
    {
        OutcomeLabel::Recovers
    } else if scenario.kind == ScenarioKind::SlowLeadCar && m.min_gap >= cfg.min_gap {
        OutcomeLabel::SlowsDown
    } else if completed {
        OutcomeLabel::Passes
    } else {
        // neither collided nor finished: did not make it through in time
        OutcomeLabel::Stuck
    };
    (label, m)
}

/// Label a completed run: Collides > Stuck > the scenario-specific label
/// (Recovers, SlowsDown) > Passes; runs that end short of the goal without
/// any of these count as Stuck.
pub fn classify_outcome(
    trace: &[(f64, VehicleState)],
    events: &[Event],
    scenario: &Scenario,
    cfg: &SimConfig,
) -> Result<OutcomeLabel> {
    let path = scenario.route_path()?;
    Ok(classify(trace, events, scenario, &path, cfg).0)
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub kind: ScenarioKind,
    pub variation: usize,
    /// Errors mark the run invalid; they are excluded from rates.
    pub outcome: std::result::Result<Outcome, String>,
}

/// All 20 variations of `kind`, run in parallel.
pub fn run_suite(kind: ScenarioKind, policy: &dyn Policy, seed: u64, cfg: &SimConfig) -> Vec<SuiteEntry> {
    let idx: Vec<usize> = (0..crate::world::VARIATIONS).collect();
    crate::par::map(&idx, |&i| {
        let outcome = make_scenario(kind, i, seed)
            .and_then(|s| closed_loop_run(&s, policy, cfg))
            .map_err(|e| e.to_string());
        SuiteEntry { kind, variation: i, outcome }
    })
}

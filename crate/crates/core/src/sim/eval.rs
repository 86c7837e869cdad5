use super::run::{closed_loop_run, EventKind, Outcome, OutcomeLabel, Policy, SimConfig};
use crate::error::{Error, Result};
use crate::net::{unroll, Arch, NetParams, UnrollMode};
use crate::trainer::Dataset;
use crate::world::{ablate, Ablation, LightState, Scenario, ScenarioKind, SuccessCriterion};

#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopReport {
    /// Mean L2 error in pixels for waypoints 1..=N.
    pub per_waypoint: Vec<f64>,
    pub n_examples: usize,
}

/// Predicted and ground-truth waypoints of one example.
pub type WaypointPair = (Vec<[f64; 2]>, Vec<[f64; 2]>);

/// Mean per-index L2 distance over (prediction, target) pairs.
pub fn open_loop_errors(pairs: &[WaypointPair]) -> Result<Vec<f64>> {
    let Some(n) = pairs.first().map(|p| p.1.len()) else {
        return Err(Error::Invalid("no examples".into()));
    };
    let mut sum = vec![0.0; n];
    for (pred, tgt) in pairs {
        if pred.len() != n || tgt.len() != n {
            return Err(Error::ShapeMismatch("waypoint counts differ".into()));
        }
        for k in 0..n {
            sum[k] += (pred[k][0] - tgt[k][0]).hypot(pred[k][1] - tgt[k][1]);
        }
    }
    Ok(sum.into_iter().map(|s| s / pairs.len() as f64).collect())
}

/// Per-waypoint error of the argmax unroll (pixel plus sub-pixel offset)
/// against the continuous ground-truth waypoints. Predictions never feed back
/// into the inputs.
pub fn open_loop_eval(arch: &Arch, params: &NetParams<f32>, eval: &Dataset) -> Result<OpenLoopReport> {
    let idx: Vec<usize> = (0..eval.len()).collect();
    let pairs = crate::par::map(&idx, |&i| -> Result<WaypointPair> {
        let ex = eval.example(i)?;
        let u = unroll(arch, params, &ex.input, &ex.frame, 0.0, eval.render.dt, &UnrollMode::Argmax)?;
        let pred = u.steps.iter().map(|s| [s.pixel.0 as f64 + s.subpixel[0], s.pixel.1 as f64 + s.subpixel[1]]).collect();
        Ok((pred, ex.targets.waypoints.clone()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(OpenLoopReport { per_waypoint: open_loop_errors(&pairs)?, n_examples: pairs.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPair {
    pub kind: ScenarioKind,
    pub variation: usize,
    pub with_factor: std::result::Result<OutcomeLabel, String>,
    pub without_factor: std::result::Result<OutcomeLabel, String>,
    /// Whether the behaviour that the factor should cause was observed.
    pub reacted_with: bool,
    pub reacted_without: bool,
    /// Behaviour failed to change the way the factor demands.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub toggle: Ablation,
    pub pairs: Vec<AblationPair>,
}

impl AblationReport {
    pub fn n_flagged(&self) -> usize {
        self.pairs.iter().filter(|p| p.flagged).count()
    }
}

fn control_line(s: &Scenario) -> Option<f64> {
    match s.success_criterion {
        SuccessCriterion::StopThenGo { s } => Some(s),
        _ => None,
    }
}

/// Came to a stop (< 0.5 m/s) within 15 m before `line`, or never reached it.
fn stopped_before(o: &Outcome, s: &Scenario, line: f64) -> bool {
    let Ok(path) = s.route_path() else { return false };
    let mut reached = false;
    for (_, st) in &o.trace {
        let (sp, _) = path.line.project(st.pose.x, st.pose.y);
        if sp >= line - 15.0 && sp <= line && st.pose.speed < 0.5 {
            return true;
        }
        reached |= sp > line;
    }
    !reached
}

fn crossed_on_red(o: &Outcome, s: &Scenario) -> bool {
    o.events.iter().any(|e| match e.kind {
        EventKind::LineCrossed { .. } => {
            s.world.traffic_lights.iter().any(|l| matches!(l.state_at(e.t), LightState::Red))
        }
        _ => false,
    })
}

fn slowed_down(o: &Outcome, s: &Scenario) -> bool {
    let limit = s.world.lanes.first().map(|l| l.speed_limit).unwrap_or(f64::INFINITY);
    let floor = s.ego_start.speed.min(limit) - 0.5;
    o.trace.iter().any(|(_, st)| st.pose.speed < floor)
}

/// Whether the factor's expected behaviour shows in `o`, for the scenario
/// it was run on (`orig` supplies the line position after ablation).
fn reaction(toggle: Ablation, o: &Outcome, run: &Scenario, orig: &Scenario) -> bool {
    match toggle {
        Ablation::RemoveStopSigns => control_line(orig).map(|l| stopped_before(o, run, l)).unwrap_or(false),
        Ablation::RemoveTrafficLights => {
            if run.world.traffic_lights.is_empty() {
                control_line(orig).map(|l| stopped_before(o, run, l)).unwrap_or(false)
            } else {
                !crossed_on_red(o, run)
            }
        }
        Ablation::RemoveDynamicAgents => slowed_down(o, run),
        Ablation::RemoveCrosswalks => false,
    }
}

/// Run each scenario with and without `toggle` and compare. For causal
/// factors the pair is flagged unless the behaviour appears with the factor
/// and disappears without it; for crosswalks (no causal role) it is flagged
/// when the labels differ. Dynamic-agent removal on scenarios other than the
/// slow lead only requires that the ego does not slow down without agents.
pub fn input_ablation_eval(
    policy: &dyn Policy,
    scenarios: &[Scenario],
    toggle: Ablation,
    cfg: &SimConfig,
) -> AblationReport {
    let pairs = crate::par::map(scenarios, |s| {
        let a = ablate(s, toggle);
        let with = closed_loop_run(s, policy, cfg);
        let without = closed_loop_run(&a, policy, cfg);
        let rw = with.as_ref().map(|o| reaction(toggle, o, s, s)).unwrap_or(false);
        let rwo = without.as_ref().map(|o| reaction(toggle, o, &a, s)).unwrap_or(false);
        let lw = with.as_ref().map(|o| o.label).map_err(|e| e.to_string());
        let lwo = without.as_ref().map(|o| o.label).map_err(|e| e.to_string());
        let flagged = match toggle {
            Ablation::RemoveCrosswalks => lw != lwo || lw.is_err(),
            Ablation::RemoveDynamicAgents if s.kind != ScenarioKind::SlowLeadCar => rwo || lwo.is_err(),
            _ => !(rw && !rwo) || lw.is_err() || lwo.is_err(),
        };
        AblationPair {
            kind: s.kind,
            variation: s.variation,
            with_factor: lw,
            without_factor: lwo,
            reacted_with: rw,
            reacted_without: rwo,
            flagged,
        }
    });
    AblationReport { toggle, pairs }
}

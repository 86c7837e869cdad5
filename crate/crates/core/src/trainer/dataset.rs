//! Training examples synthesised from scripted expert logs.
//!
//! The dataset keeps only compact descriptors (which log, which time, frame
//! jitter, dropout flag, perturbation offsets) and renders the stacks on
//! demand, optionally through an on-disk cache. A full desk-scale example is
//! about 2.7 MB of f32, so holding a few thousand of them in memory is not an
//! option on small machines.

use super::sub_seed;
use crate::error::{Error, Result};
use crate::formats;
use crate::geometry::{apply_perturbation, draw_offsets, PerturbOffsets, PerturbOutcome, PerturbParams, Pose, RasterFrame, Trajectory};
use crate::raster::{render_input, render_targets, InputStack, RenderConfig, Scene, TargetStack};
use crate::world::{
    generate_world, scripted_expert, DynamicAgent, ExpertConfig, ExpertStart, RoutePath, ScriptedAgent, World,
    WorldSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::str::FromStr;

/// Named render configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    Desk,
    Paper,
    Tiny,
}

impl Profile {
    pub fn render_config(self) -> RenderConfig {
        match self {
            Profile::Desk => RenderConfig::desk(),
            Profile::Paper => RenderConfig::paper(),
            Profile::Tiny => RenderConfig::tiny(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
            Profile::Tiny => "tiny",
        }
    }
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            "tiny" => Ok(Profile::Tiny),
            _ => Err(Error::Invalid(format!("unknown profile {s:?} (expected desk, paper or tiny)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_worlds: usize,
    /// Unperturbed examples; perturbed variants come on top.
    pub n_examples: usize,
    /// Fraction of examples that also get a perturbed variant.
    pub perturbed_fraction: f64,
    pub past_dropout_prob: f64,
    pub seed: u64,
    pub profile: Profile,
    pub perturb: PerturbParams,
    /// Examples whose mean speed over the window is below this are dropped.
    pub stationary_speed: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_worlds: 20,
            n_examples: 2000,
            perturbed_fraction: 0.5,
            past_dropout_prob: 0.5,
            seed: 0,
            profile: Profile::Desk,
            perturb: PerturbParams::default(),
            stationary_speed: 0.5,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let p = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_examples == 0 || self.n_worlds == 0 || !p(self.perturbed_fraction) || !p(self.past_dropout_prob) {
            return Err(Error::Invalid(format!("dataset spec out of range: {self:?}")));
        }
        self.perturb.validate()?;
        self.profile.render_config().validate()
    }

    pub fn hash(&self) -> String {
        hex_digest(toml::to_string(self).unwrap_or_default().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// One world with its traffic and the expert's logged drive through it.
#[derive(Debug, Clone)]
pub struct SourceLog {
    pub world: World,
    pub agents: Vec<ScriptedAgent>,
    pub route: Vec<usize>,
    pub path: RoutePath,
    pub log: Trajectory,
}

const LOG_DT: f64 = 0.2;
const LOG_HORIZON: f64 = 60.0;
const WORLD_LENGTH: f64 = 800.0;
const CAR: (f64, f64) = (4.5, 2.0);

fn moving_agent(id: usize, line: &crate::world::Polyline, s0: f64, speed: f64, horizon: f64) -> Result<ScriptedAgent> {
    let n = (horizon / 0.1).round() as usize + 1;
    let poses = (0..n)
        .map(|i| {
            let s = (s0 + speed * i as f64 * 0.1).min(line.length());
            let p = line.at(s);
            Pose::new(p.x, p.y, p.heading, if s >= line.length() { 0.0 } else { speed })
        })
        .collect();
    Ok(ScriptedAgent { agent: DynamicAgent { id, length: CAR.0, width: CAR.1 }, trajectory: Trajectory::new(0.0, 0.1, poses)? })
}

fn parked_agent(id: usize, line: &crate::world::Polyline, s: f64, d: f64, horizon: f64) -> Result<ScriptedAgent> {
    let p = line.at(s);
    let xy = p.offset(d);
    let pose = Pose::new(xy[0], xy[1], p.heading, 0.0);
    Ok(ScriptedAgent {
        agent: DynamicAgent { id, length: CAR.0, width: CAR.1 },
        trajectory: Trajectory::new(0.0, horizon, vec![pose, pose])?,
    })
}

/// World `index` of the training set. Worlds cycle through five themes
/// (straight with a lead car, curvy, stop signs, lights, parked cars) so every theme is covered.
pub fn source_log(seed: u64, index: usize) -> Result<SourceLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 1, index as u64));
    let theme = index % 5;
    let spec = WorldSpec {
        n_lanes: 1,
        curviness: match theme {
            0 => rng.gen_range(0.0..0.005),
            1 => rng.gen_range(0.02..0.05),
            _ => rng.gen_range(0.0..0.025),
        },
        with_stop_signs: theme == 2 || (theme == 4 && rng.gen_bool(0.5)),
        with_lights: theme == 3,
        opposing_lane: true,
        length: WORLD_LENGTH,
        speed_limit: rng.gen_range(8.0..12.0),
    };
    let world = generate_world(rng.gen(), &spec)?;
    let route = vec![0];
    let path = world.route_path(&route)?;
    let lane = world.lane(0).ok_or_else(|| Error::NoPath("missing lane 0".into()))?.centerline.clone();
    let s_start = 20.0;
    let mut agents = Vec::new();
    let horizon = LOG_HORIZON + 5.0;
    // oncoming traffic everywhere
    if let Some(opp) = world.lanes.iter().find(|l| l.id == 1) {
        let n = rng.gen_range(1..4);
        for _ in 0..n {
            let s0 = rng.gen_range(0.0..opp.centerline.length() * 0.8);
            let v = rng.gen_range(5.0..spec.speed_limit);
            agents.push(moving_agent(agents.len() + 1, &opp.centerline, s0, v, horizon)?);
        }
    }
    let lead = theme == 0 || (theme != 4 && rng.gen_bool(0.25));
    let n_parked = if theme == 4 {
        rng.gen_range(2..5)
    } else if !lead && rng.gen_bool(0.3) {
        1
    } else {
        0
    };
    for i in 0..n_parked {
        let s = s_start + 80.0 + i as f64 * rng.gen_range(90.0..140.0);
        let d = -rng.gen_range(1.9..2.4);
        if s < lane.length() - 40.0 {
            agents.push(parked_agent(agents.len() + 1, &lane, s, d, horizon)?);
        }
    }
    if lead {
        let s0 = s_start + rng.gen_range(25.0..50.0);
        let v = spec.speed_limit * rng.gen_range(0.4..0.8);
        agents.push(moving_agent(agents.len() + 1, &lane, s0, v, horizon)?);
    }
    let p = path.line.at(s_start);
    let v0 = rng.gen_range(3.0..spec.speed_limit);
    let start = ExpertStart::new(0.0, Pose::new(p.x, p.y, p.heading, v0));
    let log = scripted_expert(&world, &route, &agents, &start, LOG_HORIZON, LOG_DT, &ExpertConfig::default())?;
    Ok(SourceLog { world, agents, route, path, log })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleDesc {
    pub source: usize,
    /// Index into the source log of the current time.
    pub step: usize,
    pub jitter: f64,
    pub past_dropout: bool,
    pub perturb: Option<PerturbOffsets>,
    pub weight: f64,
    /// Index of the unperturbed example this one derives from (itself if unperturbed).
    pub base: usize,
}

impl ExampleDesc {
    pub fn is_perturbed(&self) -> bool {
        self.perturb.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: InputStack,
    pub targets: TargetStack,
    pub weight: f64,
    pub perturbed: bool,
    pub past_dropout: bool,
    pub frame: RasterFrame,
}

impl Example {
    /// Content hash over every channel and target, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.input.data {
            h.update(v.to_le_bytes());
        }
        h.update(formats::targets_bytes(&self.targets));
        h.update(self.weight.to_le_bytes());
        h.update([self.perturbed as u8, self.past_dropout as u8]);
        h.finalize().iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectCounts {
    pub stationary: usize,
    pub out_of_view: usize,
    pub curvature: usize,
    pub render: usize,
}

impl RejectCounts {
    pub fn total(&self) -> usize {
        self.stationary + self.out_of_view + self.curvature + self.render
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub render: RenderConfig,
    pub sources: Vec<SourceLog>,
    pub examples: Vec<ExampleDesc>,
    pub rejected: RejectCounts,
    pub cache: Option<PathBuf>,
}

/// Where the perturbation window starts and ends relative to the current
/// step: N steps either side, so the current pose is the perturbed midpoint
/// and the last target waypoint is the window's fixed end.
fn window(cfg: &RenderConfig) -> usize {
    cfg.n_future
}

fn eligible_steps(log: &Trajectory, cfg: &RenderConfig) -> std::ops::Range<usize> {
    let first = ((cfg.history() / log.dt).round() as usize).max(window(cfg));
    let last = log.len().saturating_sub(cfg.n_future + 1);
    first..last.max(first)
}

fn mean_speed(log: &Trajectory, step: usize, half: usize) -> f64 {
    let lo = step.saturating_sub(half);
    let hi = (step + half).min(log.len() - 1);
    log.poses[lo..=hi].iter().map(|p| p.speed).sum::<f64>() / (hi - lo + 1) as f64
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_perturbed(&self) -> usize {
        self.examples.iter().filter(|e| e.is_perturbed()).count()
    }

    /// Render example `i`, going through the cache when one is configured.
    pub fn example(&self, i: usize) -> Result<Example> {
        let desc = self.examples.get(i).ok_or_else(|| Error::Invalid(format!("example {i} out of range")))?;
        let Some(dir) = &self.cache else {
            return render_example(&self.sources[desc.source], desc, &self.render);
        };
        let key = hex_digest(format!("{}|{:?}|{:?}", self.spec.hash(), self.render, desc).as_bytes());
        let path = dir.join(format!("{key}.ex"));
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(ex) = formats::decode_example(&bytes, &self.render) {
                return Ok(ex);
            }
        }
        let ex = render_example(&self.sources[desc.source], desc, &self.render)?;
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{key}.tmp{}", std::process::id()));
        std::fs::write(&tmp, formats::encode_example(&ex))?;
        std::fs::rename(&tmp, &path)?;
        Ok(ex)
    }

    /// Indices of the examples a model trains on, in dataset order.
    pub fn stream(&self, use_perturbations: bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| use_perturbations || !self.examples[i].is_perturbed()).collect()
    }
}

/// Ego history (and future) for an example: the log, with the perturbation
/// window replaced when the example is perturbed.
pub(crate) fn ego_track(src: &SourceLog, desc: &ExampleDesc, cfg: &RenderConfig) -> Result<Trajectory> {
    let Some(offsets) = desc.perturb else {
        return Ok(src.log.clone());
    };
    let w = window(cfg);
    let (lo, hi) = (desc.step - w, desc.step + w);
    let seg = Trajectory::new(src.log.time_at(lo), src.log.dt, src.log.poses[lo..=hi].to_vec())?;
    let params = PerturbParams { max_curvature_per_m: f64::INFINITY, ..PerturbParams::default() };
    let out = apply_perturbation(&seg, offsets, &params)?;
    let Some(p) = out.accepted() else {
        return Err(Error::DegenerateInput("perturbation rejected".into()));
    };
    let mut poses = src.log.poses[..lo].to_vec();
    poses.extend_from_slice(&p.poses);
    Trajectory::new(src.log.start_time, src.log.dt, poses)
}

pub fn render_example(src: &SourceLog, desc: &ExampleDesc, cfg: &RenderConfig) -> Result<Example> {
    let track = ego_track(src, desc, cfg)?;
    let t_now = src.log.time_at(desc.step);
    let origin = track.sample(t_now);
    let frame = cfg.frame(origin, desc.jitter);
    let scene = Scene { world: &src.world, agents: &src.agents, route: Some(&src.path) };
    let input = render_input(scene, &track, &frame, t_now, cfg, desc.past_dropout)?;
    let targets = render_targets(scene, &track, &frame, t_now, cfg)?;
    Ok(Example { input, targets, weight: desc.weight, perturbed: desc.is_perturbed(), past_dropout: desc.past_dropout, frame })
}

/// Build the example descriptors. Every accepted descriptor is rendered once
/// here so out-of-view examples are rejected up front.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    build_with(spec, spec.profile.render_config())
}

fn build_with(spec: &DatasetSpec, cfg: RenderConfig) -> Result<Dataset> {
    spec.validate()?;
    let sources = crate::par::map(&(0..spec.n_worlds).collect::<Vec<_>>(), |&i| source_log(spec.seed, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 2, 0));
    let mut rejected = RejectCounts::default();
    let mut examples: Vec<ExampleDesc> = Vec::new();
    let max_attempts = spec.n_examples * 20 + 100;
    let mut attempts = 0;
    let mut n_base = 0;
    while n_base < spec.n_examples {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Invalid(format!(
                "could only build {n_base} of {} examples ({} rejected)",
                spec.n_examples,
                rejected.total()
            )));
        }
        let source = n_base % spec.n_worlds;
        let log = &sources[source].log;
        let range = eligible_steps(log, &cfg);
        if range.is_empty() {
            return Err(Error::InsufficientHistory(format!("log of world {source} is too short")));
        }
        let step = rng.gen_range(range);
        let jitter = if cfg.rotation_jitter_max > 0.0 {
            rng.gen_range(-cfg.rotation_jitter_max..=cfg.rotation_jitter_max)
        } else {
            0.0
        };
        let past_dropout = rng.gen_bool(spec.past_dropout_prob);
        let want_perturbed = rng.gen_bool(spec.perturbed_fraction);
        let perturb_seed = rng.gen::<u64>();
        if mean_speed(log, step, cfg.n_future) < spec.stationary_speed {
            rejected.stationary += 1;
            continue;
        }
        let base = examples.len();
        let desc = ExampleDesc { source, step, jitter, past_dropout, perturb: None, weight: 1.0, base };
        match render_example(&sources[source], &desc, &cfg) {
            Ok(_) => {}
            Err(Error::WaypointOutOfView { .. }) => {
                rejected.out_of_view += 1;
                continue;
            }
            Err(_) => {
                rejected.render += 1;
                continue;
            }
        }
        examples.push(desc);
        n_base += 1;
        if !want_perturbed {
            continue;
        }
        let offsets = draw_offsets(&spec.perturb, perturb_seed);
        let w = window(&cfg);
        let seg = Trajectory::new(log.time_at(step - w), log.dt, log.poses[step - w..=step + w].to_vec())?;
        match apply_perturbation(&seg, offsets, &spec.perturb)? {
            PerturbOutcome::Rejected { .. } => {
                rejected.curvature += 1;
                continue;
            }
            PerturbOutcome::Accepted { .. } => {}
        }
        let pdesc =
            ExampleDesc { perturb: Some(offsets), weight: spec.perturb.perturbed_weight, ..desc };
        match render_example(&sources[source], &pdesc, &cfg) {
            Ok(_) => examples.push(pdesc),
            Err(Error::WaypointOutOfView { .. }) => rejected.out_of_view += 1,
            Err(_) => rejected.render += 1,
        }
    }
    let cache = std::env::var_os("MIDSIM_CACHE").map(PathBuf::from);
    Ok(Dataset { spec: spec.clone(), render: cfg, sources, examples, rejected, cache })
}

/// Unperturbed evaluation examples (no frame jitter, no past dropout).
pub fn build_eval_set(spec: &DatasetSpec, n: usize) -> Result<Dataset> {
    let eval_spec = DatasetSpec { n_examples: n, perturbed_fraction: 0.0, past_dropout_prob: 0.0, ..spec.clone() };
    let cfg = RenderConfig { rotation_jitter_max: 0.0, ..spec.profile.render_config() };
    build_with(&eval_spec, cfg)
}

//! `midsim` command line.

mod config;

use clap::{Args, Parser, Subcommand};
use config::FileConfig;
use midsim::ablation::{reproduce_ablation, AblationConfig};
use midsim::error::{Error, Result};
use midsim::formats::{encode_example, to_gray, write_pgm, write_trace, TraceRow};
use midsim::geometry::{perturb_trajectory, PerturbOutcome, PerturbParams, Trajectory};
use midsim::losses::{ModelConfig, ModelId};
use midsim::manifest::RunManifest;
use midsim::net::NetConfig;
use midsim::raster::{render_input, render_targets, RenderConfig, Scene};
use midsim::report::simulate_report_csv;
use midsim::sim::{
    input_ablation_eval, open_loop_eval, run_suite, NetPolicy, OraclePolicy, Policy, StraightPolicy,
};
use midsim::trainer::{build_dataset, build_eval_set, train, DatasetSpec, Profile, TrainRun};
use midsim::world::file::{scenario_to_string, world_to_string};
use midsim::world::{
    ablate, generate_world, make_scenario, Ablation, ScenarioKind, WorldSpec,
    VARIATIONS,
};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "midsim", version, about = "Mid-level driving policy: data, training and closed-loop evaluation")]
struct Cli {
    /// Master seed for worlds, datasets, training and scenarios.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML file with dataset / train / sim overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Render profile: desk, paper or tiny.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a procedural world file.
    World(WorldArgs),
    /// Write one scenario variation to a file.
    Scenario(ScenarioArgs),
    /// Build the training dataset and write its index.
    Dataset(DatasetArgs),
    /// Train one model configuration.
    Train(TrainArgs),
    /// Run a closed-loop scenario suite.
    Simulate(SimulateArgs),
    /// Per-waypoint open-loop error on unperturbed examples.
    EvalOpenLoop(EvalArgs),
    /// Paired runs with and without one input factor.
    AblateInput(AblateArgs),
    /// Perturb a trajectory file.
    Perturb(PerturbArgs),
    /// Dump every input and target channel as graymaps.
    RenderDebug(RenderDebugArgs),
    /// Train the model matrix and write the outcome and open-loop tables.
    ReproduceAblation(ReproduceArgs),
}

#[derive(Args, Debug)]
struct WorldArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    lanes: usize,
    #[arg(long, default_value_t = 0.03)]
    curviness: f64,
    #[arg(long)]
    no_stop_signs: bool,
    #[arg(long)]
    no_lights: bool,
    #[arg(long)]
    no_opposing: bool,
    #[arg(long, default_value_t = 600.0)]
    length: f64,
    #[arg(long, default_value_t = 10.0)]
    speed_limit: f64,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// parked-car-nudge, perturb-recovery, slow-lead-car, stop-sign or traffic-light.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 0)]
    variation: usize,
    /// Remove one factor: stop-signs, agents, crosswalks or lights.
    #[arg(long)]
    ablate: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    examples: Option<usize>,
    #[arg(long)]
    worlds: Option<usize>,
    /// Also write the first K rendered examples in the binary example format.
    #[arg(long, default_value_t = 0)]
    dump: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// M0..M4.
    #[arg(long)]
    model: String,
    /// Dataset seed (defaults to --seed).
    #[arg(long)]
    dataset_seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    examples: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PolicyArgs {
    /// Checkpoint to drive with.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Built-in policy instead of a checkpoint: oracle or straight.
    #[arg(long)]
    policy: Option<String>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    scenario_suite: String,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long)]
    report: PathBuf,
    /// Write one per-tick trace CSV per variation here.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 200)]
    examples: usize,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    scenario_suite: String,
    /// stop-signs, agents, crosswalks or lights.
    #[arg(long)]
    toggle: String,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Debug)]
struct PerturbArgs {
    /// Trajectory text file (`dt=.. t0=..` header, then `x y theta speed` rows).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    jitter: f64,
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_3)]
    heading_jitter: f64,
    #[arg(long, default_value_t = 0.2)]
    max_curvature: f64,
}

#[derive(Args, Debug)]
struct RenderDebugArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    variation: usize,
    /// Scene time in seconds (default: the end of the warm-up).
    #[arg(long)]
    time: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated model ids (default M0,M1,M3,M4).
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Add M2 to the default set.
    #[arg(long)]
    with_m2: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    examples: Option<usize>,
    #[arg(long)]
    eval_examples: Option<usize>,
}

struct Ctx {
    seed: u64,
    profile: Profile,
    file: FileConfig,
    workers: usize,
    args: Vec<String>,
}

impl Ctx {
    fn manifest(&self, sub: &str) -> RunManifest {
        let mut m = RunManifest::start(sub, self.args.clone());
        m.seed("master", self.seed).setting("workers", self.workers).setting("profile", self.profile.name());
        m.hash("render", &self.profile.render_config());
        m
    }

    fn render(&self) -> RenderConfig {
        self.profile.render_config()
    }

    fn dataset_spec(&self, seed: u64) -> DatasetSpec {
        self.file.dataset(DatasetSpec { seed, profile: self.profile, ..Default::default() })
    }
}

fn parent(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::create_dir_all(parent(path))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

fn policy(ctx: &Ctx, p: &PolicyArgs) -> Result<Box<dyn Policy>> {
    match (&p.model, p.policy.as_deref()) {
        (Some(path), None) => Ok(Box::new(NetPolicy::load(path, ctx.render())?)),
        (None, Some("oracle")) => Ok(Box::new(OraclePolicy::default())),
        (None, Some("straight")) => Ok(Box::new(StraightPolicy::default())),
        (None, Some(other)) => Err(Error::Invalid(format!("unknown policy {other:?} (expected oracle or straight)"))),
        (Some(_), Some(_)) => Err(Error::Invalid("give either --model or --policy, not both".into())),
        (None, None) => Err(Error::Invalid("one of --model or --policy is required".into())),
    }
}

fn cmd_world(ctx: &Ctx, a: &WorldArgs) -> Result<()> {
    let spec = WorldSpec {
        n_lanes: a.lanes,
        curviness: a.curviness,
        with_stop_signs: !a.no_stop_signs,
        with_lights: !a.no_lights,
        opposing_lane: !a.no_opposing,
        length: a.length,
        speed_limit: a.speed_limit,
    };
    spec.validate()?;
    let mut m = ctx.manifest("world");
    m.hash("world_spec", &spec);
    let world = generate_world(ctx.seed, &spec)?;
    write_file(&a.out, world_to_string(&world)?)?;
    m.finish(&parent(&a.out))
}

fn cmd_scenario(ctx: &Ctx, a: &ScenarioArgs) -> Result<()> {
    let kind = ScenarioKind::from_name(&a.kind)?;
    let mut s = make_scenario(kind, a.variation, ctx.seed)?;
    if let Some(t) = &a.ablate {
        s = ablate(&s, Ablation::from_name(t)?);
    }
    let mut m = ctx.manifest("scenario");
    m.setting("kind", kind.name()).setting("variation", a.variation).hash("scenario", &s);
    write_file(&a.out, scenario_to_string(&s)?)?;
    m.finish(&parent(&a.out))
}

fn cmd_dataset(ctx: &Ctx, a: &DatasetArgs) -> Result<()> {
    let mut spec = ctx.dataset_spec(ctx.seed);
    if let Some(n) = a.examples {
        spec.n_examples = n;
    }
    if let Some(n) = a.worlds {
        spec.n_worlds = n;
    }
    let mut m = ctx.manifest("dataset");
    m.seed("dataset", spec.seed).hash("dataset", &spec);
    let ds = build_dataset(&spec)?;
    let mut index = String::from("index,world,step,jitter,past_dropout,perturbed,weight,hash\n");
    for (i, d) in ds.examples.iter().enumerate() {
        let ex = ds.example(i)?;
        let _ = writeln!(
            index,
            "{i},{},{},{:.6},{},{},{},{}",
            d.source,
            d.step,
            d.jitter,
            d.past_dropout as u8,
            d.is_perturbed() as u8,
            d.weight,
            ex.hash()
        );
        if i < a.dump {
            write_file(&a.out.join(format!("example_{i:05}.bin")), encode_example(&ex))?;
        }
    }
    write_file(&a.out.join("examples.csv"), index)?;
    let r = ds.rejected;
    let summary = format!(
        "examples = {}\nperturbed = {}\nrejected_stationary = {}\nrejected_out_of_view = {}\nrejected_curvature = {}\nrejected_render = {}\n",
        ds.len(),
        ds.n_perturbed(),
        r.stationary,
        r.out_of_view,
        r.curvature,
        r.render
    );
    write_file(&a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    m.finish(&a.out)
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let id: ModelId = a.model.parse()?;
    let mut spec = ctx.dataset_spec(a.dataset_seed.unwrap_or(ctx.seed));
    if let Some(n) = a.examples {
        spec.n_examples = n;
    }
    let mut run = ctx.file.train(TrainRun { seed: ctx.seed, ..TrainRun::new(ModelConfig::preset(id)) });
    if let Some(s) = a.steps {
        run.steps = s;
    }
    if let Some(c) = a.checkpoint_every {
        run.checkpoint_every = c;
    }
    run.validate()?;
    let mut m = ctx.manifest("train");
    m.seed("dataset", spec.seed).seed("run", run.seed);
    m.hash("dataset", &spec).hash("model", &run.model).hash("run", &run);
    m.hash("net", &NetConfig::for_render(&spec.profile.render_config()));
    let ds = build_dataset(&spec).map_err(Error::at("dataset"))?;
    eprintln!("dataset: {} examples ({} perturbed)", ds.len(), ds.n_perturbed());
    let every = (run.steps / 50).max(1);
    train(&ds, &run, Some(&a.out), &mut |r| {
        if r.step % every == 0 || r.step + 1 == run.steps {
            eprintln!("step {:>6} lr {:.2e} loss {:.4} ({:.1} ex/s)", r.step, r.lr, r.total, r.examples_per_sec);
        }
    })
    .map_err(Error::at("train"))?;
    m.finish(&a.out)
}

fn trace_rows(o: &midsim::sim::Outcome) -> Vec<TraceRow> {
    o.trace
        .iter()
        .map(|(t, s)| TraceRow { t: *t, x: s.pose.x, y: s.pose.y, theta: s.pose.theta, speed: s.pose.speed, steering: s.steering })
        .collect()
}

fn cmd_simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let kind = ScenarioKind::from_name(&a.scenario_suite)?;
    let sim = ctx.file.sim();
    sim.validate()?;
    let p = policy(ctx, &a.policy)?;
    let mut m = ctx.manifest("simulate");
    m.seed("scenario", ctx.seed).setting("suite", kind.name()).setting("policy", p.name()).hash("sim", &sim);
    let entries = run_suite(kind, p.as_ref(), ctx.seed, &sim);
    write_file(&a.report, simulate_report_csv(&entries))?;
    if let Some(dir) = &a.trace_dir {
        for e in &entries {
            if let Ok(o) = &e.outcome {
                let mut buf = Vec::new();
                write_trace(&mut buf, &trace_rows(o))?;
                write_file(&dir.join(format!("{}_{:02}.csv", kind.name(), e.variation)), buf)?;
            }
        }
    }
    let counts = midsim::report::OutcomeCounts::from_entries(&entries);
    for l in midsim::sim::OutcomeLabel::ALL {
        println!("{l:<10} {:>3}", counts.count(l));
    }
    if counts.invalid > 0 {
        println!("{:<10} {:>3}", "invalid", counts.invalid);
    }
    m.finish(&parent(&a.report))
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let spec = ctx.dataset_spec(ctx.seed ^ 0x5eed);
    let eval = build_eval_set(&spec, a.examples)?;
    let policy = NetPolicy::load(&a.model, eval.render)?;
    let mut m = ctx.manifest("eval-open-loop");
    m.seed("eval", spec.seed).hash("dataset", &spec).setting("model", a.model.display());
    let r = open_loop_eval(&policy.arch, &policy.params, &eval)?;
    let mut csv = String::from("waypoint,mean_l2_px\n");
    for (k, v) in r.per_waypoint.iter().enumerate() {
        let _ = writeln!(csv, "{k},{v:.6}");
        println!("w{k:<3} {v:.4}");
    }
    write_file(&a.report, csv)?;
    m.finish(&parent(&a.report))
}

fn cmd_ablate(ctx: &Ctx, a: &AblateArgs) -> Result<()> {
    let kind = ScenarioKind::from_name(&a.scenario_suite)?;
    let toggle = Ablation::from_name(&a.toggle)?;
    let sim = ctx.file.sim();
    sim.validate()?;
    let p = policy(ctx, &a.policy)?;
    let mut m = ctx.manifest("ablate-input");
    m.seed("scenario", ctx.seed).setting("suite", kind.name()).setting("toggle", &a.toggle).setting("policy", p.name());
    let scenarios = (0..VARIATIONS).map(|i| make_scenario(kind, i, ctx.seed)).collect::<Result<Vec<_>>>()?;
    let report = input_ablation_eval(p.as_ref(), &scenarios, toggle, &sim);
    let label = |r: &std::result::Result<midsim::sim::OutcomeLabel, String>| match r {
        Ok(l) => l.to_string(),
        Err(_) => "invalid".into(),
    };
    let mut csv = String::from("scenario,variation,with_factor,without_factor,reacted_with,reacted_without,flagged\n");
    for p in &report.pairs {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            p.kind.name(),
            p.variation,
            label(&p.with_factor),
            label(&p.without_factor),
            p.reacted_with as u8,
            p.reacted_without as u8,
            p.flagged as u8
        );
    }
    write_file(&a.report, csv)?;
    println!("flagged {} of {}", report.n_flagged(), report.pairs.len());
    m.finish(&parent(&a.report))
}

fn cmd_perturb(ctx: &Ctx, a: &PerturbArgs) -> Result<()> {
    let traj = Trajectory::from_text(&std::fs::read_to_string(&a.input)?)?;
    let params = PerturbParams {
        lateral_jitter_m: a.jitter,
        heading_jitter_rad: a.heading_jitter,
        max_curvature_per_m: a.max_curvature,
        ..PerturbParams::default()
    };
    let mut m = ctx.manifest("perturb");
    m.seed("perturb", ctx.seed).hash("perturb", &params);
    match perturb_trajectory(&traj, &params, ctx.seed)? {
        PerturbOutcome::Accepted { trajectory, offsets, max_curvature, .. } => {
            write_file(&a.out, trajectory.to_text())?;
            println!(
                "accepted: longitudinal {:.3} m, lateral {:.3} m, heading {:.3} rad, max curvature {:.4} 1/m",
                offsets.longitudinal, offsets.lateral, offsets.heading, max_curvature
            );
        }
        PerturbOutcome::Rejected { max_curvature, .. } => {
            println!("rejected: max curvature {max_curvature:.4} 1/m exceeds {}", a.max_curvature);
        }
    }
    m.finish(&parent(&a.out))
}

fn cmd_render_debug(ctx: &Ctx, a: &RenderDebugArgs) -> Result<()> {
    let kind = ScenarioKind::from_name(&a.scenario)?;
    let s = make_scenario(kind, a.variation, ctx.seed)?;
    let cfg = ctx.render();
    let path = s.route_path()?;
    // logged warm-up followed by the expert's drive
    let warm = s.warmup_log(cfg.dt)?;
    let rollout = s.expert_rollout(cfg.dt, &Default::default())?;
    let mut poses = warm.poses.clone();
    poses.extend_from_slice(&rollout.poses[1..]);
    let track = Trajectory::new(0.0, cfg.dt, poses)?;
    let t = a.time.unwrap_or(s.warmup);
    if !(t >= cfg.history() - 1e-9 && t <= track.end_time()) {
        return Err(Error::Invalid(format!("time {t} outside [{}, {:.1}]", cfg.history(), track.end_time())));
    }
    let frame = cfg.frame(track.sample(t), 0.0);
    let scene = Scene { world: &s.world, agents: &s.agents, route: Some(&path) };
    let input = render_input(scene, &track, &frame, t, &cfg, false)?;
    let targets = render_targets(scene, &track, &frame, t, &cfg)?;
    let mut m = ctx.manifest("render-debug");
    m.setting("scenario", kind.name()).setting("variation", a.variation).setting("time", t);
    std::fs::create_dir_all(&a.out)?;
    let (w, h) = (cfg.width, cfg.height);
    let mut index = format!("input_channels = {}\nwidth = {w}\nheight = {h}\n", input.channels());
    let dump = |name: String, data: &[f32], index: &mut String| -> Result<()> {
        let file = format!("{name}.pgm");
        let (lo, hi) = data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let mut buf = Vec::new();
        write_pgm(&mut buf, w, h, &to_gray(data, 0.0, 1.0))?;
        std::fs::write(a.out.join(&file), buf)?;
        let _ = writeln!(index, "{file} min={lo} max={hi}");
        Ok(())
    };
    for c in 0..input.channels() {
        dump(format!("in_{c:02}_{}", input.layout.name(c)), input.channel(c), &mut index)?;
    }
    let hw = w * h;
    for k in 0..targets.n {
        dump(format!("tgt_box_{k:02}"), &targets.boxes[k * hw..(k + 1) * hw], &mut index)?;
    }
    for k in 0..=targets.n {
        dump(format!("tgt_objects_{k:02}"), &targets.objects[k * hw..(k + 1) * hw], &mut index)?;
    }
    dump("tgt_road".into(), &targets.road, &mut index)?;
    dump("tgt_geometry".into(), &targets.geometry, &mut index)?;
    let mut wp = vec![0.0f32; hw];
    for &p in &targets.waypoint_pixel {
        wp[p] = 1.0;
    }
    dump("tgt_waypoints".into(), &wp, &mut index)?;
    std::fs::write(a.out.join("index.txt"), index)?;
    m.finish(&a.out)
}

fn cmd_reproduce(ctx: &Ctx, a: &ReproduceArgs) -> Result<()> {
    let mut cfg = ctx.file.ablation(AblationConfig::new(ctx.seed));
    cfg.dataset.profile = ctx.profile;
    if let Some(ids) = &a.models {
        cfg.models = ids.iter().map(|s| s.trim().parse()).collect::<Result<Vec<ModelId>>>()?;
    } else if a.with_m2 {
        cfg.models.insert(2, ModelId::M2);
    }
    if let Some(s) = a.steps {
        cfg.run.steps = s;
    }
    if let Some(n) = a.examples {
        cfg.dataset.n_examples = n;
    }
    if let Some(n) = a.eval_examples {
        cfg.eval_examples = n;
    }
    let mut m = ctx.manifest("reproduce-ablation");
    m.seed("dataset", cfg.dataset.seed).seed("run", cfg.run.seed).seed("scenario", cfg.scenario_seed);
    m.hash("dataset", &cfg.dataset).hash("run", &cfg.run).hash("sim", &cfg.sim);
    for &id in &cfg.models {
        m.hash(&format!("model.{id}"), &ModelConfig::preset(id));
    }
    let r = reproduce_ablation(&cfg, &a.out, &mut |s| eprintln!("{s}"))?;
    print!("{}\n{}", r.outcome_text, r.open_loop_text);
    m.finish(&a.out)
}

fn run(cli: &Cli, ctx: &Ctx) -> Result<()> {
    match &cli.cmd {
        Cmd::World(a) => cmd_world(ctx, a),
        Cmd::Scenario(a) => cmd_scenario(ctx, a),
        Cmd::Dataset(a) => cmd_dataset(ctx, a),
        Cmd::Train(a) => cmd_train(ctx, a),
        Cmd::Simulate(a) => cmd_simulate(ctx, a),
        Cmd::EvalOpenLoop(a) => cmd_eval(ctx, a),
        Cmd::AblateInput(a) => cmd_ablate(ctx, a),
        Cmd::Perturb(a) => cmd_perturb(ctx, a),
        Cmd::RenderDebug(a) => cmd_render_debug(ctx, a),
        Cmd::ReproduceAblation(a) => cmd_reproduce(ctx, a),
    }
}

fn main() -> ExitCode {
    // clap reports usage errors itself with exit code 2
    let cli = Cli::parse();
    let setup = || -> Result<Ctx> {
        let profile: Profile = cli.profile.parse()?;
        let file = FileConfig::load(cli.config.as_deref())?;
        let workers = cli.workers.unwrap_or_else(midsim::par::default_workers);
        if workers == 0 {
            return Err(Error::Invalid("--workers must be at least 1".into()));
        }
        Ok(Ctx { seed: cli.seed, profile, file, workers, args: std::env::args().collect() })
    };
    let result = setup().and_then(|ctx| midsim::par::with_workers(ctx.workers, || run(&cli, &ctx)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

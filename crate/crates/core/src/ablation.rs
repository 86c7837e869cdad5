//! The full model ablation: build the dataset, train each model, run the
//! closed-loop suites and the open-loop evaluation, and write the reports.

use crate::error::{Error, Result};
use crate::losses::{ModelConfig, ModelId};
use crate::net::{load_checkpoint, Arch, NetConfig, NetParams};
use crate::report::{
    open_loop_csv, open_loop_text, outcome_table_csv, outcome_table_text, simulate_report_csv, OpenLoopTable,
    OutcomeCounts, OutcomeTable, SUITES,
};
use crate::sim::{open_loop_eval, run_suite, NetPolicy, OpenLoopReport, SimConfig, SuiteEntry};
use crate::trainer::{build_dataset, build_eval_set, train, DatasetSpec, TrainRun};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub dataset: DatasetSpec,
    /// Shared training recipe; the model preset is filled in per id.
    pub run: TrainRun,
    pub models: Vec<ModelId>,
    /// Size of the unperturbed open-loop evaluation set.
    pub eval_examples: usize,
    pub scenario_seed: u64,
    pub sim: SimConfig,
}

impl AblationConfig {
    pub fn new(seed: u64) -> Self {
        AblationConfig {
            dataset: DatasetSpec { seed, ..Default::default() },
            run: TrainRun { seed, ..TrainRun::new(ModelConfig::preset(ModelId::M0)) },
            models: vec![ModelId::M0, ModelId::M1, ModelId::M3, ModelId::M4],
            eval_examples: 200,
            scenario_seed: seed,
            sim: SimConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.eval_examples == 0 {
            return Err(Error::Invalid("ablation needs at least one model and one evaluation example".into()));
        }
        self.dataset.validate()?;
        self.run.validate()?;
        self.sim.validate()
    }

    fn model_run(&self, id: ModelId) -> TrainRun {
        TrainRun { model: ModelConfig::preset(id), ..self.run.clone() }
    }

    /// Identity of one trained model: everything that determines its weights.
    pub fn model_key(&self, id: ModelId) -> String {
        let text = format!(
            "{}\n{}\n{}",
            env!("CARGO_PKG_VERSION"),
            toml::to_string(&self.dataset).unwrap_or_default(),
            toml::to_string(&self.model_run(id)).unwrap_or_default()
        );
        Sha256::digest(text.as_bytes()).iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ModelResult {
    pub id: ModelId,
    pub arch: Arch,
    pub params: NetParams<f32>,
    pub suites: Vec<(crate::world::ScenarioKind, Vec<SuiteEntry>)>,
    pub open_loop: OpenLoopReport,
    /// The checkpoint came from an earlier run with the same key.
    pub reused: bool,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub models: Vec<ModelResult>,
    pub outcomes: OutcomeTable,
    pub open_loop: OpenLoopTable,
    pub outcome_text: String,
    pub open_loop_text: String,
}

/// Train (or reuse) every model in `cfg.models`, evaluate, and write
/// `outcomes.txt`, `outcomes.csv`, `open_loop.txt`, `open_loop.csv` and one
/// directory per model to `out_dir`. A model directory whose `run.key`
/// matches is reused instead of retrained.
pub fn reproduce_ablation(cfg: &AblationConfig, out_dir: &Path, log: &mut dyn FnMut(&str)) -> Result<AblationResult> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    log("building dataset");
    let dataset = build_dataset(&cfg.dataset).map_err(Error::at("dataset"))?;
    let eval = build_eval_set(&DatasetSpec { seed: cfg.dataset.seed ^ 0x5eed, ..cfg.dataset.clone() }, cfg.eval_examples)
        .map_err(Error::at("eval dataset"))?;
    let arch = Arch::new(&NetConfig::for_render(&dataset.render))?;
    let mut models = Vec::new();
    for &id in &cfg.models {
        let dir = out_dir.join(id.to_string());
        let key = cfg.model_key(id);
        let key_path = dir.join("run.key");
        let ckpt = dir.join("final.ckpt");
        let cached = std::fs::read_to_string(&key_path).ok().filter(|k| k.trim() == key).and_then(|_| load_checkpoint(&ckpt, &arch).ok());
        let reused = cached.is_some();
        let params = match cached {
            Some(p) => {
                log(&format!("{id}: reusing {}", ckpt.display()));
                p
            }
            None => {
                let run = cfg.model_run(id);
                let every = (run.steps / 20).max(1);
                let out = train(&dataset, &run, Some(&dir), &mut |r| {
                    if r.step % every == 0 || r.step + 1 == run.steps {
                        log(&format!("{id}: step {} loss {:.4} ({:.1} ex/s)", r.step, r.total, r.examples_per_sec));
                    }
                })
                .map_err(Error::at("train"))?;
                std::fs::write(&key_path, format!("{key}\n"))?;
                out.params
            }
        };
        log(&format!("{id}: closed-loop suites"));
        let policy = NetPolicy::new(arch.clone(), params.clone(), dataset.render, &id.to_string());
        let suites: Vec<_> = SUITES.iter().map(|&k| (k, run_suite(k, &policy, cfg.scenario_seed, &cfg.sim))).collect();
        for (k, entries) in &suites {
            std::fs::write(dir.join(format!("suite_{}.csv", k.name())), simulate_report_csv(entries))?;
        }
        log(&format!("{id}: open-loop evaluation"));
        let open_loop = open_loop_eval(&arch, &params, &eval).map_err(Error::at("open-loop eval"))?;
        models.push(ModelResult { id, arch: arch.clone(), params, suites, open_loop, reused });
    }
    let names: Vec<String> = models.iter().map(|m| m.id.to_string()).collect();
    let outcomes = OutcomeTable {
        models: names.clone(),
        rows: SUITES
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, models.iter().map(|m| OutcomeCounts::from_entries(&m.suites[i].1)).collect()))
            .collect(),
    };
    let open_loop = OpenLoopTable { models: names, errors: models.iter().map(|m| m.open_loop.per_waypoint.clone()).collect() };
    let outcome_text = outcome_table_text(&outcomes, &cfg.sim);
    let ol_text = open_loop_text(&open_loop);
    std::fs::write(out_dir.join("outcomes.txt"), &outcome_text)?;
    std::fs::write(out_dir.join("outcomes.csv"), outcome_table_csv(&outcomes))?;
    std::fs::write(out_dir.join("open_loop.txt"), &ol_text)?;
    std::fs::write(out_dir.join("open_loop.csv"), open_loop_csv(&open_loop))?;
    Ok(AblationResult { models, outcomes, open_loop, outcome_text, open_loop_text: ol_text })
}

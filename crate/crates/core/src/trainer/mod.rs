//! Dataset synthesis, the training loop and the model ablation matrix.
//!
//! Recipe: SGD with momentum 0.9, batch 8, learning rate 1e-2 with cosine
//! decay, gradient norm clipped at 5, losses averaged over the batch.

mod dataset;

pub use dataset::{
    build_dataset, build_eval_set, render_example, source_log, Dataset, DatasetSpec, Example, ExampleDesc, Profile,
    RejectCounts, SourceLog,
};

use crate::error::{Error, Result};
use crate::losses::{example_losses, LossBundle, ModelConfig, ModelId, LOSS_NAMES};
use crate::net::{backward, forward_train, save_checkpoint, Arch, ExampleRef, NetConfig, NetParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Derive an independent seed for (`stream`, `index`) from `seed`
/// (SplitMix64 finaliser over a simple combination).
pub fn sub_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub model: ModelConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0: only the final one).
    pub checkpoint_every: usize,
}

impl TrainRun {
    pub fn new(model: ModelConfig) -> Self {
        TrainRun {
            model,
            steps: 5000,
            batch_size: 8,
            learning_rate: 1e-2,
            momentum: 0.9,
            clip_norm: 5.0,
            seed: 0,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum)
        {
            return Err(Error::Invalid(format!("train run out of range: {self:?}")));
        }
        Ok(())
    }

    /// Cosine decay from the base rate to zero over the run.
    pub fn lr_at(&self, step: usize) -> f64 {
        let f = step as f64 / self.steps as f64;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * f).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub lr: f64,
    /// Batch means of the unweighted loss terms, `LOSS_NAMES` order.
    pub losses: [f64; 10],
    /// Batch mean of the weighted total.
    pub total: f64,
    /// Fraction of batch examples whose imitation group was kept.
    pub w_imit_rate: f64,
    pub examples_per_sec: f64,
}

pub fn metrics_header() -> Vec<String> {
    let mut h = vec!["step".to_string(), "lr".to_string()];
    h.extend(LOSS_NAMES.iter().map(|s| s.to_string()));
    h.extend(["total", "w_imit_rate", "examples_per_sec"].map(String::from));
    h
}

pub fn write_metrics_csv<W: std::io::Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(metrics_header()).map_err(err)?;
    for r in rows {
        let mut rec = vec![r.step.to_string(), format!("{:e}", r.lr)];
        rec.extend(r.losses.iter().map(|v| format!("{v:e}")));
        rec.extend([format!("{:e}", r.total), format!("{}", r.w_imit_rate), format!("{:.2}", r.examples_per_sec)]);
        w.write_record(&rec).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Batch order: a fresh seeded permutation of the whole dataset per epoch,
/// filtered to the model's stream. Two models with the same seed therefore
/// see the unperturbed examples in the same order.
pub struct BatchStream<'a> {
    dataset: &'a Dataset,
    use_perturbations: bool,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> BatchStream<'a> {
    pub fn new(dataset: &'a Dataset, use_perturbations: bool, seed: u64) -> Result<Self> {
        if dataset.stream(use_perturbations).is_empty() {
            return Err(Error::Invalid("empty example stream".into()));
        }
        let mut s = BatchStream { dataset, use_perturbations, seed, epoch: 0, order: Vec::new(), pos: 0 };
        s.refill();
        Ok(s)
    }

    fn refill(&mut self) {
        let mut all: Vec<usize> = (0..self.dataset.len()).collect();
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(self.seed, 3, self.epoch)));
        let ex = &self.dataset.examples;
        self.order = all.into_iter().filter(|&i| self.use_perturbations || !ex[i].is_perturbed()).collect();
        self.pos = 0;
        self.epoch += 1;
    }

    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.refill();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Gradient of one example's weighted loss.
#[derive(Debug, Clone)]
pub struct ExampleGrad {
    pub bundle: LossBundle,
    pub total: f64,
    pub w_imit: f64,
    pub grad: Vec<f32>,
}

pub fn example_gradient(
    arch: &Arch,
    params: &NetParams<f32>,
    ex: &Example,
    model: &ModelConfig,
    draw_seed: u64,
) -> Result<ExampleGrad> {
    let w_imit = model.draw_w_imit(&mut ChaCha8Rng::seed_from_u64(draw_seed));
    let w = model.term_weights(w_imit, ex.weight);
    let r = ExampleRef {
        input: &ex.input.data,
        agent_box: ex.input.channel(ex.input.layout.agent_box()),
        objects0: ex.targets.objects_at(0),
        truth_pixels: &ex.targets.waypoint_pixel,
    };
    let fwd = forward_train(arch, params, r, model.uses_environment())?;
    let (bundle, seeds) = example_losses(&fwd, &ex.targets, &w)?;
    let total = crate::losses::weighted(&bundle, &w);
    let grad = backward(arch, params, &fwd, &seeds);
    Ok(ExampleGrad { bundle, total, w_imit, grad })
}

/// Batch-mean gradient and metrics.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    pub grad: Vec<f32>,
    pub losses: [f64; 10],
    pub total: f64,
    pub w_imit_rate: f64,
}

/// Evaluate a batch. Examples are processed on the rayon pool when
/// `parallel` is set (and the feature is enabled); the reduction always runs
/// in batch order so the result does not depend on scheduling.
pub fn batch_gradient(
    arch: &Arch,
    params: &NetParams<f32>,
    dataset: &Dataset,
    indices: &[usize],
    model: &ModelConfig,
    draw_seeds: &[u64],
    parallel: bool,
) -> Result<BatchGrad> {
    let jobs: Vec<(usize, u64)> = indices.iter().copied().zip(draw_seeds.iter().copied()).collect();
    let one = |&(i, s): &(usize, u64)| -> Result<ExampleGrad> {
        let ex = dataset.example(i)?;
        example_gradient(arch, params, &ex, model, s)
    };
    let results = if parallel { crate::par::map(&jobs, one) } else { crate::par::map_seq(&jobs, one) };
    let n = jobs.len() as f64;
    let mut grad = vec![0.0f32; arch.n_params];
    let mut losses = [0.0; 10];
    let (mut total, mut kept) = (0.0, 0usize);
    for r in results {
        let r = match r {
            Ok(r) => r,
            Err(Error::NonFiniteInput(_)) => return Err(Error::NonFiniteInput("loss")),
            Err(e) => return Err(e),
        };
        for (g, v) in grad.iter_mut().zip(&r.grad) {
            *g += v;
        }
        for (l, v) in losses.iter_mut().zip(r.bundle.values()) {
            *l += v / n;
        }
        total += r.total / n;
        kept += (r.w_imit > 0.0) as usize;
    }
    let inv = 1.0 / n as f32;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(BatchGrad { grad, losses, total, w_imit_rate: kept as f64 / n })
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub arch: Arch,
    pub params: NetParams<f32>,
    pub history: Vec<MetricsRow>,
}

/// Train from scratch. Checkpoints (`step_<n>.ckpt`, `final.ckpt`) and
/// `metrics.csv` go to `out_dir` when given; `on_step` sees every row.
pub fn train(
    dataset: &Dataset,
    run: &TrainRun,
    out_dir: Option<&Path>,
    on_step: &mut dyn FnMut(&MetricsRow),
) -> Result<TrainOutput> {
    run.validate()?;
    let arch = Arch::new(&NetConfig::for_render(&dataset.render))?;
    let mut params: NetParams<f32> = NetParams::init(&arch, sub_seed(run.seed, 5, 0));
    let mut velocity = vec![0.0f32; arch.n_params];
    let mut stream = BatchStream::new(dataset, run.model.use_perturbations, run.seed)?;
    let mut history = Vec::with_capacity(run.steps);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    for step in 0..run.steps {
        let t0 = Instant::now();
        let batch = stream.next_batch(run.batch_size);
        let seeds: Vec<u64> =
            (0..batch.len()).map(|j| sub_seed(run.seed, 4, (step * run.batch_size + j) as u64)).collect();
        let bg = match batch_gradient(&arch, &params, dataset, &batch, &run.model, &seeds, true) {
            Err(Error::NonFiniteInput(_)) => return Err(Error::DivergenceDetected { step, loss: f64::NAN }),
            r => r?,
        };
        if !bg.total.is_finite() || bg.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergenceDetected { step, loss: bg.total });
        }
        let norm = bg.grad.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
        let scale = if norm > run.clip_norm { (run.clip_norm / norm) as f32 } else { 1.0 };
        let lr = run.lr_at(step);
        let (mu, lr32) = (run.momentum as f32, lr as f32);
        for ((p, v), &g) in params.data.iter_mut().zip(&mut velocity).zip(&bg.grad) {
            *v = mu * *v + scale * g;
            *p -= lr32 * *v;
        }
        let secs = t0.elapsed().as_secs_f64().max(1e-9);
        let row = MetricsRow {
            step,
            lr,
            losses: bg.losses,
            total: bg.total,
            w_imit_rate: bg.w_imit_rate,
            examples_per_sec: batch.len() as f64 / secs,
        };
        on_step(&row);
        history.push(row);
        if let Some(dir) = out_dir {
            if run.checkpoint_every > 0 && (step + 1) % run.checkpoint_every == 0 && step + 1 < run.steps {
                save_checkpoint(&dir.join(format!("step_{}.ckpt", step + 1)), &arch, &params)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("final.ckpt"), &arch, &params)?;
        write_metrics_csv(std::fs::File::create(dir.join("metrics.csv"))?, &history)?;
    }
    Ok(TrainOutput { arch, params, history })
}

/// Train every requested model on the same dataset with the same run seed,
/// so the runs differ only in their model configuration.
pub fn experiment_matrix(
    ids: &[ModelId],
    dataset: &Dataset,
    base: &TrainRun,
    out_dir: Option<&Path>,
    on_step: &mut dyn FnMut(ModelId, &MetricsRow),
) -> Result<Vec<(ModelId, TrainOutput)>> {
    if ids.is_empty() {
        return Err(Error::Invalid("experiment matrix needs at least one model".into()));
    }
    let mut out = Vec::new();
    for &id in ids {
        let run = TrainRun { model: ModelConfig::preset(id), ..base.clone() };
        let dir = out_dir.map(|d| d.join(id.to_string()));
        let res = train(dataset, &run, dir.as_deref(), &mut |r| on_step(id, r))?;
        out.push((id, res));
    }
    Ok(out)
}

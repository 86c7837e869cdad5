//! Optional TOML overrides passed with `--config`. Every field is optional;
//! whatever is absent keeps its built-in default.

use midsim::ablation::AblationConfig;
use midsim::error::{Error, Result};
use midsim::sim::SimConfig;
use midsim::trainer::{DatasetSpec, TrainRun};
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetOverrides {
    pub n_worlds: Option<usize>,
    pub n_examples: Option<usize>,
    pub perturbed_fraction: Option<f64>,
    pub past_dropout_prob: Option<f64>,
    pub stationary_speed: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub clip_norm: Option<f64>,
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub dataset: DatasetOverrides,
    #[serde(default)]
    pub train: TrainOverrides,
    /// Replaces the simulator settings wholesale when present.
    pub sim: Option<SimConfig>,
    pub eval_examples: Option<usize>,
}

macro_rules! set {
    ($dst:expr, $src:expr, $($f:ident),*) => {
        $(if let Some(v) = $src.$f { $dst.$f = v; })*
    };
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn dataset(&self, mut d: DatasetSpec) -> DatasetSpec {
        set!(d, self.dataset, n_worlds, n_examples, perturbed_fraction, past_dropout_prob, stationary_speed);
        d
    }

    pub fn train(&self, mut r: TrainRun) -> TrainRun {
        set!(r, self.train, steps, batch_size, learning_rate, momentum, clip_norm, checkpoint_every);
        r
    }

    pub fn sim(&self) -> SimConfig {
        self.sim.unwrap_or_default()
    }

    pub fn ablation(&self, mut a: AblationConfig) -> AblationConfig {
        a.dataset = self.dataset(a.dataset);
        a.run = self.train(a.run);
        a.sim = self.sim();
        if let Some(n) = self.eval_examples {
            a.eval_examples = n;
        }
        a
    }
}

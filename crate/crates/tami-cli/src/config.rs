//! Run configuration: a TOML file with one section per subsystem, every
//! field optional with documented defaults, unknown keys rejected. Command
//! line flags override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tami_core::error::{Error, Result};
use tami_core::events::SplitSpec;
use tami_core::eval::{NegKind, NegStrategy};
use tami_core::lha::Aggregator;
use tami_core::model::{ModelConfig, NeighborSampling, TrainConfig};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub lha: LhaSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Event CSV in the canonical format (`src,dst,ts[,f0..fk]`).
    pub path: Option<PathBuf>,
    /// Node-feature sidecar (`node,f0..fk`); defaults to a `nodes.csv`
    /// next to the events when one exists.
    pub node_features: Option<PathBuf>,
    /// Remap node labels to dense ids by first appearance. Leave off for
    /// canonical files, which already use dense integer ids.
    pub densify: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d: usize,
    pub d_t: usize,
    /// Historical edge embedding dimension; 0 means "same as d".
    pub d_r: usize,
    pub m: usize,
    pub use_lte: bool,
    pub use_lha: bool,
    pub trainable_omega: bool,
    pub sampling: String,
    pub token_hidden: Vec<usize>,
    pub combine_hidden: Vec<usize>,
    /// Empty means one hidden layer of width `d_r`.
    pub predictor_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d: 32,
            d_t: 16,
            d_r: 0,
            m: 10,
            use_lte: true,
            use_lha: true,
            trainable_omega: true,
            sampling: "recent".into(),
            token_hidden: vec![],
            combine_hidden: vec![],
            predictor_hidden: vec![],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LhaSection {
    pub gamma: f64,
    pub k: usize,
    pub aggregator: String,
}

impl Default for LhaSection {
    fn default() -> Self {
        LhaSection { gamma: 0.9, k: 1, aggregator: "most_recent".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { train_frac: 0.70, val_frac: 0.15 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Node fraction withheld from training for unseen-node evaluation.
    pub inductive_fraction: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 1e-4,
            batch_size: 200,
            max_epochs: 100,
            patience: 20,
            seed: 0,
            inductive_fraction: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// random | historical | inductive
    pub strategy: String,
    /// Negatives per positive.
    pub k: usize,
    pub seed: u64,
    /// Window for appearance-index and mutual-visibility diagnostics.
    pub appearance_m: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { strategy: "random".into(), k: 1, seed: 0, appearance_m: 20 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?.validate()?;
        self.split_spec()?;
        self.train_config()?.validate()?;
        self.neg_strategy()?;
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let d_r = if m.d_r == 0 { m.d } else { m.d_r };
        let sampling = match m.sampling.as_str() {
            "recent" => NeighborSampling::Recent,
            "uniform" => NeighborSampling::Uniform,
            other => {
                return Err(Error::Config(format!(
                    "unknown sampling {other:?} (expected recent|uniform)"
                )))
            }
        };
        let aggregator = match self.lha.aggregator.as_str() {
            "most_recent" => Aggregator::MostRecent,
            "mean" => Aggregator::Mean,
            "max" => Aggregator::Max,
            other => {
                return Err(Error::Config(format!(
                    "unknown aggregator {other:?} (expected most_recent|mean|max)"
                )))
            }
        };
        Ok(ModelConfig {
            m: m.m,
            d: m.d,
            d_t: m.d_t,
            d_r,
            use_lte: m.use_lte,
            use_lha: m.use_lha,
            trainable_omega: m.trainable_omega,
            sampling,
            gamma: self.lha.gamma,
            k: self.lha.k,
            aggregator,
            token_hidden: m.token_hidden.clone(),
            combine_hidden: m.combine_hidden.clone(),
            predictor_hidden: if m.predictor_hidden.is_empty() {
                vec![d_r]
            } else {
                m.predictor_hidden.clone()
            },
            seed: m.seed,
        })
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        SplitSpec::new(self.split.train_frac, self.split.val_frac)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            seed: self.train.seed,
            inductive_fraction: self.train.inductive_fraction,
        })
    }

    pub fn neg_strategy(&self) -> Result<NegStrategy> {
        let kind = parse_neg_kind(&self.eval.strategy)?;
        Ok(NegStrategy { kind, seed: self.eval.seed, k: self.eval.k })
    }
}

pub fn parse_neg_kind(s: &str) -> Result<NegKind> {
    match s {
        "random" | "rnd" => Ok(NegKind::Random),
        "historical" | "hist" => Ok(NegKind::Historical),
        "inductive" | "ind" => Ok(NegKind::Inductive),
        other => Err(Error::Config(format!(
            "unknown negative sampling strategy {other:?} (expected rnd|hist|ind)"
        ))),
    }
}

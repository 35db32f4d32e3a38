//! Temporal-graph link prediction with log time encoding and link-history
//! aggregation, plus the statistical and evaluation machinery around it:
//! chronological event storage, Pareto/skewness verification, a minimal
//! trainable neighbor-aggregation predictor, trainless edge-memorization
//! baselines, and a ranking evaluation harness with pluggable negative
//! sampling.
//!
//! ```
//! use tami_core::events::{chronological_split, SplitSpec};
//! use tami_core::eval::{evaluate, EvalOptions, NegStrategy};
//! use tami_core::model::{train, ModelConfig, TamiModel, TrainConfig};
//! use tami_core::synth::{synth_pareto_graph, SynthSpec};
//!
//! let g = synth_pareto_graph(&SynthSpec {
//!     num_nodes: 40,
//!     num_frequent_pairs: 10,
//!     num_infrequent_pairs: 25,
//!     pareto_shape: 3.5,
//!     pareto_scale: 30.0,
//!     horizon: 400.0,
//!     seed: 7,
//!     node_feature_dim: 4,
//! })?;
//! let split = chronological_split(&g, SplitSpec::default())?;
//!
//! let mut cfg = ModelConfig::new(8, 4);
//! cfg.m = 5;
//! let mut model = TamiModel::for_graph(cfg, &g)?;
//! let tcfg = TrainConfig { lr: 3e-3, max_epochs: 2, patience: 2, ..Default::default() };
//! let log = train(&mut model, &g, &split, &tcfg)?;
//!
//! let opts = EvalOptions::transductive(NegStrategy::random(0, 1));
//! let report = evaluate(&mut model, &g, &split, &opts)?;
//! assert!(report.ap > 0.5 && log.best_val_ap > 0.5);
//! # Ok::<(), tami_core::Error>(())
//! ```

pub mod edgebank;
pub mod encoding;
pub mod error;
pub mod gradcheck;
pub mod eval;
pub mod events;
pub mod io;
pub mod lha;
pub mod model;
pub mod nn;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};

/// FNV-1a over a byte slice; used to fingerprint configurations in
/// checkpoints and snapshots.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

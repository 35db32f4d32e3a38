//! Synthetic heterogeneous interaction graphs: a set of frequent pairs
//! interacting on short fixed periods mixed with infrequent pairs whose
//! inter-event intervals are Pareto distributed. The mix produces the
//! heavy-tailed interval statistics seen in real interaction logs, at desk
//! scale.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{NodeId, TemporalGraph};
use crate::stats::ParetoParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_nodes: usize,
    pub num_frequent_pairs: usize,
    pub num_infrequent_pairs: usize,
    /// Pareto shape for infrequent-pair intervals; must exceed 3 so the
    /// interval skewness statistics stay finite.
    pub pareto_shape: f64,
    /// Pareto scale; also sets the frequent-pair periods (about a fifth of
    /// it), keeping frequent interactions well below the smallest
    /// infrequent interval.
    pub pareto_scale: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Dimension of random per-node identity features (0 for none). Drawn
    /// after the event stream, so changing this leaves the events alone.
    #[serde(default)]
    pub node_feature_dim: usize,
}

/// Generates the two-population graph described by `spec`. Identical specs
/// produce byte-identical event lists.
pub fn synth_pareto_graph(spec: &SynthSpec) -> Result<TemporalGraph> {
    if spec.pareto_shape <= 3.0 {
        return Err(Error::Config(format!(
            "pareto shape must exceed 3 so skewness statistics stay finite, got {}",
            spec.pareto_shape
        )));
    }
    ParetoParams::new(spec.pareto_shape, spec.pareto_scale)?;
    if spec.num_nodes < 2 {
        return Err(Error::Config("need at least 2 nodes".into()));
    }
    if spec.horizon.is_nan() || spec.horizon <= 0.0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let total_pairs = spec.num_frequent_pairs + spec.num_infrequent_pairs;
    let available = spec.num_nodes * (spec.num_nodes - 1) / 2;
    if total_pairs > available {
        return Err(Error::Config(format!(
            "{total_pairs} pairs requested but only {available} distinct pairs exist"
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut used: HashSet<(NodeId, NodeId)> = HashSet::new();
    let mut draw_pair = |rng: &mut ChaCha12Rng| -> (NodeId, NodeId) {
        loop {
            let u = rng.random_range(0..spec.num_nodes as NodeId);
            let v = rng.random_range(0..spec.num_nodes as NodeId);
            if u == v {
                continue;
            }
            let key = crate::events::pair_key(u, v);
            if used.insert(key) {
                return key;
            }
        }
    };

    let mut rows: Vec<(NodeId, NodeId, f64, Vec<f64>)> = Vec::new();
    let base_period = spec.pareto_scale / 5.0;
    for _ in 0..spec.num_frequent_pairs {
        let (u, v) = draw_pair(&mut rng);
        let period = base_period * rng.random_range(0.8..1.2);
        let mut t = rng.random_range(0.0..period);
        while t <= spec.horizon {
            rows.push((u, v, t, vec![]));
            t += period;
        }
    }
    let inv = -1.0 / spec.pareto_shape;
    for _ in 0..spec.num_infrequent_pairs {
        let (u, v) = draw_pair(&mut rng);
        let mut t = rng.random_range(0.0..spec.pareto_scale);
        while t <= spec.horizon {
            rows.push((u, v, t, vec![]));
            let u01: f64 = 1.0 - rng.random::<f64>();
            t += spec.pareto_scale * u01.powf(inv);
        }
    }
    let node_features = (spec.node_feature_dim > 0).then(|| {
        (0..spec.num_nodes)
            .map(|_| {
                (0..spec.node_feature_dim)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect()
    });
    TemporalGraph::new(rows, spec.num_nodes, node_features)
}

//! Chronological event store for continuous-time interaction graphs.
//!
//! A [`TemporalGraph`] is an immutable, chronologically sorted list of
//! interaction events plus a per-node index of the events each node
//! participates in. All temporal queries (`recent_neighbors`,
//! `uniform_neighbors`) are strict-past lookups: only events with `t < tau`
//! are visible at query time `tau`.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u32;

/// One unsorted input row: `(src, dst, timestamp, edge features)`.
pub type RawEvent = (NodeId, NodeId, f64, Vec<f64>);

/// Unordered pair key. Interactions are treated symmetrically, so every
/// pair-keyed structure uses `(min, max)`.
pub fn pair_key(u: NodeId, v: NodeId) -> (NodeId, NodeId) {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

/// One timestamped interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
    pub edge_features: Vec<f64>,
    /// Ordinal position in the global chronological order.
    pub index: usize,
}

impl Event {
    pub fn is_self_loop(&self) -> bool {
        self.src == self.dst
    }

    /// The endpoint opposite to `node`; for self-loops this is `node` itself.
    pub fn other(&self, node: NodeId) -> NodeId {
        if self.src == node {
            self.dst
        } else {
            self.src
        }
    }
}

/// A reference to one historical interaction of a node, as returned by
/// neighbor queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborRef {
    pub neighbor: NodeId,
    pub t: f64,
    pub event_index: usize,
}

/// Immutable event log with per-node interaction indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalGraph {
    events: Vec<Event>,
    num_nodes: usize,
    node_features: Option<Vec<Vec<f64>>>,
    /// Max timestamp over all events (0 for an empty log).
    horizon: f64,
    /// For each node, ascending event indices of the events it appears in.
    node_events: Vec<Vec<usize>>,
    self_loops: usize,
}

impl TemporalGraph {
    /// Builds a graph from raw `(src, dst, t, edge_features)` rows.
    ///
    /// Rows are sorted stably by `(t, input order)`, so events sharing a
    /// timestamp keep their input order. Edge feature dimensions must agree
    /// across all rows and every node id must be `< num_nodes`.
    pub fn new(
        rows: Vec<RawEvent>,
        num_nodes: usize,
        node_features: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if let Some(nf) = &node_features {
            if nf.len() != num_nodes {
                return Err(Error::Shape(format!(
                    "node feature matrix has {} rows for {num_nodes} nodes",
                    nf.len()
                )));
            }
            if let Some(first) = nf.first() {
                let d = first.len();
                if nf.iter().any(|f| f.len() != d) {
                    return Err(Error::Shape("ragged node feature matrix".into()));
                }
            }
        }
        let feat_dim = rows.first().map(|r| r.3.len()).unwrap_or(0);
        for (i, (src, dst, t, feats)) in rows.iter().enumerate() {
            if (*src as usize) >= num_nodes || (*dst as usize) >= num_nodes {
                return Err(Error::Data(format!(
                    "event {i} references node {} outside 0..{num_nodes}",
                    (*src).max(*dst)
                )));
            }
            if !t.is_finite() || *t < 0.0 {
                return Err(Error::Data(format!("event {i} has invalid timestamp {t}")));
            }
            if feats.len() != feat_dim {
                return Err(Error::Data(format!(
                    "event {i} has {} edge features, expected {feat_dim}",
                    feats.len()
                )));
            }
        }

        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| rows[a].2.total_cmp(&rows[b].2));
        let mut events = Vec::with_capacity(rows.len());
        // Consume rows in sorted order without cloning feature vectors.
        let mut slots: Vec<Option<RawEvent>> = rows.into_iter().map(Some).collect();
        for (index, &orig) in order.iter().enumerate() {
            let (src, dst, t, edge_features) = slots[orig].take().expect("row consumed once");
            events.push(Event {
                src,
                dst,
                t,
                edge_features,
                index,
            });
        }

        let mut g = TemporalGraph {
            events,
            num_nodes,
            node_features,
            horizon: 0.0,
            node_events: Vec::new(),
            self_loops: 0,
        };
        g.horizon = g.events.last().map(|e| e.t).unwrap_or(0.0);
        g.self_loops = g.events.iter().filter(|e| e.is_self_loop()).count();
        g.node_events = g.rebuild_node_index();
        Ok(g)
    }

    /// Recomputes the per-node index from the event list. The stored index
    /// is always identical to this.
    pub fn rebuild_node_index(&self) -> Vec<Vec<usize>> {
        let mut idx = vec![Vec::new(); self.num_nodes];
        for e in &self.events {
            idx[e.src as usize].push(e.index);
            if e.dst != e.src {
                idx[e.dst as usize].push(e.index);
            }
        }
        idx
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn self_loop_count(&self) -> usize {
        self.self_loops
    }

    pub fn node_features(&self) -> Option<&[Vec<f64>]> {
        self.node_features.as_deref()
    }

    pub fn node_feature_dim(&self) -> usize {
        self.node_features
            .as_ref()
            .and_then(|nf| nf.first().map(|f| f.len()))
            .unwrap_or(0)
    }

    pub fn edge_feature_dim(&self) -> usize {
        self.events.first().map(|e| e.edge_features.len()).unwrap_or(0)
    }

    pub fn node_feature(&self, node: NodeId) -> Option<&[f64]> {
        self.node_features
            .as_ref()
            .map(|nf| nf[node as usize].as_slice())
    }

    /// Ascending event indices of the events `node` participates in.
    pub fn node_history(&self, node: NodeId) -> Result<&[usize]> {
        self.node_events
            .get(node as usize)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Data(format!("node {node} out of range")))
    }

    fn history_before(&self, node: NodeId, tau: f64) -> Result<&[usize]> {
        let hist = self.node_history(node)?;
        // Events are globally sorted by (t, index), so a node's history is
        // sorted the same way; binary-search the strict-past boundary.
        let cut = hist.partition_point(|&i| self.events[i].t < tau);
        Ok(&hist[..cut])
    }

    /// Up to `m` most recent interactions of `node` strictly before `tau`,
    /// newest first. Same-timestamp ties order by descending event index.
    pub fn recent_neighbors(&self, node: NodeId, tau: f64, m: usize) -> Result<Vec<NeighborRef>> {
        if m == 0 {
            return Err(Error::Config("neighbor count m must be >= 1".into()));
        }
        let past = self.history_before(node, tau)?;
        Ok(past
            .iter()
            .rev()
            .take(m)
            .map(|&i| self.neighbor_ref(node, i))
            .collect())
    }

    /// Uniform sample without replacement from all interactions of `node`
    /// strictly before `tau`; at most `m` entries, newest first.
    pub fn uniform_neighbors(
        &self,
        node: NodeId,
        tau: f64,
        m: usize,
        seed: u64,
    ) -> Result<Vec<NeighborRef>> {
        if m == 0 {
            return Err(Error::Config("neighbor count m must be >= 1".into()));
        }
        let past = self.history_before(node, tau)?;
        if past.len() <= m {
            return Ok(past.iter().rev().map(|&i| self.neighbor_ref(node, i)).collect());
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, past.len(), m).into_vec();
        picked.sort_unstable_by(|a, b| b.cmp(a));
        Ok(picked.into_iter().map(|p| self.neighbor_ref(node, past[p])).collect())
    }

    fn neighbor_ref(&self, node: NodeId, event_index: usize) -> NeighborRef {
        let e = &self.events[event_index];
        NeighborRef {
            neighbor: e.other(node),
            t: e.t,
            event_index,
        }
    }

    /// Chronological event indices per unordered pair.
    pub fn pair_events(&self) -> BTreeMap<(NodeId, NodeId), Vec<usize>> {
        let mut map: BTreeMap<(NodeId, NodeId), Vec<usize>> = BTreeMap::new();
        for e in &self.events {
            map.entry(pair_key(e.src, e.dst)).or_default().push(e.index);
        }
        map
    }

    /// Consecutive interaction intervals, pooled over every unordered pair
    /// with at least two interactions. Pairs iterate in key order so the
    /// result is deterministic.
    pub fn interaction_intervals(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, idxs) in self.pair_events() {
            for w in idxs.windows(2) {
                out.push(self.events[w[1]].t - self.events[w[0]].t);
            }
        }
        out
    }

    /// Grows the node-id space to `n` (isolated nodes are not representable
    /// in the event CSV, but a feature sidecar may enumerate them). Only
    /// valid during ingestion, before features are attached.
    pub fn expand_num_nodes(&mut self, n: usize) -> Result<()> {
        if n < self.num_nodes {
            return Err(Error::Shape(format!(
                "cannot shrink node space from {} to {n}",
                self.num_nodes
            )));
        }
        if self.node_features.is_some() {
            return Err(Error::Shape("node space fixed once features are attached".into()));
        }
        self.node_events.resize(n, Vec::new());
        self.num_nodes = n;
        Ok(())
    }

    /// Attaches a node-feature matrix during ingestion (one row per node,
    /// uniform width). The graph is immutable once queries begin.
    pub fn attach_node_features(&mut self, features: Vec<Vec<f64>>) -> Result<()> {
        if features.len() != self.num_nodes {
            return Err(Error::Shape(format!(
                "{} feature rows for {} nodes",
                features.len(),
                self.num_nodes
            )));
        }
        let d = features.first().map(|f| f.len()).unwrap_or(0);
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::Shape("ragged node feature matrix".into()));
        }
        self.node_features = Some(features);
        Ok(())
    }

    /// Copy of the graph keeping only events where neither endpoint is
    /// masked. Node ids and `num_nodes` are unchanged; event indices are
    /// reassigned within the filtered log.
    pub fn without_nodes(&self, masked: &std::collections::HashSet<NodeId>) -> Result<TemporalGraph> {
        let rows = self
            .events
            .iter()
            .filter(|e| !masked.contains(&e.src) && !masked.contains(&e.dst))
            .map(|e| (e.src, e.dst, e.t, e.edge_features.clone()))
            .collect();
        TemporalGraph::new(rows, self.num_nodes, self.node_features.clone())
    }
}

/// Fractional chronological split request.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64) -> Result<Self> {
        let ok = train_frac > 0.0
            && train_frac < 1.0
            && val_frac > 0.0
            && val_frac < 1.0
            && train_frac + val_frac < 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "split fractions must lie in (0,1) with train+val < 1, got {train_frac}/{val_frac}"
            )));
        }
        Ok(SplitSpec { train_frac, val_frac })
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_frac: 0.70, val_frac: 0.15 }
    }
}

/// Contiguous index ranges partitioning the event list, plus the boundary
/// timestamps (timestamps of the last event in train and in val).
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub t_train_end: f64,
    pub t_val_end: f64,
    pub warnings: Vec<String>,
}

/// Splits the event list chronologically. Train takes the first
/// `floor(train_frac * |E|)` events and val the next `floor(val_frac * |E|)`.
///
/// A boundary never separates events sharing one timestamp: the earlier
/// range absorbs the whole tie group, which keeps simultaneous events from
/// leaking across ranges. Ranges emptied by absorption are reported as
/// warnings.
pub fn chronological_split(g: &TemporalGraph, spec: SplitSpec) -> Result<Split> {
    SplitSpec::new(spec.train_frac, spec.val_frac)?;
    let n = g.len();
    if n == 0 {
        return Err(Error::Data("cannot split an empty event list".into()));
    }
    let events = g.events();
    let absorb = |mut b: usize| -> usize {
        while b > 0 && b < n && events[b].t == events[b - 1].t {
            b += 1;
        }
        b
    };
    let b1 = absorb((spec.train_frac * n as f64).floor() as usize);
    let b2 = absorb((b1 + (spec.val_frac * n as f64).floor() as usize).min(n));
    let mut warnings = Vec::new();
    if b1 >= n || b1 >= b2 {
        warnings.push("validation range is empty after tie absorption".to_string());
    }
    if b2 >= n {
        warnings.push("test range is empty after tie absorption".to_string());
    }
    let t_train_end = events[b1.saturating_sub(1).min(n - 1)].t;
    let t_val_end = events[b2.saturating_sub(1).min(n - 1)].t;
    Ok(Split {
        train: 0..b1.min(n),
        val: b1.min(n)..b2.min(n),
        test: b2.min(n)..n,
        t_train_end,
        t_val_end,
        warnings,
    })
}

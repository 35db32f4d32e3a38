//! Link history aggregation: per-node-pair ring buffers of historical edge
//! embeddings.
//!
//! Whenever a pair interacts, the new entry is the exponentially weighted
//! moving average `r = gamma * c + (1 - gamma) * r_prev`, where `c` encodes
//! the pair's current node states and `r_prev` is the newest stored entry
//! (zero for cold pairs). Only the most recent `k` entries are retained per
//! pair, but because the recurrence folds all history into the newest entry,
//! the newest value is independent of `k`.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::collections::VecDeque;

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{pair_key, NodeId};
use crate::nn::{Activation, DenseLayer, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// Newest stored entry.
    MostRecent,
    /// Arithmetic mean of stored entries.
    Mean,
    /// Element-wise max over entries passed through a dense relu layer.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LhaConfig {
    /// Forgetting rate in [0, 1]; 1 discards all history at each update.
    pub gamma: f64,
    /// Per-pair capacity.
    pub k: usize,
    /// Edge embedding dimension.
    pub d_r: usize,
    pub aggregator: Aggregator,
}

impl LhaConfig {
    pub fn new(gamma: f64, k: usize, d_r: usize, aggregator: Aggregator) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma must lie in [0,1], got {gamma}")));
        }
        if k == 0 || d_r == 0 {
            return Err(Error::Config("capacity k and dimension d_r must be >= 1".into()));
        }
        Ok(LhaConfig { gamma, k, d_r, aggregator })
    }

    /// Most-recent aggregation with capacity 1.
    pub fn default_with(gamma: f64, d_r: usize) -> Result<Self> {
        LhaConfig::new(gamma, 1, d_r, Aggregator::MostRecent)
    }

    fn fingerprint(&self) -> u64 {
        let agg = match self.aggregator {
            Aggregator::MostRecent => 0u64,
            Aggregator::Mean => 1,
            Aggregator::Max => 2,
        };
        let mut h = 0xcbf29ce484222325u64;
        for word in [self.gamma.to_bits(), self.k as u64, self.d_r as u64, agg] {
            for b in word.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

/// History buffer of one pair: `(embedding, time)` entries, newest first,
/// never more than `k` of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairHistory {
    entries: VecDeque<(Vec<f64>, f64)>,
}

impl PairHistory {
    fn new() -> Self {
        PairHistory { entries: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn newest(&self) -> Option<(&[f64], f64)> {
        self.entries.front().map(|(r, t)| (r.as_slice(), *t))
    }

    /// Entries strictly before `tau`, newest first.
    fn visible_at(&self, tau: f64) -> impl Iterator<Item = &(Vec<f64>, f64)> {
        self.entries.iter().filter(move |(_, t)| *t < tau)
    }
}

/// Tape for backpropagating through a max-aggregated lookup: which entry won
/// each output dimension and the pre-activations of the transform.
#[derive(Debug, Clone)]
pub struct MaxLookupTape {
    entries: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
    argmax: Vec<usize>,
}

/// Pair-keyed store of interaction histories.
///
/// ```
/// use tami_core::lha::{Aggregator, LhaConfig, LhaMemory};
///
/// let cfg = LhaConfig::new(0.5, 1, 1, Aggregator::MostRecent).unwrap();
/// let mut mem = LhaMemory::new(cfg, 0).unwrap();
/// assert_eq!(mem.lookup(0, 1, 1.0), vec![0.0]); // cold pair
/// mem.update(0, 1, 1.0, &[1.0]).unwrap();
/// mem.update(1, 0, 2.0, &[1.0]).unwrap(); // pairs are unordered
/// assert_eq!(mem.lookup(0, 1, 3.0), vec![0.75]);
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LhaMemory {
    cfg: LhaConfig,
    pairs: HashMap<(NodeId, NodeId), PairHistory>,
    /// Transform applied before max pooling; present only for the max
    /// aggregator and trained with the rest of the model.
    pub max_layer: Option<DenseLayer>,
}

/// Deep copy of the pair store, restorable into a memory with the same
/// configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LhaSnapshot {
    fingerprint: u64,
    pairs: Vec<((NodeId, NodeId), PairHistory)>,
}

impl LhaSnapshot {
    /// Snapshot that restores to an empty store (the cold-start protocol).
    pub fn empty(cfg: &LhaConfig) -> Self {
        LhaSnapshot { fingerprint: cfg.fingerprint(), pairs: Vec::new() }
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"LHAS";
const SNAPSHOT_VERSION: u32 = 1;

impl LhaMemory {
    pub fn new(cfg: LhaConfig, seed: u64) -> Result<Self> {
        LhaConfig::new(cfg.gamma, cfg.k, cfg.d_r, cfg.aggregator)?;
        let max_layer = match cfg.aggregator {
            Aggregator::Max => {
                let mut rng = <ChaCha12Rng as rand::SeedableRng>::seed_from_u64(seed);
                Some(DenseLayer::seeded(cfg.d_r, cfg.d_r, Activation::Relu, &mut rng))
            }
            _ => None,
        };
        Ok(LhaMemory { cfg, pairs: HashMap::new(), max_layer })
    }

    pub fn config(&self) -> &LhaConfig {
        &self.cfg
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn history(&self, u: NodeId, v: NodeId) -> Option<&PairHistory> {
        self.pairs.get(&pair_key(u, v))
    }

    /// Aggregated historical edge embedding of `(u, v)` over entries
    /// strictly before `tau`. Cold pairs yield the zero vector. Never
    /// mutates state.
    pub fn lookup(&self, u: NodeId, v: NodeId, tau: f64) -> Vec<f64> {
        self.lookup_inner(u, v, tau, false).0
    }

    /// As [`lookup`](Self::lookup), also returning the max-aggregation tape
    /// when a trainable transform was applied.
    pub fn lookup_traced(&self, u: NodeId, v: NodeId, tau: f64) -> (Vec<f64>, Option<MaxLookupTape>) {
        self.lookup_inner(u, v, tau, true)
    }

    fn lookup_inner(
        &self,
        u: NodeId,
        v: NodeId,
        tau: f64,
        traced: bool,
    ) -> (Vec<f64>, Option<MaxLookupTape>) {
        let d = self.cfg.d_r;
        let Some(hist) = self.pairs.get(&pair_key(u, v)) else {
            return (vec![0.0; d], None);
        };
        match self.cfg.aggregator {
            Aggregator::MostRecent => (
                hist.visible_at(tau)
                    .next()
                    .map(|(r, _)| r.clone())
                    .unwrap_or_else(|| vec![0.0; d]),
                None,
            ),
            Aggregator::Mean => {
                let mut sum = vec![0.0; d];
                let mut n = 0usize;
                for (r, _) in hist.visible_at(tau) {
                    for (s, x) in sum.iter_mut().zip(r) {
                        *s += x;
                    }
                    n += 1;
                }
                if n > 0 {
                    for s in &mut sum {
                        *s /= n as f64;
                    }
                }
                (sum, None)
            }
            Aggregator::Max => {
                let layer = self.max_layer.as_ref().expect("max aggregator has a transform");
                let entries: Vec<Vec<f64>> = hist.visible_at(tau).map(|(r, _)| r.clone()).collect();
                if entries.is_empty() {
                    return (vec![0.0; d], None);
                }
                let mut out = vec![f64::NEG_INFINITY; d];
                let mut argmax = vec![0usize; d];
                let mut preacts = Vec::with_capacity(entries.len());
                for (idx, r) in entries.iter().enumerate() {
                    let mut pre = vec![0.0; d];
                    layer.weights.matvec(r, &mut pre);
                    for (p, b) in pre.iter_mut().zip(&layer.bias) {
                        *p += b;
                    }
                    for j in 0..d {
                        let a = pre[j].max(0.0);
                        if a > out[j] {
                            out[j] = a;
                            argmax[j] = idx;
                        }
                    }
                    preacts.push(pre);
                }
                let tape = traced.then_some(MaxLookupTape { entries, preacts, argmax });
                (out, tape)
            }
        }
    }

    /// Backward through a max-aggregated lookup, accumulating transform
    /// gradients.
    pub fn max_lookup_backward(
        &self,
        tape: &MaxLookupTape,
        upstream: &[f64],
        grad_w: &mut Matrix,
        grad_b: &mut [f64],
    ) {
        let d = self.cfg.d_r;
        debug_assert_eq!(upstream.len(), d);
        for j in 0..d {
            let i = tape.argmax[j];
            if tape.preacts[i][j] > 0.0 {
                let g = upstream[j];
                let row = &mut grad_w.data[j * d..(j + 1) * d];
                for (c, x) in row.iter_mut().zip(&tape.entries[i]) {
                    *c += g * x;
                }
                grad_b[j] += g;
            }
        }
    }

    /// Folds a new contribution into the pair's history at time `tau` and
    /// returns the stored embedding. Updates must arrive in chronological
    /// order per pair.
    pub fn update(&mut self, u: NodeId, v: NodeId, tau: f64, c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.cfg.d_r {
            return Err(Error::Shape(format!(
                "contribution has {} components, memory stores {}",
                c.len(),
                self.cfg.d_r
            )));
        }
        let key = pair_key(u, v);
        let hist = match self.pairs.entry(key) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(PairHistory::new()),
        };
        if let Some((_, newest_t)) = hist.newest() {
            if tau < newest_t {
                return Err(Error::OutOfOrder(format!(
                    "pair ({},{}) updated at {tau} after an entry at {newest_t}",
                    key.0, key.1
                )));
            }
        }
        let g = self.cfg.gamma;
        let mut r = vec![0.0; self.cfg.d_r];
        match hist.newest() {
            Some((prev, _)) => {
                for i in 0..r.len() {
                    r[i] = g * c[i] + (1.0 - g) * prev[i];
                }
            }
            None => {
                for i in 0..r.len() {
                    r[i] = g * c[i];
                }
            }
        }
        hist.entries.push_front((r.clone(), tau));
        while hist.entries.len() > self.cfg.k {
            hist.entries.pop_back();
        }
        Ok(r)
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    pub fn snapshot(&self) -> LhaSnapshot {
        let mut pairs: Vec<_> = self.pairs.iter().map(|(k, h)| (*k, h.clone())).collect();
        pairs.sort_by_key(|(k, _)| *k);
        LhaSnapshot { fingerprint: self.cfg.fingerprint(), pairs }
    }

    pub fn restore(&mut self, snap: &LhaSnapshot) -> Result<()> {
        if snap.fingerprint != self.cfg.fingerprint() {
            return Err(Error::Config(
                "snapshot was taken under a different memory configuration".into(),
            ));
        }
        self.pairs = snap.pairs.iter().cloned().collect();
        Ok(())
    }

    /// Versioned little-endian binary form of the current state.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let snap = self.snapshot();
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&snap.fingerprint.to_le_bytes());
        out.extend_from_slice(&(snap.pairs.len() as u64).to_le_bytes());
        for ((u, v), hist) in &snap.pairs {
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
            out.extend_from_slice(&(hist.entries.len() as u64).to_le_bytes());
            for (r, t) in &hist.entries {
                out.extend_from_slice(&t.to_le_bytes());
                for x in r {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn restore_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != SNAPSHOT_MAGIC {
            return Err(Error::Data("not a memory snapshot".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != SNAPSHOT_VERSION {
            return Err(Error::Data(format!("unsupported snapshot version {version}")));
        }
        let fingerprint = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let n_pairs = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
        let mut pairs = Vec::with_capacity(n_pairs);
        for _ in 0..n_pairs {
            let u = NodeId::from_le_bytes(cur.take(4)?.try_into().unwrap());
            let v = NodeId::from_le_bytes(cur.take(4)?.try_into().unwrap());
            let n_entries = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
            let mut hist = PairHistory::new();
            for _ in 0..n_entries {
                let t = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
                let mut r = Vec::with_capacity(self.cfg.d_r);
                for _ in 0..self.cfg.d_r {
                    r.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
                }
                hist.entries.push_back((r, t));
            }
            pairs.push(((u, v), hist));
        }
        self.restore(&LhaSnapshot { fingerprint, pairs })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data("truncated memory snapshot".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

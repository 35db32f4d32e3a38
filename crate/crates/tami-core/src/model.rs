//! The trainable link predictor: per-interaction tokens (neighbor feature,
//! edge feature, time encoding) aggregated by a token MLP with mean pooling
//! into temporal node embeddings, an optional pair-history slot from the
//! link-history memory, and a sigmoid link predictor on top. Training is
//! binary cross-entropy against one random negative per event with Adam and
//! early stopping on validation average precision.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{TimeEncodeMode, TimeEncoder};
use crate::error::{Error, Result};
use crate::eval::{average_precision, LinkScorer, NegStrategy, NegativeSampler};
use crate::events::{pair_key, Event, NeighborRef, NodeId, Split, TemporalGraph};
use crate::lha::{Aggregator, LhaConfig, LhaMemory, MaxLookupTape};
use crate::nn::{bce_loss, Activation, Adam, AdamConfig, Matrix, Mlp, MlpGrads, MlpSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborSampling {
    /// The `m` most recent interactions.
    Recent,
    /// A seed-deterministic uniform sample of `m` past interactions.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Temporal neighbors per node embedding.
    pub m: usize,
    /// Node embedding dimension.
    pub d: usize,
    /// Time encoding dimension.
    pub d_t: usize,
    /// Historical edge embedding dimension (equal to `d` by default).
    pub d_r: usize,
    /// Log-rescale the temporal differences fed to the time encoding.
    pub use_lte: bool,
    /// Maintain and feed the pair-history memory.
    pub use_lha: bool,
    pub trainable_omega: bool,
    pub sampling: NeighborSampling,
    pub gamma: f64,
    pub k: usize,
    pub aggregator: Aggregator,
    /// Extra hidden widths (relu) for the token / combine networks.
    pub token_hidden: Vec<usize>,
    pub combine_hidden: Vec<usize>,
    /// Hidden widths of the link predictor.
    pub predictor_hidden: Vec<usize>,
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults for the given embedding and time dimensions: `d_r = d`, one
    /// predictor hidden layer of width `d_r`, most-recent aggregation with
    /// capacity 1.
    pub fn new(d: usize, d_t: usize) -> Self {
        ModelConfig {
            m: 10,
            d,
            d_t,
            d_r: d,
            use_lte: true,
            use_lha: true,
            trainable_omega: true,
            sampling: NeighborSampling::Recent,
            gamma: 0.9,
            k: 1,
            aggregator: Aggregator::MostRecent,
            token_hidden: vec![],
            combine_hidden: vec![],
            predictor_hidden: vec![d],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.d == 0 || self.d_t == 0 || self.d_r == 0 {
            return Err(Error::Config("model dimensions and m must be >= 1".into()));
        }
        LhaConfig::new(self.gamma, self.k, self.d_r, self.aggregator)?;
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Gradients of every trainable block, mirrored on [`TamiModel`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub token: MlpGrads,
    pub combine: MlpGrads,
    pub c_proj: MlpGrads,
    pub predictor: MlpGrads,
    pub omega: Vec<f64>,
    pub max_w: Option<Matrix>,
    pub max_b: Option<Vec<f64>>,
}

impl ModelGrads {
    pub fn zeros_like(model: &TamiModel) -> Self {
        ModelGrads {
            token: MlpGrads::zeros_like(&model.token_mlp),
            combine: MlpGrads::zeros_like(&model.combine_mlp),
            c_proj: MlpGrads::zeros_like(&model.c_proj),
            predictor: MlpGrads::zeros_like(&model.predictor),
            omega: vec![0.0; model.encoder.dim()],
            max_w: model
                .memory
                .max_layer
                .as_ref()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim())),
            max_b: model.memory.max_layer.as_ref().map(|l| vec![0.0; l.out_dim()]),
        }
    }

    pub fn add(&mut self, other: &ModelGrads) {
        self.token.add(&other.token);
        self.combine.add(&other.combine);
        self.c_proj.add(&other.c_proj);
        self.predictor.add(&other.predictor);
        for (a, b) in self.omega.iter_mut().zip(&other.omega) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.max_w.as_mut(), other.max_w.as_ref()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        if let (Some(a), Some(b)) = (self.max_b.as_mut(), other.max_b.as_ref()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        self.token.scale(f);
        self.combine.scale(f);
        self.c_proj.scale(f);
        self.predictor.scale(f);
        for x in &mut self.omega {
            *x *= f;
        }
        if let Some(m) = self.max_w.as_mut() {
            for x in &mut m.data {
                *x *= f;
            }
        }
        if let Some(b) = self.max_b.as_mut() {
            for x in b {
                *x *= f;
            }
        }
    }
}

/// Tape of one node-embedding forward pass.
pub struct NodeTape {
    token_inputs_kept: usize,
    /// Rescaled temporal argument per real (non-padded) token.
    scales: Vec<f64>,
    token_tapes: Vec<crate::nn::MlpTape>,
    combine_tape: crate::nn::MlpTape,
}

/// The full predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct TamiModel {
    pub cfg: ModelConfig,
    pub d_node: usize,
    pub d_edge: usize,
    pub encoder: TimeEncoder,
    pub token_mlp: Mlp,
    pub combine_mlp: Mlp,
    pub c_proj: Mlp,
    pub predictor: Mlp,
    pub memory: LhaMemory,
}

impl TamiModel {
    /// Builds a model for graphs with the given node/edge feature
    /// dimensions. All parameter blocks are seeded from `cfg.seed`.
    pub fn new(cfg: ModelConfig, d_node: usize, d_edge: usize) -> Result<Self> {
        cfg.validate()?;
        let mode = if cfg.use_lte {
            TimeEncodeMode::Log
        } else {
            TimeEncodeMode::Original
        };
        let encoder = TimeEncoder::new(cfg.d_t, mode, cfg.trainable_omega)?;
        let token_in = d_node + d_edge + cfg.d_t;
        let token_spec = MlpSpec::with_hidden(token_in, &cfg.token_hidden, cfg.d, Activation::Relu)?;
        let combine_spec =
            MlpSpec::with_hidden(cfg.d + d_node, &cfg.combine_hidden, cfg.d, Activation::Identity)?;
        let c_spec = MlpSpec::with_hidden(2 * cfg.d, &[], cfg.d_r, Activation::Identity)?;
        let pred_in = if cfg.use_lha { 2 * cfg.d + cfg.d_r } else { 2 * cfg.d };
        let pred_spec =
            MlpSpec::with_hidden(pred_in, &cfg.predictor_hidden, 1, Activation::Sigmoid)?;

        let block_seed = |i: u64| splitmix64(cfg.seed ^ (0xA11CE ^ i.wrapping_mul(0x9E37)));
        let memory = LhaMemory::new(
            LhaConfig::new(cfg.gamma, cfg.k, cfg.d_r, cfg.aggregator)?,
            block_seed(5),
        )?;
        Ok(TamiModel {
            token_mlp: Mlp::from_spec(&token_spec, block_seed(1))?,
            combine_mlp: Mlp::from_spec(&combine_spec, block_seed(2))?,
            c_proj: Mlp::from_spec(&c_spec, block_seed(3))?,
            predictor: Mlp::from_spec(&pred_spec, block_seed(4))?,
            encoder,
            memory,
            cfg,
            d_node,
            d_edge,
        })
    }

    /// Convenience constructor reading the feature dimensions off a graph.
    pub fn for_graph(cfg: ModelConfig, g: &TemporalGraph) -> Result<Self> {
        TamiModel::new(cfg, g.node_feature_dim(), g.edge_feature_dim())
    }

    fn neighbors(&self, g: &TemporalGraph, node: NodeId, tau: f64) -> Result<Vec<NeighborRef>> {
        match self.cfg.sampling {
            NeighborSampling::Recent => g.recent_neighbors(node, tau, self.cfg.m),
            NeighborSampling::Uniform => {
                let seed = splitmix64(self.cfg.seed ^ ((node as u64) << 1) ^ tau.to_bits());
                g.uniform_neighbors(node, tau, self.cfg.m, seed)
            }
        }
    }

    /// Token layout: `[neighbor node feature ; edge feature ; time encoding]`,
    /// one per sampled interaction, zero-padded up to `m` tokens.
    fn token_inputs(&self, g: &TemporalGraph, node: NodeId, tau: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let nbrs = self.neighbors(g, node, tau)?;
        let token_dim = self.d_node + self.d_edge + self.cfg.d_t;
        let mut tokens = Vec::with_capacity(self.cfg.m);
        let mut scales = Vec::with_capacity(nbrs.len());
        for nb in &nbrs {
            let mut tok = vec![0.0; token_dim];
            if self.d_node > 0 {
                if let Some(f) = g.node_feature(nb.neighbor) {
                    tok[..self.d_node].copy_from_slice(f);
                }
            }
            let e = &g.events()[nb.event_index];
            tok[self.d_node..self.d_node + self.d_edge].copy_from_slice(&e.edge_features);
            let s = self.encoder.rescale(tau - nb.t)?;
            let z = &mut tok[self.d_node + self.d_edge..];
            for (zi, &w) in z.iter_mut().zip(&self.encoder.omega) {
                *zi = (s * w).cos();
            }
            scales.push(s);
            tokens.push(tok);
        }
        while tokens.len() < self.cfg.m {
            tokens.push(vec![0.0; token_dim]);
        }
        Ok((tokens, scales))
    }

    fn own_feature(&self, g: &TemporalGraph, node: NodeId) -> Vec<f64> {
        if self.d_node > 0 {
            g.node_feature(node).map(|f| f.to_vec()).unwrap_or_else(|| vec![0.0; self.d_node])
        } else {
            vec![]
        }
    }

    /// Temporal embedding of `node` as of time `tau`.
    pub fn node_embedding(&self, g: &TemporalGraph, node: NodeId, tau: f64) -> Result<Vec<f64>> {
        let (tokens, _) = self.token_inputs(g, node, tau)?;
        let mut pool = vec![0.0; self.cfg.d];
        for tok in &tokens {
            let out = self.token_mlp.forward(tok)?;
            for (p, o) in pool.iter_mut().zip(&out) {
                *p += o;
            }
        }
        for p in &mut pool {
            *p /= self.cfg.m as f64;
        }
        pool.extend(self.own_feature(g, node));
        self.combine_mlp.forward(&pool)
    }

    pub fn node_embedding_traced(
        &self,
        g: &TemporalGraph,
        node: NodeId,
        tau: f64,
    ) -> Result<(Vec<f64>, NodeTape)> {
        let (tokens, scales) = self.token_inputs(g, node, tau)?;
        let mut pool = vec![0.0; self.cfg.d];
        let mut token_tapes = Vec::with_capacity(tokens.len());
        for tok in &tokens {
            let (out, tape) = self.token_mlp.forward_tape(tok)?;
            for (p, o) in pool.iter_mut().zip(&out) {
                *p += o;
            }
            token_tapes.push(tape);
        }
        for p in &mut pool {
            *p /= self.cfg.m as f64;
        }
        pool.extend(self.own_feature(g, node));
        let (h, combine_tape) = self.combine_mlp.forward_tape(&pool)?;
        Ok((
            h,
            NodeTape {
                token_inputs_kept: tokens.len(),
                scales,
                token_tapes,
                combine_tape,
            },
        ))
    }

    /// Backward through one node embedding, accumulating into `grads`.
    pub fn node_backward(&self, tape: &NodeTape, dl_dh: &[f64], grads: &mut ModelGrads) -> Result<()> {
        let dpool_full = self.combine_mlp.backward(&tape.combine_tape, dl_dh, &mut grads.combine)?;
        let d = self.cfg.d;
        let inv_m = 1.0 / self.cfg.m as f64;
        let dtok_out: Vec<f64> = dpool_full[..d].iter().map(|&x| x * inv_m).collect();
        for (i, ttape) in tape.token_tapes.iter().enumerate().take(tape.token_inputs_kept) {
            let dtok_in = self.token_mlp.backward(ttape, &dtok_out, &mut grads.token)?;
            // Padded tokens hold constants; only real interactions carry a
            // time-encoding argument whose frequencies are trainable.
            if self.cfg.trainable_omega {
                if let Some(&s) = tape.scales.get(i) {
                    let z_grad = &dtok_in[self.d_node + self.d_edge..];
                    self.encoder.accumulate_omega_grad(s, z_grad, &mut grads.omega);
                }
            }
        }
        Ok(())
    }

    /// Probability of a link between `u` and `v` at time `tau`. Pure: the
    /// memory is read, never written.
    pub fn predict_link(&self, g: &TemporalGraph, u: NodeId, v: NodeId, tau: f64) -> Result<f64> {
        let h_u = self.node_embedding(g, u, tau)?;
        let h_v = self.node_embedding(g, v, tau)?;
        let mut x = h_u;
        x.extend(h_v);
        if self.cfg.use_lha {
            x.extend(self.memory.lookup(u, v, tau));
        }
        Ok(self.predictor.forward(&x)?[0])
    }

    /// Loss and gradients of one scored pair against `positive`. Returns the
    /// loss; gradients accumulate into `grads`.
    pub fn example_loss(
        &self,
        g: &TemporalGraph,
        u: NodeId,
        v: NodeId,
        tau: f64,
        positive: bool,
        grads: &mut ModelGrads,
    ) -> Result<f64> {
        let (h_u, tape_u) = self.node_embedding_traced(g, u, tau)?;
        let (h_v, tape_v) = self.node_embedding_traced(g, v, tau)?;
        let mut lha_tape: Option<MaxLookupTape> = None;
        let mut x = h_u;
        x.extend(h_v);
        if self.cfg.use_lha {
            let (h_uv, tape) = self.memory.lookup_traced(u, v, tau);
            lha_tape = tape;
            x.extend(h_uv);
        }
        let (y, ptape) = self.predictor.forward_tape(&x)?;
        let (loss, dp) = bce_loss(y[0], positive);
        let dx = self.predictor.backward(&ptape, &[dp], &mut grads.predictor)?;
        let d = self.cfg.d;
        self.node_backward(&tape_u, &dx[..d], grads)?;
        self.node_backward(&tape_v, &dx[d..2 * d], grads)?;
        if let Some(tape) = &lha_tape {
            if let (Some(gw), Some(gb)) = (grads.max_w.as_mut(), grads.max_b.as_mut()) {
                self.memory.max_lookup_backward(tape, &dx[2 * d..], gw, gb);
            }
        }
        Ok(loss)
    }

    /// Ingests a true interaction: encodes the pair's current node states
    /// and folds them into the pair history. No-op without the memory.
    pub fn process_event(&mut self, g: &TemporalGraph, event: &Event) -> Result<()> {
        if !self.cfg.use_lha {
            return Ok(());
        }
        let c = self.pair_contribution(g, event.src, event.dst, event.t)?;
        self.memory.update(event.src, event.dst, event.t, &c)?;
        Ok(())
    }

    /// `c = MLP([h_u ; h_v])`, the current-state encoding stored by the
    /// memory update.
    pub fn pair_contribution(&self, g: &TemporalGraph, u: NodeId, v: NodeId, tau: f64) -> Result<Vec<f64>> {
        let mut x = self.node_embedding(g, u, tau)?;
        x.extend(self.node_embedding(g, v, tau)?);
        self.c_proj.forward(&x)
    }

    /// `(name, params, grads)` tensors for the optimizer, in a fixed order.
    pub fn optimizer_tensors<'a>(
        &'a mut self,
        grads: &'a ModelGrads,
    ) -> Vec<(&'static str, &'a mut [f64], &'a [f64])> {
        let mut out: Vec<(&'static str, &mut [f64], &[f64])> = Vec::new();
        for (p, gr) in self.token_mlp.tensors_mut(&grads.token) {
            out.push(("token_mlp", p, gr));
        }
        for (p, gr) in self.combine_mlp.tensors_mut(&grads.combine) {
            out.push(("combine_mlp", p, gr));
        }
        for (p, gr) in self.c_proj.tensors_mut(&grads.c_proj) {
            out.push(("pair_state_proj", p, gr));
        }
        for (p, gr) in self.predictor.tensors_mut(&grads.predictor) {
            out.push(("link_predictor", p, gr));
        }
        out.push(("time_frequencies", self.encoder.omega.as_mut_slice(), grads.omega.as_slice()));
        if let (Some(layer), Some(gw), Some(gb)) = (
            self.memory.max_layer.as_mut(),
            grads.max_w.as_ref(),
            grads.max_b.as_ref(),
        ) {
            out.push(("max_aggregator", layer.weights.data.as_mut_slice(), gw.data.as_slice()));
            out.push(("max_aggregator", layer.bias.as_mut_slice(), gb.as_slice()));
        }
        out
    }
}

impl LinkScorer for TamiModel {
    fn score(&self, g: &TemporalGraph, u: NodeId, v: NodeId, tau: f64) -> Result<f64> {
        self.predict_link(g, u, v, tau)
    }

    fn observe(&mut self, g: &TemporalGraph, event: &Event) -> Result<()> {
        self.process_event(g, event)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    /// When set, this node fraction is sampled (seeded) and its events are
    /// removed from the training phase, enabling unseen-node evaluation.
    pub inductive_fraction: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 200,
            max_epochs: 100,
            patience: 20,
            seed: 0,
            inductive_fraction: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size and max epochs must be >= 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config("patience cannot exceed max epochs".into()));
        }
        if let Some(f) = self.inductive_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config("inductive fraction must lie in [0,1)".into()));
            }
        }
        Ok(())
    }
}

/// Strictly-improving early stopping: training halts after `patience`
/// consecutive non-improving epochs (at least one).
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: f64::NEG_INFINITY, best_epoch: 0, since: 0 }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_value(&self) -> f64 {
        self.best
    }

    /// Records the epoch's validation value; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        if value > self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.since = 0;
            (true, false)
        } else {
            self.since += 1;
            (false, self.since >= self.patience.max(1))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStat>,
    pub best_epoch: usize,
    pub best_val_ap: f64,
    pub stopped_early: bool,
    /// Nodes withheld from training in the inductive protocol.
    pub masked_nodes: Vec<NodeId>,
    /// Nodes that appeared in the training phase.
    pub train_seen: Vec<NodeId>,
}

const VAL_NEG_SALT: u64 = 0x56414C; // distinct stream for validation negatives

/// Trains in place and leaves `model` at its best-validation state, with the
/// memory as accumulated through training and validation at that epoch (the
/// warm-start state for test evaluation).
///
/// Per epoch: the memory is rebuilt from scratch with the current
/// parameters, train events run in chronological batches (each positive
/// paired with one random negative, resampled per epoch), the optimizer
/// steps per batch, and the batch's events enter the memory only after its
/// loss. Validation then walks the val range event by event with a fixed
/// negative set.
pub fn train(
    model: &mut TamiModel,
    g: &TemporalGraph,
    split: &Split,
    tcfg: &TrainConfig,
) -> Result<TrainLog> {
    tcfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Data("training needs non-empty train and val ranges".into()));
    }

    // Inductive protocol: strip a seeded node fraction from the training
    // phase entirely (batches, memory, and neighbor visibility).
    let mut masked_nodes: Vec<NodeId> = Vec::new();
    let (train_g, train_range);
    let masked_graph;
    if let Some(frac) = tcfg.inductive_fraction {
        let mut rng = ChaCha12Rng::seed_from_u64(tcfg.seed ^ 0x4D41534B);
        let n_mask = ((g.num_nodes() as f64) * frac).floor() as usize;
        let mut ids: Vec<NodeId> = (0..g.num_nodes() as NodeId).collect();
        for i in (1..ids.len()).rev() {
            let j = rng.random_range(0..=i);
            ids.swap(i, j);
        }
        masked_nodes = ids[..n_mask].to_vec();
        masked_nodes.sort_unstable();
        let masked: HashSet<NodeId> = masked_nodes.iter().copied().collect();
        masked_graph = g.without_nodes(&masked)?;
        let cut = masked_graph
            .events()
            .partition_point(|e| e.t <= split.t_train_end);
        train_g = &masked_graph;
        train_range = 0..cut;
    } else {
        train_g = g;
        train_range = split.train.clone();
    }
    if train_range.is_empty() {
        return Err(Error::Data("training range is empty after masking".into()));
    }
    let mut train_seen: Vec<NodeId> = {
        let mut s = HashSet::new();
        for e in &train_g.events()[train_range.clone()] {
            s.insert(e.src);
            s.insert(e.dst);
        }
        let mut v: Vec<NodeId> = s.into_iter().collect();
        v.sort_unstable();
        v
    };

    let mut adam = Adam::new(AdamConfig { lr: tcfg.lr, ..Default::default() });
    let mut stopper = EarlyStopper::new(tcfg.patience);
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_ap: f64::NEG_INFINITY,
        stopped_early: false,
        masked_nodes: masked_nodes.clone(),
        train_seen: Vec::new(),
    };
    let mut best_model: Option<TamiModel> = None;
    let num_nodes = train_g.num_nodes() as NodeId;

    for epoch in 1..=tcfg.max_epochs {
        model.memory.clear();
        let mut neg_rng = ChaCha12Rng::seed_from_u64(tcfg.seed ^ splitmix64(epoch as u64));
        let mut loss_sum = 0.0;
        let mut loss_terms = 0usize;

        let events = train_g.events();
        let idxs: Vec<usize> = train_range.clone().collect();
        for batch in idxs.chunks(tcfg.batch_size) {
            // One random negative destination per event, resampled each
            // epoch; the source endpoint is kept.
            let work: Vec<(usize, NodeId)> = batch
                .iter()
                .map(|&i| {
                    let e = &events[i];
                    let w = loop {
                        let w = neg_rng.random_range(0..num_nodes);
                        if pair_key(e.src, w) != pair_key(e.src, e.dst) {
                            break w;
                        }
                    };
                    (i, w)
                })
                .collect();

            let shared: &TamiModel = model;
            let per_example: Vec<Result<(f64, ModelGrads)>> = work
                .par_iter()
                .map(|&(i, w)| {
                    let e = &events[i];
                    let mut grads = ModelGrads::zeros_like(shared);
                    let lp = shared.example_loss(train_g, e.src, e.dst, e.t, true, &mut grads)?;
                    let ln = shared.example_loss(train_g, e.src, w, e.t, false, &mut grads)?;
                    Ok((lp + ln, grads))
                })
                .collect();

            let mut grads = ModelGrads::zeros_like(model);
            let mut batch_loss = 0.0;
            for r in per_example {
                let (l, gr) = r?;
                batch_loss += l;
                grads.add(&gr);
            }
            let terms = 2 * batch.len();
            grads.scale(1.0 / terms as f64);
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss in epoch {epoch}")));
            }
            loss_sum += batch_loss;
            loss_terms += terms;
            let tensors = model.optimizer_tensors(&grads);
            adam.step(tensors)?;

            // Memory updates happen after the batch's loss so the model
            // never reads its own same-step label.
            for &i in batch {
                let e = &events[i];
                model.process_event(train_g, e)?;
            }
        }
        let train_loss = loss_sum / loss_terms.max(1) as f64;

        // Validation with a fixed negative stream; the memory keeps
        // accumulating through the val range.
        let end_of_train = model.memory.snapshot();
        let mut sampler = NegativeSampler::new(
            NegStrategy::random(tcfg.seed ^ VAL_NEG_SALT, 1),
            g,
            split,
        )?;
        let scored = crate::eval::score_range(model, g, split.val.clone(), &mut sampler)?;
        let mut scores = Vec::with_capacity(2 * scored.len());
        let mut labels = Vec::with_capacity(2 * scored.len());
        for (pos, negs) in &scored {
            scores.push(*pos);
            labels.push(true);
            for &n in negs {
                scores.push(n);
                labels.push(false);
            }
        }
        let val_ap = average_precision(&scores, &labels)?;
        log.epochs.push(EpochStat { epoch, train_loss, val_ap });

        let (improved, stop) = stopper.observe(epoch, val_ap);
        if improved {
            // Keep the end-of-val memory with the best parameters: this is
            // the warm-start state for the test phase.
            best_model = Some(model.clone());
        }
        model.memory.restore(&end_of_train)?;
        if stop {
            log.stopped_early = true;
            break;
        }
    }

    log.best_epoch = stopper.best_epoch();
    log.best_val_ap = stopper.best_value();
    log.train_seen = std::mem::take(&mut train_seen);
    *model = best_model.expect("at least one epoch ran");
    Ok(log)
}

/// Serializable parameter state (the memory travels separately as a
/// snapshot blob).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: u64,
    pub config: ModelConfig,
    pub d_node: usize,
    pub d_edge: usize,
    pub encoder: TimeEncoder,
    pub token_mlp: Mlp,
    pub combine_mlp: Mlp,
    pub c_proj: Mlp,
    pub predictor: Mlp,
    pub max_layer: Option<crate::nn::DenseLayer>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

fn config_hash(cfg: &ModelConfig, d_node: usize, d_edge: usize) -> Result<u64> {
    let blob = serde_json::to_string(&(cfg, d_node, d_edge))?;
    Ok(crate::fnv1a64(blob.as_bytes()))
}

impl TamiModel {
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash(&self.cfg, self.d_node, self.d_edge)?,
            config: self.cfg.clone(),
            d_node: self.d_node,
            d_edge: self.d_edge,
            encoder: self.encoder.clone(),
            token_mlp: self.token_mlp.clone(),
            combine_mlp: self.combine_mlp.clone(),
            c_proj: self.c_proj.clone(),
            predictor: self.predictor.clone(),
            max_layer: self.memory.max_layer.clone(),
        })
    }

    /// Rebuilds a model from a checkpoint with an empty memory.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<TamiModel> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", ck.version)));
        }
        if ck.config_hash != config_hash(&ck.config, ck.d_node, ck.d_edge)? {
            return Err(Error::Data("checkpoint config hash mismatch".into()));
        }
        let mut model = TamiModel::new(ck.config, ck.d_node, ck.d_edge)?;
        model.encoder = ck.encoder;
        model.token_mlp = ck.token_mlp;
        model.combine_mlp = ck.combine_mlp;
        model.c_proj = ck.c_proj;
        model.predictor = ck.predictor;
        model.memory.max_layer = ck.max_layer;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::chronological_split;
    use crate::events::SplitSpec;

    fn tiny_graph() -> TemporalGraph {
        let rows = vec![
            (0u32, 1u32, 1.0, vec![]),
            (1, 2, 2.0, vec![]),
            (0, 2, 3.0, vec![]),
            (2, 3, 4.0, vec![]),
            (0, 1, 5.0, vec![]),
            (3, 1, 6.0, vec![]),
        ];
        TemporalGraph::new(rows, 6, None).unwrap()
    }

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::new(6, 4);
        cfg.m = 3;
        cfg.seed = 42;
        cfg
    }

    #[test]
    fn isolated_nodes_share_embedding() {
        let g = tiny_graph();
        let model = TamiModel::for_graph(tiny_cfg(), &g).unwrap();
        // Nodes 4 and 5 have no history and the graph has no node features.
        let h4 = model.node_embedding(&g, 4, 3.0).unwrap();
        let h5 = model.node_embedding(&g, 5, 3.0).unwrap();
        assert_eq!(h4, h5);
    }

    #[test]
    fn equal_time_neighbor_order_does_not_change_embedding() {
        let rows_a = vec![
            (0u32, 1u32, 1.0, vec![]),
            (0, 2, 1.0, vec![]),
            (0, 3, 1.0, vec![]),
        ];
        let rows_b = vec![
            (0u32, 3u32, 1.0, vec![]),
            (0, 1, 1.0, vec![]),
            (0, 2, 1.0, vec![]),
        ];
        let ga = TemporalGraph::new(rows_a, 4, None).unwrap();
        let gb = TemporalGraph::new(rows_b, 4, None).unwrap();
        let mut cfg = tiny_cfg();
        cfg.m = 3;
        let model = TamiModel::new(cfg, 0, 0).unwrap();
        let ha = model.node_embedding(&ga, 0, 2.0).unwrap();
        let hb = model.node_embedding(&gb, 0, 2.0).unwrap();
        for (a, b) in ha.iter().zip(&hb) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn prediction_is_deterministic_and_bounded() {
        let g = tiny_graph();
        let model = TamiModel::for_graph(tiny_cfg(), &g).unwrap();
        let p1 = model.predict_link(&g, 0, 1, 5.5).unwrap();
        let p2 = model.predict_link(&g, 0, 1, 5.5).unwrap();
        assert_eq!(p1, p2);
        assert!(p1 > 0.0 && p1 < 1.0);
        assert!(model.predict_link(&g, 0, 99, 5.5).is_err());
    }

    #[test]
    fn uniform_sampling_is_deterministic_per_query() {
        let rows: Vec<(NodeId, NodeId, f64, Vec<f64>)> =
            (0..30).map(|i| (0, 1 + (i % 5), i as f64, vec![])).collect();
        let g = TemporalGraph::new(rows, 6, None).unwrap();
        let mut cfg = tiny_cfg();
        cfg.sampling = NeighborSampling::Uniform;
        let model = TamiModel::for_graph(cfg, &g).unwrap();
        let a = model.node_embedding(&g, 0, 25.0).unwrap();
        let b = model.node_embedding(&g, 0, 25.0).unwrap();
        assert_eq!(a, b);
        // A different query time draws a different sample.
        let c = model.node_embedding(&g, 0, 26.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prediction_never_mutates_memory() {
        let g = tiny_graph();
        let mut model = TamiModel::for_graph(tiny_cfg(), &g).unwrap();
        for e in &g.events()[..3] {
            model.process_event(&g, e).unwrap();
        }
        let before = model.memory.snapshot_bytes();
        for _ in 0..5 {
            model.predict_link(&g, 0, 1, 10.0).unwrap();
            model.predict_link(&g, 2, 3, 10.0).unwrap();
        }
        assert_eq!(model.memory.snapshot_bytes(), before);
    }

    #[test]
    fn lha_off_model_matches_zeroed_history_columns() {
        let g = tiny_graph();
        let mut with = TamiModel::for_graph(tiny_cfg(), &g).unwrap();
        let mut cfg_off = tiny_cfg();
        cfg_off.use_lha = false;
        let without = TamiModel::for_graph(cfg_off, &g).unwrap();

        // Share the first-layer weights over [h_u; h_v] and zero the
        // history columns of the lha-aware model; deeper layers copy over.
        let d2 = 2 * with.cfg.d;
        for (lw, lo) in with.predictor.layers.iter_mut().zip(without.predictor.layers.iter()) {
            lw.bias = lo.bias.clone();
            if lw.weights.cols != lo.weights.cols {
                for r in 0..lw.weights.rows {
                    for c in 0..lw.weights.cols {
                        lw.weights.data[r * lw.weights.cols + c] =
                            if c < d2 { lo.weights.data[r * lo.weights.cols + c] } else { 0.0 };
                    }
                }
            } else {
                lw.weights = lo.weights.clone();
            }
        }
        // Cold pair: the history slot reads zero either way.
        let pu = with.predict_link(&g, 4, 5, 3.0).unwrap();
        let pv = without.predict_link(&g, 4, 5, 3.0).unwrap();
        assert!((pu - pv).abs() < 1e-12);
        // Warm pair: the zeroed columns still ignore the history.
        for e in g.events() {
            with.process_event(&g, e).unwrap();
        }
        let pu = with.predict_link(&g, 0, 1, 10.0).unwrap();
        let pv = without.predict_link(&g, 0, 1, 10.0).unwrap();
        assert!((pu - pv).abs() < 1e-12);
    }

    #[test]
    fn process_event_stores_contribution_at_gamma_one() {
        let g = tiny_graph();
        let mut cfg = tiny_cfg();
        cfg.gamma = 1.0;
        let mut model = TamiModel::for_graph(cfg, &g).unwrap();
        let e = &g.events()[0];
        let c = model.pair_contribution(&g, e.src, e.dst, e.t).unwrap();
        model.process_event(&g, e).unwrap();
        let stored = model.memory.lookup(e.src, e.dst, e.t + 0.1);
        assert_eq!(stored, c);
    }

    #[test]
    fn lha_off_process_event_is_noop() {
        let g = tiny_graph();
        let mut cfg = tiny_cfg();
        cfg.use_lha = false;
        let mut model = TamiModel::for_graph(cfg, &g).unwrap();
        for e in g.events() {
            model.process_event(&g, e).unwrap();
        }
        assert_eq!(model.memory.num_pairs(), 0);
    }

    #[test]
    fn replaying_events_reproduces_memory() {
        let g = tiny_graph();
        let mut model = TamiModel::for_graph(tiny_cfg(), &g).unwrap();
        for e in g.events() {
            model.process_event(&g, e).unwrap();
        }
        let first = model.memory.snapshot_bytes();
        model.memory.clear();
        for e in g.events() {
            model.process_event(&g, e).unwrap();
        }
        assert_eq!(model.memory.snapshot_bytes(), first);
    }

    #[test]
    fn lte_toggle_identical_without_time_signal() {
        // With no history anywhere, the time encoding never sees a nonzero
        // argument, so both modes agree given identical parameters.
        let g = TemporalGraph::new(vec![(0, 1, 1.0, vec![])], 4, None).unwrap();
        let mut cfg_log = tiny_cfg();
        cfg_log.use_lte = true;
        let mut cfg_orig = tiny_cfg();
        cfg_orig.use_lte = false;
        let a = TamiModel::for_graph(cfg_log, &g).unwrap();
        let mut b = TamiModel::for_graph(cfg_orig, &g).unwrap();
        b.token_mlp = a.token_mlp.clone();
        b.combine_mlp = a.combine_mlp.clone();
        b.c_proj = a.c_proj.clone();
        b.predictor = a.predictor.clone();
        b.encoder.omega = a.encoder.omega.clone();
        let pa = a.predict_link(&g, 2, 3, 0.5).unwrap();
        let pb = b.predict_link(&g, 2, 3, 0.5).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn early_stopper_patience_semantics() {
        // Plateau after an improvement at epoch 2: patience 3 stops exactly
        // 3 epochs after the best.
        let mut s = EarlyStopper::new(3);
        let seq = [0.5, 0.7, 0.7, 0.7, 0.7, 0.7];
        let mut stopped_at = None;
        for (i, &v) in seq.iter().enumerate() {
            let (_, stop) = s.observe(i + 1, v);
            if stop {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(s.best_epoch(), 2);
        assert_eq!(stopped_at, Some(5));

        // patience 0 halts one epoch past the first on a plateau.
        let mut s = EarlyStopper::new(0);
        assert_eq!(s.observe(1, 0.9), (true, false));
        assert_eq!(s.observe(2, 0.9), (false, true));
    }

    fn train_fixture() -> (TemporalGraph, Split) {
        let spec = crate::synth::SynthSpec {
            num_nodes: 30,
            num_frequent_pairs: 12,
            num_infrequent_pairs: 15,
            pareto_shape: 4.0,
            pareto_scale: 20.0,
            horizon: 150.0,
            seed: 3,
            node_feature_dim: 0,
        };
        let g = crate::synth::synth_pareto_graph(&spec).unwrap();
        let split = chronological_split(&g, SplitSpec::default()).unwrap();
        (g, split)
    }

    #[test]
    fn training_is_deterministic() {
        let (g, split) = train_fixture();
        let run = || {
            let mut cfg = ModelConfig::new(8, 4);
            cfg.m = 5;
            cfg.seed = 7;
            let mut model = TamiModel::for_graph(cfg, &g).unwrap();
            let tcfg = TrainConfig {
                lr: 1e-3,
                batch_size: 64,
                max_epochs: 3,
                patience: 3,
                seed: 11,
                inductive_fraction: None,
            };
            let log = train(&mut model, &g, &split, &tcfg).unwrap();
            (serde_json::to_string(&model.checkpoint().unwrap()).unwrap(), log.best_val_ap)
        };
        let (ck1, ap1) = run();
        let (ck2, ap2) = run();
        assert_eq!(ck1, ck2);
        assert_eq!(ap1, ap2);
    }

    #[test]
    fn lr_zero_plateau_stops_after_patience() {
        let (g, split) = train_fixture();
        let mut cfg = ModelConfig::new(6, 4);
        cfg.m = 4;
        let mut model = TamiModel::for_graph(cfg, &g).unwrap();
        let tcfg = TrainConfig {
            lr: 0.0,
            batch_size: 64,
            max_epochs: 10,
            patience: 2,
            seed: 1,
            inductive_fraction: None,
        };
        let log = train(&mut model, &g, &split, &tcfg).unwrap();
        assert!(log.stopped_early);
        assert_eq!(log.best_epoch, 1);
        assert_eq!(log.epochs.len(), 3); // best at 1, stops 2 epochs later
    }

    #[test]
    fn inductive_masking_removes_nodes_from_training() {
        let (g, split) = train_fixture();
        let mut cfg = ModelConfig::new(6, 4);
        cfg.m = 4;
        let mut model = TamiModel::for_graph(cfg, &g).unwrap();
        let tcfg = TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 2,
            patience: 2,
            seed: 5,
            inductive_fraction: Some(0.2),
        };
        let log = train(&mut model, &g, &split, &tcfg).unwrap();
        assert_eq!(log.masked_nodes.len(), 6);
        for n in &log.masked_nodes {
            assert!(!log.train_seen.contains(n));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = tiny_graph();
        let model = TamiModel::for_graph(tiny_cfg(), &g).unwrap();
        let ck = model.checkpoint().unwrap();
        let json = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let restored = TamiModel::from_checkpoint(back).unwrap();
        let p1 = model.predict_link(&g, 0, 1, 5.5).unwrap();
        let p2 = restored.predict_link(&g, 0, 1, 5.5).unwrap();
        assert_eq!(p1, p2);

        let mut bad = model.checkpoint().unwrap();
        bad.config.d = 99;
        assert!(TamiModel::from_checkpoint(bad).is_err());
    }
}

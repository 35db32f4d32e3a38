//! Ranking evaluation for temporal link prediction: negative sampling
//! (random / historical / inductive pools), average precision and mean
//! reciprocal rank, and the per-group diagnostics (interval buckets,
//! appearance index, exclusive/isolated/mutual).
//!
//! Evaluation walks the test events chronologically. Each positive is scored
//! against `k` sampled negatives before the scorer observes the event, so a
//! model never reads its own same-step label.

use std::collections::HashSet;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{pair_key, Event, NodeId, Split, TemporalGraph};

/// Anything that can score a candidate link and ingest true events in
/// chronological order.
pub trait LinkScorer {
    fn score(&self, g: &TemporalGraph, u: NodeId, v: NodeId, tau: f64) -> Result<f64>;
    fn observe(&mut self, g: &TemporalGraph, event: &Event) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegKind {
    Random,
    Historical,
    Inductive,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NegStrategy {
    pub kind: NegKind,
    pub seed: u64,
    /// Negatives per positive.
    pub k: usize,
}

impl NegStrategy {
    pub fn random(seed: u64, k: usize) -> Self {
        NegStrategy { kind: NegKind::Random, seed, k }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Seed-deterministic negative-pair source. The historical pool holds the
/// distinct pairs observed in the train range; the inductive pool holds the
/// distinct pairs first observed in the test range. Sampling excludes the
/// current positive; an unusable pool falls back to random sampling and the
/// fallback is counted.
pub struct NegativeSampler {
    strategy: NegStrategy,
    num_nodes: usize,
    hist_pool: Vec<(NodeId, NodeId)>,
    ind_pool: Vec<(NodeId, NodeId)>,
    fallbacks: usize,
}

impl NegativeSampler {
    pub fn new(strategy: NegStrategy, g: &TemporalGraph, split: &Split) -> Result<Self> {
        if strategy.k == 0 {
            return Err(Error::Config("negatives per positive must be >= 1".into()));
        }
        let events = g.events();
        let collect = |range: &Range<usize>| -> HashSet<(NodeId, NodeId)> {
            events[range.clone()]
                .iter()
                .map(|e| pair_key(e.src, e.dst))
                .collect()
        };
        let train_pairs = collect(&split.train);
        let before_test: HashSet<_> = events[..split.test.start]
            .iter()
            .map(|e| pair_key(e.src, e.dst))
            .collect();
        let mut hist_pool: Vec<_> = train_pairs.iter().copied().collect();
        hist_pool.sort_unstable();
        let mut ind_pool: Vec<_> = collect(&split.test)
            .difference(&before_test)
            .copied()
            .collect();
        ind_pool.sort_unstable();
        Ok(NegativeSampler {
            strategy,
            num_nodes: g.num_nodes(),
            hist_pool,
            ind_pool,
            fallbacks: 0,
        })
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// `k` negative pairs for the positive `(u, v)` at event `event_index`.
    /// Deterministic in `(seed, event_index)` alone.
    pub fn sample(&mut self, u: NodeId, v: NodeId, event_index: usize) -> Vec<(NodeId, NodeId)> {
        let mut rng =
            ChaCha12Rng::seed_from_u64(self.strategy.seed ^ splitmix64(event_index as u64));
        let positive = pair_key(u, v);
        (0..self.strategy.k)
            .map(|_| self.draw(&mut rng, u, positive))
            .collect()
    }

    fn draw(&mut self, rng: &mut ChaCha12Rng, u: NodeId, positive: (NodeId, NodeId)) -> (NodeId, NodeId) {
        let pool = match self.strategy.kind {
            NegKind::Random => return self.draw_random(rng, u, positive),
            NegKind::Historical => &self.hist_pool,
            NegKind::Inductive => &self.ind_pool,
        };
        let usable = match pool.len() {
            0 => false,
            1 => pool[0] != positive,
            _ => true,
        };
        if !usable {
            self.fallbacks += 1;
            return self.draw_random(rng, u, positive);
        }
        loop {
            let cand = pool[rng.random_range(0..pool.len())];
            if cand != positive {
                return cand;
            }
        }
    }

    fn draw_random(&mut self, rng: &mut ChaCha12Rng, u: NodeId, positive: (NodeId, NodeId)) -> (NodeId, NodeId) {
        for _ in 0..64 {
            let w = rng.random_range(0..self.num_nodes as NodeId);
            let cand = pair_key(u, w);
            if cand != positive {
                return cand;
            }
        }
        // Degenerate graph: nothing but the positive exists.
        self.fallbacks += 1;
        positive
    }
}

/// Average precision over a score-descending ranking.
///
/// Ties are pessimistic: at equal score, negatives rank ahead of positives;
/// otherwise input order is preserved.
///
/// ```
/// use tami_core::eval::average_precision;
///
/// assert_eq!(average_precision(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
/// assert_eq!(average_precision(&[0.1, 0.9], &[true, false]).unwrap(), 0.5);
/// ```
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let num_pos = labels.iter().filter(|&&l| l).count();
    if num_pos == 0 {
        return Err(Error::Domain("average precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| labels[a].cmp(&labels[b]))
    });
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank0, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
            sum += tp as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / num_pos as f64)
}

/// Reciprocal rank of the positive among its negatives, descending by score.
/// Negatives tied with the positive rank ahead of it.
pub fn mrr(positive_score: f64, negative_scores: &[f64]) -> Result<f64> {
    if negative_scores.is_empty() {
        return Err(Error::Domain("reciprocal rank needs at least one negative".into()));
    }
    let ahead = negative_scores
        .iter()
        .filter(|&&s| s >= positive_score)
        .count();
    Ok(1.0 / (ahead + 1) as f64)
}

/// Earliest position (1-based) at which either endpoint appears in the
/// other's `m` most recent interactions before `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppearanceIndex {
    Within(usize),
    Beyond,
}

pub fn appearance_index(
    g: &TemporalGraph,
    u: NodeId,
    v: NodeId,
    tau: f64,
    m: usize,
) -> Result<AppearanceIndex> {
    let pos = |node: NodeId, other: NodeId| -> Result<Option<usize>> {
        Ok(g.recent_neighbors(node, tau, m)?
            .iter()
            .position(|r| r.neighbor == other)
            .map(|p| p + 1))
    };
    let v_in_u = pos(u, v)?;
    let u_in_v = pos(v, u)?;
    Ok(match (v_in_u, u_in_v) {
        (Some(a), Some(b)) => AppearanceIndex::Within(a.min(b)),
        (Some(a), None) => AppearanceIndex::Within(a),
        (None, Some(b)) => AppearanceIndex::Within(b),
        (None, None) => AppearanceIndex::Beyond,
    })
}

/// Mutual-visibility group of a node pair within each other's `m` most
/// recent interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EimGroup {
    /// Neither node appears in the other's recent interactions.
    Exclusive,
    /// Exactly one node appears in the other's.
    Isolated,
    /// Both nodes appear.
    Mutual,
}

pub fn eim_group(g: &TemporalGraph, u: NodeId, v: NodeId, tau: f64, m: usize) -> Result<EimGroup> {
    let contains = |node: NodeId, other: NodeId| -> Result<bool> {
        Ok(g.recent_neighbors(node, tau, m)?
            .iter()
            .any(|r| r.neighbor == other))
    };
    Ok(match (contains(u, v)?, contains(v, u)?) {
        (true, true) => EimGroup::Mutual,
        (false, false) => EimGroup::Exclusive,
        _ => EimGroup::Isolated,
    })
}

/// One evaluated positive with its sampled negatives and diagnostics.
#[derive(Debug, Clone)]
pub struct ScoredPositive {
    pub event_index: usize,
    pub pos_score: f64,
    pub neg_scores: Vec<f64>,
    /// Mean historical interaction interval of the pair before this event;
    /// `None` when the pair has fewer than two prior interactions.
    pub mean_interval: Option<f64>,
    pub appearance: AppearanceIndex,
    pub eim: EimGroup,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupStat {
    pub label: String,
    pub count: usize,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Transductive,
    /// Keep only positives with at least one endpoint unseen in training.
    InductiveNodes,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub strategy: NegStrategy,
    pub mode: EvalMode,
    /// Window for appearance-index and mutual-visibility grouping.
    pub appearance_m: usize,
    /// Interval bucket edges; log-spaced over the observed intervals when
    /// absent.
    pub bucket_edges: Option<Vec<f64>>,
    /// Nodes seen during training; required in inductive-nodes mode.
    pub train_seen: Option<HashSet<NodeId>>,
    /// Evaluate this event range instead of `split.test`.
    pub range: Option<Range<usize>>,
}

impl EvalOptions {
    pub fn transductive(strategy: NegStrategy) -> Self {
        EvalOptions {
            strategy,
            mode: EvalMode::Transductive,
            appearance_m: 20,
            bucket_edges: None,
            train_seen: None,
            range: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    pub mrr: f64,
    pub positives: usize,
    pub negatives_per_positive: usize,
    pub sampler_fallbacks: usize,
    pub interval_buckets: Vec<GroupStat>,
    pub appearance_index: Vec<GroupStat>,
    pub eim_groups: Vec<GroupStat>,
}

/// Running per-pair interval statistics used for bucketing.
struct PairIntervals {
    map: std::collections::HashMap<(NodeId, NodeId), (usize, f64, f64)>, // count, last_t, interval_sum
}

impl PairIntervals {
    fn up_to(g: &TemporalGraph, end: usize) -> Self {
        let mut s = PairIntervals { map: std::collections::HashMap::new() };
        for e in &g.events()[..end] {
            s.push(e);
        }
        s
    }

    fn push(&mut self, e: &Event) {
        let entry = self.map.entry(pair_key(e.src, e.dst)).or_insert((0, 0.0, 0.0));
        if entry.0 > 0 {
            entry.2 += e.t - entry.1;
        }
        entry.0 += 1;
        entry.1 = e.t;
    }

    fn mean(&self, u: NodeId, v: NodeId) -> Option<f64> {
        let (count, _, sum) = self.map.get(&pair_key(u, v))?;
        if *count >= 2 {
            Some(sum / (count - 1) as f64)
        } else {
            None
        }
    }
}

/// Scores every positive in `range` against freshly sampled negatives,
/// observing each event after it is scored. Shared by test evaluation and
/// train-time validation.
pub fn score_range(
    scorer: &mut dyn LinkScorer,
    g: &TemporalGraph,
    range: Range<usize>,
    sampler: &mut NegativeSampler,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let mut out = Vec::with_capacity(range.len());
    for e in &g.events()[range] {
        let negs = sampler.sample(e.src, e.dst, e.index);
        let pos = scorer.score(g, e.src, e.dst, e.t)?;
        let mut neg_scores = Vec::with_capacity(negs.len());
        for (nu, nv) in negs {
            neg_scores.push(scorer.score(g, nu, nv, e.t)?);
        }
        scorer.observe(g, e)?;
        out.push((pos, neg_scores));
    }
    Ok(out)
}

/// Full evaluation protocol over the test range (or `opts.range`).
pub fn evaluate(
    scorer: &mut dyn LinkScorer,
    g: &TemporalGraph,
    split: &Split,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let range = opts.range.clone().unwrap_or_else(|| split.test.clone());
    if opts.mode == EvalMode::InductiveNodes && opts.train_seen.is_none() {
        return Err(Error::Config("inductive-nodes mode needs the train-seen node set".into()));
    }
    let mut sampler = NegativeSampler::new(opts.strategy, g, split)?;
    let mut intervals = PairIntervals::up_to(g, range.start);
    let mut records: Vec<ScoredPositive> = Vec::new();

    for e in &g.events()[range] {
        let keep = match (&opts.mode, &opts.train_seen) {
            (EvalMode::Transductive, _) => true,
            (EvalMode::InductiveNodes, Some(seen)) => {
                !seen.contains(&e.src) || !seen.contains(&e.dst)
            }
            (EvalMode::InductiveNodes, None) => unreachable!(),
        };
        if keep {
            let negs = sampler.sample(e.src, e.dst, e.index);
            let pos_score = scorer.score(g, e.src, e.dst, e.t)?;
            let mut neg_scores = Vec::with_capacity(negs.len());
            for (nu, nv) in negs {
                neg_scores.push(scorer.score(g, nu, nv, e.t)?);
            }
            records.push(ScoredPositive {
                event_index: e.index,
                pos_score,
                neg_scores,
                mean_interval: intervals.mean(e.src, e.dst),
                appearance: appearance_index(g, e.src, e.dst, e.t, opts.appearance_m)?,
                eim: eim_group(g, e.src, e.dst, e.t, opts.appearance_m)?,
            });
        }
        scorer.observe(g, e)?;
        intervals.push(e);
    }
    if records.is_empty() {
        return Err(Error::Data("no positives to evaluate in the selected range".into()));
    }
    let mut report = report_from_records(&records, opts)?;
    report.sampler_fallbacks = sampler.fallbacks();
    Ok(report)
}

fn pooled_ap(records: &[&ScoredPositive]) -> Result<f64> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for r in records {
        scores.push(r.pos_score);
        labels.push(true);
        for &s in &r.neg_scores {
            scores.push(s);
            labels.push(false);
        }
    }
    average_precision(&scores, &labels)
}

fn report_from_records(records: &[ScoredPositive], opts: &EvalOptions) -> Result<EvalReport> {
    let all: Vec<&ScoredPositive> = records.iter().collect();
    let ap = pooled_ap(&all)?;
    let mean_rr = records
        .iter()
        .map(|r| mrr(r.pos_score, &r.neg_scores))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<f64>()
        / records.len() as f64;

    let edges = match &opts.bucket_edges {
        Some(e) => e.clone(),
        None => default_bucket_edges(records),
    };
    let interval_buckets = bucketed_ap_by_interval(records, &edges)?;

    let mut appearance = Vec::new();
    for i in 1..=opts.appearance_m {
        let group: Vec<&ScoredPositive> = records
            .iter()
            .filter(|r| r.appearance == AppearanceIndex::Within(i))
            .collect();
        appearance.push(group_stat(format!("{i}"), &group)?);
    }
    let beyond: Vec<&ScoredPositive> = records
        .iter()
        .filter(|r| r.appearance == AppearanceIndex::Beyond)
        .collect();
    appearance.push(group_stat(format!(">{}", opts.appearance_m), &beyond)?);

    let mut eim_groups = Vec::new();
    for (label, want) in [
        ("exclusive", EimGroup::Exclusive),
        ("isolated", EimGroup::Isolated),
        ("mutual", EimGroup::Mutual),
    ] {
        let group: Vec<&ScoredPositive> = records.iter().filter(|r| r.eim == want).collect();
        eim_groups.push(group_stat(label.to_string(), &group)?);
    }

    Ok(EvalReport {
        ap,
        mrr: mean_rr,
        positives: records.len(),
        negatives_per_positive: opts.strategy.k,
        sampler_fallbacks: 0, // overwritten by the sampler owner
        interval_buckets,
        appearance_index: appearance,
        eim_groups,
    })
}

fn group_stat(label: String, group: &[&ScoredPositive]) -> Result<GroupStat> {
    Ok(GroupStat {
        label,
        count: group.len(),
        ap: if group.is_empty() {
            None
        } else {
            Some(pooled_ap(group)?)
        },
    })
}

/// Logarithmically spaced edges (6 buckets) over the observed mean
/// intervals.
pub fn default_bucket_edges(records: &[ScoredPositive]) -> Vec<f64> {
    let vals: Vec<f64> = records.iter().filter_map(|r| r.mean_interval).collect();
    if vals.is_empty() {
        return vec![0.0, 1.0];
    }
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min).max(1e-9);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(lo * (1.0 + 1e-9));
    let buckets = 6usize;
    (0..=buckets)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / buckets as f64).exp())
        .collect()
}

/// Per-bucket AP of positives grouped by their pair's mean historical
/// interval, with a dedicated group for pairs lacking one. Each bucket is
/// scored against its own positives' negatives; empty buckets report no AP.
pub fn bucketed_ap_by_interval(records: &[ScoredPositive], edges: &[f64]) -> Result<Vec<GroupStat>> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("bucket edges must be strictly increasing".into()));
    }
    let nb = edges.len() - 1;
    let mut groups: Vec<Vec<&ScoredPositive>> = vec![Vec::new(); nb + 1];
    for r in records {
        match r.mean_interval {
            None => groups[0].push(r),
            Some(x) => {
                let mut b = match edges[..edges.len() - 1].partition_point(|&e| e <= x) {
                    0 => 0,
                    p => p - 1,
                };
                b = b.min(nb - 1);
                groups[b + 1].push(r);
            }
        }
    }
    let mut out = Vec::with_capacity(nb + 1);
    out.push(group_stat("no_history".to_string(), &groups[0])?);
    for (i, g) in groups[1..].iter().enumerate() {
        out.push(group_stat(format!("[{:.4},{:.4})", edges[i], edges[i + 1]), g)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{chronological_split, SplitSpec};

    fn graph(rows: Vec<(NodeId, NodeId, f64)>) -> TemporalGraph {
        let n = rows.iter().map(|r| r.0.max(r.1) as usize + 1).max().unwrap_or(2);
        let rows = rows.into_iter().map(|(u, v, t)| (u, v, t, vec![])).collect();
        TemporalGraph::new(rows, n, None).unwrap()
    }

    #[test]
    fn ap_perfect_and_inverted_rankings() {
        assert_eq!(average_precision(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.1, 0.9], &[true, false]).unwrap(), 0.5);
        assert!(average_precision(&[0.5], &[false]).is_err());
    }

    #[test]
    fn ap_tie_rule_is_pessimistic() {
        // Positive tied with a negative: negative ranks first.
        let ap = average_precision(&[0.5, 0.5], &[true, false]).unwrap();
        assert_eq!(ap, 0.5);
    }

    /// Independent P-R curve route: precision at every rank recomputed from
    /// scratch, recall steps accumulated explicitly.
    fn ap_brute_force(scores: &[f64], labels: &[bool]) -> f64 {
        let n = scores.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| labels[a].cmp(&labels[b]))
        });
        let num_pos = labels.iter().filter(|&&l| l).count();
        let mut curve = Vec::new(); // (precision@k, tp@k)
        for k in 1..=n {
            let tp = order[..k].iter().filter(|&&i| labels[i]).count();
            curve.push((tp as f64 / k as f64, tp));
        }
        let mut sum = 0.0;
        let mut prev_tp = 0usize;
        for (prec, tp) in curve {
            if tp > prev_tp {
                sum += prec * (tp - prev_tp) as f64;
            }
            prev_tp = tp;
        }
        sum / num_pos as f64
    }

    #[test]
    fn ap_matches_brute_force_exactly() {
        let mut rng = <ChaCha12Rng as SeedableRng>::seed_from_u64(3);
        for case in 0..100 {
            let n = rng.random_range(2..=20usize);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..8u32) as f64) / 8.0) // force ties
                .collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            if !labels.iter().any(|&l| l) {
                labels[0] = true;
            }
            let fast = average_precision(&scores, &labels).unwrap();
            let slow = ap_brute_force(&scores, &labels);
            assert_eq!(fast, slow, "case {case}: {scores:?} {labels:?}");
        }
    }

    #[test]
    fn ap_invariant_under_monotone_transform() {
        let scores = vec![0.1, 0.7, 0.3, 0.9, 0.5, 0.2];
        let labels = vec![false, true, false, true, true, false];
        let base = average_precision(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| (5.0 * s).tanh()).collect();
        let shifted: Vec<f64> = scores.iter().map(|&s| 100.0 * s + 3.0).collect();
        assert_eq!(average_precision(&squashed, &labels).unwrap(), base);
        assert_eq!(average_precision(&shifted, &labels).unwrap(), base);
    }

    #[test]
    fn mrr_ranks_and_ties() {
        assert_eq!(mrr(0.9, &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(mrr(0.1, &[0.5, 0.9]).unwrap(), 1.0 / 3.0);
        assert_eq!(mrr(0.5, &[0.5]).unwrap(), 0.5);
        assert!(mrr(0.5, &[]).is_err());
    }

    #[test]
    fn random_negatives_exclude_positive() {
        let g = graph(vec![(0, 1, 0.0), (0, 1, 1.0), (0, 1, 2.0), (0, 1, 3.0)]);
        let split = chronological_split(&g, SplitSpec::default()).unwrap();
        let mut s = NegativeSampler::new(NegStrategy::random(0, 1), &g, &split).unwrap();
        for idx in 0..200 {
            for pair in s.sample(0, 1, idx) {
                assert_ne!(pair, (0, 1));
            }
        }
        assert_eq!(s.fallbacks(), 0);
    }

    #[test]
    fn sampler_deterministic_per_event() {
        let g = graph((0..20).map(|i| (i % 5, 5 + (i % 7), i as f64)).collect());
        let split = chronological_split(&g, SplitSpec::default()).unwrap();
        let strat = NegStrategy { kind: NegKind::Historical, seed: 9, k: 3 };
        let mut a = NegativeSampler::new(strat, &g, &split).unwrap();
        let mut b = NegativeSampler::new(strat, &g, &split).unwrap();
        for idx in [17usize, 3, 11] {
            assert_eq!(a.sample(1, 6, idx), b.sample(1, 6, idx));
        }
    }

    #[test]
    fn historical_pool_of_only_the_positive_falls_back() {
        // Train observes exactly one distinct pair, and it is the positive.
        let g = graph(vec![(0, 1, 0.0); 10]);
        let split = chronological_split(&g, SplitSpec::default()).unwrap();
        let strat = NegStrategy { kind: NegKind::Historical, seed: 1, k: 2 };
        let mut s = NegativeSampler::new(strat, &g, &split).unwrap();
        let negs = s.sample(0, 1, 8);
        assert_eq!(negs.len(), 2);
        assert!(s.fallbacks() > 0);
        assert!(negs.iter().all(|&p| p != (0, 1)));
    }

    #[test]
    fn inductive_pool_empty_when_test_pairs_all_seen_falls_back() {
        // Every test pair already appeared before the test range.
        let g = graph((0..10).map(|i| (0, 1 + (i % 2), i as f64)).collect());
        let split = chronological_split(&g, SplitSpec::default()).unwrap();
        let strat = NegStrategy { kind: NegKind::Inductive, seed: 2, k: 1 };
        let mut s = NegativeSampler::new(strat, &g, &split).unwrap();
        assert!(s.ind_pool.is_empty());
        let _ = s.sample(0, 1, 9);
        assert!(s.fallbacks() > 0);
    }

    #[test]
    fn inductive_pool_holds_test_only_pairs() {
        let mut rows: Vec<(NodeId, NodeId, f64)> = (0..8).map(|i| (0, 1, i as f64)).collect();
        rows.push((2, 3, 8.0)); // val-span pair: excluded from the pool
        rows.push((4, 5, 9.0)); // test-span pairs, never seen before
        rows.push((0, 1, 10.0));
        rows.push((6, 7, 11.0));
        let g = graph(rows);
        let split = chronological_split(&g, SplitSpec::default()).unwrap();
        assert_eq!(split.val, 8..9);
        let strat = NegStrategy { kind: NegKind::Inductive, seed: 2, k: 1 };
        let s = NegativeSampler::new(strat, &g, &split).unwrap();
        assert_eq!(s.ind_pool, vec![(4, 5), (6, 7)]);
    }

    #[test]
    fn appearance_index_minimum_of_both_views() {
        // Build histories so v sits at position 3 of u's list while u sits
        // deeper in v's list.
        let g = graph(vec![
            (0, 1, 1.0), // the pair interacts
            (1, 5, 2.0),
            (1, 6, 3.0),
            (1, 7, 4.0),
            (1, 8, 5.0),
            (0, 2, 6.0),
            (0, 3, 7.0),
        ]);
        // u=0: recent = [3,2,1]; v=1 at position 3.
        // v=1: recent = [8,7,6,5,0]; u=0 at position 5.
        match appearance_index(&g, 0, 1, 8.0, 20).unwrap() {
            AppearanceIndex::Within(i) => assert_eq!(i, 3),
            _ => panic!("expected within"),
        }
        // 2 and 3 both interacted, but never with each other.
        assert_eq!(appearance_index(&g, 2, 3, 8.0, 20).unwrap(), AppearanceIndex::Beyond);
        assert_eq!(
            appearance_index(&g, 0, 1, 8.0, 2).unwrap(),
            AppearanceIndex::Beyond
        );
    }

    #[test]
    fn eim_groups_cover_all_cases() {
        let g = graph(vec![(0, 1, 1.0), (1, 2, 2.0), (1, 3, 3.0)]);
        // Fresh interaction: mutual.
        assert_eq!(eim_group(&g, 1, 3, 4.0, 1).unwrap(), EimGroup::Mutual);
        // Never interacted: exclusive.
        assert_eq!(eim_group(&g, 0, 2, 4.0, 20).unwrap(), EimGroup::Exclusive);
        // 0 is in 1's list only when m is large; with m=1, 1's most recent
        // is 3, while 0's most recent is 1: isolated.
        assert_eq!(eim_group(&g, 0, 1, 4.0, 1).unwrap(), EimGroup::Isolated);
    }

    #[test]
    fn appearance_within_m_iff_not_exclusive() {
        let g = graph(vec![
            (0, 1, 1.0),
            (1, 2, 2.0),
            (2, 3, 3.0),
            (0, 2, 4.0),
            (3, 1, 5.0),
        ]);
        for &(u, v) in &[(0u32, 1u32), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
            for m in [1usize, 2, 4] {
                let app = appearance_index(&g, u, v, 6.0, m).unwrap();
                let grp = eim_group(&g, u, v, 6.0, m).unwrap();
                assert_eq!(matches!(app, AppearanceIndex::Within(_)), grp != EimGroup::Exclusive);
            }
        }
    }

    /// Deterministic pseudo-random scorer for calibration tests.
    struct HashScorer;

    impl LinkScorer for HashScorer {
        fn score(&self, _g: &TemporalGraph, u: NodeId, v: NodeId, tau: f64) -> Result<f64> {
            let h = splitmix64((u as u64) << 40 ^ (v as u64) << 17 ^ tau.to_bits());
            Ok((h >> 11) as f64 / (1u64 << 53) as f64)
        }
        fn observe(&mut self, _g: &TemporalGraph, _event: &Event) -> Result<()> {
            Ok(())
        }
    }

    #[test]
    fn random_scores_calibrate_to_half_ap() {
        let mut rng = <ChaCha12Rng as SeedableRng>::seed_from_u64(77);
        let rows: Vec<(NodeId, NodeId, f64)> = (0..15_000)
            .map(|i| (rng.random_range(0..60), rng.random_range(0..60), i as f64))
            .filter(|(u, v, _)| u != v)
            .collect();
        let g = graph(rows);
        let split = chronological_split(&g, SplitSpec { train_frac: 0.2, val_frac: 0.05 }).unwrap();
        assert!(split.test.len() >= 10_000);
        let mut scorer = HashScorer;
        let opts = EvalOptions::transductive(NegStrategy::random(5, 1));
        let report = evaluate(&mut scorer, &g, &split, &opts).unwrap();
        assert!((report.ap - 0.5).abs() < 0.05, "ap {}", report.ap);
        assert!((0.0..=1.0).contains(&report.ap));
        assert!((0.0..=1.0).contains(&report.mrr));
    }

    /// Scores 1 for pairs seen before, 0 otherwise (memorization oracle).
    struct SeenScorer {
        seen: HashSet<(NodeId, NodeId)>,
    }

    impl LinkScorer for SeenScorer {
        fn score(&self, _g: &TemporalGraph, u: NodeId, v: NodeId, _tau: f64) -> Result<f64> {
            Ok(if self.seen.contains(&pair_key(u, v)) { 1.0 } else { 0.0 })
        }
        fn observe(&mut self, _g: &TemporalGraph, event: &Event) -> Result<()> {
            self.seen.insert(pair_key(event.src, event.dst));
            Ok(())
        }
    }

    #[test]
    fn memorizer_with_disjoint_negatives_scores_perfect_ap() {
        // Every test positive repeats the train-observed pair (0,1); the
        // only possible negative is the never-observed (0,0).
        let g = graph((0..11).map(|i| (0, 1, i as f64)).collect());
        let split = chronological_split(&g, SplitSpec::default()).unwrap();
        let mut seen = HashSet::new();
        for e in &g.events()[split.train.clone()] {
            seen.insert(pair_key(e.src, e.dst));
        }
        let mut scorer = SeenScorer { seen };
        let opts = EvalOptions::transductive(NegStrategy::random(3, 1));
        let report = evaluate(&mut scorer, &g, &split, &opts).unwrap();
        assert_eq!(report.ap, 1.0);
        assert_eq!(report.mrr, 1.0);
    }

    #[test]
    fn group_counts_partition_positives() {
        let mut rng = <ChaCha12Rng as SeedableRng>::seed_from_u64(8);
        let rows: Vec<(NodeId, NodeId, f64)> = (0..400)
            .map(|i| (rng.random_range(0..12), rng.random_range(0..12), i as f64))
            .filter(|(u, v, _)| u != v)
            .collect();
        let g = graph(rows);
        let split = chronological_split(&g, SplitSpec::default()).unwrap();
        let mut scorer = HashScorer;
        let opts = EvalOptions::transductive(NegStrategy::random(1, 2));
        let report = evaluate(&mut scorer, &g, &split, &opts).unwrap();
        let sums = |gs: &[GroupStat]| gs.iter().map(|s| s.count).sum::<usize>();
        assert_eq!(sums(&report.interval_buckets), report.positives);
        assert_eq!(sums(&report.appearance_index), report.positives);
        assert_eq!(sums(&report.eim_groups), report.positives);
    }

    #[test]
    fn single_bucket_equals_global_ap() {
        let records = vec![
            ScoredPositive {
                event_index: 0,
                pos_score: 0.8,
                neg_scores: vec![0.3, 0.9],
                mean_interval: Some(2.0),
                appearance: AppearanceIndex::Within(1),
                eim: EimGroup::Mutual,
            },
            ScoredPositive {
                event_index: 1,
                pos_score: 0.6,
                neg_scores: vec![0.1, 0.7],
                mean_interval: Some(5.0),
                appearance: AppearanceIndex::Beyond,
                eim: EimGroup::Exclusive,
            },
        ];
        let everything = bucketed_ap_by_interval(&records, &[0.0, 10.0]).unwrap();
        assert_eq!(everything.len(), 2); // no_history + single bucket
        assert_eq!(everything[0].count, 0);
        assert_eq!(everything[0].ap, None);
        let all: Vec<&ScoredPositive> = records.iter().collect();
        assert_eq!(everything[1].ap.unwrap(), pooled_ap(&all).unwrap());
    }

    #[test]
    fn all_no_history_records_land_in_dedicated_bucket() {
        let records = vec![ScoredPositive {
            event_index: 0,
            pos_score: 0.8,
            neg_scores: vec![0.3],
            mean_interval: None,
            appearance: AppearanceIndex::Beyond,
            eim: EimGroup::Exclusive,
        }];
        let out = bucketed_ap_by_interval(&records, &[0.0, 1.0]).unwrap();
        assert_eq!(out[0].count, 1);
        assert!(out[1..].iter().all(|b| b.count == 0));
    }

    #[test]
    fn inductive_node_filter_keeps_unseen_endpoints() {
        let g = graph(vec![
            (0, 1, 0.0),
            (0, 1, 1.0),
            (0, 1, 2.0),
            (0, 1, 3.0),
            (0, 1, 4.0),
            (0, 1, 5.0),
            (0, 1, 6.0),
            (0, 2, 7.0),
            (0, 1, 8.0),
            (0, 2, 9.0),
        ]);
        let split = chronological_split(&g, SplitSpec::default()).unwrap();
        let mut scorer = HashScorer;
        let mut opts = EvalOptions::transductive(NegStrategy::random(1, 1));
        opts.mode = EvalMode::InductiveNodes;
        opts.train_seen = Some(HashSet::from([0, 1]));
        let report = evaluate(&mut scorer, &g, &split, &opts).unwrap();
        // Only the (0,2) positives survive the filter.
        assert_eq!(report.positives, 1);
        // An all-seen filter leaves nothing and errors.
        opts.train_seen = Some(HashSet::from([0, 1, 2]));
        assert!(evaluate(&mut scorer, &g, &split, &opts).is_err());
    }
}

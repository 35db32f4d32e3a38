//! Trainless edge-memorization baselines. A future interaction is predicted
//! positive iff the pair is retained in memory; the four variants differ in
//! the retention rule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::events::{pair_key, Event, NodeId, Split, TemporalGraph};
use crate::eval::LinkScorer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum EdgeBankVariant {
    /// Unlimited memory: any pair ever observed stays positive.
    Infinity,
    /// Fixed time window; pairs seen within `window` before the query time
    /// are positive. The window is conventionally the duration of the test
    /// split, see [`test_span_window`].
    TimeWindowFixed { window: f64 },
    /// Per-pair window equal to the pair's mean repeat interval so far;
    /// pairs without a repeat fall back to the global mean interval, and to
    /// an unlimited window while no repeat has been observed at all.
    TimeWindowRepeat,
    /// Pairs observed more than `threshold` times are positive.
    CountThreshold { threshold: usize },
}

#[derive(Debug, Clone, Default)]
struct PairStats {
    count: usize,
    last_t: f64,
    interval_sum: f64,
}

/// Edge memory fed chronologically through [`LinkScorer::observe`].
#[derive(Debug, Clone)]
pub struct EdgeBank {
    pub variant: EdgeBankVariant,
    pairs: HashMap<(NodeId, NodeId), PairStats>,
    global_interval_sum: f64,
    global_interval_count: usize,
}

impl EdgeBank {
    pub fn new(variant: EdgeBankVariant) -> Self {
        EdgeBank {
            variant,
            pairs: HashMap::new(),
            global_interval_sum: 0.0,
            global_interval_count: 0,
        }
    }

    pub fn observe_range(&mut self, g: &TemporalGraph, range: std::ops::Range<usize>) {
        for e in &g.events()[range] {
            self.ingest(e);
        }
    }

    fn ingest(&mut self, e: &Event) {
        let s = self.pairs.entry(pair_key(e.src, e.dst)).or_default();
        if s.count > 0 {
            let dt = e.t - s.last_t;
            s.interval_sum += dt;
            self.global_interval_sum += dt;
            self.global_interval_count += 1;
        }
        s.count += 1;
        s.last_t = e.t;
    }

    /// Mean repeat interval of one pair, when it has repeats.
    pub fn pair_mean_interval(&self, u: NodeId, v: NodeId) -> Option<f64> {
        let s = self.pairs.get(&pair_key(u, v))?;
        (s.count >= 2).then(|| s.interval_sum / (s.count - 1) as f64)
    }

    pub fn predict(&self, u: NodeId, v: NodeId, tau: f64) -> f64 {
        let Some(s) = self.pairs.get(&pair_key(u, v)) else {
            return 0.0;
        };
        let hit = match self.variant {
            EdgeBankVariant::Infinity => true,
            EdgeBankVariant::TimeWindowFixed { window } => tau - s.last_t <= window,
            EdgeBankVariant::TimeWindowRepeat => {
                let window = if s.count >= 2 {
                    s.interval_sum / (s.count - 1) as f64
                } else if self.global_interval_count > 0 {
                    self.global_interval_sum / self.global_interval_count as f64
                } else {
                    f64::INFINITY
                };
                tau - s.last_t <= window
            }
            EdgeBankVariant::CountThreshold { threshold } => s.count > threshold,
        };
        if hit {
            1.0
        } else {
            0.0
        }
    }
}

impl LinkScorer for EdgeBank {
    fn score(&self, _g: &TemporalGraph, u: NodeId, v: NodeId, tau: f64) -> Result<f64> {
        Ok(self.predict(u, v, tau))
    }

    fn observe(&mut self, _g: &TemporalGraph, event: &Event) -> Result<()> {
        self.ingest(event);
        Ok(())
    }
}

/// Duration of the test split: the conventional fixed window.
pub fn test_span_window(g: &TemporalGraph, split: &Split) -> f64 {
    if split.test.is_empty() {
        return 0.0;
    }
    let events = g.events();
    events[split.test.end - 1].t - events[split.test.start].t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{chronological_split, SplitSpec};
    use crate::eval::{evaluate, EvalOptions, NegStrategy};

    fn bank_with(events: &[(NodeId, NodeId, f64)], variant: EdgeBankVariant) -> EdgeBank {
        let mut b = EdgeBank::new(variant);
        for &(u, v, t) in events {
            b.ingest(&Event { src: u, dst: v, t, edge_features: vec![], index: 0 });
        }
        b
    }

    #[test]
    fn unseen_pair_is_negative_for_every_variant() {
        for variant in [
            EdgeBankVariant::Infinity,
            EdgeBankVariant::TimeWindowFixed { window: 10.0 },
            EdgeBankVariant::TimeWindowRepeat,
            EdgeBankVariant::CountThreshold { threshold: 2 },
        ] {
            let b = bank_with(&[(0, 1, 1.0)], variant);
            assert_eq!(b.predict(2, 3, 5.0), 0.0);
        }
    }

    #[test]
    fn infinity_never_forgets() {
        let b = bank_with(&[(0, 1, 1.0)], EdgeBankVariant::Infinity);
        assert_eq!(b.predict(0, 1, 1e9), 1.0);
        assert_eq!(b.predict(1, 0, 1e9), 1.0);
    }

    #[test]
    fn fixed_window_boundaries() {
        let b = bank_with(&[(0, 1, 1.0)], EdgeBankVariant::TimeWindowFixed { window: 5.0 });
        assert_eq!(b.predict(0, 1, 7.0), 0.0);
        assert_eq!(b.predict(0, 1, 5.5), 1.0);
    }

    #[test]
    fn repeat_window_uses_pair_mean_interval() {
        // Pair (0,1) repeats every 2 time units; pair (2,3) seen once.
        let b = bank_with(
            &[(0, 1, 0.0), (0, 1, 2.0), (0, 1, 4.0), (2, 3, 4.0)],
            EdgeBankVariant::TimeWindowRepeat,
        );
        assert_eq!(b.pair_mean_interval(0, 1), Some(2.0));
        assert_eq!(b.predict(0, 1, 5.5), 1.0);
        assert_eq!(b.predict(0, 1, 7.0), 0.0);
        // (2,3) falls back to the global mean (2.0).
        assert_eq!(b.predict(2, 3, 5.5), 1.0);
        assert_eq!(b.predict(2, 3, 7.0), 0.0);
    }

    #[test]
    fn repeat_window_unlimited_before_any_repeat() {
        let b = bank_with(&[(0, 1, 0.0)], EdgeBankVariant::TimeWindowRepeat);
        assert_eq!(b.predict(0, 1, 1e6), 1.0);
    }

    #[test]
    fn count_threshold() {
        let events: Vec<(NodeId, NodeId, f64)> =
            (0..3).map(|i| (0, 1, i as f64)).collect();
        let b = bank_with(&events, EdgeBankVariant::CountThreshold { threshold: 2 });
        assert_eq!(b.predict(0, 1, 5.0), 1.0);
        let b = bank_with(&events[..2], EdgeBankVariant::CountThreshold { threshold: 2 });
        assert_eq!(b.predict(0, 1, 5.0), 0.0);
    }

    #[test]
    fn pair_mean_interval_matches_interaction_intervals() {
        let rows: Vec<(NodeId, NodeId, f64, Vec<f64>)> = vec![
            (0, 1, 0.0, vec![]),
            (0, 1, 3.0, vec![]),
            (1, 0, 9.0, vec![]),
            (2, 3, 1.0, vec![]),
            (2, 3, 2.0, vec![]),
        ];
        let g = TemporalGraph::new(rows, 4, None).unwrap();
        let mut b = EdgeBank::new(EdgeBankVariant::TimeWindowRepeat);
        b.observe_range(&g, 0..g.len());
        let intervals = g.interaction_intervals();
        // (0,1): intervals [3,6]; (2,3): [1].
        assert_eq!(b.pair_mean_interval(0, 1), Some(4.5));
        assert_eq!(b.pair_mean_interval(2, 3), Some(1.0));
        let total: f64 = intervals.iter().sum();
        let global = b.global_interval_sum;
        assert!((global - total).abs() < 1e-12);
    }

    #[test]
    fn infinity_scores_perfect_ap_on_recurring_test_pairs() {
        let rows: Vec<(NodeId, NodeId, f64, Vec<f64>)> =
            (0..11).map(|i| (0, 1, i as f64, vec![])).collect();
        let g = TemporalGraph::new(rows, 2, None).unwrap();
        let split = chronological_split(&g, SplitSpec::default()).unwrap();
        let mut bank = EdgeBank::new(EdgeBankVariant::Infinity);
        bank.observe_range(&g, 0..split.test.start);
        let opts = EvalOptions::transductive(NegStrategy::random(4, 1));
        let report = evaluate(&mut bank, &g, &split, &opts).unwrap();
        assert_eq!(report.ap, 1.0);
        assert_eq!(report.mrr, 1.0);
    }
}

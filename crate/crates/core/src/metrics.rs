//! Classification and ranking metrics: average precision, ROC-AUC,
//! Hits@k and filtered tail ranking.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, Relation, Triple};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Self {
        assert_eq!(scores.len(), labels.len(), "scores and labels must be aligned");
        ScoredSet { scores, labels }
    }

    pub fn push(&mut self, score: f64, label: bool) {
        self.scores.push(score);
        self.labels.push(label);
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn n_neg(&self) -> usize {
        self.labels.len() - self.n_pos()
    }

    fn check_scores(&self) -> Result<()> {
        if self.scores.iter().any(|s| s.is_nan()) {
            return Err(Error::DegenerateSet("NaN score"));
        }
        Ok(())
    }

    /// Indices sorted by descending score.
    fn order_desc(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].partial_cmp(&self.scores[a]).unwrap_or(Ordering::Equal));
        idx
    }
}

/// Average precision. Equal scores form one threshold block, so every
/// positive in a block is credited with the precision at the block's end.
pub fn pr_auc(set: &ScoredSet) -> Result<f64> {
    let n_pos = set.n_pos();
    if n_pos == 0 {
        return Err(Error::DegenerateSet("no positives"));
    }
    set.check_scores()?;
    let order = set.order_desc();
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = set.scores[order[i]];
        let mut block_tp = 0;
        while i < order.len() && set.scores[order[i]] == s {
            block_tp += usize::from(set.labels[order[i]]);
            seen += 1;
            i += 1;
        }
        tp += block_tp;
        if block_tp > 0 {
            ap += block_tp as f64 / n_pos as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

/// Mann-Whitney AUC with ties counted one half.
pub fn roc_auc(set: &ScoredSet) -> Result<f64> {
    let (n_pos, n_neg) = (set.n_pos(), set.n_neg());
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateSet("ROC-AUC needs positives and negatives"));
    }
    set.check_scores()?;
    // ascending midranks
    let mut order = set.order_desc();
    order.reverse();
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = set.scores[order[i]];
        let start = i;
        while i < order.len() && set.scores[order[i]] == s {
            i += 1;
        }
        let mid = (start + 1 + i) as f64 / 2.0;
        let pos_in_block = order[start..i].iter().filter(|&&j| set.labels[j]).count();
        rank_sum += mid * pos_in_block as f64;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fraction of ranks at or below `k`.
pub fn hits_at_k(ranks: &[f64], k: u32) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / ranks.len() as f64
}

pub fn mean_reciprocal_rank(ranks: &[f64]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|r| 1.0 / r).sum::<f64>() / ranks.len() as f64
}

/// Anything that assigns a plausibility score to a triple.
pub trait TripleScorer {
    fn score_triple(&self, head: EntityId, relation: Relation, tail: EntityId) -> f64;
}

impl<F> TripleScorer for F
where
    F: Fn(EntityId, Relation, EntityId) -> f64,
{
    fn score_triple(&self, head: EntityId, relation: Relation, tail: EntityId) -> f64 {
        self(head, relation, tail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSide {
    Head,
    Tail,
}

/// Filtered rank of the true entity on `side` among all entities of that
/// kind. Candidates forming another known positive are removed; ties take
/// the mean of the best and worst tied position.
pub fn filtered_rank<S: TripleScorer + ?Sized>(
    scorer: &S,
    triple: &Triple,
    known: &KnowledgeGraph,
    side: RankSide,
) -> f64 {
    let rel = triple.relation;
    let kind = match side {
        RankSide::Head => rel.head_kind(),
        RankSide::Tail => rel.tail_kind(),
    };
    let truth = match side {
        RankSide::Head => triple.head,
        RankSide::Tail => triple.tail,
    };
    let target = scorer.score_triple(triple.head, rel, triple.tail);
    let (mut greater, mut equal) = (0usize, 0usize);
    for e in known.entities(kind) {
        if e == truth {
            continue;
        }
        let (h, t) = match side {
            RankSide::Head => (e, triple.tail),
            RankSide::Tail => (triple.head, e),
        };
        if known.is_positive(h, rel, t) {
            continue;
        }
        let s = scorer.score_triple(h, rel, t);
        if s > target {
            greater += 1;
        } else if s == target {
            equal += 1;
        }
    }
    1.0 + greater as f64 + equal as f64 / 2.0
}

pub const HITS_K: [u32; 3] = [1, 3, 10];

/// Metric bundle for one relation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub relation: Relation,
    pub pr_auc: Option<f64>,
    pub roc_auc: Option<f64>,
    pub hits: BTreeMap<u32, f64>,
    pub mrr: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_ranked: usize,
    pub wall_time_secs: f64,
    pub peak_memory_bytes: usize,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Builds a report from a classification set and a list of filtered ranks.
    pub fn from_parts(relation: Relation, set: &ScoredSet, ranks: &[f64], notes: Vec<String>) -> Self {
        let hits = HITS_K.iter().map(|&k| (k, hits_at_k(ranks, k))).collect();
        EvalReport {
            relation,
            pr_auc: pr_auc(set).ok(),
            roc_auc: roc_auc(set).ok(),
            hits,
            mrr: mean_reciprocal_rank(ranks),
            n_pos: set.n_pos(),
            n_neg: set.n_neg(),
            n_ranked: ranks.len(),
            wall_time_secs: 0.0,
            peak_memory_bytes: 0,
            notes,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Fixed-width text table of reports followed by their notes.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7}",
        "relation", "PR-AUC", "ROC-AUC", "Hits@1", "Hits@3", "Hits@10", "MRR", "n_pos", "n_neg"
    );
    for r in reports {
        let h = |k| r.hits.get(&k).copied().unwrap_or(0.0);
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>7} {:>7}",
            r.relation.as_str(),
            fmt_opt(r.pr_auc),
            fmt_opt(r.roc_auc),
            h(1),
            h(3),
            h(10),
            r.mrr,
            r.n_pos,
            r.n_neg
        );
    }
    for r in reports {
        for n in &r.notes {
            let _ = writeln!(out, "# {}: {n}", r.relation);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(pairs: &[(f64, bool)]) -> ScoredSet {
        ScoredSet::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    #[test]
    fn perfect_ranking() {
        let s = set(&[(0.9, true), (0.8, true), (0.1, false), (0.0, false)]);
        assert_eq!(pr_auc(&s).unwrap(), 1.0);
        assert_eq!(roc_auc(&s).unwrap(), 1.0);
    }

    #[test]
    fn single_positive_ap() {
        let first = set(&[(4.0, true), (3.0, false), (2.0, false), (1.0, false)]);
        let last = set(&[(0.0, true), (3.0, false), (2.0, false), (1.0, false)]);
        assert_eq!(pr_auc(&first).unwrap(), 1.0);
        assert_eq!(pr_auc(&last).unwrap(), 0.25);
    }

    #[test]
    fn single_positive_ap_is_reciprocal_rank() {
        for rank in 1..=100usize {
            let pairs: Vec<(f64, bool)> = (0..100).map(|i| (-(i as f64), i + 1 == rank)).collect();
            let ap = pr_auc(&set(&pairs)).unwrap();
            assert!((ap - 1.0 / rank as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn all_ties_roc_is_half() {
        let s = set(&[(1.0, true), (1.0, false), (1.0, true), (1.0, false)]);
        assert_eq!(roc_auc(&s).unwrap(), 0.5);
    }

    #[test]
    fn degenerate_sets() {
        assert!(pr_auc(&set(&[(1.0, false)])).is_err());
        assert!(roc_auc(&set(&[(1.0, true)])).is_err());
        let nan = set(&[(f64::NAN, true), (0.0, false)]);
        assert!(pr_auc(&nan).is_err() && roc_auc(&nan).is_err());
    }

    #[test]
    fn hits_examples() {
        assert_eq!(hits_at_k(&[1.0, 1.0, 1.0], 1), 1.0);
        assert_eq!(hits_at_k(&[2.0, 11.0], 10), 0.5);
        let r = [5.0];
        assert_eq!([1, 3, 10].map(|k| hits_at_k(&r, k)), [0.0, 0.0, 1.0]);
        // mean-rank ties: 1.5 misses Hits@1
        assert_eq!(hits_at_k(&[1.5], 1), 0.0);
        assert_eq!(hits_at_k(&[1.5], 3), 1.0);
    }

    #[test]
    fn filtered_rank_ties_and_filtering() {
        let mut g = KnowledgeGraph::new();
        let t = g.add_triple("d", Relation::DrugProtein, "p0", None).unwrap();
        g.add_triple("d", Relation::DrugProtein, "p1", None).unwrap();
        for p in ["p2", "p3"] {
            g.intern(crate::graph::EntityKind::Protein, p).unwrap();
        }
        let top = |_h: EntityId, _r: Relation, t: EntityId| if t.index == 0 { 1.0 } else { 0.0 };
        assert_eq!(filtered_rank(&top, &t, &g, RankSide::Tail), 1.0);
        // p1 is a known positive and is filtered even though it scores higher
        let p1_high = |_h: EntityId, _r: Relation, t: EntityId| match t.index {
            1 => 5.0,
            0 | 2 => 1.0,
            _ => 0.0,
        };
        assert_eq!(filtered_rank(&p1_high, &t, &g, RankSide::Tail), 1.5);
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_monotone_map_and_shuffle(
            raw in prop::collection::vec((0u8..20, any::<bool>()), 2..60),
            seed in any::<u64>()
        ) {
            let mut pairs: Vec<(f64, bool)> = raw.iter().map(|&(s, l)| (s as f64, l)).collect();
            prop_assume!(pairs.iter().any(|p| p.1) && pairs.iter().any(|p| !p.1));
            let base = set(&pairs);
            let mapped = set(&pairs.iter().map(|&(s, l)| ((s * 0.3).exp() - 7.0, l)).collect::<Vec<_>>());
            prop_assert!((pr_auc(&base).unwrap() - pr_auc(&mapped).unwrap()).abs() < 1e-12);
            prop_assert!((roc_auc(&base).unwrap() - roc_auc(&mapped).unwrap()).abs() < 1e-12);
            use rand::seq::SliceRandom;
            use rand_chacha::rand_core::SeedableRng;
            pairs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled = set(&pairs);
            prop_assert!((pr_auc(&base).unwrap() - pr_auc(&shuffled).unwrap()).abs() < 1e-12);
            prop_assert!((roc_auc(&base).unwrap() - roc_auc(&shuffled).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn hits_monotone_in_k(ranks in prop::collection::vec(1.0f64..50.0, 1..40)) {
            let mut prev = 0.0;
            for k in 1..=60 {
                let h = hits_at_k(&ranks, k);
                prop_assert!(h >= prev);
                prev = h;
            }
            prop_assert_eq!(prev, 1.0);
        }
    }
}

//! Robustness certificates: per-state tolerable poisoning thresholds,
//! possible action sets, and certified lower bounds on cumulative reward.

mod action_set;
mod adasearch;
mod metrics;
mod state;

pub use action_set::{
    dparl_action_set, min_enabling_k, parl_action_set_loose, parl_action_set_tight, tparl_action_set, ActionSetResult,
};
pub use adasearch::{
    adasearch, adasearch_with_tree, reward_curve_to_csv, NodeDiagnostics, RewardCurve, SearchNode, SearchTree,
};
pub use metrics::{histogram_to_csv, records_to_csv, stability_metrics, StabilityMetrics};
pub use state::{
    dparl_aux, dparl_l, dparl_sigma, dparl_threshold, parl_threshold, tparl_margins, tparl_threshold,
    tparl_threshold_loose, DparlAux, MarginList,
};

use crate::error::Result;
use crate::model::{ActionId, Ensemble, StateHistory};

/// Subpolicy predictions over the newest `depth` states:
/// `preds[i][w]` is `pi_i(s_{t-w})`.
#[derive(Debug, Clone)]
pub(crate) struct PredictionWindow {
    preds: Vec<Vec<usize>>,
    num_actions: usize,
}

impl PredictionWindow {
    pub(crate) fn build(ens: &Ensemble, hist: &StateHistory, depth: usize) -> Result<Self> {
        let states = hist.recent(depth)?;
        let preds = ens
            .subpolicies()
            .iter()
            .map(|p| states.iter().map(|&s| p.act(s).0).collect())
            .collect();
        Ok(PredictionWindow {
            preds,
            num_actions: ens.num_actions(),
        })
    }

    pub(crate) fn u(&self) -> usize {
        self.preds.len()
    }

    pub(crate) fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub(crate) fn pred(&self, i: usize, w: usize) -> usize {
        self.preds[i][w]
    }

    /// Offsets `j < w` at which subpolicy `i` votes `a`.
    pub(crate) fn hits(&self, i: usize, a: ActionId, w: usize) -> i64 {
        self.preds[i][..w].iter().filter(|&&p| p == a.0).count() as i64
    }

    /// Vote totals over the newest `w` states.
    pub(crate) fn counts(&self, w: usize) -> Vec<i64> {
        let mut n = vec![0i64; self.num_actions];
        for row in &self.preds {
            for &p in &row[..w] {
                n[p] += 1;
            }
        }
        n
    }
}

/// Top action of `n`, smallest index on ties.
pub(crate) fn top_of(n: &[i64]) -> ActionId {
    let mut best = 0;
    for (i, &c) in n.iter().enumerate().skip(1) {
        if c > n[best] {
            best = i;
        }
    }
    ActionId(best)
}

/// `1[lhs < rhs]` as an integer.
pub(crate) fn ind_lt(lhs: ActionId, rhs: ActionId) -> i64 {
    i64::from(lhs < rhs)
}

/// Largest `p` in `0..=sorted.len()` with `sorted[..p].sum() <= budget`,
/// or `-1` when the budget is negative.
pub(crate) fn greedy_prefix(sorted_desc: &[i64], budget: i64) -> i64 {
    if budget < 0 {
        return -1;
    }
    let mut sum = 0i64;
    for (p, &v) in sorted_desc.iter().enumerate() {
        sum += v;
        if sum > budget {
            return p as i64;
        }
    }
    sorted_desc.len() as i64
}

/// Sum of the `k` largest values (all of them when `k` exceeds the length).
pub(crate) fn top_sum(sorted_desc: &[i64], k: usize) -> i64 {
    sorted_desc.iter().take(k).sum()
}

//! Possible action sets: every action a poisoned ensemble could be driven to
//! at one step, for a given poisoning size.

use std::collections::BTreeSet;

use serde::Serialize;

use super::state::{dparl_analysis, margins_on};
use super::{ind_lt, top_of, top_sum, PredictionWindow};
use crate::aggregation::effective_window;
use crate::error::Result;
use crate::model::{ActionId, Ensemble, StateHistory, StateId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActionSetResult {
    pub actions: BTreeSet<ActionId>,
    pub k: usize,
}

impl ActionSetResult {
    pub fn contains(&self, a: ActionId) -> bool {
        self.actions.contains(&a)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

fn single_state_votes(ens: &Ensemble, s: StateId) -> Vec<i64> {
    ens.votes_at(s).into_iter().map(|c| c as i64).collect()
}

/// Actions `a` for which moving `k` votes suffices to make `a` the tie-broken winner.
pub fn parl_action_set_tight(ens: &Ensemble, s: StateId, k: usize) -> ActionSetResult {
    let n = single_state_votes(ens, s);
    let k_i = k as i64;
    let actions = (0..n.len())
        .map(ActionId)
        .filter(|&a| {
            let need: i64 = (0..n.len())
                .map(ActionId)
                .filter(|&b| b != a)
                .map(|b| (n[b.0] - n[a.0] - k_i + ind_lt(b, a)).max(0))
                .sum();
            need <= k_i
        })
        .collect();
    ActionSetResult { actions, k }
}

/// Superset of [`parl_action_set_tight`] that only compares against the leader.
pub fn parl_action_set_loose(ens: &Ensemble, s: StateId, k: usize) -> ActionSetResult {
    let n = single_state_votes(ens, s);
    let top = top_of(&n);
    let actions = (0..n.len())
        .map(ActionId)
        .filter(|&a| n[top.0] - n[a.0] <= 2 * k as i64 - i64::from(a > top))
        .collect();
    ActionSetResult { actions, k }
}

pub(crate) fn tparl_set_on(pw: &PredictionWindow, w: usize, k: usize) -> BTreeSet<ActionId> {
    let n = pw.counts(w);
    let clean = top_of(&n);
    let mut out = BTreeSet::from([clean]);
    for a in (0..pw.num_actions()).map(ActionId).filter(|&a| a != clean) {
        let reachable = (0..pw.num_actions()).map(ActionId).filter(|&b| b != a).all(|b| {
            let delta = n[b.0] - (n[a.0] + ind_lt(a, b));
            top_sum(&margins_on(pw, w, b, a).sorted_desc, k) > delta
        });
        if reachable {
            out.insert(a);
        }
    }
    out
}

pub fn tparl_action_set(ens: &Ensemble, hist: &StateHistory, window: usize, k: usize) -> Result<ActionSetResult> {
    let w = effective_window(hist, window.max(1));
    let pw = PredictionWindow::build(ens, hist, w)?;
    Ok(ActionSetResult {
        actions: tparl_set_on(&pw, w, k),
        k,
    })
}

/// Union of the clean action, actions reachable by a window swap, and actions
/// reachable at the clean window.
pub fn dparl_action_set(ens: &Ensemble, hist: &StateHistory, max_window: usize, k: usize) -> Result<ActionSetResult> {
    let an = dparl_analysis(ens, hist, max_window)?;
    let pw = PredictionWindow::build(ens, hist, an.depth)?;
    let mut actions = tparl_set_on(&pw, an.w_prime, k);
    actions.insert(an.action);
    for (b, l) in an.min_l.iter().enumerate() {
        if matches!(*l, Some(l) if l < k as i64) {
            actions.insert(ActionId(b));
        }
    }
    Ok(ActionSetResult { actions, k })
}

/// Smallest `k <= k_max` whose set contains `action`, assuming membership is
/// monotone in `k`.
pub fn min_enabling_k<F>(mut set_at: F, action: ActionId, k_max: usize) -> Result<Option<usize>>
where
    F: FnMut(usize) -> Result<ActionSetResult>,
{
    if !set_at(k_max)?.contains(action) {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0, k_max);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if set_at(mid)?.contains(action) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(Some(lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn ids(v: &[usize]) -> BTreeSet<ActionId> {
        v.iter().copied().map(ActionId).collect()
    }

    #[test]
    fn ten_nine_one() {
        let (ens, hist) = fixtures::votes_10_9_1();
        let s = hist.current();
        assert!(!parl_action_set_tight(&ens, s, 5).contains(ActionId(2)));
        assert!(parl_action_set_loose(&ens, s, 5).contains(ActionId(2)));
        assert_eq!(parl_action_set_tight(&ens, s, 0).actions, ids(&[0]));
        assert_eq!(parl_action_set_loose(&ens, s, 0).actions, ids(&[0]));
    }

    #[test]
    fn three_voter_formula_yields_everything() {
        let (ens, hist) = fixtures::three_voters();
        assert_eq!(
            tparl_action_set(&ens, &hist, 1, 1).unwrap().actions,
            ids(&[0, 1, 2, 3, 4])
        );
        assert_eq!(tparl_action_set(&ens, &hist, 1, 0).unwrap().actions, ids(&[0]));
        let set = |k| tparl_action_set(&ens, &hist, 1, k);
        assert_eq!(min_enabling_k(set, ActionId(1), 3).unwrap(), Some(1));
        assert_eq!(min_enabling_k(set, ActionId(0), 3).unwrap(), Some(0));
        assert_eq!(min_enabling_k(set, ActionId(1), 0).unwrap(), None);
    }

    #[test]
    fn worked_example_dynamic_sets() {
        let (ens, hist) = fixtures::worked_example();
        assert_eq!(dparl_action_set(&ens, &hist, 8, 0).unwrap().actions, ids(&[0]));
        assert_eq!(dparl_action_set(&ens, &hist, 8, 1).unwrap().actions, ids(&[0]));
        assert!(dparl_action_set(&ens, &hist, 8, 2).unwrap().contains(ActionId(1)));
        assert_eq!(tparl_action_set(&ens, &hist, 7, 2).unwrap().actions, ids(&[0]));
        assert!(tparl_action_set(&ens, &hist, 7, 3).unwrap().contains(ActionId(1)));
    }
}

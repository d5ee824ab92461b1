//! Per-state tolerable poisoning thresholds.

use serde::Serialize;

use super::{greedy_prefix, ind_lt, top_of, PredictionWindow};
use crate::aggregation::{effective_window, parl_action, VoteGrid};
use crate::error::{CoreError, Result};
use crate::model::{ActionId, CertificationRecord, Ensemble, StateHistory, StateId};

fn require_two_actions(ens: &Ensemble) -> Result<()> {
    if ens.num_actions() < 2 {
        return Err(CoreError::TooFewActions(ens.num_actions()));
    }
    Ok(())
}

fn clamp(k: i64, u: usize) -> usize {
    k.clamp(0, u as i64) as usize
}

/// Single-state voting threshold at `s`. The record's `t` is 0; callers
/// certifying a rollout overwrite it.
pub fn parl_threshold(ens: &Ensemble, s: StateId) -> Result<CertificationRecord> {
    require_two_actions(ens)?;
    let n: Vec<i64> = ens.votes_at(s).into_iter().map(|c| c as i64).collect();
    let a = parl_action(ens, s).action;
    let rival = (0..n.len())
        .filter(|&b| b != a.0)
        .map(|b| n[b] + ind_lt(ActionId(b), a))
        .max()
        .expect("two actions");
    Ok(CertificationRecord {
        t: 0,
        action: a,
        window_used: 1,
        threshold: clamp((n[a.0] - rival).div_euclid(2), ens.u()),
    })
}

/// Per-subpolicy margins `h_i = hits(i, a) + w - hits(i, a')` over the
/// effective window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MarginList {
    pub values: Vec<i64>,
    pub sorted_desc: Vec<i64>,
}

impl MarginList {
    fn from_values(values: Vec<i64>) -> Self {
        let mut sorted_desc = values.clone();
        sorted_desc.sort_unstable_by(|x, y| y.cmp(x));
        MarginList { values, sorted_desc }
    }
}

pub(crate) fn margins_on(pw: &PredictionWindow, w: usize, a: ActionId, a_prime: ActionId) -> MarginList {
    let values = (0..pw.u())
        .map(|i| pw.hits(i, a, w) + w as i64 - pw.hits(i, a_prime, w))
        .collect();
    MarginList::from_values(values)
}

pub fn tparl_margins(
    ens: &Ensemble,
    hist: &StateHistory,
    window: usize,
    a: ActionId,
    a_prime: ActionId,
) -> Result<MarginList> {
    if a == a_prime {
        return Err(CoreError::Precondition("margins need two distinct actions".into()));
    }
    let w = effective_window(hist, window.max(1));
    let pw = PredictionWindow::build(ens, hist, w)?;
    Ok(margins_on(&pw, w, a, a_prime))
}

/// Greedy threshold over the newest `w` states of `pw`. Returns the winner
/// and the (unclamped) threshold.
pub(crate) fn tparl_threshold_on(pw: &PredictionWindow, w: usize) -> (ActionId, i64) {
    let n = pw.counts(w);
    let a = top_of(&n);
    let k = (0..pw.num_actions())
        .map(ActionId)
        .filter(|&b| b != a)
        .map(|b| {
            let delta = n[a.0] - (n[b.0] + ind_lt(b, a));
            greedy_prefix(&margins_on(pw, w, a, b).sorted_desc, delta)
        })
        .min()
        .expect("two actions");
    (a, k)
}

pub fn tparl_threshold(ens: &Ensemble, hist: &StateHistory, window: usize) -> Result<CertificationRecord> {
    require_two_actions(ens)?;
    let w = effective_window(hist, window.max(1));
    let pw = PredictionWindow::build(ens, hist, w)?;
    let (action, k) = tparl_threshold_on(&pw, w);
    Ok(CertificationRecord {
        t: hist.t(),
        action,
        window_used: w,
        threshold: clamp(k, ens.u()),
    })
}

/// Closed-form bound that charges every poisoned subpolicy the full `2w`.
pub fn tparl_threshold_loose(ens: &Ensemble, hist: &StateHistory, window: usize) -> Result<CertificationRecord> {
    require_two_actions(ens)?;
    let w = effective_window(hist, window.max(1));
    let pw = PredictionWindow::build(ens, hist, w)?;
    let n = pw.counts(w);
    let a = top_of(&n);
    let rival = (0..n.len())
        .filter(|&b| b != a.0)
        .map(|b| n[b] + ind_lt(ActionId(b), a))
        .max()
        .expect("two actions");
    Ok(CertificationRecord {
        t: hist.t(),
        action: a,
        window_used: w,
        threshold: clamp((n[a.0] - rival).div_euclid(2 * w as i64), ens.u()),
    })
}

/// Quantities behind one window-swap bound: the attacker tries to make
/// `a_prime` win at window `w_star` while the clean window `w_prime` (won by
/// `a`) loses its margin against `a_dblprime`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DparlAux {
    pub w_star: usize,
    pub w_prime: usize,
    pub a: ActionId,
    pub a_prime: ActionId,
    pub a_dblprime: ActionId,
    pub a_sharp: ActionId,
    pub g: Vec<i64>,
    pub l: i64,
}

/// `sigma^w(a0)`: the change in the swap objective when one vote at offset `w`
/// is `a0`. Offset `w` lies in window `W` iff `w < W`.
pub fn dparl_sigma(w: usize, a0: ActionId, aux: &DparlAux) -> i64 {
    let (ws, wp) = (aux.w_star as i64, aux.w_prime as i64);
    let in_star = w < aux.w_star;
    let in_prime = w < aux.w_prime;
    let mut v = 0;
    if in_star && a0 == aux.a_prime {
        v += wp;
    }
    if in_star && a0 == aux.a_sharp {
        v -= wp;
    }
    if in_prime && a0 == aux.a {
        v -= ws;
    }
    if in_prime && a0 == aux.a_dblprime {
        v += ws;
    }
    v
}

pub(crate) fn dparl_aux_on(
    pw: &PredictionWindow,
    w_star: usize,
    w_prime: usize,
    a: ActionId,
    a_prime: ActionId,
    a_dblprime: ActionId,
) -> DparlAux {
    let n_star = pw.counts(w_star);
    let n_prime = pw.counts(w_prime);
    let mut masked = n_star.clone();
    masked[a_prime.0] = i64::MIN;
    let a_sharp = top_of(&masked);
    let mut aux = DparlAux {
        w_star,
        w_prime,
        a,
        a_prime,
        a_dblprime,
        a_sharp,
        g: Vec::new(),
        l: 0,
    };
    let span = w_star.max(w_prime);
    let best: Vec<i64> = (0..span)
        .map(|w| {
            (0..pw.num_actions())
                .map(|b| dparl_sigma(w, ActionId(b), &aux))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let g: Vec<i64> = (0..pw.u())
        .map(|i| {
            (0..span)
                .map(|w| best[w] - dparl_sigma(w, ActionId(pw.pred(i, w)), &aux))
                .sum()
        })
        .collect();
    // Ties between windows go to the smaller one, so a larger W* must win strictly.
    let ind = i64::from(w_star > w_prime);
    let c = w_prime as i64 * (n_star[a_prime.0] - n_star[a_sharp.0])
        - w_star as i64 * (n_prime[a.0] - n_prime[a_dblprime.0])
        - ind;
    let mut sorted = g.clone();
    sorted.sort_unstable_by(|x, y| y.cmp(x));
    let l = if c >= 0 {
        -1
    } else {
        let mut sum = 0;
        let mut p = 0;
        for &v in &sorted {
            sum += v;
            if sum + c >= 0 {
                break;
            }
            p += 1;
        }
        p
    };
    aux.g = g;
    aux.l = l;
    aux
}

fn check_swap_inputs(
    hist: &StateHistory,
    w_star: usize,
    w_prime: usize,
    a: ActionId,
    a_prime: ActionId,
    a_dblprime: ActionId,
) -> Result<()> {
    if w_star == w_prime || w_star == 0 || w_prime == 0 {
        return Err(CoreError::Precondition(
            "window swap needs two distinct positive windows".into(),
        ));
    }
    if a_prime == a || a_dblprime == a {
        return Err(CoreError::Precondition(
            "swap roles must differ from the clean action".into(),
        ));
    }
    let avail = effective_window(hist, usize::MAX);
    if w_star.max(w_prime) > avail {
        return Err(CoreError::WindowExceedsHistory {
            requested: w_star.max(w_prime),
            available: avail,
        });
    }
    Ok(())
}

pub fn dparl_aux(
    ens: &Ensemble,
    hist: &StateHistory,
    w_star: usize,
    w_prime: usize,
    a: ActionId,
    a_prime: ActionId,
    a_dblprime: ActionId,
) -> Result<DparlAux> {
    check_swap_inputs(hist, w_star, w_prime, a, a_prime, a_dblprime)?;
    for b in [a, a_prime, a_dblprime] {
        if b.0 >= ens.num_actions() {
            return Err(CoreError::Precondition(format!("action {b} out of range")));
        }
    }
    let pw = PredictionWindow::build(ens, hist, w_star.max(w_prime))?;
    Ok(dparl_aux_on(&pw, w_star, w_prime, a, a_prime, a_dblprime))
}

/// Largest number of poisoned subpolicies that provably cannot make `a_prime`
/// win at `w_star` over the clean window `w_prime`; `-1` if nothing prevents it.
pub fn dparl_l(
    ens: &Ensemble,
    hist: &StateHistory,
    w_star: usize,
    w_prime: usize,
    a: ActionId,
    a_prime: ActionId,
    a_dblprime: ActionId,
) -> Result<i64> {
    Ok(dparl_aux(ens, hist, w_star, w_prime, a, a_prime, a_dblprime)?.l)
}

/// Clean DPARL choice plus the minimum swap bound per rival action
/// (`None` when there is no alternative window).
pub(crate) struct DparlAnalysis {
    pub action: ActionId,
    pub w_prime: usize,
    pub depth: usize,
    pub tparl_k: i64,
    pub min_l: Vec<Option<i64>>,
}

pub(crate) fn dparl_analysis(ens: &Ensemble, hist: &StateHistory, max_window: usize) -> Result<DparlAnalysis> {
    require_two_actions(ens)?;
    let depth = effective_window(hist, max_window.max(1));
    let grid = VoteGrid::build(ens, hist, depth)?;
    let clean = grid.select_dynamic(depth)?;
    let pw = PredictionWindow::build(ens, hist, depth)?;
    let (a, tparl_k) = tparl_threshold_on(&pw, clean.window_used);
    debug_assert_eq!(a, clean.action);
    let k = ens.num_actions();
    let mut min_l = vec![None; k];
    for w_star in (1..=depth).filter(|&w| w != clean.window_used) {
        for a_prime in (0..k).map(ActionId).filter(|&b| b != a) {
            for a_dbl in (0..k).map(ActionId).filter(|&b| b != a) {
                let l = dparl_aux_on(&pw, w_star, clean.window_used, a, a_prime, a_dbl).l;
                debug_assert!(l >= 0, "clean winner must not admit a free window swap");
                let slot = &mut min_l[a_prime.0];
                *slot = Some(slot.map_or(l, |m: i64| m.min(l)));
            }
        }
    }
    Ok(DparlAnalysis {
        action: a,
        w_prime: clean.window_used,
        depth,
        tparl_k,
        min_l,
    })
}

pub fn dparl_threshold(ens: &Ensemble, hist: &StateHistory, max_window: usize) -> Result<CertificationRecord> {
    let an = dparl_analysis(ens, hist, max_window)?;
    let k = an.min_l.iter().flatten().fold(an.tparl_k, |m, &l| m.min(l));
    Ok(CertificationRecord {
        t: hist.t(),
        action: an.action,
        window_used: an.w_prime,
        threshold: clamp(k, ens.u()),
    })
}

//! The three aggregated policies as pure functions of the ensemble and the
//! recent state history: single-state voting, fixed-window temporal voting,
//! and dynamic-window temporal voting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{
    argmax_smallest, argmax_smallest_excluding, ActionId, Ensemble, StateHistory, StateId, WindowVotes,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Protocol {
    Parl,
    Tparl { window: usize },
    Dparl { max_window: usize },
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Parl => "parl",
            Protocol::Tparl { .. } => "tparl",
            Protocol::Dparl { .. } => "dparl",
        }
    }

    /// Longest window of states the protocol ever looks at.
    pub fn window_bound(&self) -> usize {
        match *self {
            Protocol::Parl => 1,
            Protocol::Tparl { window } => window,
            Protocol::Dparl { max_window } => max_window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_bound() == 0 {
            return Err(CoreError::InvalidConfig(format!(
                "{} window must be at least 1",
                self.name()
            )));
        }
        Ok(())
    }

    /// Parses `parl`, `tparl` or `dparl` with the given window (ignored for parl).
    pub fn from_name(name: &str, window: usize) -> Result<Self> {
        let p = match name {
            "parl" => Protocol::Parl,
            "tparl" => Protocol::Tparl { window },
            "dparl" => Protocol::Dparl { max_window: window },
            other => {
                return Err(CoreError::UnknownName {
                    kind: "protocol",
                    name: other.to_string(),
                    known: "dparl, parl, tparl".into(),
                })
            }
        };
        p.validate()?;
        Ok(p)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = CoreError;

    /// Accepts `parl`, `tparl:<W>` and `dparl:<W_max>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, window) = match s.split_once(':') {
            Some((n, w)) => {
                let w = w
                    .parse::<usize>()
                    .map_err(|_| CoreError::InvalidConfig(format!("bad window in protocol `{s}`")))?;
                (n, w)
            }
            None => (s, 1),
        };
        Protocol::from_name(name, window)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationResult {
    pub action: ActionId,
    pub window_used: usize,
}

/// Vote counts per history offset: `rows[w][a]` is the number of subpolicies
/// voting `a` at state `s_{t-w}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteGrid {
    pub rows: Vec<Vec<u64>>,
    pub u: usize,
}

impl VoteGrid {
    /// Grid over the newest `depth` states of `hist`.
    pub fn build(ens: &Ensemble, hist: &StateHistory, depth: usize) -> Result<Self> {
        let states = hist.recent(depth)?;
        Ok(Self::from_states(ens, &states))
    }

    /// `states` newest first.
    pub fn from_states(ens: &Ensemble, states: &[StateId]) -> Self {
        VoteGrid {
            rows: states.iter().map(|&s| ens.votes_at(s)).collect(),
            u: ens.u(),
        }
    }

    pub fn depth(&self) -> usize {
        self.rows.len()
    }

    pub fn num_actions(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Totals over offsets `0..w`.
    pub fn totals(&self, w: usize) -> Vec<u64> {
        let mut totals = vec![0u64; self.num_actions()];
        for row in &self.rows[..w] {
            for (t, c) in totals.iter_mut().zip(row) {
                *t += c;
            }
        }
        totals
    }

    pub fn window_votes(&self, w: usize) -> Result<WindowVotes> {
        if w == 0 || w > self.depth() {
            return Err(CoreError::WindowExceedsHistory {
                requested: w,
                available: self.depth(),
            });
        }
        WindowVotes::new(self.totals(w), w, self.u)
    }

    /// Top action over the newest `w` states.
    pub fn top_action(&self, w: usize) -> ActionId {
        ActionId(argmax_smallest(&self.totals(w)))
    }

    /// Dynamic-window selection over `1..=min(max_window, depth)`: the window
    /// with the largest average top-vs-runner-up margin, smallest window on ties.
    /// Margins are compared by cross-multiplication.
    pub fn select_dynamic(&self, max_window: usize) -> Result<AggregationResult> {
        let num_actions = self.num_actions();
        if num_actions < 2 {
            return Err(CoreError::TooFewActions(num_actions));
        }
        let limit = max_window.min(self.depth());
        let mut totals = vec![0u64; num_actions];
        let mut best: Option<(ActionId, usize, u64)> = None;
        for w in 1..=limit {
            for (t, c) in totals.iter_mut().zip(&self.rows[w - 1]) {
                *t += c;
            }
            let top = argmax_smallest(&totals);
            let second = argmax_smallest_excluding(&totals, top);
            let margin = totals[top] - totals[second];
            let better = match best {
                None => true,
                Some((_, bw, bm)) => (margin as u128) * (bw as u128) > (bm as u128) * (w as u128),
            };
            if better {
                best = Some((ActionId(top), w, margin));
            }
        }
        let (action, window_used, _) = best.expect("history holds at least one state");
        Ok(AggregationResult { action, window_used })
    }

    /// Aggregated action of `protocol` given this grid (which must cover the
    /// protocol's effective window).
    pub fn aggregate(&self, protocol: Protocol) -> Result<AggregationResult> {
        match protocol {
            Protocol::Parl => Ok(AggregationResult {
                action: self.top_action(1),
                window_used: 1,
            }),
            Protocol::Tparl { window } => {
                let w = window.min(self.depth());
                Ok(AggregationResult {
                    action: self.top_action(w),
                    window_used: w,
                })
            }
            Protocol::Dparl { max_window } => self.select_dynamic(max_window),
        }
    }
}

/// Effective window `min{W, t+1}`, further capped by retained history.
pub fn effective_window(hist: &StateHistory, window: usize) -> usize {
    window.min(hist.t() + 1).min(hist.len())
}

/// `n_a` summed over the newest `w` states.
pub fn vote_counts(ens: &Ensemble, hist: &StateHistory, w: usize) -> Result<WindowVotes> {
    VoteGrid::build(ens, hist, w)?.window_votes(w)
}

pub fn parl_action(ens: &Ensemble, s: StateId) -> AggregationResult {
    let votes = ens.votes_at(s);
    AggregationResult {
        action: ActionId(argmax_smallest(&votes)),
        window_used: 1,
    }
}

pub fn tparl_action(ens: &Ensemble, hist: &StateHistory, window: usize) -> Result<AggregationResult> {
    let w = effective_window(hist, window.max(1));
    let grid = VoteGrid::build(ens, hist, w)?;
    Ok(AggregationResult {
        action: grid.top_action(w),
        window_used: w,
    })
}

pub fn dparl_action(ens: &Ensemble, hist: &StateHistory, max_window: usize) -> Result<AggregationResult> {
    if ens.num_actions() < 2 {
        return Err(CoreError::TooFewActions(ens.num_actions()));
    }
    let depth = effective_window(hist, max_window.max(1));
    VoteGrid::build(ens, hist, depth)?.select_dynamic(depth)
}

pub fn aggregate(ens: &Ensemble, hist: &StateHistory, protocol: Protocol) -> Result<AggregationResult> {
    match protocol {
        Protocol::Parl => Ok(parl_action(ens, hist.current())),
        Protocol::Tparl { window } => tparl_action(ens, hist, window),
        Protocol::Dparl { max_window } => dparl_action(ens, hist, max_window),
    }
}

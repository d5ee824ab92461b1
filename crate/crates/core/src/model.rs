//! Domain types shared by every module: actions, states, trajectories,
//! ensembles, vote tables and the deterministic tie-break order.
//!
//! Actions and states are dense non-negative integers. The integer order on
//! [`ActionId`] is the tie-break order used by every argmax in the crate.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub usize);

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One logged step `(s, a, r, s2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: StateId,
    pub a: ActionId,
    pub r: f64,
    pub s2: StateId,
}

impl Transition {
    pub fn new(s: usize, a: usize, r: f64, s2: usize) -> Self {
        Transition {
            s: StateId(s),
            a: ActionId(a),
            r,
            s2: StateId(s2),
        }
    }
}

/// A non-empty chain of transitions where each step starts where the
/// previous one ended. This is the unit of poisoning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        Self::validate(&transitions, 0)?;
        Ok(Trajectory { transitions })
    }

    fn validate(transitions: &[Transition], index: usize) -> Result<()> {
        if transitions.is_empty() {
            return Err(CoreError::InvalidTrajectory {
                index,
                message: "trajectory has no transitions".into(),
            });
        }
        for (i, pair) in transitions.windows(2).enumerate() {
            if pair[0].s2 != pair[1].s {
                return Err(CoreError::InvalidTrajectory {
                    index,
                    message: format!(
                        "transition {} ends in state {} but transition {} starts in state {}",
                        i,
                        pair[0].s2,
                        i + 1,
                        pair[1].s
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Bit-level identity key. Two trajectories are the same poisoning unit
    /// iff their keys match.
    fn identity_key(&self) -> Vec<(usize, usize, u64, usize)> {
        self.transitions
            .iter()
            .map(|tr| (tr.s.0, tr.a.0, tr.r.to_bits(), tr.s2.0))
            .collect()
    }
}

#[derive(Deserialize)]
struct TrajectoryRecord {
    transitions: Vec<Transition>,
}

impl<'de> Deserialize<'de> for Trajectory {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let record = TrajectoryRecord::deserialize(deserializer)?;
        Trajectory::new(record.transitions).map_err(serde::de::Error::custom)
    }
}

/// The offline training corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        Dataset { trajectories }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn iter_transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.transitions.iter())
    }

    /// `|D ⊖ D'|` counting trajectories as a multiset under value equality.
    pub fn symmetric_difference_size(&self, other: &Dataset) -> usize {
        let mut balance: HashMap<Vec<(usize, usize, u64, usize)>, i64> = HashMap::new();
        for tau in &self.trajectories {
            *balance.entry(tau.identity_key()).or_default() += 1;
        }
        for tau in &other.trajectories {
            *balance.entry(tau.identity_key()).or_default() -= 1;
        }
        balance.values().map(|v| v.unsigned_abs() as usize).sum()
    }

    /// Reads one trajectory per line. Blank lines are skipped; any other
    /// malformed line is an error naming its 1-based line number.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut trajectories = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let tau: Trajectory = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            trajectories.push(tau);
        }
        Ok(Dataset { trajectories })
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for tau in &self.trajectories {
            serde_json::to_writer(&mut writer, tau)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// A total deterministic state → action map. States missing from the table
/// map to `default_action`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabularSubpolicy {
    pub table: BTreeMap<StateId, ActionId>,
    pub default_action: ActionId,
}

impl TabularSubpolicy {
    pub fn new(table: BTreeMap<StateId, ActionId>, default_action: ActionId) -> Self {
        TabularSubpolicy { table, default_action }
    }

    pub fn constant(default_action: ActionId) -> Self {
        TabularSubpolicy {
            table: BTreeMap::new(),
            default_action,
        }
    }

    pub fn act(&self, s: StateId) -> ActionId {
        self.table.get(&s).copied().unwrap_or(self.default_action)
    }
}

/// `u` subpolicies over a shared action space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ensemble {
    num_actions: usize,
    subpolicies: Vec<TabularSubpolicy>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleFile {
    num_actions: usize,
    u: usize,
    default_action: usize,
    subpolicies: Vec<SubpolicyFile>,
}

#[derive(Serialize, Deserialize)]
struct SubpolicyFile {
    table: BTreeMap<usize, usize>,
}

impl Ensemble {
    pub fn new(num_actions: usize, subpolicies: Vec<TabularSubpolicy>) -> Result<Self> {
        if num_actions == 0 {
            return Err(CoreError::InvalidEnsemble("num_actions must be positive".into()));
        }
        if subpolicies.is_empty() {
            return Err(CoreError::InvalidEnsemble(
                "ensemble needs at least one subpolicy".into(),
            ));
        }
        for (i, p) in subpolicies.iter().enumerate() {
            if p.default_action.0 >= num_actions {
                return Err(CoreError::InvalidEnsemble(format!(
                    "subpolicy {i} default action {} out of range",
                    p.default_action
                )));
            }
            if let Some((s, a)) = p.table.iter().find(|(_, a)| a.0 >= num_actions) {
                return Err(CoreError::InvalidEnsemble(format!(
                    "subpolicy {i} maps state {s} to action {a}, but num_actions is {num_actions}"
                )));
            }
        }
        Ok(Ensemble {
            num_actions,
            subpolicies,
        })
    }

    /// Builds an ensemble from a prediction grid: `rows[i][j]` is the action
    /// subpolicy `i` takes in `states[j]`.
    pub fn from_prediction_rows(num_actions: usize, states: &[StateId], rows: &[Vec<usize>]) -> Result<Self> {
        let subpolicies = rows
            .iter()
            .map(|row| {
                if row.len() != states.len() {
                    return Err(CoreError::InvalidEnsemble(format!(
                        "prediction row has {} entries for {} states",
                        row.len(),
                        states.len()
                    )));
                }
                let table = states.iter().copied().zip(row.iter().map(|&a| ActionId(a))).collect();
                Ok(TabularSubpolicy::new(table, ActionId(0)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(num_actions, subpolicies)
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn u(&self) -> usize {
        self.subpolicies.len()
    }

    pub fn subpolicies(&self) -> &[TabularSubpolicy] {
        &self.subpolicies
    }

    /// Per-action vote counts at a single state.
    pub fn votes_at(&self, s: StateId) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_actions];
        for p in &self.subpolicies {
            counts[p.act(s).0] += 1;
        }
        counts
    }

    pub fn to_json(&self) -> Result<String> {
        let file = EnsembleFile {
            num_actions: self.num_actions,
            u: self.subpolicies.len(),
            default_action: self.subpolicies.first().map_or(0, |p| p.default_action.0),
            subpolicies: self
                .subpolicies
                .iter()
                .map(|p| SubpolicyFile {
                    table: p.table.iter().map(|(s, a)| (s.0, a.0)).collect(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: EnsembleFile = serde_json::from_str(text)?;
        if file.u != file.subpolicies.len() {
            return Err(CoreError::InvalidEnsemble(format!(
                "header says u = {} but file lists {} subpolicies",
                file.u,
                file.subpolicies.len()
            )));
        }
        let default_action = ActionId(file.default_action);
        let subpolicies = file
            .subpolicies
            .into_iter()
            .map(|p| {
                let table = p.table.into_iter().map(|(s, a)| (StateId(s), ActionId(a))).collect();
                TabularSubpolicy::new(table, default_action)
            })
            .collect();
        Ensemble::new(file.num_actions, subpolicies)
    }
}

/// Index of the largest count; ties go to the smallest index.
pub(crate) fn argmax_smallest(counts: &[u64]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Like [`argmax_smallest`] but never returns `excluded`. Needs `counts.len() >= 2`.
pub(crate) fn argmax_smallest_excluding(counts: &[u64], excluded: usize) -> usize {
    let mut best: Option<usize> = None;
    for (i, &c) in counts.iter().enumerate() {
        if i == excluded {
            continue;
        }
        match best {
            Some(b) if c <= counts[b] => {}
            _ => best = Some(i),
        }
    }
    best.expect("at least two actions")
}

/// Per-action vote totals over a window of `window_len` states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowVotes {
    counts: Vec<u64>,
    window_len: usize,
    u: usize,
}

impl WindowVotes {
    pub fn new(counts: Vec<u64>, window_len: usize, u: usize) -> Result<Self> {
        if counts.is_empty() || window_len == 0 {
            return Err(CoreError::Precondition(
                "vote table needs actions and a positive window".into(),
            ));
        }
        let total: u64 = counts.iter().sum();
        if total != (window_len * u) as u64 {
            return Err(CoreError::Precondition(format!(
                "vote total {total} differs from window_len * u = {}",
                window_len * u
            )));
        }
        Ok(WindowVotes { counts, window_len, u })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, a: ActionId) -> u64 {
        self.counts.get(a.0).copied().unwrap_or(0)
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn u(&self) -> usize {
        self.u
    }

    pub fn num_actions(&self) -> usize {
        self.counts.len()
    }

    /// Smallest action achieving the maximum count.
    pub fn argmax_with_tiebreak(&self) -> ActionId {
        ActionId(argmax_smallest(&self.counts))
    }

    /// Smallest action other than `top` with the maximum count among the rest.
    pub fn runner_up(&self, top: ActionId) -> Result<ActionId> {
        if self.counts.len() < 2 {
            return Err(CoreError::TooFewActions(self.counts.len()));
        }
        Ok(ActionId(argmax_smallest_excluding(&self.counts, top.0)))
    }
}

/// The most recent states, newest last, together with the current step `t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateHistory {
    states: Vec<StateId>,
    t: usize,
    capacity: usize,
}

impl StateHistory {
    /// History at `t = 0` holding only the initial state.
    pub fn start(s0: StateId, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        StateHistory {
            states: vec![s0],
            t: 0,
            capacity,
        }
    }

    /// History after observing `sequence` (`s_0 .. s_t`); keeps the last
    /// `capacity` states.
    pub fn from_sequence(sequence: &[StateId], capacity: usize) -> Result<Self> {
        if sequence.is_empty() {
            return Err(CoreError::Precondition("state history cannot be empty".into()));
        }
        let capacity = capacity.max(1);
        let keep = sequence.len().min(capacity);
        Ok(StateHistory {
            states: sequence[sequence.len() - keep..].to_vec(),
            t: sequence.len() - 1,
            capacity,
        })
    }

    /// Advances one step to state `s`.
    pub fn push(&mut self, s: StateId) {
        self.states.push(s);
        if self.states.len() > self.capacity {
            self.states.remove(0);
        }
        self.t += 1;
    }

    pub fn pushed(&self, s: StateId) -> Self {
        let mut next = self.clone();
        next.push(s);
        next
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[StateId] {
        &self.states
    }

    pub fn current(&self) -> StateId {
        *self.states.last().expect("history is never empty")
    }

    /// `s_{t-w}`, or `None` when `w` reaches past the retained history.
    pub fn at_offset(&self, w: usize) -> Option<StateId> {
        self.states.len().checked_sub(w + 1).map(|i| self.states[i])
    }

    /// The last `w` states, newest first.
    pub fn recent(&self, w: usize) -> Result<Vec<StateId>> {
        if w == 0 || w > self.states.len() {
            return Err(CoreError::WindowExceedsHistory {
                requested: w,
                available: self.states.len(),
            });
        }
        Ok(self.states.iter().rev().take(w).copied().collect())
    }

    /// Copy truncated to a smaller capacity (used as a memo key).
    pub fn truncated(&self, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        let keep = self.states.len().min(capacity);
        StateHistory {
            states: self.states[self.states.len() - keep..].to_vec(),
            t: self.t,
            capacity,
        }
    }
}

/// Output of a per-step certification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificationRecord {
    pub t: usize,
    pub action: ActionId,
    pub window_used: usize,
    pub threshold: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn votes(counts: &[u64]) -> WindowVotes {
        let u = counts.iter().sum::<u64>() as usize;
        WindowVotes::new(counts.to_vec(), 1, u).unwrap()
    }

    #[test]
    fn argmax_breaks_ties_towards_smaller_action() {
        assert_eq!(votes(&[3, 3]).argmax_with_tiebreak(), ActionId(0));
        assert_eq!(votes(&[0, 5]).argmax_with_tiebreak(), ActionId(1));
        assert_eq!(votes(&[1, 2, 2]).argmax_with_tiebreak(), ActionId(1));
    }

    #[test]
    fn runner_up_examples() {
        assert_eq!(votes(&[5, 3, 3]).runner_up(ActionId(0)).unwrap(), ActionId(1));
        assert_eq!(votes(&[3, 3]).runner_up(ActionId(0)).unwrap(), ActionId(1));
        assert_eq!(votes(&[1, 0, 4]).runner_up(ActionId(2)).unwrap(), ActionId(0));
        assert!(matches!(
            votes(&[4]).runner_up(ActionId(0)),
            Err(CoreError::TooFewActions(1))
        ));
    }

    #[test]
    fn window_votes_checks_normalization() {
        assert!(WindowVotes::new(vec![2, 1], 1, 4).is_err());
        assert!(WindowVotes::new(vec![2, 2], 2, 2).is_ok());
    }

    #[test]
    fn trajectory_chain_is_validated() {
        let ok = Trajectory::new(vec![Transition::new(0, 1, 0.0, 1), Transition::new(1, 1, 1.0, 2)]);
        assert!(ok.is_ok());
        let broken = Trajectory::new(vec![Transition::new(0, 1, 0.0, 1), Transition::new(2, 1, 1.0, 2)]);
        assert!(broken.is_err());
        assert!(Trajectory::new(vec![]).is_err());
    }

    #[test]
    fn jsonl_load_reports_line_numbers() {
        let text = "{\"transitions\":[{\"s\":0,\"a\":1,\"r\":0.0,\"s2\":1}]}\n\
                    {\"transitions\":[{\"s\":0,\"a\":1,\"r\":0.0,\"s2\":1},{\"s\":3,\"a\":0,\"r\":0,\"s2\":3}]}\n";
        match Dataset::read_jsonl(text.as_bytes()) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let garbage = "{\"transitions\":[]}\nnot json\n";
        assert!(matches!(
            Dataset::read_jsonl(garbage.as_bytes()),
            Err(CoreError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let d = Dataset::new(vec![
            Trajectory::new(vec![Transition::new(0, 1, 0.5, 1), Transition::new(1, 0, -1.25, 1)]).unwrap(),
            Trajectory::new(vec![Transition::new(4, 0, 0.0, 4)]).unwrap(),
        ]);
        let mut buf = Vec::new();
        d.write_jsonl(&mut buf).unwrap();
        assert_eq!(Dataset::read_jsonl(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn symmetric_difference_counts_multiset_changes() {
        let a = Trajectory::new(vec![Transition::new(0, 0, 0.0, 0)]).unwrap();
        let b = Trajectory::new(vec![Transition::new(1, 0, 0.0, 1)]).unwrap();
        let c = Trajectory::new(vec![Transition::new(2, 1, 1.0, 2)]).unwrap();
        let d1 = Dataset::new(vec![a.clone(), b.clone(), a.clone()]);
        let d2 = Dataset::new(vec![a.clone(), c.clone()]);
        // one copy of a removed, b removed, c inserted
        assert_eq!(d1.symmetric_difference_size(&d2), 3);
        assert_eq!(d1.symmetric_difference_size(&d1), 0);
    }

    #[test]
    fn ensemble_json_round_trip_and_validation() {
        let states = [StateId(0), StateId(5)];
        let ens = Ensemble::from_prediction_rows(3, &states, &[vec![0, 2], vec![1, 1]]).unwrap();
        let text = ens.to_json().unwrap();
        assert!(text.contains("\"5\": 2"));
        assert_eq!(Ensemble::from_json(&text).unwrap(), ens);
        assert!(Ensemble::from_prediction_rows(2, &states, &[vec![0, 2]]).is_err());
        let bad_u = text.replace("\"u\": 2", "\"u\": 3");
        assert!(Ensemble::from_json(&bad_u).is_err());
    }

    #[test]
    fn history_truncates_to_capacity() {
        let seq: Vec<StateId> = (0..6).map(StateId).collect();
        let h = StateHistory::from_sequence(&seq, 3).unwrap();
        assert_eq!(h.t(), 5);
        assert_eq!(h.len(), 3);
        assert_eq!(h.at_offset(0), Some(StateId(5)));
        assert_eq!(h.at_offset(2), Some(StateId(3)));
        assert_eq!(h.at_offset(3), None);
        let mut g = StateHistory::start(StateId(0), 2);
        g.push(StateId(1));
        g.push(StateId(2));
        assert_eq!(g.states(), &[StateId(1), StateId(2)]);
        assert_eq!(g.len(), (g.t() + 1).min(g.capacity()));
        assert!(h.recent(4).is_err());
    }
}

//! Ground truth on small instances: exhaustive subpolicy-level attacks, the
//! explicit attacks that make the single-state and fixed-window thresholds
//! tight, and an exhaustive trajectory enumerator for reward bounds.
//!
//! An attack of size `k` replaces `k` subpolicies by arbitrary tables. Only
//! the distinct states inside the protocol's window matter, so a replacement
//! is a "column" assigning one action to each of those states. Subpolicies
//! with identical columns are interchangeable, and the order in which new
//! columns are assigned is irrelevant, so the enumeration walks removal counts
//! per column class and multisets of replacement columns.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::aggregation::{effective_window, Protocol, VoteGrid};
use crate::certify::{tparl_margins, tparl_threshold};
use crate::env::DeterministicEnv;
use crate::error::{CoreError, Result};
use crate::model::{argmax_smallest, ActionId, Dataset, Ensemble, StateHistory, StateId, Trajectory, Transition};
use crate::partition::partition_index;
use crate::protocol::AggregationProtocol;

/// Largest ensemble the exhaustive search accepts.
pub const MAX_ORACLE_U: usize = 8;
/// Largest number of distinct replacement columns (`|A|^d` for `d` distinct
/// window states).
pub const MAX_ORACLE_COLUMNS: usize = 256;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttackSpec {
    pub poisoned: BTreeSet<usize>,
    pub overrides: BTreeMap<(usize, StateId), ActionId>,
}

impl AttackSpec {
    pub fn size(&self) -> usize {
        self.poisoned.len()
    }
}

impl Serialize for AttackSpec {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Entry {
            subpolicy: usize,
            state: StateId,
            action: ActionId,
        }
        let entries: Vec<Entry> = self
            .overrides
            .iter()
            .map(|(&(subpolicy, state), &action)| Entry {
                subpolicy,
                state,
                action,
            })
            .collect();
        let mut st = ser.serialize_struct("AttackSpec", 2)?;
        st.serialize_field("poisoned", &self.poisoned)?;
        st.serialize_field("overrides", &entries)?;
        st.end()
    }
}

pub fn apply_attack(ens: &Ensemble, atk: &AttackSpec) -> Result<Ensemble> {
    let u = ens.u();
    if let Some(&i) = atk.poisoned.iter().find(|&&i| i >= u) {
        return Err(CoreError::Precondition(format!(
            "poisoned index {i} out of range for u = {u}"
        )));
    }
    let mut subs = ens.subpolicies().to_vec();
    for (&(i, s), &a) in &atk.overrides {
        if !atk.poisoned.contains(&i) {
            return Err(CoreError::Precondition(format!("override on unpoisoned subpolicy {i}")));
        }
        if a.0 >= ens.num_actions() {
            return Err(CoreError::Precondition(format!("override action {a} out of range")));
        }
        subs[i].table.insert(s, a);
    }
    Ensemble::new(ens.num_actions(), subs)
}

struct ColumnClass {
    column: Vec<usize>,
    members: Vec<usize>,
}

/// Attack space of one (ensemble, history, protocol) instance.
struct AttackSpace {
    protocol: Protocol,
    num_actions: usize,
    u: usize,
    distinct: Vec<StateId>,
    /// Distinct-state index of each window offset.
    slot: Vec<usize>,
    classes: Vec<ColumnClass>,
    columns: usize,
    base: VoteGrid,
}

enum Visit {
    Continue,
    Stop,
}

impl AttackSpace {
    fn new(ens: &Ensemble, hist: &StateHistory, protocol: Protocol) -> Result<Self> {
        protocol.validate()?;
        let u = ens.u();
        if u > MAX_ORACLE_U {
            return Err(CoreError::EnvelopeExceeded(format!("u = {u} exceeds {MAX_ORACLE_U}")));
        }
        let depth = effective_window(hist, protocol.window_bound());
        let states = hist.recent(depth)?;
        let mut distinct: Vec<StateId> = Vec::new();
        let slot = states
            .iter()
            .map(|s| match distinct.iter().position(|d| d == s) {
                Some(p) => p,
                None => {
                    distinct.push(*s);
                    distinct.len() - 1
                }
            })
            .collect();
        let columns = (0..distinct.len()).try_fold(1usize, |acc, _| {
            acc.checked_mul(ens.num_actions()).filter(|&c| c <= MAX_ORACLE_COLUMNS)
        });
        let Some(columns) = columns else {
            return Err(CoreError::EnvelopeExceeded(format!(
                "{} actions over {} distinct window states exceed {MAX_ORACLE_COLUMNS} replacement columns",
                ens.num_actions(),
                distinct.len()
            )));
        };
        let mut classes: Vec<ColumnClass> = Vec::new();
        for (i, p) in ens.subpolicies().iter().enumerate() {
            let column: Vec<usize> = distinct.iter().map(|&s| p.act(s).0).collect();
            match classes.iter_mut().find(|c| c.column == column) {
                Some(c) => c.members.push(i),
                None => classes.push(ColumnClass {
                    column,
                    members: vec![i],
                }),
            }
        }
        Ok(AttackSpace {
            protocol,
            num_actions: ens.num_actions(),
            u,
            distinct,
            slot,
            classes,
            columns,
            base: VoteGrid::from_states(ens, &states),
        })
    }

    fn decode(&self, mut code: usize) -> Vec<usize> {
        (0..self.distinct.len())
            .map(|_| {
                let a = code % self.num_actions;
                code /= self.num_actions;
                a
            })
            .collect()
    }

    fn shift(&self, grid: &mut VoteGrid, column: &[usize], add: bool, times: u64) {
        for (w, row) in grid.rows.iter_mut().enumerate() {
            let a = column[self.slot[w]];
            if add {
                row[a] += times;
            } else {
                row[a] -= times;
            }
        }
    }

    fn clean_action(&self) -> Result<ActionId> {
        Ok(self.base.aggregate(self.protocol)?.action)
    }

    fn witness(&self, removed: &[usize], added: &[usize]) -> AttackSpec {
        let mut victims = Vec::new();
        for (c, &r) in self.classes.iter().zip(removed) {
            victims.extend_from_slice(&c.members[..r]);
        }
        let mut atk = AttackSpec::default();
        for (&i, &code) in victims.iter().zip(added) {
            atk.poisoned.insert(i);
            for (s, a) in self.distinct.iter().zip(self.decode(code)) {
                atk.overrides.insert((i, *s), ActionId(a));
            }
        }
        atk
    }

    /// Calls `f` with the attacked aggregate of every attack that replaces
    /// exactly `k` subpolicies.
    fn for_each_attack<F>(&self, k: usize, f: &mut F) -> Result<()>
    where
        F: FnMut(ActionId, &[usize], &[usize]) -> Visit,
    {
        let decoded: Vec<Vec<usize>> = (0..self.columns).map(|c| self.decode(c)).collect();
        let mut grid = self.base.clone();
        let mut removed = vec![0usize; self.classes.len()];
        let mut added = Vec::with_capacity(k);
        self.removals(0, k, &decoded, &mut grid, &mut removed, &mut added, f)?;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn removals<F>(
        &self,
        class: usize,
        left: usize,
        decoded: &[Vec<usize>],
        grid: &mut VoteGrid,
        removed: &mut Vec<usize>,
        added: &mut Vec<usize>,
        f: &mut F,
    ) -> Result<Visit>
    where
        F: FnMut(ActionId, &[usize], &[usize]) -> Visit,
    {
        if class == self.classes.len() {
            if left > 0 {
                return Ok(Visit::Continue);
            }
            let k = removed.iter().sum();
            return self.additions(0, k, decoded, grid, removed, added, f);
        }
        let cap = self.classes[class].members.len().min(left);
        for r in 0..=cap {
            self.shift(grid, &self.classes[class].column, false, r as u64);
            removed[class] = r;
            let v = self.removals(class + 1, left - r, decoded, grid, removed, added, f)?;
            self.shift(grid, &self.classes[class].column, true, r as u64);
            removed[class] = 0;
            if let Visit::Stop = v {
                return Ok(Visit::Stop);
            }
        }
        Ok(Visit::Continue)
    }

    #[allow(clippy::too_many_arguments)]
    fn additions<F>(
        &self,
        from: usize,
        left: usize,
        decoded: &[Vec<usize>],
        grid: &mut VoteGrid,
        removed: &[usize],
        added: &mut Vec<usize>,
        f: &mut F,
    ) -> Result<Visit>
    where
        F: FnMut(ActionId, &[usize], &[usize]) -> Visit,
    {
        if left == 0 {
            let action = grid.aggregate(self.protocol)?.action;
            return Ok(f(action, removed, added));
        }
        for code in from..self.columns {
            self.shift(grid, &decoded[code], true, 1);
            added.push(code);
            let v = self.additions(code, left - 1, decoded, grid, removed, added, f)?;
            added.pop();
            self.shift(grid, &decoded[code], false, 1);
            if let Visit::Stop = v {
                return Ok(Visit::Stop);
            }
        }
        Ok(Visit::Continue)
    }
}

/// Smallest attack that changes the aggregated action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlipSearch {
    pub flip_size: usize,
    pub flipped_to: ActionId,
    pub witness: AttackSpec,
}

/// Exhaustive search for the smallest flipping attack; `None` when not even
/// replacing all `u` subpolicies changes the action (only with one action).
pub fn brute_force_flip_threshold(
    ens: &Ensemble,
    hist: &StateHistory,
    protocol: Protocol,
) -> Result<Option<FlipSearch>> {
    let space = AttackSpace::new(ens, hist, protocol)?;
    let clean = space.clean_action()?;
    for k in 1..=space.u {
        let mut found = None;
        space.for_each_attack(k, &mut |a, removed, added| {
            if a != clean {
                found = Some((a, space.witness(removed, added)));
                Visit::Stop
            } else {
                Visit::Continue
            }
        })?;
        if let Some((flipped_to, witness)) = found {
            return Ok(Some(FlipSearch {
                flip_size: k,
                flipped_to,
                witness,
            }));
        }
    }
    Ok(None)
}

/// Exact tolerable threshold: one less than the smallest flipping attack.
pub fn exact_tolerable_threshold(ens: &Ensemble, hist: &StateHistory, protocol: Protocol) -> Result<usize> {
    Ok(brute_force_flip_threshold(ens, hist, protocol)?.map_or(ens.u(), |f| f.flip_size - 1))
}

/// Every action some attack replacing at most `k` subpolicies can produce.
pub fn brute_force_action_set(
    ens: &Ensemble,
    hist: &StateHistory,
    protocol: Protocol,
    k: usize,
) -> Result<BTreeSet<ActionId>> {
    let space = AttackSpace::new(ens, hist, protocol)?;
    let mut reached = BTreeSet::from([space.clean_action()?]);
    let size = k.min(space.u);
    if size == 0 {
        return Ok(reached);
    }
    let all = space.num_actions;
    space.for_each_attack(size, &mut |a, _, _| {
        reached.insert(a);
        if reached.len() == all {
            Visit::Stop
        } else {
            Visit::Continue
        }
    })?;
    Ok(reached)
}

/// Moves `k_plus_one` votes from the single-state winner to its strongest rival.
pub fn construct_parl_attack(ens: &Ensemble, s: StateId, k_plus_one: usize) -> Result<AttackSpec> {
    if ens.num_actions() < 2 {
        return Err(CoreError::TooFewActions(ens.num_actions()));
    }
    let votes = ens.votes_at(s);
    let a = ActionId(argmax_smallest(&votes));
    let rival = (0..votes.len())
        .filter(|&b| b != a.0)
        .max_by_key(|&b| (votes[b] + u64::from(b < a.0), std::cmp::Reverse(b)))
        .map(ActionId)
        .expect("two actions");
    let voters: Vec<usize> = ens
        .subpolicies()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.act(s) == a)
        .map(|(i, _)| i)
        .take(k_plus_one)
        .collect();
    if voters.len() < k_plus_one {
        return Err(CoreError::Precondition(format!(
            "only {} subpolicies vote for the winner, cannot flip {k_plus_one}",
            voters.len()
        )));
    }
    let mut atk = AttackSpec::default();
    for i in voters {
        atk.poisoned.insert(i);
        atk.overrides.insert((i, s), rival);
    }
    Ok(atk)
}

/// Rewrites the `k_plus_one` subpolicies with the largest margins against the
/// alternative that binds the fixed-window threshold so that they vote for it
/// throughout the window.
pub fn construct_tparl_attack(
    ens: &Ensemble,
    hist: &StateHistory,
    window: usize,
    k_plus_one: usize,
) -> Result<AttackSpec> {
    if k_plus_one > ens.u() {
        return Err(CoreError::Precondition(format!(
            "cannot poison {k_plus_one} of {} subpolicies",
            ens.u()
        )));
    }
    let rec = tparl_threshold(ens, hist, window)?;
    let a = rec.action;
    let w = rec.window_used;
    let n = crate::aggregation::vote_counts(ens, hist, w)?;
    let mut target: Option<(ActionId, i64, crate::certify::MarginList)> = None;
    for b in (0..ens.num_actions()).map(ActionId).filter(|&b| b != a) {
        let m = tparl_margins(ens, hist, window, a, b)?;
        let delta = n.count(a) as i64 - (n.count(b) as i64 + i64::from(b < a));
        let mut sum = 0;
        let mut p = 0;
        for v in &m.sorted_desc {
            sum += v;
            if sum > delta {
                break;
            }
            p += 1;
        }
        if target.as_ref().is_none_or(|(_, best, _)| p < *best) {
            target = Some((b, p, m));
        }
    }
    let (b, _, margins) = target.expect("two actions");
    let mut order: Vec<usize> = (0..ens.u()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(margins.values[i]), i));
    let window_states: BTreeSet<StateId> = hist.recent(w)?.into_iter().collect();
    let mut atk = AttackSpec::default();
    for &i in &order[..k_plus_one] {
        atk.poisoned.insert(i);
        for &s in &window_states {
            atk.overrides.insert((i, s), b);
        }
    }
    Ok(atk)
}

/// Reward large enough to dominate any logged transition in the memorizer.
const POISON_REWARD: f64 = 1.0e6;

/// One inserted trajectory per poisoned subpolicy, crafted so that it hashes
/// into that subpolicy's partition and makes the memorizer learn the
/// overridden actions.
pub fn memorizer_poison_trajectories(atk: &AttackSpec, u: usize) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for &i in &atk.poisoned {
        let steps: Vec<(StateId, ActionId)> = atk
            .overrides
            .range((i, StateId(0))..=(i, StateId(usize::MAX)))
            .map(|(&(_, s), &a)| (s, a))
            .collect();
        if steps.is_empty() {
            continue;
        }
        let mut transitions: Vec<Transition> = steps
            .iter()
            .enumerate()
            .map(|(j, &(s, a))| {
                let s2 = steps.get(j + 1).map_or(s, |n| n.0);
                Transition::new(s.0, a.0, POISON_REWARD, s2.0)
            })
            .collect();
        let mut nudge = 0;
        loop {
            let tau = Trajectory::new(transitions.clone())?;
            if partition_index(&tau, u) == i {
                out.push(tau);
                break;
            }
            nudge += 1;
            if nudge > u {
                return Err(CoreError::Precondition("could not steer the trajectory hash".into()));
            }
            let last = transitions.last_mut().expect("non-empty");
            last.r = POISON_REWARD + nudge as f64 * 0.001;
        }
    }
    Ok(out)
}

/// Appends [`memorizer_poison_trajectories`] to `d`.
pub fn memorizer_poisoned_dataset(d: &Dataset, atk: &AttackSpec, u: usize) -> Result<Dataset> {
    let mut trajectories = d.trajectories.clone();
    trajectories.extend(memorizer_poison_trajectories(atk, u)?);
    Ok(Dataset::new(trajectories))
}

/// Minimum total reward over every action sequence whose steps all lie in the
/// protocol's possible action set at budget `k`. Exponential in the horizon.
pub fn enumerate_reward_bound(
    env: &DeterministicEnv,
    ens: &Ensemble,
    strategy: &dyn AggregationProtocol,
    horizon: usize,
    k: usize,
) -> Result<f64> {
    let na = env.num_actions();
    let total = na
        .checked_pow(horizon as u32)
        .filter(|&c| c <= 1 << 20)
        .ok_or_else(|| CoreError::EnvelopeExceeded(format!("{na}^{horizon} action sequences")))?;
    let mut best = f64::INFINITY;
    let mut sets: HashMap<StateHistory, BTreeSet<ActionId>> = HashMap::new();
    'seq: for code in 0..total {
        let mut c = code;
        let mut hist = StateHistory::start(env.s0(), strategy.history_capacity());
        let mut reward = 0.0;
        for _ in 0..horizon {
            let a = ActionId(c % na);
            c /= na;
            if !sets.contains_key(&hist) {
                let set = strategy.action_set(ens, &hist, k)?.actions;
                sets.insert(hist.clone(), set);
            }
            if !sets[&hist].contains(&a) {
                continue 'seq;
            }
            let (s2, r) = env.step(hist.current(), a)?;
            reward += r;
            hist.push(s2);
        }
        best = best.min(reward);
    }
    Ok(best)
}

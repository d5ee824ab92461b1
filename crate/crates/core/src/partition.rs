//! Hash partitioning of the trajectory dataset and per-partition training.
//!
//! Each trajectory lands in partition `h(τ) mod u`, where `h` depends only on
//! the trajectory's own content. One tabular subpolicy is trained per
//! partition with a learner picked from [`learners`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{ActionId, Dataset, Ensemble, StateId, TabularSubpolicy, Trajectory};
use crate::registry::Registry;

/// Action given to states a partition never saw.
pub const DEFAULT_ACTION: ActionId = ActionId(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Memorizer,
    Qtable,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Memorizer => "memorizer",
            LearnerKind::Qtable => "qtable",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memorizer" => Ok(LearnerKind::Memorizer),
            "qtable" => Ok(LearnerKind::Qtable),
            other => Err(CoreError::UnknownName {
                kind: "learner",
                name: other.to_string(),
                known: "memorizer, qtable".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub u: usize,
    pub learner: LearnerKind,
    pub q_iters: usize,
    pub gamma: f64,
}

impl PartitionConfig {
    pub fn memorizer(u: usize) -> Self {
        PartitionConfig {
            u,
            learner: LearnerKind::Memorizer,
            q_iters: 1,
            gamma: 0.0,
        }
    }

    pub fn qtable(u: usize, gamma: f64, q_iters: usize) -> Self {
        PartitionConfig {
            u,
            learner: LearnerKind::Qtable,
            q_iters,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.u == 0 {
            return Err(CoreError::InvalidConfig("partition count u must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(CoreError::InvalidConfig(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.q_iters == 0 {
            return Err(CoreError::InvalidConfig("q_iters must be positive".into()));
        }
        Ok(())
    }
}

/// `Σ (31·s + 17·a + round(1000·r))` in wrapping 64-bit arithmetic.
pub fn hash_trajectory(tau: &Trajectory) -> u64 {
    tau.transitions().iter().fold(0u64, |acc, tr| {
        let reward_term = (tr.r * 1000.0).round() as i64 as u64;
        acc.wrapping_add((tr.s.0 as u64).wrapping_mul(31))
            .wrapping_add((tr.a.0 as u64).wrapping_mul(17))
            .wrapping_add(reward_term)
    })
}

pub fn partition_index(tau: &Trajectory, u: usize) -> usize {
    (hash_trajectory(tau) % u as u64) as usize
}

/// Splits `d` into `u` disjoint partitions, preserving relative order.
pub fn partition_dataset(d: &Dataset, u: usize) -> Result<Vec<Dataset>> {
    if u == 0 {
        return Err(CoreError::InvalidConfig("partition count u must be at least 1".into()));
    }
    let mut parts = vec![Dataset::default(); u];
    for tau in &d.trajectories {
        parts[partition_index(tau, u)].trajectories.push(tau.clone());
    }
    Ok(parts)
}

/// An offline learner mapping one partition to a subpolicy.
pub trait Learner: Send + Sync {
    fn name(&self) -> &'static str;
    fn train(&self, part: &Dataset) -> TabularSubpolicy;
}

/// Picks, per state, the action of the highest-reward transition seen there.
/// Reward ties go to the smaller action, then to the earlier occurrence.
pub struct Memorizer;

impl Learner for Memorizer {
    fn name(&self) -> &'static str {
        "memorizer"
    }

    fn train(&self, part: &Dataset) -> TabularSubpolicy {
        train_memorizer(part)
    }
}

pub fn train_memorizer(part: &Dataset) -> TabularSubpolicy {
    let mut best: BTreeMap<StateId, (f64, ActionId)> = BTreeMap::new();
    for tr in part.iter_transitions() {
        match best.get(&tr.s) {
            Some(&(r, a)) if r > tr.r || (r == tr.r && a <= tr.a) => {}
            _ => {
                best.insert(tr.s, (tr.r, tr.a));
            }
        }
    }
    let table = best.into_iter().map(|(s, (_, a))| (s, a)).collect();
    TabularSubpolicy::new(table, DEFAULT_ACTION)
}

/// Value iteration on the empirical deterministic model of a partition.
pub struct QTableLearner {
    pub gamma: f64,
    pub iters: usize,
}

impl Learner for QTableLearner {
    fn name(&self) -> &'static str {
        "qtable"
    }

    fn train(&self, part: &Dataset) -> TabularSubpolicy {
        train_qtable(part, self.gamma, self.iters)
    }
}

/// Runs `iters` synchronous Bellman sweeps from `Q = 0` over the observed
/// `(s, a) → (r, s2)` model (duplicates: last write wins). The greedy action
/// is taken over the actions observed at each state, smaller action on ties.
pub fn train_qtable(part: &Dataset, gamma: f64, iters: usize) -> TabularSubpolicy {
    let mut model: BTreeMap<StateId, BTreeMap<ActionId, (f64, StateId)>> = BTreeMap::new();
    for tr in part.iter_transitions() {
        model.entry(tr.s).or_default().insert(tr.a, (tr.r, tr.s2));
    }
    let mut q: BTreeMap<(StateId, ActionId), f64> = model
        .iter()
        .flat_map(|(&s, acts)| acts.keys().map(move |&a| ((s, a), 0.0)))
        .collect();

    let state_value = |q: &BTreeMap<(StateId, ActionId), f64>, s: StateId| -> f64 {
        model
            .get(&s)
            .map(|acts| acts.keys().map(|&a| q[&(s, a)]).fold(f64::NEG_INFINITY, f64::max))
            .unwrap_or(0.0)
    };

    for _ in 0..iters {
        let next: BTreeMap<(StateId, ActionId), f64> = model
            .iter()
            .flat_map(|(&s, acts)| acts.iter().map(move |(&a, &(r, s2))| ((s, a), r, s2)))
            .map(|(key, r, s2)| (key, r + gamma * state_value(&q, s2)))
            .collect();
        q = next;
    }

    let table = model
        .iter()
        .map(|(&s, acts)| {
            let mut best: Option<(ActionId, f64)> = None;
            for &a in acts.keys() {
                let v = q[&(s, a)];
                match best {
                    Some((_, bv)) if v <= bv => {}
                    _ => best = Some((a, v)),
                }
            }
            (s, best.expect("observed state has an action").0)
        })
        .collect();
    TabularSubpolicy::new(table, DEFAULT_ACTION)
}

/// Built-in learners keyed by name.
pub fn learners() -> Registry<dyn Learner, PartitionConfig> {
    let mut reg: Registry<dyn Learner, PartitionConfig> = Registry::new("learner");
    reg.register("memorizer", |_| Ok(Box::new(Memorizer)));
    reg.register("qtable", |cfg| {
        Ok(Box::new(QTableLearner {
            gamma: cfg.gamma,
            iters: cfg.q_iters,
        }))
    });
    reg
}

/// Partitions `d` and trains one subpolicy per partition.
pub fn build_ensemble(d: &Dataset, num_actions: usize, cfg: &PartitionConfig) -> Result<Ensemble> {
    cfg.validate()?;
    let learner = learners().build(cfg.learner.name(), cfg)?;
    let parts = partition_dataset(d, cfg.u)?;
    let subpolicies = parts.iter().map(|p| learner.train(p)).collect();
    Ensemble::new(num_actions, subpolicies)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Transition;

    fn traj(steps: &[(usize, usize, f64, usize)]) -> Trajectory {
        Trajectory::new(
            steps
                .iter()
                .map(|&(s, a, r, s2)| Transition::new(s, a, r, s2))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn hash_examples() {
        assert_eq!(hash_trajectory(&traj(&[(0, 0, 0.0, 0)])), 0);
        assert_eq!(hash_trajectory(&traj(&[(1, 1, 0.5, 2)])), 31 + 17 + 500);
        let a = hash_trajectory(&traj(&[(1, 1, 0.5, 2)]));
        let b = hash_trajectory(&traj(&[(2, 0, -1.0, 2)]));
        assert_eq!(
            hash_trajectory(&traj(&[(1, 1, 0.5, 2), (2, 0, -1.0, 2)])),
            a.wrapping_add(b)
        );
    }

    #[test]
    fn u_one_keeps_everything_in_order() {
        let d = Dataset::new(vec![traj(&[(0, 1, 0.0, 1)]), traj(&[(3, 0, 2.0, 3)])]);
        let parts = partition_dataset(&d, 1).unwrap();
        assert_eq!(parts, vec![d]);
        let empty = partition_dataset(&Dataset::default(), 4).unwrap();
        assert_eq!(empty.len(), 4);
        assert!(empty.iter().all(Dataset::is_empty));
        assert!(partition_dataset(&Dataset::default(), 0).is_err());
    }

    #[test]
    fn memorizer_examples() {
        let tie = Dataset::new(vec![traj(&[(3, 2, 1.0, 3), (3, 0, 1.0, 3)])]);
        assert_eq!(train_memorizer(&tie).act(StateId(3)), ActionId(0));
        let max = Dataset::new(vec![traj(&[(3, 2, 5.0, 3), (3, 0, 1.0, 3)])]);
        assert_eq!(train_memorizer(&max).act(StateId(3)), ActionId(2));
        let empty = train_memorizer(&Dataset::default());
        assert!(empty.table.is_empty());
        assert_eq!(empty.act(StateId(9)), ActionId(0));
    }

    #[test]
    fn qtable_examples() {
        let one = Dataset::new(vec![traj(&[(0, 1, 1.0, 0)])]);
        assert_eq!(train_qtable(&one, 0.0, 1).act(StateId(0)), ActionId(1));
        let empty = train_qtable(&Dataset::default(), 0.9, 5);
        assert!(empty.table.is_empty());
    }

    /// Exact Q* of the 3-state chain (stay=0, advance=1, reward 1 for landing
    /// on or staying on the goal by advancing) solved by hand.
    #[test]
    fn qtable_matches_closed_form_chain_policy() {
        let gamma: f64 = 0.9;
        let d = Dataset::new(vec![traj(&[
            (0, 0, 0.0, 0),
            (0, 1, 0.0, 1),
            (1, 0, 0.0, 1),
            (1, 1, 1.0, 2),
            (2, 0, 0.0, 2),
            (2, 1, 1.0, 2),
        ])]);
        let v_goal = 1.0 / (1.0 - gamma);
        let q_star = [
            [gamma * gamma * v_goal, gamma * v_goal],
            [gamma * v_goal, 1.0 + gamma * v_goal],
            [gamma * v_goal, v_goal],
        ];
        let policy = train_qtable(&d, gamma, 50);
        for (s, q) in q_star.iter().enumerate() {
            let expected = if q[1] > q[0] { 1 } else { 0 };
            assert_eq!(policy.act(StateId(s)), ActionId(expected), "state {s}");
        }
    }

    #[test]
    fn build_ensemble_u1_matches_direct_training() {
        let d = Dataset::new(vec![traj(&[(0, 1, 2.0, 1), (1, 0, 0.0, 1)]), traj(&[(0, 0, 3.0, 0)])]);
        let ens = build_ensemble(&d, 2, &PartitionConfig::memorizer(1)).unwrap();
        assert_eq!(ens.u(), 1);
        assert_eq!(ens.subpolicies()[0], train_memorizer(&d));
        let again = build_ensemble(&d, 2, &PartitionConfig::memorizer(1)).unwrap();
        assert_eq!(ens.to_json().unwrap(), again.to_json().unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(PartitionConfig::memorizer(0).validate().is_err());
        assert!(PartitionConfig::qtable(2, 1.5, 3).validate().is_err());
        assert!(PartitionConfig::qtable(2, 0.9, 0).validate().is_err());
        assert!("qtable".parse::<LearnerKind>().is_ok());
        assert!("dqn".parse::<LearnerKind>().is_err());
    }
}

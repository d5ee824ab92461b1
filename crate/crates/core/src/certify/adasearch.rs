//! Adaptive trajectory-tree search for certified cumulative-reward lower bounds.
//!
//! A node is a (retained history, t) pair. Each node is expanded once: its
//! possible action sets are computed for every budget up to `k_max` and every
//! action is tagged with the smallest budget that admits it. The search then
//! runs in rounds of growing budget. A round at budget `K` takes the minimum
//! total reward over trajectories whose every step stays inside `A(K)`, and
//! collects the enabling budgets of branches it had to skip. The smallest of
//! those above `K` is the next budget at which the bound can change.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write;

use serde::Serialize;

use crate::env::DeterministicEnv;
use crate::error::{CoreError, Result};
use crate::model::{ActionId, Ensemble, StateHistory, StateId};
use crate::protocol::AggregationProtocol;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub hist: StateHistory,
    pub t: usize,
    /// Reward collected on the path along which the node was first reached.
    pub reward_so_far: f64,
    /// Smallest budget under which the node is reachable.
    pub required_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardCurve {
    pub points: Vec<(usize, f64)>,
}

impl RewardCurve {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.points.iter().find(|p| p.0 == k).map(|p| p.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDiagnostics {
    pub t: usize,
    pub states: Vec<StateId>,
    pub required_k: usize,
    pub reward_so_far: f64,
    /// `|A(k)|` for `k = 0..=k_max`; empty at leaves.
    pub set_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchTree {
    pub node_count: usize,
    pub max_depth: usize,
    pub rounds: usize,
    pub nodes: Vec<NodeDiagnostics>,
}

struct Branch {
    enabling_k: usize,
    reward: f64,
    child: usize,
}

struct Node {
    info: SearchNode,
    set_sizes: Vec<usize>,
    branches: Option<Vec<Branch>>,
}

struct Search<'a> {
    env: &'a DeterministicEnv,
    ens: &'a Ensemble,
    strategy: &'a dyn AggregationProtocol,
    horizon: usize,
    k_max: usize,
    index: HashMap<StateHistory, usize>,
    nodes: Vec<Node>,
}

impl Search<'_> {
    fn node_for(&mut self, hist: StateHistory, reward_so_far: f64) -> usize {
        if let Some(&i) = self.index.get(&hist) {
            return i;
        }
        let i = self.nodes.len();
        self.index.insert(hist.clone(), i);
        self.nodes.push(Node {
            info: SearchNode {
                t: hist.t(),
                hist,
                reward_so_far,
                required_k: usize::MAX,
            },
            set_sizes: Vec::new(),
            branches: None,
        });
        i
    }

    fn expand(&mut self, i: usize) -> Result<()> {
        if self.nodes[i].branches.is_some() || self.nodes[i].info.t >= self.horizon {
            return Ok(());
        }
        let hist = self.nodes[i].info.hist.clone();
        let base = self.nodes[i].info.reward_so_far;
        let mut enabling: Vec<Option<usize>> = vec![None; self.ens.num_actions()];
        let mut sizes = Vec::with_capacity(self.k_max + 1);
        for k in 0..=self.k_max {
            let set = self.strategy.action_set(self.ens, &hist, k)?;
            sizes.push(set.len());
            for a in &set.actions {
                enabling[a.0].get_or_insert(k);
            }
        }
        let mut branches = Vec::new();
        for (a, en) in enabling.iter().enumerate() {
            let Some(en) = *en else { continue };
            let (s2, r) = self.env.step(hist.current(), ActionId(a))?;
            let child = self.node_for(hist.pushed(s2), base + r);
            branches.push(Branch {
                enabling_k: en,
                reward: r,
                child,
            });
        }
        self.nodes[i].set_sizes = sizes;
        self.nodes[i].branches = Some(branches);
        Ok(())
    }

    /// Minimum reward-to-go from node `i` under budget `k`.
    fn value(
        &mut self,
        i: usize,
        k: usize,
        memo: &mut HashMap<usize, f64>,
        pending: &mut BinaryHeap<Reverse<usize>>,
    ) -> Result<f64> {
        let required = &mut self.nodes[i].info.required_k;
        *required = (*required).min(k);
        if self.nodes[i].info.t >= self.horizon {
            return Ok(0.0);
        }
        if let Some(&v) = memo.get(&i) {
            return Ok(v);
        }
        self.expand(i)?;
        let edges: Vec<(usize, f64, usize)> = self.nodes[i]
            .branches
            .as_ref()
            .expect("expanded")
            .iter()
            .map(|b| (b.enabling_k, b.reward, b.child))
            .collect();
        let mut best = f64::INFINITY;
        for (en, r, child) in edges {
            if en > k {
                pending.push(Reverse(en));
                continue;
            }
            let v = r + self.value(child, k, memo, pending)?;
            if v < best {
                best = v;
            }
        }
        debug_assert!(best.is_finite(), "the clean action is always admitted");
        memo.insert(i, best);
        Ok(best)
    }
}

/// Lower bounds on cumulative reward for every poisoning size `0..=k_max`.
pub fn adasearch(
    env: &DeterministicEnv,
    ens: &Ensemble,
    strategy: &dyn AggregationProtocol,
    horizon: usize,
    k_max: usize,
) -> Result<RewardCurve> {
    adasearch_with_tree(env, ens, strategy, horizon, k_max).map(|(c, _)| c)
}

pub fn adasearch_with_tree(
    env: &DeterministicEnv,
    ens: &Ensemble,
    strategy: &dyn AggregationProtocol,
    horizon: usize,
    k_max: usize,
) -> Result<(RewardCurve, SearchTree)> {
    if horizon > env.horizon() {
        return Err(CoreError::Precondition(format!(
            "horizon {horizon} exceeds the environment horizon {}",
            env.horizon()
        )));
    }
    if ens.num_actions() != env.num_actions() {
        return Err(CoreError::InvalidConfig(format!(
            "ensemble has {} actions, environment has {}",
            ens.num_actions(),
            env.num_actions()
        )));
    }
    let mut search = Search {
        env,
        ens,
        strategy,
        horizon,
        k_max,
        index: HashMap::new(),
        nodes: Vec::new(),
    };
    let root = search.node_for(StateHistory::start(env.s0(), strategy.history_capacity()), 0.0);
    let mut points = Vec::with_capacity(k_max + 1);
    let mut pending = BinaryHeap::new();
    let mut k_cur = 0;
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut memo = HashMap::new();
        let j = search.value(root, k_cur, &mut memo, &mut pending)?;
        let mut next = None;
        while let Some(Reverse(k)) = pending.pop() {
            if k > k_cur {
                next = Some(k);
                break;
            }
        }
        let upto = next.map_or(k_max, |n| (n - 1).min(k_max));
        points.extend((k_cur..=upto).map(|k| (k, j)));
        match next {
            Some(n) if n <= k_max => k_cur = n,
            _ => break,
        }
    }
    let nodes: Vec<NodeDiagnostics> = search
        .nodes
        .iter()
        .map(|n| NodeDiagnostics {
            t: n.info.t,
            states: n.info.hist.states().to_vec(),
            required_k: n.info.required_k,
            reward_so_far: n.info.reward_so_far,
            set_sizes: n.set_sizes.clone(),
        })
        .collect();
    let tree = SearchTree {
        node_count: nodes.len(),
        max_depth: nodes.iter().map(|n| n.t).max().unwrap_or(0),
        rounds,
        nodes,
    };
    Ok((RewardCurve { points }, tree))
}

/// `k,lower_bound` rows with six decimals.
pub fn reward_curve_to_csv(curve: &RewardCurve) -> String {
    let mut out = String::from("k,lower_bound\n");
    for (k, v) in &curve.points {
        writeln!(out, "{k},{v:.6}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::Protocol;
    use crate::env::{chain, rollout, AggregatedPolicy};
    use crate::model::TabularSubpolicy;
    use crate::protocol::strategy;

    #[test]
    fn csv_examples() {
        let one = RewardCurve { points: vec![(0, 4.0)] };
        assert_eq!(reward_curve_to_csv(&one), "k,lower_bound\n0,4.000000\n");
        let two = RewardCurve {
            points: vec![(0, 4.0), (1, 2.5)],
        };
        assert_eq!(reward_curve_to_csv(&two), "k,lower_bound\n0,4.000000\n1,2.500000\n");
    }

    #[test]
    fn zero_budget_is_clean_reward_and_curve_declines() {
        let env = chain(3, 4).unwrap();
        let advance = TabularSubpolicy::constant(ActionId(1));
        let stay = TabularSubpolicy::constant(ActionId(0));
        let ens = Ensemble::new(2, vec![advance.clone(), advance.clone(), advance, stay]).unwrap();
        for p in [
            Protocol::Parl,
            Protocol::Tparl { window: 2 },
            Protocol::Dparl { max_window: 2 },
        ] {
            let s = strategy(p).unwrap();
            let (curve, tree) = adasearch_with_tree(&env, &ens, s.as_ref(), 4, 3).unwrap();
            let clean = rollout(&env, &AggregatedPolicy::new(&ens, p).unwrap(), 4)
                .unwrap()
                .total;
            assert!((curve.at(0).unwrap() - clean).abs() < 1e-9);
            assert_eq!(curve.points.len(), 4);
            assert!(curve.points.windows(2).all(|w| w[1].1 <= w[0].1));
            assert!(tree.node_count >= 5);
            assert_eq!(curve.at(3).unwrap(), 0.0, "{p}");
        }
    }
}

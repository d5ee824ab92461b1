//! Deterministic finite-horizon environments, rollouts and offline data
//! generation.
//!
//! `chain`: states `0..n` on a line starting at 0. Action 0 stays put with
//! reward 0. Action 1 moves to `min(s + 1, n - 1)` and pays 1 whenever it
//! lands on the goal `n - 1` (so advancing at the goal pays 1 every step).
//!
//! `gridlane`: a crossing of `lanes` lanes with hazard period `period`. The
//! state encodes `(pos, phase)` as `pos * period + phase` with `pos` in
//! `0..=lanes` (0 is the kerb) and `phase` in `0..period`. Every step advances
//! the phase by one. Action 0 waits, action 1 moves one lane forward. Lane `q`
//! is blocked at phase `p` iff `(p + q) % period == 0`; ending a step in a
//! blocked lane pays -1 and returns the agent to the kerb. Moving past the last
//! lane pays +1 and also returns to the kerb. The reference controller advances
//! unless that would collide.

use rand::Rng;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::aggregation::Protocol;
use crate::error::{CoreError, Result};
use crate::model::{
    ActionId, CertificationRecord, Dataset, Ensemble, StateHistory, StateId, TabularSubpolicy, Trajectory, Transition,
};
use crate::protocol::{strategy, AggregationProtocol};
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicEnv {
    name: String,
    num_states: usize,
    num_actions: usize,
    s0: StateId,
    horizon: usize,
    table: Vec<(StateId, f64)>,
    reference: Vec<ActionId>,
}

impl DeterministicEnv {
    /// Tabulates `step` over every state/action pair. `reference` is the
    /// hand-coded controller used for data generation.
    pub fn tabulate<F, G>(
        name: &str,
        num_states: usize,
        num_actions: usize,
        s0: StateId,
        horizon: usize,
        step: F,
        reference: G,
    ) -> Result<Self>
    where
        F: Fn(usize, usize) -> (usize, f64),
        G: Fn(usize) -> usize,
    {
        if num_states == 0 || num_actions == 0 || s0.0 >= num_states {
            return Err(CoreError::InvalidConfig(format!("{name}: empty state or action space")));
        }
        let mut table = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            for a in 0..num_actions {
                let (s2, r) = step(s, a);
                if s2 >= num_states {
                    return Err(CoreError::StepOutOfRange { state: s, action: a });
                }
                table.push((StateId(s2), r));
            }
        }
        let reference = (0..num_states)
            .map(|s| ActionId(reference(s).min(num_actions - 1)))
            .collect();
        Ok(DeterministicEnv {
            name: name.to_string(),
            num_states,
            num_actions,
            s0,
            horizon,
            table,
            reference,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn s0(&self) -> StateId {
        self.s0
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn step(&self, s: StateId, a: ActionId) -> Result<(StateId, f64)> {
        if s.0 >= self.num_states || a.0 >= self.num_actions {
            return Err(CoreError::StepOutOfRange {
                state: s.0,
                action: a.0,
            });
        }
        Ok(self.table[s.0 * self.num_actions + a.0])
    }

    pub fn reference_action(&self, s: StateId) -> ActionId {
        self.reference[s.0]
    }
}

/// Environment parameters; unset fields take per-environment defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvParams {
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub lanes: Option<usize>,
    #[serde(default)]
    pub period: Option<usize>,
    #[serde(default)]
    pub horizon: Option<usize>,
}

fn positive(name: &str, field: &str, v: usize) -> Result<usize> {
    if v == 0 {
        return Err(CoreError::InvalidConfig(format!("{name}: {field} must be positive")));
    }
    Ok(v)
}

pub fn chain(n: usize, horizon: usize) -> Result<DeterministicEnv> {
    positive("chain", "n", n)?;
    positive("chain", "horizon", horizon)?;
    let goal = n - 1;
    DeterministicEnv::tabulate(
        "chain",
        n,
        2,
        StateId(0),
        horizon,
        |s, a| {
            if a == 0 {
                (s, 0.0)
            } else {
                let s2 = (s + 1).min(goal);
                (s2, if s2 == goal { 1.0 } else { 0.0 })
            }
        },
        |_| 1,
    )
}

pub fn gridlane(lanes: usize, period: usize, horizon: usize) -> Result<DeterministicEnv> {
    positive("gridlane", "lanes", lanes)?;
    positive("gridlane", "period", period)?;
    positive("gridlane", "horizon", horizon)?;
    let step = move |s: usize, a: usize| {
        let (pos, phase) = (s / period, s % period);
        let phase2 = (phase + 1) % period;
        let pos2 = pos + a;
        if pos2 > lanes {
            (phase2, 1.0)
        } else if pos2 >= 1 && (phase2 + pos2).is_multiple_of(period) {
            (phase2, -1.0)
        } else {
            (pos2 * period + phase2, 0.0)
        }
    };
    DeterministicEnv::tabulate(
        "gridlane",
        (lanes + 1) * period,
        2,
        StateId(0),
        horizon,
        step,
        move |s| usize::from(step(s, 1).1 >= 0.0),
    )
}

pub fn envs() -> Registry<DeterministicEnv, EnvParams> {
    let mut reg: Registry<DeterministicEnv, EnvParams> = Registry::new("environment");
    reg.register("chain", |p| {
        let n = p.n.unwrap_or(5);
        Ok(Box::new(chain(n, p.horizon.unwrap_or(n))?))
    });
    reg.register("gridlane", |p| {
        Ok(Box::new(gridlane(
            p.lanes.unwrap_or(3),
            p.period.unwrap_or(3),
            p.horizon.unwrap_or(24),
        )?))
    });
    reg
}

pub fn make_env(name: &str, params: &EnvParams) -> Result<DeterministicEnv> {
    envs().build(name, params).map(|b| *b)
}

/// Anything that picks an action from the recent state history.
pub trait Policy {
    fn history_capacity(&self) -> usize;
    fn act(&self, hist: &StateHistory) -> Result<ActionId>;
}

impl Policy for TabularSubpolicy {
    fn history_capacity(&self) -> usize {
        1
    }

    fn act(&self, hist: &StateHistory) -> Result<ActionId> {
        Ok(TabularSubpolicy::act(self, hist.current()))
    }
}

pub struct AggregatedPolicy<'a> {
    pub ens: &'a Ensemble,
    pub strategy: Box<dyn AggregationProtocol>,
}

impl<'a> AggregatedPolicy<'a> {
    pub fn new(ens: &'a Ensemble, protocol: Protocol) -> Result<Self> {
        Ok(AggregatedPolicy {
            ens,
            strategy: strategy(protocol)?,
        })
    }
}

impl Policy for AggregatedPolicy<'_> {
    fn history_capacity(&self) -> usize {
        self.strategy.history_capacity()
    }

    fn act(&self, hist: &StateHistory) -> Result<ActionId> {
        Ok(self.strategy.aggregate(self.ens, hist)?.action)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub states: Vec<StateId>,
    pub actions: Vec<ActionId>,
    pub rewards: Vec<f64>,
    pub total: f64,
}

fn check_horizon(env: &DeterministicEnv, horizon: usize) -> Result<()> {
    if horizon > env.horizon() {
        return Err(CoreError::Precondition(format!(
            "horizon {horizon} exceeds the environment horizon {}",
            env.horizon()
        )));
    }
    Ok(())
}

pub fn rollout(env: &DeterministicEnv, policy: &dyn Policy, horizon: usize) -> Result<RolloutTrace> {
    check_horizon(env, horizon)?;
    let mut hist = StateHistory::start(env.s0(), policy.history_capacity());
    let mut trace = RolloutTrace {
        states: vec![env.s0()],
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        total: 0.0,
    };
    for _ in 0..horizon {
        let a = policy.act(&hist)?;
        let (s2, r) = env.step(hist.current(), a)?;
        trace.actions.push(a);
        trace.rewards.push(r);
        trace.total += r;
        trace.states.push(s2);
        hist.push(s2);
    }
    Ok(trace)
}

/// Rolls out the aggregated policy and certifies every step.
pub fn certified_rollout(
    env: &DeterministicEnv,
    ens: &Ensemble,
    protocol: &dyn AggregationProtocol,
    horizon: usize,
) -> Result<(RolloutTrace, Vec<CertificationRecord>)> {
    check_horizon(env, horizon)?;
    let mut hist = StateHistory::start(env.s0(), protocol.history_capacity());
    let mut trace = RolloutTrace {
        states: vec![env.s0()],
        actions: Vec::new(),
        rewards: Vec::new(),
        total: 0.0,
    };
    let mut records = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let rec = protocol.certify(ens, &hist)?;
        let (s2, r) = env.step(hist.current(), rec.action)?;
        records.push(rec);
        trace.actions.push(rec.action);
        trace.rewards.push(r);
        trace.total += r;
        trace.states.push(s2);
        hist.push(s2);
    }
    Ok((trace, records))
}

/// Certifies a scripted state sequence `s_0..s_T`, one record per step.
pub fn certify_sequence(
    ens: &Ensemble,
    protocol: &dyn AggregationProtocol,
    states: &[StateId],
) -> Result<Vec<CertificationRecord>> {
    let Some((&s0, rest)) = states.split_first() else {
        return Err(CoreError::Precondition("state sequence is empty".into()));
    };
    let mut hist = StateHistory::start(s0, protocol.history_capacity());
    let mut out = vec![protocol.certify(ens, &hist)?];
    for &s in rest {
        hist.push(s);
        out.push(protocol.certify(ens, &hist)?);
    }
    Ok(out)
}

/// Episodes of the epsilon-greedy reference controller, each lasting the
/// environment horizon.
pub fn gen_dataset(env: &DeterministicEnv, episodes: usize, epsilon: f64, seed: u64) -> Result<Dataset> {
    if episodes == 0 {
        return Err(CoreError::InvalidConfig("episodes must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(CoreError::InvalidConfig(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if env.horizon() == 0 {
        return Err(CoreError::InvalidConfig("environment horizon is zero".into()));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env.s0();
        let mut steps = Vec::with_capacity(env.horizon());
        for _ in 0..env.horizon() {
            let a = if rng.gen::<f64>() < epsilon {
                ActionId(rng.gen_range(0..env.num_actions()))
            } else {
                env.reference_action(s)
            };
            let (s2, r) = env.step(s, a)?;
            steps.push(Transition::new(s.0, a.0, r, s2.0));
            s = s2;
        }
        trajectories.push(Trajectory::new(steps)?);
    }
    Ok(Dataset::new(trajectories))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_dynamics() {
        let env = make_env(
            "chain",
            &EnvParams {
                n: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(env.step(StateId(0), ActionId(1)).unwrap(), (StateId(1), 0.0));
        assert_eq!(env.step(StateId(1), ActionId(1)).unwrap(), (StateId(2), 1.0));
        for s in 0..3 {
            assert_eq!(env.step(StateId(s), ActionId(0)).unwrap(), (StateId(s), 0.0));
        }
        assert!(env.step(StateId(3), ActionId(0)).is_err());
    }

    #[test]
    fn chain_always_advance() {
        let env = chain(3, 3).unwrap();
        let tr = rollout(&env, &TabularSubpolicy::constant(ActionId(1)), 2).unwrap();
        assert_eq!(tr.rewards, vec![0.0, 1.0]);
        assert_eq!(tr.total, 1.0);
        assert_eq!(tr.states, vec![StateId(0), StateId(1), StateId(2)]);
        assert!(rollout(&env, &TabularSubpolicy::constant(ActionId(1)), 4).is_err());
    }

    #[test]
    fn gridlane_hazards_depend_on_phase_only() {
        let env = gridlane(3, 3, 12).unwrap();
        assert_eq!(env.num_states(), 12);
        // kerb at phase 0: lane 1 at phase 1 is clear
        assert_eq!(env.step(StateId(0), ActionId(1)).unwrap(), (StateId(3 + 1), 0.0));
        // kerb at phase 1: lane 1 at phase 2 is blocked
        assert_eq!(env.step(StateId(1), ActionId(1)).unwrap(), (StateId(2), -1.0));
        // crossing from the last lane pays and resets
        assert_eq!(env.step(StateId(3 * 3 + 1), ActionId(1)).unwrap(), (StateId(2), 1.0));
        for pos in 0..=3 {
            for phase in 0..3 {
                let s = StateId(pos * 3 + phase);
                let a = env.reference_action(s);
                assert!(env.step(s, a).unwrap().1 >= 0.0 || env.step(s, ActionId(1 - a.0)).unwrap().1 < 0.0);
            }
        }
    }

    #[test]
    fn unknown_env_and_bad_params() {
        assert!(make_env("maze", &EnvParams::default()).is_err());
        assert!(make_env(
            "chain",
            &EnvParams {
                n: Some(0),
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn greedy_data_is_deterministic() {
        let env = gridlane(3, 3, 10).unwrap();
        let d = gen_dataset(&env, 4, 0.0, 1).unwrap();
        let first = d.trajectories[0].clone();
        assert!(d.trajectories.iter().all(|t| *t == first));
        let a = gen_dataset(&env, 5, 0.3, 9).unwrap();
        let b = gen_dataset(&env, 5, 0.3, 9).unwrap();
        assert_eq!(a, b);
        assert!(gen_dataset(&env, 0, 0.1, 1).is_err());
        assert!(gen_dataset(&env, 1, 1.5, 1).is_err());
    }

    #[test]
    fn unanimous_parl_matches_its_subpolicy() {
        let env = gridlane(2, 3, 9).unwrap();
        let pol = TabularSubpolicy::new((0..9).map(|s| (StateId(s), ActionId(s % 2))).collect(), ActionId(0));
        let ens = Ensemble::new(2, vec![pol.clone(); 3]).unwrap();
        let agg = AggregatedPolicy::new(&ens, Protocol::Parl).unwrap();
        assert_eq!(rollout(&env, &agg, 9).unwrap(), rollout(&env, &pol, 9).unwrap());
    }
}

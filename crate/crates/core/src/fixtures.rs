//! Hand-encoded reference instances and a seeded generator of small random
//! instances for the oracle suites.

use rand::Rng;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::SplitMix64;

use crate::model::{ActionId, Ensemble, StateHistory, StateId, TabularSubpolicy};

/// Six subpolicies over `s_0..s_7`, two actions, `t = 7`. Action `0` is the
/// first action and `1` the second.
pub fn worked_example() -> (Ensemble, StateHistory) {
    let states: Vec<StateId> = (0..8).map(StateId).collect();
    let rows = vec![
        vec![0, 0, 0, 0, 0, 0, 0, 0],
        vec![0, 0, 0, 0, 0, 0, 0, 0],
        vec![0, 0, 0, 0, 0, 0, 0, 0],
        vec![0, 0, 0, 0, 0, 0, 0, 1],
        vec![0, 0, 0, 0, 0, 0, 0, 1],
        vec![0, 0, 0, 1, 0, 1, 1, 1],
    ];
    let ens = Ensemble::from_prediction_rows(2, &states, &rows).expect("valid fixture");
    let hist = StateHistory::from_sequence(&states, 8).expect("non-empty");
    (ens, hist)
}

/// Three subpolicies voting `0`, `2`, `3` at a single state, five actions.
pub fn three_voters() -> (Ensemble, StateHistory) {
    let s = [StateId(0)];
    let ens = Ensemble::from_prediction_rows(5, &s, &[vec![0], vec![2], vec![3]]).expect("valid fixture");
    (ens, StateHistory::start(StateId(0), 1))
}

/// Three identical subpolicies predicting `[0, 0, 0, 0, 1]` over `s_0..s_4`,
/// evaluated at `t = 4` with window 5.
pub fn loose_vs_tight() -> (Ensemble, StateHistory) {
    let states: Vec<StateId> = (0..5).map(StateId).collect();
    let rows = vec![vec![0, 0, 0, 0, 1]; 3];
    let ens = Ensemble::from_prediction_rows(2, &states, &rows).expect("valid fixture");
    let hist = StateHistory::from_sequence(&states, 5).expect("non-empty");
    (ens, hist)
}

/// Twenty subpolicies at one state with votes 10 / 9 / 1.
pub fn votes_10_9_1() -> (Ensemble, StateHistory) {
    let s = [StateId(0)];
    let rows: Vec<Vec<usize>> = std::iter::repeat_n(vec![0], 10)
        .chain(std::iter::repeat_n(vec![1], 9))
        .chain(std::iter::once(vec![2]))
        .collect();
    let ens = Ensemble::from_prediction_rows(3, &s, &rows).expect("valid fixture");
    (ens, StateHistory::start(StateId(0), 1))
}

/// Bounds for [`random_instance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceBounds {
    pub max_u: usize,
    pub max_actions: usize,
    pub max_window: usize,
    pub max_t: usize,
    pub max_pool: usize,
}

impl Default for InstanceBounds {
    fn default() -> Self {
        InstanceBounds {
            max_u: 5,
            max_actions: 3,
            max_window: 3,
            max_t: 4,
            max_pool: 5,
        }
    }
}

/// A random ensemble with a random history and window size.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub ens: Ensemble,
    pub hist: StateHistory,
    pub window: usize,
}

/// Draws an instance within `bounds`. States come from a small pool so that
/// histories sometimes revisit a state.
pub fn random_instance<R: Rng>(rng: &mut R, bounds: &InstanceBounds) -> RandomInstance {
    let u = rng.gen_range(1..=bounds.max_u);
    let num_actions = rng.gen_range(2..=bounds.max_actions.max(2));
    let t = rng.gen_range(0..=bounds.max_t);
    let pool = rng.gen_range(1..=bounds.max_pool.max(1));
    let window = rng.gen_range(1..=bounds.max_window.max(1));
    let subpolicies = (0..u)
        .map(|_| {
            let table = (0..pool)
                .map(|s| (StateId(s), ActionId(rng.gen_range(0..num_actions))))
                .collect();
            TabularSubpolicy::new(table, ActionId(0))
        })
        .collect();
    let ens = Ensemble::new(num_actions, subpolicies).expect("actions drawn in range");
    let seq: Vec<StateId> = (0..=t).map(|_| StateId(rng.gen_range(0..pool))).collect();
    let hist = StateHistory::from_sequence(&seq, seq.len()).expect("non-empty");
    RandomInstance { ens, hist, window }
}

/// `count` instances from a fixed seed.
pub fn random_instances(seed: u64, count: usize, bounds: &InstanceBounds) -> Vec<RandomInstance> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    (0..count).map(|_| random_instance(&mut rng, bounds)).collect()
}

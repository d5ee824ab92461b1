//! Agreement checks between the certificates and the exhaustive oracle over
//! seeded random instances.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::aggregation::{aggregate, Protocol};
use crate::certify::{parl_action_set_loose, tparl_threshold_loose};
use crate::error::Result;
use crate::fixtures::{random_instances, InstanceBounds, RandomInstance};
use crate::model::{ActionId, StateId};
use crate::oracle::{
    apply_attack, brute_force_action_set, brute_force_flip_threshold, construct_parl_attack, construct_tparl_attack,
    AttackSpec,
};
use crate::protocol::strategy;

/// Deliberate corruption used to check that the harness notices failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Reports the single-state threshold one higher than computed.
    InflateParlThreshold,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteConfig {
    pub trials: usize,
    pub seed: u64,
    pub bounds: InstanceBounds,
    pub fault: Option<Fault>,
}

impl SuiteConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        SuiteConfig {
            trials,
            seed,
            bounds: InstanceBounds::default(),
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CheckTally {
    pub passed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceDump {
    pub ensemble: serde_json::Value,
    pub states: Vec<StateId>,
    pub t: usize,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub check: &'static str,
    pub trial: usize,
    pub detail: String,
    pub instance: InstanceDump,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<AttackSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub trials: usize,
    pub seed: u64,
    pub passed: bool,
    pub checks: BTreeMap<&'static str, CheckTally>,
    pub counterexamples: Vec<Counterexample>,
}

/// Check names in report order.
pub const CHECKS: [&str; 12] = [
    "parl-threshold-exact",
    "tparl-threshold-exact",
    "dparl-threshold-sound",
    "tparl-loose-dominated",
    "parl-attack-flips",
    "tparl-attack-flips",
    "parl-set-exact",
    "parl-loose-contains-tight",
    "tparl-set-sound",
    "dparl-set-sound",
    "monotone-membership",
    "threshold-set-link",
];

struct Ledger<'a> {
    report: &'a mut SuiteReport,
    trial: usize,
    inst: &'a RandomInstance,
}

impl Ledger<'_> {
    fn record(&mut self, check: &'static str, ok: bool, detail: impl FnOnce() -> String, witness: Option<AttackSpec>) {
        let tally = self.report.checks.entry(check).or_default();
        if ok {
            tally.passed += 1;
            return;
        }
        tally.failed += 1;
        let ensemble = self
            .inst
            .ens
            .to_json()
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or(serde_json::Value::Null);
        self.report.counterexamples.push(Counterexample {
            check,
            trial: self.trial,
            detail: detail(),
            instance: InstanceDump {
                ensemble,
                states: self.inst.hist.states().to_vec(),
                t: self.inst.hist.t(),
                window: self.inst.window,
            },
            witness,
        });
    }
}

fn check_instance(ledger: &mut Ledger<'_>, fault: Option<Fault>) -> Result<()> {
    let inst = ledger.inst;
    let (ens, hist, w) = (&inst.ens, &inst.hist, inst.window);
    let u = ens.u();
    let protocols = [
        Protocol::Parl,
        Protocol::Tparl { window: w },
        Protocol::Dparl { max_window: w },
    ];

    let mut thresholds = Vec::new();
    for p in protocols {
        let s = strategy(p)?;
        let mut rec = s.certify(ens, hist)?;
        if p == Protocol::Parl && fault == Some(Fault::InflateParlThreshold) {
            rec.threshold += 1;
        }
        let flip = brute_force_flip_threshold(ens, hist, p)?;
        let exact = flip.as_ref().map_or(u, |f| f.flip_size - 1);
        let witness = flip.map(|f| f.witness);
        let (check, ok) = match p {
            Protocol::Parl => ("parl-threshold-exact", exact == rec.threshold),
            Protocol::Tparl { .. } => ("tparl-threshold-exact", exact == rec.threshold),
            Protocol::Dparl { .. } => ("dparl-threshold-sound", exact >= rec.threshold),
        };
        ledger.record(
            check,
            ok,
            || format!("{p}: certificate {} vs exact {exact}", rec.threshold),
            witness,
        );
        thresholds.push(rec);
    }

    let loose = tparl_threshold_loose(ens, hist, w)?.threshold;
    ledger.record(
        "tparl-loose-dominated",
        loose <= thresholds[1].threshold,
        || format!("loose {loose} above tight {}", thresholds[1].threshold),
        None,
    );

    let s = hist.current();
    let parl_k = thresholds[0].threshold;
    let flips = |atk: &AttackSpec, p: Protocol, clean: ActionId| -> Result<bool> {
        Ok(aggregate(&apply_attack(ens, atk)?, hist, p)?.action != clean)
    };
    match construct_parl_attack(ens, s, parl_k + 1) {
        Ok(atk) => {
            let ok = flips(&atk, Protocol::Parl, thresholds[0].action)?;
            ledger.record(
                "parl-attack-flips",
                ok,
                || format!("attack of size {} did not flip", parl_k + 1),
                Some(atk),
            );
        }
        Err(e) => ledger.record("parl-attack-flips", false, || format!("construction failed: {e}"), None),
    }
    let tparl_k = thresholds[1].threshold;
    match construct_tparl_attack(ens, hist, w, tparl_k + 1) {
        Ok(atk) => {
            let ok = flips(&atk, Protocol::Tparl { window: w }, thresholds[1].action)?;
            ledger.record(
                "tparl-attack-flips",
                ok,
                || format!("attack of size {} did not flip", tparl_k + 1),
                Some(atk),
            );
        }
        Err(e) => ledger.record(
            "tparl-attack-flips",
            false,
            || format!("construction failed: {e}"),
            None,
        ),
    }

    for (pi, p) in protocols.into_iter().enumerate() {
        let strat = strategy(p)?;
        let mut prev = None;
        let mut monotone = true;
        for k in 0..=u {
            let formula = strat.action_set(ens, hist, k)?.actions;
            let exact = brute_force_action_set(ens, hist, p, k)?;
            match p {
                Protocol::Parl => {
                    ledger.record(
                        "parl-set-exact",
                        formula == exact,
                        || format!("k={k}: tight {formula:?} vs exact {exact:?}"),
                        None,
                    );
                    let loose = parl_action_set_loose(ens, s, k).actions;
                    ledger.record(
                        "parl-loose-contains-tight",
                        formula.is_subset(&loose),
                        || format!("k={k}: tight {formula:?} not inside loose {loose:?}"),
                        None,
                    );
                }
                Protocol::Tparl { .. } => ledger.record(
                    "tparl-set-sound",
                    exact.is_subset(&formula),
                    || format!("k={k}: exact {exact:?} not inside {formula:?}"),
                    None,
                ),
                Protocol::Dparl { .. } => ledger.record(
                    "dparl-set-sound",
                    exact.is_subset(&formula),
                    || format!("k={k}: exact {exact:?} not inside {formula:?}"),
                    None,
                ),
            }
            if let Some(prev) = &prev {
                monotone &= formula.is_superset(prev);
            }
            let rec = &thresholds[pi];
            if k == rec.threshold {
                let single = formula.len() == 1 && formula.contains(&rec.action);
                ledger.record(
                    "threshold-set-link",
                    single,
                    || format!("{p}: A({k}) = {formula:?} is not the clean singleton"),
                    None,
                );
            }
            if k == rec.threshold + 1 && !matches!(p, Protocol::Dparl { .. }) {
                ledger.record(
                    "threshold-set-link",
                    formula.len() > 1,
                    || format!("{p}: A({k}) = {formula:?} did not grow"),
                    None,
                );
            }
            prev = Some(formula);
        }
        ledger.record(
            "monotone-membership",
            monotone,
            || format!("{p}: sets not nested"),
            None,
        );
    }
    Ok(())
}

pub fn run_oracle_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        trials: cfg.trials,
        seed: cfg.seed,
        passed: true,
        checks: CHECKS.iter().map(|&c| (c, CheckTally::default())).collect(),
        counterexamples: Vec::new(),
    };
    let instances = random_instances(cfg.seed, cfg.trials, &cfg.bounds);
    for (trial, inst) in instances.iter().enumerate() {
        let mut ledger = Ledger {
            report: &mut report,
            trial,
            inst,
        };
        check_instance(&mut ledger, cfg.fault)?;
    }
    report.passed = report.counterexamples.is_empty();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_fault_is_caught() {
        let report = run_oracle_suite(&SuiteConfig::new(20, 3)).unwrap();
        assert!(report.passed, "{:#?}", report.counterexamples);
        assert!(report.checks.values().all(|t| t.failed == 0));
        let mut cfg = SuiteConfig::new(5, 3);
        cfg.fault = Some(Fault::InflateParlThreshold);
        let bad = run_oracle_suite(&cfg).unwrap();
        assert!(!bad.passed);
        assert!(bad.counterexamples.iter().any(|c| c.check == "parl-threshold-exact"));
    }
}

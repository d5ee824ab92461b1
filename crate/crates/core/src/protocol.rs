//! Voting protocols behind one trait, looked up by name.

use crate::aggregation::{aggregate, AggregationResult, Protocol};
use crate::certify::{
    dparl_action_set, dparl_threshold, parl_action_set_tight, parl_threshold, tparl_action_set, tparl_threshold,
    ActionSetResult,
};
use crate::error::Result;
use crate::model::{CertificationRecord, Ensemble, StateHistory};
use crate::registry::Registry;

pub trait AggregationProtocol: Send + Sync {
    fn protocol(&self) -> Protocol;

    fn name(&self) -> &'static str {
        self.protocol().name()
    }

    /// Number of recent states a history must retain.
    fn history_capacity(&self) -> usize {
        self.protocol().window_bound()
    }

    fn aggregate(&self, ens: &Ensemble, hist: &StateHistory) -> Result<AggregationResult> {
        aggregate(ens, hist, self.protocol())
    }

    fn certify(&self, ens: &Ensemble, hist: &StateHistory) -> Result<CertificationRecord>;

    fn action_set(&self, ens: &Ensemble, hist: &StateHistory, k: usize) -> Result<ActionSetResult>;
}

pub struct Parl;

impl AggregationProtocol for Parl {
    fn protocol(&self) -> Protocol {
        Protocol::Parl
    }

    fn certify(&self, ens: &Ensemble, hist: &StateHistory) -> Result<CertificationRecord> {
        let mut rec = parl_threshold(ens, hist.current())?;
        rec.t = hist.t();
        Ok(rec)
    }

    fn action_set(&self, ens: &Ensemble, hist: &StateHistory, k: usize) -> Result<ActionSetResult> {
        Ok(parl_action_set_tight(ens, hist.current(), k))
    }
}

pub struct Tparl {
    pub window: usize,
}

impl AggregationProtocol for Tparl {
    fn protocol(&self) -> Protocol {
        Protocol::Tparl { window: self.window }
    }

    fn certify(&self, ens: &Ensemble, hist: &StateHistory) -> Result<CertificationRecord> {
        tparl_threshold(ens, hist, self.window)
    }

    fn action_set(&self, ens: &Ensemble, hist: &StateHistory, k: usize) -> Result<ActionSetResult> {
        tparl_action_set(ens, hist, self.window, k)
    }
}

pub struct Dparl {
    pub max_window: usize,
}

impl AggregationProtocol for Dparl {
    fn protocol(&self) -> Protocol {
        Protocol::Dparl {
            max_window: self.max_window,
        }
    }

    fn certify(&self, ens: &Ensemble, hist: &StateHistory) -> Result<CertificationRecord> {
        dparl_threshold(ens, hist, self.max_window)
    }

    fn action_set(&self, ens: &Ensemble, hist: &StateHistory, k: usize) -> Result<ActionSetResult> {
        dparl_action_set(ens, hist, self.max_window, k)
    }
}

/// Registry keyed by protocol name; the parameter is the window bound
/// (ignored by `parl`).
pub fn protocols() -> Registry<dyn AggregationProtocol, usize> {
    let mut reg: Registry<dyn AggregationProtocol, usize> = Registry::new("protocol");
    reg.register("parl", |_| Ok(Box::new(Parl)));
    reg.register("tparl", |&w| {
        Protocol::Tparl { window: w }.validate()?;
        Ok(Box::new(Tparl { window: w }))
    });
    reg.register("dparl", |&w| {
        Protocol::Dparl { max_window: w }.validate()?;
        Ok(Box::new(Dparl { max_window: w }))
    });
    reg
}

pub fn strategy(protocol: Protocol) -> Result<Box<dyn AggregationProtocol>> {
    protocols().build(protocol.name(), &protocol.window_bound())
}

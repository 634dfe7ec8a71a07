//! Slice admission control and revenue accounting.
//!
//! Requests ask for a number of cells every window for a number of windows.
//! The committed load is the sum of those demands over admitted, unexpired
//! requests, as a fraction of the grid. Threshold admission compares that
//! load at the arrival instant against a per-class threshold.

mod optimize;
mod trace;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::TenantId;

pub use optimize::{offline_optimal, optimize_thresholds, parse_theta_grid, ThresholdSweep};
pub use trace::{generate_trace, read_trace, write_trace, RequestClass};

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("request class {0} has no threshold")]
    UnknownClass(u8),
    #[error("threshold {0} is outside [0, 1]")]
    ThetaOutOfRange(f64),
    #[error("invalid request {id}: {reason}")]
    InvalidRequest { id: u32, reason: String },
    #[error("no threshold candidates to evaluate")]
    EmptyGrid,
    #[error("bad threshold grid: {0}")]
    BadGrid(String),
    #[error("{n} requests exceed the exhaustive search cap of {cap}")]
    InstanceTooLarge { n: usize, cap: usize },
    #[error("trace: {0}")]
    Trace(#[from] csv::Error),
    #[error("trace: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceRequest {
    pub id: u32,
    pub tenant_id: TenantId,
    pub blueprint: String,
    pub demand_cells_per_window: u32,
    pub duration_windows: u64,
    pub price_per_window: f64,
    pub penalty_per_violation: f64,
    pub arrival_window: u64,
    pub class_id: u8,
}

impl SliceRequest {
    pub fn validate(&self, grid_cells: u32) -> Result<(), BrokerError> {
        let bad = |reason: String| Err(BrokerError::InvalidRequest { id: self.id, reason });
        if self.demand_cells_per_window == 0 || self.demand_cells_per_window > grid_cells {
            return bad(format!(
                "demand {} must be in 1..={grid_cells}",
                self.demand_cells_per_window
            ));
        }
        if self.duration_windows == 0 {
            return bad("duration must be at least 1 window".into());
        }
        if !(self.price_per_window >= 0.0 && self.penalty_per_violation >= 0.0) {
            return bad("price and penalty must be nonnegative".into());
        }
        Ok(())
    }

    pub fn end_window(&self) -> u64 {
        self.arrival_window + self.duration_windows
    }

    /// Windows of `[0, horizon)` during which the request would be active.
    pub fn windows_within(&self, horizon: u64) -> u64 {
        self.end_window().min(horizon).saturating_sub(self.arrival_window)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum AdmissionPolicy {
    AlwaysAccept,
    GreedyCapacity,
    /// `theta[c]` is the highest committed load at which class `c` is still
    /// considered.
    Threshold {
        theta: Vec<f64>,
    },
}

impl AdmissionPolicy {
    pub fn validate(&self) -> Result<(), BrokerError> {
        if let AdmissionPolicy::Threshold { theta } = self {
            if let Some(t) = theta.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(BrokerError::ThetaOutOfRange(*t));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match self {
            AdmissionPolicy::AlwaysAccept => "always-accept".into(),
            AdmissionPolicy::GreedyCapacity => "greedy-capacity".into(),
            AdmissionPolicy::Threshold { theta } => {
                let parts: Vec<String> = theta.iter().map(|t| t.to_string()).collect();
                format!("threshold[{}]", parts.join(","))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum RejectReason {
    Capacity { load_after: f64 },
    Threshold { load: f64, theta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum AdmissionDecision {
    Accept,
    Reject(RejectReason),
}

impl AdmissionDecision {
    pub fn is_accept(&self) -> bool {
        matches!(self, AdmissionDecision::Accept)
    }
}

/// Admission rule for one request at the given committed load fraction.
pub fn decide(
    req: &SliceRequest,
    committed_load: f64,
    grid_cells: u32,
    policy: &AdmissionPolicy,
) -> Result<AdmissionDecision, BrokerError> {
    debug_assert!(committed_load >= 0.0);
    let load_after = committed_load + f64::from(req.demand_cells_per_window) / f64::from(grid_cells);
    let capacity = if load_after <= 1.0 + 1e-12 {
        AdmissionDecision::Accept
    } else {
        AdmissionDecision::Reject(RejectReason::Capacity { load_after })
    };
    Ok(match policy {
        AdmissionPolicy::AlwaysAccept => AdmissionDecision::Accept,
        AdmissionPolicy::GreedyCapacity => capacity,
        AdmissionPolicy::Threshold { theta } => {
            let t = *theta
                .get(usize::from(req.class_id))
                .ok_or(BrokerError::UnknownClass(req.class_id))?;
            if committed_load > t {
                AdmissionDecision::Reject(RejectReason::Threshold {
                    load: committed_load,
                    theta: t,
                })
            } else {
                capacity
            }
        }
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RevenueLedger {
    pub revenue: BTreeMap<TenantId, f64>,
    pub penalties: BTreeMap<TenantId, f64>,
    pub accepted: BTreeMap<u8, u64>,
    pub rejected: BTreeMap<u8, u64>,
    /// Committed cells over grid cells, one entry per window.
    pub utilization: Vec<f64>,
}

impl RevenueLedger {
    pub fn total_revenue(&self) -> f64 {
        self.revenue.values().fold(0.0, |a, v| a + v)
    }

    pub fn total_penalties(&self) -> f64 {
        self.penalties.values().fold(0.0, |a, v| a + v)
    }

    pub fn net(&self) -> f64 {
        self.total_revenue() - self.total_penalties()
    }

    pub fn record_decision(&mut self, class_id: u8, accepted: bool) {
        let m = if accepted {
            &mut self.accepted
        } else {
            &mut self.rejected
        };
        *m.entry(class_id).or_insert(0) += 1;
    }
}

/// One active admitted slice's outcome for a window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlaOutcome {
    pub tenant: TenantId,
    pub price_per_window: f64,
    pub penalty_per_violation: f64,
    pub violated: bool,
}

/// Accrues the window's price of every active slice and the penalty of
/// every slice that missed its SLA.
pub fn settle_window(ledger: &mut RevenueLedger, outcomes: &[SlaOutcome]) {
    for o in outcomes {
        *ledger.revenue.entry(o.tenant).or_insert(0.0) += o.price_per_window;
        if o.violated {
            *ledger.penalties.entry(o.tenant).or_insert(0.0) += o.penalty_per_violation;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Admitted {
    pub request: SliceRequest,
    pub admitted_window: u64,
}

/// Admission state across a run: active requests in admission order plus
/// the ledger.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Broker {
    policy: AdmissionPolicy,
    grid_cells: u32,
    active: Vec<Admitted>,
    pub ledger: RevenueLedger,
}

impl Broker {
    pub fn new(policy: AdmissionPolicy, grid_cells: u32) -> Result<Self, BrokerError> {
        policy.validate()?;
        Ok(Self {
            policy,
            grid_cells,
            active: Vec::new(),
            ledger: RevenueLedger::default(),
        })
    }

    pub fn policy(&self) -> &AdmissionPolicy {
        &self.policy
    }

    pub fn active(&self) -> &[Admitted] {
        &self.active
    }

    pub fn committed_cells(&self) -> u64 {
        self.active
            .iter()
            .map(|a| u64::from(a.request.demand_cells_per_window))
            .sum()
    }

    pub fn committed_load(&self) -> f64 {
        self.committed_cells() as f64 / f64::from(self.grid_cells)
    }

    /// Drops requests whose duration ended before `window`.
    pub fn expire(&mut self, window: u64) -> Vec<Admitted> {
        let (gone, keep) = std::mem::take(&mut self.active)
            .into_iter()
            .partition(|a| a.request.end_window() <= window);
        self.active = keep;
        gone
    }

    pub fn offer(&mut self, req: &SliceRequest) -> Result<AdmissionDecision, BrokerError> {
        req.validate(self.grid_cells)?;
        let d = decide(req, self.committed_load(), self.grid_cells, &self.policy)?;
        self.ledger.record_decision(req.class_id, d.is_accept());
        if d.is_accept() {
            self.active.push(Admitted {
                request: req.clone(),
                admitted_window: req.arrival_window,
            });
        }
        Ok(d)
    }
}

/// Admission-level replay without radio: each window, active requests are
/// served their demand in admission order until the grid runs out, and any
/// request left short pays its penalty.
pub fn replay(
    trace: &[SliceRequest],
    policy: &AdmissionPolicy,
    grid_cells: u32,
    horizon: u64,
) -> Result<RevenueLedger, BrokerError> {
    let mut broker = Broker::new(policy.clone(), grid_cells)?;
    let mut arrivals: Vec<&SliceRequest> = trace.iter().collect();
    arrivals.sort_by_key(|r| (r.arrival_window, r.id));
    let mut next = 0;
    for w in 0..horizon {
        broker.expire(w);
        while let Some(r) = arrivals.get(next).filter(|r| r.arrival_window == w) {
            broker.offer(r)?;
            next += 1;
        }
        while arrivals.get(next).is_some_and(|r| r.arrival_window < w) {
            next += 1;
        }
        let mut used = 0u64;
        let outcomes: Vec<SlaOutcome> = broker
            .active()
            .iter()
            .map(|a| {
                used += u64::from(a.request.demand_cells_per_window);
                SlaOutcome {
                    tenant: a.request.tenant_id,
                    price_per_window: a.request.price_per_window,
                    penalty_per_violation: a.request.penalty_per_violation,
                    violated: used > u64::from(grid_cells),
                }
            })
            .collect();
        broker.ledger.utilization.push(broker.committed_load());
        settle_window(&mut broker.ledger, &outcomes);
    }
    Ok(broker.ledger)
}

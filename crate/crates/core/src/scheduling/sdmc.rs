//! Per-slice scheduling inside a resource mask.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::SchedError;
use crate::grid::{cell_bits, Cell, CellQuality, ResourceMask};
use crate::ids::{FlowId, NodeId, SliceId, UeId};

/// A mask cell at one node. Masks are network-wide, so every node may reuse
/// a cell of its slice's mask for its own UEs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Resource {
    pub cell: Cell,
    pub node: NodeId,
}

/// Backlog a claimant draws from: `(deadline_ms, remaining_bits)` per packet
/// in queue order.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Account {
    pub flow: FlowId,
    pub packets: VecDeque<(f64, u64)>,
}

impl Account {
    pub fn new(flow: FlowId, packets: impl IntoIterator<Item = (f64, u64)>) -> Self {
        Self {
            flow,
            packets: packets.into_iter().filter(|p| p.1 > 0).collect(),
        }
    }

    pub fn backlog(&self) -> u64 {
        self.packets.iter().map(|p| p.1).sum()
    }

    pub fn head_deadline(&self) -> Option<f64> {
        self.packets.front().map(|p| p.0)
    }

    /// Drains up to `bits` in queue order and returns the amount drained.
    pub fn consume(&mut self, mut bits: u64) -> u64 {
        let mut drained = 0;
        while bits > 0 {
            let Some(head) = self.packets.front_mut() else { break };
            let take = head.1.min(bits);
            head.1 -= take;
            bits -= take;
            drained += take;
            if head.1 == 0 {
                self.packets.pop_front();
            }
        }
        drained
    }
}

/// One schedulable leg: a flow as seen from a set of nodes, drawing from
/// `accounts[account]`. Split legs of one flow share an account; duplicate
/// legs each have their own.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Claimant {
    pub flow: FlowId,
    pub ue: UeId,
    pub nodes: Vec<NodeId>,
    pub account: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Grant {
    pub resource: Resource,
    pub flow: FlowId,
    pub ue: UeId,
    pub claimant: usize,
    pub bits: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "discipline", rename_all = "kebab-case")]
pub enum SlicePolicy {
    #[default]
    RoundRobin,
    ProportionalFair {
        horizon: f64,
    },
    EarliestDeadlineFirst,
}

impl SlicePolicy {
    pub fn validate(&self) -> Result<(), SchedError> {
        match self {
            // the average must not grow faster than the served rate
            SlicePolicy::ProportionalFair { horizon } if !(*horizon >= 1.0 && horizon.is_finite()) => Err(
                SchedError::InvalidPolicy(format!("PF horizon must be at least 1 window, got {horizon}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Exponentially averaged served bits per window, per flow. Unknown flows
/// start at 1 bit.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PfState {
    avg: BTreeMap<FlowId, f64>,
}

impl PfState {
    pub fn average(&self, flow: FlowId) -> f64 {
        self.avg.get(&flow).copied().unwrap_or(1.0)
    }

    /// End-of-window update for every flow of the slice, served or not.
    pub fn update(&mut self, horizon: f64, flows: impl IntoIterator<Item = FlowId>, served: &BTreeMap<FlowId, u64>) {
        let keep = 1.0 - 1.0 / horizon;
        for flow in flows {
            let s = served.get(&flow).copied().unwrap_or(0) as f64;
            let a = self.average(flow);
            self.avg.insert(flow, keep * a + s / horizon);
        }
    }
}

/// Bits a claimant would get on `resource`, 0 if it cannot use it.
pub(super) fn claimant_bits<Q: CellQuality + ?Sized>(
    c: &Claimant,
    resource: Resource,
    quality: &Q,
    symbols_per_cell: u32,
) -> u64 {
    if !c.nodes.contains(&resource.node) {
        return 0;
    }
    quality
        .spectral_efficiency(c.ue, resource.node, resource.cell)
        .map_or(0, |se| cell_bits(se, symbols_per_cell))
}

/// Schedules `claimants` on the cells of `mask` at every node any of them
/// uses, draining `accounts` as it goes.
///
/// Resources are visited in `(slot, rb, node)` order so grants come out in
/// time order. Each resource serves at most one claimant; a grant carries
/// `min(capacity, backlog)` bits.
#[allow(clippy::too_many_arguments)]
pub fn schedule_within_mask<Q: CellQuality + ?Sized>(
    slice: SliceId,
    mask: &ResourceMask,
    claimants: &[Claimant],
    accounts: &mut [Account],
    quality: &Q,
    symbols_per_cell: u32,
    policy: &SlicePolicy,
    pf: &PfState,
) -> Result<Vec<Grant>, SchedError> {
    if mask.slice != slice {
        return Err(SchedError::MaskMismatch {
            expected: slice,
            found: mask.slice,
        });
    }
    policy.validate()?;
    let mut order: Vec<usize> = (0..claimants.len()).collect();
    order.sort_by_key(|&i| (claimants[i].ue, claimants[i].flow, i));
    let nodes: BTreeSet<NodeId> = claimants.iter().flat_map(|c| c.nodes.iter().copied()).collect();

    let mut grants = Vec::new();
    let mut rr_next = 0usize;
    for &cell in &mask.cells {
        for &node in &nodes {
            let resource = Resource { cell, node };
            let candidates = order.iter().enumerate().filter_map(|(pos, &i)| {
                let c = &claimants[i];
                let bits = claimant_bits(c, resource, quality, symbols_per_cell);
                (bits > 0 && accounts[c.account].backlog() > 0).then_some((pos, i, bits))
            });
            let pick = match policy {
                SlicePolicy::RoundRobin => {
                    let n = order.len();
                    candidates.min_by_key(|&(pos, _, _)| (pos + n - rr_next % n) % n)
                }
                SlicePolicy::ProportionalFair { .. } => candidates
                    .fold(None, |best: Option<(usize, usize, u64, f64)>, (pos, i, bits)| {
                        let metric = bits as f64 / pf.average(claimants[i].flow);
                        match best {
                            Some(b) if b.3 >= metric => Some(b),
                            _ => Some((pos, i, bits, metric)),
                        }
                    })
                    .map(|(pos, i, bits, _)| (pos, i, bits)),
                SlicePolicy::EarliestDeadlineFirst => candidates.min_by(|a, b| {
                    let da = accounts[claimants[a.1].account]
                        .head_deadline()
                        .unwrap_or(f64::INFINITY);
                    let db = accounts[claimants[b.1].account]
                        .head_deadline()
                        .unwrap_or(f64::INFINITY);
                    da.total_cmp(&db).then(a.0.cmp(&b.0))
                }),
            };
            let Some((pos, i, bits)) = pick else { continue };
            rr_next = pos + 1;
            let c = &claimants[i];
            let served = accounts[c.account].consume(bits);
            grants.push(Grant {
                resource,
                flow: c.flow,
                ue: c.ue,
                claimant: i,
                bits: served,
            });
        }
    }
    Ok(grants)
}

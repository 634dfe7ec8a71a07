//! Two-level radio scheduling.
//!
//! The coordinator (SDM-X) splits the shared grid into per-slice resource
//! masks each window ([`compute_masks`]). Inside its mask every slice runs
//! its own discipline ([`schedule_within_mask`]). The RAN sharing option of
//! a slice decides who runs that discipline and whether the tenant only
//! submits a pre-schedule to a common MAC ([`apply_option`],
//! [`common_mac_allocate`]).
//!
//! Ties are broken the same way everywhere: lowest slice id, then lowest UE
//! id, then lowest `(slot, rb)`.

mod option;
mod sdmc;
mod sdmx;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::grid::{Cell, ResourceMask};
use crate::ids::{FlowId, NodeId, SliceId, UeId};

pub use option::{
    apply_option, common_mac_allocate, preschedule, CommonMacOutcome, DemotionEvent, PipelineConfig, SchedulerOwner,
    TenantPlan,
};
pub use sdmc::{schedule_within_mask, Account, Claimant, Grant, PfState, Resource, SlicePolicy};
pub use sdmx::{
    apportion, compute_masks, reserve_semi_persistent, Reservation, SdmxObjective, SdmxPolicy, SliceDemand,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedError {
    #[error("floors need {needed} cells but only {available} are free")]
    FloorsExceedCapacity { needed: usize, available: usize },
    #[error("reservation references unknown {0}")]
    UnknownReservationSlice(SliceId),
    #[error("reserved cell {cell} of {slice} is outside its numerology tiles")]
    ReservationOutsideTiles { slice: SliceId, cell: Cell },
    #[error("cell {cell} already reserved by {owner}")]
    ReservationCollision { cell: Cell, owner: SliceId },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("mask belongs to {found}, scheduler runs for {expected}")]
    MaskMismatch { expected: SliceId, found: SliceId },
    #[error("option 2 {0} submitted no pre-schedule")]
    MissingPreSchedule(SliceId),
}

/// One scheduled resource of one window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AllocationEntry {
    pub slice: SliceId,
    pub flow: FlowId,
    pub ue: UeId,
    pub node: NodeId,
    pub cell: Cell,
    pub bits: u64,
}

/// Everything scheduled in one window.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Allocation {
    pub window_index: u64,
    pub entries: Vec<AllocationEntry>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsolationViolation {
    #[error("masks of {a} and {b} share {cell}")]
    MaskOverlap { a: SliceId, b: SliceId, cell: Cell },
    #[error("{slice} scheduled {cell} outside its mask")]
    OutsideMask { slice: SliceId, cell: Cell },
    #[error("{cell} at {node} scheduled twice")]
    DoubleBooked { node: NodeId, cell: Cell },
    #[error("mask of {slice} is for window {found}, expected {expected}")]
    WrongWindow { slice: SliceId, expected: u64, found: u64 },
}

impl Allocation {
    pub fn new(window_index: u64) -> Self {
        Self {
            window_index,
            entries: Vec::new(),
        }
    }

    pub fn push_grants(&mut self, slice: SliceId, grants: &[Grant]) {
        self.entries.extend(grants.iter().map(|g| AllocationEntry {
            slice,
            flow: g.flow,
            ue: g.ue,
            node: g.resource.node,
            cell: g.resource.cell,
            bits: g.bits,
        }));
    }

    pub fn bits_for(&self, slice: SliceId) -> u64 {
        self.entries.iter().filter(|e| e.slice == slice).map(|e| e.bits).sum()
    }

    /// Checks hard isolation: masks pairwise disjoint, every entry inside its
    /// slice's mask, and no `(node, cell)` resource used twice.
    pub fn check_isolation(&self, masks: &BTreeMap<SliceId, ResourceMask>) -> Result<(), IsolationViolation> {
        let mut owner: BTreeMap<Cell, SliceId> = BTreeMap::new();
        for (slice, mask) in masks {
            if mask.window_index != self.window_index {
                return Err(IsolationViolation::WrongWindow {
                    slice: *slice,
                    expected: self.window_index,
                    found: mask.window_index,
                });
            }
            for cell in &mask.cells {
                if let Some(a) = owner.insert(*cell, *slice) {
                    return Err(IsolationViolation::MaskOverlap {
                        a,
                        b: *slice,
                        cell: *cell,
                    });
                }
            }
        }
        let mut used = BTreeSet::new();
        for e in &self.entries {
            if owner.get(&e.cell) != Some(&e.slice) {
                return Err(IsolationViolation::OutsideMask {
                    slice: e.slice,
                    cell: e.cell,
                });
            }
            if !used.insert((e.node, e.cell)) {
                return Err(IsolationViolation::DoubleBooked {
                    node: e.node,
                    cell: e.cell,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(slice: u32, node: u32, cell: Cell) -> AllocationEntry {
        AllocationEntry {
            slice: SliceId(slice),
            flow: FlowId(1),
            ue: UeId(1),
            node: NodeId(node),
            cell,
            bits: 10,
        }
    }

    #[test]
    fn isolation_checks() {
        let a = ResourceMask::with_cells(SliceId(1), 0, [Cell::new(0, 0)]);
        let b = ResourceMask::with_cells(SliceId(2), 0, [Cell::new(0, 1)]);
        let masks: BTreeMap<_, _> = [(SliceId(1), a.clone()), (SliceId(2), b)].into();
        let mut alloc = Allocation::new(0);
        alloc.entries.push(entry(1, 0, Cell::new(0, 0)));
        alloc.entries.push(entry(1, 1, Cell::new(0, 0)));
        assert_eq!(alloc.check_isolation(&masks), Ok(()));
        alloc.entries.push(entry(2, 0, Cell::new(0, 0)));
        assert!(matches!(
            alloc.check_isolation(&masks),
            Err(IsolationViolation::OutsideMask { .. })
        ));
        alloc.entries.pop();
        alloc.entries.push(entry(1, 0, Cell::new(0, 0)));
        assert!(matches!(
            alloc.check_isolation(&masks),
            Err(IsolationViolation::DoubleBooked { .. })
        ));
        let overlap: BTreeMap<_, _> = [
            (SliceId(1), a.clone()),
            (SliceId(2), ResourceMask::with_cells(SliceId(2), 0, [Cell::new(0, 0)])),
        ]
        .into();
        assert!(matches!(
            Allocation::new(0).check_isolation(&overlap),
            Err(IsolationViolation::MaskOverlap { .. })
        ));
    }
}

//! Slice blueprints, SLAs, tenants and the slice lifecycle.
//!
//! A blueprint lists the network functions a slice needs. Depending on the
//! sharing group, each function is either *common* (one instance shared by
//! every slice, controlled by the coordinator) or *dedicated* (owned by the
//! slice). All three groups share the RAN.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Numerology;
use crate::ids::{SliceId, TenantId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SliceError {
    #[error("network function {0} appears more than once in the chain")]
    DuplicateFunction(NfTag),
    #[error("chain has no RAN function")]
    MissingRan,
    #[error("chain has no core network function")]
    MissingCore,
    #[error("unknown numerology {0}")]
    UnknownNumerology(u8),
    #[error("invalid SLA: {0}")]
    InvalidSla(&'static str),
    #[error("illegal lifecycle transition: {event:?} in state {state:?}")]
    IllegalTransition { state: SliceState, event: LifecycleEvent },
}

/// Service level targets of a slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sla {
    #[serde(default)]
    pub min_throughput_bps: f64,
    pub latency_budget_ms: f64,
    #[serde(default = "Sla::default_per")]
    pub max_per: f64,
    #[serde(default)]
    pub deterministic_traffic: bool,
    #[serde(default = "Sla::default_weight")]
    pub priority_weight: f64,
}

impl Sla {
    fn default_per() -> f64 {
        1e-4
    }

    fn default_weight() -> f64 {
        1.0
    }

    // negated comparisons so that NaN fails every check
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), SliceError> {
        if !(self.min_throughput_bps >= 0.0 && self.min_throughput_bps.is_finite()) {
            return Err(SliceError::InvalidSla("min_throughput_bps must be nonnegative"));
        }
        if !(self.latency_budget_ms > 0.0) {
            return Err(SliceError::InvalidSla("latency_budget_ms must be positive"));
        }
        if !(self.max_per > 0.0 && self.max_per <= 1.0) {
            return Err(SliceError::InvalidSla("max_per must lie in (0, 1]"));
        }
        if !(self.priority_weight > 0.0 && self.priority_weight.is_finite()) {
            return Err(SliceError::InvalidSla("priority_weight must be positive"));
        }
        Ok(())
    }

    /// Mobile broadband: packet error rate 1e-4.
    pub fn mobile_broadband() -> Self {
        Self {
            min_throughput_bps: 0.0,
            latency_budget_ms: 100.0,
            max_per: 1e-4,
            deterministic_traffic: false,
            priority_weight: 1.0,
        }
    }

    /// Kinaesthetic feedback to a machine: 1 ms.
    pub fn machine_kinaesthetic() -> Self {
        Self {
            latency_budget_ms: 1.0,
            deterministic_traffic: true,
            ..Self::mobile_broadband()
        }
    }

    /// Kinaesthetic feedback to a human: 5 ms.
    pub fn human_kinaesthetic() -> Self {
        Self {
            latency_budget_ms: 5.0,
            deterministic_traffic: true,
            ..Self::mobile_broadband()
        }
    }

    /// Tactile information alone, conveyed to a human: 100 ms.
    pub fn tactile_info() -> Self {
        Self {
            latency_budget_ms: 100.0,
            ..Self::mobile_broadband()
        }
    }
}

/// Sharing level of the core network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SharingGroup {
    /// Common RAN, fully dedicated core.
    A,
    /// Common RAN plus common identity, subscription and mobility management.
    B,
    /// Common RAN and common core control plane; dedicated user plane.
    C,
}

/// How deep the RAN is shared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum RanOption {
    /// Only the lower PHY is shared; each slice runs its own scheduler.
    One,
    /// Shared MAC; tenants pre-schedule, the common MAC decides.
    Two,
    /// Fully shared RAN; the coordinator schedules with slice parameters.
    Three,
}

impl TryFrom<u8> for RanOption {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            3 => Ok(Self::Three),
            other => Err(format!("RAN option must be 1, 2 or 3, got {other}")),
        }
    }
}

impl From<RanOption> for u8 {
    fn from(o: RanOption) -> u8 {
        match o {
            RanOption::One => 1,
            RanOption::Two => 2,
            RanOption::Three => 3,
        }
    }
}

/// Network function placement categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NfTag {
    RanLowerPhy,
    RanUpperPhy,
    Mac,
    Rlc,
    Pdcp,
    Rrc,
    CnMobility,
    CnIdentity,
    CnSubscription,
    CnSession,
    CnUserplane,
}

impl NfTag {
    pub const ALL: [NfTag; 11] = [
        NfTag::RanLowerPhy,
        NfTag::RanUpperPhy,
        NfTag::Mac,
        NfTag::Rlc,
        NfTag::Pdcp,
        NfTag::Rrc,
        NfTag::CnMobility,
        NfTag::CnIdentity,
        NfTag::CnSubscription,
        NfTag::CnSession,
        NfTag::CnUserplane,
    ];

    pub fn is_ran(self) -> bool {
        matches!(
            self,
            NfTag::RanLowerPhy | NfTag::RanUpperPhy | NfTag::Mac | NfTag::Rlc | NfTag::Pdcp | NfTag::Rrc
        )
    }

    pub fn is_core(self) -> bool {
        !self.is_ran()
    }
}

impl fmt::Display for NfTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceBlueprint {
    pub id: SliceId,
    pub tenant: TenantId,
    pub sharing_group: SharingGroup,
    pub ran_option: RanOption,
    pub sla: Sla,
    pub nf_chain: Vec<NfTag>,
    pub numerology: u8,
    #[serde(default)]
    pub slice_aware_ue: bool,
}

pub fn validate_blueprint(bp: SliceBlueprint, numerologies: &[Numerology]) -> Result<SliceBlueprint, SliceError> {
    let mut seen = BTreeSet::new();
    for tag in &bp.nf_chain {
        if !seen.insert(*tag) {
            return Err(SliceError::DuplicateFunction(*tag));
        }
    }
    if !bp.nf_chain.iter().any(|t| t.is_ran()) {
        return Err(SliceError::MissingRan);
    }
    if !bp.nf_chain.iter().any(|t| t.is_core()) {
        return Err(SliceError::MissingCore);
    }
    if !numerologies.iter().any(|n| n.id == bp.numerology) {
        return Err(SliceError::UnknownNumerology(bp.numerology));
    }
    bp.sla.validate()?;
    Ok(bp)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FunctionSplit {
    pub dedicated: BTreeSet<NfTag>,
    pub common: BTreeSet<NfTag>,
}

fn is_common(group: SharingGroup, tag: NfTag) -> bool {
    if tag.is_ran() {
        return true;
    }
    match group {
        SharingGroup::A => false,
        SharingGroup::B => matches!(tag, NfTag::CnIdentity | NfTag::CnSubscription | NfTag::CnMobility),
        SharingGroup::C => tag != NfTag::CnUserplane,
    }
}

/// Partitions the blueprint's functions into dedicated and common sets.
pub fn split_functions(bp: &SliceBlueprint) -> FunctionSplit {
    let mut split = FunctionSplit::default();
    for &tag in &bp.nf_chain {
        if is_common(bp.sharing_group, tag) {
            split.common.insert(tag);
        } else {
            split.dedicated.insert(tag);
        }
    }
    split
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceState {
    Requested,
    Admitted,
    Active,
    Terminated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LifecycleEvent {
    Admit,
    Reject,
    Activate,
    Terminate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceInstance {
    pub id: SliceId,
    pub blueprint: SliceId,
    pub state: SliceState,
    pub dedicated_nfs: BTreeSet<NfTag>,
    pub common_nfs: BTreeSet<NfTag>,
    /// Windows during which the slice holds resources.
    pub admitted_window: Option<Range<u64>>,
}

impl SliceInstance {
    pub fn requested(id: SliceId, bp: &SliceBlueprint) -> Self {
        let split = split_functions(bp);
        Self {
            id,
            blueprint: bp.id,
            state: SliceState::Requested,
            dedicated_nfs: split.dedicated,
            common_nfs: split.common,
            admitted_window: None,
        }
    }
}

/// Applies one lifecycle event. Terminated is absorbing.
pub fn transition(mut instance: SliceInstance, event: LifecycleEvent) -> Result<SliceInstance, SliceError> {
    use LifecycleEvent::*;
    use SliceState::*;
    instance.state = match (instance.state, event) {
        (Requested, Admit) => Admitted,
        (Requested, Reject) => Terminated,
        (Admitted, Activate) => Active,
        (Active, Terminate) => Terminated,
        (state, event) => return Err(SliceError::IllegalTransition { state, event }),
    };
    Ok(instance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tenant {
    pub id: TenantId,
    pub name: String,
    /// Mobile network operator, as opposed to a vertical or MVNO.
    #[serde(default)]
    pub operator: bool,
}

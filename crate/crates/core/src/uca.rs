//! User-centric connection areas and mobility signaling accounting.
//!
//! A UCA is the set of `k` nodes nearest a UE, with the nearest as anchor.
//! Core-network bearers end at the anchor, so moves inside the set only
//! cost radio messages. Leaving the set re-forms the UCA around the new node
//! and switches the core path.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{NodeId, UeId};
use crate::radio::{Position, Topology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UcaError {
    #[error("UCA size must be at least 1")]
    ZeroSize,
    #[error("UCA size {k} exceeds the {nodes} nodes of the topology")]
    TooLarge { k: usize, nodes: usize },
    #[error("unknown {0}")]
    UnknownNode(NodeId),
}

/// Message costs per mobility event. `c_reform` defaults to `k + 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UcaCosts {
    pub c_intra: u64,
    pub c_reform: Option<u64>,
    pub c_pathswitch: u64,
    pub c_ho_ran: u64,
    pub c_ho_cn: u64,
}

impl Default for UcaCosts {
    fn default() -> Self {
        Self {
            c_intra: 1,
            c_reform: None,
            c_pathswitch: 2,
            c_ho_ran: 4,
            c_ho_cn: 2,
        }
    }
}

impl UcaCosts {
    pub fn reform(&self, k: usize) -> u64 {
        self.c_reform.unwrap_or(k as u64 + 2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Uca {
    pub ue: UeId,
    pub nodes: BTreeSet<NodeId>,
    pub anchor: NodeId,
    pub context_shared: bool,
    /// Node terminating the UE's core-network bearer; always the anchor.
    pub bearer_anchor: NodeId,
}

impl Uca {
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn check(&self) -> bool {
        self.nodes.contains(&self.anchor) && self.bearer_anchor == self.anchor
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalingEvent {
    IntraUca,
    InterUca,
    Handover,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SignalingDelta {
    pub ran_messages: u64,
    pub cn_messages: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SignalingCounters {
    pub ran_messages: u64,
    pub cn_messages: u64,
    pub by_event: BTreeMap<SignalingEvent, (u64, SignalingDelta)>,
}

impl SignalingCounters {
    pub fn record(&mut self, event: SignalingEvent, delta: SignalingDelta) {
        self.ran_messages += delta.ran_messages;
        self.cn_messages += delta.cn_messages;
        let e = self.by_event.entry(event).or_default();
        e.0 += 1;
        e.1.ran_messages += delta.ran_messages;
        e.1.cn_messages += delta.cn_messages;
    }
}

fn nearest_k(topology: &Topology, p: &Position, k: usize) -> Result<Vec<NodeId>, UcaError> {
    if k == 0 {
        return Err(UcaError::ZeroSize);
    }
    if k > topology.len() {
        return Err(UcaError::TooLarge {
            k,
            nodes: topology.len(),
        });
    }
    Ok(topology.by_distance(p).into_iter().take(k).collect())
}

/// The `k` nodes nearest `position`, ties to lower ids, anchored at the
/// nearest.
pub fn form_uca(ue: UeId, position: &Position, topology: &Topology, k: usize) -> Result<Uca, UcaError> {
    let near = nearest_k(topology, position, k)?;
    Ok(Uca {
        ue,
        anchor: near[0],
        bearer_anchor: near[0],
        nodes: near.into_iter().collect(),
        context_shared: true,
    })
}

/// Handles a serving-node change. Inside the set only radio messages are
/// exchanged and the anchor stays; outside it the UCA slides to the `k`
/// nodes nearest `new_node`, which becomes the anchor.
pub fn on_cell_change(
    uca: &Uca,
    new_node: NodeId,
    topology: &Topology,
    costs: &UcaCosts,
) -> Result<(Uca, SignalingEvent, SignalingDelta), UcaError> {
    if uca.nodes.contains(&new_node) {
        let delta = SignalingDelta {
            ran_messages: costs.c_intra,
            cn_messages: 0,
        };
        return Ok((uca.clone(), SignalingEvent::IntraUca, delta));
    }
    let node = topology.get(new_node).ok_or(UcaError::UnknownNode(new_node))?;
    let k = uca.size();
    // co-located nodes tie on distance; the serving node always anchors
    let mut near = vec![new_node];
    near.extend(
        nearest_k(topology, &node.position, k)?
            .into_iter()
            .filter(|n| *n != new_node),
    );
    near.truncate(k);
    let next = Uca {
        ue: uca.ue,
        nodes: near.into_iter().collect(),
        anchor: new_node,
        context_shared: true,
        bearer_anchor: new_node,
    };
    let delta = SignalingDelta {
        ran_messages: costs.reform(k),
        cn_messages: costs.c_pathswitch,
    };
    Ok((next, SignalingEvent::InterUca, delta))
}

/// Core-network-anchored handover: every serving-node change costs the same.
pub fn baseline_handover(costs: &UcaCosts) -> SignalingDelta {
    SignalingDelta {
        ran_messages: costs.c_ho_ran,
        cn_messages: costs.c_ho_cn,
    }
}

//! Simulation substrate: radio nodes, UEs, traffic, mobility and channel.

mod channel;
mod mobility;
mod traffic;

pub use channel::{spectral_efficiency, step_channel, ChannelModel, ChannelParams, ChannelState, LinkQuality};
pub use mobility::{move_ues, Area, CellChange};
pub use traffic::{
    generate_traffic, Arrival, CompletedPacket, Flow, OnOff, Packet, ServeOutcome, TrafficModel, FULL_BUFFER_BITS,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{NodeId, SliceId, UeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadioError {
    #[error("topology has no nodes")]
    EmptyTopology,
    #[error("node id {0} used twice")]
    DuplicateNode(NodeId),
    #[error("{ue} references unknown {node}")]
    UnknownNode { ue: UeId, node: NodeId },
}

/// A point in the plane, metres.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Position {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Position> for [f64; 2] {
    fn from(p: Position) -> Self {
        [p.x, p.y]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub position: Position,
    /// Co-location group.
    #[serde(default)]
    pub site: u32,
    #[serde(default)]
    pub edge_cloud: bool,
}

/// Radio nodes, kept sorted by id.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Topology {
    nodes: Vec<Node>,
}

impl Topology {
    pub fn new(mut nodes: Vec<Node>) -> Result<Self, RadioError> {
        if nodes.is_empty() {
            return Err(RadioError::EmptyTopology);
        }
        nodes.sort_by_key(|n| n.id);
        if let Some(w) = nodes.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(RadioError::DuplicateNode(w[0].id));
        }
        Ok(Self { nodes })
    }

    /// A `cols × rows` square lattice with `spacing` metres between
    /// neighbours, one site per node, ids assigned row-major from 0.
    pub fn lattice(cols: u32, rows: u32, spacing: f64) -> Self {
        let nodes = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| {
                let id = r * cols + c;
                Node {
                    id: NodeId(id),
                    position: Position::new(f64::from(c) * spacing, f64::from(r) * spacing),
                    site: id,
                    edge_cloud: false,
                }
            })
            .collect();
        Self::new(nodes).expect("lattice has at least one node")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: NodeId) -> Option<&Node> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.get(id).is_some()
    }

    /// Nodes ordered by distance from `p`, ties by lower id.
    pub fn by_distance(&self, p: &Position) -> Vec<NodeId> {
        let mut order: Vec<(f64, NodeId)> = self.nodes.iter().map(|n| (n.position.distance(p), n.id)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().map(|(_, id)| id).collect()
    }

    pub fn nearest(&self, p: &Position) -> NodeId {
        self.nodes
            .iter()
            .map(|n| (n.position.distance(p), n.id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
            .expect("topology is nonempty")
    }

    /// Bounding box of the node positions.
    pub fn bounds(&self) -> Area {
        let (mut lo, mut hi) = (self.nodes[0].position, self.nodes[0].position);
        for n in &self.nodes {
            lo.x = lo.x.min(n.position.x);
            lo.y = lo.y.min(n.position.y);
            hi.x = hi.x.max(n.position.x);
            hi.y = hi.y.max(n.position.y);
        }
        Area { min: lo, max: hi }
    }
}

/// A user equipment. `serving` lists the nodes carrying its data; without
/// multi-connectivity that is just the nearest node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ue {
    pub id: UeId,
    pub slice: SliceId,
    pub position: Position,
    pub speed_mps: f64,
    pub serving: Vec<NodeId>,
    pub nearest: NodeId,
    /// Current random-waypoint target, if any.
    pub waypoint: Option<Position>,
}

impl Ue {
    /// A single-connectivity UE attached to its nearest node.
    pub fn attached(id: UeId, slice: SliceId, position: Position, speed_mps: f64, topology: &Topology) -> Self {
        let nearest = topology.nearest(&position);
        Self {
            id,
            slice,
            position,
            speed_mps,
            serving: vec![nearest],
            nearest,
            waypoint: None,
        }
    }

    pub fn validate(&self, topology: &Topology) -> Result<(), RadioError> {
        match self.serving.iter().find(|n| !topology.contains(**n)) {
            Some(&node) => Err(RadioError::UnknownNode { ue: self.id, node }),
            None if self.serving.is_empty() => Err(RadioError::UnknownNode {
                ue: self.id,
                node: self.nearest,
            }),
            None => Ok(()),
        }
    }
}

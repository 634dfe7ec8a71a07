//! Multi-connectivity: a UE served over several node legs, anchored either at
//! a common PDCP (any placement) or a common MAC (co-sited or behind a fast
//! transport link).

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{NodeId, UeId};
use crate::radio::Topology;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("{0} has no legs")]
    NoLegs(UeId),
    #[error("{ue} lists {node} twice")]
    DuplicateLeg { ue: UeId, node: NodeId },
    #[error("{ue} leg references unknown {node}")]
    UnknownNode { ue: UeId, node: NodeId },
    #[error("common MAC for {ue} infeasible between {a} and {b}: {reason}")]
    MacInfeasible {
        ue: UeId,
        a: NodeId,
        b: NodeId,
        reason: String,
    },
    #[error("packet error rate {0} is outside [0, 1]")]
    PerOutOfRange(f64),
}

/// Link between two nodes; direction does not matter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportLink {
    pub a: NodeId,
    pub b: NodeId,
    pub latency_ms: f64,
    pub capacity_bps: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Transport {
    links: BTreeMap<(NodeId, NodeId), TransportLink>,
}

impl Transport {
    pub fn new(links: impl IntoIterator<Item = TransportLink>) -> Self {
        Self {
            links: links.into_iter().map(|l| ((l.a.min(l.b), l.a.max(l.b)), l)).collect(),
        }
    }

    pub fn get(&self, a: NodeId, b: NodeId) -> Option<&TransportLink> {
        self.links.get(&(a.min(b), a.max(b)))
    }

    pub fn links(&self) -> impl Iterator<Item = &TransportLink> {
        self.links.values()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Anchor {
    CommonPdcp,
    CommonMac,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McMode {
    /// Each leg carries different bits of the flow.
    Split,
    /// Every leg carries a full copy.
    Duplicate,
}

/// The first leg hosts the anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub ue: UeId,
    pub legs: Vec<NodeId>,
    pub anchor: Anchor,
    pub mode: McMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McLimits {
    #[serde(default = "McLimits::default_latency")]
    pub mac_latency_limit_ms: f64,
    #[serde(default = "McLimits::default_capacity")]
    pub mac_capacity_floor_bps: f64,
}

impl McLimits {
    fn default_latency() -> f64 {
        0.25
    }

    fn default_capacity() -> f64 {
        10e9
    }
}

impl Default for McLimits {
    fn default() -> Self {
        Self {
            mac_latency_limit_ms: Self::default_latency(),
            mac_capacity_floor_bps: Self::default_capacity(),
        }
    }
}

/// Checks legs exist and are distinct, and that a common MAC is either
/// co-sited or has a fast enough link between every pair of legs.
pub fn validate_anchor(
    cfg: &McConfig,
    topology: &Topology,
    transport: &Transport,
    limits: &McLimits,
) -> Result<McConfig, McError> {
    if cfg.legs.is_empty() {
        return Err(McError::NoLegs(cfg.ue));
    }
    let mut seen = BTreeSet::new();
    for &node in &cfg.legs {
        if !topology.contains(node) {
            return Err(McError::UnknownNode { ue: cfg.ue, node });
        }
        if !seen.insert(node) {
            return Err(McError::DuplicateLeg { ue: cfg.ue, node });
        }
    }
    if cfg.anchor == Anchor::CommonMac {
        let site = |n: NodeId| topology.get(n).map(|n| n.site);
        let sites: BTreeSet<_> = cfg.legs.iter().map(|n| site(*n)).collect();
        if sites.len() > 1 {
            for (i, &a) in cfg.legs.iter().enumerate() {
                for &b in &cfg.legs[i + 1..] {
                    let fail = |reason: String| McError::MacInfeasible {
                        ue: cfg.ue,
                        a,
                        b,
                        reason,
                    };
                    let link = transport
                        .get(a, b)
                        .ok_or_else(|| fail("different sites, no transport link".into()))?;
                    if link.latency_ms > limits.mac_latency_limit_ms {
                        return Err(fail(format!(
                            "latency {} ms exceeds {} ms",
                            link.latency_ms, limits.mac_latency_limit_ms
                        )));
                    }
                    if link.capacity_bps < limits.mac_capacity_floor_bps {
                        return Err(fail(format!(
                            "capacity {} bit/s below {} bit/s",
                            link.capacity_bps, limits.mac_capacity_floor_bps
                        )));
                    }
                }
            }
        }
    }
    Ok(cfg.clone())
}

pub fn aggregate_throughput(per_leg_bits: &[u64]) -> u64 {
    per_leg_bits.iter().sum()
}

/// Effective loss probability of a duplicated packet with independent legs.
pub fn duplicate_reliability(per_leg_per: &[f64]) -> Result<f64, McError> {
    if let Some(p) = per_leg_per.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(McError::PerOutOfRange(*p));
    }
    Ok(per_leg_per.iter().product())
}

/// Sends `packets` duplicated packets and counts those lost on every leg.
pub fn simulate_duplicate_losses<R: Rng + ?Sized>(per_leg_per: &[f64], packets: u64, rng: &mut R) -> u64 {
    (0..packets)
        .filter(|_| per_leg_per.iter().all(|p| rng.random::<f64>() < *p))
        .count() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Coordination {
    /// One scheduler instance sees the cells of every leg.
    pub joint_scheduling: bool,
}

pub fn coordination_bonus(cfg: &McConfig) -> Coordination {
    Coordination {
        joint_scheduling: cfg.anchor == Anchor::CommonMac,
    }
}

/// Extra latency of reassembling at a common PDCP: the slowest link from a
/// leg to the anchor leg. Co-sited legs and legs without a configured link
/// add nothing; a common MAC adds nothing.
pub fn reassembly_latency_ms(cfg: &McConfig, topology: &Topology, transport: &Transport) -> f64 {
    if cfg.anchor == Anchor::CommonMac {
        return 0.0;
    }
    let Some(&anchor) = cfg.legs.first() else { return 0.0 };
    let site = |n: NodeId| topology.get(n).map(|n| n.site);
    cfg.legs
        .iter()
        .filter(|&&leg| site(leg) != site(anchor))
        .filter_map(|&leg| transport.get(anchor, leg).map(|l| l.latency_ms))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::{Node, Position};
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn topo() -> Topology {
        let node = |id: u32, site: u32| Node {
            id: NodeId(id),
            position: Position::new(f64::from(id) * 100.0, 0.0),
            site,
            edge_cloud: false,
        };
        Topology::new(vec![node(0, 0), node(1, 0), node(2, 1)]).unwrap()
    }

    fn cfg(legs: &[u32], anchor: Anchor) -> McConfig {
        McConfig {
            ue: UeId(1),
            legs: legs.iter().map(|&n| NodeId(n)).collect(),
            anchor,
            mode: McMode::Split,
        }
    }

    fn link(latency_ms: f64, capacity_bps: f64) -> Transport {
        Transport::new([TransportLink {
            a: NodeId(2),
            b: NodeId(0),
            latency_ms,
            capacity_bps,
        }])
    }

    #[test]
    fn anchor_examples() {
        let t = topo();
        let limits = McLimits::default();
        assert!(validate_anchor(&cfg(&[0, 1], Anchor::CommonMac), &t, &Transport::default(), &limits).is_ok());
        let slow = link(10.0, 1e12);
        assert!(matches!(
            validate_anchor(&cfg(&[0, 2], Anchor::CommonMac), &t, &slow, &limits),
            Err(McError::MacInfeasible {
                a: NodeId(0),
                b: NodeId(2),
                ..
            })
        ));
        assert!(validate_anchor(&cfg(&[0, 2], Anchor::CommonPdcp), &t, &slow, &limits).is_ok());
        assert!(validate_anchor(&cfg(&[0, 2], Anchor::CommonMac), &t, &link(0.1, 1e11), &limits).is_ok());
        assert!(validate_anchor(&cfg(&[0, 2], Anchor::CommonMac), &t, &link(0.1, 1e9), &limits).is_err());
        assert!(matches!(
            validate_anchor(&cfg(&[0, 0], Anchor::CommonPdcp), &t, &slow, &limits),
            Err(McError::DuplicateLeg { .. })
        ));
        assert!(matches!(
            validate_anchor(&cfg(&[7], Anchor::CommonPdcp), &t, &slow, &limits),
            Err(McError::UnknownNode { .. })
        ));
    }

    #[test]
    fn throughput_and_reliability_examples() {
        assert_eq!(aggregate_throughput(&[10, 5]), 15);
        assert_eq!(aggregate_throughput(&[7]), 7);
        assert_eq!(aggregate_throughput(&[0, 0, 0]), 0);
        assert!((duplicate_reliability(&[1e-2, 1e-2]).unwrap() - 1e-4).abs() < 1e-18);
        assert_eq!(duplicate_reliability(&[0.3]).unwrap(), 0.3);
        assert_eq!(duplicate_reliability(&[1.2]), Err(McError::PerOutOfRange(1.2)));
    }

    #[test]
    fn duplicate_monte_carlo_within_three_sigma() {
        let n = 1_000_000u64;
        let p = duplicate_reliability(&[0.05, 0.05]).unwrap();
        let lost = simulate_duplicate_losses(&[0.05, 0.05], n, &mut stream(3, Stream::Channel));
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((lost as f64 - n as f64 * p).abs() <= 3.0 * sigma, "lost {lost}");
    }

    #[test]
    fn coordination_and_reassembly() {
        let t = topo();
        assert!(coordination_bonus(&cfg(&[0, 1], Anchor::CommonMac)).joint_scheduling);
        assert!(!coordination_bonus(&cfg(&[0, 1], Anchor::CommonPdcp)).joint_scheduling);
        let tr = link(3.0, 1e9);
        assert_eq!(reassembly_latency_ms(&cfg(&[0, 2], Anchor::CommonPdcp), &t, &tr), 3.0);
        assert_eq!(reassembly_latency_ms(&cfg(&[0, 1], Anchor::CommonPdcp), &t, &tr), 0.0);
        assert_eq!(reassembly_latency_ms(&cfg(&[0, 2], Anchor::CommonMac), &t, &tr), 0.0);
    }

    proptest! {
        #[test]
        fn duplicate_per_at_most_min_leg(pers in proptest::collection::vec(0.0f64..=1.0, 1..5)) {
            let eff = duplicate_reliability(&pers).unwrap();
            let min = pers.iter().copied().fold(1.0, f64::min);
            prop_assert!(eff <= min + 1e-15);
            if pers.len() >= 2 && pers.iter().all(|p| *p > 0.0 && *p < 1.0) {
                prop_assert!(eff < min);
            }
        }

        #[test]
        fn mac_validity_is_monotone(lat in 0.0f64..1.0, cap in 1e9f64..1e11, dl in 0.0f64..1.0, dc in 0.0f64..1e11) {
            let t = topo();
            let limits = McLimits::default();
            let c = cfg(&[0, 2], Anchor::CommonMac);
            if validate_anchor(&c, &t, &link(lat, cap), &limits).is_ok() {
                prop_assert!(validate_anchor(&c, &t, &link((lat - dl).max(0.0), cap + dc), &limits).is_ok());
            }
        }
    }
}

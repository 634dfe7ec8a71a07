use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Position, Topology, Ue};
use crate::ids::{NodeId, UeId};

/// Axis-aligned rectangle in which waypoints are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub min: Position,
    pub max: Position,
}

impl Area {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Position {
        Position::new(
            self.min.x + rng.random::<f64>() * (self.max.x - self.min.x),
            self.min.y + rng.random::<f64>() * (self.max.y - self.min.y),
        )
    }
}

/// The nearest node of a UE changed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CellChange {
    pub ue: UeId,
    pub from: NodeId,
    pub to: NodeId,
}

/// Advances every moving UE by `dt_ms` along its random-waypoint path and
/// reports nearest-node changes. UEs are visited in id order; a UE only
/// draws from `rng` when it needs a new waypoint.
pub fn move_ues<R: Rng + ?Sized>(
    ues: &mut [Ue],
    dt_ms: f64,
    topology: &Topology,
    area: &Area,
    rng: &mut R,
) -> Vec<CellChange> {
    debug_assert!(dt_ms > 0.0);
    let mut order: Vec<usize> = (0..ues.len()).collect();
    order.sort_by_key(|&i| ues[i].id);
    let mut events = Vec::new();
    for i in order {
        let ue = &mut ues[i];
        if ue.speed_mps <= 0.0 {
            continue;
        }
        let target = *ue.waypoint.get_or_insert_with(|| area.sample(rng));
        let step = ue.speed_mps * dt_ms / 1000.0;
        let dist = ue.position.distance(&target);
        if dist <= step {
            ue.position = target;
            ue.waypoint = None;
        } else {
            let f = step / dist;
            ue.position.x += (target.x - ue.position.x) * f;
            ue.position.y += (target.y - ue.position.y) * f;
        }
        let nearest = topology.nearest(&ue.position);
        if nearest != ue.nearest {
            events.push(CellChange {
                ue: ue.id,
                from: ue.nearest,
                to: nearest,
            });
            ue.nearest = nearest;
        }
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::SliceId;
    use crate::rng::{stream, Stream};
    use std::collections::BTreeSet;

    #[test]
    fn stationary_ue_stays() {
        let topo = Topology::lattice(3, 3, 100.0);
        let mut ues = vec![Ue::attached(UeId(1), SliceId(1), Position::new(40.0, 40.0), 0.0, &topo)];
        let before = ues.clone();
        let mut rng = stream(1, Stream::Mobility);
        for _ in 0..100 {
            assert!(move_ues(&mut ues, 10.0, &topo, &topo.bounds(), &mut rng).is_empty());
        }
        assert_eq!(ues, before);
    }

    #[test]
    fn crossing_midpoint_emits_one_change() {
        let topo = Topology::lattice(2, 1, 100.0);
        let mut ue = Ue::attached(UeId(1), SliceId(1), Position::new(10.0, 0.0), 10.0, &topo);
        ue.waypoint = Some(Position::new(90.0, 0.0));
        let mut ues = vec![ue];
        let mut rng = stream(1, Stream::Mobility);
        let mut events = Vec::new();
        // 8 m per 800 ms step; ten steps reach the waypoint exactly
        for _ in 0..10 {
            events.extend(move_ues(&mut ues, 800.0, &topo, &topo.bounds(), &mut rng));
        }
        assert_eq!(
            events,
            vec![CellChange {
                ue: UeId(1),
                from: NodeId(0),
                to: NodeId(1)
            }]
        );
        assert_eq!(ues[0].position, Position::new(90.0, 0.0));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let topo = Topology::lattice(3, 3, 100.0);
        let run = |seed| {
            let mut ues: Vec<Ue> = (0..5)
                .map(|i| Ue::attached(UeId(i), SliceId(1), Position::new(50.0, 50.0), 15.0, &topo))
                .collect();
            let mut rng = stream(seed, Stream::Mobility);
            let ev: Vec<CellChange> = (0..500)
                .flat_map(|_| move_ues(&mut ues, 100.0, &topo, &topo.bounds(), &mut rng))
                .collect();
            (ues, ev)
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3).1, run(4).1);
    }

    #[test]
    fn every_node_eventually_nearest() {
        // Monte Carlo coverage check over a uniform 3x3 layout
        let topo = Topology::lattice(3, 3, 100.0);
        let area = topo.bounds();
        for seed in 0..5 {
            let mut rng = stream(seed, Stream::Mobility);
            let mut ues: Vec<Ue> = (0..4)
                .map(|i| Ue::attached(UeId(i), SliceId(1), Position::new(100.0, 100.0), 20.0, &topo))
                .collect();
            let mut visited: BTreeSet<NodeId> = ues.iter().map(|u| u.nearest).collect();
            for _ in 0..5000 {
                for ev in move_ues(&mut ues, 100.0, &topo, &area, &mut rng) {
                    visited.insert(ev.to);
                }
            }
            assert_eq!(visited.len(), topo.len(), "seed {seed}");
        }
    }
}

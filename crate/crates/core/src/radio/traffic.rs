use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::ids::{FlowId, UeId};

/// Backlog reported by an active full-buffer flow.
pub const FULL_BUFFER_BITS: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum TrafficModel {
    FullBuffer,
    Poisson { rate_pkts_per_s: f64, packet_bits: u64 },
    Periodic { period_ms: f64, packet_bits: u64 },
}

/// Activity gate in windows: the flow is on when
/// `(window + offset_windows) % period_windows < on_windows`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnOff {
    pub period_windows: u64,
    pub on_windows: u64,
    #[serde(default)]
    pub offset_windows: u64,
}

impl OnOff {
    pub fn is_on(&self, window: u64) -> bool {
        self.period_windows == 0 || (window + self.offset_windows) % self.period_windows < self.on_windows
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Packet {
    pub id: u64,
    pub arrival_ms: f64,
    pub deadline_ms: f64,
    pub bits: u64,
    pub remaining: u64,
    /// Already counted as a latency violation.
    pub late: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Arrival {
    pub flow: FlowId,
    pub time_ms: f64,
    pub bits: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompletedPacket {
    pub id: u64,
    pub arrival_ms: f64,
    pub completion_ms: f64,
    /// True when this completion is a new latency violation.
    pub violation: bool,
}

impl CompletedPacket {
    pub fn latency_ms(&self) -> f64 {
        self.completion_ms - self.arrival_ms
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ServeOutcome {
    pub delivered_bits: u64,
    pub completed: Vec<CompletedPacket>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Flow {
    pub id: FlowId,
    pub ue: UeId,
    pub model: TrafficModel,
    pub gate: Option<OnOff>,
    pub queue: VecDeque<Packet>,
    next_packet: u64,
    active: bool,
}

impl Flow {
    pub fn new(id: FlowId, ue: UeId, model: TrafficModel, gate: Option<OnOff>) -> Self {
        Self {
            id,
            ue,
            model,
            gate,
            queue: VecDeque::new(),
            next_packet: 0,
            active: true,
        }
    }

    pub fn is_full_buffer(&self) -> bool {
        self.model == TrafficModel::FullBuffer
    }

    /// Updates the activity gate for `window`.
    pub fn set_window(&mut self, window: u64) {
        self.active = self.gate.is_none_or(|g| g.is_on(window));
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn backlog_bits(&self) -> u64 {
        if self.is_full_buffer() {
            if self.active {
                FULL_BUFFER_BITS
            } else {
                0
            }
        } else {
            self.queue.iter().map(|p| p.remaining).sum()
        }
    }

    /// Deadline of the head packet; full-buffer flows have none.
    pub fn head_deadline(&self) -> Option<f64> {
        if self.is_full_buffer() {
            None
        } else {
            self.queue.front().map(|p| p.deadline_ms)
        }
    }

    /// Pending packets as `(deadline, remaining bits)`; a full-buffer flow
    /// appears as one packet without deadline.
    pub fn pending(&self) -> Vec<(f64, u64)> {
        if self.is_full_buffer() {
            match self.backlog_bits() {
                0 => vec![],
                b => vec![(f64::INFINITY, b)],
            }
        } else {
            self.queue.iter().map(|p| (p.deadline_ms, p.remaining)).collect()
        }
    }

    pub fn enqueue(&mut self, arrival_ms: f64, bits: u64, latency_budget_ms: f64) {
        if self.is_full_buffer() || bits == 0 {
            return;
        }
        self.queue.push_back(Packet {
            id: self.next_packet,
            arrival_ms,
            deadline_ms: arrival_ms + latency_budget_ms,
            bits,
            remaining: bits,
            late: false,
        });
        self.next_packet += 1;
    }

    /// Drains the queue with per-leg grant sequences `(bits, completion_ms)`
    /// given in service order. With a single leg this is plain FIFO service.
    /// With several legs each leg carries its own copy of the queue; a packet
    /// completes with its earliest copy and the queue advances by the
    /// furthest leg.
    pub fn serve(&mut self, legs: &[Vec<(u64, f64)>]) -> ServeOutcome {
        let served: Vec<u64> = legs.iter().map(|l| l.iter().map(|g| g.0).sum()).collect();
        let furthest = served.iter().copied().max().unwrap_or(0);
        if self.is_full_buffer() {
            return ServeOutcome {
                delivered_bits: if self.active { furthest } else { 0 },
                completed: vec![],
            };
        }
        let backlog = self.backlog_bits();
        let delivered = furthest.min(backlog);

        // completion time of each queued packet on its fastest leg
        let mut completion: Vec<Option<f64>> = vec![None; self.queue.len()];
        for leg in legs {
            let mut grants = leg.iter();
            let mut carried = 0u64;
            let mut current = grants.next();
            for (i, p) in self.queue.iter().enumerate() {
                let mut need = p.remaining;
                while let Some(&(bits, at)) = current {
                    let avail = bits - carried;
                    if avail >= need {
                        carried += need;
                        need = 0;
                        if carried == bits {
                            carried = 0;
                            current = grants.next();
                        }
                        let slot = &mut completion[i];
                        *slot = Some(slot.map_or(at, |t: f64| t.min(at)));
                        break;
                    }
                    need -= avail;
                    carried = 0;
                    current = grants.next();
                }
                if need > 0 {
                    break;
                }
            }
        }

        let mut out = ServeOutcome {
            delivered_bits: delivered,
            completed: vec![],
        };
        let mut left = delivered;
        while left > 0 {
            let head = self.queue.front_mut().expect("delivered bits never exceed backlog");
            if head.remaining <= left {
                left -= head.remaining;
                let p = self.queue.pop_front().unwrap();
                let at = completion[out.completed.len()].expect("fully served packet has a completion time");
                out.completed.push(CompletedPacket {
                    id: p.id,
                    arrival_ms: p.arrival_ms,
                    completion_ms: at,
                    violation: !p.late && at > p.deadline_ms,
                });
            } else {
                head.remaining -= left;
                left = 0;
            }
        }
        out
    }

    /// Flags queued packets whose deadline passed before `now_ms`; returns
    /// how many were newly flagged.
    pub fn expire(&mut self, now_ms: f64) -> usize {
        let mut n = 0;
        for p in self.queue.iter_mut().filter(|p| !p.late && p.deadline_ms < now_ms) {
            p.late = true;
            n += 1;
        }
        n
    }
}

/// Arrivals in `[window_start_ms, window_start_ms + window_ms)` for every
/// active flow, in flow order then time order. Full-buffer flows never
/// produce arrivals.
pub fn generate_traffic<R: Rng + ?Sized>(
    flows: &[Flow],
    window_start_ms: f64,
    window_ms: f64,
    rng: &mut R,
) -> Vec<Arrival> {
    let end = window_start_ms + window_ms;
    let mut out = Vec::new();
    let mut order: Vec<&Flow> = flows.iter().collect();
    order.sort_by_key(|f| f.id);
    for flow in order.into_iter().filter(|f| f.active) {
        match flow.model {
            TrafficModel::FullBuffer => {}
            TrafficModel::Periodic { period_ms, packet_bits } => {
                let mut k = (window_start_ms / period_ms).ceil() as u64;
                loop {
                    let t = k as f64 * period_ms;
                    if t >= end {
                        break;
                    }
                    out.push(Arrival {
                        flow: flow.id,
                        time_ms: t,
                        bits: packet_bits,
                    });
                    k += 1;
                }
            }
            TrafficModel::Poisson {
                rate_pkts_per_s,
                packet_bits,
            } => {
                let mean = rate_pkts_per_s * window_ms / 1000.0;
                if mean <= 0.0 {
                    continue;
                }
                let count = Poisson::new(mean).expect("positive finite mean").sample(rng) as u64;
                let mut times: Vec<f64> = (0..count)
                    .map(|_| window_start_ms + rng.random::<f64>() * window_ms)
                    .collect();
                times.sort_by(f64::total_cmp);
                out.extend(times.into_iter().map(|t| Arrival {
                    flow: flow.id,
                    time_ms: t,
                    bits: packet_bits,
                }));
            }
        }
    }
    out
}

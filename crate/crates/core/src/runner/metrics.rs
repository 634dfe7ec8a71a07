//! Per-window metric rows, the run summary, and their file forms.
//!
//! Every CSV has a header row and a fixed column order (the field order
//! below). Floats are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::RunError;
use crate::ids::{SliceId, TenantId, UeId};
use crate::multiconn::{Anchor, McMode};
use crate::scheduling::DemotionEvent;
use crate::uca::SignalingCounters;

/// One active slice in one window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceRow {
    pub window: u64,
    pub slice: SliceId,
    pub tenant: TenantId,
    /// Backlog after arrivals, before scheduling.
    pub backlog_bits: u64,
    pub served_bits: u64,
    pub completed_packets: u64,
    pub latency_violations: u64,
    /// Served below `min(required, backlog)` for the SLA's throughput.
    pub throughput_shortfall: bool,
    pub sla_violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupancyRow {
    pub window: u64,
    pub slice: SliceId,
    pub mask_cells: usize,
    /// Mask cells carrying at least one grant.
    pub used_cells: usize,
    pub grid_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerRow {
    pub window: u64,
    pub offered: u64,
    pub accepted: u64,
    pub active: usize,
    pub committed_load: f64,
    pub revenue: f64,
    pub penalties: f64,
    pub violations: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SignalingRow {
    pub window: u64,
    pub cell_changes: u64,
    pub intra_uca: u64,
    pub inter_uca: u64,
    pub uca_ran: u64,
    pub uca_cn: u64,
    pub baseline_ran: u64,
    pub baseline_cn: u64,
}

/// Nearest-rank latency percentiles in ms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

/// The smallest sample with at least `p` percent of samples at or below it.
/// `sorted` must be ascending and nonempty.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Percentiles {
    pub fn of(samples: &mut [f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_by(f64::total_cmp);
        Some(Self {
            p50: nearest_rank(samples, 50.0),
            p95: nearest_rank(samples, 95.0),
            p99: nearest_rank(samples, 99.0),
            max: samples[samples.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceSummary {
    pub slice: SliceId,
    pub tenant: TenantId,
    pub blueprint: String,
    /// The broker request that created the slice, if any.
    pub request: Option<u32>,
    pub active_windows: u64,
    pub served_bits: u64,
    pub mean_throughput_bps: f64,
    pub completed_packets: u64,
    pub latency_violations: u64,
    pub violated_windows: u64,
    pub latency_ms: Option<Percentiles>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BrokerSummary {
    pub admission: String,
    pub offered: u64,
    pub accepted: BTreeMap<u8, u64>,
    pub rejected: BTreeMap<u8, u64>,
    pub revenue: f64,
    pub penalties: f64,
    pub net: f64,
    pub mean_utilization: f64,
    pub peak_utilization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McSummary {
    pub ue: UeId,
    pub mode: McMode,
    pub anchor: Anchor,
    pub legs: usize,
    pub reassembly_latency_ms: f64,
    /// Product of the per-leg PER for duplication; the best leg otherwise.
    pub effective_per: Option<f64>,
    pub served_bits: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SignalingSummary {
    pub uca_k: Option<usize>,
    pub uca: SignalingCounters,
    pub baseline: SignalingCounters,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub config_hash: String,
    pub duration_windows: u64,
    pub window_ms: f64,
    pub sdmx_objective: String,
    pub total_served_bits: u64,
    pub slices: Vec<SliceSummary>,
    pub broker: BrokerSummary,
    pub signaling: SignalingSummary,
    pub multiconn: Vec<McSummary>,
    pub demotions: usize,
}

impl Summary {
    /// Scalar metrics keyed by name, for aggregation and comparison. Slices
    /// created by the broker appear only through the totals.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("total_served_bits".into(), self.total_served_bits as f64);
        m.insert("revenue".into(), self.broker.revenue);
        m.insert("penalties".into(), self.broker.penalties);
        m.insert("net_revenue".into(), self.broker.net);
        m.insert("mean_utilization".into(), self.broker.mean_utilization);
        m.insert("accepted".into(), self.broker.accepted.values().sum::<u64>() as f64);
        m.insert("uca_ran_messages".into(), self.signaling.uca.ran_messages as f64);
        m.insert("uca_cn_messages".into(), self.signaling.uca.cn_messages as f64);
        m.insert(
            "baseline_ran_messages".into(),
            self.signaling.baseline.ran_messages as f64,
        );
        m.insert(
            "baseline_cn_messages".into(),
            self.signaling.baseline.cn_messages as f64,
        );
        m.insert("demotions".into(), self.demotions as f64);
        let mut violations = 0;
        for s in &self.slices {
            violations += s.latency_violations;
            if s.request.is_some() {
                continue;
            }
            m.insert(format!("{}.served_bits", s.slice), s.served_bits as f64);
            m.insert(format!("{}.latency_violations", s.slice), s.latency_violations as f64);
            m.insert(format!("{}.violated_windows", s.slice), s.violated_windows as f64);
        }
        m.insert("latency_violations".into(), violations as f64);
        m
    }
}

/// Everything a run produces. A pure function of scenario and seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub summary: Summary,
    pub slices: Vec<SliceRow>,
    pub occupancy: Vec<OccupancyRow>,
    pub ledger: Vec<LedgerRow>,
    pub signaling: Vec<SignalingRow>,
    pub demotions: Vec<DemotionEvent>,
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    w.into_inner().expect("in-memory flush")
}

impl MetricsReport {
    /// The output files as `(name, contents)`, in a fixed order.
    pub fn files(&self) -> Vec<(&'static str, Vec<u8>)> {
        let mut summary = serde_json::to_vec_pretty(&self.summary).expect("summary serializes");
        summary.push(b'\n');
        vec![
            (
                "slices.csv",
                csv_bytes(
                    &self.slices,
                    &[
                        "window",
                        "slice",
                        "tenant",
                        "backlog_bits",
                        "served_bits",
                        "completed_packets",
                        "latency_violations",
                        "throughput_shortfall",
                        "sla_violated",
                    ],
                ),
            ),
            (
                "occupancy.csv",
                csv_bytes(
                    &self.occupancy,
                    &["window", "slice", "mask_cells", "used_cells", "grid_fraction"],
                ),
            ),
            (
                "ledger.csv",
                csv_bytes(
                    &self.ledger,
                    &[
                        "window",
                        "offered",
                        "accepted",
                        "active",
                        "committed_load",
                        "revenue",
                        "penalties",
                        "violations",
                    ],
                ),
            ),
            (
                "signaling.csv",
                csv_bytes(
                    &self.signaling,
                    &[
                        "window",
                        "cell_changes",
                        "intra_uca",
                        "inter_uca",
                        "uca_ran",
                        "uca_cn",
                        "baseline_ran",
                        "baseline_cn",
                    ],
                ),
            ),
            (
                "demotions.csv",
                csv_bytes(
                    &self.demotions,
                    &["window_index", "slice", "flow", "cells_taken", "fair_share"],
                ),
            ),
            ("summary.json", summary),
        ]
    }

    /// SHA-256 over every output file, names included.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, bytes) in self.files() {
            h.update(name.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        hex(&h.finalize())
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), RunError> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| RunError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, bytes) in self.files() {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(io(&path))?;
        }
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

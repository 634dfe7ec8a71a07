use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::{Topology, Ue};
use crate::grid::{Cell, CellQuality};
use crate::ids::{NodeId, UeId};

/// Shannon mapping capped at `se_cap`: `min(log2(1 + 10^(sinr/10)), se_cap)`.
pub fn spectral_efficiency(sinr_db: f64, se_cap: f64) -> f64 {
    (1.0 + 10f64.powf(sinr_db / 10.0)).log2().min(se_cap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ChannelModel {
    /// Every link sees the same spectral efficiency on every RB.
    Constant { se: f64 },
    /// Log-distance pathloss with optional per-RB Rayleigh block fading,
    /// redrawn every window.
    LogDistance {
        /// SNR at the 1 m reference distance.
        #[serde(default = "default_ref_snr")]
        ref_snr_db: f64,
        #[serde(default = "default_exponent")]
        pathloss_exponent: f64,
        #[serde(default = "default_true")]
        fading: bool,
    },
}

fn default_ref_snr() -> f64 {
    100.0
}

fn default_exponent() -> f64 {
    3.5
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    #[serde(flatten)]
    pub model: ChannelModel,
    #[serde(default = "default_se_cap")]
    pub se_cap: f64,
}

fn default_se_cap() -> f64 {
    6.0
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            model: ChannelModel::LogDistance {
                ref_snr_db: default_ref_snr(),
                pathloss_exponent: default_exponent(),
                fading: true,
            },
            se_cap: default_se_cap(),
        }
    }
}

/// Per-RB link quality between one UE and one node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkQuality {
    pub sinr_db: Vec<f64>,
    pub se: Vec<f64>,
}

/// Link quality of every (UE, node) pair for the current window.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ChannelState {
    links: BTreeMap<(UeId, NodeId), LinkQuality>,
}

impl ChannelState {
    pub fn link(&self, ue: UeId, node: NodeId) -> Option<&LinkQuality> {
        self.links.get(&(ue, node))
    }

    pub fn links(&self) -> impl Iterator<Item = (&(UeId, NodeId), &LinkQuality)> {
        self.links.iter()
    }

    pub fn se(&self, ue: UeId, node: NodeId, rb: u32) -> Option<f64> {
        self.links.get(&(ue, node))?.se.get(rb as usize).copied()
    }
}

impl CellQuality for ChannelState {
    fn spectral_efficiency(&self, ue: UeId, node: NodeId, cell: Cell) -> Option<f64> {
        self.se(ue, node, cell.rb)
    }
}

/// Draws the channel for one window. Fading is i.i.d. per (UE, node, RB) and
/// drawn in UE-id, node-id, RB order so the trajectory depends only on the
/// generator state.
pub fn step_channel<R: Rng + ?Sized>(
    ues: &[Ue],
    topology: &Topology,
    params: &ChannelParams,
    n_rb: u32,
    rng: &mut R,
) -> ChannelState {
    let mut order: Vec<&Ue> = ues.iter().collect();
    order.sort_by_key(|u| u.id);
    let mut links = BTreeMap::new();
    for ue in order {
        for node in topology.nodes() {
            let link = match params.model {
                ChannelModel::Constant { se } => {
                    let se = se.min(params.se_cap);
                    let sinr = 10.0 * (2f64.powf(se) - 1.0).log10();
                    LinkQuality {
                        sinr_db: vec![sinr; n_rb as usize],
                        se: vec![se; n_rb as usize],
                    }
                }
                ChannelModel::LogDistance {
                    ref_snr_db,
                    pathloss_exponent,
                    fading,
                } => {
                    let d = ue.position.distance(&node.position).max(1.0);
                    let mean = ref_snr_db - 10.0 * pathloss_exponent * d.log10();
                    let sinr_db: Vec<f64> = (0..n_rb)
                        .map(|_| {
                            if fading {
                                let gain: f64 = Exp1.sample(rng);
                                mean + 10.0 * gain.max(1e-12).log10()
                            } else {
                                mean
                            }
                        })
                        .collect();
                    let se = sinr_db.iter().map(|s| spectral_efficiency(*s, params.se_cap)).collect();
                    LinkQuality { sinr_db, se }
                }
            };
            links.insert((ue.id, node.id), link);
        }
    }
    ChannelState { links }
}

//! Scenario files (TOML) and their cross-validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::broker::{generate_trace, read_trace, AdmissionPolicy, BrokerError, RequestClass, SliceRequest};
use crate::grid::{build_grid, carve_tiles, validate_numerologies, Cell, GridConfig, Numerology, TileSpec, Tiling};
use crate::ids::{NodeId, SliceId, TenantId, UeId};
use crate::multiconn::{validate_anchor, Anchor, McConfig, McLimits, McMode, Transport, TransportLink};
use crate::radio::{Area, ChannelParams, Node, OnOff, Position, Topology, TrafficModel};
use crate::rng::{stream, Stream};
use crate::scheduling::{Reservation, SdmxObjective, SdmxPolicy, SlicePolicy};
use crate::slices::{validate_blueprint, NfTag, RanOption, SharingGroup, Sla, SliceBlueprint, Tenant};
use crate::uca::UcaCosts;

/// A validation problem at a dotted field path such as `slices[2].ues[0].id`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{} validation issue(s):\n{}", .0.len(), .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Issue>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub cols: u32,
    pub rows: u32,
    pub spacing_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeTemplate {
    pub position: Position,
    #[serde(default)]
    pub speed_mps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlueprintSpec {
    pub tenant: TenantId,
    #[serde(default = "default_group")]
    pub sharing_group: SharingGroup,
    #[serde(default = "default_option")]
    pub ran_option: RanOption,
    #[serde(default)]
    pub numerology: u8,
    #[serde(default)]
    pub slice_aware_ue: bool,
    /// Defaults to every function.
    #[serde(default)]
    pub nf_chain: Option<Vec<NfTag>>,
    pub sla: Sla,
    #[serde(default)]
    pub scheduler: SlicePolicy,
    /// Traffic of UEs that do not set their own, and of request slices.
    #[serde(default = "default_traffic")]
    pub traffic: TrafficModel,
    /// The single UE created for each admitted request of this blueprint.
    #[serde(default)]
    pub request_ue: Option<UeTemplate>,
}

fn default_group() -> SharingGroup {
    SharingGroup::A
}

fn default_option() -> RanOption {
    RanOption::One
}

fn default_traffic() -> TrafficModel {
    TrafficModel::FullBuffer
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeSpec {
    pub id: UeId,
    pub position: Position,
    #[serde(default)]
    pub speed_mps: f64,
    #[serde(default)]
    pub traffic: Option<TrafficModel>,
    #[serde(default)]
    pub gate: Option<OnOff>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    pub id: SliceId,
    pub blueprint: String,
    #[serde(default)]
    pub ues: Vec<UeSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    StaticSplit,
    WeightedFair,
    MaxSe,
    FairnessWithFloor,
}

impl ObjectiveKind {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "static-split" => ObjectiveKind::StaticSplit,
            "weighted-fair" => ObjectiveKind::WeightedFair,
            "max-se" => ObjectiveKind::MaxSe,
            "fairness-with-floor" => ObjectiveKind::FairnessWithFloor,
            _ => return None,
        })
    }
}

/// Per-slice knobs of the coordinator objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceKnobs {
    pub slice: SliceId,
    #[serde(default)]
    pub share: Option<f64>,
    /// Defaults to the blueprint's SLA priority weight.
    #[serde(default)]
    pub weight: Option<f64>,
    #[serde(default)]
    pub floor: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exclusion {
    pub slice: SliceId,
    pub cells: BTreeSet<Cell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdmxSpec {
    #[serde(default = "default_objective")]
    pub objective: ObjectiveKind,
    #[serde(default)]
    pub slices: Vec<SliceKnobs>,
    #[serde(default)]
    pub reservations: Vec<Reservation>,
    #[serde(default)]
    pub exclusions: Vec<Exclusion>,
}

fn default_objective() -> ObjectiveKind {
    ObjectiveKind::WeightedFair
}

impl Default for SdmxSpec {
    fn default() -> Self {
        Self {
            objective: default_objective(),
            slices: Vec::new(),
            reservations: Vec::new(),
            exclusions: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    /// CSV trace, relative to the scenario file.
    #[serde(default)]
    pub trace: Option<String>,
    /// Generated per seed when no trace is given.
    #[serde(default)]
    pub classes: Vec<RequestClass>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub ue: UeId,
    pub legs: Vec<NodeId>,
    pub anchor: Anchor,
    pub mode: McMode,
    /// Packet error rate per leg, for the reported effective PER.
    #[serde(default)]
    pub leg_per: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcaSpec {
    pub k: usize,
    #[serde(default)]
    pub costs: UcaCosts,
}

/// The file as written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_windows: u64,
    #[serde(default)]
    pub grid: GridConfig,
    pub numerologies: Vec<Numerology>,
    /// Defaults to one tile covering the grid with the first numerology.
    #[serde(default)]
    pub tiles: Vec<TileSpec>,
    #[serde(default)]
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub lattice: Option<Lattice>,
    #[serde(default)]
    pub transport: Vec<TransportLink>,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub tenants: Vec<Tenant>,
    pub blueprints: BTreeMap<String, BlueprintSpec>,
    #[serde(default)]
    pub slices: Vec<SliceSpec>,
    #[serde(default)]
    pub sdmx: SdmxSpec,
    #[serde(default = "default_admission")]
    pub admission: AdmissionPolicy,
    #[serde(default)]
    pub requests: RequestSpec,
    #[serde(default)]
    pub multiconn: Vec<McSpec>,
    #[serde(default)]
    pub multiconn_limits: McLimits,
    #[serde(default)]
    pub uca: Option<UcaSpec>,
    /// Random-waypoint area; defaults to the node bounding box.
    #[serde(default)]
    pub mobility_area: Option<Area>,
}

fn default_admission() -> AdmissionPolicy {
    AdmissionPolicy::GreedyCapacity
}

/// A resolved blueprint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Blueprint {
    pub name: String,
    pub spec: SliceBlueprint,
    pub scheduler: SlicePolicy,
    pub traffic: TrafficModel,
    pub request_ue: Option<UeTemplate>,
}

/// A parsed and cross-validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub tiling: Tiling,
    pub topology: Topology,
    pub transport: Transport,
    pub blueprints: BTreeMap<String, Blueprint>,
    /// Fixed trace, if the scenario names one.
    pub trace: Option<Vec<SliceRequest>>,
    pub mc: BTreeMap<UeId, McConfig>,
}

impl Scenario {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Self::from_spec(spec, base_dir)
    }

    pub fn from_spec(spec: ScenarioSpec, base_dir: &Path) -> Result<Self, ScenarioError> {
        validate(spec, base_dir)
    }

    pub fn grid_cells(&self) -> u32 {
        self.tiling.grid().cell_count()
    }

    pub fn symbols_per_cell(&self, numerology: u8) -> u32 {
        self.spec
            .numerologies
            .iter()
            .find(|n| n.id == numerology)
            .map_or(1, |n| n.symbols_per_cell)
    }

    /// The coordinator policy with slice knobs resolved; request slices are
    /// added by the engine as they are admitted.
    pub fn sdmx_policy(&self, weights: &BTreeMap<SliceId, f64>, floors: &BTreeMap<SliceId, u32>) -> SdmxPolicy {
        let s = &self.spec.sdmx;
        let shares: BTreeMap<SliceId, f64> = s.slices.iter().filter_map(|k| Some((k.slice, k.share?))).collect();
        let objective = match s.objective {
            ObjectiveKind::StaticSplit => SdmxObjective::StaticSplit { shares },
            ObjectiveKind::WeightedFair => SdmxObjective::WeightedFair {
                weights: weights.clone(),
            },
            ObjectiveKind::MaxSe => SdmxObjective::MaxSpectralEfficiency,
            ObjectiveKind::FairnessWithFloor => SdmxObjective::FairnessWithFloor {
                floors: floors.clone(),
                weights: weights.clone(),
            },
        };
        SdmxPolicy {
            objective,
            reservations: s.reservations.clone(),
            exclusions: s.exclusions.iter().map(|e| (e.slice, e.cells.clone())).collect(),
        }
    }

    /// The request trace of a run: the fixed trace, or one drawn from the
    /// classes on the broker stream of `seed`.
    pub fn requests_for(&self, seed: u64) -> Result<Vec<SliceRequest>, BrokerError> {
        match &self.trace {
            Some(t) => Ok(t.clone()),
            None => generate_trace(
                &self.spec.requests.classes,
                self.spec.duration_windows,
                &mut stream(seed, Stream::Broker),
            ),
        }
    }

    /// SHA-256 of the canonical JSON form of the scenario as written.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(&self.spec).expect("scenario serializes");
        super::metrics::hex(&Sha256::digest(json.as_bytes()))
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_owned(),
        source,
    })?;
    Scenario::parse(&text, path.parent().unwrap_or(Path::new(".")))
}

struct Issues(Vec<Issue>);

impl Issues {
    fn push(&mut self, path: impl Into<String>, message: impl fmt::Display) {
        self.0.push(Issue {
            path: path.into(),
            message: message.to_string(),
        });
    }
}

fn validate(spec: ScenarioSpec, base_dir: &Path) -> Result<Scenario, ScenarioError> {
    let mut issues = Issues(Vec::new());

    if let Err(e) = validate_numerologies(&spec.numerologies) {
        issues.push("numerologies", e);
    }
    if spec.numerologies.is_empty() {
        issues.push("numerologies", "at least one numerology is required");
    }
    let grid = match build_grid(&spec.grid) {
        Ok(g) => Some(g),
        Err(e) => {
            issues.push("grid", e);
            None
        }
    };
    let tiling = grid.as_ref().and_then(|g| {
        if spec.tiles.is_empty() {
            spec.numerologies.first().map(|n| Tiling::whole(g, n.id))
        } else {
            for (i, t) in spec.tiles.iter().enumerate() {
                if !spec.numerologies.iter().any(|n| n.id == t.numerology) {
                    issues.push(
                        format!("tiles[{i}].numerology"),
                        format!("unknown numerology {}", t.numerology),
                    );
                }
            }
            carve_tiles(g, &spec.tiles).map_err(|e| issues.push("tiles", e)).ok()
        }
    });

    let topology = match (&spec.lattice, spec.nodes.is_empty()) {
        (Some(l), true) => Some(Topology::lattice(l.cols.max(1), l.rows.max(1), l.spacing_m)),
        (Some(_), false) => {
            issues.push("lattice", "give either nodes or a lattice, not both");
            None
        }
        (None, _) => Topology::new(spec.nodes.clone())
            .map_err(|e| issues.push("nodes", e))
            .ok(),
    };
    let transport = Transport::new(spec.transport.iter().cloned());
    if let Some(topo) = &topology {
        for (i, l) in spec.transport.iter().enumerate() {
            for n in [l.a, l.b] {
                if !topo.contains(n) {
                    issues.push(format!("transport[{i}]"), format!("unknown {n}"));
                }
            }
            if !(l.latency_ms >= 0.0 && l.capacity_bps >= 0.0) {
                issues.push(format!("transport[{i}]"), "latency and capacity must be nonnegative");
            }
        }
    }

    let tenants: BTreeSet<TenantId> = spec.tenants.iter().map(|t| t.id).collect();
    if tenants.len() != spec.tenants.len() {
        issues.push("tenants", "duplicate tenant id");
    }
    let mut blueprints = BTreeMap::new();
    for (k, (name, bp)) in spec.blueprints.iter().enumerate() {
        let path = format!("blueprints.{name}");
        if !tenants.is_empty() && !tenants.contains(&bp.tenant) {
            issues.push(format!("{path}.tenant"), format!("unknown {}", bp.tenant));
        }
        if let Err(e) = bp.sla.validate() {
            issues.push(format!("{path}.sla"), e);
        }
        if let Err(e) = bp.scheduler.validate() {
            issues.push(format!("{path}.scheduler"), e);
        }
        let sb = SliceBlueprint {
            id: SliceId(k as u32),
            tenant: bp.tenant,
            sharing_group: bp.sharing_group,
            ran_option: bp.ran_option,
            sla: bp.sla.clone(),
            nf_chain: bp.nf_chain.clone().unwrap_or_else(|| NfTag::ALL.to_vec()),
            numerology: bp.numerology,
            slice_aware_ue: bp.slice_aware_ue,
        };
        match validate_blueprint(sb, &spec.numerologies) {
            Ok(sb) => {
                blueprints.insert(
                    name.clone(),
                    Blueprint {
                        name: name.clone(),
                        spec: sb,
                        scheduler: bp.scheduler.clone(),
                        traffic: bp.traffic.clone(),
                        request_ue: bp.request_ue.clone(),
                    },
                );
            }
            Err(e) => issues.push(path, e),
        }
    }

    let mut slice_ids = BTreeSet::new();
    let mut ue_ids = BTreeSet::new();
    let mut slice_numerology = BTreeMap::new();
    for (i, s) in spec.slices.iter().enumerate() {
        let path = format!("slices[{i}]");
        if !slice_ids.insert(s.id) {
            issues.push(format!("{path}.id"), format!("duplicate {}", s.id));
        }
        match spec.blueprints.get(&s.blueprint) {
            Some(bp) => {
                slice_numerology.insert(s.id, bp.numerology);
            }
            None => issues.push(
                format!("{path}.blueprint"),
                format!("unknown blueprint {:?}", s.blueprint),
            ),
        }
        for (j, u) in s.ues.iter().enumerate() {
            if !ue_ids.insert(u.id) {
                issues.push(format!("{path}.ues[{j}].id"), format!("duplicate {}", u.id));
            }
            if u.speed_mps < 0.0 {
                issues.push(format!("{path}.ues[{j}].speed_mps"), "speed must be nonnegative");
            }
            if let Some(g) = u.gate {
                if g.period_windows > 0 && g.on_windows > g.period_windows {
                    issues.push(format!("{path}.ues[{j}].gate"), "on_windows exceeds period_windows");
                }
            }
        }
    }

    for (i, k) in spec.sdmx.slices.iter().enumerate() {
        let path = format!("sdmx.slices[{i}]");
        if !slice_ids.contains(&k.slice) {
            issues.push(format!("{path}.slice"), format!("unknown {}", k.slice));
        }
        for (what, v) in [("share", k.share), ("weight", k.weight)] {
            if v.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                issues.push(format!("{path}.{what}"), "must be positive");
            }
        }
    }
    if let Some(t) = &tiling {
        let total_floor: u64 = spec.sdmx.slices.iter().filter_map(|k| k.floor).map(u64::from).sum();
        if total_floor > u64::from(t.grid().cell_count()) {
            issues.push(
                "sdmx.slices",
                format!("floors sum to {total_floor}, above the grid's cells"),
            );
        }
    }
    let mut reserved: BTreeMap<Cell, SliceId> = BTreeMap::new();
    for (i, r) in spec.sdmx.reservations.iter().enumerate() {
        let path = format!("sdmx.reservations[{i}]");
        if !slice_ids.contains(&r.slice) {
            issues.push(format!("{path}.slice"), format!("unknown {}", r.slice));
        }
        if r.period_windows == 0 {
            issues.push(format!("{path}.period_windows"), "must be positive");
        }
        for c in &r.cells {
            if let Some(owner) = reserved.insert(*c, r.slice) {
                issues.push(format!("{path}.cells"), format!("{c} already reserved by {owner}"));
            }
            if let (Some(t), Some(n)) = (&tiling, slice_numerology.get(&r.slice)) {
                if !t.grid().contains(*c) || t.numerology_of(*c) != *n {
                    issues.push(
                        format!("{path}.cells"),
                        format!("{c} is outside the slice's numerology tiles"),
                    );
                }
            }
        }
    }
    for (i, e) in spec.sdmx.exclusions.iter().enumerate() {
        if !slice_ids.contains(&e.slice) {
            issues.push(format!("sdmx.exclusions[{i}].slice"), format!("unknown {}", e.slice));
        }
    }
    if let Err(e) = spec.admission.validate() {
        issues.push("admission", e);
    }

    let mut trace = None;
    if let Some(file) = &spec.requests.trace {
        let path = base_dir.join(file);
        match std::fs::File::open(&path)
            .map_err(|e| e.to_string())
            .and_then(|f| read_trace(f).map_err(|e| e.to_string()))
        {
            Ok(t) => trace = Some(t),
            Err(e) => issues.push("requests.trace", format!("{}: {e}", path.display())),
        }
        if !spec.requests.classes.is_empty() {
            issues.push("requests", "give either a trace or classes, not both");
        }
    }
    let classes = spec
        .requests
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("requests.classes[{i}]"), c.blueprint.clone(), c.class_id));
    let traced = trace
        .iter()
        .flatten()
        .enumerate()
        .map(|(i, r)| (format!("requests.trace[{i}]"), r.blueprint.clone(), r.class_id));
    for (path, bp, class) in classes.chain(traced) {
        match blueprints.get(&bp) {
            None => issues.push(format!("{path}.blueprint"), format!("unknown blueprint {bp:?}")),
            Some(b) if b.request_ue.is_none() => issues.push(
                format!("{path}.blueprint"),
                format!("blueprint {bp:?} has no request_ue"),
            ),
            _ => {}
        }
        if let AdmissionPolicy::Threshold { theta } = &spec.admission {
            if usize::from(class) >= theta.len() {
                issues.push(format!("{path}.class_id"), format!("no threshold for class {class}"));
            }
        }
    }
    for (i, c) in spec.requests.classes.iter().enumerate() {
        let path = format!("requests.classes[{i}]");
        if c.demand_cells[0] == 0 || c.demand_cells[0] > c.demand_cells[1] {
            issues.push(format!("{path}.demand_cells"), "need 1 <= low <= high");
        }
        if let Some(t) = &tiling {
            if c.demand_cells[1] > t.grid().cell_count() {
                issues.push(format!("{path}.demand_cells"), "demand exceeds the grid");
            }
        }
        if c.duration_windows[0] == 0 || c.duration_windows[0] > c.duration_windows[1] {
            issues.push(format!("{path}.duration_windows"), "need 1 <= low <= high");
        }
        if !(c.rate_per_window >= 0.0 && c.price_per_window >= 0.0 && c.penalty_per_violation >= 0.0) {
            issues.push(path, "rate, price and penalty must be nonnegative");
        }
    }
    if let (Some(tr), Some(t)) = (&trace, &tiling) {
        let mut ids = BTreeSet::new();
        for (i, r) in tr.iter().enumerate() {
            if let Err(e) = r.validate(t.grid().cell_count()) {
                issues.push(format!("requests.trace[{i}]"), e);
            }
            if !ids.insert(r.id) {
                issues.push(
                    format!("requests.trace[{i}].id"),
                    format!("duplicate request id {}", r.id),
                );
            }
        }
    }

    let mut mc = BTreeMap::new();
    for (i, m) in spec.multiconn.iter().enumerate() {
        let path = format!("multiconn[{i}]");
        if !ue_ids.contains(&m.ue) {
            issues.push(format!("{path}.ue"), format!("unknown {}", m.ue));
        }
        if mc.contains_key(&m.ue) {
            issues.push(format!("{path}.ue"), format!("{} configured twice", m.ue));
        }
        if !m.leg_per.is_empty() && m.leg_per.len() != m.legs.len() {
            issues.push(format!("{path}.leg_per"), "one PER per leg");
        }
        if m.leg_per.iter().any(|p| !(0.0..=1.0).contains(p)) {
            issues.push(format!("{path}.leg_per"), "PER must lie in [0, 1]");
        }
        let cfg = McConfig {
            ue: m.ue,
            legs: m.legs.clone(),
            anchor: m.anchor,
            mode: m.mode,
        };
        if let Some(topo) = &topology {
            match validate_anchor(&cfg, topo, &transport, &spec.multiconn_limits) {
                Ok(c) => {
                    mc.insert(m.ue, c);
                }
                Err(e) => issues.push(path, e),
            }
        }
    }
    if let (Some(u), Some(topo)) = (&spec.uca, &topology) {
        if u.k == 0 || u.k > topo.len() {
            issues.push("uca.k", format!("must be in 1..={}", topo.len()));
        }
    }

    match (issues.0.is_empty(), tiling, topology) {
        (true, Some(tiling), Some(topology)) => Ok(Scenario {
            spec,
            tiling,
            topology,
            transport,
            blueprints,
            trace,
            mc,
        }),
        _ => Err(ScenarioError::Invalid(issues.0)),
    }
}

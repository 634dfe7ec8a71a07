//! Coordinator-level mask computation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::SchedError;
use crate::grid::{Cell, CellQuality, ResourceMask, Tiling};
use crate::ids::{NodeId, SliceId, UeId};

/// How free cells are shared between slices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "objective", rename_all = "kebab-case")]
pub enum SdmxObjective {
    /// Fixed contiguous shares regardless of demand. With no shares given,
    /// every slice gets an equal share.
    StaticSplit {
        #[serde(default)]
        shares: BTreeMap<SliceId, f64>,
    },
    /// Weighted apportionment among slices with backlog. Missing weights
    /// count as 1.
    WeightedFair {
        #[serde(default)]
        weights: BTreeMap<SliceId, f64>,
    },
    /// Each cell to the slice whose best UE sees the highest efficiency.
    MaxSpectralEfficiency,
    /// Guaranteed cell counts first, weighted fair on the rest.
    FairnessWithFloor {
        #[serde(default)]
        floors: BTreeMap<SliceId, u32>,
        #[serde(default)]
        weights: BTreeMap<SliceId, f64>,
    },
}

impl SdmxObjective {
    pub fn name(&self) -> &'static str {
        match self {
            SdmxObjective::StaticSplit { .. } => "static-split",
            SdmxObjective::WeightedFair { .. } => "weighted-fair",
            SdmxObjective::MaxSpectralEfficiency => "max-se",
            SdmxObjective::FairnessWithFloor { .. } => "fairness-with-floor",
        }
    }
}

/// Semi-persistent grant of fixed cells, active every `period_windows`-th
/// window starting at window 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reservation {
    pub slice: SliceId,
    pub cells: BTreeSet<Cell>,
    pub period_windows: u64,
}

impl Reservation {
    pub fn active_in(&self, window: u64) -> bool {
        window.is_multiple_of(self.period_windows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdmxPolicy {
    #[serde(flatten)]
    pub objective: SdmxObjective,
    #[serde(default)]
    pub reservations: Vec<Reservation>,
    /// Cells a slice may never receive (static interference constraint).
    #[serde(default)]
    pub exclusions: BTreeMap<SliceId, BTreeSet<Cell>>,
}

impl SdmxPolicy {
    pub fn new(objective: SdmxObjective) -> Self {
        Self {
            objective,
            reservations: Vec::new(),
            exclusions: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        let positive =
            |m: &BTreeMap<SliceId, f64>, what: &str| match m.iter().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
                Some((s, w)) => Err(SchedError::InvalidPolicy(format!(
                    "{what} of {s} must be positive, got {w}"
                ))),
                None => Ok(()),
            };
        match &self.objective {
            SdmxObjective::StaticSplit { shares } => positive(shares, "share")?,
            SdmxObjective::WeightedFair { weights } => positive(weights, "weight")?,
            SdmxObjective::FairnessWithFloor { weights, .. } => positive(weights, "weight")?,
            SdmxObjective::MaxSpectralEfficiency => {}
        }
        let mut owner: BTreeMap<Cell, SliceId> = BTreeMap::new();
        for r in &self.reservations {
            if r.period_windows == 0 {
                return Err(SchedError::InvalidPolicy(format!(
                    "reservation of {} has period 0",
                    r.slice
                )));
            }
            for c in &r.cells {
                if let Some(prev) = owner.insert(*c, r.slice) {
                    return Err(SchedError::ReservationCollision { cell: *c, owner: prev });
                }
            }
        }
        Ok(())
    }
}

/// Records a reservation after checking it collides with none already held.
pub fn reserve_semi_persistent(
    mut policy: SdmxPolicy,
    slice: SliceId,
    cells: impl IntoIterator<Item = Cell>,
    period_windows: u64,
) -> Result<SdmxPolicy, SchedError> {
    if period_windows == 0 {
        return Err(SchedError::InvalidPolicy("reservation period must be positive".into()));
    }
    let cells: BTreeSet<Cell> = cells.into_iter().collect();
    for r in &policy.reservations {
        if let Some(c) = r.cells.intersection(&cells).next() {
            return Err(SchedError::ReservationCollision {
                cell: *c,
                owner: r.slice,
            });
        }
    }
    policy.reservations.push(Reservation {
        slice,
        cells,
        period_windows,
    });
    Ok(policy)
}

/// Largest-remainder apportionment of `total` items by `weights`. Leftover
/// items go to the largest fractional parts, ties to the earlier entry.
/// Returns all zeros when the weights sum to zero.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// What the coordinator knows about one active slice at window start.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceDemand {
    pub slice: SliceId,
    pub numerology: u8,
    /// Backlog at window start; arrivals during the window wait.
    pub backlog_bits: u64,
    /// The slice's UEs and the nodes serving each.
    pub ues: Vec<(UeId, Vec<NodeId>)>,
}

impl SliceDemand {
    fn best_se<Q: CellQuality + ?Sized>(&self, quality: &Q, cell: Cell) -> f64 {
        self.ues
            .iter()
            .flat_map(|(ue, nodes)| {
                nodes
                    .iter()
                    .filter_map(move |n| quality.spectral_efficiency(*ue, *n, cell))
            })
            .fold(0.0, f64::max)
    }
}

struct Group<'a, Q: ?Sized> {
    slices: Vec<&'a SliceDemand>,
    quality: &'a Q,
    exclusions: &'a BTreeMap<SliceId, BTreeSet<Cell>>,
}

impl<Q: CellQuality + ?Sized> Group<'_, Q> {
    fn eligible(&self, slice: SliceId, cell: Cell) -> bool {
        self.exclusions.get(&slice).is_none_or(|x| !x.contains(&cell))
    }

    /// Round-robin greedy picks: in each round every slice with quota left
    /// takes its best remaining eligible cell (highest best-UE efficiency,
    /// then lowest cell). Returns the cells taken per slice position.
    fn greedy_round_robin(&self, free: &mut BTreeSet<Cell>, members: &[usize], quota: &[usize]) -> Vec<Vec<Cell>> {
        let prefs: Vec<Vec<Cell>> = members
            .iter()
            .map(|&m| {
                let s = self.slices[m];
                let mut cells: Vec<(f64, Cell)> = free
                    .iter()
                    .filter(|c| self.eligible(s.slice, **c))
                    .map(|c| (s.best_se(self.quality, *c), *c))
                    .collect();
                cells.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                cells.into_iter().map(|(_, c)| c).collect()
            })
            .collect();
        let mut cursor = vec![0usize; members.len()];
        let mut taken: Vec<Vec<Cell>> = vec![Vec::new(); members.len()];
        loop {
            let mut progress = false;
            for i in 0..members.len() {
                if taken[i].len() >= quota[i] {
                    continue;
                }
                while let Some(c) = prefs[i].get(cursor[i]) {
                    cursor[i] += 1;
                    if free.remove(c) {
                        taken[i].push(*c);
                        progress = true;
                        break;
                    }
                }
            }
            if !progress {
                break;
            }
        }
        taken
    }

    /// Each cell to the eligible member with the best efficiency there.
    fn best_per_cell(&self, free: &mut BTreeSet<Cell>, members: &[usize]) -> Vec<(usize, Cell)> {
        let mut out = Vec::new();
        let cells: Vec<Cell> = free.iter().copied().collect();
        for cell in cells {
            let mut best: Option<(f64, usize)> = None;
            for &m in members {
                let s = self.slices[m];
                if !self.eligible(s.slice, cell) {
                    continue;
                }
                let se = s.best_se(self.quality, cell);
                if best.is_none_or(|(b, _)| se > b) {
                    best = Some((se, m));
                }
            }
            if let Some((_, m)) = best {
                free.remove(&cell);
                out.push((m, cell));
            }
        }
        out
    }

    fn weighted_fair(
        &self,
        free: &mut BTreeSet<Cell>,
        members: &[usize],
        weights: &BTreeMap<SliceId, f64>,
    ) -> Vec<(usize, Cell)> {
        let w: Vec<f64> = members
            .iter()
            .map(|&m| weights.get(&self.slices[m].slice).copied().unwrap_or(1.0))
            .collect();
        let quota = apportion(free.len(), &w);
        let mut out: Vec<(usize, Cell)> = self
            .greedy_round_robin(free, members, &quota)
            .into_iter()
            .enumerate()
            .flat_map(|(i, cells)| cells.into_iter().map(move |c| (members[i], c)))
            .collect();
        // cells left over only when exclusions blocked a quota
        out.extend(self.best_per_cell(free, members));
        out
    }
}

/// Computes every slice's mask for `window_index`.
///
/// Active reservations are granted first. The remaining cells of each
/// numerology are then shared among the slices of that numerology according
/// to the objective. Cells may stay unassigned when no slice has backlog.
pub fn compute_masks<Q: CellQuality + ?Sized>(
    tiling: &Tiling,
    slices: &[SliceDemand],
    quality: &Q,
    policy: &SdmxPolicy,
    window_index: u64,
) -> Result<BTreeMap<SliceId, ResourceMask>, SchedError> {
    policy.validate()?;
    let grid = tiling.grid();
    let mut ordered: Vec<&SliceDemand> = slices.iter().collect();
    ordered.sort_by_key(|s| s.slice);
    let mut masks: BTreeMap<SliceId, ResourceMask> = ordered
        .iter()
        .map(|s| (s.slice, ResourceMask::new(s.slice, window_index)))
        .collect();

    let mut taken: BTreeSet<Cell> = BTreeSet::new();
    for r in &policy.reservations {
        let owner = ordered
            .iter()
            .find(|s| s.slice == r.slice)
            .ok_or(SchedError::UnknownReservationSlice(r.slice))?;
        for &cell in &r.cells {
            if !grid.contains(cell) || tiling.numerology_of(cell) != owner.numerology {
                return Err(SchedError::ReservationOutsideTiles { slice: r.slice, cell });
            }
        }
        if r.active_in(window_index) {
            taken.extend(r.cells.iter().copied());
            masks.get_mut(&r.slice).unwrap().cells.extend(r.cells.iter().copied());
        }
    }

    let numerologies: BTreeSet<u8> = ordered.iter().map(|s| s.numerology).collect();
    for numerology in numerologies {
        let group = Group {
            slices: ordered.iter().copied().filter(|s| s.numerology == numerology).collect(),
            quality,
            exclusions: &policy.exclusions,
        };
        let mut free: BTreeSet<Cell> = tiling
            .cells_with_numerology(numerology)
            .into_iter()
            .filter(|c| !taken.contains(c))
            .collect();
        let all: Vec<usize> = (0..group.slices.len()).collect();
        let demanding: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&i| group.slices[i].backlog_bits > 0)
            .collect();

        let assigned: Vec<(usize, Cell)> = match &policy.objective {
            SdmxObjective::StaticSplit { shares } => {
                let w: Vec<f64> = group
                    .slices
                    .iter()
                    .map(|s| {
                        if shares.is_empty() {
                            1.0
                        } else {
                            shares.get(&s.slice).copied().unwrap_or(0.0)
                        }
                    })
                    .collect();
                let counts = apportion(free.len(), &w);
                // contiguous runs in frequency-major order
                let mut band: Vec<Cell> = free.iter().copied().collect();
                band.sort_by_key(|c| (c.rb, c.slot));
                let mut out = Vec::new();
                for (i, &count) in counts.iter().enumerate() {
                    let s = group.slices[i].slice;
                    let mut got = 0;
                    band.retain(|c| {
                        if got < count && group.eligible(s, *c) {
                            got += 1;
                            out.push((i, *c));
                            false
                        } else {
                            true
                        }
                    });
                }
                out
            }
            SdmxObjective::WeightedFair { weights } => group.weighted_fair(&mut free, &demanding, weights),
            SdmxObjective::MaxSpectralEfficiency => group.best_per_cell(&mut free, &demanding),
            SdmxObjective::FairnessWithFloor { floors, weights } => {
                let need: Vec<usize> = demanding
                    .iter()
                    .map(|&i| {
                        let s = group.slices[i].slice;
                        let floor = floors.get(&s).copied().unwrap_or(0) as usize;
                        floor.saturating_sub(masks[&s].len())
                    })
                    .collect();
                let needed: usize = need.iter().sum();
                if needed > free.len() {
                    return Err(SchedError::FloorsExceedCapacity {
                        needed,
                        available: free.len(),
                    });
                }
                let floor_cells = group.greedy_round_robin(&mut free, &demanding, &need);
                if floor_cells.iter().zip(&need).any(|(got, n)| got.len() < *n) {
                    return Err(SchedError::FloorsExceedCapacity {
                        needed,
                        available: floor_cells.iter().map(Vec::len).sum(),
                    });
                }
                let mut out: Vec<(usize, Cell)> = floor_cells
                    .into_iter()
                    .enumerate()
                    .flat_map(|(k, cells)| {
                        let m = demanding[k];
                        cells.into_iter().map(move |c| (m, c))
                    })
                    .collect();
                out.extend(group.weighted_fair(&mut free, &demanding, weights));
                out
            }
        };
        for (i, cell) in assigned {
            masks.get_mut(&group.slices[i].slice).unwrap().cells.insert(cell);
        }
    }
    Ok(masks)
}

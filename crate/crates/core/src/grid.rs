//! The shared time-frequency resource grid.
//!
//! One scheduling window is a grid of `slots_per_window × n_rb` cells. The
//! grid is carved into rectangular tiles (each carrying one numerology) and
//! the coordinator hands every slice a [`ResourceMask`]: the set of whole
//! cells it may use in that window. Windows repeat indefinitely.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{NodeId, SliceId, UeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimension `{0}` must be at least 1")]
    ZeroDimension(&'static str),
    #[error("window length must be a positive finite number of milliseconds, got {0}")]
    BadWindow(f64),
    #[error("numerology {id}: {reason}")]
    BadNumerology { id: u8, reason: String },
    #[error("numerology id {0} declared twice with different parameters")]
    ConflictingNumerology(u8),
    #[error("tile {0} has an empty range")]
    EmptyTile(u32),
    #[error("tile {0} lies outside the grid")]
    OutOfBounds(u32),
    #[error("tile id {0} used twice")]
    DuplicateTile(u32),
    #[error("tiles {first} and {second} overlap at {cell}")]
    Overlap { cell: Cell, first: u32, second: u32 },
    #[error("cell {0} is not covered by any tile")]
    Gap(Cell),
    #[error("no channel entry for {ue} at {cell}")]
    UndefinedChannel { ue: UeId, cell: Cell },
    #[error("masks span different windows ({0} and {1})")]
    MixedWindows(u64, u64),
}

/// A radio frame parameterisation. Capacity accounting uses
/// `symbols_per_cell`; timing follows the grid slot length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Numerology {
    pub id: u8,
    pub cell_duration_ms: f64,
    pub cell_bandwidth_rb: u32,
    pub symbols_per_cell: u32,
}

impl Numerology {
    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |reason: &str| GridError::BadNumerology {
            id: self.id,
            reason: reason.to_owned(),
        };
        if !(self.cell_duration_ms > 0.0 && self.cell_duration_ms.is_finite()) {
            return Err(bad("cell duration must be positive"));
        }
        if self.cell_bandwidth_rb == 0 {
            return Err(bad("cell bandwidth must be at least one RB"));
        }
        if self.symbols_per_cell == 0 {
            return Err(bad("a cell must carry at least one symbol"));
        }
        Ok(())
    }
}

/// Checks every numerology and that equal ids describe identical parameters.
pub fn validate_numerologies(set: &[Numerology]) -> Result<(), GridError> {
    for (i, n) in set.iter().enumerate() {
        n.validate()?;
        if set[..i].iter().any(|m| m.id == n.id && m != n) {
            return Err(GridError::ConflictingNumerology(n.id));
        }
    }
    Ok(())
}

/// One grid cell: a resource block over one slot. Ordered `(slot, rb)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Cell {
    pub slot: u32,
    pub rb: u32,
}

impl Cell {
    pub const fn new(slot: u32, rb: u32) -> Self {
        Self { slot, rb }
    }
}

impl From<[u32; 2]> for Cell {
    fn from([slot, rb]: [u32; 2]) -> Self {
        Self { slot, rb }
    }
}

impl From<Cell> for [u32; 2] {
    fn from(c: Cell) -> Self {
        [c.slot, c.rb]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(slot {}, rb {})", self.slot, self.rb)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_rb: u32,
    pub slots_per_window: u32,
    #[serde(default = "default_window_ms")]
    pub window_ms: f64,
}

fn default_window_ms() -> f64 {
    10.0
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_rb: 50,
            slots_per_window: 10,
            window_ms: default_window_ms(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResourceGrid {
    n_rb: u32,
    slots_per_window: u32,
    window_ms: f64,
}

pub fn build_grid(config: &GridConfig) -> Result<ResourceGrid, GridError> {
    if config.n_rb == 0 {
        return Err(GridError::ZeroDimension("n_rb"));
    }
    if config.slots_per_window == 0 {
        return Err(GridError::ZeroDimension("slots_per_window"));
    }
    if !(config.window_ms > 0.0 && config.window_ms.is_finite()) {
        return Err(GridError::BadWindow(config.window_ms));
    }
    Ok(ResourceGrid {
        n_rb: config.n_rb,
        slots_per_window: config.slots_per_window,
        window_ms: config.window_ms,
    })
}

impl ResourceGrid {
    pub fn n_rb(&self) -> u32 {
        self.n_rb
    }

    pub fn slots_per_window(&self) -> u32 {
        self.slots_per_window
    }

    pub fn window_ms(&self) -> f64 {
        self.window_ms
    }

    pub fn slot_ms(&self) -> f64 {
        self.window_ms / f64::from(self.slots_per_window)
    }

    pub fn cell_count(&self) -> u32 {
        self.n_rb * self.slots_per_window
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.slot < self.slots_per_window && cell.rb < self.n_rb
    }

    /// Dense index of a cell, `slot * n_rb + rb`.
    pub fn index(&self, cell: Cell) -> usize {
        (cell.slot * self.n_rb + cell.rb) as usize
    }

    /// All cells in `(slot, rb)` order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.slots_per_window).flat_map(move |slot| (0..self.n_rb).map(move |rb| Cell { slot, rb }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileSpec {
    pub id: u32,
    pub rb_range: Range<u32>,
    pub slot_range: Range<u32>,
    pub numerology: u8,
}

impl TileSpec {
    pub fn contains(&self, cell: Cell) -> bool {
        self.rb_range.contains(&cell.rb) && self.slot_range.contains(&cell.slot)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.slot_range
            .clone()
            .flat_map(move |slot| self.rb_range.clone().map(move |rb| Cell { slot, rb }))
    }
}

pub type Tile = TileSpec;

/// An exact partition of the grid into tiles.
#[derive(Clone, Debug, PartialEq)]
pub struct Tiling {
    grid: ResourceGrid,
    tiles: Vec<Tile>,
    // tile position in `tiles` for each dense cell index
    owner: Vec<usize>,
}

/// Validates `specs` as an exact cover of `grid`.
pub fn carve_tiles(grid: &ResourceGrid, specs: &[TileSpec]) -> Result<Tiling, GridError> {
    let mut owner: Vec<Option<usize>> = vec![None; grid.cell_count() as usize];
    for (pos, spec) in specs.iter().enumerate() {
        if spec.rb_range.is_empty() || spec.slot_range.is_empty() {
            return Err(GridError::EmptyTile(spec.id));
        }
        if spec.rb_range.end > grid.n_rb || spec.slot_range.end > grid.slots_per_window {
            return Err(GridError::OutOfBounds(spec.id));
        }
        if specs[..pos].iter().any(|t| t.id == spec.id) {
            return Err(GridError::DuplicateTile(spec.id));
        }
        for cell in spec.cells() {
            let slot = &mut owner[grid.index(cell)];
            if let Some(prev) = *slot {
                return Err(GridError::Overlap {
                    cell,
                    first: specs[prev].id,
                    second: spec.id,
                });
            }
            *slot = Some(pos);
        }
    }
    let owner = grid
        .cells()
        .map(|cell| owner[grid.index(cell)].ok_or(GridError::Gap(cell)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Tiling {
        grid: *grid,
        tiles: specs.to_vec(),
        owner,
    })
}

impl Tiling {
    /// A single tile covering the grid with one numerology.
    pub fn whole(grid: &ResourceGrid, numerology: u8) -> Self {
        let spec = TileSpec {
            id: 0,
            rb_range: 0..grid.n_rb,
            slot_range: 0..grid.slots_per_window,
            numerology,
        };
        carve_tiles(grid, &[spec]).expect("whole-grid tile is an exact cover")
    }

    pub fn grid(&self) -> &ResourceGrid {
        &self.grid
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn tile_of(&self, cell: Cell) -> &Tile {
        &self.tiles[self.owner[self.grid.index(cell)]]
    }

    pub fn numerology_of(&self, cell: Cell) -> u8 {
        self.tile_of(cell).numerology
    }

    /// Cells whose tile carries `numerology`, in `(slot, rb)` order.
    pub fn cells_with_numerology(&self, numerology: u8) -> Vec<Cell> {
        self.grid
            .cells()
            .filter(|c| self.numerology_of(*c) == numerology)
            .collect()
    }
}

/// Cells granted to one slice for one window.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ResourceMask {
    pub slice: SliceId,
    pub window_index: u64,
    pub cells: BTreeSet<Cell>,
}

impl ResourceMask {
    pub fn new(slice: SliceId, window_index: u64) -> Self {
        Self {
            slice,
            window_index,
            cells: BTreeSet::new(),
        }
    }

    pub fn with_cells(slice: SliceId, window_index: u64, cells: impl IntoIterator<Item = Cell>) -> Self {
        Self {
            slice,
            window_index,
            cells: cells.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.cells.contains(&cell)
    }
}

/// Link quality lookup: spectral efficiency in bits/symbol for a UE served
/// by `node` on `cell`, or `None` when no channel entry exists.
pub trait CellQuality {
    fn spectral_efficiency(&self, ue: UeId, node: NodeId, cell: Cell) -> Option<f64>;
}

/// Node-agnostic spectral efficiency table keyed by `(ue, cell)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeTable {
    entries: std::collections::BTreeMap<(UeId, Cell), f64>,
}

impl SeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ue: UeId, cell: Cell, se: f64) {
        self.entries.insert((ue, cell), se);
    }

    pub fn get(&self, ue: UeId, cell: Cell) -> Option<f64> {
        self.entries.get(&(ue, cell)).copied()
    }
}

impl CellQuality for SeTable {
    fn spectral_efficiency(&self, ue: UeId, _node: NodeId, cell: Cell) -> Option<f64> {
        self.get(ue, cell)
    }
}

/// Bits carried by one cell: the fractional part of `se × symbols` is lost.
pub fn cell_bits(se: f64, symbols_per_cell: u32) -> u64 {
    (se * f64::from(symbols_per_cell)).floor().max(0.0) as u64
}

/// Σ over mask cells of `se(ue, cell) × symbols_per_cell`.
pub fn mask_capacity<Q: CellQuality + ?Sized>(
    mask: &ResourceMask,
    quality: &Q,
    ue: UeId,
    node: NodeId,
    symbols_per_cell: u32,
) -> Result<f64, GridError> {
    mask.cells.iter().try_fold(0.0, |acc, &cell| {
        let se = quality
            .spectral_efficiency(ue, node, cell)
            .ok_or(GridError::UndefinedChannel { ue, cell })?;
        Ok(acc + se * f64::from(symbols_per_cell))
    })
}

/// True iff the masks are pairwise disjoint. All masks must share a window.
pub fn masks_disjoint(masks: &[ResourceMask]) -> Result<bool, GridError> {
    if let Some(first) = masks.first() {
        if let Some(other) = masks.iter().find(|m| m.window_index != first.window_index) {
            return Err(GridError::MixedWindows(first.window_index, other.window_index));
        }
    }
    let mut seen = BTreeSet::new();
    Ok(masks.iter().flat_map(|m| m.cells.iter()).all(|c| seen.insert(*c)))
}

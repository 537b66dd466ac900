//! Voxel-grid genomes: validity, mutation and the digit-grid text format.
//!
//! A genome is a `width × height` grid stored row-major with row 0 at the
//! top, matching the order of the text format:
//!
//! ```text
//! 3 2
//! 130
//! 424
//! ```

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VoxelType {
    Empty = 0,
    Rigid = 1,
    Soft = 2,
    HorizontalActuator = 3,
    VerticalActuator = 4,
}

impl VoxelType {
    pub const ALL: [VoxelType; 5] = [
        VoxelType::Empty,
        VoxelType::Rigid,
        VoxelType::Soft,
        VoxelType::HorizontalActuator,
        VoxelType::VerticalActuator,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_actuator(self) -> bool {
        matches!(
            self,
            VoxelType::HorizontalActuator | VoxelType::VerticalActuator
        )
    }

    pub fn is_solid(self) -> bool {
        self != VoxelType::Empty
    }
}

/// Cell position in the genome grid; `row` counts down from the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub col: usize,
    pub row: usize,
}

/// First violated structural invariant of a genome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invalid {
    DimensionMismatch,
    Empty,
    Disconnected,
    NoActuator,
}

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Invalid::DimensionMismatch => "dimension mismatch",
            Invalid::Empty => "empty",
            Invalid::Disconnected => "disconnected",
            Invalid::NoActuator => "no actuator",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MorphGenome {
    width: usize,
    height: usize,
    cells: Vec<VoxelType>,
}

impl MorphGenome {
    /// Builds a genome without validating it; see [`MorphGenome::validate`].
    pub fn new(width: usize, height: usize, cells: Vec<VoxelType>) -> Self {
        Self {
            width,
            height,
            cells,
        }
    }

    /// Builds a genome and rejects it unless every invariant holds.
    pub fn try_new(width: usize, height: usize, cells: Vec<VoxelType>) -> Result<Self> {
        let g = Self::new(width, height, cells);
        g.validate().map_err(Error::InvalidGenome)?;
        Ok(g)
    }

    /// Parses rows of digit strings, top row first.
    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let text = format!("{width} {height}\n{}", rows.join("\n"));
        text.parse()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[VoxelType] {
        &self.cells
    }

    pub fn get(&self, cell: Cell) -> VoxelType {
        self.cells[cell.row * self.width + cell.col]
    }

    pub fn set(&mut self, cell: Cell, voxel: VoxelType) {
        self.cells[cell.row * self.width + cell.col] = voxel;
    }

    /// Non-empty cells in row-major order.
    pub fn solid_cells(&self) -> impl Iterator<Item = (Cell, VoxelType)> + '_ {
        self.cells.iter().enumerate().filter_map(move |(i, &v)| {
            v.is_solid().then_some((
                Cell {
                    col: i % self.width,
                    row: i / self.width,
                },
                v,
            ))
        })
    }

    /// Actuator cells in row-major order; this is the canonical actuator indexing.
    pub fn actuators(&self) -> Vec<(Cell, VoxelType)> {
        self.solid_cells().filter(|(_, v)| v.is_actuator()).collect()
    }

    pub fn validate(&self) -> std::result::Result<(), Invalid> {
        if self.width == 0 || self.height == 0 || self.cells.len() != self.width * self.height {
            return Err(Invalid::DimensionMismatch);
        }
        let solid: Vec<usize> = (0..self.cells.len())
            .filter(|&i| self.cells[i].is_solid())
            .collect();
        let Some(&start) = solid.first() else {
            return Err(Invalid::Empty);
        };
        let mut seen = vec![false; self.cells.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut reached = 0;
        while let Some(i) = queue.pop_front() {
            reached += 1;
            let (c, r) = (i % self.width, i / self.width);
            let mut visit = |j: usize| {
                if self.cells[j].is_solid() && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < self.width {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - self.width);
            }
            if r + 1 < self.height {
                visit(i + self.width);
            }
        }
        if reached != solid.len() {
            return Err(Invalid::Disconnected);
        }
        if !self.cells.iter().any(|v| v.is_actuator()) {
            return Err(Invalid::NoActuator);
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Short hex digest of the text encoding, stable across runs.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let hash = Sha256::digest(self.to_string().as_bytes());
        hex::encode(&hash[..8])
    }

    /// Uniformly random valid genome of the given size, by rejection sampling.
    /// Falls back to a single horizontal actuator in the bottom-left cell.
    pub fn random<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> Self {
        const MAX_TRIES: usize = 10_000;
        for _ in 0..MAX_TRIES {
            let cells = (0..width * height)
                .map(|_| VoxelType::ALL[rng.gen_range(0..5)])
                .collect();
            let g = Self::new(width, height, cells);
            if g.is_valid() {
                return g;
            }
        }
        log::warn!("random genome sampling exhausted; using single actuator");
        let mut g = Self::new(width, height, vec![VoxelType::Empty; width * height]);
        g.set(
            Cell {
                col: 0,
                row: height - 1,
            },
            VoxelType::HorizontalActuator,
        );
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutationConfig {
    pub per_cell_rate: f64,
    pub max_retries: usize,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            per_cell_rate: 0.1,
            max_retries: 50,
        }
    }
}

impl MutationConfig {
    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.per_cell_rate) {
            return Err(Error::Config(format!(
                "mutation per_cell_rate {} outside [0, 1]",
                self.per_cell_rate
            )));
        }
        if self.max_retries == 0 {
            return Err(Error::Config("mutation max_retries must be positive".into()));
        }
        Ok(())
    }
}

/// Resamples each cell with probability `per_cell_rate` to a uniformly random
/// voxel type. Invalid children are redrawn up to `max_retries` times, after
/// which the parent is returned unchanged.
pub fn mutate<R: Rng + ?Sized>(parent: &MorphGenome, cfg: &MutationConfig, rng: &mut R) -> MorphGenome {
    debug_assert!(parent.is_valid(), "mutate expects a valid parent");
    for _ in 0..cfg.max_retries {
        let mut child = parent.clone();
        for cell in child.cells.iter_mut() {
            if rng.gen_bool(cfg.per_cell_rate) {
                *cell = VoxelType::ALL[rng.gen_range(0..5)];
            }
        }
        if child.is_valid() {
            return child;
        }
    }
    log::info!(
        "mutation retries exhausted after {} attempts; child copies parent {}",
        cfg.max_retries,
        parent.digest()
    );
    parent.clone()
}

impl fmt::Display for MorphGenome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.width, self.height)?;
        for row in self.cells.chunks(self.width.max(1)) {
            f.write_str("\n")?;
            for v in row {
                write!(f, "{}", v.code())?;
            }
        }
        Ok(())
    }
}

impl FromStr for MorphGenome {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::GenomeFormat(msg);
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let dims: Vec<&str> = header.split_whitespace().collect();
        let parse_dim = |s: &str| {
            s.parse::<usize>()
                .ok()
                .filter(|&d| d > 0)
                .ok_or_else(|| bad(format!("bad dimension {s:?}")))
        };
        let [w, h] = dims.as_slice() else {
            return Err(bad(format!("header must be \"W H\", got {header:?}")));
        };
        let (width, height) = (parse_dim(w)?, parse_dim(h)?);
        let mut cells = Vec::with_capacity(width * height);
        let mut rows = 0;
        for line in lines {
            rows += 1;
            if line.chars().count() != width {
                return Err(bad(format!(
                    "dimension mismatch: row {rows} has {} cells, expected {width}",
                    line.chars().count()
                )));
            }
            for ch in line.chars() {
                let code = ch
                    .to_digit(10)
                    .ok_or_else(|| bad(format!("non-digit character {ch:?}")))?;
                let v = VoxelType::from_code(code as u8)
                    .ok_or_else(|| bad(format!("invalid voxel code {code}")))?;
                cells.push(v);
            }
        }
        if rows != height {
            return Err(bad(format!(
                "dimension mismatch: {rows} rows, expected {height}"
            )));
        }
        MorphGenome::try_new(width, height, cells)
    }
}

impl Serialize for MorphGenome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MorphGenome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

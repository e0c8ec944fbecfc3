//! 3D connected-component labeling.
//!
//! Foreground voxels are grouped into runs along x. Each run is unioned with
//! the overlapping runs of the already-visited neighbour rows, then a second
//! pass assigns dense ids in scan order, so the component containing the
//! first foreground voxel (x fastest) is always id 1.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{BinaryMask, Grid};

/// Voxel neighbourhood used for adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub enum Connectivity {
    /// Faces.
    Six,
    /// Faces and edges.
    Eighteen,
    /// Faces, edges and corners.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub const ALL: [Connectivity; 3] = [
        Connectivity::Six,
        Connectivity::Eighteen,
        Connectivity::TwentySix,
    ];

    pub fn neighbours(self) -> usize {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    /// Largest number of nonzero components an offset may have.
    fn max_nonzero(self) -> usize {
        match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        }
    }

    pub fn from_neighbours(n: usize) -> Option<Self> {
        match n {
            6 => Some(Connectivity::Six),
            18 => Some(Connectivity::Eighteen),
            26 => Some(Connectivity::TwentySix),
            _ => None,
        }
    }

    /// All neighbour offsets, symmetric under negation.
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::with_capacity(self.neighbours());
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let nz = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                    if nz > 0 && nz <= self.max_nonzero() {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.neighbours())
    }
}

impl std::str::FromStr for Connectivity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<usize>()
            .ok()
            .and_then(Connectivity::from_neighbours)
            .ok_or_else(|| format!("connectivity must be 6, 18 or 26, got '{s}'"))
    }
}

impl Serialize for Connectivity {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u64(self.neighbours() as u64)
    }
}

impl<'de> Deserialize<'de> for Connectivity {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let n = u64::deserialize(deserializer)?;
        Connectivity::from_neighbours(n as usize)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid connectivity {n}")))
    }
}

/// Per-voxel component ids: 0 is background, components are `1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    grid: Grid,
    labels: Vec<u32>,
    sizes: Vec<usize>,
    connectivity: Connectivity,
}

impl LabelMap {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn component_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    /// Voxel counts indexed by `id - 1`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    #[inline]
    pub fn label(&self, idx: usize) -> u32 {
        self.labels[idx]
    }

    /// Mask of a single component.
    pub fn component_mask(&self, id: u32) -> BinaryMask {
        BinaryMask::from_bools(self.grid, self.labels.iter().map(|&l| l == id).collect())
            .expect("same grid")
    }
}

#[derive(Debug, Clone, Copy)]
struct Run {
    row: usize,
    start: usize,
    end: usize, // inclusive
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn with_capacity(n: usize) -> Self {
        Self {
            parent: Vec::with_capacity(n),
        }
    }

    fn push(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        // smaller index wins so roots stay at the earliest run
        match ra.cmp(&rb) {
            std::cmp::Ordering::Less => self.parent[rb as usize] = ra,
            std::cmp::Ordering::Greater => self.parent[ra as usize] = rb,
            std::cmp::Ordering::Equal => {}
        }
    }
}

/// Labels foreground components of `m` under `conn`.
pub fn label_components(m: &BinaryMask, conn: Connectivity) -> LabelMap {
    let grid = *m.grid();
    let [nx, ny, nz] = grid.dims;
    let data = m.data();

    // runs of each row (y, z) in scan order; row_start[r]..row_start[r+1]
    let rows = ny * nz;
    let mut runs: Vec<Run> = Vec::new();
    let mut row_start = Vec::with_capacity(rows + 1);
    for row in 0..rows {
        row_start.push(runs.len());
        let line = &data[row * nx..(row + 1) * nx];
        let mut x = 0;
        while x < nx {
            if !line[x] {
                x += 1;
                continue;
            }
            let start = x;
            while x < nx && line[x] {
                x += 1;
            }
            runs.push(Run {
                row,
                start,
                end: x - 1,
            });
        }
    }
    row_start.push(runs.len());

    // previously visited rows and the x slack allowed towards each
    let max_nz = conn.max_nonzero();
    let mut back_rows: Vec<(isize, isize, usize)> = Vec::new();
    for (dy, dz) in [(-1isize, 0isize), (-1, -1), (0, -1), (1, -1)] {
        let nonzero = (dy != 0) as usize + (dz != 0) as usize;
        if nonzero <= max_nz {
            let slack = usize::from(nonzero < max_nz);
            back_rows.push((dy, dz, slack));
        }
    }

    let mut sets = DisjointSet::with_capacity(runs.len());
    for _ in 0..runs.len() {
        sets.push();
    }

    for z in 0..nz {
        for y in 0..ny {
            let row = y + ny * z;
            let (cur_lo, cur_hi) = (row_start[row], row_start[row + 1]);
            if cur_lo == cur_hi {
                continue;
            }
            for &(dy, dz, slack) in &back_rows {
                let yy = y as isize + dy;
                let zz = z as isize + dz;
                if yy < 0 || zz < 0 || yy >= ny as isize {
                    continue;
                }
                let other = yy as usize + ny * zz as usize;
                let (mut j, other_hi) = (row_start[other], row_start[other + 1]);
                let mut i = cur_lo;
                while i < cur_hi && j < other_hi {
                    let a = runs[i];
                    let b = runs[j];
                    if b.start <= a.end + slack && a.start <= b.end + slack {
                        sets.union(i as u32, j as u32);
                    }
                    // advance whichever run ends first
                    if a.end < b.end {
                        i += 1;
                    } else {
                        j += 1;
                    }
                }
            }
        }
    }

    let mut labels = vec![0u32; grid.len()];
    let mut root_label = vec![0u32; runs.len()];
    let mut sizes: Vec<usize> = Vec::new();
    for (idx, run) in runs.iter().enumerate() {
        let root = sets.find(idx as u32) as usize;
        if root_label[root] == 0 {
            sizes.push(0);
            root_label[root] = sizes.len() as u32;
        }
        let id = root_label[root];
        sizes[id as usize - 1] += run.end - run.start + 1;
        let base = run.row * nx;
        labels[base + run.start..=base + run.end].fill(id);
    }

    LabelMap {
        grid,
        labels,
        sizes,
        connectivity: conn,
    }
}

/// `(id, voxel count)` pairs sorted by id.
pub fn component_sizes(lm: &LabelMap) -> Vec<(u32, usize)> {
    lm.sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| (i as u32 + 1, s))
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HistogramError {
    #[error("cannot build a normalized histogram from no sizes")]
    EmptyInput,
    #[error("cluster sizes must be at least 1 voxel")]
    ZeroSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Binning {
    /// One bin per integer size between the smallest and largest observed.
    #[default]
    Linear,
    /// Base-2 geometric bins `[1,2), [2,4), [4,8), ...`.
    Log2,
}

impl std::str::FromStr for Binning {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Binning::Linear),
            "log2" => Ok(Binning::Log2),
            other => Err(format!("unknown binning '{other}' (linear or log2)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive lower edge in voxels.
    pub lower: usize,
    /// Exclusive upper edge in voxels.
    pub upper: usize,
    pub count: usize,
    pub density: f64,
}

/// Normalized cluster-size distribution; densities sum to one.
pub fn size_histogram(sizes: &[usize], binning: Binning) -> Result<Vec<HistogramBin>, HistogramError> {
    if sizes.is_empty() {
        return Err(HistogramError::EmptyInput);
    }
    if sizes.contains(&0) {
        return Err(HistogramError::ZeroSize);
    }
    let max = *sizes.iter().max().expect("non-empty");
    let total = sizes.len() as f64;
    let mut bins: Vec<HistogramBin> = match binning {
        Binning::Linear => {
            let min = *sizes.iter().min().expect("non-empty");
            (min..=max)
                .map(|s| HistogramBin {
                    lower: s,
                    upper: s + 1,
                    count: 0,
                    density: 0.0,
                })
                .collect()
        }
        Binning::Log2 => {
            let n_bins = (usize::BITS - max.leading_zeros()) as usize;
            (0..n_bins)
                .map(|k| HistogramBin {
                    lower: 1 << k,
                    upper: 1 << (k + 1),
                    count: 0,
                    density: 0.0,
                })
                .collect()
        }
    };
    let first = bins[0].lower;
    for &s in sizes {
        let slot = match binning {
            Binning::Linear => s - first,
            Binning::Log2 => (usize::BITS - 1 - s.leading_zeros()) as usize,
        };
        bins[slot].count += 1;
    }
    for b in &mut bins {
        b.density = b.count as f64 / total;
    }
    Ok(bins)
}

//! One-voxel dilation, the surrounding shell of a mask, and the
//! mask-versus-shell intensity contrast.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ccl::{label_components, Connectivity};
use crate::volume::{subtract, BinaryMask, Grid, Volume3D, VolumeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MorphologyError {
    #[error(transparent)]
    Grid(#[from] VolumeError),
    #[error("mask has no foreground voxels")]
    EmptyMask,
    #[error("shell around the mask is empty")]
    EmptyShell,
}

/// Calls `f` with the linear index of every in-grid neighbour of `idx`.
#[inline]
pub(crate) fn for_each_neighbour(
    grid: &Grid,
    offsets: &[[isize; 3]],
    idx: usize,
    mut f: impl FnMut(usize),
) {
    let [nx, ny, nz] = grid.dims.map(|d| d as isize);
    let [x, y, z] = grid.coords(idx).map(|c| c as isize);
    for &[dx, dy, dz] in offsets {
        let (xx, yy, zz) = (x + dx, y + dy, z + dz);
        if xx >= 0 && yy >= 0 && zz >= 0 && xx < nx && yy < ny && zz < nz {
            f((xx + nx * (yy + ny * zz)) as usize);
        }
    }
}

/// `m` plus every `conn`-neighbour of its foreground, clipped to the grid.
pub fn dilate_once(m: &BinaryMask, conn: Connectivity) -> BinaryMask {
    let grid = *m.grid();
    let offsets = conn.offsets();
    let mut out = m.data().to_vec();
    for idx in m.foreground_indices() {
        for_each_neighbour(&grid, &offsets, idx, |n| out[n] = true);
    }
    BinaryMask::from_bools(grid, out).expect("same grid")
}

/// The ring `dilate_once(m) \ m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Shell {
    pub mask: BinaryMask,
}

pub fn shell(m: &BinaryMask, conn: Connectivity) -> Shell {
    let dilated = dilate_once(m, conn);
    Shell {
        mask: subtract(&dilated, m).expect("same grid"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContrastMode {
    /// One mean over the whole mask and one over its whole shell.
    #[default]
    Global,
    /// Each connected cluster against its own shell, averaged over clusters.
    PerCluster,
}

impl ContrastMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ContrastMode::Global => "global",
            ContrastMode::PerCluster => "per_cluster",
        }
    }
}

impl std::str::FromStr for ContrastMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(ContrastMode::Global),
            "per_cluster" | "per-cluster" => Ok(ContrastMode::PerCluster),
            other => Err(format!("unknown contrast mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastStat {
    pub mask_mean: f64,
    pub shell_mean: f64,
    pub abs_contrast: f64,
    pub mode: ContrastMode,
    pub mask_voxels: usize,
    pub shell_voxels: usize,
    /// Clusters averaged over; 1 in global mode.
    pub clusters: usize,
}

/// `|mean(image over m) - mean(image over shell(m))|`.
pub fn contrast_stat(
    image: &Volume3D,
    m: &BinaryMask,
    conn: Connectivity,
) -> Result<ContrastStat, MorphologyError> {
    image.grid().check_compatible(m.grid())?;
    if !m.has_foreground() {
        return Err(MorphologyError::EmptyMask);
    }
    let ring = shell(m, conn).mask;
    if !ring.has_foreground() {
        return Err(MorphologyError::EmptyShell);
    }
    let values = image.data();
    let mean = |mask: &BinaryMask| {
        mask.foreground_indices().map(|i| values[i]).sum::<f64>() / mask.foreground_count() as f64
    };
    let mask_mean = mean(m);
    let shell_mean = mean(&ring);
    Ok(ContrastStat {
        mask_mean,
        shell_mean,
        abs_contrast: (mask_mean - shell_mean).abs(),
        mode: ContrastMode::Global,
        mask_voxels: m.foreground_count(),
        shell_voxels: ring.foreground_count(),
        clusters: 1,
    })
}

/// Contrast of each `conn`-connected cluster against its own shell, averaged
/// with equal weight per cluster. Clusters with an empty shell are skipped.
pub fn contrast_per_cluster(
    image: &Volume3D,
    m: &BinaryMask,
    conn: Connectivity,
) -> Result<ContrastStat, MorphologyError> {
    image.grid().check_compatible(m.grid())?;
    if !m.has_foreground() {
        return Err(MorphologyError::EmptyMask);
    }
    let grid = *m.grid();
    let labels = label_components(m, conn);
    let k = labels.component_count();
    let offsets = conn.offsets();
    let values = image.data();

    // visit clusters one at a time so a shell voxel shared by two clusters
    // is counted once for each of them
    let mut by_cluster: Vec<Vec<usize>> = vec![Vec::new(); k];
    for idx in m.foreground_indices() {
        by_cluster[labels.label(idx) as usize - 1].push(idx);
    }
    let mut mask_sum = vec![0.0; k];
    let mut shell_sum = vec![0.0; k];
    let mut shell_n = vec![0usize; k];
    let mut stamp = vec![0u32; grid.len()];
    for (c, members) in by_cluster.iter().enumerate() {
        let id = c as u32 + 1;
        for &idx in members {
            mask_sum[c] += values[idx];
            for_each_neighbour(&grid, &offsets, idx, |n| {
                if labels.label(n) == 0 && stamp[n] != id {
                    stamp[n] = id;
                    shell_sum[c] += values[n];
                    shell_n[c] += 1;
                }
            });
        }
    }
    let (mut mm, mut sm, mut ac, mut used, mut shell_total) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for c in 0..k {
        if shell_n[c] == 0 {
            continue;
        }
        let a = mask_sum[c] / labels.sizes()[c] as f64;
        let b = shell_sum[c] / shell_n[c] as f64;
        mm += a;
        sm += b;
        ac += (a - b).abs();
        used += 1;
        shell_total += shell_n[c];
    }
    if used == 0 {
        return Err(MorphologyError::EmptyShell);
    }
    let n = used as f64;
    Ok(ContrastStat {
        mask_mean: mm / n,
        shell_mean: sm / n,
        abs_contrast: ac / n,
        mode: ContrastMode::PerCluster,
        mask_voxels: m.foreground_count(),
        shell_voxels: shell_total,
        clusters: used,
    })
}

pub fn contrast(
    image: &Volume3D,
    m: &BinaryMask,
    conn: Connectivity,
    mode: ContrastMode,
) -> Result<ContrastStat, MorphologyError> {
    match mode {
        ContrastMode::Global => contrast_stat(image, m, conn),
        ContrastMode::PerCluster => contrast_per_cluster(image, m, conn),
    }
}

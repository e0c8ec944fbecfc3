//! Dense 3D grids, binary masks and the mask algebra used for ROI restriction.
//!
//! All voxel data is stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`. Orientation lives in the affine and never changes
//! the memory layout.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Affine rows mapping voxel indices to scanner millimetres.
pub type Affine = [[f64; 4]; 3];

/// Tolerance used when comparing affines in strict grid checks.
pub const AFFINE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("grid mismatch: {left} vs {right}")]
    DimMismatch { left: Grid, right: Grid },
    #[error("affine mismatch between grids {left} and {right}")]
    AffineMismatch { left: Grid, right: Grid },
    #[error("data length {len} does not match grid {grid} ({expected} voxels)")]
    DataLength { grid: Grid, len: usize, expected: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Shape, voxel size and orientation shared by every volume on one grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    /// Voxel edge lengths in mm.
    pub spacing: [f64; 3],
    pub affine: Affine,
}

impl Grid {
    /// A grid whose affine is the diagonal spacing matrix.
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self, VolumeError> {
        let affine = [
            [spacing[0], 0.0, 0.0, 0.0],
            [0.0, spacing[1], 0.0, 0.0],
            [0.0, 0.0, spacing[2], 0.0],
        ];
        Self::with_affine(dims, spacing, affine)
    }

    pub fn with_affine(
        dims: [usize; 3],
        spacing: [f64; 3],
        affine: Affine,
    ) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::InvalidGrid(format!(
                "dimensions must be positive, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::InvalidGrid(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none() {
            return Err(VolumeError::InvalidGrid(format!("grid {dims:?} overflows")));
        }
        Ok(Self {
            dims,
            spacing,
            affine,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Dims-only compatibility check.
    pub fn check_compatible(&self, other: &Grid) -> Result<(), VolumeError> {
        if self.dims != other.dims {
            return Err(VolumeError::DimMismatch {
                left: *self,
                right: *other,
            });
        }
        Ok(())
    }

    /// Dims plus affine agreement within [`AFFINE_TOLERANCE`].
    pub fn check_compatible_strict(&self, other: &Grid) -> Result<(), VolumeError> {
        self.check_compatible(other)?;
        let close = self
            .affine
            .iter()
            .flatten()
            .zip(other.affine.iter().flatten())
            .all(|(a, b)| (a - b).abs() <= AFFINE_TOLERANCE);
        if !close {
            return Err(VolumeError::AffineMismatch {
                left: *self,
                right: *other,
            });
        }
        Ok(())
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{} @ {}x{}x{} mm",
            self.dims[0], self.dims[1], self.dims[2], self.spacing[0], self.spacing[1], self.spacing[2]
        )
    }
}

/// A scalar volume, e.g. an intensity image.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    grid: Grid,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self, VolumeError> {
        if data.len() != grid.len() {
            return Err(VolumeError::DataLength {
                grid,
                len: data.len(),
                expected: grid.len(),
            });
        }
        Ok(Self { grid, data })
    }

    pub fn filled(grid: Grid, value: f64) -> Self {
        Self {
            data: vec![value; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.grid.index(x, y, z)]
    }

    /// Nonzero test on every voxel.
    pub fn to_mask(&self) -> BinaryMask {
        BinaryMask::from_bools(self.grid, self.data.iter().map(|&v| v != 0.0).collect())
            .expect("lengths agree by construction")
    }
}

/// Foreground/background voxels with a cached foreground count.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: Grid,
    data: Vec<bool>,
    count: usize,
}

impl BinaryMask {
    pub fn empty(grid: Grid) -> Self {
        Self {
            data: vec![false; grid.len()],
            grid,
            count: 0,
        }
    }

    pub fn full(grid: Grid) -> Self {
        Self {
            data: vec![true; grid.len()],
            count: grid.len(),
            grid,
        }
    }

    pub fn from_bools(grid: Grid, data: Vec<bool>) -> Result<Self, VolumeError> {
        if data.len() != grid.len() {
            return Err(VolumeError::DataLength {
                grid,
                len: data.len(),
                expected: grid.len(),
            });
        }
        let count = data.iter().filter(|&&b| b).count();
        Ok(Self { grid, data, count })
    }

    /// Builds a mask from foreground coordinates; out-of-grid points are an error.
    pub fn from_points(grid: Grid, points: &[[usize; 3]]) -> Result<Self, VolumeError> {
        let mut mask = Self::empty(grid);
        for &[x, y, z] in points {
            if x >= grid.dims[0] || y >= grid.dims[1] || z >= grid.dims[2] {
                return Err(VolumeError::InvalidGrid(format!(
                    "point ({x}, {y}, {z}) outside grid {grid}"
                )));
            }
            mask.set(grid.index(x, y, z), true);
        }
        Ok(mask)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn foreground_count(&self) -> usize {
        self.count
    }

    pub fn has_foreground(&self) -> bool {
        self.count > 0
    }

    #[inline]
    pub fn get(&self, idx: usize) -> bool {
        self.data[idx]
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.grid.index(x, y, z)]
    }

    pub fn set(&mut self, idx: usize, value: bool) {
        let old = std::mem::replace(&mut self.data[idx], value);
        match (old, value) {
            (false, true) => self.count += 1,
            (true, false) => self.count -= 1,
            _ => {}
        }
    }

    /// Linear indices of foreground voxels in scan order.
    pub fn foreground_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    /// Same data on a different grid record (dims must agree).
    pub fn with_grid(mut self, grid: Grid) -> Result<Self, VolumeError> {
        self.grid.check_compatible(&grid)?;
        self.grid = grid;
        Ok(self)
    }

    /// 0/1 scalar volume.
    pub fn to_volume(&self) -> Volume3D {
        Volume3D {
            grid: self.grid,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    fn zip_with(
        &self,
        other: &BinaryMask,
        op: impl Fn(bool, bool) -> bool,
    ) -> Result<BinaryMask, VolumeError> {
        self.grid.check_compatible(&other.grid)?;
        let data: Vec<bool> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| op(a, b))
            .collect();
        let count = data.iter().filter(|&&b| b).count();
        Ok(BinaryMask {
            grid: self.grid,
            data,
            count,
        })
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, VolumeError> {
        self.zip_with(other, |a, b| a | b)
    }
}

/// Voxelwise AND; the result keeps `a`'s spacing and affine.
pub fn intersect(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask, VolumeError> {
    a.zip_with(b, |x, y| x & y)
}

/// Voxels set in `a` and clear in `b`.
pub fn subtract(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask, VolumeError> {
    a.zip_with(b, |x, y| x & !y)
}

/// Number of voxels set in both masks, without materialising the intersection.
pub fn overlap_count(a: &BinaryMask, b: &BinaryMask) -> Result<usize, VolumeError> {
    a.grid.check_compatible(&b.grid)?;
    Ok(a
        .data
        .iter()
        .zip(&b.data)
        .filter(|(&x, &y)| x & y)
        .count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VolumeUnits {
    #[default]
    Voxels,
    Mm3,
}

impl std::str::FromStr for VolumeUnits {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "voxels" => Ok(Self::Voxels),
            "mm3" => Ok(Self::Mm3),
            other => Err(format!("unknown units '{other}' (expected voxels or mm3)")),
        }
    }
}

pub fn foreground_volume(m: &BinaryMask, units: VolumeUnits) -> f64 {
    match units {
        VolumeUnits::Voxels => m.foreground_count() as f64,
        VolumeUnits::Mm3 => m.foreground_count() as f64 * m.grid.voxel_volume(),
    }
}

/// Anatomical region an ROI mask covers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    /// No ROI restriction.
    Whole,
    Wm,
    Bg,
    Other(String),
}

impl Region {
    pub fn as_str(&self) -> &str {
        match self {
            Region::Whole => "whole",
            Region::Wm => "WM",
            Region::Bg => "BG",
            Region::Other(name) => name,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<&str> for Region {
    fn from(s: &str) -> Self {
        match s {
            "whole" => Region::Whole,
            "WM" | "wm" => Region::Wm,
            "BG" | "bg" => Region::Bg,
            other => Region::Other(other.to_string()),
        }
    }
}

impl Serialize for Region {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Region {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(Region::from(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiMask {
    pub region: Region,
    pub mask: BinaryMask,
}

impl RoiMask {
    pub fn new(region: Region, mask: BinaryMask) -> Self {
        Self { region, mask }
    }

    pub fn restrict(&self, m: &BinaryMask) -> Result<BinaryMask, VolumeError> {
        intersect(m, &self.mask)
    }
}

/// Splits a raw white-matter mask into disjoint WM and BG ROIs by removing
/// the basal-ganglia region (internal capsule included upstream) from it.
pub fn wm_bg_rois(raw_wm: &BinaryMask, bg: &BinaryMask) -> Result<(RoiMask, RoiMask), VolumeError> {
    let wm = subtract(raw_wm, bg)?;
    Ok((
        RoiMask::new(Region::Wm, wm),
        RoiMask::new(Region::Bg, bg.clone()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Grid {
        Grid::new([n, n, n], [1.0, 1.0, 1.0]).unwrap()
    }

    fn random_mask(g: Grid, density: f64, rng: &mut ChaCha8Rng) -> BinaryMask {
        BinaryMask::from_bools(g, (0..g.len()).map(|_| rng.random_bool(density)).collect())
            .unwrap()
    }

    #[test]
    fn intersect_with_single_voxel() {
        let g = grid(3);
        let a = BinaryMask::full(g);
        let b = BinaryMask::from_points(g, &[[1, 1, 1]]).unwrap();
        let c = intersect(&a, &b).unwrap();
        assert_eq!(c.foreground_count(), 1);
        assert!(c.at(1, 1, 1));
    }

    #[test]
    fn disjoint_intersection_is_empty() {
        let g = grid(3);
        let a = BinaryMask::from_points(g, &[[0, 0, 0]]).unwrap();
        let b = BinaryMask::from_points(g, &[[2, 2, 2]]).unwrap();
        assert_eq!(intersect(&a, &b).unwrap().foreground_count(), 0);
    }

    #[test]
    fn random_intersect_and_subtract_match_voxel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = grid(8);
        for _ in 0..20 {
            let a = random_mask(g, 0.4, &mut rng);
            let b = random_mask(g, 0.4, &mut rng);
            let mut and = 0;
            let mut and_not = 0;
            for z in 0..8 {
                for y in 0..8 {
                    for x in 0..8 {
                        and += (a.at(x, y, z) && b.at(x, y, z)) as usize;
                        and_not += (a.at(x, y, z) && !b.at(x, y, z)) as usize;
                    }
                }
            }
            assert_eq!(intersect(&a, &b).unwrap().foreground_count(), and);
            assert_eq!(overlap_count(&a, &b).unwrap(), and);
            assert_eq!(subtract(&a, &b).unwrap().foreground_count(), and_not);
        }
    }

    #[test]
    fn self_subtraction_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = grid(5);
        let a = random_mask(g, 0.5, &mut rng);
        assert_eq!(subtract(&a, &a).unwrap().foreground_count(), 0);
        assert_eq!(subtract(&a, &BinaryMask::empty(g)).unwrap(), a);
    }

    #[test]
    fn dim_mismatch_is_reported() {
        let a = BinaryMask::empty(grid(3));
        let b = BinaryMask::empty(grid(4));
        assert!(matches!(
            intersect(&a, &b),
            Err(VolumeError::DimMismatch { .. })
        ));
        assert!(matches!(
            subtract(&a, &b),
            Err(VolumeError::DimMismatch { .. })
        ));
    }

    #[test]
    fn strict_check_compares_affines() {
        let a = grid(3);
        let mut b = a;
        b.affine[0][3] = 5e-5;
        assert!(a.check_compatible_strict(&b).is_ok());
        b.affine[0][3] = 1e-3;
        assert!(a.check_compatible(&b).is_ok());
        assert!(matches!(
            a.check_compatible_strict(&b),
            Err(VolumeError::AffineMismatch { .. })
        ));
    }

    #[test]
    fn foreground_volume_units() {
        let g = Grid::new([10, 1, 1], [0.8, 0.8, 0.8]).unwrap();
        assert_eq!(foreground_volume(&BinaryMask::empty(g), VolumeUnits::Mm3), 0.0);
        let m = BinaryMask::full(g);
        assert_eq!(foreground_volume(&m, VolumeUnits::Voxels), 10.0);
        assert!((foreground_volume(&m, VolumeUnits::Mm3) - 5.12).abs() < 1e-12);
    }

    #[test]
    fn wm_and_bg_rois_are_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = grid(6);
        let raw = random_mask(g, 0.6, &mut rng);
        let bg = random_mask(g, 0.3, &mut rng);
        let (wm, bg) = wm_bg_rois(&raw, &bg).unwrap();
        assert_eq!(intersect(&wm.mask, &bg.mask).unwrap().foreground_count(), 0);
    }

    #[test]
    fn set_keeps_count_consistent() {
        let g = grid(2);
        let mut m = BinaryMask::empty(g);
        m.set(0, true);
        m.set(0, true);
        m.set(3, true);
        m.set(3, false);
        assert_eq!(m.foreground_count(), 1);
        assert_eq!(m.foreground_indices().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn grid_rejects_bad_spacing() {
        assert!(Grid::new([1, 1, 1], [0.0, 1.0, 1.0]).is_err());
        assert!(Grid::new([0, 1, 1], [1.0, 1.0, 1.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
            proptest::collection::vec(any::<bool>(), 64)
                .prop_map(|bits| BinaryMask::from_bools(grid(4), bits).unwrap())
        }

        proptest! {
            #[test]
            fn intersect_laws(a in mask_strategy(), b in mask_strategy(), c in mask_strategy()) {
                let ab = intersect(&a, &b).unwrap();
                prop_assert_eq!(&ab, &intersect(&b, &a).unwrap());
                prop_assert_eq!(
                    intersect(&ab, &c).unwrap(),
                    intersect(&a, &intersect(&b, &c).unwrap()).unwrap()
                );
                prop_assert_eq!(&intersect(&a, &a).unwrap(), &a);
                prop_assert!(ab.foreground_count() <= a.foreground_count().min(b.foreground_count()));
            }
        }
    }
}

//! Synthetic volumes with thin tubular structures and known ground truth,
//! plus perturbations whose effect on the overlap metrics is known in
//! closed form.

use std::collections::{HashSet, VecDeque};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ccl::{label_components, Connectivity};
use crate::morphology::dilate_once;
use crate::volume::{BinaryMask, Grid, Volume3D, VolumeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("could only place {placed} of {requested} tubes with clearance {clearance}")]
    InfeasiblePacking {
        placed: usize,
        requested: usize,
        clearance: usize,
    },
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Grid(#[from] VolumeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub n_tubes: usize,
    /// Tube radius in voxels, sampled uniformly from `[lo, hi]`.
    pub radius: [f64; 2],
    /// Centerline length in voxels, sampled uniformly from `[lo, hi]`.
    pub length: [f64; 2],
    /// Minimum Chebyshev distance between voxels of different tubes.
    pub clearance: usize,
    /// Peak lateral displacement of the sinusoidal bend, in voxels.
    pub bend: f64,
    pub background_mean: f64,
    pub background_sd: f64,
    /// Added inside tubes; negative for dark structures.
    pub offset: f64,
    pub seed: u64,
    /// Placement attempts per tube before giving up.
    pub max_attempts: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64, 64, 48],
            spacing: [1.0, 1.0, 1.0],
            n_tubes: 12,
            radius: [0.5, 1.0],
            length: [8.0, 20.0],
            clearance: 4,
            bend: 1.5,
            background_mean: 100.0,
            background_sd: 5.0,
            offset: 30.0,
            seed: 0,
            max_attempts: 2000,
        }
    }
}

impl PhantomSpec {
    fn validate(&self) -> Result<Grid, PhantomError> {
        let bad = |m: String| Err(PhantomError::BadParameter(m));
        let [rlo, rhi] = self.radius;
        if !(rlo > 0.0 && rlo <= rhi && rhi.is_finite()) {
            return bad(format!("radius range {:?}", self.radius));
        }
        let [llo, lhi] = self.length;
        if !(llo >= 1.0 && llo <= lhi && lhi.is_finite()) {
            return bad(format!("length range {:?}", self.length));
        }
        if self.clearance < 2 {
            return bad(format!("clearance {} < 2 would let tubes touch", self.clearance));
        }
        if !(self.background_sd >= 0.0 && self.background_sd.is_finite()) {
            return bad(format!("background sd {}", self.background_sd));
        }
        if !self.bend.is_finite() || self.bend < 0.0 {
            return bad(format!("bend {}", self.bend));
        }
        Ok(Grid::new(self.dims, self.spacing)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub radius: f64,
    pub voxels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: Volume3D,
    pub truth: BinaryMask,
    pub cluster_count: usize,
    pub tubes: Vec<Tube>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = norm(v);
        if n > 1e-9 {
            return v.map(|c| c / n);
        }
    }
}

/// Voxels of one candidate tube, or `None` if it leaves the interior.
fn rasterize(
    grid: &Grid,
    start: [f64; 3],
    end: [f64; 3],
    bend_dir: [f64; 3],
    bend: f64,
    radius: f64,
) -> Option<Vec<usize>> {
    let axis = sub(end, start);
    let len = norm(axis);
    // half-voxel steps keep consecutive rounded centerline points adjacent
    let steps = ((len + 2.0 * bend) / 0.25).ceil().max(1.0) as usize;
    let reach = radius.ceil() as i64;
    let dims = grid.dims.map(|d| d as i64);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let lift = bend * (std::f64::consts::PI * t).sin();
        let p: [f64; 3] = std::array::from_fn(|k| start[k] + t * axis[k] + lift * bend_dir[k]);
        let c = p.map(|v| v.round() as i64);
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let v = [c[0] + dx, c[1] + dy, c[2] + dz];
                    let d2: f64 = (0..3).map(|k| (v[k] as f64 - p[k]).powi(2)).sum();
                    if (dx, dy, dz) != (0, 0, 0) && d2 > radius * radius {
                        continue;
                    }
                    // one-voxel border stays empty
                    if (0..3).any(|k| v[k] < 1 || v[k] > dims[k] - 2) {
                        return None;
                    }
                    let idx = grid.index(v[0] as usize, v[1] as usize, v[2] as usize);
                    if seen.insert(idx) {
                        out.push(idx);
                    }
                }
            }
        }
    }
    Some(out)
}

/// Whether `voxels` form a single 26-connected set.
fn is_connected(grid: &Grid, voxels: &[usize]) -> bool {
    let set: HashSet<usize> = voxels.iter().copied().collect();
    let offsets = Connectivity::TwentySix.offsets();
    let mut seen = HashSet::from([voxels[0]]);
    let mut queue = VecDeque::from([voxels[0]]);
    while let Some(v) = queue.pop_front() {
        crate::morphology::for_each_neighbour(grid, &offsets, v, |n| {
            if set.contains(&n) && seen.insert(n) {
                queue.push_back(n);
            }
        });
    }
    seen.len() == set.len()
}

/// Marks every voxel within Chebyshev distance `reach` of `voxels`.
fn forbid(grid: &Grid, forbidden: &mut [bool], voxels: &[usize], reach: usize) {
    let r = reach as i64;
    let dims = grid.dims.map(|d| d as i64);
    for &idx in voxels {
        let c = grid.coords(idx).map(|v| v as i64);
        for z in (c[2] - r).max(0)..=(c[2] + r).min(dims[2] - 1) {
            for y in (c[1] - r).max(0)..=(c[1] + r).min(dims[1] - 1) {
                for x in (c[0] - r).max(0)..=(c[0] + r).min(dims[0] - 1) {
                    forbidden[grid.index(x as usize, y as usize, z as usize)] = true;
                }
            }
        }
    }
}

/// Places the tubes of `spec` and returns the truth mask and tube list.
pub fn generate_truth(spec: &PhantomSpec) -> Result<(BinaryMask, Vec<Tube>), PhantomError> {
    let grid = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut truth = vec![false; grid.len()];
    let mut forbidden = vec![false; grid.len()];
    let mut tubes = Vec::with_capacity(spec.n_tubes);

    for _ in 0..spec.n_tubes {
        let mut placed = false;
        for _ in 0..spec.max_attempts {
            let radius = rng.random_range(spec.radius[0]..=spec.radius[1]);
            let length = rng.random_range(spec.length[0]..=spec.length[1]);
            let dir = random_unit(&mut rng);
            let bend_dir = {
                let c = cross(dir, random_unit(&mut rng));
                let n = norm(c);
                if n < 1e-9 {
                    continue;
                }
                c.map(|v| v / n)
            };
            let centre: [f64; 3] =
                std::array::from_fn(|k| rng.random_range(0.0..grid.dims[k] as f64));
            let start: [f64; 3] = std::array::from_fn(|k| centre[k] - 0.5 * length * dir[k]);
            let end: [f64; 3] = std::array::from_fn(|k| centre[k] + 0.5 * length * dir[k]);
            let Some(voxels) = rasterize(&grid, start, end, bend_dir, spec.bend, radius) else {
                continue;
            };
            if voxels.iter().any(|&v| forbidden[v]) {
                continue;
            }
            if radius > 1.0 && !is_connected(&grid, &voxels) {
                continue;
            }
            for &v in &voxels {
                truth[v] = true;
            }
            forbid(&grid, &mut forbidden, &voxels, spec.clearance - 1);
            tubes.push(Tube {
                start,
                end,
                radius,
                voxels: voxels.len(),
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(PhantomError::InfeasiblePacking {
                placed: tubes.len(),
                requested: spec.n_tubes,
                clearance: spec.clearance,
            });
        }
    }
    Ok((BinaryMask::from_bools(grid, truth)?, tubes))
}

/// Truth plus an image of Gaussian background noise with `offset` added inside tubes.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    let (truth, tubes) = generate_truth(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let noise = Normal::new(spec.background_mean, spec.background_sd)
        .map_err(|e| PhantomError::BadParameter(e.to_string()))?;
    let data: Vec<f64> = truth
        .data()
        .iter()
        .map(|&fg| noise.sample(&mut rng) + if fg { spec.offset } else { 0.0 })
        .collect();
    Ok(Phantom {
        image: Volume3D::new(*truth.grid(), data)?,
        cluster_count: tubes.len(),
        truth,
        tubes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    /// Remove exactly `round(fraction * |mask|)` uniformly chosen voxels.
    DeleteFraction { fraction: f64 },
    DilateOnce { connectivity: Connectivity },
    /// Remove `count` uniformly chosen 26-connected clusters.
    DropClusters { count: usize },
    /// Shift by whole voxels; voxels leaving the grid are lost.
    Translate { offset: [i64; 3] },
}

impl Perturbation {
    /// Voxels removed by `DeleteFraction` from a mask of `n` voxels.
    pub fn deletion_count(fraction: f64, n: usize) -> usize {
        (fraction * n as f64).round() as usize
    }
}

pub fn perturb(truth: &BinaryMask, p: Perturbation, seed: u64) -> Result<BinaryMask, PhantomError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = *truth.grid();
    match p {
        Perturbation::DeleteFraction { fraction } => {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(PhantomError::BadParameter(format!(
                    "fraction {fraction} outside [0, 1]"
                )));
            }
            let fg: Vec<usize> = truth.foreground_indices().collect();
            let k = Perturbation::deletion_count(fraction, fg.len());
            let mut out = truth.clone();
            for i in index::sample(&mut rng, fg.len(), k) {
                out.set(fg[i], false);
            }
            Ok(out)
        }
        Perturbation::DilateOnce { connectivity } => Ok(dilate_once(truth, connectivity)),
        Perturbation::DropClusters { count } => {
            let labels = label_components(truth, Connectivity::TwentySix);
            let total = labels.component_count();
            if count > total {
                return Err(PhantomError::BadParameter(format!(
                    "cannot drop {count} of {total} clusters"
                )));
            }
            let mut drop = vec![false; total + 1];
            for i in index::sample(&mut rng, total, count) {
                drop[i + 1] = true;
            }
            let data = labels
                .labels()
                .iter()
                .map(|&l| l != 0 && !drop[l as usize])
                .collect();
            Ok(BinaryMask::from_bools(grid, data)?)
        }
        Perturbation::Translate { offset } => {
            let mut out = BinaryMask::empty(grid);
            let dims = grid.dims.map(|d| d as i64);
            for idx in truth.foreground_indices() {
                let c = grid.coords(idx);
                let v: [i64; 3] = std::array::from_fn(|k| c[k] as i64 + offset[k]);
                if (0..3).all(|k| v[k] >= 0 && v[k] < dims[k]) {
                    out.set(grid.index(v[0] as usize, v[1] as usize, v[2] as usize), true);
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::voxel_metrics;

    fn small(n_tubes: usize, seed: u64) -> PhantomSpec {
        PhantomSpec {
            dims: [40, 40, 32],
            n_tubes,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_tubes_is_pure_noise() {
        let p = generate(&small(0, 1)).unwrap();
        assert_eq!(p.truth.foreground_count(), 0);
        assert_eq!(p.cluster_count, 0);
        let mean = p.image.data().iter().sum::<f64>() / p.image.data().len() as f64;
        assert!((mean - 100.0).abs() < 0.2);
    }

    #[test]
    fn tubes_are_separate_clusters() {
        for seed in 0..5 {
            let p = generate(&small(5, seed)).unwrap();
            assert_eq!(label_components(&p.truth, Connectivity::TwentySix).component_count(), 5);
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small(6, 9)).unwrap();
        let b = generate(&small(6, 9)).unwrap();
        assert_eq!(a.truth, b.truth);
        assert!(a.image.data().iter().zip(b.image.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = generate(&small(6, 10)).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn infeasible_packing() {
        let spec = PhantomSpec {
            dims: [10, 10, 10],
            n_tubes: 50,
            max_attempts: 50,
            ..Default::default()
        };
        assert!(matches!(generate_truth(&spec), Err(PhantomError::InfeasiblePacking { .. })));
    }

    #[test]
    fn bad_spec() {
        let spec = PhantomSpec { clearance: 1, ..Default::default() };
        assert!(matches!(generate_truth(&spec), Err(PhantomError::BadParameter(_))));
        let spec = PhantomSpec { radius: [2.0, 1.0], ..Default::default() };
        assert!(matches!(generate_truth(&spec), Err(PhantomError::BadParameter(_))));
    }

    #[test]
    fn wide_tubes_stay_connected() {
        let spec = PhantomSpec { radius: [1.5, 2.0], n_tubes: 4, ..small(4, 3) };
        let p = generate_truth(&spec).unwrap().0;
        assert_eq!(label_components(&p, Connectivity::TwentySix).component_count(), 4);
    }

    #[test]
    fn delete_half_of_hundred() {
        let g = Grid::new([10, 10, 1], [1.0; 3]).unwrap();
        let m = BinaryMask::full(g);
        let d = perturb(&m, Perturbation::DeleteFraction { fraction: 0.5 }, 7).unwrap();
        assert_eq!(d.foreground_count(), 50);
        let (_, v) = voxel_metrics(&d, &m, None).unwrap();
        assert!((v.dsc.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let same = perturb(&m, Perturbation::DeleteFraction { fraction: 0.0 }, 7).unwrap();
        assert_eq!(same, m);
    }

    #[test]
    fn perturbation_errors() {
        let g = Grid::new([4, 4, 4], [1.0; 3]).unwrap();
        let m = BinaryMask::from_points(g, &[[1, 1, 1]]).unwrap();
        assert!(perturb(&m, Perturbation::DeleteFraction { fraction: 1.5 }, 0).is_err());
        assert!(perturb(&m, Perturbation::DropClusters { count: 2 }, 0).is_err());
    }

    #[test]
    fn drop_and_translate() {
        let p = generate_truth(&small(5, 2)).unwrap().0;
        let d = perturb(&p, Perturbation::DropClusters { count: 2 }, 4).unwrap();
        assert_eq!(label_components(&d, Connectivity::TwentySix).component_count(), 3);
        let t = perturb(&p, Perturbation::Translate { offset: [1, 0, 0] }, 0).unwrap();
        assert_eq!(t.foreground_count(), p.foreground_count());
        let back = perturb(&t, Perturbation::Translate { offset: [-1, 0, 0] }, 0).unwrap();
        assert_eq!(back, p);
    }
}

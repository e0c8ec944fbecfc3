//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code under test except for plain data types.
#![allow(dead_code)]

use std::collections::VecDeque;

use pvseval::volume::{BinaryMask, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cube(n: usize) -> Grid {
    Grid::new([n, n, n], [1.0, 1.0, 1.0]).unwrap()
}

/// Bernoulli(density) mask.
pub fn random_mask(grid: Grid, density: f64, rng: &mut ChaCha8Rng) -> BinaryMask {
    let data = (0..grid.len()).map(|_| rng.random_bool(density)).collect();
    BinaryMask::from_bools(grid, data).unwrap()
}

/// Neighbour offsets by city-block order: 1 -> faces, 2 -> +edges, 3 -> +corners.
pub fn oracle_offsets(neighbours: usize) -> Vec<[i64; 3]> {
    let max_l1 = match neighbours {
        6 => 1,
        18 => 2,
        26 => 3,
        _ => panic!("bad connectivity"),
    };
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let l1 = dx.abs() + dy.abs() + dz.abs();
                if l1 > 0 && l1 <= max_l1 {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    assert_eq!(out.len(), neighbours);
    out
}

/// Breadth-first flood fill. Components are numbered 1.. in order of their
/// first voxel in x-fastest scan order.
pub fn bfs_labels(data: &[bool], dims: [usize; 3], neighbours: usize) -> (Vec<u32>, usize) {
    let offsets = oracle_offsets(neighbours);
    let [nx, ny, nz] = dims;
    let mut labels = vec![0u32; data.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..data.len() {
        if !data[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            let (x, y, z) = (v % nx, (v / nx) % ny, v / (nx * ny));
            for [dx, dy, dz] in &offsets {
                let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                if xx < 0 || yy < 0 || zz < 0 || xx >= nx as i64 || yy >= ny as i64 || zz >= nz as i64 {
                    continue;
                }
                let w = xx as usize + nx * (yy as usize + ny * zz as usize);
                if data[w] && labels[w] == 0 {
                    labels[w] = next;
                    queue.push_back(w);
                }
            }
        }
    }
    (labels, next as usize)
}

/// Whether two labelings induce the same partition of the foreground.
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    use std::collections::HashMap;
    let mut ab: HashMap<u32, u32> = HashMap::new();
    let mut ba: HashMap<u32, u32> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if (x == 0) != (y == 0) {
            return false;
        }
        if x == 0 {
            continue;
        }
        if *ab.entry(x).or_insert(y) != y || *ba.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// Voxel and cluster overlap ratios by direct counting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteMetrics {
    pub dsc_vox: Option<f64>,
    pub sen_vox: Option<f64>,
    pub ppv_vox: Option<f64>,
    pub dsc_num: Option<f64>,
    pub sen_num: Option<f64>,
    pub ppv_num: Option<f64>,
}

pub fn brute_metrics(pred: &[bool], reference: &[bool], dims: [usize; 3], neighbours: usize) -> BruteMetrics {
    let overlap = pred.iter().zip(reference).filter(|(p, r)| **p && **r).count();
    let manual = reference.iter().filter(|r| **r).count();
    let algo = pred.iter().filter(|p| **p).count();
    let ratio = |a: usize, b: usize| if b == 0 { None } else { Some(a as f64 / b as f64) };

    let (lp, n_algo) = bfs_labels(pred, dims, neighbours);
    let (lr, n_manual) = bfs_labels(reference, dims, neighbours);
    let manual_hit = (1..=n_manual as u32)
        .filter(|&c| (0..lr.len()).any(|i| lr[i] == c && pred[i]))
        .count();
    let algo_hit = (1..=n_algo as u32)
        .filter(|&c| (0..lp.len()).any(|i| lp[i] == c && reference[i]))
        .count();
    BruteMetrics {
        dsc_vox: ratio(2 * overlap, manual + algo),
        sen_vox: ratio(overlap, manual),
        ppv_vox: ratio(overlap, algo),
        dsc_num: ratio(manual_hit + algo_hit, n_manual + n_algo),
        sen_num: ratio(manual_hit, n_manual),
        ppv_num: ratio(algo_hit, n_algo),
    }
}

/// Two-sided exact signed-rank p-value by visiting all 2^n sign patterns
/// (Gray-code order, one sign flip per step). `ranks` must be distinct
/// integers for this oracle.
pub fn enumerate_wilcoxon_p(ranks: &[u64], observed_w_plus: u64) -> f64 {
    let n = ranks.len();
    assert!(n < 31);
    let total = 1u64 << n;
    let mut w = 0u64;
    let mut signs = vec![false; n];
    let (mut le, mut ge) = (0u64, 0u64);
    for k in 0..total {
        if k > 0 {
            let bit = k.trailing_zeros() as usize;
            signs[bit] = !signs[bit];
            if signs[bit] {
                w += ranks[bit];
            } else {
                w -= ranks[bit];
            }
        }
        if w <= observed_w_plus {
            le += 1;
        }
        if w >= observed_w_plus {
            ge += 1;
        }
    }
    let tail = le.min(ge) as f64 / total as f64;
    (2.0 * tail).min(1.0)
}

/// Ranks 1..n of `|d|` (no ties assumed) and the observed W+.
pub fn signed_ranks(diffs: &[f64]) -> (Vec<u64>, u64) {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut ranks = vec![0u64; diffs.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r as u64 + 1;
    }
    let w_plus = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    (ranks, w_plus)
}

/// Two-pass sample mean and SD.
pub fn two_pass_mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Smallest and largest counts inside the central `level` band of Binomial(n, p).
pub fn binomial_band(n: u64, p: f64, level: f64) -> (u64, u64) {
    let tail = (1.0 - level) / 2.0;
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut cdf = 0.0;
    let mut lo = None;
    let mut hi = n;
    for k in 0..=n {
        cdf += pmf;
        if lo.is_none() && cdf >= tail {
            lo = Some(k);
        }
        if cdf >= 1.0 - tail {
            hi = k;
            break;
        }
        pmf *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
    }
    (lo.unwrap(), hi)
}

/// A minimal single-file NIfTI-1 image assembled field by field at the
/// standard byte offsets, in the requested byte order.
pub fn handmade_nifti(
    dims: [i16; 3],
    pixdim: [f32; 3],
    datatype: i16,
    bitpix: i16,
    big_endian: bool,
    voxels: &[u8],
) -> Vec<u8> {
    let mut h = vec![0u8; 352];
    let put = |h: &mut Vec<u8>, at: usize, le: &[u8]| {
        let mut b = le.to_vec();
        if big_endian {
            b.reverse();
        }
        h[at..at + b.len()].copy_from_slice(&b);
    };
    put(&mut h, 0, &348i32.to_le_bytes());
    let dim = [3, dims[0], dims[1], dims[2], 1, 1, 1, 1];
    for (k, d) in dim.iter().enumerate() {
        put(&mut h, 40 + 2 * k, &d.to_le_bytes());
    }
    put(&mut h, 70, &datatype.to_le_bytes());
    put(&mut h, 72, &bitpix.to_le_bytes());
    let pd = [1.0f32, pixdim[0], pixdim[1], pixdim[2], 0.0, 0.0, 0.0, 0.0];
    for (k, p) in pd.iter().enumerate() {
        put(&mut h, 76 + 4 * k, &p.to_le_bytes());
    }
    put(&mut h, 108, &352f32.to_le_bytes());
    put(&mut h, 112, &1f32.to_le_bytes());
    h[344..348].copy_from_slice(b"n+1\0");
    h.extend_from_slice(voxels);
    h
}

/// Element bytes of `values` for a NIfTI datatype code, in the given byte order.
pub fn encode_elements(values: &[f64], datatype: i16, big_endian: bool) -> Vec<u8> {
    let mut out = Vec::new();
    for &v in values {
        let mut b = match datatype {
            2 => vec![v as u8],
            4 => (v as i16).to_le_bytes().to_vec(),
            8 => (v as i32).to_le_bytes().to_vec(),
            16 => (v as f32).to_le_bytes().to_vec(),
            64 => v.to_le_bytes().to_vec(),
            _ => panic!("unsupported"),
        };
        if big_endian {
            b.reverse();
        }
        out.extend(b);
    }
    out
}
